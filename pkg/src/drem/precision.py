"""Estimation of the Dirichlet-process precision parameter.

Everything here works off the per-cluster-count coefficients c_k: the log
likelihood of the precision m given those coefficients is

    l(m) = log( sum_k m^k c_k ) - sum_{i=1..n} log(i - 1 + m),

whose derivative's limiting signs at 0 and infinity depend only on the
ratios c_2/c_1 and c_{n-1}/c_n.  Depending on those signs the likelihood
can be maximized in the interior, at either boundary, or be entirely flat,
so the classifier scans the derivative on a wide logarithmic grid and
names the shape before reporting any point estimate.  A gamma prior on m
repairs the boundary cases by forcing an interior posterior mode.

Coefficients come from exhaustive enumeration (small n) or from an
importance sampler that draws cluster layouts by collapsing iid
categorical rows of a symmetric Dirichlet weight vector.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import inf, isinf, lgamma, log, nan

import numpy as np
from scipy.special import logsumexp

from drem.linear_model import (
    Dataset,
    Hyperpriors,
    ModelParams,
    PrecisionCoefficients,
    exhaustive_precision_coefficients,
    log_marginal_component,
    sample_inverse_gamma,
)
from drem.partitions import (
    ENUMERATION_CAP,
    canonicalize,
    enumerate_partitions,
    log_collapse_mass,
    merge_clusters,
)

GRID_LO = 1e-6
GRID_HI = 1e6
GRID_POINTS = 200
BISECT_TOL = 1e-10


@dataclass
class MleResult:
    """Outcome of a likelihood-shape scan for the precision parameter.

    m_hat is the maximizer the classification points at: a finite interior
    value, 0.0 or inf for boundary suprema, NaN when the likelihood is
    flat.  For min_then_max and max_then_min it is the interior stationary
    maximum, which need not be the global supremum.  ``pattern`` compresses
    the derivative's sign sequence over the scan grid (e.g. "-+-").
    """

    m_hat: float
    classification: str
    curvature: float | None = None
    pattern: str = ""


def _clean_log_c(c: PrecisionCoefficients) -> np.ndarray:
    log_c = np.asarray(c.log_c, dtype=float)
    if np.any(np.isnan(log_c)):
        raise ValueError("coefficients carry missing entries; re-estimate them first")
    if np.all(np.isneginf(log_c)):
        raise ValueError("all coefficients are zero")
    return log_c


def log_ell(m: float, c: PrecisionCoefficients) -> float:
    """Log likelihood of the precision given the coefficients."""
    if m <= 0:
        raise ValueError("the precision must be strictly positive")
    log_c = _clean_log_c(c)
    n = len(log_c)
    ks = np.arange(1, n + 1)
    top = logsumexp(ks * log(m) + log_c)
    return float(top - np.log(m + np.arange(n)).sum())


def dlog_ell(m: float, c: PrecisionCoefficients) -> float:
    """Derivative of log_ell in m, evaluated through log-sum-exp.

    Both the likelihood ratio and the digamma-difference term carry a 1/m
    pole; those cancel algebraically, so the evaluation uses the pole-free
    form (sum_{k>=2} (k-1) m^{k-2} c_k) / (sum_k m^{k-1} c_k)
    - sum_{i=2..n} 1/(i-1+m), which stays accurate arbitrarily close to 0.
    """
    if m <= 0:
        raise ValueError("the precision must be strictly positive")
    log_c = _clean_log_c(c)
    n = len(log_c)
    if n == 1:
        return 0.0
    ks = np.arange(2, n + 1)
    log_num = logsumexp(np.log(ks - 1.0) + (ks - 2) * log(m) + log_c[1:])
    log_den = logsumexp((np.arange(1, n + 1) - 1) * log(m) + log_c)
    return float(np.exp(log_num - log_den) - (1.0 / (m + np.arange(1, n))).sum())


def dlog_ell_limit_zero(c: PrecisionCoefficients) -> float:
    """Stabilized m -> 0 limit of the derivative.

    With c_1 > 0 the limit is c_2/c_1 - sum_{i=2..n} 1/(i-1); with c_1 = 0
    the derivative diverges to +infinity.
    """
    log_c = _clean_log_c(c)
    n = len(log_c)
    if n == 1:
        return 0.0
    if np.isneginf(log_c[0]):
        return inf
    harmonic = (1.0 / np.arange(1, n)).sum()
    return float(np.exp(log_c[1] - log_c[0]) - harmonic)


def dlog_ell_sign_at_infinity(c: PrecisionCoefficients) -> float:
    """Sign of the derivative as m -> infinity.

    Positive iff c_{n-1}/c_n < n(n-1)/2; with c_n = 0 the leading power is
    below n and the derivative approaches zero from below.
    """
    log_c = _clean_log_c(c)
    n = len(log_c)
    if n == 1:
        return 0.0
    if np.isneginf(log_c[-1]):
        return -1.0
    ratio = np.exp(log_c[-2] - log_c[-1])
    return float(np.sign(n * (n - 1) / 2.0 - ratio))


def _compress_signs(values, zero_tol=0.0):
    out = []
    for v in values:
        if not np.isfinite(v) and np.isnan(v):
            continue
        s = "+" if v > zero_tol else ("-" if v < -zero_tol else "")
        if s and (not out or out[-1] != s):
            out.append(s)
    return "".join(out)


def _bisect_down_crossing(fun, lo, hi):
    # walk the bracket until fun(lo) > 0 > fun(hi), then shrink to the root
    for _ in range(60):
        if fun(lo) > 0:
            break
        lo /= 10.0
    for _ in range(60):
        if fun(hi) < 0:
            break
        hi *= 10.0
    while hi - lo > BISECT_TOL * (1.0 + lo):
        mid = 0.5 * (lo + hi)
        if fun(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _curvature(fun, m):
    h = 1e-5 * m
    return (fun(m + h) - fun(m - h)) / (2.0 * h)


def _scan(fun, grid, sign_zero, sign_inf):
    vals = np.array([fun(m) for m in grid])
    signs = [sign_zero] + list(vals) + [sign_inf]
    pattern = _compress_signs(signs)
    # interior maxima: + -> - crossings over the extended sign sequence
    maxima = []
    prev_sign, prev_m = np.sign(sign_zero), None
    for m, v in zip(grid, vals):
        s = np.sign(v)
        if s == 0:
            continue
        if prev_sign > 0 and s < 0:
            lo = prev_m if prev_m is not None else grid[0] * 0.5
            maxima.append(_bisect_down_crossing(fun, lo, m))
        prev_sign, prev_m = s, m
    if prev_sign > 0 and sign_inf < 0:
        maxima.append(_bisect_down_crossing(fun, prev_m or grid[-1], grid[-1] * 10))
    return vals, pattern, maxima


def classify_likelihood_shape(c: PrecisionCoefficients) -> MleResult:
    """Scan the likelihood derivative and name the shape.

    The limiting signs at 0 and infinity anchor the ends; sign changes on
    a logarithmic grid fill in the middle; any positive-to-negative
    crossing is refined by bisection into an interior maximum.
    """
    log_c = _clean_log_c(c)
    n = len(log_c)
    if n < 2:
        raise ValueError("shape classification needs at least two coefficients")
    grid = np.logspace(np.log10(GRID_LO), np.log10(GRID_HI), GRID_POINTS)
    fun = lambda m: dlog_ell(m, c)
    s0 = dlog_ell_limit_zero(c)
    s_inf = dlog_ell_sign_at_infinity(c)

    vals, pattern, maxima = _scan(fun, grid, np.sign(s0) if np.isfinite(s0) else 1.0,
                                  s_inf)
    if np.max(np.abs(vals)) < 1e-12 and abs(s0) < 1e-12:
        return MleResult(m_hat=nan, classification="flat", pattern="")

    if pattern == "+":
        return MleResult(m_hat=inf, classification="boundary_infinity", pattern=pattern)
    if pattern == "-":
        return MleResult(m_hat=0.0, classification="boundary_zero", pattern=pattern)
    if pattern == "-+":
        # single interior minimum: the supremum sits on a boundary,
        # l(0+) = log c_1 - log (n-1)! against l(inf) = log c_n
        left = log_c[0] - lgamma(n) if not np.isneginf(log_c[0]) else -inf
        right = log_c[-1]
        m_hat = 0.0 if left > right else inf
        return MleResult(m_hat=m_hat, classification="unique_min", pattern=pattern)
    if not maxima:
        return MleResult(m_hat=nan, classification="multimodal", pattern=pattern)

    best = max(maxima, key=lambda m: log_ell(m, c))
    curv = _curvature(fun, best)
    if pattern == "+-":
        name = "interior_max"
    elif pattern == "-+-":
        name = "min_then_max"
    elif pattern == "+-+":
        name = "max_then_min"
    else:
        name = "multimodal"
    return MleResult(m_hat=float(best), classification=name, curvature=float(curv),
                     pattern=pattern)


def kappa(m: float, n: int) -> float:
    """Expected number of prior clusters, sum_{i=1..n} m/(m+i-1)."""
    if n < 1:
        raise ValueError("need at least one observation")
    if m < 0:
        raise ValueError("the precision cannot be negative")
    if m == 0:
        return 1.0
    if isinf(m):
        return float(n)
    return float((m / (m + np.arange(n))).sum())


def solve_m_for_kappa(kappa_target: float, n: int) -> float:
    """The unique m with kappa(m, n) equal to the target, by bisection."""
    if not 1.0 < kappa_target < n:
        raise ValueError(f"the target must lie strictly between 1 and n = {n}")
    lo, hi = 1e-12, 1.0
    while kappa(hi, n) < kappa_target:
        hi *= 2.0
        if hi > 1e18:
            raise RuntimeError("failed to bracket the prior-cluster equation")
    while True:
        mid = 0.5 * (lo + hi)
        val = kappa(mid, n)
        if abs(val - kappa_target) <= 1e-8:
            return mid
        if val < kappa_target:
            lo = mid
        else:
            hi = mid


def posterior_mode_m(c: PrecisionCoefficients, a: float, b: float) -> MleResult:
    """Mode of the gamma-prior log posterior for m.

    Maximizes log_ell(m) + (a-1) log m - m/b.  For a > 1 the derivative
    rises to +infinity at 0 and falls below -1/b at infinity, so an
    interior mode always exists; otherwise the sign scan decides.
    """
    if a <= 0 or b <= 0:
        raise ValueError("gamma prior parameters must be strictly positive")
    _clean_log_c(c)
    fun = lambda m: dlog_ell(m, c) + (a - 1.0) / m - 1.0 / b
    objective = lambda m: log_ell(m, c) + (a - 1.0) * log(m) - m / b
    grid = np.logspace(np.log10(GRID_LO), np.log10(GRID_HI), GRID_POINTS)
    s0 = 1.0 if a > 1 else np.sign(fun(grid[0]))
    vals, pattern, maxima = _scan(fun, grid, s0, -1.0)
    if not maxima:
        if pattern == "-":
            return MleResult(m_hat=0.0, classification="boundary_zero", pattern=pattern)
        return MleResult(m_hat=nan, classification="multimodal", pattern=pattern)
    best = max(maxima, key=objective)
    return MleResult(
        m_hat=float(best),
        classification="interior_max",
        curvature=float(_curvature(fun, best)),
        pattern=pattern,
    )


def marginal_posterior_m(
    grid: np.ndarray, c: PrecisionCoefficients, a: float, b: float
) -> np.ndarray:
    """Log posterior density of m on a grid, up to an additive constant.

    log Gamma(m) - log Gamma(m+n) + (a-1) log m - m/b + log sum_k m^k c_k.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or len(grid) < 2 or np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
        raise ValueError("the grid must be positive and strictly increasing")
    if a <= 0 or b <= 0:
        raise ValueError("gamma prior parameters must be strictly positive")
    log_c = _clean_log_c(c)
    n = len(log_c)
    ks = np.arange(1, n + 1)
    out = np.empty(len(grid))
    for i, m in enumerate(grid):
        out[i] = (
            lgamma(m)
            - lgamma(m + n)
            + (a - 1.0) * log(m)
            - m / b
            + logsumexp(ks * log(m) + log_c)
        )
    return out


def posterior_mean_m(
    c: PrecisionCoefficients,
    a: float,
    b: float,
    lo: float = 1e-6,
    hi: float = 1e4,
    points: int = 2000,
) -> float:
    """Posterior mean of m under the gamma prior, by grid quadrature."""
    grid = np.logspace(np.log10(lo), np.log10(hi), points)
    logpost = marginal_posterior_m(grid, c, a, b)
    w = np.exp(logpost - logpost.max())
    total = np.trapezoid(w, grid)
    return float(np.trapezoid(grid * w, grid) / total)


# ---------------------------------------------------------------------------
# importance sampling of the coefficients


@lru_cache(maxsize=200_000)
def _log_channel_density(sizes: tuple, depth: int, n: int, alpha: float) -> float:
    """Log probability that a collapse draw, followed by ``depth`` uniform
    pair-merges, lands on a partition with these block sizes (canonical)."""
    k = len(sizes)
    if depth == 0:
        p = canonicalize(
            [j for j, s in enumerate(sizes) for _ in range(s)]
        )
        return log_collapse_mass(p, np.full(n, alpha))
    kp = k + 1
    pick = log(2.0) - log(kp) - log(kp - 1.0)
    terms = []
    for b, s in enumerate(sizes):
        if s < 2:
            continue
        for s1 in range(1, s // 2 + 1):
            s2 = s - s1
            count = lgamma(s + 1) - lgamma(s1 + 1) - lgamma(s2 + 1)
            if s1 == s2:
                count -= log(2.0)
            parent = tuple(sorted(sizes[:b] + (s1, s2) + sizes[b + 1:]))
            terms.append(
                count + pick + _log_channel_density(parent, depth - 1, n, alpha)
            )
    if not terms:
        return -inf
    return float(logsumexp(terms))


def importance_sample_coefficients(
    d: Dataset,
    hp: Hyperpriors,
    T: int,
    rng: np.random.Generator,
    fixed_theta: ModelParams | None = None,
    merge_reuse: bool = True,
) -> PrecisionCoefficients:
    """Estimate the coefficients by collapsing Dirichlet-categorical draws.

    Each draw takes q ~ Dirichlet(alpha, ..., alpha) on n categories,
    assigns every observation a category, and drops the empty ones.  Draws
    are binned by the resulting cluster count k; each contributes
    prod_j Gamma(n_j) times the component likelihood, divided by the exact
    collapse mass of its partition, so every bin average is unbiased for
    the corresponding coefficient.  With ``fixed_theta`` the component
    likelihood is evaluated at those parameters (profile-style); otherwise
    a fresh theta is drawn from its prior per draw and the estimate targets
    the theta-integrated coefficient.

    Bins that receive no draws are backfilled by re-using larger draws:
    each is collapsed further by merging uniformly chosen cluster pairs,
    and the weight divides by the exact density of that merge channel.
    Bins that stay empty even then are flagged missing (NaN), not zero.
    """
    if T < 1:
        raise ValueError("need at least one importance draw")
    n, alpha = d.n, hp.alpha
    log_w = [[] for _ in range(n)]  # per-k log contributions
    draws = [[] for _ in range(n)]  # (sizes, labels, theta) kept for reuse

    def theta_draw():
        if fixed_theta is not None:
            return fixed_theta.without_eta()
        sigma2 = sample_inverse_gamma(hp.a2, hp.b2, rng)
        tau2 = sample_inverse_gamma(hp.a1, hp.b1, rng)
        beta = rng.standard_normal(d.p) * np.sqrt(sigma2)
        return ModelParams(beta=beta, sigma2=sigma2, tau2=tau2)

    for _ in range(T):
        g = rng.gamma(alpha, size=n)
        q = g / g.sum()
        labels = np.searchsorted(np.cumsum(q), rng.random(n), side="right")
        part = canonicalize(labels.tolist())
        theta = theta_draw()
        base = sum(lgamma(nj) - lgamma(nj + alpha) for nj in part.sizes)
        logf = log_marginal_component(d, theta, part)
        log_w[part.k - 1].append(base + logf)
        draws[part.k - 1].append((part, theta))

    log_c = np.full(n, nan)
    mc_se = np.full(n, nan)
    counts = np.array([len(w) for w in log_w])
    for k in range(1, n + 1):
        if counts[k - 1] == 0:
            continue
        w = np.asarray(log_w[k - 1])
        const = (
            lgamma(n - k + 1)
            - lgamma(n + 1)
            + lgamma(n + n * alpha)
            - lgamma(n * alpha)
            + k * lgamma(alpha)
        )
        log_c[k - 1] = const + logsumexp(w) - log(T)
        # relative MC error of the bin mean over all T draws (zeros outside)
        shift = w.max()
        vals = np.exp(w - shift)
        mean = vals.sum() / T
        second = (vals**2).sum() / T
        var = max(second - mean**2, 0.0) / T
        mc_se[k - 1] = float(np.sqrt(var) / mean)

    if merge_reuse:
        for k in range(n - 1, 0, -1):
            if not np.isnan(log_c[k - 1]):
                continue
            parents = next(
                (kp for kp in range(k + 1, n + 1) if counts[kp - 1] > 0), None
            )
            if parents is None:
                continue  # flagged missing
            depth = parents - k  # always within the k_p - 1 merge budget
            contribs = []
            for part, theta in draws[parents - 1]:
                merged = part
                for _ in range(depth):
                    pair = rng.choice(np.arange(1, merged.k + 1), size=2, replace=False)
                    merged = merge_clusters(merged, int(pair[0]), int(pair[1]))
                g_log = _log_channel_density(
                    tuple(sorted(merged.sizes)), depth, n, alpha
                )
                contribs.append(
                    sum(lgamma(nj) for nj in merged.sizes)
                    + log_marginal_component(d, theta, merged)
                    - g_log
                )
            w = np.asarray(contribs)
            log_c[k - 1] = logsumexp(w) - log(T)
            shift = w.max()
            vals = np.exp(w - shift)
            mean = vals.sum() / T
            second = (vals**2).sum() / T
            var = max(second - mean**2, 0.0) / T
            mc_se[k - 1] = float(np.sqrt(var) / mean)

    return PrecisionCoefficients(log_c=log_c, kind="importance-estimated", mc_se=mc_se)


def coefficients_for_dataset(
    d: Dataset,
    theta: ModelParams,
    hp: Hyperpriors,
    rng: np.random.Generator,
    draws: int = 20_000,
) -> PrecisionCoefficients:
    """Exhaustive profile coefficients when feasible, sampled otherwise."""
    if d.n <= ENUMERATION_CAP:
        return exhaustive_precision_coefficients(d, theta)
    return importance_sample_coefficients(d, hp, draws, rng)


class MarginalCoefficientTable:
    """Exact parameter-integrated coefficients for a fixed small design.

    With the coefficient vector integrated over its priors, each partition
    contributes int N(y; 0, sigma2 (I + XX') + tau2 AA') dIG dIG: the
    coefficient prior is absorbed into the base Gram matrix, and the two
    variance integrals run over a log-spaced quadrature grid.  A
    generalized eigendecomposition per partition (done once, reused for
    every response vector) turns each grid evaluation into O(n) work.
    """

    def __init__(
        self,
        X: np.ndarray,
        hp: Hyperpriors,
        grid_lo: float = 1e-3,
        grid_hi: float = 1e3,
        grid_points: int = 56,
    ):
        from scipy.linalg import eigh

        X = np.asarray(X, dtype=float)
        self.n = X.shape[0]
        if self.n > ENUMERATION_CAP:
            raise ValueError(
                f"exact marginal coefficients need n <= {ENUMERATION_CAP}"
            )
        self.gram = np.eye(self.n) + X @ X.T
        _, self._logdet_gram = np.linalg.slogdet(self.gram)
        self._structs = []
        for part in enumerate_partitions(self.n):
            a = part.to_indicator_matrix()
            lam, vec = eigh(a @ a.T, self.gram)
            w = sum(lgamma(nj) for nj in part.sizes)
            self._structs.append((part.k, w, np.clip(lam, 0.0, None), vec))

        g = np.logspace(np.log10(grid_lo), np.log10(grid_hi), grid_points)
        step = log(g[1] / g[0])
        s2, t2 = np.meshgrid(g, g, indexing="ij")
        self._s2 = s2.ravel()
        self._t2 = t2.ravel()

        def ig_logpdf(x, a, b):
            return a * log(b) - lgamma(a) - (a + 1.0) * np.log(x) - b / x

        self._log_prior = (
            ig_logpdf(self._s2, hp.a2, hp.b2)
            + np.log(self._s2)
            + ig_logpdf(self._t2, hp.a1, hp.b1)
            + np.log(self._t2)
            + 2.0 * log(step)
        )

    def coefficients(self, y: np.ndarray) -> PrecisionCoefficients:
        y = np.asarray(y, dtype=float)
        terms = [[] for _ in range(self.n)]
        const = -0.5 * (self.n * log(2.0 * np.pi) + self._logdet_gram)
        for k, w, lam, vec in self._structs:
            z2 = (vec.T @ y) ** 2
            denom = self._s2[None, :] + np.outer(lam, self._t2)
            loglik = const - 0.5 * (
                np.log(denom).sum(axis=0) + (z2[:, None] / denom).sum(axis=0)
            )
            terms[k - 1].append(w + logsumexp(loglik + self._log_prior))
        return PrecisionCoefficients(
            log_c=np.array([logsumexp(t) for t in terms]), kind="marginal"
        )


def marginal_coefficients_exact(d: Dataset, hp: Hyperpriors) -> PrecisionCoefficients:
    """One-shot exact marginal coefficients for a small dataset."""
    return MarginalCoefficientTable(d.X, hp).coefficients(d.y)


def estimation_report(
    c: PrecisionCoefficients, hp: Hyperpriors, use_prior: bool = True
) -> dict:
    """JSON-ready summary of a precision-estimation run.

    Coefficients the estimator could not populate are reported as missing
    and enter the shape scan as zeros; that is only safe when the missing
    cluster counts carry negligible likelihood, which is what empty bins
    of a well-sized importance run indicate.
    """
    n = c.n
    missing = np.flatnonzero(np.isnan(c.log_c))
    if missing.size:
        masked = c.log_c.copy()
        masked[missing] = -np.inf
        c_used = PrecisionCoefficients(log_c=masked, kind=c.kind, mc_se=c.mc_se)
    else:
        c_used = c
    if use_prior:
        result = posterior_mode_m(c_used, hp.m_prior_a, hp.m_prior_b)
    else:
        result = classify_likelihood_shape(c_used)
    k_hat = (
        kappa(result.m_hat, n)
        if np.isfinite(result.m_hat) or isinf(result.m_hat)
        else None
    )
    return {
        "n": n,
        "log_c": [None if np.isnan(v) else v for v in c.log_c],
        "coefficient_kind": c.kind,
        "missing_k": (missing + 1).tolist(),
        "m_hat": None if np.isnan(result.m_hat) else result.m_hat,
        "classification": result.classification,
        "pattern": result.pattern,
        "curvature": result.curvature,
        "kappa_hat": k_hat,
        "prior": {"a": hp.m_prior_a, "b": hp.m_prior_b} if use_prior else None,
        "mc_se": None
        if c.mc_se is None
        else [None if np.isnan(v) else v for v in c.mc_se],
        "grid": {"lo": GRID_LO, "hi": GRID_HI, "points": GRID_POINTS},
    }
