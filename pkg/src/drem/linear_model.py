"""Normal linear model with Dirichlet-process random effects.

The observation model is y = X beta + A eta + noise, where A is the
incidence matrix of the current partition, eta gives one effect per
cluster with prior N(0, tau2), and the noise is N(0, sigma2 I).
Integrating eta out leaves y ~ N(X beta, sigma2 I + tau2 A A'), whose
covariance is block diagonal cluster by cluster, so the log density
decomposes into per-cluster terms and never needs a dense solve.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from math import lgamma, log, pi

import numpy as np
from scipy.special import logsumexp

from drem.partitions import ENUMERATION_CAP, Partition, enumerate_partitions
from drem.state import ChainState

LOG_2PI = log(2.0 * pi)


@dataclass
class Dataset:
    """Response vector y and n-by-p design matrix X."""

    y: np.ndarray
    X: np.ndarray

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        self.X = np.asarray(self.X, dtype=float)
        if self.y.ndim != 1 or self.X.ndim != 2:
            raise ValueError("y must be a vector and X a matrix")
        if self.X.shape[0] != len(self.y):
            raise ValueError(
                f"X has {self.X.shape[0]} rows but y has {len(self.y)} entries"
            )
        if len(self.y) < 1 or self.X.shape[1] < 1:
            raise ValueError("need at least one observation and one covariate")
        if not (np.all(np.isfinite(self.y)) and np.all(np.isfinite(self.X))):
            raise ValueError("non-finite entries in the data")

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def p(self) -> int:
        return self.X.shape[1]


@dataclass
class ModelParams:
    """theta = (beta, sigma2, tau2) plus optional per-cluster effects eta."""

    beta: np.ndarray
    sigma2: float
    tau2: float
    eta: np.ndarray | None = None

    def __post_init__(self):
        self.beta = np.atleast_1d(np.asarray(self.beta, dtype=float))
        if self.sigma2 <= 0 or self.tau2 <= 0:
            raise ValueError("variance components must be strictly positive")
        if self.eta is not None:
            self.eta = np.asarray(self.eta, dtype=float)

    def without_eta(self) -> "ModelParams":
        return replace(self, eta=None)


@dataclass
class Hyperpriors:
    """Inverted-gamma priors for the variances, gamma prior for the DP
    precision, Dirichlet weights for the auxiliary q, and the importance
    sampler's concentration.

    The inverted gamma IG(a, b) here has density proportional to
    x^-(a+1) exp(-b / x)  (shape a, scale b), mean b / (a - 1).
    """

    a1: float = 1.0
    b1: float = 1.0
    a2: float = 1.0
    b2: float = 1.0
    m_prior_a: float = 2.0
    m_prior_b: float = 1.0
    r: np.ndarray | None = None
    alpha: float = 1.0

    def __post_init__(self):
        for name in ("a1", "b1", "a2", "b2", "m_prior_a", "m_prior_b", "alpha"):
            if getattr(self, name) <= 0:
                raise ValueError(f"hyperprior {name} must be strictly positive")
        if self.r is not None:
            self.r = np.asarray(self.r, dtype=float)
            if np.any(self.r <= 0):
                raise ValueError("Dirichlet weights r must be strictly positive")

    def dirichlet_weights(self, n: int) -> np.ndarray:
        if self.r is None:
            return np.ones(n)
        if len(self.r) != n:
            raise ValueError(f"r has length {len(self.r)}, expected {n}")
        return self.r


@dataclass
class PrecisionCoefficients:
    """Per-cluster-count likelihood coefficients, stored in log scale.

    log_c[k-1] is the log coefficient for k clusters.  -inf marks an exact
    zero; NaN marks an entry the estimator could not populate (missing, not
    zero).  ``kind`` is one of profile / marginal / importance-estimated.
    """

    log_c: np.ndarray
    kind: str
    mc_se: np.ndarray | None = None

    def __post_init__(self):
        self.log_c = np.asarray(self.log_c, dtype=float)
        if self.log_c.ndim != 1 or len(self.log_c) < 1:
            raise ValueError("log_c must be a nonempty vector")
        if self.kind not in ("profile", "marginal", "importance-estimated"):
            raise ValueError(f"unknown coefficient kind {self.kind!r}")
        if np.any(self.log_c == np.inf):
            raise ValueError("log coefficients cannot be +inf")

    @property
    def n(self) -> int:
        return len(self.log_c)


def cluster_sums(values: np.ndarray, p: Partition) -> np.ndarray:
    """Per-cluster sums of an observation-indexed vector."""
    return np.bincount(
        np.asarray(p.assignment) - 1, weights=values, minlength=p.k
    )


def log_marginal_component(d: Dataset, theta: ModelParams, p: Partition) -> float:
    """Log density of y ~ N(X beta, sigma2 I + tau2 A A') at the data.

    Evaluated through the cluster-block structure: each cluster of size n_j
    contributes a (sigma2 I + tau2 J) block, with determinant
    sigma2^(n_j - 1) (sigma2 + n_j tau2) and an inverse that only needs the
    within-cluster residual sum.  Requires eta to be absent: this is the
    eta-integrated density.
    """
    if theta.eta is not None:
        raise ValueError("log_marginal_component integrates eta out; drop it first")
    if theta.sigma2 <= 0 or theta.tau2 <= 0:
        raise ValueError("variance components must be strictly positive")
    if len(theta.beta) != d.p or p.n != d.n:
        raise ValueError("dimension mismatch between data, parameters and partition")
    sigma2, tau2 = theta.sigma2, theta.tau2
    r = d.y - d.X @ theta.beta
    sizes = np.asarray(p.sizes, dtype=float)
    s = cluster_sums(r, p)
    logdet = (d.n - p.k) * log(sigma2) + np.log(sigma2 + sizes * tau2).sum()
    quad = (r @ r - (tau2 * s * s / (sigma2 + sizes * tau2)).sum()) / sigma2
    return -0.5 * (d.n * LOG_2PI + logdet + quad)


def exhaustive_precision_coefficients(d: Dataset, theta: ModelParams) -> PrecisionCoefficients:
    """Profile coefficients by exhaustive enumeration of all partitions.

    log_c[k-1] = log sum over partitions with k clusters of
    exp( sum_j log Gamma(n_j) + log_marginal_component ).  Only feasible
    below the enumeration cap.
    """
    if d.n > ENUMERATION_CAP:
        raise ValueError(
            f"exhaustive coefficients need n <= {ENUMERATION_CAP}, got n = {d.n}"
        )
    theta = theta.without_eta()
    terms = [[] for _ in range(d.n)]
    for p in enumerate_partitions(d.n):
        w = sum(lgamma(nj) for nj in p.sizes)
        terms[p.k - 1].append(w + log_marginal_component(d, theta, p))
    log_c = np.array([logsumexp(t) if t else -np.inf for t in terms])
    return PrecisionCoefficients(log_c=log_c, kind="profile")


@dataclass
class FullConditionals:
    """Explicit parameter sets for the four conjugate full conditionals.

    eta is normal with independent coordinates (the posterior precision
    matrix is diagonal); beta is N(beta_mean, beta_cov); tau2 and sigma2
    are IG(shape, scale) in the x^-(a+1) exp(-b/x) parameterization.
    """

    eta_mean: np.ndarray
    eta_var: np.ndarray
    beta_mean: np.ndarray
    beta_cov: np.ndarray
    tau2_shape: float
    tau2_scale: float
    sigma2_shape: float
    sigma2_scale: float


def linear_full_conditionals(
    d: Dataset, theta: ModelParams, p: Partition, hp: Hyperpriors
) -> FullConditionals:
    """Conjugate full conditionals for (eta, beta, tau2, sigma2).

    eta | rest is N with precision A* = I/tau2 + A'A/sigma2 (diagonal,
    entries 1/tau2 + n_j/sigma2) and mean A*^-1 A'(y - X beta)/sigma2;
    beta | rest is N((I + X'X)^-1 X'(y - A eta), sigma2 (I + X'X)^-1);
    tau2 | rest is IG(k/2 + a1, |eta|^2/2 + b1);
    sigma2 | rest is IG((n+p)/2 + a2, |y - X beta - A eta|^2/2 + |beta|^2/2 + b2).
    """
    if theta.eta is None:
        raise ValueError("the beta/tau2/sigma2 conditionals need eta in the state")
    if len(theta.eta) != p.k:
        raise ValueError(f"eta has length {len(theta.eta)}, partition has k = {p.k}")
    if len(theta.beta) != d.p or p.n != d.n:
        raise ValueError("dimension mismatch between data, parameters and partition")
    sizes = np.asarray(p.sizes, dtype=float)
    labels = np.asarray(p.assignment) - 1
    resid_beta = d.y - d.X @ theta.beta
    astar = 1.0 / theta.tau2 + sizes / theta.sigma2
    eta_mean = cluster_sums(resid_beta, p) / theta.sigma2 / astar
    eta_var = 1.0 / astar

    psi = theta.eta[labels]
    gram = np.eye(d.p) + d.X.T @ d.X
    beta_mean = np.linalg.solve(gram, d.X.T @ (d.y - psi))
    beta_cov = theta.sigma2 * np.linalg.inv(gram)

    resid_full = d.y - d.X @ theta.beta - psi
    return FullConditionals(
        eta_mean=eta_mean,
        eta_var=eta_var,
        beta_mean=beta_mean,
        beta_cov=beta_cov,
        tau2_shape=p.k / 2.0 + hp.a1,
        tau2_scale=0.5 * float(theta.eta @ theta.eta) + hp.b1,
        sigma2_shape=(d.n + d.p) / 2.0 + hp.a2,
        sigma2_scale=0.5 * float(resid_full @ resid_full)
        + 0.5 * float(theta.beta @ theta.beta)
        + hp.b2,
    )


def sample_inverse_gamma(shape: float, scale: float, rng: np.random.Generator) -> float:
    """Draw from IG(shape, scale) with density prop. to x^-(shape+1) e^(-scale/x)."""
    return scale / rng.gamma(shape)


def _shrunken_apply(v: np.ndarray, p: Partition, shrink: np.ndarray) -> np.ndarray:
    """(I + rho A A')^-1 v for cluster-wise shrink factors rho/(1 + n_j rho)."""
    labels = np.asarray(p.assignment) - 1
    s = np.bincount(labels, weights=v, minlength=p.k)
    return v - (shrink * s)[labels]


def _marginalized_theta_step(
    d: Dataset,
    theta: ModelParams,
    p: Partition,
    hp: Hyperpriors,
    rng: np.random.Generator,
    fix_sigma2: bool = False,
    grid_points: int = 400,
    grid_window: float = 1e6,
) -> ModelParams:
    # Gibbs on (beta, sigma2, rho) with rho = tau2/sigma2; eta never drawn.
    sizes = np.asarray(p.sizes, dtype=float)
    beta, sigma2 = theta.beta, theta.sigma2
    rho = theta.tau2 / theta.sigma2

    def quad_form(b, rho_val):
        r = d.y - d.X @ b
        shrink = rho_val / (1.0 + sizes * rho_val)
        s = cluster_sums(r, p)
        return float(r @ r - (shrink * s * s).sum())

    # beta | sigma2, rho
    shrink = rho / (1.0 + sizes * rho)
    mx = np.column_stack([_shrunken_apply(d.X[:, j], p, shrink) for j in range(d.p)])
    gram = np.eye(d.p) + d.X.T @ mx
    mean = np.linalg.solve(gram, mx.T @ d.y)
    chol = np.linalg.cholesky(gram)
    beta = mean + np.sqrt(sigma2) * np.linalg.solve(chol.T, rng.standard_normal(d.p))

    if not fix_sigma2:
        # sigma2 | beta, rho: exact IG once tau2 is expressed as rho * sigma2
        shape = (d.n + d.p) / 2.0 + hp.a1 + hp.a2
        scale = (
            0.5 * quad_form(beta, rho) + 0.5 * float(beta @ beta) + hp.b2 + hp.b1 / rho
        )
        sigma2 = sample_inverse_gamma(shape, scale, rng)

    # rho | beta, sigma2: one-dimensional draw on a log-spaced grid
    grid = rho * np.logspace(
        -np.log10(grid_window), np.log10(grid_window), grid_points
    )
    logdens = np.empty(grid_points)
    r = d.y - d.X @ beta
    s = cluster_sums(r, p)
    rr = float(r @ r)
    for i, g in enumerate(grid):
        shrink = g / (1.0 + sizes * g)
        q = rr - float((shrink * s * s).sum())
        logdens[i] = (
            -0.5 * np.log1p(sizes * g).sum()
            - q / (2.0 * sigma2)
            - (hp.a1 + 1.0) * log(g)
            - hp.b1 / (g * sigma2)
            + log(g)  # jacobian of the log-spaced grid
        )
    w = np.exp(logdens - logdens.max())
    idx = rng.choice(grid_points, p=w / w.sum())
    lo = grid[max(idx - 1, 0)]
    hi = grid[min(idx + 1, grid_points - 1)]
    rho = float(np.exp(rng.uniform(np.log(lo), np.log(hi))))
    return ModelParams(beta=beta, sigma2=sigma2, tau2=rho * sigma2, eta=None)


def draw_eta(
    d: Dataset, theta: ModelParams, p: Partition, rng: np.random.Generator
) -> np.ndarray:
    """One draw of eta | beta, sigma2, tau2, partition, responses."""
    sizes = np.asarray(p.sizes, dtype=float)
    resid_beta = d.y - d.X @ theta.beta
    astar = 1.0 / theta.tau2 + sizes / theta.sigma2
    eta = cluster_sums(resid_beta, p) / theta.sigma2 / astar
    return eta + rng.standard_normal(p.k) / np.sqrt(astar)


def _conjugate_theta_step(
    d: Dataset,
    theta: ModelParams,
    p: Partition,
    hp: Hyperpriors,
    rng: np.random.Generator,
    fix_sigma2: bool = False,
) -> ModelParams:
    labels = np.asarray(p.assignment) - 1

    # eta | beta, sigma2, tau2
    eta = draw_eta(d, theta, p, rng)

    # beta | eta, sigma2
    psi = eta[labels]
    gram = np.eye(d.p) + d.X.T @ d.X
    mean = np.linalg.solve(gram, d.X.T @ (d.y - psi))
    chol = np.linalg.cholesky(gram)
    beta = mean + np.sqrt(theta.sigma2) * np.linalg.solve(
        chol.T, rng.standard_normal(d.p)
    )

    # tau2 | eta
    tau2 = sample_inverse_gamma(p.k / 2.0 + hp.a1, 0.5 * float(eta @ eta) + hp.b1, rng)

    # sigma2 | beta, eta
    sigma2 = theta.sigma2
    if not fix_sigma2:
        resid_full = d.y - d.X @ beta - psi
        sigma2 = sample_inverse_gamma(
            (d.n + d.p) / 2.0 + hp.a2,
            0.5 * float(resid_full @ resid_full) + 0.5 * float(beta @ beta) + hp.b2,
            rng,
        )
    return ModelParams(beta=beta, sigma2=sigma2, tau2=tau2, eta=eta)


def gibbs_step_theta(
    state: ChainState,
    d: Dataset,
    hp: Hyperpriors,
    rng: np.random.Generator,
    marginalized: bool = False,
) -> ModelParams:
    """One sweep of the parameter block given the current partition.

    Non-marginalized: draw (eta, beta, tau2, sigma2) in sequence from their
    conjugate conditionals, each given the freshest values.  Marginalized:
    eta is integrated out and (beta, sigma2, tau2) move under the integrated
    density, with tau2 handled through a gridded one-dimensional draw.
    """
    p = state.partition
    if marginalized:
        return _marginalized_theta_step(d, state.theta.without_eta(), p, hp, rng)
    return _conjugate_theta_step(d, state.theta, p, hp, rng)
