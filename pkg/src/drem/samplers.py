"""Partition-updating Markov kernels and the chain driver.

Two families of partition moves share the chain driver:

* ``stickbreaking`` -- the classic one-observation-at-a-time Gibbs update
  whose conditionals are proportional to the cluster counts (times the
  marginal component likelihood in full-model mode).
* ``drem_row_gibbs`` / ``drem_mh`` -- the multinomial/Dirichlet kernel: an
  auxiliary weight vector q is drawn from a Dirichlet whose parameters are
  the cluster counts plus r, and observations are then reassigned with
  weights tied to q.  The row-Gibbs variant updates one observation at a
  time; the MH variant proposes a whole partition by drawing categorical
  rows from q and collapsing.

Every cluster is pinned to one of n weight coordinates for the duration of
a sweep.  A reassignment to an unoccupied coordinate opens a new cluster
there; the per-coordinate weight of that event is m q_c / (number of
unoccupied coordinates), which makes the canonical partition chain leave
the Dirichlet-process partition law invariant (the plain m q_c weighting
instead targets a law tilted by the number of ways to label the clusters,
which is not the partition prior -- see the row-probability identity and
stationarity tests).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from math import lgamma, log
from typing import Sequence

import numpy as np

from drem.config import ExperimentConfig
from drem.linear_model import (
    Dataset,
    Hyperpriors,
    ModelParams,
    gibbs_step_theta,
    log_marginal_component,
)
from drem.partitions import Partition, canonicalize, collapse_draw, log_collapse_mass, polya_urn_sample
from drem.probit_model import BinaryDataset, probit_gibbs_sweep
from drem.state import ChainState

VALID_KERNELS = ("drem_row_gibbs", "drem_mh", "stickbreaking")
VALID_ROW_ORDERS = ("forward", "shuffled", "palindrome")


@dataclass(frozen=True)
class KernelKind:
    """Which partition kernel to run and whether to drop the data weight."""

    tag: str = "drem_row_gibbs"
    prior_only: bool = False
    row_order: str = "forward"

    def __post_init__(self):
        if self.tag not in VALID_KERNELS:
            raise ValueError(f"kernel tag must be one of {VALID_KERNELS}, got {self.tag!r}")
        if self.row_order not in VALID_ROW_ORDERS:
            raise ValueError(
                f"row order must be one of {VALID_ROW_ORDERS}, got {self.row_order!r}"
            )


def sample_q(p: Partition, r: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Auxiliary weights q ~ Dirichlet(n_1 + r_1, ..., n_k + r_k, r_{k+1}, ..., r_n).

    Occupied clusters contribute their counts on the first k coordinates;
    the remaining coordinates keep their base weights.  Generated as
    normalized gamma draws.
    """
    r = np.asarray(r, dtype=float)
    if len(r) != p.n or np.any(r <= 0):
        raise ValueError("r must be a strictly positive length-n weight vector")
    params = r.copy()
    params[: p.k] += np.asarray(p.sizes, dtype=float)
    g = rng.gamma(params)
    while np.any(g == 0.0):  # guard against underflow for tiny parameters
        g = rng.gamma(params)
    return g / g.sum()


class _ComponentLikelihood:
    """Per-cluster pieces of log N(y; X beta, sigma2 I + tau2 A A').

    term(size, total) is one cluster's additive contribution given its
    residual sum; moving an observation only changes two clusters' terms,
    so candidate weights come from O(1) adjustments per cluster.  Cluster
    sizes are integers, so the size-dependent pieces live in lookup tables
    indexed by size.
    """

    def __init__(self, d: Dataset, theta: ModelParams):
        self.resid = d.y - d.X @ theta.beta
        self.sigma2 = theta.sigma2
        self.tau2 = theta.tau2
        n = d.n
        sizes = np.arange(n + 2, dtype=float)
        self._denom = self.sigma2 + sizes * self.tau2
        logdenom = np.log(self._denom)
        # log-det growth when a cluster of size j gains one member
        self._dlogdet = log(self.sigma2) + logdenom[1:] - logdenom[:-1]
        self._logdenom = logdenom
        self._qcoef = self.tau2 / (2.0 * self.sigma2)

    def term(self, size, total):
        size = np.asarray(size, dtype=int)
        return -0.5 * (
            (size - 1.0) * log(self.sigma2) + self._logdenom[size]
        ) + self._qcoef * total * total / self._denom[size]

    def delta_add(self, sizes, totals, ri):
        """Change in the cluster term when an observation joins."""
        upped = totals + ri
        return -0.5 * self._dlogdet[sizes] + self._qcoef * (
            upped * upped / self._denom[sizes + 1] - totals * totals / self._denom[sizes]
        )

    def delta_new(self, ri):
        return -0.5 * self._logdenom[1] + self._qcoef * ri * ri / self._denom[1]

    def constant(self, n):
        return -0.5 * n * log(2.0 * np.pi) - 0.5 * float(
            self.resid @ self.resid
        ) / self.sigma2


class _Sweep:
    """Mutable per-coordinate cluster statistics during one partition sweep."""

    def __init__(self, p: Partition, like: _ComponentLikelihood | None,
                 q: np.ndarray | None = None):
        n = p.n
        self.n = n
        self.label = np.asarray(p.assignment, dtype=int) - 1  # coordinate per obs
        self.csize = np.zeros(n, dtype=int)
        np.add.at(self.csize, self.label, 1)
        self.like = like
        counts = np.arange(n + 1, dtype=float)
        with np.errstate(divide="ignore"):
            self._log_count = np.log(counts)
        self._log_ratio = self._log_count - np.log(counts + 1.0)
        self.q = q
        if q is not None:
            self._logq = np.log(q)
            self.q_free = float(q[self.csize == 0].sum())
        if like is not None:
            self.csum = np.zeros(n)
            np.add.at(self.csum, self.label, like.resid)

    def remove(self, i: int):
        c = self.label[i]
        self.csize[c] -= 1
        if self.csize[c] == 0 and self.q is not None:
            self.q_free += self.q[c]
        if self.like is not None:
            self.csum[c] -= self.like.resid[i]

    def insert(self, i: int, c: int):
        self.label[i] = c
        if self.csize[c] == 0 and self.q is not None:
            self.q_free -= self.q[c]
        self.csize[c] += 1
        if self.like is not None:
            self.csum[c] += self.like.resid[i]

    def partition(self) -> Partition:
        return canonicalize(self.label.tolist())


def _row_log_weights(sweep: _Sweep, i: int, m: float):
    """Occupied-cluster and aggregated new-cluster log weights for obs i,
    computed with obs i removed.  Returns (occ_coords, logw) where the
    last entry of logw is the new-cluster weight.
    """
    occ = np.flatnonzero(sweep.csize > 0)
    sizes = sweep.csize[occ]
    logw = np.empty(len(occ) + 1)
    if sweep.q is None:  # stickbreaking
        logw[:-1] = sweep._log_count[sizes]
        logw[-1] = log(m)
    else:
        logw[:-1] = sweep._log_ratio[sizes] + sweep._logq[occ]
        free = sweep.n - len(occ)
        logw[-1] = log(m) + log(max(sweep.q_free, 1e-300)) - log(free)
    if sweep.like is not None:
        ri = sweep.like.resid[i]
        logw[:-1] += sweep.like.delta_add(sizes, sweep.csum[occ], ri)
        logw[-1] += sweep.like.delta_new(ri)
    return occ, logw


def _row_update(sweep: _Sweep, i: int, m: float, rng: np.random.Generator):
    sweep.remove(i)
    occ, logw = _row_log_weights(sweep, i, m)
    w = np.exp(logw - logw.max())
    choice = int(np.searchsorted(np.cumsum(w), rng.random() * w.sum(), side="right"))
    if choice < len(occ):
        sweep.insert(i, int(occ[choice]))
        return
    free = np.flatnonzero(sweep.csize == 0)
    if sweep.q is None:
        sweep.insert(i, int(free[0]))
        return
    qf = sweep.q[free]
    c = free[np.searchsorted(np.cumsum(qf), rng.random() * qf.sum(), side="right")]
    sweep.insert(i, int(c))


def _sweep_order(n: int, order: str, rng: np.random.Generator):
    if order == "forward":
        return range(n)
    if order == "shuffled":
        return rng.permutation(n).tolist()
    idx = list(range(n))
    return idx + idx[::-1]


def _make_likelihood(d, theta, prior_only):
    if prior_only or d is None:
        return None
    if isinstance(d, BinaryDataset):
        raise ValueError("partition sweeps on probit data need the latent responses")
    if theta is None:
        raise ValueError("full-model sweeps need the current model parameters")
    return _ComponentLikelihood(d, theta.without_eta())


def partition_sweep(
    p: Partition,
    q: np.ndarray | None,
    m: float,
    rng: np.random.Generator,
    d: Dataset | None = None,
    theta: ModelParams | None = None,
    row_order: str = "forward",
) -> Partition:
    """One full pass of row updates; q = None gives the stickbreaking kernel."""
    like = _make_likelihood(d, theta, d is None)
    sweep = _Sweep(p, like, q)
    for i in _sweep_order(p.n, row_order, rng):
        _row_update(sweep, i, m, rng)
    return sweep.partition()


def neal_row_update(
    i: int,
    state: ChainState,
    m: float,
    d: Dataset | None,
    rng: np.random.Generator,
) -> Partition:
    """Reassign observation i with the count-proportional conditionals.

    Join probabilities are proportional to the cluster counts without i
    (times the component likelihood unless prior-only); a new cluster has
    weight m (times the fresh-cluster predictive likelihood).
    """
    like = _make_likelihood(d, state.theta if d is not None else None, d is None)
    sweep = _Sweep(state.partition, like)
    _row_update(sweep, i, m, rng)
    return sweep.partition()


def drem_row_update(
    i: int,
    state: ChainState,
    m: float,
    d: Dataset | None,
    rng: np.random.Generator,
) -> Partition:
    """Reassign observation i under the auxiliary-q conditionals.

    Occupied cluster j has weight n_j/(n_j + 1) q_j; opening a new cluster
    at unoccupied coordinate c has weight m q_c / (#unoccupied coordinates).
    Full-model mode multiplies each candidate by its component likelihood.
    """
    if state.q is None:
        raise ValueError("the drem row update needs q in the chain state")
    like = _make_likelihood(d, state.theta if d is not None else None, d is None)
    sweep = _Sweep(state.partition, like, np.asarray(state.q, dtype=float))
    _row_update(sweep, i, m, rng)
    return sweep.partition()


def row_update_probabilities(
    i: int,
    p: Partition,
    m: float,
    q: np.ndarray | None = None,
    d: Dataset | None = None,
    theta: ModelParams | None = None,
) -> tuple:
    """Normalized reassignment law for observation i, with i removed.

    Returns (labels, join_probs, new_prob): ``labels`` are the original
    cluster labels that remain occupied once i is taken out, in label
    order, and ``new_prob`` aggregates every way of opening a new cluster.
    q = None gives the stickbreaking law, otherwise the drem law.
    """
    like = _make_likelihood(d, theta, d is None)
    sweep = _Sweep(p, like, None if q is None else np.asarray(q, dtype=float))
    sweep.remove(i)
    occ, logw = _row_log_weights(sweep, i, m)
    w = np.exp(logw - logw.max())
    w /= w.sum()
    return occ + 1, w[:-1], float(w[-1])


def drem_mh_step(
    state: ChainState,
    m: float,
    d: Dataset | None,
    rng: np.random.Generator,
) -> Partition:
    """Propose a whole partition by collapsing categorical rows of q.

    The proposal mass of a canonical candidate is its Dirichlet-integrated
    collapse probability; the acceptance ratio weighs the partition target
    (m^k prod Gamma(n_j), times the component likelihood in full-model
    mode) against that mass for candidate and current state.
    """
    if state.q is None:
        raise ValueError("the MH step needs q in the chain state")
    q = np.asarray(state.q, dtype=float)
    cur = state.partition
    cand = collapse_draw(q, cur.n, rng)
    ones = np.ones(cur.n)

    def log_target(part):
        out = part.k * log(m) + sum(lgamma(nj) for nj in part.sizes)
        if d is not None:
            out += log_marginal_component(d, state.theta.without_eta(), part)
        return out

    log_ratio = (
        log_target(cand)
        - log_target(cur)
        - log_collapse_mass(cand, ones)
        + log_collapse_mass(cur, ones)
    )
    if log(rng.random()) < log_ratio:
        return cand
    return cur


@dataclass
class SampleArchive:
    """Per-iteration chain record plus the configuration echo."""

    seed: int
    burn_in: int
    config_echo: dict
    k: np.ndarray
    sizes: list
    beta: np.ndarray | None = None
    sigma2: np.ndarray | None = None
    tau2: np.ndarray | None = None

    @property
    def iterations(self) -> np.ndarray:
        return np.arange(1, len(self.k) + 1)

    def retained(self) -> "SampleArchive":
        b = self.burn_in
        return SampleArchive(
            seed=self.seed,
            burn_in=0,
            config_echo=self.config_echo,
            k=self.k[b:],
            sizes=self.sizes[b:],
            beta=None if self.beta is None else self.beta[b:],
            sigma2=None if self.sigma2 is None else self.sigma2[b:],
            tau2=None if self.tau2 is None else self.tau2[b:],
        )

    def write_csv(self, path) -> None:
        """Retained iterations as CSV plus a JSON sidecar with the config."""
        kept = self.retained()
        p = 0 if kept.beta is None else kept.beta.shape[1]
        cols = ["iteration", "k"]
        cols += [f"beta_{j + 1}" for j in range(p)]
        if kept.sigma2 is not None:
            cols += ["sigma2", "tau2"]
        cols += ["sizes"]
        with open(path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for t in range(len(kept.k)):
                row = [str(self.burn_in + t + 1), str(int(kept.k[t]))]
                if kept.beta is not None:
                    row += [f"{v:.17g}" for v in kept.beta[t]]
                if kept.sigma2 is not None:
                    row += [f"{kept.sigma2[t]:.17g}", f"{kept.tau2[t]:.17g}"]
                row += [";".join(str(s) for s in kept.sizes[t])]
                fh.write(",".join(row) + "\n")
        sidecar = str(path) + ".json"
        with open(sidecar, "w") as fh:
            json.dump(self.config_echo | {"seed": self.seed}, fh, indent=2, default=str)


def _resolve_m(cfg: ExperimentConfig, d, hp: Hyperpriors, rng) -> float:
    if cfg.m_policy == "fixed":
        return cfg.m_value
    from drem import precision  # local import: precision depends on linear_model

    if isinstance(d, BinaryDataset):
        raise ValueError("precision estimation from data needs a linear dataset")
    theta = ModelParams(
        beta=np.linalg.lstsq(d.X, d.y, rcond=None)[0], sigma2=1.0, tau2=1.0
    )
    coeffs = precision.coefficients_for_dataset(d, theta, hp, rng)
    if cfg.m_policy == "profile_mle":
        result = precision.classify_likelihood_shape(coeffs)
        if not np.isfinite(result.m_hat) or result.m_hat <= 0:
            raise ValueError(
                f"profile likelihood has no interior maximum ({result.classification}); "
                "use a fixed m or the posterior mode"
            )
        return float(result.m_hat)
    result = precision.posterior_mode_m(coeffs, hp.m_prior_a, hp.m_prior_b)
    if not np.isfinite(result.m_hat) or result.m_hat <= 0:
        raise ValueError("posterior mode for m is not interior; adjust the prior")
    return float(result.m_hat)


def run_chain(
    cfg: ExperimentConfig,
    d: Dataset | BinaryDataset | None,
    hp: Hyperpriors,
    kind: KernelKind,
    seed: int | None = None,
    start: Partition | None = None,
) -> SampleArchive:
    """Alternate the parameter block with one partition move per iteration.

    Fully deterministic in the seed.  The partition starts at ``start``
    when given, otherwise at a draw from the clustering prior.
    """
    seed = cfg.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    if d is None:
        raise ValueError("run_chain needs data; use run_prior_chain for prior-only runs")
    m = cfg.m_value if kind.prior_only else _resolve_m(cfg, d, hp, rng)
    return _run_chain_inner(cfg, d, hp, kind, m, rng, seed, start=start)


def run_prior_chain(
    n: int,
    m: float,
    cfg: ExperimentConfig,
    kind: KernelKind,
    seed: int | None = None,
    start: Partition | None = None,
) -> SampleArchive:
    """Partition-only chain targeting the DP partition law (no data)."""
    seed = cfg.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    kind = replace(kind, prior_only=True)
    return _run_chain_inner(cfg, None, Hyperpriors(), kind, m, rng, seed, n=n,
                            start=start)


def _run_chain_inner(cfg, d, hp, kind, m, rng, seed, n=None, start=None):
    if d is not None:
        n = d.n
    prior_only = kind.prior_only or d is None
    is_probit = isinstance(d, BinaryDataset)

    part = start if start is not None else polya_urn_sample(n, m, rng)
    theta = None
    if not prior_only:
        theta = ModelParams(
            beta=np.zeros(d.p),
            sigma2=1.0,
            tau2=1.0,
            eta=None if cfg.marginalized else np.zeros(part.k),
        )
    state = ChainState(theta=theta, partition=part)
    weights = hp.dirichlet_weights(n)

    ks = np.empty(cfg.iterations, dtype=int)
    sizes_trace = []
    betas = None if prior_only else np.empty((cfg.iterations, d.p))
    sig = None if prior_only else np.empty(cfg.iterations)
    tau = None if prior_only else np.empty(cfg.iterations)

    for t in range(cfg.iterations):
        pseudo = None
        if not prior_only:
            if is_probit:
                state = probit_gibbs_sweep(
                    state, d, hp, rng,
                    fix_sigma2=cfg.fix_sigma2, marginalized=cfg.marginalized,
                )
                pseudo = Dataset(state.u.u, d.X)
            else:
                state.theta = gibbs_step_theta(
                    state, d, hp, rng, marginalized=cfg.marginalized
                )
                pseudo = d

        if kind.tag == "stickbreaking":
            part = partition_sweep(
                state.partition, None, m, rng,
                d=pseudo, theta=state.theta, row_order=kind.row_order,
            )
        else:
            q = sample_q(state.partition, weights, rng)
            state.q = q
            if kind.tag == "drem_row_gibbs":
                part = partition_sweep(
                    state.partition, q, m, rng,
                    d=pseudo, theta=state.theta, row_order=kind.row_order,
                )
            else:
                state_for_mh = ChainState(
                    theta=state.theta, partition=state.partition, q=q, u=state.u
                )
                part = drem_mh_step(state_for_mh, m, pseudo, rng)
        state.partition = part
        if state.theta is not None and state.theta.eta is not None:
            state.theta = replace(state.theta, eta=None)  # stale after the move

        ks[t] = part.k
        sizes_trace.append(part.sizes)
        if not prior_only:
            betas[t] = state.theta.beta
            sig[t] = state.theta.sigma2
            tau[t] = state.theta.tau2

    echo = {
        "model": cfg.model if not prior_only else "prior_only",
        "kernel": kind.tag,
        "prior_only": prior_only,
        "row_order": kind.row_order,
        "iterations": cfg.iterations,
        "burn_in": cfg.burn_in,
        "m": m,
        "marginalized": cfg.marginalized,
        "fix_sigma2": cfg.fix_sigma2,
        "hyperpriors": {
            "a1": hp.a1, "b1": hp.b1, "a2": hp.a2, "b2": hp.b2,
            "m_prior_a": hp.m_prior_a, "m_prior_b": hp.m_prior_b,
            "alpha": hp.alpha,
        },
        "n": n,
    }
    return SampleArchive(
        seed=seed,
        burn_in=cfg.burn_in,
        config_echo=echo,
        k=ks,
        sizes=sizes_trace,
        beta=betas,
        sigma2=sig,
        tau2=tau,
    )


def cumulative_mean_variance(chains: Sequence) -> np.ndarray:
    """Across-chain variance of within-chain running means, per iteration."""
    if len(chains) < 2:
        raise ValueError("need at least two chains")
    arrs = [np.asarray(c, dtype=float) for c in chains]
    length = len(arrs[0])
    if any(len(a) != length for a in arrs):
        raise ValueError("chains must have equal lengths")
    t = np.arange(1, length + 1)
    running = np.vstack([np.cumsum(a) / t for a in arrs])
    return running.var(axis=0, ddof=1)
