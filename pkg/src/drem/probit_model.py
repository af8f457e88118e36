"""Probit model with Dirichlet-process random effects.

Binary responses enter through the latent-variable representation
U_i = x_i'beta + psi_i + e_i with e_i ~ N(0, sigma2) and y_i = 1 iff
U_i > 0, so one extra truncated-normal block turns the linear-model Gibbs
sweep into the probit sweep: given U, everything else is the linear model
with U in place of y.  sigma2 stays pinned at 1 by default to fix the
scale of the latent axis.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.special import ndtr

from drem.linear_model import (
    Dataset,
    Hyperpriors,
    _conjugate_theta_step,
    _marginalized_theta_step,
    draw_eta,
)
from drem.state import ChainState
from drem.truncnorm import sample_truncated_normal


@dataclass
class BinaryDataset:
    """Binary response vector y (entries exactly 0 or 1) and design X."""

    y: np.ndarray
    X: np.ndarray

    def __post_init__(self):
        self.y = np.asarray(self.y)
        self.X = np.asarray(self.X, dtype=float)
        if self.y.ndim != 1 or self.X.ndim != 2 or self.X.shape[0] != len(self.y):
            raise ValueError("y must be a vector matching the rows of X")
        if not np.all(np.isin(self.y, (0, 1))):
            raise ValueError("binary responses must be exactly 0 or 1")
        if not np.all(np.isfinite(self.X)):
            raise ValueError("non-finite entries in the design matrix")
        self.y = self.y.astype(int)

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def p(self) -> int:
        return self.X.shape[1]


@dataclass
class LatentState:
    """Latent responses; u_i > 0 exactly where y_i = 1."""

    u: np.ndarray

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)

    def check_signs(self, y: np.ndarray) -> bool:
        y = np.asarray(y)
        return bool(np.all((self.u > 0) == (y == 1)))


def probit_success_prob(
    xrow: np.ndarray, beta: np.ndarray, psi: float, sigma: float
) -> float:
    """Success probability Phi((x'beta + psi) / sigma)."""
    if sigma <= 0:
        raise ValueError("sigma must be strictly positive")
    return float(ndtr((np.asarray(xrow, dtype=float) @ np.asarray(beta) + psi) / sigma))


def sample_latent_u(
    state: ChainState, d: BinaryDataset, rng: np.random.Generator
) -> LatentState:
    """Draw each latent U_i from its truncated-normal conditional.

    U_i ~ N(x_i'beta + psi_i, sigma2) restricted to (0, inf) when y_i = 1
    and to (-inf, 0] when y_i = 0, with psi = A eta from the current state.
    """
    theta = state.theta
    if theta.eta is None:
        raise ValueError("latent draws need eta in the state")
    labels = np.asarray(state.partition.assignment) - 1
    means = d.X @ theta.beta + theta.eta[labels]
    sd = float(np.sqrt(theta.sigma2))
    u = np.empty(d.n)
    pos = d.y == 1
    if pos.any():
        u[pos] = sample_truncated_normal(means[pos], sd, rng, lower=0.0)
    if (~pos).any():
        u[~pos] = sample_truncated_normal(means[~pos], sd, rng, upper=0.0)
    return LatentState(u=u)


def _sample_latent_u_marginalized(
    state: ChainState, d: BinaryDataset, rng: np.random.Generator
) -> LatentState:
    # eta integrated out: within a cluster the latent residuals are
    # exchangeable N(0, sigma2 I + tau2 J), so draw each U_i from its
    # one-dimensional conditional given the other cluster members.
    theta = state.theta
    part = state.partition
    labels = np.asarray(part.assignment) - 1
    sizes = np.asarray(part.sizes, dtype=float)
    xb = d.X @ theta.beta
    u = state.u.u.copy() if state.u is not None else xb.copy()
    s2, t2 = theta.sigma2, theta.tau2
    csums = np.bincount(labels, weights=u - xb, minlength=part.k)
    for i in range(d.n):
        j = labels[i]
        rest = csums[j] - (u[i] - xb[i])
        nrest = sizes[j] - 1
        denom = s2 + nrest * t2
        mean = xb[i] + t2 * rest / denom
        var = s2 + t2 - t2 * t2 * nrest / denom
        sd = float(np.sqrt(var))
        if d.y[i] == 1:
            new = sample_truncated_normal(np.array([mean]), sd, rng, lower=0.0)[0]
        else:
            new = sample_truncated_normal(np.array([mean]), sd, rng, upper=0.0)[0]
        csums[j] += new - u[i]
        u[i] = new
    return LatentState(u=u)


def probit_gibbs_sweep(
    state: ChainState,
    d: BinaryDataset,
    hp: Hyperpriors,
    rng: np.random.Generator,
    fix_sigma2: bool = True,
    marginalized: bool = False,
) -> ChainState:
    """One full probit sweep: latent block, then the parameter block.

    With ``fix_sigma2`` (the default) the error variance never moves; set
    it False to sample sigma2 as in the linear model.
    """
    part = state.partition
    theta = state.theta
    if marginalized:
        latent = _sample_latent_u_marginalized(state, d, rng)
        pseudo = Dataset(latent.u, d.X)
        theta = _marginalized_theta_step(
            pseudo, theta.without_eta(), part, hp, rng, fix_sigma2=fix_sigma2
        )
    else:
        if theta.eta is None or len(theta.eta) != part.k:
            # partition moves invalidate eta; refresh it from its conditional
            # given the previous latents before the U block needs it
            if state.u is not None:
                eta = draw_eta(Dataset(state.u.u, d.X), theta, part, rng)
            else:
                eta = np.zeros(part.k)  # first-iteration initialization
            theta = replace(theta, eta=eta)
            state = ChainState(
                theta=theta, partition=part, q=state.q, u=state.u,
                iteration=state.iteration,
            )
        latent = sample_latent_u(state, d, rng)
        pseudo = Dataset(latent.u, d.X)
        theta = _conjugate_theta_step(
            pseudo, theta, part, hp, rng, fix_sigma2=fix_sigma2
        )
    return ChainState(
        theta=theta, partition=part, q=state.q, u=latent,
        iteration=state.iteration + 1,
    )
