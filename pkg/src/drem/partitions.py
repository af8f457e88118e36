"""Canonical set partitions and the Dirichlet-process partition law.

A partition of n observations into k clusters is stored as a length-n
assignment vector with 1-based labels in canonical form: labels appear in
order of first occurrence, so observation 0 always carries label 1 and a
new cluster always takes the smallest unused label.  Two label vectors
describe the same set partition iff they canonicalize to the same vector,
which makes partitions directly comparable and hashable.

The incidence matrix A (one row per observation, a single 1 per row marking
its cluster) is never stored; ``Partition.to_indicator_matrix`` materializes
it for tests and dense oracles only.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from math import lgamma, log
from typing import Sequence

import numpy as np

# Bell(12) ~ 4.2e6; exhaustive enumeration beyond this is useless as an oracle.
ENUMERATION_CAP = 12


@dataclass(frozen=True)
class Partition:
    """A set partition in canonical first-occurrence labeling.

    Attributes
    ----------
    assignment : tuple of int
        assignment[i] is the 1-based cluster label of observation i.
    sizes : tuple of int
        sizes[j-1] is the number of observations with label j.
    """

    assignment: tuple
    sizes: tuple

    @property
    def n(self) -> int:
        return len(self.assignment)

    @property
    def k(self) -> int:
        return len(self.sizes)

    def members(self, label: int) -> tuple:
        """0-based observation indices carrying ``label``."""
        return tuple(i for i, a in enumerate(self.assignment) if a == label)

    def to_indicator_matrix(self) -> np.ndarray:
        """Dense n-by-k 0/1 incidence matrix (test/oracle use only)."""
        a = np.zeros((self.n, self.k))
        a[np.arange(self.n), np.asarray(self.assignment) - 1] = 1.0
        return a

    def serialize(self) -> str:
        """Canonical assignment vector as comma-separated integers."""
        return ",".join(str(a) for a in self.assignment)


@dataclass(frozen=True)
class UrnDraw:
    """A partition drawn from the sequential urn scheme.

    ``order`` records the observation order the urn was run in (identity
    unless an explicit order was supplied); the induced partition law does
    not depend on it.
    """

    partition: Partition
    order: tuple


def canonicalize(raw_labels: Sequence) -> Partition:
    """Relabel an arbitrary label vector into canonical form.

    Two inputs yield equal Partitions iff they define the same set
    partition.  Raises ValueError on empty input.
    """
    if len(raw_labels) == 0:
        raise ValueError("cannot canonicalize an empty label vector")
    relabel = {}
    assignment = []
    sizes = []
    for lab in raw_labels:
        new = relabel.get(lab)
        if new is None:
            new = len(relabel) + 1
            relabel[lab] = new
            sizes.append(0)
        assignment.append(new)
        sizes[new - 1] += 1
    return Partition(tuple(assignment), tuple(sizes))


def log_partition_prior(p: Partition, m: float) -> float:
    """Log probability of a partition under the DP clustering law.

    log[ Gamma(m)/Gamma(m+n) * m^k * prod_j Gamma(n_j) ], evaluated
    entirely through log-gamma so large n and extreme m cannot overflow.
    """
    if not np.isfinite(m) or m <= 0.0:
        raise ValueError(f"precision parameter must be positive and finite, got {m}")
    out = lgamma(m) - lgamma(m + p.n) + p.k * log(m)
    for nj in p.sizes:
        out += lgamma(nj)
    return out


def polya_urn_draw(n: int, m: float, rng: np.random.Generator,
                   order: Sequence | None = None) -> UrnDraw:
    """Sequential urn draw of a partition of n observations.

    Observation i joins an existing cluster j with probability
    n_j / (i + m) or opens a new cluster with probability m / (i + m),
    counting previously placed observations.
    """
    if n < 1:
        raise ValueError("need at least one observation")
    if not np.isfinite(m) or m <= 0.0:
        raise ValueError(f"precision parameter must be positive and finite, got {m}")
    if order is None:
        order = tuple(range(n))
    else:
        order = tuple(order)
        if sorted(order) != list(range(n)):
            raise ValueError("order must be a permutation of 0..n-1")
    labels = [0] * n
    sizes = []
    for step, i in enumerate(order):
        u = rng.random() * (step + m)
        acc = 0.0
        chosen = len(sizes)
        for j, nj in enumerate(sizes):
            acc += nj
            if u < acc:
                chosen = j
                break
        if chosen == len(sizes):
            sizes.append(1)
        else:
            sizes[chosen] += 1
        labels[i] = chosen + 1
    return UrnDraw(canonicalize(labels), order)


def polya_urn_sample(n: int, m: float, rng: np.random.Generator) -> Partition:
    """Draw a canonical partition from the urn scheme."""
    return polya_urn_draw(n, m, rng).partition


def enumerate_partitions(n: int) -> list:
    """Every set partition of n observations, each exactly once, canonical.

    Generated as restricted-growth strings, so the output is already in
    canonical form.  Refuses n above ENUMERATION_CAP.
    """
    if n < 1:
        raise ValueError("need at least one observation")
    if n > ENUMERATION_CAP:
        raise ValueError(
            f"exhaustive enumeration is capped at n <= {ENUMERATION_CAP}, got n = {n}"
        )
    out = []
    assignment = [1] * n
    sizes = [0] * n

    def grow(i: int, k: int):
        if i == n:
            out.append(Partition(tuple(assignment), tuple(sizes[:k])))
            return
        for lab in range(1, k + 2):
            assignment[i] = lab
            sizes[lab - 1] += 1
            grow(i + 1, max(k, lab))
            sizes[lab - 1] -= 1

    sizes[0] = 1
    grow(1, 1)
    return out


def group_by_k(partitions: Sequence) -> dict:
    """Group a partition list by cluster count k."""
    groups = {}
    for p in partitions:
        groups.setdefault(p.k, []).append(p)
    return groups


def stirling2(n: int, k: int) -> int:
    """Stirling number of the second kind: set partitions of n into k blocks."""
    if k < 0 or k > n:
        return 0
    row = [1]  # S(0, 0)
    for i in range(1, n + 1):
        new = [0] * (i + 1)
        for j in range(1, i + 1):
            above = row[j] if j < len(row) else 0
            new[j] = j * above + row[j - 1]
        row = new
    return row[k]


def merge_clusters(p: Partition, j1: int, j2: int) -> Partition:
    """Merge two occupied clusters into one; output is re-canonicalized."""
    if j1 == j2:
        raise ValueError("cannot merge a cluster with itself")
    for j in (j1, j2):
        if not 1 <= j <= p.k:
            raise ValueError(f"label {j} is not an occupied cluster (k = {p.k})")
    merged = [j1 if a == j2 else a for a in p.assignment]
    return canonicalize(merged)


def collapse_draw(q: np.ndarray, n: int, rng: np.random.Generator) -> Partition:
    """Draw n categorical rows from q and collapse to the induced partition.

    Empty categories are dropped (the zero-sum columns of the implied
    incidence matrix), so k equals the number of distinct categories drawn.
    """
    q = np.asarray(q, dtype=float)
    if q.ndim != 1 or len(q) != n:
        raise ValueError(f"q must be a length-{n} vector")
    if np.any(~np.isfinite(q)) or np.any(q < 0.0) or abs(q.sum() - 1.0) > 1e-8:
        raise ValueError("q must be a probability vector")
    draws = rng.choice(n, size=n, p=q / q.sum())
    return canonicalize(draws.tolist())


def log_collapse_mass(p: Partition, weights: Sequence) -> float:
    """Log probability that iid-categorical rows with Dirichlet-integrated
    category weights collapse to the partition ``p``.

    ``weights`` are the Dirichlet parameters of the category probabilities
    (one per available category, at least k of them).  The mass aggregates
    every injective placement of the k clusters onto categories, each
    carrying prod_j Gamma(n_j + r_cat) / Gamma(r_cat), normalized by
    Gamma(R) / Gamma(n + R) with R the parameter total.
    """
    r = np.asarray(weights, dtype=float)
    if np.any(r <= 0.0):
        raise ValueError("Dirichlet weights must be strictly positive")
    ncat = len(r)
    k = p.k
    if k > ncat:
        return -np.inf
    total = lgamma(r.sum()) - lgamma(p.n + r.sum())
    if np.allclose(r, r[0]):
        # symmetric fast path: ncat!/(ncat-k)! equivalent placements
        body = sum(lgamma(nj + r[0]) - lgamma(r[0]) for nj in p.sizes)
        mult = lgamma(ncat + 1) - lgamma(ncat - k + 1)
        return total + mult + body
    if k > 8:
        raise ValueError("general-weight collapse mass is only supported for k <= 8")
    terms = []
    for cats in itertools.permutations(range(ncat), k):
        terms.append(sum(lgamma(p.sizes[j] + r[c]) - lgamma(r[c])
                         for j, c in enumerate(cats)))
    terms = np.asarray(terms)
    tmax = terms.max()
    return total + tmax + np.log(np.exp(terms - tmax).sum())
