"""Shared chain-state container for the Gibbs samplers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from drem.partitions import Partition


@dataclass
class ChainState:
    """One iteration's state: model parameters, partition, auxiliaries.

    ``q`` is the auxiliary cluster-weight vector used by the multinomial/
    Dirichlet partition kernel; ``u`` holds the probit latent responses.
    Both stay None for samplers that do not use them.
    """

    theta: "ModelParams"
    partition: Partition
    q: np.ndarray | None = None
    u: "LatentState | None" = None
    iteration: int = 0

    def validate(self) -> None:
        n = self.partition.n
        if self.q is not None:
            q = np.asarray(self.q)
            if len(q) != n or np.any(q <= 0) or abs(q.sum() - 1.0) > 1e-8:
                raise ValueError("q must be a strictly positive length-n probability vector")
        eta = getattr(self.theta, "eta", None)
        if eta is not None and len(eta) != self.partition.k:
            raise ValueError(
                f"eta has length {len(eta)} but the partition has k = {self.partition.k}"
            )
        if self.u is not None and len(self.u.u) != n:
            raise ValueError("latent vector length must match the partition")
