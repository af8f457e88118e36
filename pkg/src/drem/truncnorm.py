"""One-sided truncated standard-normal sampling.

Inverse-CDF sampling loses all precision once the truncation point moves a
few standard deviations into the tail, so draws conditioned on Z > a use
plain accept-reject from the untruncated normal while the acceptance rate
is healthy (a < 0.5) and switch to rejection from a translated exponential
proposal in the tail.  The exponential rate (a + sqrt(a^2 + 4)) / 2 is the
one that maximizes the acceptance probability, which stays above ~0.76 for
every a >= 0.5, so the tail path has bounded expected work no matter how
far out the cutoff sits.
"""

from __future__ import annotations

import numpy as np

# below this standardized cutoff plain accept-reject beats the tail sampler
TAIL_CUTOFF = 0.5


def sample_lower_truncated_std(a: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw Z_i ~ N(0, 1) conditioned on Z_i > a_i, elementwise."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    out = np.empty_like(a)

    naive = a < TAIL_CUTOFF
    idx = np.flatnonzero(naive)
    while idx.size:
        z = rng.standard_normal(idx.size)
        ok = z > a[idx]
        out[idx[ok]] = z[ok]
        idx = idx[~ok]

    idx = np.flatnonzero(~naive)
    if idx.size:
        cut = a[idx]
        rate = 0.5 * (cut + np.sqrt(cut * cut + 4.0))
        pending = np.arange(idx.size)
        draws = np.empty(idx.size)
        while pending.size:
            z = cut[pending] + rng.exponential(1.0, size=pending.size) / rate[pending]
            accept = rng.random(pending.size) <= np.exp(
                -0.5 * (z - rate[pending]) ** 2
            )
            draws[pending[accept]] = z[accept]
            pending = pending[~accept]
        out[idx] = draws
    return out


def sample_truncated_normal(
    mean: np.ndarray,
    sd: float,
    rng: np.random.Generator,
    lower: float | None = None,
    upper: float | None = None,
) -> np.ndarray:
    """Draw N(mean_i, sd^2) restricted to (lower, inf) or (-inf, upper].

    Exactly one bound must be given; two-sided truncation is not needed
    here and is not supported.
    """
    if sd <= 0:
        raise ValueError("sd must be strictly positive")
    if (lower is None) == (upper is None):
        raise ValueError("give exactly one of lower or upper")
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    if lower is not None:
        z = sample_lower_truncated_std((lower - mean) / sd, rng)
        return mean + sd * z
    z = sample_lower_truncated_std((mean - upper) / sd, rng)
    return mean - sd * z
