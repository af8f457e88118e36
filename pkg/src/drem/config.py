"""Run configuration containers shared by the chain driver and the CLI."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from drem.linear_model import Hyperpriors

VALID_MODELS = ("linear", "probit")
VALID_M_POLICIES = ("fixed", "posterior_mode", "profile_mle")


class ConfigError(ValueError):
    """A configuration value or key is invalid."""


@dataclass
class ExperimentConfig:
    """Everything a chain run needs beyond the data itself."""

    seed: int = 0
    chains: int = 1
    iterations: int = 5000
    burn_in: int = 2000
    hyperpriors: Hyperpriors = field(default_factory=Hyperpriors)
    model: str = "linear"
    m_policy: str = "fixed"
    m_value: float = 1.0
    output_dir: str = "."
    fix_sigma2: bool = True  # probit only
    marginalized: bool = False

    def __post_init__(self):
        if self.model not in VALID_MODELS:
            raise ConfigError(f"model must be one of {VALID_MODELS}, got {self.model!r}")
        if self.m_policy not in VALID_M_POLICIES:
            raise ConfigError(
                f"m_policy must be one of {VALID_M_POLICIES}, got {self.m_policy!r}"
            )
        if self.chains < 1:
            raise ConfigError("need at least one chain")
        if not 0 <= self.burn_in < self.iterations:
            raise ConfigError("need iterations > burn_in >= 0")
        if self.m_policy == "fixed" and self.m_value <= 0:
            raise ConfigError("fixed m must be strictly positive")


@dataclass
class SimulationSpec:
    """Ground-truth settings for simulated datasets.

    Covariates are standard-normal columns; an intercept column is
    prepended when ``intercept`` is set.  The cluster structure comes from
    ``k_true`` (balanced assignment) or, when ``m_true`` is given instead,
    from a sequential urn draw with that precision.
    """

    n: int
    true_beta: np.ndarray
    true_sigma2: float = 1.0
    true_tau2: float = 1.0
    k_true: int | None = None
    m_true: float | None = None
    intercept: bool = True
    binary: bool = False

    def __post_init__(self):
        self.true_beta = np.atleast_1d(np.asarray(self.true_beta, dtype=float))
        if self.true_sigma2 <= 0 or self.true_tau2 < 0:
            raise ConfigError("true variances must be positive (tau2 may be zero)")
        if (self.k_true is None) == (self.m_true is None):
            raise ConfigError("give exactly one of k_true or m_true")
        if self.k_true is not None and not 1 <= self.k_true <= self.n:
            raise ConfigError("k_true must lie in 1..n")
        if self.m_true is not None and self.m_true <= 0:
            raise ConfigError("m_true must be strictly positive")

    @property
    def p(self) -> int:
        return len(self.true_beta)


# ---------------------------------------------------------------------------
# flat key=value mapping <-> configuration objects

_BOOL_KEYS = {"fix_sigma2", "marginalized", "prior_only", "intercept", "binary"}
_INT_KEYS = {"seed", "chains", "iterations", "burn_in", "n", "k_true"}
_FLOAT_KEYS = {
    "m_value", "a1", "b1", "a2", "b2", "m_prior_a", "m_prior_b", "alpha",
    "true_sigma2", "true_tau2", "m_true",
}
_STR_KEYS = {"model", "m_policy", "output_dir", "kernel", "row_order"}
_LIST_KEYS = {"true_beta"}
_META_KEYS = {"command", "data"}
KNOWN_KEYS = (
    _BOOL_KEYS | _INT_KEYS | _FLOAT_KEYS | _STR_KEYS | _LIST_KEYS | _META_KEYS
)

_SIM_KEYS = {
    "n", "true_beta", "true_sigma2", "true_tau2", "k_true", "m_true",
    "intercept", "binary",
}
_HP_KEYS = {"a1", "b1", "a2", "b2", "m_prior_a", "m_prior_b", "alpha"}
_KERNEL_KEYS = {"kernel", "prior_only", "row_order"}


def _coerce(key: str, raw: str):
    try:
        if key in _BOOL_KEYS:
            low = raw.strip().lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if key in _INT_KEYS:
            return int(raw)
        if key in _FLOAT_KEYS:
            return float(raw)
        if key in _LIST_KEYS:
            return np.asarray([float(tok) for tok in raw.split(",") if tok.strip()])
        return raw.strip()
    except ValueError as err:
        raise ConfigError(f"bad value for {key}: {err}") from None


def config_from_mapping(mapping: dict) -> dict:
    """Build the configuration objects from a flat string mapping.

    Returns {"config", "hyperpriors", "kernel", "simulation", "meta"};
    ``simulation`` is present only when simulation keys appear.  Unknown
    keys are errors.
    """
    from drem.samplers import KernelKind  # local import to avoid a cycle

    unknown = set(mapping) - KNOWN_KEYS
    if unknown:
        raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
    typed = {k: _coerce(k, v) for k, v in mapping.items() if k not in _META_KEYS}

    cfg_kwargs = {
        k: v
        for k, v in typed.items()
        if k not in _SIM_KEYS | _HP_KEYS | _KERNEL_KEYS
    }
    try:
        hp = Hyperpriors(**{k: v for k, v in typed.items() if k in _HP_KEYS})
    except ValueError as err:
        raise ConfigError(str(err)) from None
    kernel_kwargs = {
        ("tag" if k == "kernel" else k): v
        for k, v in typed.items()
        if k in _KERNEL_KEYS
    }
    try:
        kind = KernelKind(**kernel_kwargs)
    except ValueError as err:
        raise ConfigError(str(err)) from None
    cfg = ExperimentConfig(hyperpriors=hp, **cfg_kwargs)
    sim = None
    sim_kwargs = {k: v for k, v in typed.items() if k in _SIM_KEYS}
    if sim_kwargs:
        if "n" not in sim_kwargs or "true_beta" not in sim_kwargs:
            raise ConfigError("simulation settings need at least n and true_beta")
        sim = SimulationSpec(**sim_kwargs)
    meta = {k: mapping[k] for k in _META_KEYS if k in mapping}
    return {"config": cfg, "hyperpriors": hp, "kernel": kind, "simulation": sim,
            "meta": meta}


def mapping_from_objects(cfg, hp, kind, sim=None, meta=None) -> dict:
    """Full flat echo of a run's settings, defaults included."""
    out = {
        "seed": str(cfg.seed),
        "chains": str(cfg.chains),
        "iterations": str(cfg.iterations),
        "burn_in": str(cfg.burn_in),
        "model": cfg.model,
        "m_policy": cfg.m_policy,
        "m_value": repr(cfg.m_value),
        "output_dir": cfg.output_dir,
        "fix_sigma2": str(cfg.fix_sigma2).lower(),
        "marginalized": str(cfg.marginalized).lower(),
        "kernel": kind.tag,
        "prior_only": str(kind.prior_only).lower(),
        "row_order": kind.row_order,
        "a1": repr(hp.a1),
        "b1": repr(hp.b1),
        "a2": repr(hp.a2),
        "b2": repr(hp.b2),
        "m_prior_a": repr(hp.m_prior_a),
        "m_prior_b": repr(hp.m_prior_b),
        "alpha": repr(hp.alpha),
    }
    if sim is not None:
        out["n"] = str(sim.n)
        out["true_beta"] = ",".join(repr(float(v)) for v in sim.true_beta)
        out["true_sigma2"] = repr(sim.true_sigma2)
        out["true_tau2"] = repr(sim.true_tau2)
        if sim.k_true is not None:
            out["k_true"] = str(sim.k_true)
        if sim.m_true is not None:
            out["m_true"] = repr(sim.m_true)
        out["intercept"] = str(sim.intercept).lower()
        out["binary"] = str(sim.binary).lower()
    if meta:
        out.update({k: str(v) for k, v in meta.items()})
    return out
