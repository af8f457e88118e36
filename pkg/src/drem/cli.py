"""Command-line entry points.

Every run echoes its full configuration (flat key=value, defaults
included) next to its outputs; re-running the same subcommand with
``--config <echo>`` and no other flags reproduces the outputs exactly.
Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure (non-finite results).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from drem.config import ConfigError, config_from_mapping, mapping_from_objects
from drem.data_io import (
    DataFormatError,
    load_archive_csv,
    load_binary_dataset,
    load_dataset,
    parse_config_file,
    write_config_file,
)
from drem.experiments import (
    child_rng,
    geweke_z,
    run_fig3_study,
    run_table1_study,
    run_table2_study,
    simulate_dataset,
)
from drem.linear_model import ModelParams
from drem.precision import coefficients_for_dataset, estimation_report
from drem.samplers import KernelKind, cumulative_mean_variance, run_chain

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4


class NumericalError(RuntimeError):
    """A run produced non-finite results."""


def _load_settings(args, command):
    mapping = {}
    if args.config:
        try:
            mapping = parse_config_file(args.config)
        except (OSError, DataFormatError) as err:
            raise ConfigError(f"config file: {err}") from None
    if args.seed is not None:
        mapping["seed"] = str(args.seed)
    if args.out is not None:
        mapping["output_dir"] = args.out
    if getattr(args, "data", None):
        mapping["data"] = args.data
    mapping["command"] = command
    return config_from_mapping(mapping), mapping


def _outdir(cfg):
    os.makedirs(cfg.output_dir, exist_ok=True)
    return cfg.output_dir


def _write_echo(settings, path):
    echo = mapping_from_objects(
        settings["config"],
        settings["hyperpriors"],
        settings["kernel"],
        settings["simulation"],
        settings["meta"],
    )
    write_config_file(echo, path)


def _check_finite(archive):
    bad = not np.all(np.isfinite(archive.k))
    for arr in (archive.beta, archive.sigma2, archive.tau2):
        if arr is not None:
            bad = bad or not np.all(np.isfinite(arr))
    if bad:
        raise NumericalError("chain produced non-finite values")


def _json_ready(obj):
    if isinstance(obj, dict):
        return {str(k): _json_ready(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_ready(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_json_ready(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return None if not np.isfinite(v) else v
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _cmd_simulate(args):
    settings, _ = _load_settings(args, "simulate")
    cfg, sim = settings["config"], settings["simulation"]
    if sim is None:
        raise ConfigError("simulate needs simulation settings (n, true_beta, ...)")
    out = _outdir(cfg)
    rng = child_rng(cfg.seed, "simulate", 0, 0)
    data, truth = simulate_dataset(sim, rng)
    data_path = os.path.join(out, f"sim_data_seed{cfg.seed}.csv")
    with open(data_path, "w") as fh:
        cols = ["y"] + [f"x{j + 1}" for j in range(data.X.shape[1])]
        fh.write(",".join(cols) + "\n")
        for i in range(data.n):
            row = [f"{data.y[i]:.17g}"] + [f"{v:.17g}" for v in data.X[i]]
            fh.write(",".join(row) + "\n")
    truth_path = os.path.join(out, f"sim_truth_seed{cfg.seed}.json")
    with open(truth_path, "w") as fh:
        json.dump(
            {
                "partition": truth.serialize(),
                "k": truth.k,
                "sizes": list(truth.sizes),
            },
            fh,
            indent=2,
        )
    _write_echo(settings, os.path.join(out, f"echo_seed{cfg.seed}.cfg"))
    print(f"wrote {data_path}")
    return EXIT_OK


def _fit(args, model):
    settings, _ = _load_settings(args, f"fit-{model}")
    cfg, hp, kind = settings["config"], settings["hyperpriors"], settings["kernel"]
    meta = settings["meta"]
    if "data" not in meta:
        raise ConfigError("fit runs need --data (or data= in the config)")
    cfg.model = model
    d = load_binary_dataset(meta["data"]) if model == "probit" else load_dataset(
        meta["data"]
    )
    out = _outdir(cfg)
    archive = run_chain(cfg, d, hp, kind)
    _check_finite(archive)
    trace_path = os.path.join(out, f"trace_seed{cfg.seed}.csv")
    archive.write_csv(trace_path)
    kept = archive.retained()
    summary = {
        "beta_mean": kept.beta.mean(axis=0).tolist(),
        "beta_sd": kept.beta.std(axis=0, ddof=1).tolist(),
        "sigma2_mean": float(kept.sigma2.mean()),
        "tau2_mean": float(kept.tau2.mean()),
        "k_mean": float(kept.k.mean()),
        "m": archive.config_echo["m"],
        "retained": int(len(kept.k)),
    }
    with open(os.path.join(out, f"summary_seed{cfg.seed}.json"), "w") as fh:
        json.dump(_json_ready(summary), fh, indent=2)
    _write_echo(settings, os.path.join(out, f"echo_seed{cfg.seed}.cfg"))
    print(f"wrote {trace_path}")
    return EXIT_OK


def _cmd_estimate_m(args):
    settings, _ = _load_settings(args, "estimate-m")
    cfg, hp = settings["config"], settings["hyperpriors"]
    meta = settings["meta"]
    if "data" not in meta:
        raise ConfigError("estimate-m needs --data (or data= in the config)")
    d = load_dataset(meta["data"])
    out = _outdir(cfg)
    rng = child_rng(cfg.seed, "estimate", 0, 0)
    theta = ModelParams(
        beta=np.linalg.lstsq(d.X, d.y, rcond=None)[0], sigma2=1.0, tau2=1.0
    )
    coeffs = coefficients_for_dataset(d, theta, hp, rng)
    report = estimation_report(coeffs, hp, use_prior=cfg.m_policy != "profile_mle")
    path = os.path.join(out, f"m_estimate_seed{cfg.seed}.json")
    with open(path, "w") as fh:
        json.dump(_json_ready(report), fh, indent=2)
    _write_echo(settings, os.path.join(out, f"echo_seed{cfg.seed}.cfg"))
    print(f"wrote {path}")
    return EXIT_OK


def _cmd_compare(args):
    settings, _ = _load_settings(args, "compare-samplers")
    cfg, hp, kind = settings["config"], settings["hyperpriors"], settings["kernel"]
    meta = settings["meta"]
    if "data" not in meta:
        raise ConfigError("compare-samplers needs --data (or data= in the config)")
    d = load_dataset(meta["data"])
    out = _outdir(cfg)
    curves = {}
    for tag in ("drem_row_gibbs", "stickbreaking"):
        traces = []
        for chain in range(cfg.chains):
            seed = int(child_rng(cfg.seed, "compare", chain, 0).integers(2**63))
            archive = run_chain(cfg, d, hp, KernelKind(tag=tag), seed=seed)
            _check_finite(archive)
            traces.append(archive.k.astype(float))
        if cfg.chains < 2:
            raise ConfigError("compare-samplers needs chains >= 2")
        curves[tag] = cumulative_mean_variance(traces)
    path = os.path.join(out, f"sampler_comparison_seed{cfg.seed}.csv")
    with open(path, "w") as fh:
        fh.write("iteration,drem_row_gibbs,stickbreaking\n")
        for t in range(cfg.iterations):
            fh.write(
                f"{t + 1},{curves['drem_row_gibbs'][t]:.17g},"
                f"{curves['stickbreaking'][t]:.17g}\n"
            )
    _write_echo(settings, os.path.join(out, f"echo_seed{cfg.seed}.cfg"))
    print(f"wrote {path}")
    return EXIT_OK


def _cmd_table1(args):
    settings, _ = _load_settings(args, "table1")
    cfg = settings["config"]
    out = _outdir(cfg)
    if args.fast:
        result = run_table1_study(seed=cfg.seed, iterations=1200, burn_in=400)
    else:
        result = run_table1_study(seed=cfg.seed)
    path = os.path.join(out, f"table1_seed{cfg.seed}.json")
    with open(path, "w") as fh:
        json.dump(_json_ready(result), fh, indent=2)
    _write_echo(settings, os.path.join(out, f"echo_seed{cfg.seed}.cfg"))
    print(f"wrote {path}")
    return EXIT_OK


def _cmd_table2(args):
    settings, _ = _load_settings(args, "table2")
    cfg = settings["config"]
    out = _outdir(cfg)
    reps = 25 if args.fast else 100
    result = run_table2_study(seed=cfg.seed, replications=reps)
    path = os.path.join(out, f"table2_seed{cfg.seed}.json")
    with open(path, "w") as fh:
        json.dump(_json_ready(result), fh, indent=2)
    _write_echo(settings, os.path.join(out, f"echo_seed{cfg.seed}.cfg"))
    print(f"wrote {path}")
    return EXIT_OK


def _cmd_fig3(args):
    settings, _ = _load_settings(args, "fig3")
    cfg = settings["config"]
    out = _outdir(cfg)
    chains = 8 if args.fast else 20
    iterations = 200 if args.fast else 500
    result = run_fig3_study(seed=cfg.seed, chains=chains, iterations=iterations)
    path = os.path.join(out, f"fig3_seed{cfg.seed}.csv")
    with open(path, "w") as fh:
        fh.write("groups,kernel,iteration,variance\n")
        for g, curves in result["curves"].items():
            for tag, curve in curves.items():
                for t, v in enumerate(curve):
                    fh.write(f"{g},{tag},{t + 1},{v:.17g}\n")
    _write_echo(settings, os.path.join(out, f"echo_seed{cfg.seed}.cfg"))
    print(f"wrote {path}")
    return EXIT_OK


def _cmd_diagnose(args):
    settings, _ = _load_settings(args, "diagnose")
    cfg = settings["config"]
    out = _outdir(cfg)
    try:
        cols = load_archive_csv(args.archive)
    except OSError as err:
        raise DataFormatError(str(err)) from None
    traces = {
        name: vals
        for name, vals in cols.items()
        if name not in ("iteration", "sizes")
    }
    report = {"parameters": {}}
    for name, trace in traces.items():
        t = np.arange(1, len(trace) + 1)
        report["parameters"][name] = {
            "geweke_z": geweke_z(trace),
            "cumulative_mean": (np.cumsum(trace) / t).tolist(),
        }
    path = os.path.join(out, f"diagnostics_seed{cfg.seed}.json")
    with open(path, "w") as fh:
        json.dump(_json_ready(report), fh, indent=2)
    print(f"wrote {path}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="drem",
        description="Linear and probit mixed models with Dirichlet-process "
        "random effects",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, data=False, archive=False):
        p = sub.add_parser(name)
        p.add_argument("--config", help="flat key=value settings file")
        p.add_argument("--seed", type=int, help="override the seed")
        p.add_argument("--out", help="override the output directory")
        p.add_argument("--fast", action="store_true", help="reduced-size run")
        if data:
            p.add_argument("--data", help="delimited data file (y, then X)")
        if archive:
            p.add_argument("--archive", required=True, help="chain trace CSV")
        p.set_defaults(fn=fn)
        return p

    add("simulate", _cmd_simulate)
    add("fit-linear", lambda a: _fit(a, "linear"), data=True)
    add("fit-probit", lambda a: _fit(a, "probit"), data=True)
    add("estimate-m", _cmd_estimate_m, data=True)
    add("compare-samplers", _cmd_compare, data=True)
    add("table1", _cmd_table1)
    add("table2", _cmd_table2)
    add("fig3", _cmd_fig3)
    add("diagnose", _cmd_diagnose, archive=True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataFormatError, FileNotFoundError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
