"""Command-line entry point: ``grsr simulate | fit | bench``.

Exit codes: 0 success, 2 configuration or input error, 3 numerical failure,
4 acceptance assertion failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from typing import Optional, Sequence

import jsonschema

from . import io as gio
from .bench import ASSERTION_KINDS, METHODS, ExperimentConfig, evaluate_assertion, run_experiment
from .covariance import CovarianceModel
from .errors import ConfigError, GRSRError, ShapeMismatch
from .gibbs import run_gibbs
from .model import HyperGrid, PriorSpec
from .sampler import hypothesis_test, run_grsr
from .simulate import SCENARIOS, scenario_config, simulate_dataset

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_ACCEPT = 0, 2, 3, 4

log = logging.getLogger("grsr")

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_int1 = {"type": "integer", "minimum": 1}
_seed = {"type": "integer", "minimum": 0}

GRID_SCHEMA = {
    "type": "object", "additionalProperties": False,
    "properties": {"tau2_min": _pos, "tau2_max": _pos, "K": _int1,
                   "gamma": {"type": "array", "items": _pos, "minItems": 1}},
}
PRIOR_SCHEMA = {"type": "object", "additionalProperties": False,
                "properties": {"alpha": _pos, "kappa": _pos}}
GIBBS_SCHEMA = {
    "type": "object", "additionalProperties": False,
    "properties": {"iters": _int1, "burn": {"type": "integer", "minimum": 0}, "thin": _int1},
}
COMMON = {"seed": _seed, "threads": _int1, "out": {"type": "string"}}

SIM_PROPS = {
    "scenario": {"enum": list(SCENARIOS)}, "n": {"type": "integer", "minimum": 2},
    "missing_frac": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
    "snr": _pos, "time_steps": _int1, "confounder_noise_sd": {"type": "number", "minimum": 0},
    "beta_true": {"type": "array", "items": _num, "minItems": 2, "maxItems": 2},
    "omega": _num, "gp_range": _pos,
}

SCHEMAS = {
    "simulate": {"type": "object", "additionalProperties": False,
                 "properties": {**SIM_PROPS, **COMMON}},
    "fit": {
        "type": "object", "additionalProperties": False,
        "properties": {
            "method": {"enum": ["grsr", "gibbs"]}, "data": {"type": "string"},
            "family": {"enum": ["bspline", "exponential"]}, "n_basis": {"type": "integer", "minimum": 4},
            "rho": {"type": "number", "minimum": 0}, "grid": GRID_SCHEMA, "prior": PRIOR_SCHEMA,
            "B": _int1, "a": _pos, "gibbs": GIBBS_SCHEMA, "emit_g": {"type": "boolean"}, **COMMON,
        },
    },
    "bench": {
        "type": "object", "additionalProperties": False,
        "properties": {
            "scenario": {"enum": list(SCENARIOS)}, "n_reps": _int1,
            "methods": {"type": "array", "items": {"enum": list(METHODS)}, "minItems": 1},
            "n_basis": {"type": "integer", "minimum": 4}, "rho": {"type": "number", "minimum": 0},
            "grid": GRID_SCHEMA, "prior": PRIOR_SCHEMA, "B": _int1, "a": _pos, "gibbs": GIBBS_SCHEMA,
            "sim": {"type": "object", "additionalProperties": False, "properties": SIM_PROPS},
            "assertions": {
                "type": "array",
                "items": {"type": "object", "required": ["kind"],
                          "properties": {"kind": {"enum": list(ASSERTION_KINDS)},
                                         "name": {"type": "string"}}},
            },
            **COMMON,
        },
    },
}


def load_config(path: Optional[str], command: str) -> dict:
    """Read and schema-check a JSON config; a missing path yields the defaults."""
    if path is None:
        cfg = {}
    else:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        cfg = gio.read_json(path)
    validate_config(cfg, command)
    return cfg


def validate_config(cfg: dict, command: str) -> None:
    try:
        jsonschema.validate(cfg, SCHEMAS[command])
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"invalid config at {where}: {exc.message}") from exc


def _prior(cfg: dict, family: str) -> PriorSpec:
    g = cfg.get("grid", {})
    gammas = g.get("gamma", [0.2] if family == "exponential" else [None])
    grid = HyperGrid.uniform(g.get("tau2_min", 0.01), g.get("tau2_max", 3.0), g.get("K", 1000),
                             gammas=tuple(gammas))
    p = cfg.get("prior", {})
    return PriorSpec(grid, p.get("alpha", 1.0), p.get("kappa", 1.0))


def _model(cfg: dict) -> CovarianceModel:
    family = cfg.get("family", "bspline")
    if family == "exponential":
        return CovarianceModel.exponential(cfg.get("rho", 0.0))
    return CovarianceModel.bspline(cfg.get("n_basis", 10), cfg.get("rho", 0.01))


def cmd_simulate(cfg: dict, out: str, seed: Optional[int]) -> int:
    keys = {k: v for k, v in cfg.items() if k in SIM_PROPS}
    if "beta_true" in keys:
        keys["beta_true"] = tuple(keys["beta_true"])
    scenario = keys.pop("scenario", "eq17")
    data, truth = simulate_dataset(scenario_config(scenario, **keys), seed)
    os.makedirs(out, exist_ok=True)
    gio.write_dataset_csv(os.path.join(out, "dataset.csv"), data)
    gio.write_truth_json(os.path.join(out, "truth.json"), truth)
    print(f"wrote {data.n_obs + data.n_miss} sites ({data.n_miss} missing) to {out}")
    return EXIT_OK


def cmd_fit(cfg: dict, out: str, seed: Optional[int], threads: int) -> int:
    if "data" not in cfg:
        raise ConfigError("fit needs a dataset path (--data or config key 'data')")
    if not os.path.exists(cfg["data"]):
        raise ConfigError(f"dataset not found: {cfg['data']}")
    try:
        data = gio.read_dataset_csv(cfg["data"])
    except ShapeMismatch as exc:
        raise ConfigError(f"cannot parse dataset {cfg['data']}: {exc}") from exc
    except ValueError as exc:
        if isinstance(exc, GRSRError):
            raise
        raise ConfigError(f"cannot parse dataset {cfg['data']}: {exc}") from exc
    model = _model(cfg)
    prior = _prior(cfg, cfg.get("family", "bspline"))
    method = cfg.get("method", "grsr")
    a = cfg.get("a", 0.25)
    if method == "grsr":
        res = run_grsr(data, model, prior, cfg.get("B", 100), a, seed, threads=threads)
        draws, seconds, test = res.draws, res.seconds, res.test
    else:
        gb = cfg.get("gibbs", {})
        res = run_gibbs(data, model, prior, gb.get("iters", 2000), gb.get("burn", 1000),
                        gb.get("thin", 10), seed)
        draws, seconds = res.draws, res.seconds
        test = hypothesis_test(draws.g, data.proj, a)
    os.makedirs(out, exist_ok=True)
    gio.write_draws_csv(os.path.join(out, "draws.csv"), draws)
    if cfg.get("emit_g", False):
        gio.write_g_csv(os.path.join(out, "g_draws.csv"), draws.g)
    summary = gio.summarize_draws(draws)
    summary.update(method=method, seconds=seconds,
                   test={"posterior_prob_h0": test.posterior_prob_h0, "decision": test.decision,
                         "half_width": test.half_width})
    gio.write_json(os.path.join(out, "summary.json"), summary)
    print(f"{method}: {len(draws)} draws in {seconds:.3f}s; test {test.decision} "
          f"(P(H0) = {test.posterior_prob_h0:.3f})")
    return EXIT_OK


def bench_config(cfg: dict, threads: int) -> ExperimentConfig:
    g = cfg.get("grid", {})
    p = cfg.get("prior", {})
    gb = cfg.get("gibbs", {})
    sim = dict(cfg.get("sim", {}))
    sim.pop("scenario", None)
    if "beta_true" in sim:
        sim["beta_true"] = tuple(sim["beta_true"])
    return ExperimentConfig(
        scenario=cfg.get("scenario", "eq17"), n_reps=cfg.get("n_reps", 100),
        methods=tuple(cfg.get("methods", METHODS)), B=cfg.get("B", 100),
        gibbs_iters=gb.get("iters", 2000), gibbs_burn=gb.get("burn", 1000), gibbs_thin=gb.get("thin", 10),
        n_basis=cfg.get("n_basis", 10), rho=cfg.get("rho", 0.01),
        tau2_min=g.get("tau2_min", 0.01), tau2_max=g.get("tau2_max", 3.0), K=g.get("K", 1000),
        alpha=p.get("alpha", 1.0), kappa=p.get("kappa", 1.0), a=cfg.get("a", 0.25),
        threads=threads, sim_overrides=sim,
    )


def cmd_bench(cfg: dict, out: str, seed: Optional[int], threads: int) -> int:
    report = run_experiment(bench_config(cfg, threads), seed)
    paths = gio.write_report(out, report)
    sys.stdout.write(report.to_text())
    failed = []
    for spec in cfg.get("assertions", []):
        try:
            ok, msg = evaluate_assertion(report, spec)
        except KeyError as exc:
            raise ConfigError(f"assertion {spec.get('name', spec['kind'])} missing field {exc}") from exc
        print(msg)
        if not ok:
            failed.append(spec.get("name", spec["kind"]))
    print("wrote " + ", ".join(paths))
    if failed:
        print("acceptance failures: " + ", ".join(failed), file=sys.stderr)
        return EXIT_ACCEPT
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="grsr", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, default_out):
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--out", default=None, help=f"output directory (default {default_out})")
        p.add_argument("--seed", type=int, default=None, help="root seed (overrides config)")
        p.add_argument("--threads", type=int, default=None,
                       help="worker threads (default: available cores)")
        p.add_argument("-v", "--verbose", action="store_true")

    common(sub.add_parser("simulate", help="simulate one dataset and its truth sidecar"), "simulate_out")
    fit = sub.add_parser("fit", help="fit the direct sampler or the Gibbs reference to a dataset")
    common(fit, "fit_out")
    fit.add_argument("--data", help="dataset CSV (overrides config)")
    fit.add_argument("--method", choices=["grsr", "gibbs"], help="overrides config")
    fit.add_argument("--emit-g", action="store_true", help="also write g draws to g_draws.csv")
    common(sub.add_parser("bench", help="run the simulation benchmark"), "bench_out")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.command)
        if args.command == "fit":
            if args.data:
                cfg["data"] = args.data
            if args.method:
                cfg["method"] = args.method
            if args.emit_g:
                cfg["emit_g"] = True
            validate_config(cfg, "fit")
        seed = args.seed if args.seed is not None else cfg.get("seed")
        threads = args.threads or cfg.get("threads") or os.cpu_count() or 1
        if threads < 1:
            raise ConfigError("--threads must be >= 1")
        out = args.out or cfg.get("out") or f"{args.command}_out"
        if args.command == "simulate":
            return cmd_simulate(cfg, out, seed)
        if args.command == "fit":
            return cmd_fit(cfg, out, seed, threads)
        return cmd_bench(cfg, out, seed, threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except GRSRError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
