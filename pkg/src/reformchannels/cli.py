"""Command-line interface: ``simulate``, ``decompose``, ``mediate`` and ``balance``.

Settings resolve as command-line flag, then environment variable, then
default. Environment variables are ``REFORMCHANNELS_<NAME>`` for ESTIMATOR,
REPS, SEED, LEVEL, THREADS, EPSILON and MEDIATOR.

On failure a single JSON line ``{"error", "message", "exit_code"}`` goes to
stderr and the process exits with the code listed in :data:`EXIT_CODES`.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import schemas
from .data import Dataset, load_dataset, write_dataset
from .dgp import VIOLATIONS, DgpConfig, null_config, oracle_assumption_violation, simulate
from .effects import (
    ALL_ESTIMANDS,
    DECOMPOSITION_ESTIMANDS,
    DecompositionPipeline,
    ReformDecomposition,
    series_to_csv,
)
from .errors import (
    EstimationError,
    GroupError,
    InferenceDegradedError,
    LoadError,
    MediatorError,
)
from .inference import BootstrapConfig, bootstrap
from .reweight import Estimator

ENV_PREFIX = "REFORMCHANNELS_"
DEFAULTS = {
    "estimator": "ast",
    "reps": 0,
    "seed": 0,
    "level": 0.95,
    "threads": 1,
    "epsilon": 0.01,
    "mediator": False,
}
EXIT_CODES = {"ok": 0, "config": 2, "io": 3, "estimation": 4, "inference": 5}


class ConfigError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _bool(value: str) -> bool:
    v = str(value).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off", ""):
        return False
    raise ConfigError(f"cannot interpret {value!r} as a boolean")


_CASTS = {"estimator": str, "reps": int, "seed": int, "level": float, "threads": int,
          "epsilon": float, "mediator": _bool}


def resolve(name: str, flag_value, environ=None):
    """Flag value if given, else environment override, else default."""
    environ = os.environ if environ is None else environ
    if flag_value is not None:
        return flag_value
    raw = environ.get(ENV_PREFIX + name.upper())
    if raw is not None:
        try:
            return _CASTS[name](raw)
        except ValueError as exc:
            raise ConfigError(f"invalid value for {ENV_PREFIX}{name.upper()}: {raw!r}") from exc
    return DEFAULTS[name]


@dataclass(frozen=True)
class RunConfig:
    input: Path | None
    out: Path
    estimator: str
    reps: int
    seed: int
    level: float
    threads: int
    epsilon: float
    mediator: bool
    covariates: tuple | None = None
    exclude: tuple = ()
    stratify: bool = False
    dump_fits: bool = False
    dump_weights: bool = False

    def validate(self) -> None:
        Estimator.parse(self.estimator)
        if self.reps < 0 or self.reps == 1:
            raise ConfigError("--reps must be 0 (no bootstrap) or at least 2")
        if not 0 < self.level < 1:
            raise ConfigError("--level must lie in (0, 1)")
        if self.threads < 1:
            raise ConfigError("--threads must be positive")
        if not 0 < self.epsilon < 0.5:
            raise ConfigError("--epsilon must lie in (0, 0.5)")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("--seed must be a 64-bit unsigned integer")
        overlap = set(self.covariates or ()) & set(self.exclude)
        if overlap:
            raise ConfigError(f"covariates both included and excluded: {sorted(overlap)}")

    def to_dict(self) -> dict:
        return {
            "input": None if self.input is None else str(self.input),
            "estimator": self.estimator,
            "reps": self.reps,
            "seed": self.seed,
            "level": self.level,
            "threads": self.threads,
            "epsilon": self.epsilon,
            "mediator": self.mediator,
            "covariates": None if self.covariates is None else list(self.covariates),
            "exclude": list(self.exclude),
            "stratify": self.stratify,
        }


def _csv_list(value):
    return tuple(v.strip() for v in value.split(",") if v.strip())


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="reformchannels",
                     description="Reform decomposition and mediation with IPW/AST reweighting.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sim = sub.add_parser("simulate", help="draw a synthetic dataset with its truth")
    sim.add_argument("--n", type=int, default=5000)
    sim.add_argument("--seed", type=int, default=None)
    sim.add_argument("--out", type=Path, required=True)
    sim.add_argument("--horizon", type=int, default=88)
    sim.add_argument("--null", action="store_true", help="switch off all structural effects")
    sim.add_argument("--control-rate", type=float, default=1.0)
    sim.add_argument("--history", type=int, default=0, help="pre-period months to emit")
    sim.add_argument("--binary-outcome", action="store_true")
    sim.add_argument("--violation", choices=VIOLATIONS, default=None)
    sim.add_argument("--magnitude", type=float, default=0.02)
    sim.add_argument("--format", choices=("wide", "long"), default="wide")

    for name, helptext in (("decompose", "selection/time/policy decomposition"),
                           ("mediate", "controlled direct and indirect effects"),
                           ("balance", "balance, support and pre-trend diagnostics")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--input", type=Path, required=True)
        p.add_argument("--out", type=Path, required=True)
        p.add_argument("--format", choices=("wide", "long"), default=None)
        p.add_argument("--estimator", choices=("ast", "ipw"), default=None)
        p.add_argument("--reps", type=int, default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--level", type=float, default=None)
        p.add_argument("--threads", type=int, default=None)
        p.add_argument("--epsilon", type=float, default=None)
        p.add_argument("--mediator", action="store_const", const=True, default=None,
                       help="also estimate direct and indirect effects")
        p.add_argument("--covariates", type=_csv_list, default=None,
                       help="comma-separated covariates to keep")
        p.add_argument("--exclude", type=_csv_list, default=(),
                       help="comma-separated covariates to drop")
        p.add_argument("--stratify", action="store_true",
                       help="resample within cells in the bootstrap")
        p.add_argument("--dump-fits", action="store_true")
        p.add_argument("--dump-weights", action="store_true")
    return parser


def _run_config(args, environ=None) -> RunConfig:
    cfg = RunConfig(
        input=args.input,
        out=args.out,
        estimator=Estimator.parse(resolve("estimator", args.estimator, environ)).value,
        reps=resolve("reps", args.reps, environ),
        seed=resolve("seed", args.seed, environ),
        level=resolve("level", args.level, environ),
        threads=resolve("threads", args.threads, environ),
        epsilon=resolve("epsilon", args.epsilon, environ),
        mediator=resolve("mediator", args.mediator, environ),
        covariates=args.covariates,
        exclude=tuple(args.exclude),
        stratify=args.stratify,
        dump_fits=args.dump_fits,
        dump_weights=args.dump_weights,
    )
    cfg.validate()
    return cfg


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def _prepare_out(path: Path) -> Path:
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {path}: {exc}") from exc
    if not os.access(path, os.W_OK):
        raise OSError(f"output directory {path} is not writable")
    return path


def _load(cfg: RunConfig, fmt) -> Dataset:
    ds = load_dataset(cfg.input, fmt)
    names = list(ds.covariate_names)
    if cfg.covariates is not None:
        unknown = set(cfg.covariates) - set(names)
        if unknown:
            raise ConfigError(f"unknown covariates {sorted(unknown)}")
        names = [n for n in names if n in cfg.covariates]
    names = [n for n in names if n not in cfg.exclude]
    if tuple(names) != ds.covariate_names:
        ds = ds.select_covariates(names)
    return ds


def _bootstrap_info(cfg: RunConfig, result) -> dict | None:
    if result is None:
        return None
    return {
        "replications": cfg.reps,
        "seed": cfg.seed,
        "confidence_level": cfg.level,
        "dropped": result.dropped,
        "ci_method": "percentile",
        "resampling": "stratified by cell" if cfg.stratify else "individual",
    }


def _estimate(ds: Dataset, cfg: RunConfig, estimands):
    dec = ReformDecomposition(ds, cfg.estimator)
    point = dec.estimands(estimands)
    series = dec.series(estimands)
    result = None
    if cfg.reps >= 2:
        pipeline = DecompositionPipeline(cfg.estimator, tuple(estimands), dec.coefficients)
        bcfg = BootstrapConfig(replications=cfg.reps, seed=cfg.seed,
                               confidence_level=cfg.level, workers=cfg.threads,
                               stratify=cfg.stratify)
        result = bootstrap(ds, pipeline, bcfg, point=point, estimator=cfg.estimator)
        for name, s in series.items():
            b = result.series[name]
            series[name] = s.with_inference(b.ci_low, b.ci_high, b.p_values, b.se, **b.meta)
    return dec, series, result


def _identities(values: dict) -> dict:
    out = {}
    if {"policy", "overall_reform", "selection", "time_bc0", "time_bc1"} <= values.keys():
        resid = values["policy"] - (values["overall_reform"] - values["selection"]
                                    - (values["time_bc1"] - values["time_bc0"]))
        out["policy_decomposition_max_abs"] = float(np.max(np.abs(resid)))
    if {"direct", "indirect", "policy"} <= values.keys():
        resid = values["direct"] + values["indirect"] - values["policy"]
        out["mediation_additivity_max_abs"] = float(np.max(np.abs(resid)))
    return out


def _dump_extras(dec: ReformDecomposition, cfg: RunConfig) -> list[str]:
    written = []
    if cfg.dump_fits:
        _write_json(cfg.out / "fits.json", {
            "schema_version": schemas.SCHEMA_VERSION,
            "kind": "fits",
            "probits": {k: f.to_dict() for k, f in dec.fits.items()},
            "tilts": {k: t.to_dict() for k, t in dec.tilts.items()},
        })
        written.append("fits.json")
    if cfg.dump_weights:
        with open(cfg.out / "weights.csv", "w", encoding="utf-8") as fh:
            fh.write("counterfactual,id,weight\n")
            for name, wv in dec.weights.items():
                for i in wv.support:
                    fh.write(f"{name},{dec.ds.ids[i]},{float(wv.weights[i])!r}\n")
        written.append("weights.csv")
    return written


def cmd_simulate(args) -> list[str]:
    seed = resolve("seed", args.seed)
    base = null_config() if args.null else DgpConfig()
    cfg = base.replace(n=args.n, seed=seed, horizon=args.horizon,
                       control_sampling_rate=args.control_rate,
                       history_months=args.history, binary_outcome=args.binary_outcome)
    try:
        cfg.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    violation = None
    if args.violation:
        ds, truth, desc = oracle_assumption_violation(cfg, args.violation, args.magnitude)
        violation = desc.to_dict()
    else:
        ds, truth = simulate(cfg)
    out = _prepare_out(args.out)
    write_dataset(ds, out / "data.csv", args.format)
    config = cfg.to_dict()
    _write_json(out / "truth.json", {
        "schema_version": schemas.SCHEMA_VERSION,
        "kind": "truth",
        "horizon": truth.horizon,
        "estimands": {k: [float(x) for x in v] for k, v in truth.values.items()},
        "config": json.loads(json.dumps(config)),
        "violation": violation,
        "meta": truth.meta,
    })
    return ["data.csv", "truth.json"]


def cmd_decompose(args, environ=None) -> list[str]:
    cfg = _run_config(args, environ)
    ds = _load(cfg, args.format)
    estimands = ALL_ESTIMANDS if cfg.mediator else DECOMPOSITION_ESTIMANDS
    dec, series, result = _estimate(ds, cfg, estimands)
    out = _prepare_out(cfg.out)
    payload = {
        "schema_version": schemas.SCHEMA_VERSION,
        "kind": "effects",
        "estimator": cfg.estimator,
        "horizon": ds.H,
        "n_units": ds.N,
        "series": [series[n].to_dict() for n in estimands],
        "bootstrap": _bootstrap_info(cfg, result),
        "identities": _identities({n: s.point for n, s in series.items()}),
        "max_balance_residual": dec.max_balance_residual(),
        "run": cfg.to_dict(),
    }
    _write_json(out / "effects.json", payload)
    series_to_csv([series[n] for n in estimands], out / "effects.csv")
    return ["effects.json", "effects.csv"] + _dump_extras(dec, cfg)


def cmd_mediate(args, environ=None) -> list[str]:
    from .data import check_mediator_overlap
    from .mediation import mediator_balance_report, mediator_composition_table

    cfg = _run_config(args, environ)
    ds = _load(cfg, args.format)
    check_mediator_overlap(ds)
    estimands = ("policy", "direct", "indirect")
    dec, series, result = _estimate(ds, cfg, estimands)
    table = mediator_composition_table(ds)
    out = _prepare_out(cfg.out)
    comp_records = json.loads(table.to_json(orient="records"))
    payload = {
        "schema_version": schemas.SCHEMA_VERSION,
        "kind": "mediation",
        "estimator": cfg.estimator,
        "direct": series["direct"].to_dict(),
        "indirect": series["indirect"].to_dict(),
        "policy": series["policy"].to_dict(),
        "mediator_balance": mediator_balance_report(dec),
        "composition": comp_records,
        "bootstrap": _bootstrap_info(cfg, result),
        "run": cfg.to_dict(),
    }
    _write_json(out / "mediation.json", payload)
    series_to_csv([series[n] for n in estimands], out / "mediation.csv")
    table.to_csv(out / "composition.csv", index=False)
    return ["mediation.json", "mediation.csv", "composition.csv"] + _dump_extras(dec, cfg)


def cmd_balance(args, environ=None) -> list[str]:
    from .diagnostics import balance_report, pre_trend_series

    cfg = _run_config(args, environ)
    ds = _load(cfg, args.format)
    estimands = ALL_ESTIMANDS if cfg.mediator else DECOMPOSITION_ESTIMANDS
    dec = ReformDecomposition(ds, cfg.estimator)
    dec.estimands(estimands)
    report = balance_report(dec, epsilon=cfg.epsilon)
    out = _prepare_out(cfg.out)
    written = ["balance.json", "balance.csv"]
    pre = None
    if ds.history is not None:
        frame = pre_trend_series(ds)
        frame.to_csv(out / "pretrends.csv", index=False)
        pre = json.loads(frame.to_json(orient="records"))
        written.append("pretrends.csv")
    payload = {
        "schema_version": schemas.SCHEMA_VERSION,
        "kind": "balance",
        "estimator": cfg.estimator,
        **report.to_dict(),
        "pre_trends": pre,
        "run": cfg.to_dict(),
    }
    _write_json(out / "balance.json", payload)
    frame = report.frame()
    cols = ["comparison", "covariate", "moment", "target", "source_raw", "source_weighted",
            "sd_raw", "sd_weighted"]
    frame[cols].to_csv(out / "balance.csv", index=False, float_format="%.17g")
    return written + _dump_extras(dec, cfg)


COMMANDS = {"simulate": cmd_simulate, "decompose": cmd_decompose, "mediate": cmd_mediate,
            "balance": cmd_balance}


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, InferenceDegradedError):
        return EXIT_CODES["inference"]
    if isinstance(exc, (LoadError, OSError)):
        return EXIT_CODES["io"]
    if isinstance(exc, (EstimationError, GroupError, MediatorError)):
        return EXIT_CODES["estimation"]
    return EXIT_CODES["config"]


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        written = COMMANDS[args.command](args)
    except (ConfigError, ValueError, LoadError, OSError, EstimationError, GroupError,
            MediatorError, InferenceDegradedError) as exc:
        code = _exit_code(exc)
        message = " ".join(str(exc).split())
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": message,
                                     "exit_code": code}) + "\n")
        return code
    sys.stdout.write(json.dumps({"command": args.command, "out": str(args.out),
                                 "files": written}) + "\n")
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
