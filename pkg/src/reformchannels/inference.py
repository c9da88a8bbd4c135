"""Nonparametric bootstrap for estimand series.

Each replicate resamples individuals with replacement (keeping their
inclusion weights), re-fits every propensity model and tilt, and evaluates
the pipeline. Replicate ``b`` draws from its own child of
``SeedSequence(seed)``, so results do not depend on worker count or order.
"""

from __future__ import annotations

import concurrent.futures
import dataclasses
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .data import OBSERVABLE_CELLS, Dataset
from .effects import DecompositionPipeline, EffectSeries, ReformDecomposition
from .errors import InferenceDegradedError, ReformChannelsError
from .reweight import Estimator

RECOVERABLE = (ReformChannelsError, np.linalg.LinAlgError, ArithmeticError)


@dataclass(frozen=True)
class BootstrapConfig:
    replications: int = 499
    seed: int = 0
    confidence_level: float = 0.95
    resampling_unit: str = "individual"
    stratify: bool = False
    workers: int = 1
    max_drop_share: float = 0.10
    keep_draws: bool = False

    def __post_init__(self):
        if int(self.replications) < 2:
            raise ValueError("replications must be at least 2")
        if not 0.0 < self.confidence_level < 1.0:
            raise ValueError("confidence_level must lie in (0, 1)")
        if self.resampling_unit != "individual":
            raise ValueError("only individual resampling is supported")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.workers < 1:
            raise ValueError("workers must be positive")


@dataclass(frozen=True, eq=False)
class BootstrapResult:
    series: dict
    replications: int
    dropped: int
    failures: list = field(default_factory=list)
    draws: dict | None = None

    def __getitem__(self, name: str) -> EffectSeries:
        return self.series[name]


def resample_indices(ds: Dataset, seed_seq: np.random.SeedSequence,
                     stratify: bool = False) -> np.ndarray:
    rng = np.random.default_rng(seed_seq)
    if not stratify:
        return rng.integers(0, ds.N, ds.N)
    parts = []
    for g in OBSERVABLE_CELLS:
        rows = np.flatnonzero((ds.d == g.d) & (ds.t == g.t))
        if len(rows):
            parts.append(rows[rng.integers(0, len(rows), len(rows))])
    return np.sort(np.concatenate(parts))


def _replicate(ds: Dataset, pipeline: Callable, seed_seq, stratify: bool):
    idx = resample_indices(ds, seed_seq, stratify)
    try:
        return pipeline(ds.take(idx))
    except RECOVERABLE as exc:
        return f"{type(exc).__name__}: {exc}"


_WORKER_STATE: dict = {}


def _init_worker(ds, pipeline, stratify):
    _WORKER_STATE.update(ds=ds, pipeline=pipeline, stratify=stratify)


def _worker_replicate(seed_seq):
    s = _WORKER_STATE
    return _replicate(s["ds"], s["pipeline"], seed_seq, s["stratify"])


def percentile_interval(draws: np.ndarray, level: float) -> tuple[np.ndarray, np.ndarray]:
    alpha = 1.0 - level
    lo, hi = np.quantile(draws, [alpha / 2.0, 1.0 - alpha / 2.0], axis=0)
    return lo, hi


def bootstrap_p_value(draws: np.ndarray) -> np.ndarray:
    """Two-sided ``2 min((1 + #{<= 0}) / (B + 1), (1 + #{>= 0}) / (B + 1))``, capped at 1."""
    B = draws.shape[0]
    below = (1.0 + (draws <= 0).sum(axis=0)) / (B + 1.0)
    above = (1.0 + (draws >= 0).sum(axis=0)) / (B + 1.0)
    return np.minimum(1.0, 2.0 * np.minimum(below, above))


def bootstrap(ds: Dataset, pipeline: Callable | None = None,
              cfg: BootstrapConfig | None = None, point: dict | None = None,
              estimator=None) -> BootstrapResult:
    """Percentile confidence bands and p-values for every estimand of ``pipeline``.

    Parameters
    ----------
    pipeline : callable, optional
        Maps a dataset to ``{estimand: array}``; must be picklable when
        ``cfg.workers > 1``. Defaults to the AST decomposition.
    point : dict, optional
        Full-sample estimates; computed from ``pipeline`` when omitted.

    Raises
    ------
    InferenceDegradedError
        If more than ``cfg.max_drop_share`` of the replicates fail.
    """
    cfg = cfg or BootstrapConfig()
    pipeline = pipeline or DecompositionPipeline()
    if isinstance(pipeline, DecompositionPipeline) and pipeline.warm_start is None:
        dec = ReformDecomposition(ds, pipeline.estimator)
        full = dec.estimands(pipeline.estimands)
        point = point or full
        pipeline = dataclasses.replace(pipeline, warm_start=dec.coefficients)
    if point is None:
        point = pipeline(ds)
    if estimator is None:
        estimator = getattr(pipeline, "estimator", "ast")
    estimator = Estimator.parse(estimator)

    B = int(cfg.replications)
    seeds = np.random.SeedSequence(cfg.seed).spawn(B)
    if cfg.workers == 1:
        results = [_replicate(ds, pipeline, s, cfg.stratify) for s in seeds]
    else:
        with concurrent.futures.ProcessPoolExecutor(
            max_workers=cfg.workers, initializer=_init_worker,
            initargs=(ds, pipeline, cfg.stratify),
        ) as pool:
            results = list(pool.map(_worker_replicate, seeds,
                                    chunksize=max(1, B // (4 * cfg.workers))))

    failures = [(b, r) for b, r in enumerate(results) if isinstance(r, str)]
    good = [r for r in results if not isinstance(r, str)]
    dropped = len(failures)
    if dropped > cfg.max_drop_share * B or len(good) < 2:
        raise InferenceDegradedError(
            f"{dropped} of {B} bootstrap replicates failed "
            f"(first: {failures[0][1] if failures else 'n/a'})",
            dropped=dropped, replications=B,
        )

    level = cfg.confidence_level
    series = {}
    draws_out = {} if cfg.keep_draws else None
    for name, est in point.items():
        draws = np.stack([np.asarray(r[name], dtype=float) for r in good])
        lo, hi = percentile_interval(draws, level)
        meta = {
            "ci_method": "percentile",
            "confidence_level": level,
            "replications": B,
            "replications_used": len(good),
            "dropped_replications": dropped,
            "seed": int(cfg.seed),
            "resampling": "stratified by cell" if cfg.stratify else "individual",
        }
        series[name] = EffectSeries(
            name, np.asarray(est, dtype=float), estimator,
            ci_low=lo, ci_high=hi, p_values=bootstrap_p_value(draws),
            se=draws.std(axis=0, ddof=1), meta=meta,
        )
        if draws_out is not None:
            draws_out[name] = draws
    return BootstrapResult(series, B, dropped, [f"replicate {b}: {msg}" for b, msg in failures],
                           draws_out)
