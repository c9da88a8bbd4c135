"""Counterfactual means and the reform decomposition built from them.

Every estimand is a signed sum of seven counterfactual means, each a
reweighted mean outcome of one observed cell moved to a target population:

===============  ===========================================================
key              meaning
===============  ===========================================================
``11``           post-reform treated, own distribution
``11<-01``       post-reform non-treated, moved to post-reform treated
``10``           pre-reform treated, own distribution
``10<-00``       pre-reform non-treated, moved to pre-reform treated
``11<-10``       pre-reform treated, moved to post-reform treated
``11<-00``       pre-reform non-treated, moved to post-reform treated
``11<-10|med``   as ``11<-10`` but also balancing the mediator columns
===============  ===========================================================

With these::

    att_post  = 11 - 11<-01
    att_pre   = 10 - 10<-00
    overall   = att_post - att_pre
    selection = (11<-10 - 11<-00) - att_pre
    time_bc0  = 11<-01 - 11<-00          (time_bc1 equals it by common trends)
    policy    = overall - selection - (time_bc1 - time_bc0)
    direct    = overall - selection_med - (time_bc1 - time_bc0)
    indirect  = policy - direct

where ``selection_med`` uses ``11<-10|med``. All terms of one decomposition
share the same propensity fits, so the identities hold to rounding.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace

import numpy as np

from .data import (
    CONTROL_POST,
    CONTROL_PRE,
    TREATED_POST,
    TREATED_PRE,
    Dataset,
    GroupKey,
    check_mediator_overlap,
)
from .reweight import (
    Estimator,
    TiltedFit,
    WeightVector,
    ast_tilt,
    ast_weights,
    fit_pair_propensity,
    ipw_weights,
    weighted_outcome_mean,
)

DECOMPOSITION_ESTIMANDS = (
    "att_pre",
    "att_post",
    "overall_reform",
    "selection",
    "time_bc0",
    "time_bc1",
    "policy",
)
MEDIATION_ESTIMANDS = ("direct", "indirect")
ALL_ESTIMANDS = DECOMPOSITION_ESTIMANDS + MEDIATION_ESTIMANDS

# key -> (target, source, pool partner, mediator)
COUNTERFACTUALS = {
    "11": (TREATED_POST, TREATED_POST, CONTROL_POST, False),
    "11<-01": (TREATED_POST, CONTROL_POST, CONTROL_POST, False),
    "10": (TREATED_PRE, TREATED_PRE, CONTROL_PRE, False),
    "10<-00": (TREATED_PRE, CONTROL_PRE, CONTROL_PRE, False),
    "11<-10": (TREATED_POST, TREATED_PRE, TREATED_PRE, False),
    "11<-00": (TREATED_POST, CONTROL_PRE, CONTROL_PRE, False),
    "11<-10|med": (TREATED_POST, TREATED_PRE, TREATED_PRE, True),
}
REQUIRED_MEANS = {
    "att_pre": ("10", "10<-00"),
    "att_post": ("11", "11<-01"),
    "overall_reform": ("11", "11<-01", "10", "10<-00"),
    "selection": ("11<-10", "11<-00", "10", "10<-00"),
    "time_bc0": ("11<-01", "11<-00"),
    "time_bc1": ("11<-01", "11<-00"),
    "policy": ("11", "11<-01", "10", "10<-00", "11<-10", "11<-00"),
    "direct": ("11", "11<-01", "10", "10<-00", "11<-10|med", "11<-00"),
    "indirect": ("11", "11<-01", "10", "10<-00", "11<-10", "11<-10|med", "11<-00"),
}


@dataclass(frozen=True, eq=False)
class EffectSeries:
    """Monthly point estimates of one estimand with optional bootstrap bands.

    Percentile bands are not forced to contain ``point``; they are the
    replicate quantiles as computed.
    """

    estimand: str
    point: np.ndarray
    estimator: Estimator
    ci_low: np.ndarray | None = None
    ci_high: np.ndarray | None = None
    p_values: np.ndarray | None = None
    se: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def H(self) -> int:
        return len(self.point)

    def with_inference(self, ci_low, ci_high, p_values, se=None, **meta) -> "EffectSeries":
        return replace(self, ci_low=np.asarray(ci_low), ci_high=np.asarray(ci_high),
                       p_values=np.asarray(p_values),
                       se=None if se is None else np.asarray(se),
                       meta={**self.meta, **meta})

    def to_dict(self) -> dict:
        opt = lambda a: None if a is None else [float(x) for x in a]
        return {
            "estimand": self.estimand,
            "estimator": Estimator.parse(self.estimator).value,
            "months": list(range(self.H)),
            "point": opt(self.point),
            "ci_low": opt(self.ci_low),
            "ci_high": opt(self.ci_high),
            "p_values": opt(self.p_values),
            "se": opt(self.se),
            "meta": self.meta,
        }

    def rows(self):
        for h in range(self.H):
            yield (
                self.estimand,
                h,
                float(self.point[h]),
                None if self.ci_low is None else float(self.ci_low[h]),
                None if self.ci_high is None else float(self.ci_high[h]),
                None if self.p_values is None else float(self.p_values[h]),
            )


TIDY_HEADER = ("estimand", "month", "point", "ci_low", "ci_high", "p")


def series_to_csv(series, path=None) -> str:
    """Tidy CSV with one row per estimand and month; empty cells when no bands."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TIDY_HEADER)
    for s in (series.values() if isinstance(series, dict) else series):
        for row in s.rows():
            writer.writerow(["" if v is None else (repr(v) if isinstance(v, float) else v)
                             for v in row])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text


def combine_means(means: dict, estimands=ALL_ESTIMANDS) -> dict:
    """Assemble estimands from counterfactual means (pure arithmetic)."""
    out: dict = {}
    need = set(estimands)
    m = means
    if need & {"att_post", "overall_reform", "policy", "direct", "indirect"}:
        out["att_post"] = m["11"] - m["11<-01"]
    if need & {"att_pre", "overall_reform", "selection", "policy", "direct", "indirect"}:
        out["att_pre"] = m["10"] - m["10<-00"]
    if need & {"overall_reform", "policy", "direct", "indirect"}:
        out["overall_reform"] = out["att_post"] - out["att_pre"]
    if need & {"selection", "policy", "indirect"}:
        out["selection"] = (m["11<-10"] - m["11<-00"]) - out["att_pre"]
    if need & {"time_bc0", "time_bc1", "policy", "direct", "indirect"}:
        if "11<-01" in m:
            out["time_bc0"] = m["11<-01"] - m["11<-00"]
            out["time_bc1"] = out["time_bc0"]
    if need & {"policy", "indirect"}:
        out["policy"] = out["overall_reform"] - out["selection"] - (out["time_bc1"] - out["time_bc0"])
    if need & {"direct", "indirect"}:
        selection_med = (m["11<-10|med"] - m["11<-00"]) - out["att_pre"]
        out["direct"] = out["overall_reform"] - selection_med - (out["time_bc1"] - out["time_bc0"])
    if "indirect" in need:
        out["indirect"] = out["policy"] - out["direct"]
    return {k: out[k] for k in estimands}


class ReformDecomposition:
    """Counterfactual means of one dataset under one estimator.

    Propensity fits, tilts and weight vectors are computed lazily and cached
    per cell pair, so every estimand drawn from one instance uses the same
    fits.

    Parameters
    ----------
    ds : Dataset
    estimator : {"ast", "ipw"}
    warm_start : dict, optional
        Coefficients keyed like :attr:`coefficients` of another instance
        (typically the full-sample fit when bootstrapping).
    """

    def __init__(self, ds: Dataset, estimator="ast", warm_start: dict | None = None):
        self.ds = ds
        self.estimator = Estimator.parse(estimator)
        self.warm_start = warm_start or {}
        self.fits: dict = {}
        self.tilts: dict[str, TiltedFit] = {}
        self.weights: dict[str, WeightVector] = {}
        self.means: dict[str, np.ndarray] = {}

    def _fit(self, target: GroupKey, partner: GroupKey, mediator: bool):
        key = f"{target.label}|{partner.label}" + ("|med" if mediator else "")
        if key not in self.fits:
            if mediator:
                check_mediator_overlap(self.ds, target, partner)
            self.fits[key] = fit_pair_propensity(
                self.ds, target, partner, include_mediator=mediator,
                start=self.warm_start.get(("probit", key)),
            )
        return key, self.fits[key]

    def weight_vector(self, name: str) -> WeightVector:
        if name in self.weights:
            return self.weights[name]
        target, source, partner, mediator = COUNTERFACTUALS[name]
        if self.estimator is Estimator.IPW:
            if source == target:
                wv = ipw_weights(self.ds, target, source)
            else:
                _, fit = self._fit(target, partner, mediator)
                wv = ipw_weights(self.ds, target, source, fit)
        else:
            key, fit = self._fit(target, partner, mediator)
            tilt = ast_tilt(self.ds, target, source, fit,
                            start=self.warm_start.get(("tilt", name)))
            self.tilts[name] = tilt
            wv = ast_weights(self.ds, target, source, tilt)
        self.weights[name] = wv
        return wv

    def mean(self, name: str) -> np.ndarray:
        if name not in self.means:
            self.means[name] = weighted_outcome_mean(self.ds, self.weight_vector(name))
        return self.means[name]

    def estimands(self, names=DECOMPOSITION_ESTIMANDS) -> dict:
        needed = sorted({k for n in names for k in REQUIRED_MEANS[n]})
        means = {k: self.mean(k) for k in needed}
        return combine_means(means, names)

    def series(self, names=DECOMPOSITION_ESTIMANDS) -> dict:
        values = self.estimands(names)
        meta = self.provenance()
        out = {}
        for n in names:
            m = dict(meta)
            if n == "time_bc1":
                m["note"] = "equal to time_bc0 by the common-trend assumption"
            out[n] = EffectSeries(n, values[n], self.estimator, meta=m)
        return out

    @property
    def coefficients(self) -> dict:
        out = {("probit", k): f.coefficients for k, f in self.fits.items()}
        out.update({("tilt", k): t.tilted_coefficients for k, t in self.tilts.items()})
        return out

    def provenance(self) -> dict:
        return {
            "estimator": self.estimator.value,
            "weights": {
                name: {"target": wv.target_group.label, "source": wv.source_group.label,
                       "pool": "|".join((COUNTERFACTUALS[name][0].label,
                                         COUNTERFACTUALS[name][2].label)),
                       "mediator_moments": COUNTERFACTUALS[name][3]}
                for name, wv in self.weights.items()
            },
        }

    def max_balance_residual(self) -> float:
        if not self.tilts:
            return 0.0
        return max(t.max_residual for t in self.tilts.values())


@dataclass(frozen=True)
class DecompositionPipeline:
    """Picklable callable mapping a dataset to estimand arrays.

    Used by the bootstrap: each call re-fits every propensity and tilt,
    warm-started from ``warm_start``.
    """

    estimator: str = "ast"
    estimands: tuple = DECOMPOSITION_ESTIMANDS
    warm_start: dict | None = None

    def __call__(self, ds: Dataset) -> dict:
        return ReformDecomposition(ds, self.estimator, self.warm_start).estimands(self.estimands)


def decompose(ds: Dataset, estimator="ast", estimands=DECOMPOSITION_ESTIMANDS) -> dict:
    """Point estimates of the decomposition as :class:`EffectSeries`."""
    return ReformDecomposition(ds, estimator).series(tuple(estimands))


def _single(ds, estimator, name) -> EffectSeries:
    return decompose(ds, estimator, (name,))[name]


def att_pre(ds: Dataset, estimator="ast") -> EffectSeries:
    return _single(ds, estimator, "att_pre")


def att_post(ds: Dataset, estimator="ast") -> EffectSeries:
    return _single(ds, estimator, "att_post")


def overall_reform(ds: Dataset, estimator="ast") -> EffectSeries:
    return _single(ds, estimator, "overall_reform")


def selection_effect(ds: Dataset, estimator="ast") -> EffectSeries:
    return _single(ds, estimator, "selection")


def time_effect(ds: Dataset, estimator="ast") -> EffectSeries:
    return _single(ds, estimator, "time_bc0")


def policy_effect(ds: Dataset, estimator="ast") -> EffectSeries:
    return _single(ds, estimator, "policy")
