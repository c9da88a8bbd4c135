"""Balance, overlap and pre-trend diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .data import (
    OBSERVABLE_CELLS,
    Dataset,
    design_column_names,
    design_matrix,
    group_mask,
)
from .effects import COUNTERFACTUALS, ReformDecomposition
from .probit import PropensityFit, average_marginal_effect, fit_probit

SD_CONVENTION = (
    "standardized differences use the weighted sample variance of the underlying "
    "variable (for central moment k, of (x - mean)^k), not the sampling variance "
    "of the moment"
)
ROSENBAUM_RUBIN_THRESHOLD = 20.0
MOMENTS = ("mean", "variance", "third_central", "fourth_central")


def standardized_difference(moment_a: float, var_a: float, moment_b: float, var_b: float
                            ) -> float:
    """``100 |a - b| / sqrt((var_a + var_b) / 2)``.

    Returns ``inf`` when both variances are zero and the moments differ, and
    0 when both variances are zero and the moments agree.
    """
    if var_a < 0 or var_b < 0:
        raise ValueError("variances must be non-negative")
    diff = abs(moment_a - moment_b)
    pooled = 0.5 * (var_a + var_b)
    if pooled == 0.0:
        return 0.0 if diff == 0.0 else math.inf
    return 100.0 * diff / math.sqrt(pooled)


def weighted_moments(x, weights) -> dict:
    """Mean and central moments 2-4 plus the variances used for their SDs."""
    x = np.asarray(x, dtype=float)
    w = np.asarray(weights, dtype=float)
    w = w / w.sum()
    mean = float(w @ x)
    dev = x - mean
    out = {"mean": mean, "var_mean": float(w @ dev ** 2)}
    for k, name in ((2, "variance"), (3, "third_central"), (4, "fourth_central")):
        pk = dev ** k
        mk = float(w @ pk)
        out[name] = mk
        out[f"var_{name}"] = float(w @ (pk - mk) ** 2)
    m2 = out["variance"]
    if m2 > 0:
        # Standardize on rescaled deviations so tiny spreads do not underflow.
        u = dev / np.max(np.abs(dev))
        u2 = float(w @ u ** 2)
        out["skewness"] = float(w @ u ** 3) / u2 ** 1.5
        out["kurtosis"] = float(w @ u ** 4) / u2 ** 2
    else:
        out["skewness"] = out["kurtosis"] = None
    out["constant"] = m2 == 0.0
    return out


def binary_moment_identity(p: float) -> dict:
    """Central moments of a 0/1 variable with mean ``p``."""
    q = p * (1.0 - p)
    return {"variance": q, "third_central": q * (1.0 - 2.0 * p),
            "fourth_central": q * (1.0 - 3.0 * p + 3.0 * p * p)}


def _sd(a: dict, b: dict, moment: str) -> float:
    var_key = "var_mean" if moment == "mean" else f"var_{moment}"
    return standardized_difference(a[moment], a[var_key], b[moment], b[var_key])


@dataclass(frozen=True, eq=False)
class BalanceReport:
    """Moment comparisons per covariate and cell pair plus a support summary.

    ``target`` values come from the efficient target distribution (pool rows
    weighted by inclusion weight times fitted target probability), so the
    first moments equal the efficient moments.
    """

    rows: list
    support: dict = field(default_factory=dict)
    pre_trends: list | None = None
    meta: dict = field(default_factory=dict)

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows)

    def max_weighted_mean_sd(self, comparison: str | None = None) -> float:
        vals = [r["sd_weighted"] for r in self.rows
                if r["moment"] == "mean" and (comparison is None or r["comparison"] == comparison)]
        return max(vals) if vals else 0.0

    def to_dict(self) -> dict:
        return {
            "rows": [{k: encode_number(v) for k, v in r.items()} for r in self.rows],
            "support": self.support,
            "pre_trends": self.pre_trends,
            "meta": self.meta,
        }


def encode_number(v):
    """Tag non-finite floats so that JSON stays standard."""
    if isinstance(v, float) and not math.isfinite(v):
        return "inf" if v > 0 else ("-inf" if v < 0 else "nan")
    return v


def higher_moment_report(X, target_weights, source_raw_weights, source_weights,
                         column_names, comparison: str = "", tol: float = 1e-10) -> list:
    """Rows comparing a target distribution with a source before and after weighting.

    Each argument weight vector runs over the rows of ``X``; zero weights
    exclude rows.
    """
    X = np.asarray(X, dtype=float)
    rows = []
    for j, name in enumerate(column_names):
        x = X[:, j]
        sel_t, sel_r, sel_s = (np.flatnonzero(w) for w in
                               (target_weights, source_raw_weights, source_weights))
        mt = weighted_moments(x[sel_t], target_weights[sel_t])
        mr = weighted_moments(x[sel_r], source_raw_weights[sel_r])
        ms = weighted_moments(x[sel_s], source_weights[sel_s])
        binary = bool(np.isin(x[np.concatenate([sel_t, sel_r])], (0.0, 1.0)).all())
        for moment in MOMENTS:
            row = {
                "comparison": comparison,
                "covariate": name,
                "moment": moment,
                "target": mt[moment],
                "source_raw": mr[moment],
                "source_weighted": ms[moment],
                "sd_raw": _sd(mt, mr, moment),
                "sd_weighted": _sd(mt, ms, moment),
                "binary": binary,
                "constant": bool(mt["constant"] or ms["constant"]),
            }
            if moment == "variance":
                row["skewness_target"] = mt["skewness"]
                row["skewness_source_weighted"] = ms["skewness"]
            if moment == "fourth_central":
                row["kurtosis_target"] = mt["kurtosis"]
                row["kurtosis_source_weighted"] = ms["kurtosis"]
            if binary and moment != "mean":
                # A 0/1 variable's central moments are functions of its mean.
                ident_t = binary_moment_identity(mt["mean"])[moment]
                ident_s = binary_moment_identity(ms["mean"])[moment]
                row["binary_identity_ok"] = bool(
                    abs(ident_t - mt[moment]) <= 1e-9 and abs(ident_s - ms[moment]) <= 1e-9)
                if abs(mt["mean"] - ms["mean"]) <= tol:
                    row["balanced_by_mean"] = bool(abs(mt[moment] - ms[moment]) <= 1e-8)
            rows.append(row)
    return rows


def _fit_pairs(dec: ReformDecomposition):
    for name, (target, source, partner, mediator) in COUNTERFACTUALS.items():
        if source == target or name not in dec.weights:
            continue
        key = f"{target.label}|{partner.label}" + ("|med" if mediator else "")
        fit = dec.fits.get(key)
        if fit is not None:
            yield name, target, source, mediator, fit


def balance_report(dec: ReformDecomposition, epsilon: float = 0.01) -> BalanceReport:
    """Balance of every fitted source-to-target reweighting in ``dec``."""
    ds = dec.ds
    rows: list = []
    for name, target, source, mediator, fit in _fit_pairs(dec):
        pool = fit.rows
        M = design_matrix(ds, mediator, pool)
        names = design_column_names(ds, mediator)[1:]
        tw = ds.w[pool] * fit.fitted_probabilities
        src = group_mask(ds, source)[pool]
        raw = np.where(src, ds.w[pool], 0.0)
        sw = dec.weights[name].weights[pool]
        rows.extend(higher_moment_report(M[:, 1:], tw / tw.sum(), raw / raw.sum(), sw,
                                         names, comparison=name))
    fits = {k: f for k, f in dec.fits.items()}
    return BalanceReport(
        rows=rows,
        support=support_check(fits, epsilon=epsilon),
        meta={
            "estimator": dec.estimator.value,
            "sd_convention": SD_CONVENTION,
            "higher_moments": "unstandardized weighted central moments; skewness and "
                              "kurtosis reported alongside",
            "rosenbaum_rubin_threshold": ROSENBAUM_RUBIN_THRESHOLD,
            "threshold_enforced": False,
            "max_first_moment_sd": max((r["sd_weighted"] for r in rows if r["moment"] == "mean"),
                                       default=0.0),
        },
    )


def support_check(fits, epsilon: float = 0.01, epsilons=(0.01, 0.001)) -> dict:
    """Counts of fitted propensities outside ``[eps, 1 - eps]``.

    ``fits`` maps labels to :class:`PropensityFit` objects or probability arrays.
    The overall verdict uses ``epsilon``.
    """
    if isinstance(fits, (PropensityFit, np.ndarray, list)):
        fits = {"fit": fits}
    grid = sorted(set(epsilons) | {epsilon}, reverse=True)
    cells = {}
    passed = True
    for label, fit in fits.items():
        p = np.asarray(fit.fitted_probabilities if isinstance(fit, PropensityFit) else fit,
                       dtype=float)
        entry = {"n": int(p.size), "min": float(p.min()), "max": float(p.max()), "by_epsilon": {}}
        for eps in grid:
            below = int((p < eps).sum())
            above = int((p > 1.0 - eps).sum())
            entry["by_epsilon"][repr(eps)] = {"below": below, "above": above,
                                              "flagged": below + above}
        flagged = entry["by_epsilon"][repr(epsilon)]["flagged"]
        entry["pass"] = flagged == 0
        passed &= entry["pass"]
        cells[str(label)] = entry
    return {"epsilon": epsilon, "pass": bool(passed), "fits": cells}


def pre_trend_series(ds: Dataset, weights=None) -> pd.DataFrame:
    """Weighted mean pre-period outcome per cell and history month.

    Parameters
    ----------
    ds : Dataset
        Must carry ``history`` columns, oldest month first.
    weights : array, optional
        Row weights replacing the inclusion weights.
    """
    if ds.history is None:
        raise ValueError("dataset has no pre-period outcome history")
    w = ds.w if weights is None else np.asarray(weights, dtype=float)
    out = []
    for g in OBSERVABLE_CELLS:
        m = group_mask(ds, g)
        if not m.any():
            continue
        means = w[m] @ ds.history[m] / w[m].sum()
        for lag, v in enumerate(means):
            out.append({"group": g.label, "month": lag, "mean": float(v), "n": int(m.sum())})
    return pd.DataFrame(out, columns=["group", "month", "mean", "n"])


def dropout_marginal_effect(ds: Dataset, threshold: float = 0.8) -> dict:
    """Probit of dropout on covariates and a post-reform dummy among the treated.

    Dropout means completing less than ``threshold`` of the planned duration.
    Returns the average marginal effect of the post-reform dummy.
    """
    rows = np.flatnonzero((ds.d == 1) & ds.has_mediator)
    y = (ds.actual_days[rows] < threshold * ds.planned_days[rows]).astype(float)
    X = np.column_stack([design_matrix(ds, rows=rows), ds.t[rows].astype(float)])
    names = design_column_names(ds) + ["post_reform"]
    fit = fit_probit(X, y, ds.w[rows], column_names=names)
    ame = average_marginal_effect(fit, X, X.shape[1] - 1, ds.w[rows])
    return {
        "ame_post_reform": ame,
        "dropout_rate_pre": float(y[ds.t[rows] == 0].mean()),
        "dropout_rate_post": float(y[ds.t[rows] == 1].mean()),
        "fit": fit.to_dict(),
    }


__all__ = [
    "BalanceReport",
    "balance_report",
    "binary_moment_identity",
    "dropout_marginal_effect",
    "higher_moment_report",
    "pre_trend_series",
    "standardized_difference",
    "support_check",
    "weighted_moments",
]
