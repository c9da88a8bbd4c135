"""Split the policy effect into a controlled direct and an indirect effect.

The direct effect replaces the pre-reform treated counterfactual of the
policy effect with one that also balances the programme-duration
composition (category dummies and within-category planned days) to the
post-reform treated. The indirect effect is the remainder, so the two add up
to the policy effect exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .data import (
    MEDIATOR_COLUMN_NAMES,
    PROGRAMME_TYPES,
    TREATED_POST,
    TREATED_PRE,
    Dataset,
    check_mediator_overlap,
    design_column_names,
    design_matrix,
)
from .effects import EffectSeries, ReformDecomposition
from .reweight import efficient_first_moments

MEDIATOR_KEY = "11<-10|med"


@dataclass(frozen=True, eq=False)
class MediationResult:
    direct: EffectSeries
    indirect: EffectSeries
    policy: EffectSeries
    mediator_balance: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "direct": self.direct.to_dict(),
            "indirect": self.indirect.to_dict(),
            "policy": self.policy.to_dict(),
            "mediator_balance": self.mediator_balance,
        }


def mediator_balance_report(dec: ReformDecomposition) -> dict:
    """Reweighted pre-reform treated moments against the efficient targets.

    For AST the residuals come from the tilt; for IPW they are computed
    directly and are not expected to vanish.
    """
    ds = dec.ds
    wv = dec.weight_vector(MEDIATOR_KEY)
    fit = dec.fits[f"{TREATED_POST.label}|{TREATED_PRE.label}|med"]
    target = efficient_first_moments(ds, fit).values
    src_rows = wv.support
    achieved = wv.weights[src_rows] @ design_matrix(ds, True, src_rows)
    names = design_column_names(ds, True)
    resid = achieved - target
    return {
        "columns": names,
        "efficient_moments": [float(v) for v in target],
        "reweighted_moments": [float(v) for v in achieved],
        "residuals": [float(v) for v in resid],
        "max_abs_residual": float(np.max(np.abs(resid))),
        "mediator_columns": list(MEDIATOR_COLUMN_NAMES),
        "converged": bool(dec.tilts[MEDIATOR_KEY].converged) if MEDIATOR_KEY in dec.tilts else None,
        "target_propensity": "probit on covariates and mediator columns, "
                             "pooled post- and pre-reform treated",
    }


def mediate(ds: Dataset, estimator="ast", decomposition: ReformDecomposition | None = None
            ) -> MediationResult:
    """Direct, indirect and policy effects from one shared set of fits."""
    check_mediator_overlap(ds)
    dec = decomposition or ReformDecomposition(ds, estimator)
    series = dec.series(("policy", "direct", "indirect"))
    return MediationResult(series["direct"], series["indirect"], series["policy"],
                           mediator_balance_report(dec))


def controlled_direct_effect(ds: Dataset, estimator="ast") -> EffectSeries:
    return mediate(ds, estimator).direct


def indirect_effect(policy: EffectSeries | MediationResult, direct: EffectSeries | None = None
                    ) -> EffectSeries:
    """``policy - direct`` elementwise."""
    if isinstance(policy, MediationResult):
        policy, direct = policy.policy, policy.direct
    if direct is None:
        raise ValueError("direct effect required")
    return EffectSeries("indirect", policy.point - direct.point, policy.estimator,
                        meta={"definition": "policy - direct"})


def mediator_composition_table(ds: Dataset) -> pd.DataFrame:
    """Counts, shares and mean planned/actual durations per period and programme type.

    Shares and means use inclusion weights; counts are unweighted.
    """
    rows = []
    has = ds.has_mediator
    for period, label in ((0, "pre"), (1, "post")):
        sel = has & (ds.d == 1) & (ds.t == period)
        total_w = ds.w[sel].sum()
        for ptype in PROGRAMME_TYPES:
            m = sel & (ds.programme_type == ptype) if ds.programme_type is not None else sel & False
            count = int(m.sum())
            if count == 0:
                rows.append((label, ptype, 0, 0.0, np.nan, np.nan))
                continue
            w = ds.w[m]
            rows.append((
                label, ptype, count, float(w.sum() / total_w),
                float(w @ ds.planned_days[m] / w.sum()),
                float(w @ ds.actual_days[m] / w.sum()),
            ))
    return pd.DataFrame(rows, columns=["period", "programme_type", "count", "share",
                                       "mean_planned_days", "mean_actual_days"])
