"""Reform decomposition with IPW and exact-balance (AST) reweighting."""

from .data import (
    CONTROL_POST,
    CONTROL_PRE,
    OBSERVABLE_CELLS,
    TREATED_POST,
    TREATED_PRE,
    Dataset,
    GroupKey,
    MediatorRecord,
    Unit,
    design_matrix,
    group_members,
    load_dataset,
    write_dataset,
)
from .dgp import DgpConfig, DgpTruth, null_config, oracle_assumption_violation, simulate
from .effects import (
    EffectSeries,
    ReformDecomposition,
    att_post,
    att_pre,
    decompose,
    overall_reform,
    policy_effect,
    selection_effect,
    time_effect,
)
from .inference import BootstrapConfig, bootstrap
from .mediation import (
    MediationResult,
    controlled_direct_effect,
    indirect_effect,
    mediate,
    mediator_composition_table,
)
from .probit import PropensityFit, average_marginal_effect, fit_probit, predict_probability
from .reweight import (
    EfficientMoments,
    Estimator,
    TiltedFit,
    WeightVector,
    ast_tilt,
    ast_weights,
    efficient_first_moments,
    fit_pair_propensity,
    ipw_weights,
    weighted_outcome_mean,
)

__version__ = "0.1.0"

__all__ = [
    "BootstrapConfig",
    "CONTROL_POST",
    "CONTROL_PRE",
    "Dataset",
    "DgpConfig",
    "DgpTruth",
    "EffectSeries",
    "EfficientMoments",
    "Estimator",
    "GroupKey",
    "MediationResult",
    "MediatorRecord",
    "OBSERVABLE_CELLS",
    "PropensityFit",
    "ReformDecomposition",
    "TREATED_POST",
    "TREATED_PRE",
    "TiltedFit",
    "Unit",
    "WeightVector",
    "__version__",
    "ast_tilt",
    "ast_weights",
    "att_post",
    "att_pre",
    "average_marginal_effect",
    "bootstrap",
    "controlled_direct_effect",
    "decompose",
    "design_matrix",
    "efficient_first_moments",
    "fit_pair_propensity",
    "fit_probit",
    "group_members",
    "indirect_effect",
    "ipw_weights",
    "load_dataset",
    "mediate",
    "mediator_composition_table",
    "null_config",
    "oracle_assumption_violation",
    "overall_reform",
    "policy_effect",
    "predict_probability",
    "selection_effect",
    "simulate",
    "time_effect",
    "weighted_outcome_mean",
    "write_dataset",
]
