"""JSON Schemas for every file the command-line interface writes."""

SCHEMA_VERSION = "1.0"

_num_or_null = {"type": ["number", "null"]}
_num_array = {"type": "array", "items": {"type": "number"}}
_opt_num_array = {"anyOf": [{"type": "null"}, _num_array]}
_tagged_number = {"anyOf": [{"type": "number"}, {"enum": ["inf", "-inf", "nan"]}]}

EFFECT_SERIES = {
    "type": "object",
    "required": ["estimand", "estimator", "months", "point", "ci_low", "ci_high", "p_values"],
    "properties": {
        "estimand": {"enum": ["att_pre", "att_post", "overall_reform", "selection",
                              "time_bc0", "time_bc1", "policy", "direct", "indirect"]},
        "estimator": {"enum": ["ipw", "ast"]},
        "months": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        "point": _num_array,
        "ci_low": _opt_num_array,
        "ci_high": _opt_num_array,
        "p_values": {"anyOf": [{"type": "null"},
                               {"type": "array", "items": {"type": "number", "minimum": 0,
                                                           "maximum": 1}}]},
        "se": _opt_num_array,
        "meta": {"type": "object"},
    },
}

BOOTSTRAP_INFO = {
    "anyOf": [
        {"type": "null"},
        {
            "type": "object",
            "required": ["replications", "seed", "confidence_level", "dropped", "ci_method"],
            "properties": {
                "replications": {"type": "integer", "minimum": 2},
                "seed": {"type": "integer", "minimum": 0},
                "confidence_level": {"type": "number", "exclusiveMinimum": 0,
                                     "exclusiveMaximum": 1},
                "dropped": {"type": "integer", "minimum": 0},
                "ci_method": {"const": "percentile"},
                "resampling": {"type": "string"},
            },
        },
    ]
}

_header = {
    "schema_version": {"const": SCHEMA_VERSION},
    "kind": {"type": "string"},
}

EFFECTS = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "effects",
    "type": "object",
    "required": ["schema_version", "kind", "estimator", "horizon", "n_units", "series",
                 "bootstrap", "identities"],
    "properties": {
        **_header,
        "kind": {"const": "effects"},
        "estimator": {"enum": ["ipw", "ast"]},
        "horizon": {"type": "integer", "minimum": 1},
        "n_units": {"type": "integer", "minimum": 1},
        "series": {"type": "array", "items": EFFECT_SERIES},
        "bootstrap": BOOTSTRAP_INFO,
        "identities": {"type": "object",
                       "additionalProperties": {"type": "number", "minimum": 0}},
        "max_balance_residual": {"type": "number", "minimum": 0},
        "run": {"type": "object"},
    },
}

MEDIATION = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "mediation",
    "type": "object",
    "required": ["schema_version", "kind", "estimator", "direct", "indirect", "policy",
                 "mediator_balance", "bootstrap"],
    "properties": {
        **_header,
        "kind": {"const": "mediation"},
        "estimator": {"enum": ["ipw", "ast"]},
        "direct": EFFECT_SERIES,
        "indirect": EFFECT_SERIES,
        "policy": EFFECT_SERIES,
        "mediator_balance": {
            "type": "object",
            "required": ["columns", "efficient_moments", "reweighted_moments", "residuals",
                         "max_abs_residual"],
            "properties": {
                "columns": {"type": "array", "items": {"type": "string"}},
                "efficient_moments": _num_array,
                "reweighted_moments": _num_array,
                "residuals": _num_array,
                "max_abs_residual": {"type": "number", "minimum": 0},
            },
        },
        "composition": {"type": "array", "items": {"type": "object"}},
        "bootstrap": BOOTSTRAP_INFO,
        "run": {"type": "object"},
    },
}

BALANCE_ROW = {
    "type": "object",
    "required": ["comparison", "covariate", "moment", "target", "source_raw",
                 "source_weighted", "sd_raw", "sd_weighted"],
    "properties": {
        "comparison": {"type": "string"},
        "covariate": {"type": "string"},
        "moment": {"enum": ["mean", "variance", "third_central", "fourth_central"]},
        "target": {"type": "number"},
        "source_raw": {"type": "number"},
        "source_weighted": {"type": "number"},
        "sd_raw": _tagged_number,
        "sd_weighted": _tagged_number,
    },
}

SUPPORT = {
    "type": "object",
    "required": ["epsilon", "pass", "fits"],
    "properties": {
        "epsilon": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 0.5},
        "pass": {"type": "boolean"},
        "fits": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "required": ["n", "min", "max", "by_epsilon", "pass"],
            },
        },
    },
}

BALANCE = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "balance",
    "type": "object",
    "required": ["schema_version", "kind", "estimator", "rows", "support", "meta"],
    "properties": {
        **_header,
        "kind": {"const": "balance"},
        "estimator": {"enum": ["ipw", "ast"]},
        "rows": {"type": "array", "items": BALANCE_ROW},
        "support": SUPPORT,
        "pre_trends": {"anyOf": [{"type": "null"}, {"type": "array", "items": {
            "type": "object", "required": ["group", "month", "mean"]}}]},
        "meta": {"type": "object", "required": ["sd_convention"]},
        "run": {"type": "object"},
    },
}

TRUTH = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "truth",
    "type": "object",
    "required": ["schema_version", "kind", "horizon", "estimands", "config"],
    "properties": {
        **_header,
        "kind": {"const": "truth"},
        "horizon": {"type": "integer", "minimum": 1},
        "estimands": {"type": "object", "additionalProperties": _num_array},
        "config": {"type": "object"},
        "violation": {"anyOf": [{"type": "null"}, {"type": "object"}]},
        "meta": {"type": "object"},
    },
}

FITS = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "fits",
    "type": "object",
    "required": ["schema_version", "kind", "probits", "tilts"],
    "properties": {
        **_header,
        "kind": {"const": "fits"},
        "probits": {"type": "object", "additionalProperties": {
            "type": "object", "required": ["coefficients", "log_likelihood", "converged"]}},
        "tilts": {"type": "object", "additionalProperties": {
            "type": "object", "required": ["tilted_coefficients", "balance_residuals",
                                           "converged"]}},
    },
}

ERROR = {
    "type": "object",
    "required": ["error", "message", "exit_code"],
    "properties": {
        "error": {"type": "string"},
        "message": {"type": "string"},
        "exit_code": {"type": "integer", "minimum": 1},
    },
}

ALL = {"effects": EFFECTS, "mediation": MEDIATION, "balance": BALANCE, "truth": TRUTH,
       "fits": FITS, "error": ERROR}
