import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from reformchannels.data import CONTROL_POST, TREATED_POST
from reformchannels.diagnostics import (
    SD_CONVENTION,
    balance_report,
    binary_moment_identity,
    dropout_marginal_effect,
    higher_moment_report,
    pre_trend_series,
    standardized_difference,
    support_check,
    weighted_moments,
)
from reformchannels.dgp import DgpConfig, oracle_assumption_violation, simulate
from reformchannels.effects import ReformDecomposition
from reformchannels.reweight import fit_pair_propensity

from conftest import make_dataset


def test_sd_identical_samples():
    assert standardized_difference(0.4, 0.2, 0.4, 0.2) == 0.0


def test_sd_unit_case():
    assert standardized_difference(1.0, 1.0, 0.0, 1.0) == 100.0


def test_sd_hand_samples():
    a = weighted_moments([1, 2, 3, 4, 5], np.ones(5))
    b = weighted_moments([2, 2, 3, 5, 8], np.ones(5))
    # means 3 and 4; variances 2 and 26/5.
    assert a["var_mean"] == pytest.approx(2.0) and b["var_mean"] == pytest.approx(5.2)
    sd = standardized_difference(a["mean"], a["var_mean"], b["mean"], b["var_mean"])
    assert sd == pytest.approx(100.0 / math.sqrt(3.6), rel=1e-14)


def test_sd_degenerate_variances():
    assert standardized_difference(1.0, 0.0, 2.0, 0.0) == math.inf
    assert standardized_difference(1.0, 0.0, 1.0, 0.0) == 0.0
    with pytest.raises(ValueError):
        standardized_difference(1.0, -1.0, 1.0, 1.0)


samples = hnp.arrays(np.float64, st.integers(3, 30), elements=st.floats(-100, 100))


@settings(max_examples=60, deadline=None)
@given(x=samples, y=samples, scale=st.floats(0.01, 100), shift=st.floats(-50, 50))
def test_sd_symmetric_and_affine_invariant(x, y, scale, shift):
    mx, my = weighted_moments(x, np.ones(len(x))), weighted_moments(y, np.ones(len(y)))
    sd = standardized_difference(mx["mean"], mx["var_mean"], my["mean"], my["var_mean"])
    assert sd >= 0
    assert sd == standardized_difference(my["mean"], my["var_mean"], mx["mean"], mx["var_mean"])
    if mx["var_mean"] + my["var_mean"] > 1e-6:
        ax = weighted_moments(scale * x + shift, np.ones(len(x)))
        ay = weighted_moments(scale * y + shift, np.ones(len(y)))
        sd2 = standardized_difference(ax["mean"], ax["var_mean"], ay["mean"], ay["var_mean"])
        assert sd2 == pytest.approx(sd, rel=1e-6, abs=1e-6)


def test_moments_six_point_hand():
    m = weighted_moments([0, 1, 1, 2, 3, 5], np.ones(6))
    # Deviations from the mean 2: (-2, -1, -1, 0, 1, 3).
    assert m["mean"] == pytest.approx(2.0)
    assert m["variance"] == pytest.approx(16 / 6)
    assert m["third_central"] == pytest.approx(3.0)
    assert m["fourth_central"] == pytest.approx(100 / 6)
    assert m["skewness"] == pytest.approx(3.0 / (16 / 6) ** 1.5)


def test_moments_symmetric_and_constant():
    sym = weighted_moments([-2, -1, 0, 1, 2], np.ones(5))
    assert sym["skewness"] == pytest.approx(0.0, abs=1e-15)
    const = weighted_moments([3.0] * 4, np.ones(4))
    assert const["variance"] == 0.0 and const["constant"] and const["skewness"] is None


@settings(max_examples=40, deadline=None)
@given(bits=hnp.arrays(np.float64, st.integers(2, 40), elements=st.sampled_from([0.0, 1.0])),
       w=st.floats(0.1, 10))
def test_binary_moment_identity(bits, w):
    weights = np.linspace(1.0, w, len(bits))
    m = weighted_moments(bits, weights)
    ident = binary_moment_identity(m["mean"])
    for k in ("variance", "third_central", "fourth_central"):
        assert m[k] == pytest.approx(ident[k], abs=1e-12)


def test_higher_moment_report_rows():
    X = np.column_stack([[0, 1, 1, 0, 1, 0], [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]])
    tw = np.array([1, 1, 1, 0, 0, 0], float)
    raw = np.array([0, 0, 0, 1, 1, 1], float)
    rows = higher_moment_report(X, tw, raw, raw / 3, ["b", "x"], comparison="demo")
    assert len(rows) == 8
    mean_x = next(r for r in rows if r["covariate"] == "x" and r["moment"] == "mean")
    assert mean_x["target"] == pytest.approx(2.0) and mean_x["source_raw"] == pytest.approx(5.0)
    binary = [r for r in rows if r["covariate"] == "b" and r["moment"] != "mean"]
    assert all(r["binary"] and r["binary_identity_ok"] for r in binary)


def test_balance_report_exact_after_ast(dgp_small):
    ds, _ = dgp_small
    dec = ReformDecomposition(ds, "ast")
    dec.estimands(("att_pre", "att_post", "selection", "direct"))
    rep = balance_report(dec)
    assert rep.meta["sd_convention"] == SD_CONVENTION
    means = [r for r in rep.rows if r["moment"] == "mean" and r["covariate"] != "const"]
    assert means and max(r["sd_weighted"] for r in means) <= 1e-6
    assert rep.max_weighted_mean_sd() <= 1e-6
    # Balancing a binary mean balances its higher moments.
    for r in rep.rows:
        if r["binary"] and r["moment"] != "mean":
            assert r["binary_identity_ok"] and r.get("balanced_by_mean", True)
    assert all(r["sd_raw"] >= 0 and r["sd_weighted"] >= 0 for r in rep.rows)
    frame = rep.frame()
    assert {"comparison", "covariate", "moment", "sd_raw", "sd_weighted"} <= set(frame.columns)


def test_balance_report_ipw_not_exact(dgp_small):
    ds, _ = dgp_small
    dec = ReformDecomposition(ds, "ipw")
    dec.estimands(("att_post",))
    rep = balance_report(dec)
    assert 1e-6 < rep.max_weighted_mean_sd() < 20.0


def test_support_constant_half_passes():
    out = support_check(np.full(10, 0.5))
    assert out["pass"] and out["fits"]["fit"]["by_epsilon"]["0.01"]["flagged"] == 0


def test_support_flags_extreme_probability():
    out = support_check({"x": np.array([0.5, 0.9999])}, epsilon=0.001)
    assert not out["pass"]
    assert out["fits"]["x"]["by_epsilon"]["0.001"] == {"below": 0, "above": 1, "flagged": 1}


def test_support_hole_counts_match_construction():
    cfg = DgpConfig(n=20000, horizon=1, seed=1)
    ds, _, desc = oracle_assumption_violation(cfg, "support_hole", 3.0)
    fit = fit_pair_propensity(ds, TREATED_POST, CONTROL_POST)
    out = support_check({"11v|01v": fit})
    assert not out["pass"]
    for eps, expected in desc.details["expected_flagged"].items():
        got = out["fits"]["11v|01v"]["by_epsilon"][eps]["flagged"]
        assert expected > 0
        assert got == pytest.approx(expected, rel=0.1)
    clean, _, _ = oracle_assumption_violation(cfg, "support_hole", 0.0)
    base = support_check({"p": fit_pair_propensity(clean, TREATED_POST, CONTROL_POST)})
    assert base["fits"]["p"]["by_epsilon"]["0.001"]["flagged"] == 0


def test_pre_trends_identical_groups():
    hist = np.tile(np.linspace(0, 1, 5), (8, 1))
    ds = make_dataset([1, 0, 1, 0] * 2, [1, 1, 0, 0] * 2, np.zeros((8, 1)), history=hist)
    tab = pre_trend_series(ds)
    series = tab.pivot(index="month", columns="group", values="mean")
    for g in series.columns:
        np.testing.assert_allclose(series[g], np.linspace(0, 1, 5))


def test_pre_trends_constant_outcomes_flat():
    ds = make_dataset([1, 0, 1, 0], [1, 1, 0, 0], np.zeros((4, 1)), history=np.full((4, 6), 0.3))
    tab = pre_trend_series(ds)
    np.testing.assert_allclose(tab["mean"], 0.3)


def test_pre_trends_common_trend_constant_gap():
    ds, _ = simulate(DgpConfig(n=3000, horizon=1, history_months=10, noise_sd=0.0))
    series = pre_trend_series(ds).pivot(index="month", columns="group", values="mean")
    gap = series["11v"] - series["01v"]
    assert np.ptp(gap.to_numpy()) <= 1e-12
    assert abs(gap.iloc[0]) > 1e-3


def test_pre_trends_require_history(dgp_small):
    ds, _ = dgp_small
    with pytest.raises(ValueError):
        pre_trend_series(ds)


def test_dropout_marginal_effect():
    ds, _ = simulate(DgpConfig(n=40000, horizon=1, seed=4))
    out = dropout_marginal_effect(ds)
    raw = out["dropout_rate_post"] - out["dropout_rate_pre"]
    # Dropout is independent of covariates in the DGP, so the AME is the raw gap.
    assert out["ame_post_reform"] == pytest.approx(raw, abs=0.005)
    assert out["ame_post_reform"] < 0
