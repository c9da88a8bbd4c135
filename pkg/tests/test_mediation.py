import numpy as np
import pandas as pd
import pytest

from reformchannels.data import MEDIATOR_COLUMN_NAMES, TREATED_POST, TREATED_PRE, group_mask
from reformchannels.dgp import DgpConfig, simulate
from reformchannels.effects import EffectSeries, ReformDecomposition
from reformchannels.errors import MediatorError, SupportError
from reformchannels.mediation import (
    MediationResult,
    controlled_direct_effect,
    indirect_effect,
    mediate,
    mediator_composition_table,
)
from reformchannels.reweight import Estimator

from conftest import make_dataset, replicated_cells_dataset


@pytest.mark.parametrize("estimator", ["ast", "ipw"])
def test_additivity(dgp_small, estimator):
    ds, _ = dgp_small
    res = mediate(ds, estimator)
    assert isinstance(res, MediationResult)
    np.testing.assert_allclose(res.direct.point + res.indirect.point, res.policy.point,
                               rtol=0, atol=1e-12)
    np.testing.assert_array_equal(indirect_effect(res).point, res.indirect.point)


def test_mediator_balance_exact(dgp_small):
    ds, _ = dgp_small
    bal = mediate(ds, "ast").mediator_balance
    assert bal["converged"]
    assert bal["max_abs_residual"] <= 1e-8
    assert bal["columns"][-6:] == list(MEDIATOR_COLUMN_NAMES)
    # Category shares of reweighted pre-reform treated match the efficient targets.
    np.testing.assert_allclose(bal["reweighted_moments"], bal["efficient_moments"], atol=1e-8)


def test_shared_decomposition_reused(dgp_small):
    ds, _ = dgp_small
    dec = ReformDecomposition(ds, "ast")
    policy = dec.estimands(("policy",))["policy"]
    res = mediate(ds, decomposition=dec)
    np.testing.assert_array_equal(res.policy.point, policy)
    np.testing.assert_array_equal(controlled_direct_effect(ds).point, res.direct.point)


def test_matched_mediator_moments_are_idempotent():
    rng = np.random.default_rng(0)
    Y = {c: rng.normal(size=(25, 3)) for c in ((1, 1), (0, 1), (1, 0), (0, 0))}
    ds = replicated_cells_dataset(Y)
    dec = ReformDecomposition(ds, "ast")
    np.testing.assert_allclose(dec.mean("11<-10|med"), dec.mean("11<-10"), atol=1e-8)
    res = mediate(ds, decomposition=dec)
    np.testing.assert_allclose(res.direct.point, res.policy.point, atol=1e-8)


def test_indirect_trivial_cases():
    p = EffectSeries("policy", np.array([0.1, -0.2]), Estimator.AST)
    same = EffectSeries("direct", p.point.copy(), Estimator.AST)
    zero = EffectSeries("direct", np.zeros(2), Estimator.AST)
    np.testing.assert_array_equal(indirect_effect(p, same).point, 0.0)
    np.testing.assert_array_equal(indirect_effect(p, zero).point, p.point)
    with pytest.raises(ValueError):
        indirect_effect(p)


def _mc(cfg, reps=20):
    out = {"policy": [], "direct": [], "indirect": []}
    for r in range(reps):
        ds, truth = simulate(cfg.replace(seed=500 + r))
        res = mediate(ds, "ast")
        for k in out:
            out[k].append(getattr(res, k).point)
    return {k: np.array(v) for k, v in out.items()}, truth


def _within(draws, truth, k=4.0):
    bias = draws.mean(axis=0) - truth
    se = draws.std(axis=0, ddof=1) / np.sqrt(len(draws))
    return np.all(np.abs(bias) <= k * se + 1e-12)


def test_no_composition_change_direct_equals_policy():
    base = DgpConfig(n=5000, horizon=40)
    cfg = base.replace(type_shares_post=base.type_shares_pre,
                       duration_ranges_post=base.duration_ranges_pre)
    draws, truth = _mc(cfg)
    np.testing.assert_array_equal(truth["indirect"], 0.0)
    np.testing.assert_array_equal(truth["direct"], truth["policy"])
    assert _within(draws["direct"] - draws["policy"], np.zeros(40))
    assert _within(draws["direct"], truth["direct"])


def test_pure_composition_channel():
    cfg = DgpConfig(n=5000, horizon=40, wedge_size=0.0)
    draws, truth = _mc(cfg)
    np.testing.assert_array_equal(truth["direct"], 0.0)
    assert np.abs(truth["indirect"]).max() > 0.005
    assert _within(draws["direct"], truth["direct"])
    assert _within(draws["indirect"], truth["indirect"])


def test_overlap_failure_is_support_error(dgp_small):
    ds, _ = dgp_small
    # Drop every pre-reform treated unit in the shortest duration category.
    pre = group_mask(ds, TREATED_PRE)
    drop = pre & (ds.planned_days < 183)
    sub = ds.take(np.flatnonzero(~drop))
    assert (group_mask(sub, TREATED_POST) & (sub.planned_days < 183)).any()
    with pytest.raises(SupportError, match="<6m") as info:
        mediate(sub, "ast")
    assert info.value.units


def test_missing_mediator_records(dgp_small):
    ds, _ = dgp_small
    plain = make_dataset(ds.d, ds.t, ds.X, ds.Y)
    with pytest.raises(MediatorError):
        mediate(plain, "ast")


def _table_dataset(types, planned, actual, d, t, w=None):
    return make_dataset(d, t, np.zeros((len(d), 1)), w=w,
                        programme_type=np.array(types, dtype=object),
                        planned_days=np.array(planned), actual_days=np.array(actual))


def test_composition_table_hand_example():
    ds = _table_dataset(
        ["short_training", "short_training", "retraining", "short_training", "retraining",
         "retraining", "", ""],
        [100, 200, 800, 50, 600, 900, 0, 0],
        [100, 150, 800, 50, 500, 900, 0, 0],
        d=[1, 1, 1, 1, 1, 1, 0, 0], t=[0, 0, 0, 1, 1, 1, 0, 1],
    )
    tab = mediator_composition_table(ds).set_index(["period", "programme_type"])
    assert tab.loc[("pre", "short_training"), "count"] == 2
    assert tab.loc[("pre", "short_training"), "share"] == pytest.approx(2 / 3)
    assert tab.loc[("pre", "short_training"), "mean_planned_days"] == pytest.approx(150.0)
    assert tab.loc[("pre", "short_training"), "mean_actual_days"] == pytest.approx(125.0)
    assert tab.loc[("post", "retraining"), "share"] == pytest.approx(2 / 3)
    assert tab.loc[("post", "retraining"), "mean_planned_days"] == pytest.approx(750.0)
    assert tab.loc[("post", "retraining"), "mean_actual_days"] == pytest.approx(700.0)
    assert tab.loc[("pre", "other"), "count"] == 0
    assert tab.loc[("pre", "other"), "share"] == 0.0
    assert np.isnan(tab.loc[("pre", "other"), "mean_planned_days"])


def test_composition_table_single_type():
    ds = _table_dataset(["other"] * 3 + ["", ""], [10, 20, 30, 0, 0], [10, 20, 30, 0, 0],
                        d=[1, 1, 1, 0, 0], t=[0, 1, 1, 0, 1])
    tab = mediator_composition_table(ds)
    assert isinstance(tab, pd.DataFrame)
    other = tab[tab.programme_type == "other"].set_index("period")
    assert other.loc["pre", "share"] == 1.0 and other.loc["post", "share"] == 1.0
    assert tab.groupby("period")["share"].sum().tolist() == [1.0, 1.0]


def test_composition_table_tracks_dgp_shares():
    ds, _ = simulate(DgpConfig(n=40000, horizon=1, seed=2))
    tab = mediator_composition_table(ds).set_index(["period", "programme_type"])
    assert tab.loc[("pre", "short_training"), "share"] == pytest.approx(0.21, abs=0.015)
    assert tab.loc[("post", "short_training"), "share"] == pytest.approx(0.42, abs=0.015)
