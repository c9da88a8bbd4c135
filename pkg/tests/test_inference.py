import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reformchannels.data import OBSERVABLE_CELLS, group_mask
from reformchannels.effects import DecompositionPipeline, ReformDecomposition
from reformchannels.errors import EstimationError, InferenceDegradedError
from reformchannels.inference import (
    BootstrapConfig,
    bootstrap,
    bootstrap_p_value,
    percentile_interval,
    resample_indices,
)


def constant_pipeline(ds):
    return {"c": np.array([0.3, -0.1])}


def mean_pipeline(ds):
    return {"m": np.average(ds.Y, axis=0, weights=ds.w)}


class FlakyPipeline:
    """Fails when the first resampled unit's covariate exceeds ``cut``."""

    def __init__(self, cut):
        self.cut = cut

    def __call__(self, ds):
        if ds.X[0, 0] > self.cut:
            raise EstimationError("synthetic failure")
        return mean_pipeline(ds)


def test_constant_estimand_degenerate_interval(dgp_small):
    ds, _ = dgp_small
    res = bootstrap(ds, constant_pipeline, BootstrapConfig(replications=49, seed=1))
    s = res["c"]
    np.testing.assert_array_equal(s.ci_low, [0.3, -0.1])
    np.testing.assert_array_equal(s.ci_high, [0.3, -0.1])
    np.testing.assert_allclose(s.p_values, 2 / 50)
    assert res.dropped == 0


def test_p_value_formula():
    draws = np.array([[-1.0], [0.0], [1.0], [2.0]])
    # below: (1 + 2) / 5, above: (1 + 3) / 5, doubled and capped at 1.
    assert bootstrap_p_value(draws)[0] == 1.0
    assert bootstrap_p_value(np.array([[1.0], [2.0], [3.0]]))[0] == pytest.approx(0.5)
    assert bootstrap_p_value(np.array([[-1.0], [-2.0], [-3.0], [4.0]]))[0] == pytest.approx(0.8)


def test_percentile_interval_matches_quantiles():
    draws = np.arange(101, dtype=float)[:, None]
    lo, hi = percentile_interval(draws, 0.9)
    assert lo[0] == pytest.approx(5.0) and hi[0] == pytest.approx(95.0)


def _dump(res):
    return json.dumps({k: s.to_dict() for k, s in res.series.items()}, sort_keys=True)


def test_fixed_seed_is_byte_identical(dgp_small):
    ds, _ = dgp_small
    cfg = BootstrapConfig(replications=30, seed=123)
    a = bootstrap(ds, DecompositionPipeline("ast"), cfg)
    b = bootstrap(ds, DecompositionPipeline("ast"), cfg)
    assert _dump(a) == _dump(b)
    for k in a.series:
        assert a[k].ci_low.tobytes() == b[k].ci_low.tobytes()
        assert a[k].p_values.tobytes() == b[k].p_values.tobytes()
    c = bootstrap(ds, DecompositionPipeline("ast"), BootstrapConfig(replications=30, seed=124))
    assert _dump(a) != _dump(c)


def test_worker_count_does_not_matter(dgp_small):
    ds, _ = dgp_small
    one = bootstrap(ds, DecompositionPipeline("ipw"), BootstrapConfig(replications=12, seed=5))
    two = bootstrap(ds, DecompositionPipeline("ipw"),
                    BootstrapConfig(replications=12, seed=5, workers=2))
    assert _dump(one) == _dump(two)


def test_point_is_full_sample_estimate(dgp_small):
    ds, _ = dgp_small
    res = bootstrap(ds, DecompositionPipeline("ast"), BootstrapConfig(replications=10, seed=0))
    full = ReformDecomposition(ds, "ast").estimands()
    for k, v in full.items():
        np.testing.assert_array_equal(res[k].point, v)
        assert res[k].meta["ci_method"] == "percentile"
        assert res[k].meta["replications"] == 10


@settings(max_examples=10, deadline=None)
@given(level_a=st.floats(0.5, 0.98), gap=st.floats(0.005, 0.019))
def test_wider_level_wider_interval(dgp_small, level_a, gap):
    ds, _ = dgp_small
    narrow = bootstrap(ds, mean_pipeline, BootstrapConfig(replications=40, seed=9,
                                                          confidence_level=level_a))
    wide = bootstrap(ds, mean_pipeline, BootstrapConfig(replications=40, seed=9,
                                                        confidence_level=level_a + gap))
    assert np.all(wide["m"].ci_low <= narrow["m"].ci_low)
    assert np.all(wide["m"].ci_high >= narrow["m"].ci_high)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2 ** 32), stratify=st.booleans())
def test_resample_preserves_size_and_weights(dgp_small, seed, stratify):
    ds, _ = dgp_small
    ds = ds.with_weights(np.linspace(0.5, 2.0, ds.N))
    idx = resample_indices(ds, np.random.SeedSequence(seed), stratify)
    sub = ds.take(idx)
    assert sub.N == ds.N
    np.testing.assert_array_equal(sub.w, ds.w[idx])
    if stratify:
        for g in OBSERVABLE_CELLS:
            assert group_mask(sub, g).sum() == group_mask(ds, g).sum()


def test_failed_replicates_are_counted(dgp_small):
    ds, _ = dgp_small
    cut = np.quantile(ds.X[:, 0], 0.97)
    res = bootstrap(ds, FlakyPipeline(cut), BootstrapConfig(replications=100, seed=3))
    assert 0 < res.dropped <= 10
    assert res["m"].meta["dropped_replications"] == res.dropped
    assert len(res.failures) == res.dropped


def test_too_many_failures_degrade(dgp_small):
    ds, _ = dgp_small
    cut = np.quantile(ds.X[:, 0], 0.5)
    with pytest.raises(InferenceDegradedError) as info:
        bootstrap(ds, FlakyPipeline(cut), BootstrapConfig(replications=40, seed=3))
    assert info.value.dropped > 4 and info.value.replications == 40


@pytest.mark.parametrize("kwargs", [
    {"replications": 1},
    {"confidence_level": 1.0},
    {"confidence_level": 0.0},
    {"resampling_unit": "cluster"},
    {"seed": -1},
    {"workers": 0},
])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        BootstrapConfig(**kwargs)
