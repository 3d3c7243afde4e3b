import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from capfirm.model import (
    DataError,
    DimensionError,
    DispatchSchedule,
    EngagementPlan,
    UncertaintySetSpec,
    build_uncertainty_set,
    default_config,
    enumerate_trajectories,
    objective_value,
    penalties,
    penalty_cost,
    validate_engagement,
)

from conftest import toy_config, toy_forecast


def _sched(y, dxn=None):
    T = len(y)
    z = np.zeros(T)
    return DispatchSchedule(y, y, z, z, z, z, z if dxn is None else dxn, z)


class TestValidateEngagement:
    def test_zero_plan_accepted(self):
        cfg = default_config()
        assert validate_engagement(EngagementPlan(np.zeros(cfg.T)), cfg) == []

    def test_ramp_violation(self):
        cfg = toy_config(T=3, ramp=np.full(3, 10.0))
        viol = validate_engagement(EngagementPlan([0, 15, 15]), cfg)
        assert len(viol) == 1 and viol[0].startswith("t=1")

    def test_upper_bound_violation(self):
        cfg = toy_config(T=3, ramp=np.full(3, 10.0))
        viol = validate_engagement(EngagementPlan([95, 100, 105]), cfg)
        assert len(viol) == 1 and viol[0].startswith("t=2") and "X_max" in viol[0]

    def test_first_period_ramp_exempt_unless_chained(self):
        cfg = toy_config(T=2, ramp=np.full(2, 10.0))
        assert validate_engagement(EngagementPlan([50, 55]), cfg) == []
        chained = toy_config(T=2, ramp=np.full(2, 10.0), x_prev=0.0)
        assert len(validate_engagement(EngagementPlan([50, 55]), chained)) == 1

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            validate_engagement(EngagementPlan([0, 0]), toy_config(T=3))


class TestPenalty:
    def test_inside_band(self, toy):
        assert penalty_cost(100, 100, 0, toy) == 0.0

    def test_band_edge(self, toy):
        assert penalty_cost(100, 100 + toy.tolerance, 0, toy) == 0.0

    def test_hand_value(self, toy):
        assert penalty_cost(40, 20, 1, toy) == pytest.approx(4.75, abs=1e-12)

    def test_vectorised_matches_scalar(self, toy):
        x, y = np.array([0, 40, 40, 0.0]), np.array([3, 20, 45, 0.0])
        ref = [penalty_cost(x[t], y[t], t, toy) for t in range(4)]
        np.testing.assert_allclose(penalties(x, y, toy), ref, atol=1e-12)

    @given(st.floats(0, 100), st.floats(0, 100))
    def test_symmetric(self, x, d):
        cfg = toy_config()
        assert penalty_cost(x, x + d, 0, cfg) == pytest.approx(penalty_cost(x, x - d, 0, cfg), abs=1e-9)

    @given(st.floats(0, 100), st.floats(-50, 150), st.floats(-50, 150))
    def test_convex_in_y(self, x, y1, y2):
        cfg = toy_config()
        mid = penalty_cost(x, 0.5 * (y1 + y2), 0, cfg)
        assert mid <= 0.5 * (penalty_cost(x, y1, 0, cfg) + penalty_cost(x, y2, 0, cfg)) + 1e-9


class TestObjective:
    def test_null_schedule(self, toy):
        assert objective_value(EngagementPlan(np.zeros(4)), _sched(np.zeros(4)), toy) == 0.0

    def test_full_export(self, toy):
        plan = EngagementPlan([0, 40, 40, 0])
        assert objective_value(plan, _sched([0, 40, 40, 0.0]), toy) == pytest.approx(-4.0)

    def test_with_shortfall(self, toy):
        plan = EngagementPlan([0, 40, 40, 0])
        val = objective_value(plan, _sched([0, 20, 40, 0.0], np.array([0, 19, 0, 0.0])), toy)
        assert val == pytest.approx(1.75)


class TestUncertaintySet:
    def test_gamma_zero_singleton(self):
        fc = toy_forecast([0, 40, 40, 0], spreads=[20, 15, 10, 5])
        us = build_uncertainty_set(fc, 0.1, 0)
        assert us.is_singleton
        assert len(list(enumerate_trajectories(us))) == 1

    def test_median_level_degenerate(self):
        fc = toy_forecast([0, 40, 40, 0], spreads=[20, 15, 10, 5])
        us = build_uncertainty_set(fc, 0.5, 3)
        assert np.all(us.dev == 0) and us.is_singleton

    def test_elementwise_deviation(self):
        fc = toy_forecast([0, 40, 40, 0], spreads=[20, 15, 10, 5])
        us = build_uncertainty_set(fc, 0.1, 1)
        np.testing.assert_array_equal(us.dev, [0, 20, 20, 0])

    def test_crossing_quantiles_rejected(self):
        with pytest.raises(DataError):
            UncertaintySetSpec([10, 10], [-1, 0], 1)

    def test_gamma_range(self):
        with pytest.raises(ValueError):
            UncertaintySetSpec([10, 10], [1, 1], 3)
        UncertaintySetSpec([10, 10], [1, 1], 2)

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.floats(0, 50), min_size=1, max_size=7), st.data())
    def test_enumeration_invariants(self, dev, data):
        dev = np.array(dev)
        median = dev + 10.0
        gamma = data.draw(st.integers(0, dev.size))
        us = UncertaintySetSpec(median, dev, gamma)
        seen = set()
        for z, p in enumerate_trajectories(us):
            assert z.sum() <= gamma
            assert np.all(p <= median + 1e-12) and np.all(p >= median - dev - 1e-12)
            seen.add(z.tobytes())
        k = int((dev > 0).sum())
        from math import comb

        assert len(seen) == sum(comb(k, j) for j in range(min(gamma, k) + 1))
        if gamma == 0 or k == 0:
            assert len(seen) == 1


def test_config_defaults():
    cfg = default_config()
    assert cfg.T == 96 and cfg.dt == 0.25
    assert cfg.tolerance == pytest.approx(4.664)
    assert cfg.ramp.min() == pytest.approx(0.075 * 466.4) and cfg.ramp.max() == pytest.approx(0.15 * 466.4)
    peak = np.flatnonzero(cfg.price > cfg.price.min())
    assert peak[0] == 76 and peak[-1] == 83


def test_config_rejects_bad_values():
    with pytest.raises(ValueError):
        toy_config(tol_frac=1.5)
    with pytest.raises(DimensionError):
        toy_config(ramp=np.ones(3))
