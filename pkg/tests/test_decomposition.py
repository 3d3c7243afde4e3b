"""Benders-dual and CCG loops on small instances with known optima."""

import csv

import numpy as np
import pytest

from capfirm.benders import run_bd, solve_master, warm_start_cuts, warm_start_trajectories
from capfirm.ccg import CcgMaster, run_ccg
from capfirm.model import UncertaintySetSpec
from capfirm.planner import plan_day
from capfirm.robust import Incumbent, TraceRow, next_bigm, window_converged
from conftest import random_instance
from oracles import robust_oracle

EPS = 0.5
MEDIAN = np.array([0.0, 40.0, 40.0, 0.0])
DEV = np.array([0.0, 20.0, 30.0, 0.0])
SOLVERS = {"bd": run_bd, "ccg": run_ccg}


def uset(gamma, dev=DEV):
    return UncertaintySetSpec(MEDIAN, dev, gamma)


class TestWarmStart:
    def test_toy_two_cuts(self, toy):
        assert len(warm_start_cuts(None, uset(1), toy)) == 2

    def test_toy_trajectories(self, toy):
        trajs = warm_start_trajectories(uset(1), toy.Pc)
        assert np.allclose(trajs[0], [0, 20, 40, 0])  # window at the first non-null period
        assert np.allclose(trajs[1], [0, 20, 40, 0])  # largest median (stable tie-break on period 2)

    def test_zero_median(self, toy):
        assert warm_start_cuts(None, UncertaintySetSpec(np.zeros(4), np.zeros(4), 2), toy) == []

    def test_window_longer_than_support(self, toy):
        assert len(warm_start_cuts(None, uset(2), toy)) == 1
        assert len(warm_start_cuts(None, uset(4), toy)) == 1

    def test_cuts_underestimate_value(self, toy):
        theta, _ = solve_master(toy, warm_start_cuts(None, uset(1), toy))
        assert theta <= robust_oracle(uset(1), toy)[0] + 1e-6


class TestBigMSchedule:
    def test_steps(self):
        seq, m = [1.0], 1.0
        while (m := next_bigm(m)) is not None:
            seq.append(m)
        assert seq[:7] == [1, 11, 21, 31, 41, 51, 151]
        assert seq[-2:] == [451, 500] and len(seq) == 11

    def test_window(self):
        rows = [TraceRow(0, j, 1, 0.0, g) for j, g in enumerate([3, 0.1, 0.2])]
        assert window_converged(rows, 2, EPS)
        assert not window_converged(rows, 3, EPS)


@pytest.mark.parametrize("alg", SOLVERS)
@pytest.mark.parametrize("gamma", [0, 1, 2, 4])
def test_toy_matches_oracle(toy, alg, gamma):
    rep = SOLVERS[alg](None, uset(gamma), toy, EPS)
    assert rep.objective == pytest.approx(robust_oracle(uset(gamma), toy)[0], abs=EPS)
    assert rep.optimal


@pytest.mark.parametrize("alg", SOLVERS)
def test_gamma_zero_is_deterministic(toy, alg):
    rep = SOLVERS[alg](None, uset(0), toy, EPS)
    assert rep.objective == pytest.approx(plan_day(MEDIAN, toy).objective, abs=EPS)
    # BD cannot stop before its 10-gap window fills
    assert rep.iterations <= (20 if alg == "bd" else 3)


@pytest.mark.parametrize("alg", SOLVERS)
def test_dev_zero_is_deterministic(toy, alg):
    rep = SOLVERS[alg](None, uset(3, dev=np.zeros(4)), toy, EPS)
    assert rep.objective == pytest.approx(plan_day(MEDIAN, toy).objective, abs=EPS)


def test_ccg_toy_iterations(toy):
    assert run_ccg(None, uset(1), toy, EPS).iterations <= 5


@pytest.mark.parametrize("seed", range(4))
def test_random_agreement(seed):
    rng = np.random.default_rng(100 + seed)
    cfg, us = random_instance(rng, 6)
    ref = robust_oracle(us, cfg)[0]
    bd, ccg = run_bd(None, us, cfg, EPS), run_ccg(None, us, cfg, EPS)
    assert bd.objective == pytest.approx(ref, abs=EPS)
    assert ccg.objective == pytest.approx(ref, abs=EPS)
    assert abs(bd.objective - ccg.objective) <= 2 * EPS


def test_bd_lower_bound_monotone():
    rng = np.random.default_rng(7)
    cfg, us = random_instance(rng, 8)
    rep = run_bd(None, UncertaintySetSpec(us.median, us.dev, 2), cfg, EPS, warm_start=False)
    for r in set(row.restart for row in rep.trace):
        mp = [row.mp for row in rep.trace if row.restart == r]
        assert all(b >= a - 1e-7 for a, b in zip(mp, mp[1:]))
    assert rep.lower_bound <= rep.upper_bound + 1e-6


def test_report_fields(toy, tmp_path):
    rep = run_bd(None, uset(1), toy, EPS)
    assert rep.bigm_history[0] == 1.0
    assert rep.warm_start_cuts == 2
    assert np.allclose(rep.worst_trajectory, MEDIAN - rep.worst_z * DEV)
    path = rep.write_trace(tmp_path / "trace.csv")
    rows = list(csv.DictReader(path.open()))
    assert len(rows) == rep.iterations
    assert set(rows[0]) == {"restart", "iteration", "m_neg", "mp", "sp", "gap"}


def test_ccg_master_blocks(toy):
    m = CcgMaster(toy)
    m.add_scenario(MEDIAN)
    theta_one, _ = m.solve()
    m.add_scenario(MEDIAN - DEV)
    theta_two, _ = m.solve()
    assert theta_two >= theta_one - 1e-9
    rep = run_ccg(None, uset(2), toy, EPS)
    assert 1 <= rep.blocks <= rep.iterations


def test_plans_are_valid():
    from capfirm.model import validate_engagement

    rng = np.random.default_rng(21)
    cfg, us = random_instance(rng, 8)
    for alg in SOLVERS.values():
        assert validate_engagement(alg(None, us, cfg, EPS).plan, cfg) == []


class TestIncumbent:
    @staticmethod
    def sol(value, early):
        from types import SimpleNamespace
        return SimpleNamespace(objective=value, early=early, bounded=False, z=np.zeros(1))

    def test_exact_offers_keep_minimum(self):
        inc = Incumbent()
        for v in (3.0, 1.0, 2.0):
            inc.offer(self.sol(v, False), np.array([v]))
        assert inc.sol.objective == 1.0 and inc.x[0] == 1.0
        assert inc.settle(lambda x, s: pytest.fail("nothing pending")) == 0

    def test_settle_stops_once_bounds_exceed_best(self):
        inc = Incumbent()
        inc.offer(self.sol(5.0, False), np.array([5.0]))
        truth = {0.0: 4.0, 1.0: 6.0, 4.5: 4.6}
        for lb in (4.5, 0.0, 1.0):
            inc.offer(self.sol(lb, True), np.array([lb]))
        solved = []

        def evaluate(x, s):
            solved.append(x[0])
            return self.sol(truth[x[0]], False)

        # lower bounds 0 and 1 are tried; 4.5 cannot beat the exact 4.0
        assert inc.settle(evaluate) == 2
        assert solved == [0.0, 1.0] and inc.sol.objective == 4.0 and inc.x[0] == 0.0

    def test_early_worse_than_best_is_dropped(self):
        inc = Incumbent()
        inc.offer(self.sol(1.0, False), np.array([1.0]))
        inc.offer(self.sol(2.0, True), np.array([2.0]))
        assert inc.settle(lambda x, s: pytest.fail("should not be solved")) == 0


def test_oracle_relaxation_shortcut_matches_milp():
    rng = np.random.default_rng(31)
    from capfirm.model import enumerate_trajectories
    from oracles import extensive_form

    for _ in range(6):
        cfg, us = random_instance(rng, 6, gamma_max=2)
        trajs = [p for _, p in enumerate_trajectories(us)]
        fast = extensive_form(trajs, cfg)[0]
        assert fast == pytest.approx(extensive_form(trajs, cfg, lp_first=False)[0], abs=1e-6)


def test_tight_envelope_hiding_worst_case_is_escalated():
    # long periods and high prices push generation duals past the initial
    # M-=1 without any multiplier of the chosen SP solution touching it
    rng = np.random.default_rng(2024)
    for _ in range(13):
        random_instance(rng, 6, gamma_max=3)
    for _ in range(8):
        cfg, us = random_instance(rng, 12, gamma_max=3)
    rep = run_bd(None, us, cfg, EPS)
    assert rep.bigm_history[-1] > 1
    from oracles import brute_force_sp

    assert brute_force_sp(rep.plan.x, us, cfg)[0] == pytest.approx(rep.objective, abs=EPS)
    assert rep.objective == pytest.approx(robust_oracle(us, cfg)[0], abs=EPS)
