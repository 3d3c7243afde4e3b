"""Benders-dual cutting-plane solver for the robust engagement problem."""

from __future__ import annotations

import logging
import time

import numpy as np

from .model import DayForecast, EngagementPlan, InstanceConfig, UncertaintySetSpec
from .planner import add_engagement_vars, plan_day
from .robust import Incumbent, InnerResult, needs_exact, RobustRunReport, TraceRow, run_robust, window_converged
from .solver import ModelBuilder, solve
from .subproblem import BigM, SubproblemError, check_no_simultaneous, solve_sp

log = logging.getLogger(__name__)

Cut = tuple[float, np.ndarray]


def nonnull_periods(median: np.ndarray, Pc: float) -> np.ndarray:
    return np.flatnonzero(median > 1e-3 * Pc)


def warm_start_trajectories(uset: UncertaintySetSpec, Pc: float) -> list[np.ndarray]:
    """Trajectories assumed close to the worst case.

    Windows of ``gamma`` consecutive periods sliding from the first non-null
    median period are set to the lower bound, plus one trajectory lowering
    the ``gamma`` largest median values.
    """
    g = uset.gamma
    active = nonnull_periods(uset.median, Pc)
    if g < 1 or active.size == 0:
        return []
    t1, tf = int(active[0]), int(active[-1])
    m = tf - (t1 + g - 1)
    out = []
    for k in range(1, m + 1):
        z = np.zeros(uset.T)
        lo = t1 + (k - 1)
        z[lo : lo + g] = 1.0
        out.append(uset.trajectory(z))
    z = np.zeros(uset.T)
    z[np.argsort(-uset.median, kind="stable")[:g]] = 1.0
    out.append(uset.trajectory(z))
    return out


def warm_start_cuts(fc: DayForecast | None, uset: UncertaintySetSpec, cfg: InstanceConfig) -> list[Cut]:
    """Initial optimality cuts from the warm-start trajectories.

    For each trajectory the deterministic plan is computed and the dual of
    its dispatch (a singleton uncertainty set) gives the cut.
    """
    cuts = []
    for p in warm_start_trajectories(uset, cfg.Pc):
        x_i = plan_day(p, cfg).plan
        single = UncertaintySetSpec(p, np.zeros(cfg.T), 0)
        sol = solve_sp(x_i, single, None, cfg, fixed_z=np.zeros(cfg.T))
        cuts.append((sol.cut_const, sol.cut_coef))
    return cuts


def solve_master(cfg: InstanceConfig, cuts: list[Cut]) -> tuple[float, np.ndarray]:
    """min theta over the engagement set subject to the optimality cuts."""
    mb = ModelBuilder("bd_master")
    x = add_engagement_vars(mb, cfg)
    theta = mb.add_var("theta", -cfg.revenue_bound(), np.inf)
    for const, coef in cuts:
        mb.add_constr(np.concatenate([[theta], x]), np.concatenate([[1.0], -coef]), ">=", const, "cut")
    mb.add_objective(theta, 1.0)
    res = solve(mb)
    if not res.status.has_solution:
        raise SubproblemError(f"master problem {res.status.value}")
    return float(res[theta]), res[x]


def run_bd(
    fc: DayForecast | None,
    uset: UncertaintySetSpec,
    cfg: InstanceConfig,
    eps: float = 0.5,
    bigm0: tuple[float, float] = (1.0, 0.0),
    *,
    warm_start: bool = True,
    window: int = 10,
    max_iter: int = 500,
    sp_time_limit: float = 10.0,
) -> RobustRunReport:
    """Benders-dual cutting plane with big-M escalation.

    The inner loop stops once the last ``window`` gaps |MP - SP| are all
    below ``eps``. Warm-start cuts survive big-M restarts, SP cuts do not.
    """
    t_start = time.perf_counter()
    warm = warm_start_cuts(fc, uset, cfg) if warm_start else []

    def inner(bigm: BigM, restart: int) -> InnerResult:
        cuts = list(warm)
        x = solve_master(cfg, cuts)[1] if cuts else cfg.x_min.copy()
        trace: list[TraceRow] = []
        inc = Incumbent()
        sim = tl = 0
        theta = solve_master(cfg, cuts)[0] if cuts else -cfg.revenue_bound()
        converged = False
        hints: list[np.ndarray] = []
        for j in range(max_iter):
            plan = EngagementPlan(x)
            # stop the SP once it proves the gap to the current master bound
            sol = solve_sp(plan, uset, bigm, cfg, sp_time_limit, z_hints=hints, target=theta + eps,
                           bound=theta + eps)
            cuts.append((sol.cut_const, sol.cut_coef))
            theta_new, x_new = solve_master(cfg, cuts)
            if needs_exact(sol, theta_new, eps):
                sol = solve_sp(plan, uset, bigm, cfg, sp_time_limit, z_hints=[sol.z], bound=theta_new + eps)
                cuts.append((sol.cut_const, sol.cut_coef))
                theta_new, x_new = solve_master(cfg, cuts)
            tl += sol.time_limited
            inc.offer(sol, x)
            ok, _, _ = check_no_simultaneous(uset.trajectory(sol.z), x, cfg)
            sim += not ok
            hints = [sol.z]
            theta, x = theta_new, x_new
            trace.append(TraceRow(restart, j, float(bigm.m_neg[0]), theta, sol.objective))
            log.debug("BD it %d: MP %.4f SP %.4f (%.2fs%s)", j, theta, sol.objective, sol.wall_time,
                      ", early" if sol.early else ", bounded" if sol.bounded else "")
            if window_converged(trace, window, eps):
                converged = True
                break
        if not converged:
            log.warning("BD inner loop hit %d iterations", max_iter)

        def evaluate(xc, s):
            nonlocal tl
            exact = solve_sp(EngagementPlan(xc), uset, bigm, cfg, sp_time_limit, z_hints=[s.z])
            tl += exact.time_limited
            return exact

        inc.settle(evaluate)
        return InnerResult(inc.x, inc.sol, theta, len(trace), trace, converged, sim, tl)

    return run_robust("bd", inner, uset, cfg, eps, bigm0, sp_time_limit, len(warm), t_start)
