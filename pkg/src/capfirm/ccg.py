"""Column-and-constraint generation solver for the robust engagement problem."""

from __future__ import annotations

import logging
import time

import numpy as np

from .model import DayForecast, EngagementPlan, InstanceConfig, UncertaintySetSpec
from .planner import add_dispatch_block, add_engagement_vars
from .robust import Incumbent, InnerResult, needs_exact, RobustRunReport, TraceRow, run_robust, window_converged
from .solver import ModelBuilder, solve
from .subproblem import BigM, SubproblemError, check_no_simultaneous, solve_sp

log = logging.getLogger(__name__)


class CcgMaster:
    """Primal master: engagement, epigraph and one dispatch block per scenario."""

    def __init__(self, cfg: InstanceConfig):
        self.cfg = cfg
        self.scenarios: list[np.ndarray] = []

    def add_scenario(self, p: np.ndarray) -> None:
        self.scenarios.append(np.asarray(p, dtype=float))

    def solve(self) -> tuple[float, np.ndarray]:
        cfg = self.cfg
        mb = ModelBuilder("ccg_master")
        x = add_engagement_vars(mb, cfg)
        theta = mb.add_var("theta", -cfg.revenue_bound(), np.inf)
        for s, p in enumerate(self.scenarios):
            blk = add_dispatch_block(mb, cfg, p, x, x_is_var=True, tag=f"_{s}")
            mb.add_constr(np.concatenate([[theta], blk.cost_idx]), np.concatenate([[1.0], -blk.cost_coef]), ">=", 0.0)
        mb.add_objective(theta, 1.0)
        res = solve(mb)
        if not res.status.has_solution:
            raise SubproblemError(f"CCG master {res.status.value}")
        return float(res[theta]), res[x]


def run_ccg(
    fc: DayForecast | None,
    uset: UncertaintySetSpec,
    cfg: InstanceConfig,
    eps: float = 0.5,
    bigm0: tuple[float, float] = (1.0, 0.0),
    *,
    window: int = 2,
    max_iter: int = 50,
    sp_time_limit: float = 10.0,
) -> RobustRunReport:
    """CCG loop; stops on two consecutive small gaps, a repeated scenario, or ``max_iter``."""
    t_start = time.perf_counter()

    def inner(bigm: BigM, restart: int) -> InnerResult:
        master = CcgMaster(cfg)
        seen: set[bytes] = set()
        x = cfg.x_min.copy()
        trace: list[TraceRow] = []
        inc = Incumbent()
        theta = -cfg.revenue_bound()
        sim = tl = 0
        converged = False

        def _account(sol, x):
            nonlocal sim, tl
            tl += sol.time_limited
            inc.offer(sol, x)
            ok, _, _ = check_no_simultaneous(uset.trajectory(sol.z), x, cfg)
            sim += not ok

        hints: list[np.ndarray] = []
        for j in range(max_iter):
            plan = EngagementPlan(x)
            sol = solve_sp(plan, uset, bigm, cfg, sp_time_limit, z_hints=hints, target=theta + eps,
                           bound=theta + eps)
            key = sol.z.astype(np.int8).tobytes()
            if sol.early and key in seen:
                sol = solve_sp(plan, uset, bigm, cfg, sp_time_limit, z_hints=[sol.z], bound=theta + eps)
                key = sol.z.astype(np.int8).tobytes()
            if key in seen:
                # scenario already in the master: theta already bounds R(x)
                _account(sol, x)
                trace.append(TraceRow(restart, j, float(bigm.m_neg[0]), theta, sol.objective))
                converged = True
                break
            seen.add(key)
            master.add_scenario(uset.trajectory(sol.z))
            theta_new, x_new = master.solve()
            if needs_exact(sol, theta_new, eps):
                sol = solve_sp(plan, uset, bigm, cfg, sp_time_limit, z_hints=[sol.z], bound=theta_new + eps)
                key = sol.z.astype(np.int8).tobytes()
                if key not in seen:
                    seen.add(key)
                    master.add_scenario(uset.trajectory(sol.z))
                    theta_new, x_new = master.solve()
            _account(sol, x)
            hints = [sol.z]
            theta, x = theta_new, x_new
            trace.append(TraceRow(restart, j, float(bigm.m_neg[0]), theta, sol.objective))
            log.debug("CCG it %d: MP %.4f SP %.4f (%.2fs%s)", j, theta, sol.objective, sol.wall_time,
                      ", early" if sol.early else ", bounded" if sol.bounded else "")
            if window_converged(trace, window, eps):
                converged = True
                break
        if not converged:
            log.warning("CCG inner loop hit %d iterations", max_iter)

        def evaluate(xc, s):
            nonlocal tl
            exact = solve_sp(EngagementPlan(xc), uset, bigm, cfg, sp_time_limit, z_hints=[s.z])
            tl += exact.time_limited
            return exact

        inc.settle(evaluate)
        return InnerResult(inc.x, inc.sol, theta, len(trace), trace, converged, sim, tl, len(master.scenarios))

    return run_robust("ccg", inner, uset, cfg, eps, bigm0, sp_time_limit, 0, t_start)
