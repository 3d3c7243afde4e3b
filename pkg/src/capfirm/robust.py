"""Outer loop shared by the Benders-dual and CCG solvers.

An inner decomposition loop runs at fixed big-M values. Its result is checked
against the full MILP dispatch under the worst trajectory found; on failure
M^- is enlarged (+10 up to 50, +100 beyond, capped at 500) and the inner loop
restarts from scratch.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .model import EngagementPlan, InstanceConfig, UncertaintySetSpec, validate_engagement
from .planner import dispatch_day, plan_day
from .subproblem import BigM, DualSolution, solve_sp

log = logging.getLogger(__name__)

BIGM_CAP = 500.0


@dataclass
class TraceRow:
    restart: int
    iteration: int
    m_neg: float
    mp: float
    sp: float

    @property
    def gap(self) -> float:
        return abs(self.mp - self.sp)


@dataclass
class InnerResult:
    x_best: np.ndarray
    sol_best: DualSolution
    lower_bound: float
    iterations: int
    trace: list[TraceRow]
    converged: bool
    simultaneous_violations: int = 0
    sp_time_limited: int = 0
    blocks: int = 0


@dataclass
class RobustRunReport:
    algorithm: str
    plan: EngagementPlan
    objective: float
    lower_bound: float
    upper_bound: float
    worst_trajectory: np.ndarray
    worst_z: np.ndarray
    iterations: int
    iterations_last: int
    trace: list[TraceRow]
    bigm_history: list[float]
    warm_start_cuts: int
    wall_time: float
    optimal: bool
    milp_check: float
    milp_free: float
    envelope_active: bool
    sp_time_limited: int = 0
    simultaneous_violations: int = 0
    blocks: int = 0
    polished: bool = False

    @property
    def restarts(self) -> int:
        return len(self.bigm_history) - 1

    def write_trace(self, path: str | Path) -> Path:
        """Bounds trace as CSV (restart, iteration, m_neg, MP, SP, gap)."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["restart", "iteration", "m_neg", "mp", "sp", "gap"])
            for r in self.trace:
                w.writerow([r.restart, r.iteration, r.m_neg, f"{r.mp:.10g}", f"{r.sp:.10g}", f"{r.gap:.10g}"])
        return path


def next_bigm(m: float, cap: float = BIGM_CAP) -> float | None:
    if m >= cap:
        return None
    return min(m + (10.0 if m <= 50 else 100.0), cap)


def window_converged(trace: list[TraceRow], window: int, eps: float) -> bool:
    return len(trace) >= window and all(r.gap < eps for r in trace[-window:])


def needs_exact(sol: DualSolution, theta: float, eps: float) -> bool:
    """An early-stopped SP must be solved fully when it cannot certify a gap of eps."""
    return sol.early and sol.objective - theta < eps


class Incumbent:
    """Best plan by worst-case value, with exact evaluation deferred.

    Early- or bound-stopped SP values only bound R(x) from below, so such
    plans are kept as candidates and resolved by :meth:`settle` in order of
    that bound.
    """

    def __init__(self):
        self.x: np.ndarray | None = None
        self.sol: DualSolution | None = None
        self._pending: list[tuple[float, np.ndarray, DualSolution]] = []

    def offer(self, sol: DualSolution, x: np.ndarray) -> None:
        if sol.early or sol.bounded:
            if self.sol is None or sol.objective < self.sol.objective:
                self._pending.append((sol.objective, x.copy(), sol))
        elif self.sol is None or sol.objective < self.sol.objective:
            self.x, self.sol = x.copy(), sol

    def settle(self, evaluate: Callable[[np.ndarray, DualSolution], DualSolution]) -> int:
        """Solve pending candidates exactly while they can still win; returns the count solved."""
        n = 0
        for lb, x, sol in sorted(self._pending, key=lambda c: c[0]):
            if self.sol is not None and lb >= self.sol.objective:
                break
            exact = evaluate(x, sol)
            n += 1
            if self.sol is None or exact.objective < self.sol.objective:
                self.x, self.sol = x, exact
        self._pending.clear()
        return n


def _envelope_hides_worst(res: InnerResult, uset, cfg, eps, m_pos, sp_time_limit) -> bool:
    """Whether a wide envelope finds a worse trajectory for ``x_best`` than the current one did.

    A tight envelope can exclude the true worst trajectory without any
    multiplier of the chosen solution touching it, which the
    envelope-active flag cannot see. Any feasible point of the wide SP
    bounds R(x) from below, so a time-limited incumbent is still evidence.
    """
    m = float(np.min(res.sol_best.bigm.m_neg)) if res.sol_best.bigm is not None else BIGM_CAP
    if uset.is_singleton or m >= BIGM_CAP:
        return False
    wide = solve_sp(EngagementPlan(res.x_best), uset, BigM.uniform(cfg.T, BIGM_CAP, m_pos), cfg, sp_time_limit,
                    z_hints=[res.sol_best.z])
    if wide.objective > res.sol_best.objective + eps:
        log.info("envelope M-=%g hides a worse trajectory (%.4f > %.4f)", m, wide.objective, res.sol_best.objective)
        return True
    return False


def run_robust(
    algorithm: str,
    inner: Callable[[BigM, int], InnerResult],
    uset: UncertaintySetSpec,
    cfg: InstanceConfig,
    eps: float,
    bigm0: tuple[float, float],
    sp_time_limit: float,
    warm_start_cuts: int = 0,
    t_start: float | None = None,
) -> RobustRunReport:
    t_start = time.perf_counter() if t_start is None else t_start
    m_neg, m_pos = float(bigm0[0]), float(bigm0[1])
    history = [m_neg]
    trace: list[TraceRow] = []
    total_iter = sim_viol = tl = 0
    restart = 0
    while True:
        bigm = BigM.uniform(cfg.T, m_neg, m_pos)
        res = inner(bigm, restart)
        trace += res.trace
        total_iter += res.iterations
        sim_viol += res.simultaneous_violations
        tl += res.sp_time_limited
        p_star = uset.trajectory(res.sol_best.z)
        plan_best = EngagementPlan(res.x_best)
        milp_fixed = dispatch_day(plan_best, p_star, cfg).objective
        mp_last = res.trace[-1].mp if res.trace else res.lower_bound
        short = res.sol_best.envelope_active or _envelope_hides_worst(res, uset, cfg, eps, m_pos, sp_time_limit)
        ok = abs(milp_fixed - mp_last) <= eps and not short
        log.info(
            "%s restart %d (M-=%g): %d iterations, LB %.4f UB %.4f MILP %.4f%s",
            algorithm, restart, m_neg, res.iterations, res.lower_bound,
            res.sol_best.objective, milp_fixed, "" if ok else " -> not verified",
        )
        if ok:
            break
        if not res.converged and not short:
            # a larger M cannot help an inner loop that ran out of iterations
            log.warning("%s: inner loop did not converge; no big-M escalation", algorithm)
            break
        nxt = next_bigm(m_neg)
        if nxt is None:
            log.warning("%s: big-M cap reached without verified convergence", algorithm)
            break
        m_neg = nxt
        history.append(m_neg)
        restart += 1

    # plan selection: the MILP plan against the final worst trajectory is
    # adopted when its own worst case is no worse than the incumbent
    free = plan_day(p_star, cfg)
    x_final, sol_final, polished = res.x_best, res.sol_best, False
    if not np.allclose(free.plan.x, res.x_best, atol=1e-7):
        alt = solve_sp(free.plan, uset, bigm, cfg, sp_time_limit)
        if alt.objective <= res.sol_best.objective + 1e-3 * eps and not alt.time_limited:
            x_final, sol_final, polished = free.plan.x, alt, True
    plan = EngagementPlan(x_final)
    viol = validate_engagement(plan, cfg)
    if viol:
        log.error("%s produced an invalid engagement: %s", algorithm, viol[:3])
    return RobustRunReport(
        algorithm=algorithm,
        plan=plan,
        objective=sol_final.objective,
        lower_bound=res.lower_bound,
        upper_bound=res.sol_best.objective,
        worst_trajectory=uset.trajectory(sol_final.z),
        worst_z=sol_final.z,
        iterations=total_iter,
        iterations_last=res.iterations,
        trace=trace,
        bigm_history=history,
        warm_start_cuts=warm_start_cuts,
        wall_time=time.perf_counter() - t_start,
        optimal=ok and res.converged,
        milp_check=milp_fixed,
        milp_free=free.objective,
        envelope_active=res.sol_best.envelope_active,
        sp_time_limited=tl,
        simultaneous_violations=sim_viol,
        blocks=res.blocks,
        polished=polished,
    )
