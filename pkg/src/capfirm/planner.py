"""Deterministic day-ahead planner, receding-horizon controller and oracle."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .model import (
    DayForecast,
    DispatchSchedule,
    EngagementPlan,
    InstanceConfig,
    objective_value,
)
from .solver import ModelBuilder, SolveResult, Status, solve

log = logging.getLogger(__name__)


class PlanningError(RuntimeError):
    pass


@dataclass
class DispatchBlock:
    """Column indices of one dispatch block inside a ModelBuilder."""

    y: np.ndarray
    y_g: np.ndarray
    y_cha: np.ndarray
    y_dis: np.ndarray
    y_b: np.ndarray | None
    soc: np.ndarray
    dx_neg: np.ndarray
    dx_pos: np.ndarray
    cost_idx: np.ndarray
    cost_coef: np.ndarray
    slack: np.ndarray | None = None

    def schedule(self, res: SolveResult, t0: int = 0) -> DispatchSchedule:
        yb = res[self.y_b] if self.y_b is not None else (res[self.y_cha] > 0).astype(float)
        slack = float(res[self.slack].sum()) if self.slack is not None else 0.0
        return DispatchSchedule(
            y=res[self.y],
            y_g=res[self.y_g],
            y_cha=res[self.y_cha],
            y_dis=res[self.y_dis],
            y_b=np.round(yb),
            soc=res[self.soc],
            dx_neg=res[self.dx_neg],
            dx_pos=res[self.dx_pos],
            t0=t0,
            terminal_slack=slack,
        )


def terminal_slack_price(cfg: InstanceConfig) -> float:
    """Per-kWh price of missing the final state of charge in the controller."""
    return 10.0 * cfg.beta * float(cfg.price.max()) * cfg.dt


def add_dispatch_block(
    mb: ModelBuilder,
    cfg: InstanceConfig,
    p: np.ndarray,
    x,
    *,
    x_is_var: bool,
    t0: int = 0,
    soc0: float | None = None,
    relax: bool = False,
    slack_price: float | None = None,
    tag: str = "",
) -> DispatchBlock:
    """Add the dispatch set Omega(x, p) over periods ``t0 .. T-1``.

    ``x`` is either an index array of engagement columns (``x_is_var``) or a
    fixed numeric plan covering the same periods. ``relax`` drops the
    charge/discharge binaries, leaving only the power limits.
    """
    b = cfg.bess
    n = cfg.T - t0
    sl = slice(t0, cfg.T)
    p = np.asarray(p, dtype=float)
    if p.size != n:
        raise ValueError(f"generation trajectory must cover {n} periods, got {p.size}")
    x = np.asarray(x)
    s_init = b.s_init if soc0 is None else float(soc0)

    y = mb.add_vars(f"y{tag}", n, cfg.y_min[sl], cfg.y_max[sl])
    y_g = mb.add_vars(f"yG{tag}", n, 0.0, np.maximum(p, 0.0))
    y_cha = mb.add_vars(f"ycha{tag}", n, 0.0, b.s_cha)
    y_dis = mb.add_vars(f"ydis{tag}", n, 0.0, b.s_dis)
    soc = mb.add_vars(f"ys{tag}", n, b.s_min, b.s_max)
    dxn = mb.add_vars(f"dxneg{tag}", n, 0.0)
    dxp = mb.add_vars(f"dxpos{tag}", n, 0.0)
    y_b = None if relax else mb.add_vars(f"yb{tag}", n, binary=True)

    tol = cfg.tolerance
    ec, ed = b.eta_c * cfg.dt, cfg.dt / b.eta_d
    for k in range(n):
        mb.add_constr([y[k], y_g[k], y_dis[k], y_cha[k]], [1, -1, -1, 1], "==", 0.0, "balance")
        if y_b is not None:
            mb.add_constr([y_cha[k], y_b[k]], [1, -b.s_cha], "<=", 0.0, "cha")
            mb.add_constr([y_dis[k], y_b[k]], [1, b.s_dis], "<=", b.s_dis, "dis")
        if k == 0:
            mb.add_constr([soc[0], y_cha[0], y_dis[0]], [1, -ec, ed], "==", s_init, "soc_init")
        else:
            mb.add_constr([soc[k], soc[k - 1], y_cha[k], y_dis[k]], [1, -1, -ec, ed], "==", 0.0, "soc")
        # dx_neg >= (x - tol) - y ; dx_pos >= y - (x + tol)
        if x_is_var:
            mb.add_constr([dxn[k], y[k], int(x[k])], [1, 1, -1], ">=", -tol, "under")
            mb.add_constr([dxp[k], y[k], int(x[k])], [1, -1, 1], ">=", -tol, "over")
        else:
            mb.add_constr([dxn[k], y[k]], [1, 1], ">=", float(x[k]) - tol, "under")
            mb.add_constr([dxp[k], y[k]], [1, -1], ">=", -float(x[k]) - tol, "over")
    slack = None
    if slack_price is None:
        mb.add_constr([soc[-1]], [1.0], "==", b.s_final, "soc_final")
    else:
        slack = mb.add_vars(f"sfslack{tag}", 2, 0.0)
        mb.add_constr([soc[-1], slack[0], slack[1]], [1, 1, -1], "==", b.s_final, "soc_final")

    v = cfg.unit_value[sl]
    cost_idx = np.concatenate([y, dxn, dxp])
    cost_coef = np.concatenate([-v, cfg.beta * v, cfg.beta * v])
    if slack is not None:
        cost_idx = np.concatenate([cost_idx, slack])
        cost_coef = np.concatenate([cost_coef, [slack_price, slack_price]])
    return DispatchBlock(y, y_g, y_cha, y_dis, y_b, soc, dxn, dxp, cost_idx, cost_coef, slack)


def add_engagement_vars(mb: ModelBuilder, cfg: InstanceConfig) -> np.ndarray:
    """Engagement columns with the ramp and bound rules."""
    x = mb.add_vars("x", cfg.T, cfg.x_min, cfg.x_max)
    for t in range(1, cfg.T):
        mb.add_range([x[t], x[t - 1]], [1, -1], -cfg.ramp[t], cfg.ramp[t], "ramp")
    if cfg.x_prev is not None:
        mb.add_range([x[0]], [1.0], cfg.x_prev - cfg.ramp[0], cfg.x_prev + cfg.ramp[0], "ramp0")
    return x


@dataclass
class PlanResult:
    plan: EngagementPlan
    schedule: DispatchSchedule
    objective: float
    status: Status


def plan_day(forecast, cfg: InstanceConfig, time_limit: float | None = None) -> PlanResult:
    """Deterministic MILP planner against a single generation trajectory."""
    forecast = np.asarray(forecast, dtype=float)
    if forecast.size != cfg.T:
        raise ValueError(f"forecast length {forecast.size} != T={cfg.T}")
    mb = ModelBuilder("plan_day", time_limit=time_limit)
    x = add_engagement_vars(mb, cfg)
    blk = add_dispatch_block(mb, cfg, forecast, x, x_is_var=True)
    mb.add_objective(blk.cost_idx, blk.cost_coef)
    res = solve(mb)
    if not res.status.has_solution:
        raise PlanningError(f"planner failed: {res.status.value} ({res.message})")
    plan = EngagementPlan(res[x])
    sched = blk.schedule(res)
    return PlanResult(plan, sched, objective_value(plan, sched, cfg), res.status)


def dispatch_day(plan: EngagementPlan, p, cfg: InstanceConfig, relax: bool = False) -> PlanResult:
    """Best full-day dispatch for a fixed engagement against trajectory ``p``."""
    mb = ModelBuilder("dispatch_day")
    blk = add_dispatch_block(mb, cfg, np.asarray(p, dtype=float), plan.x, x_is_var=False, relax=relax)
    mb.add_objective(blk.cost_idx, blk.cost_coef)
    res = solve(mb)
    if not res.status.has_solution:
        raise PlanningError(f"dispatch failed: {res.status.value} ({res.message})")
    sched = blk.schedule(res)
    return PlanResult(plan, sched, objective_value(plan, sched, cfg), res.status)


def oracle_plan(fc: DayForecast, cfg: InstanceConfig) -> PlanResult:
    """Planner with perfect knowledge of the realised generation."""
    return plan_day(fc.observation, cfg)


def controller_step(
    plan: EngagementPlan, t0: int, soc0: float, forecast, cfg: InstanceConfig
) -> DispatchSchedule:
    """Set-points for periods ``t0 .. T-1``; only the first one is meant to be applied.

    The final state-of-charge target is softened by a priced slack so an
    unreachable target never makes the step infeasible; the slack used is
    reported in ``terminal_slack``.
    """
    b = cfg.bess
    if not b.s_min - 1e-6 <= soc0 <= b.s_max + 1e-6:
        raise ValueError(f"soc0={soc0} outside [{b.s_min}, {b.s_max}]")
    soc0 = min(max(soc0, b.s_min), b.s_max)
    mb = ModelBuilder("controller")
    blk = add_dispatch_block(
        mb,
        cfg,
        np.asarray(forecast, dtype=float),
        plan.x[t0:],
        x_is_var=False,
        t0=t0,
        soc0=soc0,
        slack_price=terminal_slack_price(cfg),
    )
    mb.add_objective(blk.cost_idx, blk.cost_coef)
    res = solve(mb)
    if not res.status.has_solution:
        raise PlanningError(f"controller failed at t={t0}: {res.status.value}")
    sched = blk.schedule(res, t0=t0)
    if sched.terminal_slack > 1e-6:
        log.warning("controller t=%d: final state of charge unreachable (slack %.4g kWh)", t0, sched.terminal_slack)
    return sched


def simulate_controller_day(
    plan: EngagementPlan, fc: DayForecast, cfg: InstanceConfig, intraday: np.ndarray | None = None
) -> tuple[np.ndarray, list[DispatchSchedule]]:
    """Run the receding-horizon controller over the day.

    The executing period sees the realised generation; later periods use the
    intraday forecast issued at the current period.
    """
    intraday = fc.intraday if intraday is None else np.asarray(intraday, dtype=float)
    b = cfg.bess
    soc = b.s_init
    y_m = np.zeros(cfg.T)
    schedules = []
    for t in range(cfg.T):
        fcast = np.clip(intraday[t, t:].copy(), 0.0, cfg.Pc)
        fcast[0] = min(max(fc.observation[t], 0.0), cfg.Pc)
        sched = controller_step(plan, t, soc, fcast, cfg)
        schedules.append(sched)
        cha, dis = sched.y_cha[0], sched.y_dis[0]
        # applied set-points; the balance fixes the net power
        y_m[t] = sched.y_g[0] + dis - cha
        soc = soc + cfg.dt * (b.eta_c * cha - dis / b.eta_d)
        soc = min(max(soc, b.s_min), b.s_max)
    return y_m, schedules
