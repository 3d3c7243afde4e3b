"""Worst-case dispatch problem in dual space.

The relaxed dispatch LP (charge/discharge binaries dropped) is written as

    min c.v   s.t.  A_le v <= b_le(x, p),  A_eq v = b_eq,  v_j >= 0 (j != y)

and dualised mechanically: multipliers of ``<=`` rows are non-positive,
multipliers of equality rows are free, and each primal column gives one dual
row (``<=`` for sign-constrained columns, ``==`` for the free net power).
The generation bound rows carry ``p = median - z * dev``; the bilinear
product ``z * phi_yG`` is replaced by ``alpha`` under a big-M envelope.
"""

from __future__ import annotations

import logging
import tempfile
import time
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .model import EngagementPlan, InstanceConfig, UncertaintySetSpec
from .planner import add_dispatch_block
from .solver import LpSession, ModelBuilder, SolveResult, Status, solve

log = logging.getLogger(__name__)

# primal column blocks, each of length T
COLUMNS = ("y", "yG", "cha", "dis", "s", "dxneg", "dxpos")
# dual families: (name, kind) with kind "le" (multiplier <= 0) or "eq" (free)
FAMILIES = (
    ("cha", "le"),
    ("dis", "le"),
    ("smin", "le"),
    ("smax", "le"),
    ("y", "eq"),
    ("ymin", "le"),
    ("ymax", "le"),
    ("si", "eq"),
    ("ys", "eq"),
    ("sf", "eq"),
    ("dxneg", "le"),
    ("dxpos", "le"),
    ("yG", "le"),
)


class SubproblemError(RuntimeError):
    """Fatal SP outcome (unbounded, infeasible, solver error)."""

    def __init__(self, msg: str, dump: Path | None = None):
        super().__init__(msg if dump is None else f"{msg} (model dumped to {dump})")
        self.dump = dump


@dataclass(frozen=True)
class BigM:
    m_neg: np.ndarray
    m_pos: np.ndarray

    @classmethod
    def uniform(cls, T: int, m_neg: float = 1.0, m_pos: float = 0.0) -> "BigM":
        return cls(np.full(T, float(m_neg)), np.full(T, float(m_pos)))

    def __post_init__(self):
        mn, mp = np.array(self.m_neg, dtype=float), np.array(self.m_pos, dtype=float)
        if np.any(mn < 0) or np.any(mp < 0):
            raise ValueError("big-M values must be non-negative")
        if np.any(mn > 500 + 1e-9):
            raise ValueError("M^- is capped at 500")
        object.__setattr__(self, "m_neg", mn)
        object.__setattr__(self, "m_pos", mp)


@dataclass
class RelaxedPrimal:
    """Matrix form of the relaxed dispatch LP for a fixed configuration."""

    T: int
    A: sp.csr_matrix
    kinds: np.ndarray  # per row: True for equality rows
    b0: np.ndarray  # constant right-hand side
    bx: sp.csr_matrix  # rhs dependence on x: b = b0 + bx @ x (+ p on yG rows)
    cost: np.ndarray
    free_cols: np.ndarray  # bool per primal column
    rows: dict[str, np.ndarray]  # family -> row indices
    cols: dict[str, np.ndarray]  # block -> column indices


@lru_cache(maxsize=32)
def _relaxed_primal_cached(key) -> RelaxedPrimal:
    cfg = key.cfg
    T, b = cfg.T, cfg.bess
    col = {name: np.arange(k * T, (k + 1) * T) for k, name in enumerate(COLUMNS)}
    n = len(COLUMNS) * T
    ri, ci, vals, b0, eq = [], [], [], [], []
    bx_r, bx_c, bx_v = [], [], []
    rows: dict[str, list[int]] = {f: [] for f, _ in FAMILIES}

    def row(fam, entries, rhs, is_eq):
        r = len(b0)
        for c, v in entries:
            ri.append(r)
            ci.append(c)
            vals.append(v)
        b0.append(rhs)
        eq.append(is_eq)
        rows[fam].append(r)
        return r

    ec, ed = b.eta_c * cfg.dt, cfg.dt / b.eta_d
    tol = cfg.tolerance
    for t in range(T):
        row("cha", [(col["cha"][t], 1.0)], b.s_cha, False)
    for t in range(T):
        row("dis", [(col["dis"][t], 1.0)], b.s_dis, False)
    for t in range(T):
        row("smin", [(col["s"][t], -1.0)], -b.s_min, False)
    for t in range(T):
        row("smax", [(col["s"][t], 1.0)], b.s_max, False)
    for t in range(T):
        row(
            "y",
            [(col["y"][t], 1.0), (col["yG"][t], -1.0), (col["dis"][t], -1.0), (col["cha"][t], 1.0)],
            0.0,
            True,
        )
    for t in range(T):
        row("ymin", [(col["y"][t], -1.0)], -cfg.y_min[t], False)
    for t in range(T):
        row("ymax", [(col["y"][t], 1.0)], cfg.y_max[t], False)
    row("si", [(col["s"][0], 1.0), (col["cha"][0], -ec), (col["dis"][0], ed)], b.s_init, True)
    for t in range(1, T):
        row(
            "ys",
            [(col["s"][t], 1.0), (col["s"][t - 1], -1.0), (col["cha"][t], -ec), (col["dis"][t], ed)],
            0.0,
            True,
        )
    row("sf", [(col["s"][T - 1], 1.0)], b.s_final, True)
    for t in range(T):
        r = row("dxneg", [(col["dxneg"][t], -1.0), (col["y"][t], -1.0)], tol, False)
        bx_r.append(r), bx_c.append(t), bx_v.append(-1.0)
    for t in range(T):
        r = row("dxpos", [(col["dxpos"][t], -1.0), (col["y"][t], 1.0)], tol, False)
        bx_r.append(r), bx_c.append(t), bx_v.append(1.0)
    for t in range(T):
        row("yG", [(col["yG"][t], 1.0)], 0.0, False)

    m = len(b0)
    A = sp.csr_matrix((vals, (ri, ci)), shape=(m, n))
    bx = sp.csr_matrix((bx_v, (bx_r, bx_c)), shape=(m, T))
    v = cfg.unit_value
    cost = np.zeros(n)
    cost[col["y"]] = -v
    cost[col["dxneg"]] = cfg.beta * v
    cost[col["dxpos"]] = cfg.beta * v
    free = np.zeros(n, dtype=bool)
    free[col["y"]] = True
    return RelaxedPrimal(
        T, A, np.asarray(eq), np.asarray(b0), bx, cost, free,
        {k: np.asarray(v_, dtype=np.int64) for k, v_ in rows.items()}, col,
    )


class _CfgKey:
    """Hashable wrapper so a config can key the cache by identity."""

    __slots__ = ("cfg",)

    def __init__(self, cfg):
        self.cfg = cfg

    def __hash__(self):
        return id(self.cfg)

    def __eq__(self, other):
        return self.cfg is other.cfg


def relaxed_primal(cfg: InstanceConfig) -> RelaxedPrimal:
    return _relaxed_primal_cached(_CfgKey(cfg))


@dataclass
class DualSolution:
    phi: dict[str, np.ndarray]
    alpha: np.ndarray
    z: np.ndarray
    objective: float
    status: Status
    cut_const: float
    cut_coef: np.ndarray
    envelope_active: bool = False
    wall_time: float = 0.0
    bigm: BigM | None = None
    # stopped at the requested target: objective is a lower bound on the optimum
    early: bool = False
    # stopped once the optimum was proved no larger than the requested bound
    bounded: bool = False
    upper: float = float("nan")

    @property
    def time_limited(self) -> bool:
        return self.status == Status.TIME_LIMIT_FEASIBLE and not (self.early or self.bounded)

    def cut_value(self, x) -> float:
        """G(x; alpha, phi): the optimality cut evaluated at engagement ``x``."""
        return float(self.cut_const + self.cut_coef @ np.asarray(x, dtype=float))


@dataclass
class _SPModel:
    mb: ModelBuilder
    phi: np.ndarray
    alpha: np.ndarray | None
    z: np.ndarray | None
    primal: RelaxedPrimal
    fixed_z: np.ndarray | None = None
    meta: dict = field(default_factory=dict)


def build_sp(
    x: EngagementPlan,
    uset: UncertaintySetSpec,
    bigm: BigM | None,
    cfg: InstanceConfig,
    *,
    fixed_z=None,
    time_limit: float | None = 10.0,
) -> _SPModel:
    """Maximisation MILP over (phi, alpha, z) giving the worst-case dispatch cost R(x).

    With ``fixed_z`` the trajectory is pinned; ``bigm=None`` is then allowed
    and the bilinear term is substituted exactly, leaving a plain dual LP.
    """
    pr = relaxed_primal(cfg)
    T = cfg.T
    if uset.T != T:
        raise ValueError("uncertainty set and config disagree on T")
    if bigm is None and fixed_z is None:
        raise ValueError("the budgeted SP needs big-M values")
    xv = np.asarray(x.x if isinstance(x, EngagementPlan) else x, dtype=float)
    mb = ModelBuilder("worst_case_dispatch", sense="max", time_limit=time_limit)
    m = pr.A.shape[0]
    lb = np.where(pr.kinds, -np.inf, -np.inf)
    ub = np.where(pr.kinds, np.inf, 0.0)
    phi = mb.add_vars("phi", m, lb, ub)

    # one dual row per primal column
    AT = pr.A.tocsc()
    for j in range(AT.shape[1]):
        s, e = AT.indptr[j], AT.indptr[j + 1]
        idx, val = phi[AT.indices[s:e]], AT.data[s:e]
        mb.add_constr(idx, val, "==" if pr.free_cols[j] else "<=", pr.cost[j], f"dual_{j}")

    rhs = pr.b0 + pr.bx @ xv
    yg_rows = pr.rows["yG"]
    mb.add_objective(phi, rhs)
    alpha = z = None
    if fixed_z is not None:
        zf = np.asarray(fixed_z, dtype=float)
        if bigm is None:
            mb.add_objective(phi[yg_rows], uset.trajectory(zf))
        else:
            z = mb.add_vars("z", T, zf, zf)
    if bigm is not None:
        if z is None:
            zub = (uset.dev > 0).astype(float)
            z = mb.add_vars("z", T, 0.0, zub, binary=True)
            mb.add_constr(z, 1.0, "<=", float(uset.gamma), "budget")
        alpha = mb.add_vars("alpha", T, -bigm.m_neg, bigm.m_pos)
        mb.add_objective(phi[yg_rows], uset.median)
        mb.add_objective(alpha, -uset.dev)
        for t in range(T):
            a, f, zz = alpha[t], phi[yg_rows[t]], z[t]
            mn, mp = bigm.m_neg[t], bigm.m_pos[t]
            mb.add_constr([a, zz], [1.0, mn], ">=", 0.0, "env_a_lo")
            mb.add_constr([a, zz], [1.0, -mp], "<=", 0.0, "env_a_hi")
            mb.add_constr([f, a, zz], [1.0, -1.0, -mn], ">=", -mn, "env_f_lo")
            mb.add_constr([f, a, zz], [1.0, -1.0, mp], "<=", mp, "env_f_hi")
    return _SPModel(mb, phi, alpha, z, pr, None if fixed_z is None else np.asarray(fixed_z, float))


def solve_sp(
    x: EngagementPlan,
    uset: UncertaintySetSpec,
    bigm: BigM | None,
    cfg: InstanceConfig,
    time_limit: float | None = 10.0,
    *,
    fixed_z=None,
    dump_dir: str | Path | None = None,
    z_hints=(),
    target: float | None = None,
    bound: float | None = None,
) -> DualSolution:
    """Solve the worst-case dispatch problem.

    Before the MILP, a cheap ascent over trajectories (each step an LP with z
    fixed, the next z taken from the linearisation given by its duals) is run
    from every vector in ``z_hints`` and from :func:`ascent_starts`; the best
    point found is passed to the MILP as initial incumbent.

    With ``target`` the MILP returns as soon as an incumbent reaches it; the
    result is then flagged ``early`` and only bounds the optimum from below.
    With ``bound`` it returns once the optimum is proved not to exceed it
    (flagged ``bounded``; ``upper`` holds the proof).
    """
    spm = build_sp(x, uset, bigm, cfg, fixed_z=fixed_z, time_limit=time_limit)
    if target is not None and spm.z is not None:
        spm.mb.objective_target = float(target)
    if bound is not None and spm.z is not None:
        spm.mb.bound_stop = float(bound)
    start = None
    t0 = time.perf_counter()
    if spm.z is not None and fixed_z is None and not uset.is_singleton:
        start_val, start = _ascent_start(spm, uset, [*z_hints, *ascent_starts(uset)])
        if target is not None and start is not None and start_val >= target:
            # the ascent point already reaches the target: the MILP adds nothing
            res = SolveResult(Status.TIME_LIMIT_FEASIBLE, start_val, start, time.perf_counter() - t0,
                              "target reached by ascent", True)
            return _dual_solution(spm, res, x, uset, bigm, cfg)
    res = solve(spm.mb, start=start)
    if not res.status.has_solution:
        dump = Path(dump_dir or tempfile.mkdtemp(prefix="capfirm_sp_")) / "worst_case_dispatch.lp"
        spm.mb.write_lp(dump)
        if res.status == Status.UNBOUNDED:
            raise SubproblemError("worst-case dispatch unbounded: recourse is not complete", dump)
        raise SubproblemError(f"worst-case dispatch failed: {res.status.value} ({res.message})", dump)
    if res.status == Status.TIME_LIMIT_FEASIBLE and not (res.target_reached or res.bound_reached):
        log.warning("SP hit its time limit; using the incumbent")
    return _dual_solution(spm, res, x, uset, bigm, cfg)


def _dual_solution(spm, res: SolveResult, x, uset, bigm, cfg) -> DualSolution:
    pr = spm.primal
    phi_v = res[spm.phi]
    phi = {fam: phi_v[rows] for fam, rows in pr.rows.items()}
    T = cfg.T
    if spm.z is not None:
        z = np.round(res[spm.z])
    else:
        z = spm.fixed_z
    if spm.alpha is not None:
        alpha = res[spm.alpha]
    else:
        alpha = z * phi["yG"]
    xv = np.asarray(x.x if isinstance(x, EngagementPlan) else x, dtype=float)
    # G(x) = phi . b0 + phi_yG . median - alpha . dev + (bx^T phi) . x
    cut_coef = pr.bx.T @ phi_v
    cut_const = float(phi_v @ pr.b0 + phi["yG"] @ uset.median - alpha @ uset.dev)
    env = False
    if bigm is not None:
        p = uset.trajectory(z)
        relevant = p > 1e-9 * max(cfg.Pc, 1.0)
        env = bool(np.any(relevant & (np.abs(phi["yG"]) >= 0.999 * bigm.m_neg) & (bigm.m_neg > 0)))
    obj = res.objective
    check = cut_const + cut_coef @ xv
    if abs(check - obj) > 1e-6 * (1 + abs(obj)):
        log.debug("SP objective %.9g vs reconstructed cut %.9g", obj, check)
    upper = obj if res.status == Status.OPTIMAL else res.dual_bound
    return DualSolution(phi, alpha, z, obj, res.status, cut_const, np.asarray(cut_coef), env, res.wall_time, bigm,
                        res.target_reached, res.bound_reached, upper)


def _top_budget(gain: np.ndarray, gamma: int) -> np.ndarray:
    z = np.zeros(gain.size)
    order = np.argsort(-gain, kind="stable")[:gamma]
    z[order[gain[order] > 1e-12]] = 1.0
    return z


def ascent_starts(uset: UncertaintySetSpec) -> list[np.ndarray]:
    """z = 0, every window of ``gamma`` consecutive periods over the deviation
    support, and the ``gamma`` largest deviations."""
    g, T = uset.gamma, uset.T
    support = np.flatnonzero(uset.dev > 0)
    out = [np.zeros(T)]
    if g == 0 or support.size == 0:
        return out
    for a in range(int(support[0]), max(int(support[-1]) - g + 2, int(support[0]) + 1)):
        z = np.zeros(T)
        z[a : a + g] = 1.0
        out.append(z)
    out.append(_top_budget(uset.dev, g))
    return out


def _ascent_start(spm: _SPModel, uset: UncertaintySetSpec, starts, max_steps: int = 25):
    """Local search on z; returns the best value and full SP column vector found.

    R is convex in the trajectory, so for fixed duals the objective is linear
    in z and maximised by the ``gamma`` largest gains: each step can only
    improve the value.
    """
    sess = LpSession(spm.mb)
    yg = spm.phi[spm.primal.rows["yG"]]
    best_val, best_vec = -np.inf, None
    seen: set[bytes] = set()
    for z in starts:
        z = np.asarray(z, dtype=float) * (uset.dev > 0)
        for _ in range(max_steps):
            key = z.astype(np.int8).tobytes()
            if key in seen:
                break
            seen.add(key)
            sess.set_bounds(spm.z, z, z)
            res = sess.solve()
            if not res.status.has_solution:
                break
            if res.objective > best_val + 1e-9:
                best_val, best_vec = res.objective, res.values.copy()
            z = _top_budget(-res[yg] * uset.dev, uset.gamma)
    return best_val, best_vec


def extract_worst_trajectory(sol: DualSolution, uset: UncertaintySetSpec) -> np.ndarray:
    return uset.trajectory(sol.z)


def relaxed_dispatch(x, p, cfg: InstanceConfig):
    """Relaxed primal dispatch LP; returns (objective, block, SolveResult)."""
    xv = np.asarray(x.x if isinstance(x, EngagementPlan) else x, dtype=float)
    mb = ModelBuilder("relaxed_dispatch")
    blk = add_dispatch_block(mb, cfg, np.asarray(p, dtype=float), xv, x_is_var=False, relax=True)
    mb.add_objective(blk.cost_idx, blk.cost_coef)
    res = solve(mb)
    if not res.status.has_solution:
        raise SubproblemError(f"relaxed dispatch LP {res.status.value}: contradicts complete recourse")
    return res.objective, blk, res, mb


def check_no_simultaneous(p, x, cfg: InstanceConfig, rel_tol: float = 1e-6):
    """Whether the relaxed dispatch under ``(p, x)`` has an optimum without simultaneous charge/discharge.

    The LP optimum is first computed; a second LP then minimises battery
    throughput over the optimal face, so a degenerate vertex that cycles the
    battery for free is not mistaken for a failure of the relaxation.
    Returns ``(ok, schedule, objective)``.
    """
    value, blk, res, mb = relaxed_dispatch(x, p, cfg)
    sched = blk.schedule(res)
    lim = rel_tol * max(cfg.bess.s_cha, 1e-12) * max(cfg.bess.s_dis, 1e-12)
    if np.all(sched.y_cha * sched.y_dis <= lim):
        return True, sched, value
    mb2 = mb
    mb2._cost.clear()
    mb2.add_range(blk.cost_idx, blk.cost_coef, -np.inf, value + 1e-7 * (1 + abs(value)), "optimal_face")
    mb2.add_objective(np.concatenate([blk.y_cha, blk.y_dis]), 1.0)
    res2 = solve(mb2)
    if not res2.status.has_solution:
        return False, sched, value
    sched2 = blk.schedule(res2)
    ok = bool(np.all(sched2.y_cha * sched2.y_dis <= lim))
    return ok, sched2, value
