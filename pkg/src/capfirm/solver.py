"""Thin linear/mixed-integer modelling layer on top of HiGHS.

Every optimisation model in the package is assembled through
:class:`ModelBuilder` and handed to :func:`solve`. The builder only knows
about columns, linear rows and a linear objective, so another backend can be
dropped in by re-implementing :func:`solve`.
"""

from __future__ import annotations

import enum
import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path

import highspy
import numpy as np

log = logging.getLogger(__name__)

INF = float("inf")


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    TIME_LIMIT_FEASIBLE = "TimeLimitFeasible"
    ERROR = "Error"

    @property
    def has_solution(self) -> bool:
        return self in (Status.OPTIMAL, Status.TIME_LIMIT_FEASIBLE)


@dataclass
class SolveResult:
    status: Status
    objective: float = float("nan")
    values: np.ndarray | None = None
    wall_time: float = 0.0
    message: str = ""
    target_reached: bool = False
    # stopped once the dual bound proved the optimum cannot pass ``bound_stop``
    bound_reached: bool = False
    dual_bound: float = float("nan")

    def __getitem__(self, idx):
        """Values of one column or of an index array of columns."""
        if self.values is None:
            raise ValueError(f"no solution available (status {self.status.value})")
        return self.values[idx]


def _as_array(v, n: int) -> np.ndarray:
    a = np.asarray(v, dtype=float)
    if a.ndim == 0:
        return np.full(n, float(a))
    if a.shape != (n,):
        raise ValueError(f"expected {n} values, got shape {a.shape}")
    return a.copy()


class ModelBuilder:
    """Accumulates a linear (mixed-integer) model.

    Rows are stored as ``lower <= a . v <= upper``; ``add_constr`` maps the
    usual ``<=``, ``>=``, ``==`` senses onto that form.
    """

    def __init__(
        self,
        name: str = "model",
        sense: str = "min",
        time_limit: float | None = None,
        mip_abs_gap: float = 5e-5,
        mip_rel_gap: float = 1e-6,
    ):
        if sense not in ("min", "max"):
            raise ValueError(f"unknown sense {sense!r}")
        self.name = name
        self.sense = sense
        self.time_limit = time_limit
        self.mip_abs_gap = mip_abs_gap
        self.mip_rel_gap = mip_rel_gap
        # MIP stops as soon as an incumbent at least this good is known
        self.objective_target: float | None = None
        # MIP stops as soon as the dual bound proves the optimum no better than this
        self.bound_stop: float | None = None
        self.obj_constant = 0.0
        self._lb: list[np.ndarray] = []
        self._ub: list[np.ndarray] = []
        self._int: list[np.ndarray] = []
        self._names: list[tuple[str, int]] = []
        self._nvars = 0
        self._cost: dict[int, float] = {}
        self._row_idx: list[np.ndarray] = []
        self._row_val: list[np.ndarray] = []
        self._row_lo: list[float] = []
        self._row_hi: list[float] = []
        self._row_names: list[str] = []

    # -- columns -------------------------------------------------------
    @property
    def num_vars(self) -> int:
        return self._nvars

    @property
    def num_constrs(self) -> int:
        return len(self._row_lo)

    def add_vars(self, name: str, n: int, lb=0.0, ub=INF, binary: bool = False) -> np.ndarray:
        lb_a, ub_a = _as_array(lb, n), _as_array(ub, n)
        if binary:
            lb_a = np.maximum(lb_a, 0.0)
            ub_a = np.minimum(ub_a, 1.0)
        if np.any(lb_a > ub_a + 1e-12):
            bad = int(np.argmax(lb_a > ub_a + 1e-12))
            raise ValueError(f"{name}[{bad}]: lower bound {lb_a[bad]} > upper bound {ub_a[bad]}")
        idx = np.arange(self._nvars, self._nvars + n)
        self._lb.append(lb_a)
        self._ub.append(ub_a)
        self._int.append(np.full(n, binary))
        self._names.append((name, n))
        self._nvars += n
        return idx

    def add_var(self, name: str, lb=0.0, ub=INF, binary: bool = False) -> int:
        return int(self.add_vars(name, 1, lb, ub, binary)[0])

    def _check_idx(self, idx: np.ndarray) -> None:
        if idx.size and (idx.min() < 0 or idx.max() >= self._nvars):
            raise IndexError("constraint references an unregistered variable")

    # -- rows ----------------------------------------------------------
    def add_range(self, idx, coef, lo: float, hi: float, name: str = "") -> int:
        idx = np.asarray(idx, dtype=np.int64).ravel()
        coef = np.asarray(coef, dtype=float).ravel()
        if coef.size == 1 and idx.size != 1:
            coef = np.full(idx.size, float(coef[0]))
        if idx.size != coef.size:
            raise ValueError("index/coefficient length mismatch")
        self._check_idx(idx)
        self._row_idx.append(idx)
        self._row_val.append(coef)
        self._row_lo.append(float(lo))
        self._row_hi.append(float(hi))
        self._row_names.append(name)
        return len(self._row_lo) - 1

    def add_constr(self, idx, coef, sense: str, rhs: float, name: str = "") -> int:
        if sense == "<=":
            return self.add_range(idx, coef, -INF, rhs, name)
        if sense == ">=":
            return self.add_range(idx, coef, rhs, INF, name)
        if sense in ("==", "="):
            return self.add_range(idx, coef, rhs, rhs, name)
        raise ValueError(f"unknown sense {sense!r}")

    # -- objective -----------------------------------------------------
    def add_objective(self, idx, coef) -> None:
        idx = np.atleast_1d(np.asarray(idx, dtype=np.int64))
        coef = np.atleast_1d(np.asarray(coef, dtype=float))
        if coef.size == 1 and idx.size != 1:
            coef = np.full(idx.size, float(coef[0]))
        self._check_idx(idx)
        for i, c in zip(idx.tolist(), coef.tolist()):
            self._cost[i] = self._cost.get(i, 0.0) + c

    # -- assembly ------------------------------------------------------
    def arrays(self) -> dict:
        """Dense/CSR arrays describing the model."""
        n = self._nvars
        cost = np.zeros(n)
        if self._cost:
            k = np.fromiter(self._cost.keys(), dtype=np.int64)
            cost[k] = np.fromiter(self._cost.values(), dtype=float)
        lens = [len(r) for r in self._row_idx]
        start = np.zeros(len(lens) + 1, dtype=np.int64)
        start[1:] = np.cumsum(lens)
        empty_i, empty_f = np.zeros(0, dtype=np.int64), np.zeros(0)
        return dict(
            cost=cost,
            lb=np.concatenate(self._lb) if self._lb else empty_f,
            ub=np.concatenate(self._ub) if self._ub else empty_f,
            integer=np.concatenate(self._int) if self._int else np.zeros(0, dtype=bool),
            start=start,
            index=np.concatenate(self._row_idx) if self._row_idx else empty_i,
            value=np.concatenate(self._row_val) if self._row_val else empty_f,
            row_lo=np.asarray(self._row_lo, dtype=float),
            row_hi=np.asarray(self._row_hi, dtype=float),
        )

    def to_dict(self) -> dict:
        """JSON-friendly description; ``from_dict`` rebuilds an equivalent model."""
        a = self.arrays()
        enc = lambda v: [x if np.isfinite(x) else (1e308 if x > 0 else -1e308) for x in v.tolist()]
        return dict(
            name=self.name,
            sense=self.sense,
            time_limit=self.time_limit,
            mip_abs_gap=self.mip_abs_gap,
            mip_rel_gap=self.mip_rel_gap,
            obj_constant=self.obj_constant,
            var_blocks=[[nm, k] for nm, k in self._names],
            cost=a["cost"].tolist(),
            lb=enc(a["lb"]),
            ub=enc(a["ub"]),
            integer=a["integer"].tolist(),
            rows=[
                dict(idx=i.tolist(), coef=v.tolist(), lo=enc(np.array([lo]))[0], hi=enc(np.array([hi]))[0], name=nm)
                for i, v, lo, hi, nm in zip(self._row_idx, self._row_val, self._row_lo, self._row_hi, self._row_names)
            ],
        )

    @classmethod
    def from_dict(cls, d: dict) -> "ModelBuilder":
        dec = lambda v: np.where(np.abs(np.asarray(v, dtype=float)) >= 1e308, np.copysign(INF, np.asarray(v, dtype=float)), v)
        mb = cls(d["name"], d["sense"], d["time_limit"], d["mip_abs_gap"], d["mip_rel_gap"])
        mb.obj_constant = d["obj_constant"]
        lb, ub, integer = dec(d["lb"]), dec(d["ub"]), np.asarray(d["integer"], dtype=bool)
        pos = 0
        for nm, k in d["var_blocks"]:
            sl = slice(pos, pos + k)
            blk_int = bool(integer[sl].all()) if k else False
            mb.add_vars(nm, k, lb[sl], ub[sl], binary=blk_int)
            pos += k
        mb.add_objective(np.arange(pos), d["cost"])
        for r in d["rows"]:
            mb.add_range(r["idx"], r["coef"], float(dec([r["lo"]])[0]), float(dec([r["hi"]])[0]), r["name"])
        return mb

    def _highs(self, with_names: bool = False) -> highspy.Highs:
        a = self.arrays()
        lp = highspy.HighsLp()
        lp.num_col_ = self._nvars
        lp.num_row_ = self.num_constrs
        lp.col_cost_ = a["cost"]
        lp.col_lower_ = np.where(np.isinf(a["lb"]), -highspy.kHighsInf, a["lb"])
        lp.col_upper_ = np.where(np.isinf(a["ub"]), highspy.kHighsInf, a["ub"])
        lp.row_lower_ = np.where(np.isinf(a["row_lo"]), -highspy.kHighsInf, a["row_lo"])
        lp.row_upper_ = np.where(np.isinf(a["row_hi"]), highspy.kHighsInf, a["row_hi"])
        lp.offset_ = self.obj_constant
        lp.sense_ = highspy.ObjSense.kMaximize if self.sense == "max" else highspy.ObjSense.kMinimize
        lp.a_matrix_.format_ = highspy.MatrixFormat.kRowwise
        lp.a_matrix_.start_ = a["start"]
        lp.a_matrix_.index_ = a["index"]
        lp.a_matrix_.value_ = a["value"]
        if a["integer"].any():
            lp.integrality_ = [
                highspy.HighsVarType.kInteger if b else highspy.HighsVarType.kContinuous for b in a["integer"]
            ]
        h = highspy.Highs()
        h.setOptionValue("output_flag", False)
        h.setOptionValue("threads", 1)
        h.setOptionValue("random_seed", 0)
        h.passModel(lp)
        if with_names:
            col = 0
            for nm, k in self._names:
                for i in range(k):
                    h.passColName(col, f"{nm}_{i}" if k > 1 else nm)
                    col += 1
            for r, nm in enumerate(self._row_names):
                h.passRowName(r, nm.replace(" ", "_") + f"_r{r}" if nm else f"r{r}")
        return h

    def write_lp(self, path: str | Path) -> Path:
        """Dump the model in LP format (debugging aid)."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        h = self._highs(with_names=True)
        h.writeModel(str(path))
        return path

    @property
    def is_mip(self) -> bool:
        return any(b.any() for b in self._int)


def _collect(h: highspy.Highs, t0: float, bound_hit: bool = False) -> SolveResult:
    ms = h.getModelStatus()
    info = h.getInfo()
    has_sol = info.primal_solution_status == 2
    if ms == highspy.HighsModelStatus.kOptimal:
        status = Status.OPTIMAL
    elif ms == highspy.HighsModelStatus.kInfeasible:
        status = Status.INFEASIBLE
    elif ms in (highspy.HighsModelStatus.kUnbounded, highspy.HighsModelStatus.kUnboundedOrInfeasible):
        status = Status.UNBOUNDED
    elif ms in (
        highspy.HighsModelStatus.kTimeLimit,
        highspy.HighsModelStatus.kIterationLimit,
        highspy.HighsModelStatus.kInterrupt,
        highspy.HighsModelStatus.kSolutionLimit,
        highspy.HighsModelStatus.kObjectiveTarget,
    ):
        status = Status.TIME_LIMIT_FEASIBLE if has_sol else Status.ERROR
    else:
        status = Status.ERROR
    msg = h.modelStatusToString(ms)
    if status.has_solution:
        values = np.asarray(h.getSolution().col_value, dtype=float)
        target = ms == highspy.HighsModelStatus.kObjectiveTarget
        bound = bound_hit and ms == highspy.HighsModelStatus.kInterrupt
        dual = float(info.mip_dual_bound)
        return SolveResult(status, float(info.objective_function_value), values,
                           time.perf_counter() - t0, msg, target, bound, dual)
    return SolveResult(status, wall_time=time.perf_counter() - t0, message=msg)


def _run(h: highspy.Highs, t0: float, bound_hit=None) -> SolveResult:
    h.run()
    if h.getModelStatus() == highspy.HighsModelStatus.kUnboundedOrInfeasible:
        # presolve cannot tell; let the simplex decide
        h.setOptionValue("presolve", "off")
        h.clearSolver()
        h.run()
    return _collect(h, t0, bool(bound_hit))


def _watch_bound(h: highspy.Highs, sense: str, bound: float) -> list:
    """Interrupt the MIP once its dual bound is on the wrong side of ``bound``."""
    hit: list = []
    sign = 1.0 if sense == "max" else -1.0

    def check(e):
        out = e.data_out
        if math.isfinite(out.mip_primal_bound) and sign * (out.mip_dual_bound - bound) <= 0:
            hit.append(out.mip_dual_bound)
            e.interrupt()

    h.cbMipInterrupt.subscribe(check)
    return hit


def solve(model: ModelBuilder, dump_lp: str | Path | None = None, start: np.ndarray | None = None) -> SolveResult:
    """Solve ``model``; never raises on solver failure, returns an Error status instead.

    ``start`` is an optional full column vector handed to the MIP solver as
    an initial incumbent.
    """
    t0 = time.perf_counter()
    try:
        if dump_lp is not None:
            model.write_lp(dump_lp)
        h = model._highs()
        if model.time_limit is not None:
            h.setOptionValue("time_limit", float(model.time_limit))
        if model.is_mip:
            h.setOptionValue("mip_abs_gap", float(model.mip_abs_gap))
            h.setOptionValue("mip_rel_gap", float(model.mip_rel_gap))
            if model.objective_target is not None:
                h.setOptionValue("objective_target", float(model.objective_target))
        hit = None
        if model.is_mip and model.bound_stop is not None:
            hit = _watch_bound(h, model.sense, float(model.bound_stop))
        if start is not None:
            sol = highspy.HighsSolution()
            sol.col_value = np.asarray(start, dtype=float).tolist()
            sol.value_valid = True
            h.setSolution(sol)
        return _run(h, t0, hit)
    except Exception as exc:  # noqa: BLE001 - backend failures become Error results
        log.exception("solver failure on model %s", model.name)
        return SolveResult(Status.ERROR, wall_time=time.perf_counter() - t0, message=repr(exc))


class LpSession:
    """A model kept alive in the backend so that bound changes re-solve warm.

    Integrality is dropped: the session is meant for repeated LP solves.
    """

    def __init__(self, model: ModelBuilder):
        self.model = model
        self._h = model._highs()
        if model.is_mip:
            self._h.changeColsIntegrality(
                model.num_vars, np.arange(model.num_vars, dtype=np.int32),
                np.full(model.num_vars, highspy.HighsVarType.kContinuous),
            )

    def set_bounds(self, idx, lb, ub) -> None:
        idx = np.asarray(idx, dtype=np.int32)
        lb = np.broadcast_to(np.asarray(lb, dtype=float), idx.shape)
        ub = np.broadcast_to(np.asarray(ub, dtype=float), idx.shape)
        self._h.changeColsBounds(idx.size, idx, np.ascontiguousarray(lb), np.ascontiguousarray(ub))

    def solve(self) -> SolveResult:
        t0 = time.perf_counter()
        try:
            return _run(self._h, t0)
        except Exception as exc:  # noqa: BLE001
            log.exception("solver failure on session %s", self.model.name)
            return SolveResult(Status.ERROR, wall_time=time.perf_counter() - t0, message=repr(exc))
