"""Site, market and uncertainty data shared by the planners.

Periods are 0-based in code (``t = 0 .. T-1``). Powers are kW, energies kWh,
``dt`` is in hours and prices are currency per kWh.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Iterator

import numpy as np

QUANTILE_LEVELS: tuple[float, ...] = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)


class DimensionError(ValueError):
    pass


class DataError(ValueError):
    pass


def _frozen(a, n: int | None = None, name: str = "") -> np.ndarray:
    arr = np.array(a, dtype=float)
    if arr.ndim == 0 and n is not None:
        arr = np.full(n, float(arr))
    if n is not None and arr.shape != (n,):
        raise DimensionError(f"{name}: expected length {n}, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class BessParams:
    s_min: float = 0.0
    s_max: float = 466.4
    s_cha: float = 466.4
    s_dis: float = 466.4
    eta_c: float = 0.95
    eta_d: float = 0.95
    s_init: float = 0.0
    s_final: float = 0.0

    def __post_init__(self):
        if not 0 <= self.s_min <= self.s_init <= self.s_max:
            raise ValueError("need 0 <= s_min <= s_init <= s_max")
        if not self.s_min <= self.s_final <= self.s_max:
            raise ValueError("s_final outside [s_min, s_max]")
        if not (0 < self.eta_c <= 1 and 0 < self.eta_d <= 1):
            raise ValueError("efficiencies must lie in (0, 1]")
        if self.s_cha < 0 or self.s_dis < 0:
            raise ValueError("charge/discharge limits must be non-negative")


@dataclass(frozen=True)
class InstanceConfig:
    """One site and its market rules.

    ``x_prev`` re-activates the first-period ramp constraint against the
    previous day's last engagement; ``None`` leaves period 0 ramp-free.
    """

    T: int
    dt: float
    Pc: float
    price: np.ndarray
    beta: float
    tol_frac: float
    ramp: np.ndarray
    x_min: np.ndarray
    x_max: np.ndarray
    y_min: np.ndarray
    y_max: np.ndarray
    bess: BessParams = field(default_factory=BessParams)
    x_prev: float | None = None

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if not 0 <= self.tol_frac <= 1:
            raise ValueError("tol_frac must lie in [0, 1]")
        for name in ("price", "ramp", "x_min", "x_max", "y_min", "y_max"):
            object.__setattr__(self, name, _frozen(getattr(self, name), self.T, name))
        if np.any(self.x_min > self.x_max) or np.any(self.y_min > self.y_max):
            raise ValueError("lower bounds exceed upper bounds")
        if np.any(self.ramp < 0) or np.any(self.price < 0):
            raise ValueError("ramp limits and prices must be non-negative")

    @property
    def tolerance(self) -> float:
        """Dead-band half-width p*Pc in kW."""
        return self.tol_frac * self.Pc

    @property
    def unit_value(self) -> np.ndarray:
        """pi_t * dt: value of one kW exported during period t."""
        return self.price * self.dt

    def with_(self, **kw) -> "InstanceConfig":
        return replace(self, **kw)

    def revenue_bound(self) -> float:
        """Upper bound on the daily gross revenue (used to bound master problems)."""
        return float(np.sum(self.unit_value * np.maximum(self.y_max, 0.0)))


def peak_mask(T: int, dt: float, peak_hours: tuple[float, float] = (19.0, 21.0)) -> np.ndarray:
    """Periods overlapping the peak window, day starting at 00:00."""
    start = np.arange(T) * dt
    return (start < peak_hours[1]) & (start + dt > peak_hours[0])


def default_config(
    T: int = 96,
    dt: float | None = None,
    Pc: float = 466.4,
    base_price: float = 0.1,
    peak_multiplier: float = 2.0,
    peak_hours: tuple[float, float] = (19.0, 21.0),
    beta: float = 5.0,
    tol_frac: float = 0.01,
    ramp_offpeak: float = 0.075,
    ramp_peak: float = 0.15,
    s_max: float | None = None,
    charge_hours: float = 1.0,
    eta: float = 0.95,
) -> InstanceConfig:
    """Case-study defaults: ramp fractions are per 15 minutes and scale with ``dt``."""
    dt = 24.0 / T if dt is None else dt
    peak = peak_mask(T, dt, peak_hours)
    price = np.where(peak, base_price * peak_multiplier, base_price)
    scale = dt / 0.25
    ramp = np.minimum(np.where(peak, ramp_peak, ramp_offpeak) * Pc * scale, Pc)
    s_max = Pc if s_max is None else s_max
    bess = BessParams(
        s_min=0.0,
        s_max=s_max,
        s_cha=s_max / charge_hours,
        s_dis=s_max / charge_hours,
        eta_c=eta,
        eta_d=eta,
        s_init=0.0,
        s_final=0.0,
    )
    zeros, cap = np.zeros(T), np.full(T, Pc)
    return InstanceConfig(T, dt, Pc, price, beta, tol_frac, ramp, zeros, cap, zeros, cap, bess)


@dataclass(frozen=True)
class DayForecast:
    """Forecast material for one day.

    ``quantiles`` has one row per level of ``QUANTILE_LEVELS``. Row ``k`` of
    ``intraday`` holds the point forecasts issued at period ``k``; only the
    entries ``k..T-1`` of that row are used.
    """

    quantiles: np.ndarray
    nominal: np.ndarray
    intraday: np.ndarray
    observation: np.ndarray
    day: int = 0

    def __post_init__(self):
        q = np.array(self.quantiles, dtype=float)
        T = q.shape[1] if q.ndim == 2 else -1
        if q.ndim != 2 or q.shape[0] != len(QUANTILE_LEVELS):
            raise DimensionError(f"quantiles must be ({len(QUANTILE_LEVELS)}, T), got {q.shape}")
        q.setflags(write=False)
        object.__setattr__(self, "quantiles", q)
        object.__setattr__(self, "nominal", _frozen(self.nominal, T, "nominal"))
        object.__setattr__(self, "observation", _frozen(self.observation, T, "observation"))
        intra = np.array(self.intraday, dtype=float)
        if intra.shape != (T, T):
            raise DimensionError(f"intraday must be ({T}, {T}), got {intra.shape}")
        intra.setflags(write=False)
        object.__setattr__(self, "intraday", intra)

    @property
    def T(self) -> int:
        return self.quantiles.shape[1]

    def quantile(self, q: float) -> np.ndarray:
        for k, lvl in enumerate(QUANTILE_LEVELS):
            if abs(lvl - q) < 1e-9:
                return self.quantiles[k]
        raise KeyError(f"quantile level {q} not on the decile grid")

    @property
    def median(self) -> np.ndarray:
        return self.quantile(0.5)

    def validate(self, Pc: float, atol: float = 1e-9) -> list[str]:
        """Human-readable problems (bounds, crossing); empty when clean."""
        issues = []
        for name in ("quantiles", "nominal", "intraday", "observation"):
            a = getattr(self, name)
            if np.any(a < -atol) or np.any(a > Pc + atol):
                issues.append(f"{name} outside [0, Pc]")
        if np.any(np.diff(self.quantiles, axis=0) < -atol):
            issues.append("quantiles cross")
        return issues


@dataclass(frozen=True)
class UncertaintySetSpec:
    """Budgeted downward-deviation set ``p = median - z * dev``, ``sum z <= gamma``."""

    median: np.ndarray
    dev: np.ndarray
    gamma: int

    def __post_init__(self):
        m = _frozen(self.median)
        object.__setattr__(self, "median", m)
        object.__setattr__(self, "dev", _frozen(self.dev, m.size, "dev"))
        if np.any(self.dev < 0):
            raise DataError("negative deviation: quantiles cross the median")
        if not 0 <= int(self.gamma) <= m.size:
            raise ValueError(f"gamma must lie in [0, {m.size}]")
        object.__setattr__(self, "gamma", int(self.gamma))

    @property
    def T(self) -> int:
        return self.median.size

    @property
    def lower(self) -> np.ndarray:
        return self.median - self.dev

    def trajectory(self, z) -> np.ndarray:
        return self.median - np.asarray(z, dtype=float) * self.dev

    @property
    def is_singleton(self) -> bool:
        return self.gamma == 0 or not np.any(self.dev > 0)


def build_uncertainty_set(fc: DayForecast, q: float, gamma: int) -> UncertaintySetSpec:
    if not 0.1 - 1e-9 <= q <= 0.5 + 1e-9:
        raise ValueError("q must lie in [0.1, 0.5]")
    median = fc.median
    dev = median - fc.quantile(q)
    if np.any(dev < -1e-9):
        raise DataError(f"quantile {q} exceeds the median at periods {np.flatnonzero(dev < -1e-9).tolist()}")
    return UncertaintySetSpec(median, np.maximum(dev, 0.0), gamma)


def enumerate_trajectories(spec: UncertaintySetSpec) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield ``(z, p)`` for every distinct trajectory of the set.

    Periods with zero deviation never switch, so a degenerate set yields a
    single trajectory whatever the budget.
    """
    support = np.flatnonzero(spec.dev > 0)
    for k in range(min(spec.gamma, support.size) + 1):
        for combo in itertools.combinations(support.tolist(), k):
            z = np.zeros(spec.T)
            z[list(combo)] = 1.0
            yield z, spec.trajectory(z)


@dataclass(frozen=True)
class EngagementPlan:
    x: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", _frozen(self.x))

    def __len__(self) -> int:
        return self.x.size


@dataclass(frozen=True)
class DispatchSchedule:
    """Second-stage decisions over periods ``t0 .. t0+len-1``."""

    y: np.ndarray
    y_g: np.ndarray
    y_cha: np.ndarray
    y_dis: np.ndarray
    y_b: np.ndarray
    soc: np.ndarray
    dx_neg: np.ndarray
    dx_pos: np.ndarray
    t0: int = 0
    terminal_slack: float = 0.0

    def __post_init__(self):
        n = np.asarray(self.y).size
        for name in ("y", "y_g", "y_cha", "y_dis", "y_b", "soc", "dx_neg", "dx_pos"):
            object.__setattr__(self, name, _frozen(getattr(self, name), n, name))

    def __len__(self) -> int:
        return self.y.size

    def simultaneous_periods(self, cfg: InstanceConfig, rel_tol: float = 1e-6) -> np.ndarray:
        """Periods where the battery both charges and discharges."""
        lim = rel_tol * max(cfg.bess.s_cha, 1e-12) * max(cfg.bess.s_dis, 1e-12)
        return np.flatnonzero(self.y_cha * self.y_dis > lim)


def validate_engagement(plan: EngagementPlan, cfg: InstanceConfig, atol: float = 1e-6) -> list[str]:
    """Violations of the engagement ramp and bound rules (empty when accepted)."""
    x = plan.x
    if x.size != cfg.T:
        raise DimensionError(f"plan has {x.size} periods, config has {cfg.T}")
    out = []
    for t in range(cfg.T):
        if x[t] < cfg.x_min[t] - atol:
            out.append(f"t={t}: x={x[t]:.6g} below X_min={cfg.x_min[t]:.6g}")
        if x[t] > cfg.x_max[t] + atol:
            out.append(f"t={t}: x={x[t]:.6g} above X_max={cfg.x_max[t]:.6g}")
        prev = x[t - 1] if t > 0 else cfg.x_prev
        if prev is not None and abs(x[t] - prev) > cfg.ramp[t] + atol:
            out.append(f"t={t}: ramp {abs(x[t] - prev):.6g} exceeds {cfg.ramp[t]:.6g}")
    return out


def penalty_cost(x_t: float, y_t: float, t: int, cfg: InstanceConfig) -> float:
    """Dead-band threshold-linear deviation penalty for one period."""
    tol = cfg.tolerance
    short = max(0.0, (x_t - tol) - y_t)
    excess = max(0.0, y_t - (x_t + tol))
    return float(cfg.beta * cfg.price[t] * cfg.dt * (short + excess))


def penalties(x, y, cfg: InstanceConfig) -> np.ndarray:
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    tol = cfg.tolerance
    dev = np.maximum(0.0, (x - tol) - y) + np.maximum(0.0, y - (x + tol))
    return cfg.beta * cfg.unit_value * dev


def objective_value(plan: EngagementPlan, sched: DispatchSchedule, cfg: InstanceConfig) -> float:
    """Opposite of the net revenue of ``sched`` (penalties taken from its slacks)."""
    sl = slice(sched.t0, sched.t0 + len(sched))
    v = cfg.unit_value[sl]
    return float(np.sum(v * (-sched.y + cfg.beta * (sched.dx_neg + sched.dx_pos))))
