"""Choice of the robust parameters: lower-bound quantile curve and budget."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .model import DayForecast, InstanceConfig, UncertaintySetSpec

log = logging.getLogger(__name__)

LOWER_LEVELS = (0.1, 0.2, 0.3, 0.4)
STATIC_Q_GRID = (0.1, 0.2, 0.3, 0.4)
STATIC_GAMMA_GRID = (12, 24, 36, 48)
DEPTH_GRID = tuple(round(0.05 * k, 2) for k in range(1, 11))


@dataclass(frozen=True)
class RiskParams:
    """Per-period quantile level of the lower bound, plus the budget."""

    levels: np.ndarray | float
    gamma: int
    provenance: str = "static"
    d_gamma: float | None = None
    d_q: float | None = None

    def level_curve(self, T: int) -> np.ndarray:
        lv = np.asarray(self.levels, dtype=float)
        return np.full(T, float(lv)) if lv.ndim == 0 else lv

    def uncertainty_set(self, fc: DayForecast) -> UncertaintySetSpec:
        lower = lower_bound_curve(fc, self.level_curve(fc.T))
        return UncertaintySetSpec(fc.median, np.maximum(fc.median - lower, 0.0), min(self.gamma, fc.T))


def lower_bound_curve(fc: DayForecast, levels: np.ndarray) -> np.ndarray:
    """Quantile value at the level chosen for each period."""
    return np.array([fc.quantile(float(q))[t] for t, q in enumerate(levels)])


def static_params(q: float, gamma: int) -> RiskParams:
    if not any(abs(q - g) < 1e-9 for g in STATIC_Q_GRID) or gamma not in STATIC_GAMMA_GRID:
        log.warning("risk pair [q=%g, gamma=%d] outside the default grid", q, gamma)
    return RiskParams(float(q), int(gamma), "static")


def _nonnull(fc: DayForecast, Pc: float | None) -> np.ndarray:
    thr = 1e-3 * Pc if Pc is not None else 1e-9
    return fc.median > thr


def dynamic_pmin(fc: DayForecast, d_q: float, Pc: float | None = None) -> np.ndarray:
    """Per-period lower-bound level from the spread of the quantiles.

    With ``d_k = median - q_k`` and threshold ``d_q * d_10``: level 10 % when
    d_20, d_30 and d_40 all exceed it, 20 % when d_20 and d_30 do, 30 % when
    d_20 does, 40 % otherwise (and at night or without spread).
    """
    med = fc.median
    d10 = med - fc.quantile(0.1)
    d20 = med - fc.quantile(0.2)
    d30 = med - fc.quantile(0.3)
    d40 = med - fc.quantile(0.4)
    thr = d_q * d10
    out = np.full(fc.T, 0.4)
    active = _nonnull(fc, Pc) & (d10 > 0)
    c30 = d20 > thr
    c20 = c30 & (d30 > thr)
    c10 = c20 & (d40 > thr)
    out[active & c30] = 0.3
    out[active & c20] = 0.2
    out[active & c10] = 0.1
    return out


def dynamic_gamma(fc: DayForecast, d_gamma: float, cfg: InstanceConfig) -> int:
    """Number of periods whose median-to-10 % distance exceeds ``d_gamma * Pc``."""
    d10 = fc.median - fc.quantile(0.1)
    return int(np.sum(d10 > d_gamma * cfg.Pc))


def dynamic_params(fc: DayForecast, d_gamma: float, d_q: float, cfg: InstanceConfig) -> RiskParams:
    return RiskParams(
        dynamic_pmin(fc, d_q, cfg.Pc), dynamic_gamma(fc, d_gamma, cfg), "dynamic", d_gamma=d_gamma, d_q=d_q
    )
