"""Synthetic PV forecasts and quantile-forecast quality scores."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .model import QUANTILE_LEVELS, DayForecast, InstanceConfig


@dataclass(frozen=True)
class NoiseParams:
    """Lognormal multiplicative noise around a bell-shaped clear-sky profile.

    ``sigma`` is the log-scale at solar noon; it grows towards sunrise and
    sunset by ``edge_boost``. ``sunrise``/``sunset`` are fractions of the
    horizon. ``intraday_tau`` is the e-folding lead time (periods) of the
    intraday forecast skill.
    """

    sigma: float = 0.25
    edge_boost: float = 0.5
    sunrise: float = 0.27
    sunset: float = 0.8
    peak_range: tuple[float, float] = (0.3, 0.8)
    shape: float = 1.5
    intraday_tau: float | None = None


def clear_sky(T: int, sunrise: float, sunset: float, shape: float = 1.5) -> np.ndarray:
    """Normalised bell profile, zero outside daylight."""
    mid = (np.arange(T) + 0.5) / T
    u = (mid - sunrise) / (sunset - sunrise)
    return np.where((u > 0) & (u < 1), np.sin(np.pi * np.clip(u, 0, 1)) ** shape, 0.0)


def synth_day(seed: int, cfg: InstanceConfig, noise: NoiseParams = NoiseParams(), day: int | None = None) -> DayForecast:
    """One synthetic day whose quantiles are the exact quantiles of its noise model."""
    rng = np.random.default_rng(seed)
    T = cfg.T
    base = clear_sky(T, noise.sunrise, noise.sunset, noise.shape)
    profile = base * rng.uniform(*noise.peak_range) * cfg.Pc
    sigma = noise.sigma * (1.0 + noise.edge_boost * (1.0 - base))
    mu = -0.5 * sigma**2
    levels = norm.ppf(np.asarray(QUANTILE_LEVELS))
    quant = profile[None, :] * np.exp(mu[None, :] + sigma[None, :] * levels[:, None])
    obs = profile * np.exp(mu + sigma * rng.standard_normal(T))
    quant = np.clip(quant, 0.0, cfg.Pc)
    obs = np.clip(obs, 0.0, cfg.Pc)
    tau = noise.intraday_tau if noise.intraday_tau is not None else max(T / 12.0, 1.0)
    lead = np.arange(T)[None, :] - np.arange(T)[:, None]
    w = np.where(lead >= 0, np.exp(-np.maximum(lead, 0) / tau), 0.0)
    intraday = w * obs[None, :] + (1.0 - w) * profile[None, :]
    return DayForecast(quant, profile, intraday, obs, day=seed if day is None else day)


def pinball(q: float, forecast, obs) -> np.ndarray:
    """Pinball loss max{(1-q)(f - p), q(p - f)}, elementwise."""
    d = np.asarray(forecast, dtype=float) - np.asarray(obs, dtype=float)
    return np.maximum((1.0 - q) * d, -q * d)


def _stack(forecasts, obs):
    f = np.asarray(forecasts, dtype=float)
    o = np.asarray(obs, dtype=float)
    if f.ndim == 2:
        f = f[None]
    if o.ndim == 1:
        o = o[None]
    keep = np.all(np.isfinite(o), axis=1)
    return f[keep], o[keep], int((~keep).sum())


def quantile_score(forecasts, obs, q: float, levels=QUANTILE_LEVELS, return_skipped: bool = False):
    """Mean pinball loss of quantile ``q`` over days and lead times.

    ``forecasts`` is ``(days, Q, T)`` (or ``(Q, T)`` for a single day) on the
    grid ``levels``; days whose observation holds NaN are skipped.
    """
    k = [i for i, lv in enumerate(levels) if abs(lv - q) < 1e-9]
    if not k:
        raise KeyError(f"quantile {q} not in forecast grid")
    f, o, skipped = _stack(forecasts, obs)
    score = float(pinball(q, f[:, k[0], :], o).mean()) if len(o) else float("nan")
    return (score, skipped) if return_skipped else score


def crps_energy(forecasts, obs) -> np.ndarray:
    """Energy-form CRPS per lead time, averaged over days.

    ``forecasts`` is ``(days, Q, T)``; the Q quantiles act as an equally
    weighted ensemble.
    """
    f, o, _ = _stack(forecasts, obs)
    Q = f.shape[1]
    spread_obs = np.abs(f - o[:, None, :]).mean(axis=1)
    spread_ens = np.abs(f[:, :, None, :] - f[:, None, :, :]).sum(axis=(1, 2)) / (2.0 * Q * Q)
    return (spread_obs - spread_ens).mean(axis=0)


def reliability_curve(forecasts, obs, levels=QUANTILE_LEVELS, median_index: int | None = None, eps: float = 1e-9):
    """Empirical coverage ``P(obs <= forecast_q)`` per nominal level.

    Periods with a zero median forecast (night) are left out.
    """
    f, o, _ = _stack(forecasts, obs)
    mi = len(levels) // 2 if median_index is None else median_index
    mask = f[:, mi, :] > eps
    out = []
    for k, lv in enumerate(levels):
        hit = (o <= f[:, k, :])[mask]
        out.append((float(lv), float(hit.mean()) if hit.size else float("nan")))
    return out


@dataclass
class ScoreReport:
    qs_per_quantile: dict[float, float]
    crps_per_leadtime: np.ndarray
    reliability: list[tuple[float, float]]
    skipped_days: int = 0

    @property
    def mean_qs(self) -> float:
        return float(np.mean(list(self.qs_per_quantile.values())))

    @property
    def mean_crps(self) -> float:
        return float(np.mean(self.crps_per_leadtime))


def score_forecasts(days: list[DayForecast], Pc: float) -> ScoreReport:
    """Scores of a list of days, normalised by the installed capacity."""
    f = np.stack([d.quantiles for d in days]) / Pc
    o = np.stack([d.observation for d in days]) / Pc
    _, _, skipped = _stack(f, o)
    qs = {q: quantile_score(f, o, q) for q in QUANTILE_LEVELS}
    return ScoreReport(qs, crps_energy(f, o), reliability_curve(f, o), skipped)
