"""CSV ingestion of forecast archives and the flat key=value config format.

Files in a data directory (power in kW, periods 1-based):

    quantiles.csv     day,period,q10,q20,...,q90
    nominal.csv       day,period,value
    intraday.csv      day,issue_period,target_period,value   (optional)
    observations.csv  day,period,value
"""

from __future__ import annotations

import csv
import logging
from dataclasses import fields
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.optimize import isotonic_regression

from .model import QUANTILE_LEVELS, BessParams, DataError, DayForecast, DimensionError, InstanceConfig, default_config

log = logging.getLogger(__name__)

QUANTILE_COLUMNS = [f"q{int(round(100 * q))}" for q in QUANTILE_LEVELS]


class MissingDayError(KeyError):
    pass


def _read(path: Path, key_cols: list[str], value_cols: list[str]) -> dict[int, list[tuple]]:
    """Rows grouped by day; malformed rows raise with their line number."""
    out: dict[int, list[tuple]] = {}
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader)]
        missing = [c for c in key_cols + value_cols if c not in header]
        if missing:
            raise DataError(f"{path.name}: missing columns {missing}")
        pos = [header.index(c) for c in key_cols + value_cols]
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                vals = [row[i].strip() for i in pos]
                keys = tuple(int(v) for v in vals[: len(key_cols)])
                nums = tuple(float(v) for v in vals[len(key_cols):])
            except (ValueError, IndexError) as exc:
                raise DataError(f"{path.name}:{lineno}: malformed row {row!r}") from exc
            out.setdefault(keys[0], []).append(keys[1:] + nums)
    return out


@lru_cache(maxsize=8)
def _load_dir(directory: str) -> dict[str, dict]:
    d = Path(directory)
    data = {
        "quantiles": _read(d / "quantiles.csv", ["day", "period"], QUANTILE_COLUMNS),
        "nominal": _read(d / "nominal.csv", ["day", "period"], ["value"]),
        "observations": _read(d / "observations.csv", ["day", "period"], ["value"]),
    }
    intra = d / "intraday.csv"
    data["intraday"] = _read(intra, ["day", "issue_period", "target_period"], ["value"]) if intra.exists() else {}
    return data


def available_days(directory: str | Path) -> list[int]:
    data = _load_dir(str(Path(directory).resolve()))
    return sorted(set(data["quantiles"]) & set(data["observations"]))


def _series(rows, T: int | None, name: str) -> np.ndarray:
    rows = sorted(rows)
    periods = [r[0] for r in rows]
    n = len(rows)
    if periods != list(range(1, n + 1)):
        raise DimensionError(f"{name}: periods must run 1..{n} without gaps")
    if T is not None and n != T:
        raise DimensionError(f"{name}: {n} periods, expected {T}")
    return np.array([r[1:] for r in rows], dtype=float)


def load_day_csv(directory: str | Path, day: int, Pc: float | None = None) -> DayForecast:
    """Parse and validate one day; crossing quantiles are repaired isotonically."""
    data = _load_dir(str(Path(directory).resolve()))
    for part in ("quantiles", "observations"):
        if day not in data[part]:
            raise MissingDayError(f"day {day} missing from {part}.csv")
    q = _series(data["quantiles"][day], None, "quantiles").T
    T = q.shape[1]
    obs = _series(data["observations"][day], T, "observations")[:, 0]
    if day in data["nominal"]:
        nominal = _series(data["nominal"][day], T, "nominal")[:, 0]
    else:
        nominal = q[len(QUANTILE_LEVELS) // 2].copy()
    crossing = np.flatnonzero(np.any(np.diff(q, axis=0) < 0, axis=0))
    if crossing.size:
        log.warning("day %d: quantiles cross at periods %s; isotonic repair applied", day, (crossing + 1).tolist())
        for t in crossing:
            q[:, t] = isotonic_regression(q[:, t]).x
    intraday = np.tile(nominal, (T, 1))  # persistence of the day-ahead forecast
    for issue, target, value in data["intraday"].get(day, []):
        if not (1 <= issue <= T and 1 <= target <= T):
            raise DimensionError(f"intraday day {day}: period out of range ({issue}, {target})")
        intraday[issue - 1, target - 1] = value
    fc = DayForecast(q, nominal, intraday, obs, day=day)
    if Pc is not None:
        issues = [i for i in fc.validate(Pc) if i != "quantiles cross"]
        if issues:
            raise DataError(f"day {day}: {'; '.join(issues)}")
    return fc


def write_days_csv(directory: str | Path, days: list[DayForecast]) -> Path:
    """Write days in the ingestion schema (round-trips through ``load_day_csv``)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    with (d / "quantiles.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["day", "period"] + QUANTILE_COLUMNS)
        for fc in days:
            for t in range(fc.T):
                w.writerow([fc.day, t + 1] + [repr(float(v)) for v in fc.quantiles[:, t]])
    for name, attr in (("nominal", "nominal"), ("observations", "observation")):
        with (d / f"{name}.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["day", "period", "value"])
            for fc in days:
                for t, v in enumerate(getattr(fc, attr)):
                    w.writerow([fc.day, t + 1, repr(float(v))])
    with (d / "intraday.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["day", "issue_period", "target_period", "value"])
        for fc in days:
            for i in range(fc.T):
                for k in range(i, fc.T):
                    w.writerow([fc.day, i + 1, k + 1, repr(float(fc.intraday[i, k]))])
    _load_dir.cache_clear()
    return d


# -- configuration ---------------------------------------------------------

CONFIG_KEYS = {
    "T": int,
    "dt": float,
    "Pc": float,
    "base_price": float,
    "peak_multiplier": float,
    "peak_start": float,
    "peak_end": float,
    "beta": float,
    "tol_frac": float,
    "ramp_offpeak": float,
    "ramp_peak": float,
    "s_max": float,
    "charge_hours": float,
    "eta": float,
    "s_init": float,
    "s_final": float,
}


def parse_config_text(text: str) -> dict:
    """``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        if k not in CONFIG_KEYS:
            raise ValueError(f"config line {lineno}: unknown key {k!r}")
        out[k] = CONFIG_KEYS[k](v)
    return out


def config_from_mapping(m: dict) -> InstanceConfig:
    m = dict(m)
    s_init = m.pop("s_init", None)
    s_final = m.pop("s_final", None)
    peak = (m.pop("peak_start", 19.0), m.pop("peak_end", 21.0))
    cfg = default_config(peak_hours=peak, **m)
    if s_init is not None or s_final is not None:
        b = cfg.bess
        kw = {f.name: getattr(b, f.name) for f in fields(BessParams)}
        kw["s_init"] = b.s_init if s_init is None else s_init
        kw["s_final"] = b.s_final if s_final is None else s_final
        cfg = cfg.with_(bess=BessParams(**kw))
    return cfg


def load_config(path: str | Path | None) -> InstanceConfig:
    if path is None:
        return default_config()
    return config_from_mapping(parse_config_text(Path(path).read_text()))
