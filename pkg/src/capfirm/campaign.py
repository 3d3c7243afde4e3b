"""Campaign orchestration: plan, simulate the controller and settle, per day and variant."""

from __future__ import annotations

import csv
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .benders import run_bd
from .ccg import run_ccg
from .forecast import NoiseParams, synth_day
from .io import MissingDayError, available_days, load_day_csv
from .model import DayForecast, EngagementPlan, InstanceConfig, penalties, validate_engagement
from .planner import oracle_plan, plan_day, simulate_controller_day
from .risk import RiskParams, dynamic_params, dynamic_pmin, lower_bound_curve, static_params
from .solver import Status

log = logging.getLogger(__name__)

KINDS = ("oracle", "det-nominal", "det-quantile", "bd", "ccg")


@dataclass(frozen=True)
class VariantSpec:
    """One planner variant; robust variants take a static (q, gamma) or dynamic (d_gamma, d_q) policy."""

    kind: str
    q: float | None = None
    gamma: int | None = None
    d_gamma: float | None = None
    d_q: float | None = None
    eps: float = 0.5
    warm_start: bool = True
    name: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown variant {self.kind!r}; expected one of {KINDS}")
        if self.kind == "det-quantile" and self.q is None and self.d_q is None:
            raise ValueError("det-quantile needs q or d_q")
        if self.kind in ("bd", "ccg"):
            dynamic = self.d_q is not None and self.d_gamma is not None
            static = self.q is not None and self.gamma is not None
            if not (dynamic or static):
                raise ValueError(f"{self.kind} needs (q, gamma) or (d_gamma, d_q)")

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        if self.kind in ("oracle", "det-nominal"):
            return self.kind
        if self.kind == "det-quantile":
            return f"det-q{self.q:g}" if self.d_q is None else f"det-dq{self.d_q:g}"
        if self.d_q is not None and self.d_gamma is not None:
            return f"{self.kind}-dyn[{self.d_gamma:g},{self.d_q:g}]"
        return f"{self.kind}[{self.q:g},{self.gamma}]"

    def risk(self, fc: DayForecast, cfg: InstanceConfig) -> RiskParams:
        if self.d_q is not None and self.d_gamma is not None:
            return dynamic_params(fc, self.d_gamma, self.d_q, cfg)
        if self.d_q is not None:
            return RiskParams(dynamic_pmin(fc, self.d_q, cfg.Pc), 0, "dynamic", d_q=self.d_q)
        return static_params(self.q, self.gamma if self.gamma is not None else 0)


@dataclass
class CampaignSpec:
    cfg: InstanceConfig
    variants: list[VariantSpec]
    data_dir: str | None = None
    days: list[int] | None = None
    seed: int = 0
    n_days: int = 30
    noise: NoiseParams = field(default_factory=NoiseParams)
    out_dir: str | None = None
    parallel_days: int = 1
    sp_time_limit: float = 10.0

    def __post_init__(self):
        if not self.variants:
            raise ValueError("campaign needs at least one variant")
        if not any(v.kind == "oracle" for v in self.variants):
            self.variants = [VariantSpec("oracle")] + list(self.variants)
        labels = [v.label for v in self.variants]
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate variant labels: {labels}")


@dataclass
class SettlementRow:
    day: int
    variant: str
    gross: float
    penalty: float
    net: float
    normalized: float
    iterations: int
    wall_time: float
    optimal: bool
    simultaneous: int = 0
    error: str = ""


def settle_day(plan: EngagementPlan, y_m, fc: DayForecast | None, cfg: InstanceConfig) -> dict[str, float]:
    """Ex-post remuneration of the measured export against the engagement."""
    y_m = np.asarray(y_m, dtype=float)
    if y_m.size != cfg.T:
        raise ValueError(f"y_m length {y_m.size} != T={cfg.T}")
    gross = float(np.sum(cfg.unit_value * y_m))
    pen = float(np.sum(penalties(plan.x, y_m, cfg)))
    return {"gross": gross, "penalty": pen, "net": gross - pen}


@dataclass
class VariantOutcome:
    plan: EngagementPlan
    iterations: int
    wall_time: float
    optimal: bool
    simultaneous: int = 0
    report: object = None


def plan_variant(v: VariantSpec, fc: DayForecast, cfg: InstanceConfig, sp_time_limit: float = 10.0) -> VariantOutcome:
    t0 = time.perf_counter()
    if v.kind == "oracle":
        r = oracle_plan(fc, cfg)
        return VariantOutcome(r.plan, 0, time.perf_counter() - t0, r.status == Status.OPTIMAL)
    if v.kind == "det-nominal":
        r = plan_day(fc.nominal, cfg)
        return VariantOutcome(r.plan, 0, time.perf_counter() - t0, r.status == Status.OPTIMAL)
    risk = v.risk(fc, cfg)
    if v.kind == "det-quantile":
        r = plan_day(lower_bound_curve(fc, risk.level_curve(cfg.T)), cfg)
        return VariantOutcome(r.plan, 0, time.perf_counter() - t0, r.status == Status.OPTIMAL)
    uset = risk.uncertainty_set(fc)
    if v.kind == "bd":
        rep = run_bd(fc, uset, cfg, v.eps, warm_start=v.warm_start, sp_time_limit=sp_time_limit)
    else:
        rep = run_ccg(fc, uset, cfg, v.eps, sp_time_limit=sp_time_limit)
    return VariantOutcome(rep.plan, rep.iterations, rep.wall_time, rep.optimal, rep.simultaneous_violations, rep)


def _load(spec: CampaignSpec, day: int) -> DayForecast:
    if spec.data_dir is not None:
        return load_day_csv(spec.data_dir, day, spec.cfg.Pc)
    return synth_day(spec.seed * 100_003 + day, spec.cfg, spec.noise, day=day)


def run_day(spec: CampaignSpec, day: int) -> tuple[list[SettlementRow], list[str]]:
    """All variants of one day; planner failures are flagged on the row."""
    cfg = spec.cfg
    try:
        fc = _load(spec, day)
    except MissingDayError as exc:
        log.warning("day=%d variant=- skipped: %s", day, exc)
        return [], [f"day {day}: {exc}"]
    rows: list[SettlementRow] = []
    for v in spec.variants:
        try:
            out = plan_variant(v, fc, cfg, spec.sp_time_limit)
            viol = validate_engagement(out.plan, cfg)
            if viol:
                raise RuntimeError(f"invalid engagement: {viol[0]}")
            # the oracle knows the realised generation at every lead time
            intra = np.tile(fc.observation, (cfg.T, 1)) if v.kind == "oracle" else None
            y_m, scheds = simulate_controller_day(out.plan, fc, cfg, intraday=intra)
            sim = out.simultaneous + sum(int(s.simultaneous_periods(cfg).size) for s in scheds)
            st = settle_day(out.plan, y_m, fc, cfg)
            rows.append(
                SettlementRow(day, v.label, st["gross"], st["penalty"], st["net"], math.nan,
                              out.iterations, out.wall_time, out.optimal, sim)
            )
            if out.report is not None and spec.out_dir is not None:
                out.report.write_trace(Path(spec.out_dir) / "traces" / f"{v.label}_day{day}.csv")
            log.info("day=%d variant=%s net=%.4f iterations=%d", day, v.label, st["net"], out.iterations)
        except Exception as exc:  # noqa: BLE001 - a failed planner must not stop the campaign
            log.error("day=%d variant=%s failed: %s", day, v.label, exc)
            rows.append(SettlementRow(day, v.label, math.nan, math.nan, math.nan, math.nan, 0, 0.0, False, 0, str(exc)))
    oracle = next((r for r in rows if r.variant == spec.variants[0].label), None)
    base = oracle.net if oracle is not None else math.nan
    if not base > 0:
        log.warning("day=%d variant=oracle net profit %.4g not positive; normalisation undefined", day, base)
    for r in rows:
        r.normalized = 100.0 * r.net / base if base > 0 else math.nan
    return rows, []


def _run_day_star(args):
    return run_day(*args)


@dataclass
class CampaignResult:
    rows: list[SettlementRow]
    aggregates: list[dict]
    errors: list[str]

    def by_variant(self, label: str) -> list[SettlementRow]:
        return [r for r in self.rows if r.variant == label]


def aggregate(rows: list[SettlementRow], labels: list[str]) -> list[dict]:
    out = []
    for lab in labels:
        rs = [r for r in rows if r.variant == lab]
        ok = [r for r in rs if not r.error]
        wt = np.array([r.wall_time for r in ok]) if ok else np.array([math.nan])
        norm = np.array([r.normalized for r in ok]) if ok else np.array([math.nan])
        out.append({
            "variant": lab,
            "days": len(rs),
            "failed": len(rs) - len(ok),
            "mean_normalized": float(np.nanmean(norm)) if np.isfinite(norm).any() else math.nan,
            "mean_net": float(np.mean([r.net for r in ok])) if ok else math.nan,
            "mean_wall_time": float(np.mean(wt)),
            "std_wall_time": float(np.std(wt)),
            "pct_non_optimal": 100.0 * sum(not r.optimal for r in rs) / len(rs) if rs else math.nan,
            "mean_iterations": float(np.mean([r.iterations for r in ok])) if ok else math.nan,
            "simultaneous": int(sum(r.simultaneous for r in ok)),
        })
    return out


def campaign_days(spec: CampaignSpec) -> list[int]:
    if spec.days is not None:
        return sorted(spec.days)
    if spec.data_dir is not None:
        return available_days(spec.data_dir)
    return list(range(spec.n_days))


def run_campaign(spec: CampaignSpec) -> CampaignResult:
    days = campaign_days(spec)
    jobs = [(spec, d) for d in days]
    if spec.parallel_days > 1 and len(days) > 1:
        with ProcessPoolExecutor(max_workers=spec.parallel_days) as pool:
            results = list(pool.map(_run_day_star, jobs))
    else:
        results = [run_day(*j) for j in jobs]
    rows = [r for rs, _ in results for r in rs]
    errors = [e for _, es in results for e in es]
    order = {v.label: i for i, v in enumerate(spec.variants)}
    rows.sort(key=lambda r: (r.day, order[r.variant]))
    res = CampaignResult(rows, aggregate(rows, [v.label for v in spec.variants]), errors)
    if spec.out_dir is not None:
        write_campaign(res, spec.out_dir)
    return res


def write_campaign(res: CampaignResult, out_dir: str | Path) -> None:
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    cols = list(SettlementRow.__dataclass_fields__)
    with (d / "settlement.csv").open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for r in res.rows:
            w.writerow(asdict(r))
    if res.aggregates:
        with (d / "aggregate.csv").open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(res.aggregates[0]))
            w.writeheader()
            w.writerows(res.aggregates)
