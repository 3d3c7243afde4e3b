"""Command-line interface: ``capfirm {plan,simulate,evaluate-forecasts,campaign}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from .campaign import KINDS, CampaignSpec, VariantSpec, plan_variant, run_campaign, settle_day
from .forecast import score_forecasts, synth_day
from .io import available_days, load_config, load_day_csv
from .model import DataError, DimensionError
from .planner import simulate_controller_day

log = logging.getLogger("capfirm")


def _setup_logging(verbose: int) -> None:
    h = logging.StreamHandler(sys.stderr)
    h.setFormatter(logging.Formatter("%(levelname)s %(name)s %(message)s"))
    root = logging.getLogger()
    root.handlers[:] = [h]
    root.setLevel(logging.DEBUG if verbose > 1 else logging.INFO if verbose else logging.WARNING)


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value instance config (defaults when omitted)")
    common.add_argument("--data-dir", help="CSV forecast archive; synthetic days when omitted")
    common.add_argument("--out-dir", default="out")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--day", type=int, action="append", help="day index (repeatable)")
    common.add_argument("--n-days", type=int, default=30, help="synthetic days when no --day is given")
    common.add_argument("--variant", action="append", choices=KINDS, help="planner variant (repeatable)")
    common.add_argument("--gamma", type=int, help="budget of uncertainty (static policy)")
    common.add_argument("--quantile", type=float, help="lower-bound quantile level (static policy)")
    common.add_argument("--d-gamma", type=float, help="budget depth (dynamic policy)")
    common.add_argument("--d-q", type=float, help="uncertainty depth (dynamic policy)")
    common.add_argument("--epsilon", type=float, default=0.5, help="convergence threshold")
    common.add_argument("--parallel-days", type=int, default=1)
    common.add_argument("--no-warm-start", action="store_true", help="disable BD warm-start cuts")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = argparse.ArgumentParser(prog="capfirm", description="Robust day-ahead planning for capacity firming.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("plan", parents=[common], help="compute the engagement plan of one day")
    sub.add_parser("simulate", parents=[common], help="plan, run the controller and settle one day")
    sub.add_parser("evaluate-forecasts", parents=[common], help="quantile score, CRPS and reliability")
    sub.add_parser("campaign", parents=[common], help="variants x days with settlement tables")
    return p


def _variants(a) -> list[VariantSpec]:
    kinds = a.variant or ["ccg"]
    out = []
    for k in kinds:
        if k in ("oracle", "det-nominal"):
            out.append(VariantSpec(k))
        elif k == "det-quantile":
            q = a.quantile if a.quantile is not None else (None if a.d_q is not None else 0.2)
            out.append(VariantSpec(k, q=q, d_q=a.d_q if q is None else None))
        elif a.d_q is not None and a.d_gamma is not None:
            out.append(VariantSpec(k, d_gamma=a.d_gamma, d_q=a.d_q, eps=a.epsilon, warm_start=not a.no_warm_start))
        else:
            q = 0.2 if a.quantile is None else a.quantile
            g = 24 if a.gamma is None else a.gamma
            out.append(VariantSpec(k, q=q, gamma=g, eps=a.epsilon, warm_start=not a.no_warm_start))
    return out


def _days(a) -> list[int]:
    if a.day:
        return sorted(a.day)
    if a.data_dir:
        return available_days(a.data_dir)
    return list(range(a.n_days))


def _load(a, cfg, day):
    if a.data_dir:
        return load_day_csv(a.data_dir, day, cfg.Pc)
    return synth_day(a.seed * 100_003 + day, cfg, day=day)


def _write_rows(path: Path, header: list[str], rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def cmd_plan(a, cfg) -> int:
    out = Path(a.out_dir)
    for day in _days(a) if a.day else _days(a)[:1]:
        fc = _load(a, cfg, day)
        for v in _variants(a):
            res = plan_variant(v, fc, cfg)
            _write_rows(out / f"plan_{v.label}_day{day}.csv", ["period", "engagement"],
                        [(t + 1, f"{x:.6f}") for t, x in enumerate(res.plan.x)])
            if res.report is not None:
                res.report.write_trace(out / "traces" / f"{v.label}_day{day}.csv")
            print(json.dumps({"day": day, "variant": v.label, "iterations": res.iterations,
                              "optimal": res.optimal, "wall_time": round(res.wall_time, 3)}))
    return 0


def cmd_simulate(a, cfg) -> int:
    out = Path(a.out_dir)
    for day in _days(a) if a.day else _days(a)[:1]:
        fc = _load(a, cfg, day)
        for v in _variants(a):
            res = plan_variant(v, fc, cfg)
            y_m, _ = simulate_controller_day(res.plan, fc, cfg)
            st = settle_day(res.plan, y_m, fc, cfg)
            _write_rows(out / f"dispatch_{v.label}_day{day}.csv", ["period", "engagement", "measured", "pv"],
                        [(t + 1, f"{res.plan.x[t]:.6f}", f"{y_m[t]:.6f}", f"{fc.observation[t]:.6f}")
                         for t in range(cfg.T)])
            print(json.dumps({"day": day, "variant": v.label, **{k: round(val, 6) for k, val in st.items()}}))
    return 0


def cmd_evaluate(a, cfg) -> int:
    days = [_load(a, cfg, d) for d in _days(a)]
    rep = score_forecasts(days, cfg.Pc)
    out = Path(a.out_dir)
    _write_rows(out / "quantile_score.csv", ["quantile", "score"], sorted(rep.qs_per_quantile.items()))
    _write_rows(out / "crps.csv", ["lead_time", "crps"], [(k + 1, v) for k, v in enumerate(rep.crps_per_leadtime)])
    _write_rows(out / "reliability.csv", ["nominal", "coverage"], rep.reliability)
    print(json.dumps({"days": len(days), "mean_qs": rep.mean_qs, "mean_crps": rep.mean_crps,
                      "skipped_days": rep.skipped_days}))
    return 0


def cmd_campaign(a, cfg) -> int:
    variants = _variants(a) if a.variant else [
        VariantSpec("det-nominal"), VariantSpec("det-quantile", q=0.5, name="det-median"),
        VariantSpec("ccg", q=0.2, gamma=24, eps=a.epsilon),
    ]
    spec = CampaignSpec(cfg, variants, data_dir=a.data_dir, days=a.day, seed=a.seed, n_days=a.n_days,
                        out_dir=a.out_dir, parallel_days=a.parallel_days)
    res = run_campaign(spec)
    for row in res.aggregates:
        print(json.dumps({k: (round(v, 4) if isinstance(v, float) else v) for k, v in row.items()}))
    failed = sum(bool(r.error) for r in res.rows)
    if failed or res.errors:
        log.error("campaign finished with %d failed rows and %d skipped days", failed, len(res.errors))
        return 1
    return 0


COMMANDS = {"plan": cmd_plan, "simulate": cmd_simulate, "evaluate-forecasts": cmd_evaluate, "campaign": cmd_campaign}


def main(argv: list[str] | None = None) -> int:
    a = _parser().parse_args(argv)
    _setup_logging(a.verbose)
    try:
        cfg = load_config(a.config)
        return COMMANDS[a.command](a, cfg)
    except (DataError, DimensionError, ValueError, OSError) as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
