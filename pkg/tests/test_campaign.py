import csv
import json
import math

import numpy as np
import pytest

from capfirm.campaign import CampaignSpec, VariantSpec, run_campaign, settle_day
from capfirm.cli import main
from capfirm.forecast import synth_day
from capfirm.io import write_days_csv
from capfirm.model import EngagementPlan, default_config

CFG = default_config(T=24)


class TestSettlement:
    def test_hand_case(self, toy):
        st = settle_day(EngagementPlan(np.array([0, 40, 40, 0.0])), [0, 20, 40, 0], None, toy)
        assert st == pytest.approx({"gross": 3.0, "penalty": 4.75, "net": -1.75})

    def test_zero(self, toy):
        st = settle_day(EngagementPlan(np.zeros(4)), np.zeros(4), None, toy)
        assert st["net"] == 0

    def test_exact_delivery(self, toy):
        x = np.array([10, 20, 30, 5.0])
        st = settle_day(EngagementPlan(x), x, None, toy)
        assert st["penalty"] == 0 and st["net"] == st["gross"]

    def test_length(self, toy):
        with pytest.raises(ValueError):
            settle_day(EngagementPlan(np.zeros(4)), np.zeros(3), None, toy)


class TestVariantSpec:
    def test_labels(self):
        assert VariantSpec("bd", q=0.2, gamma=24).label == "bd[0.2,24]"
        assert VariantSpec("ccg", d_gamma=0.1, d_q=0.3).label == "ccg-dyn[0.1,0.3]"
        assert VariantSpec("det-quantile", q=0.3).label == "det-q0.3"

    def test_invalid(self):
        with pytest.raises(ValueError):
            VariantSpec("ccg", q=0.2)
        with pytest.raises(ValueError):
            VariantSpec("magic")

    def test_oracle_prepended(self):
        spec = CampaignSpec(CFG, [VariantSpec("det-nominal")])
        assert spec.variants[0].kind == "oracle"

    def test_duplicates(self):
        with pytest.raises(ValueError):
            CampaignSpec(CFG, [VariantSpec("det-nominal"), VariantSpec("det-nominal")])


@pytest.fixture(scope="module")
def small_campaign(tmp_path_factory):
    out = tmp_path_factory.mktemp("camp")
    variants = [
        VariantSpec("det-nominal"),
        VariantSpec("det-quantile", q=0.5, name="det-median"),
        VariantSpec("ccg", q=0.2, gamma=0, name="ccg-g0"),
        VariantSpec("ccg", q=0.2, gamma=4),
    ]
    spec = CampaignSpec(CFG, variants, seed=1, n_days=3, out_dir=str(out))
    return spec, run_campaign(spec), out


def test_campaign_tables(small_campaign):
    spec, res, out = small_campaign
    assert len(res.rows) == 3 * 5
    assert [r.variant for r in res.rows[:5]] == [v.label for v in spec.variants]
    assert all(not r.error for r in res.rows)
    assert all(math.isclose(r.normalized, 100.0) for r in res.by_variant("oracle"))
    assert all(r.net == pytest.approx(r.gross - r.penalty) for r in res.rows)
    rows = list(csv.DictReader((out / "settlement.csv").open()))
    assert len(rows) == 15
    assert (out / "aggregate.csv").exists()
    assert (out / "traces" / "ccg[0.2,4]_day0.csv").exists()


def test_gamma_zero_matches_median(small_campaign):
    _, res, _ = small_campaign
    for a, b in zip(res.by_variant("ccg-g0"), res.by_variant("det-median")):
        assert a.net == pytest.approx(b.net, abs=0.5)


def test_oracle_dominates(small_campaign):
    _, res, _ = small_campaign
    for r in res.rows:
        assert r.normalized <= 100.0 + 1e-6
        assert r.simultaneous == 0


def test_reproducible(small_campaign):
    spec, res, _ = small_campaign
    again = run_campaign(CampaignSpec(spec.cfg, spec.variants[1:4], seed=1, n_days=2))
    for a, b in zip([r for r in res.rows if r.day < 2 and r.variant != "ccg[0.2,4]"], again.rows):
        assert (a.day, a.variant, a.net) == (b.day, b.variant, b.net)


def test_det_median_equals_nominal_when_nominal_is_median():
    from capfirm.campaign import plan_variant
    from capfirm.model import DayForecast

    # the synthetic nominal is the noise-free profile; rebuild the day with nominal := median
    fc = synth_day(4, CFG)
    same = DayForecast(fc.quantiles, fc.median, np.tile(fc.median, (CFG.T, 1)), fc.observation)
    x1 = plan_variant(VariantSpec("det-nominal"), same, CFG).plan.x
    x2 = plan_variant(VariantSpec("det-quantile", q=0.5), same, CFG).plan.x
    assert np.allclose(x1, x2)


def test_failure_is_flagged(monkeypatch):
    import capfirm.campaign as camp

    def boom(*a, **k):
        raise RuntimeError("solver exploded")

    monkeypatch.setattr(camp, "run_ccg", boom)
    res = run_campaign(CampaignSpec(CFG, [VariantSpec("ccg", q=0.2, gamma=2)], n_days=1))
    bad = res.by_variant("ccg[0.2,2]")[0]
    assert bad.error == "solver exploded" and not bad.optimal
    assert res.aggregates[1]["failed"] == 1


def test_missing_days_reported(tmp_path):
    d = write_days_csv(tmp_path / "data", [synth_day(1, CFG, day=0)])
    res = run_campaign(CampaignSpec(CFG, [VariantSpec("det-nominal")], data_dir=str(d), days=[0, 5]))
    assert {r.day for r in res.rows} == {0}
    assert len(res.errors) == 1


class TestCli:
    @pytest.fixture
    def cfgfile(self, tmp_path):
        p = tmp_path / "plant.cfg"
        p.write_text("T = 24\n")
        return str(p)

    def test_plan(self, cfgfile, tmp_path, capsys):
        out = tmp_path / "o"
        rc = main(["plan", "--config", cfgfile, "--out-dir", str(out), "--day", "2",
                   "--variant", "bd", "--gamma", "2", "--quantile", "0.2"])
        assert rc == 0
        line = json.loads(capsys.readouterr().out.splitlines()[0])
        assert line["variant"] == "bd[0.2,2]" and line["iterations"] >= 10
        assert (out / "plan_bd[0.2,2]_day2.csv").exists()

    def test_simulate(self, cfgfile, tmp_path, capsys):
        rc = main(["simulate", "--config", cfgfile, "--out-dir", str(tmp_path), "--variant", "det-nominal"])
        assert rc == 0
        rec = json.loads(capsys.readouterr().out)
        assert rec["net"] == pytest.approx(rec["gross"] - rec["penalty"], abs=1e-5)

    def test_evaluate(self, cfgfile, tmp_path, capsys):
        rc = main(["evaluate-forecasts", "--config", cfgfile, "--out-dir", str(tmp_path), "--n-days", "5"])
        assert rc == 0
        assert json.loads(capsys.readouterr().out)["days"] == 5
        assert (tmp_path / "reliability.csv").exists()

    def test_campaign(self, cfgfile, tmp_path, capsys):
        rc = main(["campaign", "--config", cfgfile, "--out-dir", str(tmp_path), "--n-days", "1",
                   "--variant", "det-nominal", "--variant", "det-quantile", "--quantile", "0.3"])
        assert rc == 0
        labels = [json.loads(line)["variant"] for line in capsys.readouterr().out.splitlines()]
        assert labels == ["oracle", "det-nominal", "det-q0.3"]

    def test_bad_config_exit_code(self, tmp_path):
        p = tmp_path / "bad.cfg"
        p.write_text("nonsense = 1\n")
        assert main(["plan", "--config", str(p)]) == 2

    def test_data_dir(self, cfgfile, tmp_path, capsys):
        d = write_days_csv(tmp_path / "data", [synth_day(9, CFG, day=7)])
        rc = main(["simulate", "--config", cfgfile, "--data-dir", str(d), "--out-dir", str(tmp_path),
                   "--variant", "det-nominal"])
        assert rc == 0
        assert json.loads(capsys.readouterr().out)["day"] == 7
