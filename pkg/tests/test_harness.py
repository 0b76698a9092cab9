import csv
import json
import statistics

import pytest

import agel.harness
from agel.agent import MODES, QuestRecord
from agel.cpg import CausalProgramGraph
from agel.harness import (
    METRICS,
    AggregateReport,
    ExperimentMatrix,
    Stat,
    aggregate,
    check_ordering,
    records_from_logs,
    run_matrix,
    run_one,
)


def rec(mode, seed, qid="q1", success=True, first_try=True, difficulty=1, interactions=2, **kw):
    return QuestRecord(qid, difficulty, mode, seed, success, first_try, kw.get("iterations", 1), interactions,
                       kw.get("adaptation_trials", 0), kw.get("rules_added", 0), kw.get("rules_retracted", 0))


def report_with(values: dict[str, tuple[float, float]]) -> AggregateReport:
    modes = {}
    for m, (succ, ft) in values.items():
        modes[m] = {k: Stat(0.0, 0.0) for k in METRICS}
        modes[m]["success_pct"] = Stat(succ, 0.0)
        modes[m]["first_try_pct"] = Stat(ft, 0.0)
    return AggregateReport([0], modes, {m: {} for m in values})


@pytest.fixture(scope="module")
def matrix_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("runs")
    matrix = ExperimentMatrix(seeds=[0], out=str(out))
    return matrix, run_matrix(matrix), out


def test_single_seed_has_zero_std():
    r = aggregate([rec("full", 0), rec("full", 0, "q2", success=False, first_try=False)])
    assert r.modes["full"]["success_pct"] == Stat(50.0, 0.0)
    assert all(s.std == 0.0 for s in r.modes["full"].values())


def test_std_is_population_std_over_seeds():
    r = aggregate([rec("full", 0), rec("full", 1, success=False, first_try=False), rec("full", 2)])
    assert r.modes["full"]["success_pct"].mean == pytest.approx(200 / 3)
    assert r.modes["full"]["success_pct"].std == pytest.approx(statistics.pstdev([100, 0, 100]))


def test_per_difficulty_success():
    r = aggregate([rec("full", 0, "a", difficulty=1), rec("full", 0, "b", success=False, difficulty=5)])
    assert r.by_difficulty["full"] == {1: Stat(100.0, 0.0), 5: Stat(0.0, 0.0)}


def test_ordering_names_the_failed_comparison():
    r = report_with({"full": (60, 40), "no_ntp": (60, 30), "no_ilp": (80, 20), "baseline": (50, 20)})
    result = check_ordering(r)
    assert not result.passed
    assert any("no_ntp" in v and "no_ilp" in v and "success_pct" in v for v in result.violations)


def test_ordering_passes_and_needs_strict_first_try():
    good = report_with({"full": (100, 60), "no_ntp": (100, 40), "no_ilp": (30, 30), "baseline": (70, 30)})
    assert check_ordering(good).passed
    tie = report_with({"full": (100, 40), "no_ntp": (100, 40), "no_ilp": (30, 30), "baseline": (70, 30)})
    assert not check_ordering(tie).passed


def test_ordering_requires_all_modes():
    with pytest.raises(ValueError, match="baseline"):
        check_ordering(report_with({"full": (1, 1), "no_ntp": (1, 1), "no_ilp": (1, 1)}))


def test_matrix_validation(tmp_path):
    with pytest.raises(ValueError):
        ExperimentMatrix(modes=["full", "bogus"])
    with pytest.raises(ValueError):
        ExperimentMatrix(seeds=[])
    with pytest.raises(ValueError, match="colour"):
        ExperimentMatrix.from_json({"colour": 1})
    m = ExperimentMatrix.from_json({"agent": {"policy": {"sigma_min": 0.7}, "train": {"epochs": 10}}})
    cfg = m.agent_config("full")
    assert cfg.policy.sigma_min == 0.7 and cfg.train.epochs == 10


def test_aggregation_matches_log_recomputation(matrix_run):
    matrix, report, out = matrix_run
    per_mode = {}
    for m in MODES:
        with open(out / f"run_{m}_0.jsonl") as fh:
            ends = [json.loads(line)["record"] for line in fh if '"quest_end"' in line]
        per_mode[m] = ends
        n = len(ends)
        assert report.get(m, "success_pct") == pytest.approx(100 * sum(e["success"] for e in ends) / n)
        assert report.get(m, "first_try_pct") == pytest.approx(100 * sum(e["first_try"] for e in ends) / n)
        assert report.get(m, "total_interactions") == sum(e["interactions"] for e in ends)
        assert report.get(m, "rules_learned") == sum(e["rules_added"] for e in ends)
    again = aggregate(records_from_logs(out.glob("run_*.jsonl")))
    assert again.to_csv() == report.to_csv()
    assert (out / "report.csv").read_text() == report.to_csv()
    assert json.loads((out / "report.json").read_text())["seeds"] == [0]


def test_runs_are_byte_identical(matrix_run, tmp_path):
    matrix, report, out = matrix_run
    again = ExperimentMatrix(seeds=[0], out=str(tmp_path), workers=2)
    run_matrix(again)
    for name in ["report.csv", "report.json", *(f"run_{m}_0.jsonl" for m in MODES), *(f"growth_{m}_0.csv" for m in MODES)]:
        assert (out / name).read_bytes() == (tmp_path / name).read_bytes(), name


def test_growth_invariant(matrix_run):
    _, _, out = matrix_run
    for m in MODES:
        with open(out / f"growth_{m}_0.csv") as fh:
            rows = list(csv.DictReader(fh))
        for row in rows:
            assert int(row["rules_added"]) - int(row["rules_retracted"]) == int(row["edges"])
        last = rows[-1]
        snap = CausalProgramGraph.load((out / "snapshots" / f"{m}_0" / f"{last['quest_id']}.cpg").read_text())
        assert len(snap) == int(last["edges"])


def test_crash_fails_remaining_quests(tmp_path, monkeypatch):
    calls = []
    real = agel.harness.run_quest

    def flaky(state, quest, seed):
        calls.append(quest.id)
        if quest.id == "q3":
            raise RuntimeError("boom")
        return real(state, quest, seed)

    monkeypatch.setattr(agel.harness, "run_quest", flaky)
    matrix = ExperimentMatrix(modes=["baseline"], seeds=[0], out=str(tmp_path))
    records = run_one(matrix, "baseline", 0)
    assert calls == ["q1", "q2", "q3"]
    assert [r.success for r in records[:2]] == [True, True]
    assert len(records) == 10 and not any(r.success for r in records[2:])
    events = [json.loads(line) for line in (tmp_path / "run_baseline_0.jsonl").read_text().splitlines()]
    assert [e for e in events if e["event"] == "crash"][0]["error"] == "RuntimeError: boom"
    assert events[-1]["event"] == "run_end"
