"""Experiment matrix: every mode over every seed, aggregated as mean +- std."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from agel.agent import MODES, AgentConfig, QuestRecord, make_agent, run_quest
from agel.grounding import GroundingConfig
from agel.ntp import TrainConfig
from agel.planner import PlannerBackend, VerifierPolicy
from agel.questworld import QuestSpec, bundled, load_curriculum

log = logging.getLogger(__name__)

METRICS = (
    "success_pct",
    "first_try_pct",
    "avg_iterations",
    "avg_interactions",
    "total_interactions",
    "rules_learned",
    "rules_retracted",
    "adaptation_trials",
)
RECORD_FIELDS = [f.name for f in dataclasses.fields(QuestRecord)]


@dataclass
class ExperimentMatrix:
    modes: list[str] = field(default_factory=lambda: list(MODES))
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])
    curriculum: str = "curriculum.json"
    out: str = "runs"
    workers: int = 1
    agent: dict = field(default_factory=dict)  # AgentConfig scalar overrides
    planner: dict = field(default_factory=dict)  # PlannerBackend fields

    def __post_init__(self):
        if not self.modes:
            raise ValueError("matrix needs at least one mode")
        if not self.seeds:
            raise ValueError("matrix needs at least one seed")
        bad = [m for m in self.modes if m not in MODES]
        if bad:
            raise ValueError(f"unknown modes: {', '.join(bad)}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    @classmethod
    def from_json(cls, d: Mapping) -> "ExperimentMatrix":
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown config keys: {', '.join(sorted(extra))}")
        return cls(**d)

    def curriculum_path(self) -> Path:
        p = Path(self.curriculum)
        return p if p.exists() else bundled(self.curriculum)

    def agent_config(self, mode: str) -> AgentConfig:
        kw = dict(self.agent)
        # nested sections map onto the sub-configs
        if "policy" in kw:
            kw["policy"] = VerifierPolicy(**kw["policy"])
        if "train" in kw:
            kw["train"] = TrainConfig(**kw["train"])
        if "grounding" in kw:
            kw["grounding"] = GroundingConfig(**kw["grounding"])
        return AgentConfig(mode=mode, backend=PlannerBackend(**self.planner), **kw)


@dataclass
class Stat:
    mean: float
    std: float

    def __str__(self) -> str:
        return f"{self.mean:.2f} +- {self.std:.2f}"


def stat(values: Sequence[float]) -> Stat:
    # population std so that a single seed reports exactly 0
    return Stat(statistics.fmean(values), statistics.pstdev(values) if len(values) > 1 else 0.0)


@dataclass
class AggregateReport:
    seeds: list[int]
    modes: dict[str, dict[str, Stat]]
    # mode -> difficulty -> success %
    by_difficulty: dict[str, dict[int, Stat]]

    def get(self, mode: str, metric: str) -> float:
        return self.modes[mode][metric].mean

    def to_json(self) -> dict:
        return {
            "seeds": self.seeds,
            "note": "step counts stand in for wall-clock time",
            "modes": {m: {k: dataclasses.asdict(s) for k, s in v.items()} for m, v in self.modes.items()},
            "by_difficulty": {
                m: {str(d): dataclasses.asdict(s) for d, s in sorted(v.items())} for m, v in self.by_difficulty.items()
            },
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["mode", "metric", "mean", "std"])
        for m, metrics in self.modes.items():
            for k in METRICS:
                wr.writerow([m, k, f"{metrics[k].mean:.6f}", f"{metrics[k].std:.6f}"])
            for d, s in sorted(self.by_difficulty[m].items()):
                wr.writerow([m, f"success_pct_d{d}", f"{s.mean:.6f}", f"{s.std:.6f}"])
        return buf.getvalue()


def run_metrics(records: Sequence[QuestRecord]) -> dict[str, float]:
    n = len(records)
    return {
        "success_pct": 100.0 * sum(r.success for r in records) / n,
        "first_try_pct": 100.0 * sum(r.first_try for r in records) / n,
        "avg_iterations": sum(r.iterations for r in records) / n,
        "avg_interactions": sum(r.interactions for r in records) / n,
        "total_interactions": float(sum(r.interactions for r in records)),
        "rules_learned": float(sum(r.rules_added for r in records)),
        "rules_retracted": float(sum(r.rules_retracted for r in records)),
        "adaptation_trials": float(sum(r.adaptation_trials for r in records)),
    }


def aggregate(records: Iterable[QuestRecord]) -> AggregateReport:
    runs: dict[str, dict[int, list[QuestRecord]]] = {}
    for r in records:
        runs.setdefault(r.mode, {}).setdefault(r.seed, []).append(r)
    if not runs:
        raise ValueError("no records to aggregate")
    modes, by_diff, seeds = {}, {}, set()
    for mode in [m for m in MODES if m in runs]:
        per_seed = [run_metrics(runs[mode][s]) for s in sorted(runs[mode])]
        seeds |= set(runs[mode])
        modes[mode] = {k: stat([p[k] for p in per_seed]) for k in METRICS}
        diffs = sorted({r.difficulty for rs in runs[mode].values() for r in rs})
        by_diff[mode] = {}
        for d in diffs:
            vals = []
            for s in sorted(runs[mode]):
                sub = [r for r in runs[mode][s] if r.difficulty == d]
                vals.append(100.0 * sum(r.success for r in sub) / len(sub) if sub else 0.0)
            by_diff[mode][d] = stat(vals)
    return AggregateReport(sorted(seeds), modes, by_diff)


# -- ordering checks ---------------------------------------------------------


@dataclass
class OrderingResult:
    violations: list[str]

    @property
    def passed(self) -> bool:
        return not self.violations

    def __str__(self) -> str:
        return "pass" if self.passed else "fail: " + "; ".join(self.violations)


def check_ordering(report: AggregateReport) -> OrderingResult:
    missing = [m for m in MODES if m not in report.modes]
    if missing:
        raise ValueError(f"report lacks modes: {', '.join(missing)}")
    out = []
    chains = (("full", "no_ntp", "no_ilp"), ("full", "no_ntp", "baseline"))
    for metric in ("success_pct", "first_try_pct"):
        for chain in chains:
            for hi, lo in zip(chain, chain[1:]):
                a, b = report.get(hi, metric), report.get(lo, metric)
                if a < b:
                    out.append(f"{metric}: {hi} ({a:.2f}) < {lo} ({b:.2f})")
    full = report.get("full", "first_try_pct")
    for other in MODES[1:]:
        b = report.get(other, "first_try_pct")
        if not full > b:
            out.append(f"first_try_pct: full ({full:.2f}) not above {other} ({b:.2f})")
    return OrderingResult(list(dict.fromkeys(out)))


# -- running -----------------------------------------------------------------


def crash_record(quest: QuestSpec, mode: str, seed: int) -> QuestRecord:
    return QuestRecord(quest.id, quest.difficulty, mode, seed, False, False, 0, 0, 0, 0, 0)


def growth_row(record: QuestRecord, w) -> dict:
    return {
        "quest_id": record.quest_id,
        "rules_added": w.rules_added,
        "rules_retracted": w.rules_retracted,
        "edges": len(w),
        "nodes": len(w.nodes),
    }


def run_one(matrix: ExperimentMatrix, mode: str, seed: int) -> list[QuestRecord]:
    """One agent through the whole curriculum; writes its log, growth series and snapshots."""
    out = Path(matrix.out)
    quests = load_curriculum(matrix.curriculum_path())
    snaps = out / "snapshots" / f"{mode}_{seed}"
    snaps.mkdir(parents=True, exist_ok=True)
    records, growth = [], []
    with open(out / f"run_{mode}_{seed}.jsonl", "w") as fh:
        state = make_agent(matrix.agent_config(mode), seed, stream=fh)
        state.log.emit("run_start", mode=mode, seed=seed, curriculum=[q.id for q in quests])
        for i, q in enumerate(quests):
            try:
                rec = run_quest(state, q, seed)
            except Exception as exc:  # a crash fails this quest and every later one
                log.exception("run %s/%s crashed on %s", mode, seed, q.id)
                state.log.emit("crash", quest=q.id, error=f"{type(exc).__name__}: {exc}")
                for rest in quests[i:]:
                    rec = crash_record(rest, mode, seed)
                    state.log.emit("quest_end", record=rec.to_json())
                    records.append(rec)
                    growth.append(growth_row(rec, state.w))
                break
            records.append(rec)
            growth.append(growth_row(rec, state.w))
            (snaps / f"{q.id}.cpg").write_text(state.w.snapshot(f"after {q.id}"))
        state.log.emit("run_end", edges=len(state.w), rules_added=state.w.rules_added, rules_retracted=state.w.rules_retracted)
    if state.embeddings is not None:
        (snaps / "embeddings.txt").write_text(state.embeddings.dumps())
    with open(out / f"growth_{mode}_{seed}.csv", "w", newline="") as fh:
        wr = csv.DictWriter(fh, ["quest_id", "rules_added", "rules_retracted", "edges", "nodes"], lineterminator="\n")
        wr.writeheader()
        wr.writerows(growth)
    return records


def _run_one(args) -> list[QuestRecord]:
    return run_one(*args)


def run_matrix(matrix: ExperimentMatrix) -> AggregateReport:
    out = Path(matrix.out)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(matrix, m, s) for m in matrix.modes for s in matrix.seeds]
    if matrix.workers > 1:
        with ProcessPoolExecutor(matrix.workers) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]
    report = aggregate(r for rs in results for r in rs)
    write_report(report, out)
    return report


def write_report(report: AggregateReport, out: Path) -> None:
    (out / "report.csv").write_text(report.to_csv())
    (out / "report.json").write_text(json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n")


def records_from_logs(paths: Iterable[Path]) -> list[QuestRecord]:
    out = []
    for p in sorted(paths):
        with open(p) as fh:
            for line in fh:
                ev = json.loads(line)
                if ev["event"] == "quest_end":
                    out.append(QuestRecord(**ev["record"]))
    return out
