"""Command-line driver: run the matrix, trace one quest, query or extend a model."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from agel.agent import MODES, AgentConfig, bootstrap_embeddings, foundation_text, make_agent, run_quest
from agel.cpg import CausalProgramGraph
from agel.grounding import GroundingConfig, ground_verbose
from agel.harness import ExperimentMatrix, aggregate, check_ordering, records_from_logs, run_matrix, write_report
from agel.logic import parse_literal, parse_program
from agel.memory import Episode, EpisodicMemory
from agel.ntp import EmbeddingTable, TrainConfig
from agel.planner import PlannerBackend
from agel.provers import DiscreteProver, NtpProver
from agel.questworld import bundled, load_curriculum


def backend_from_args(args) -> dict:
    if args.planner == "llm":
        if not args.llm_endpoint:
            raise SystemExit("--planner llm needs --llm-endpoint")
        return {"kind": "external_llm", "endpoint": args.llm_endpoint}
    return {}


def format_event(ev: dict) -> str | None:
    kind = ev["event"]
    if kind == "quest_start":
        return f"== quest {ev['quest']} (difficulty {ev['difficulty']}): {ev['goal']}"
    if kind == "plan":
        avoid = f" avoiding {','.join(ev['avoid'])}" if ev["avoid"] else ""
        lines = [f"-- attempt {ev['attempt'] + 1}: planner proposes{avoid}"]
        lines += [f"   candidate {i}: {c}" for i, c in enumerate(ev["candidates"])]
        return "\n".join(lines)
    if kind in ("verify", "judge"):
        if kind == "verify":
            lines = [f"   rejected candidate {i}: causes_damage({ent}) sigma={s:.3f}" for i, ent, s in ev["rejections"]]
        else:
            lines = [f"   rejected candidate {i}: touches suspect {ent}" for i, ent, _ in ev["rejections"]]
        if ev["selected"]:
            sig = f" sigma={ev['sigma']:.3f}" if ev.get("sigma") is not None else ""
            lines.append(f"   selected: {ev['selected']}{sig}")
        else:
            lines.append("   no candidate accepted")
        return "\n".join(lines)
    if kind == "command":
        return f"   > {ev['command']}"
    if kind == "signal":
        return f"     {ev['signal']}"
    if kind == "contradiction":
        return f"   contradiction #{ev['count']} for {ev['clause']} (no damage from {ev['entity']})"
    if kind == "retract":
        return f"   retracted {ev['clause']}"
    if kind == "ground":
        if ev["skipped"]:
            return f"   grounding skipped: {ev['skipped']}"
        return f"   hypothesis {ev['hypothesis']} via {ev['metarule']}, negatives {ev['negatives']}"
    if kind == "learn":
        return "\n".join(f"   learned {c}" for c in ev["added"])
    if kind == "quest_status":
        return f"   status: {ev['status']} (hp {ev['hp']})"
    if kind == "quest_end":
        r = ev["record"]
        return (f"== {r['quest_id']} {'succeeded' if r['success'] else 'failed'}: iterations={r['iterations']} "
                f"interactions={r['interactions']} hp_lost={r['hp_lost']} rules_added={r['rules_added']}")
    return None


def load_matrix(args) -> ExperimentMatrix:
    data = json.loads(Path(args.config).read_text())
    if args.seed is not None:
        data["seeds"] = [args.seed]
    if args.mode:
        data["modes"] = [args.mode]
    if args.out:
        data["out"] = args.out
    if args.planner == "llm":
        data["planner"] = backend_from_args(args)
    return ExperimentMatrix.from_json(data)


def cmd_run(args) -> int:
    matrix = load_matrix(args)
    report = run_matrix(matrix)
    for mode, metrics in report.modes.items():
        print(f"{mode:9s} " + "  ".join(f"{k}={metrics[k]}" for k in ("success_pct", "first_try_pct", "total_interactions")))
    if set(report.modes) == set(MODES):
        result = check_ordering(report)
        print(f"ordering: {result}")
        return 0 if result.passed else 1
    return 0


def cmd_quest(args) -> int:
    path = Path(args.curriculum) if Path(args.curriculum).exists() else bundled(args.curriculum)
    quests = load_curriculum(path)
    ids = [q.id for q in quests]
    if args.quest not in ids:
        raise SystemExit(f"unknown quest {args.quest!r}; curriculum has {', '.join(ids)}")
    if args.warmup is None:
        warm = quests[: ids.index(args.quest)]
    else:
        warm = [quests[ids.index(w)] for w in args.warmup.split(",") if w]
    target = quests[ids.index(args.quest)]
    cfg = AgentConfig(mode=args.mode, backend=PlannerBackend(**backend_from_args(args)))
    log_fh = open(args.log, "w") if args.log else None
    try:
        state = make_agent(cfg, args.seed, stream=log_fh)
        for q in warm:
            run_quest(state, q, args.seed)
        if warm:
            print(f"(warm-up: {', '.join(q.id for q in warm)}; {len(state.w)} clauses in the world model)")
        start = len(state.log.events)
        rev = state.w.revision
        record = run_quest(state, target, args.seed)
    finally:
        if log_fh:
            log_fh.close()
    for ev in state.log.events[start:]:
        line = format_event(ev)
        if line:
            print(line)
    if state.w.revision != rev:
        print(f"world model now at revision {state.w.revision} with {len(state.w)} clauses")
    if args.out:
        Path(args.out).write_text(state.w.snapshot(f"after {target.id}"))
    return 0 if record.success else 1


def cmd_prove(args) -> int:
    w = CausalProgramGraph.load(Path(args.snapshot).read_text())
    goal = parse_literal(args.query)
    if args.discrete:
        result = DiscreteProver(args.depth)(goal, w)
    else:
        if args.embeddings:
            e = EmbeddingTable.loads(Path(args.embeddings).read_text())
        else:
            e = bootstrap_embeddings(foundation_text(), TrainConfig(), 16, args.seed or 0)
        result = NtpProver(args.depth)(goal, w, e)
    print(f"sigma = {result.score:.6f}")
    for i, st in enumerate(result.path):
        theta = ", ".join(f"{k}={v}" for k, v in sorted(st.substitution.items()))
        print(f"  {i}: {st.clause}  {{{theta}}}  s={st.score:.6f}")
    return 0


def cmd_induce(args) -> int:
    w = CausalProgramGraph.load(Path(args.snapshot).read_text()) if args.snapshot else CausalProgramGraph(
        parse_program(foundation_text()))
    memory, prover, n = EpisodicMemory(), DiscreteProver(), 0
    with open(args.log) as fh:
        for line in fh:
            ev = json.loads(line)
            if ev["event"] != "record":
                continue
            eps = [Episode.from_json(d) for d in ev["episodes"]]
            memory.record(eps)
            result = ground_verbose(eps, memory, w, prover, GroundingConfig())
            if result.delta:
                applied = w.apply(result.delta)
                n += len(applied.added)
                for c in applied.added:
                    print(f"{ev['quest']}/{ev['attempt']}: {c}")
    print(f"{n} clauses induced; world model has {len(w)} clauses")
    if args.out:
        Path(args.out).write_text(w.snapshot())
    return 0


def cmd_report(args) -> int:
    logs = sorted(Path(args.logs).glob("run_*.jsonl"))
    if not logs:
        raise SystemExit(f"no run_*.jsonl logs under {args.logs}")
    report = aggregate(records_from_logs(logs))
    out = Path(args.out or args.logs)
    out.mkdir(parents=True, exist_ok=True)
    write_report(report, out)
    sys.stdout.write(report.to_csv())
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="agel", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, mode=True):
        p.add_argument("--seed", type=int, default=None)
        if mode:
            p.add_argument("--mode", choices=MODES, default=None)
        p.add_argument("--planner", choices=("scripted", "llm"), default="scripted")
        p.add_argument("--llm-endpoint", default=None)
        p.add_argument("--out", default=None)

    p = sub.add_parser("run", help="run the full mode x seed matrix")
    p.add_argument("--config", required=True, help="matrix config JSON")
    common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("quest", help="trace one quest in one mode")
    p.add_argument("--quest", required=True)
    p.add_argument("--curriculum", default="curriculum.json")
    p.add_argument("--warmup", default=None, help="comma-separated quest ids to play first (default: all earlier quests)")
    p.add_argument("--log", default=None, help="write the JSONL event log here")
    common(p)
    p.set_defaults(func=cmd_quest)

    p = sub.add_parser("prove", help="score a query against a CPG snapshot")
    p.add_argument("--snapshot", required=True)
    p.add_argument("--query", required=True)
    p.add_argument("--embeddings", default=None)
    p.add_argument("--depth", type=int, default=3)
    p.add_argument("--discrete", action="store_true", help="crisp SLD entailment instead of the soft prover")
    common(p, mode=False)
    p.set_defaults(func=cmd_prove)

    p = sub.add_parser("induce", help="replay grounding over a logged run")
    p.add_argument("--log", required=True)
    p.add_argument("--snapshot", default=None, help="starting world model (default: foundational program)")
    common(p, mode=False)
    p.set_defaults(func=cmd_induce)

    p = sub.add_parser("report", help="re-aggregate run logs into report.csv / report.json")
    p.add_argument("--logs", required=True)
    common(p, mode=False)
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.command == "quest":
        args.seed = 0 if args.seed is None else args.seed
        args.mode = args.mode or "full"
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
