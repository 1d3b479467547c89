"""Command-line front end: match, canon, schedule, gen."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .harness import (
    GraphParams,
    RadioParams,
    ScenarioError,
    WorkloadParams,
    dump_scenario,
    emit_csv,
    generate_scenario,
    load_scenario,
    run_experiment,
)
from .patterns import PatternTooLargeError, query_code
from .rdf import ParseError, match, parse_bgp, parse_ntriples, serialize_matches
from .scheduler import STRATEGIES, SolverError


class DomainError(Exception):
    pass


def _read(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DomainError(f"cannot read {path}: {exc.strerror or exc}") from exc


def cmd_match(args) -> str:
    graph = parse_ntriples(_read(args.graph))
    ms = match(parse_bgp(_read(args.query)), graph)
    if args.count:
        return f"{len(ms)}\n"
    return serialize_matches(ms)


def cmd_canon(args) -> str:
    code = query_code(parse_bgp(_read(args.query)))
    return "".join(line + "\n" for line in code.lines())


def cmd_schedule(args) -> str:
    scenario = load_scenario(args.scenario)
    strategies = STRATEGIES if args.strategy == "all" else (args.strategy,)
    report = run_experiment(scenario, strategies, eps=args.eps, seed=args.seed)
    if args.out:
        emit_csv(report, args.out, timing=args.timing)
    return "".join(f"{name}\t{res.total_cost!r}\n" for name, res in report.per_strategy.items())


def cmd_gen(args) -> str:
    sc = generate_scenario(
        args.seed,
        args.K,
        args.N,
        GraphParams(triples=args.triples, labels=args.labels),
        RadioParams(capacity_bytes=args.capacity, F=args.F, bandwidth=args.bandwidth),
        WorkloadParams(templates=args.templates, zipf_s=args.zipf),
    )
    text = dump_scenario(sc)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        return ""
    return text


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="edgesparql", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    m = sub.add_parser("match", help="evaluate a BGP query over an N-Triples graph")
    m.add_argument("--graph", required=True)
    m.add_argument("--query", required=True)
    m.add_argument("--count", action="store_true", help="print only the number of rows")
    m.set_defaults(func=cmd_match)

    c = sub.add_parser("canon", help="print the minimum DFS code of a query's pattern")
    c.add_argument("--query", required=True)
    c.set_defaults(func=cmd_canon)

    s = sub.add_parser("schedule", help="run strategies on a scenario")
    s.add_argument("--scenario", required=True)
    s.add_argument("--strategy", default="bnb", choices=STRATEGIES + ("all",))
    s.add_argument("--eps", type=float, default=1e-6)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", help="CSV report path")
    s.add_argument("--timing", action="store_true", help="fill sched_time_ms (output is no longer byte-stable)")
    s.set_defaults(func=cmd_schedule)

    g = sub.add_parser("gen", help="write a synthetic scenario")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--K", type=int, default=4)
    g.add_argument("--N", type=int, default=20)
    g.add_argument("--triples", type=int, default=GraphParams.triples)
    g.add_argument("--labels", type=int, default=GraphParams.labels)
    g.add_argument("--templates", type=int, default=WorkloadParams.templates)
    g.add_argument("--zipf", type=float, default=WorkloadParams.zipf_s)
    g.add_argument("--capacity", type=int, default=RadioParams.capacity_bytes)
    g.add_argument("--F", type=float, default=RadioParams.F)
    g.add_argument("--bandwidth", type=float, default=RadioParams.bandwidth)
    g.add_argument("--out")
    g.set_defaults(func=cmd_gen)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        out = args.func(args)
    except (DomainError, ParseError, ScenarioError, PatternTooLargeError, SolverError, ValueError, OSError) as exc:
        print(f"edgesparql: error: {exc}", file=sys.stderr)
        return 1
    sys.stdout.write(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
