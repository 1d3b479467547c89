"""Scenario files, synthetic scenario generation, experiment runs and CSV reports."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .cost import EdgeServerSpec, EndUserSpec, ProblemInstance, QueryTask, RadioEnv
from .patterns import (
    DfsCode,
    PatternCatalog,
    Placement,
    generalize,
    min_dfs_code,
    place_greedy,
)
from .rdf import (
    BgpQuery,
    ParseError,
    RdfGraph,
    Term,
    Triple,
    TriplePattern,
    match,
    parse_bgp,
    parse_ntriples,
    result_bytes,
    serialize_ntriples,
)
from .scheduler import STRATEGIES, Schedule, run_strategy

log = logging.getLogger(__name__)


class ScenarioError(ValueError):
    """Schema violation; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class ScenarioReferenceError(ScenarioError):
    """A dangling id reference."""


@dataclass
class WorkloadItem:
    user: int
    query_text: str | None = None
    query: BgpQuery | None = None
    c: float | None = None
    w: float | None = None
    e: tuple[bool, ...] | None = None


@dataclass
class Scenario:
    graph: RdfGraph
    servers: list[EdgeServerSpec]
    users: list[EndUserSpec]
    env: RadioEnv
    workload: list[WorkloadItem]
    patterns: list[BgpQuery] | None = None
    cycles_per_extension: float = 1.0
    server_ids: list[Any] = field(default_factory=list)
    user_ids: list[Any] = field(default_factory=list)
    graph_path: str | None = None

    @property
    def K(self) -> int:
        return len(self.servers)

    def with_servers(self, **changes) -> Scenario:
        """Copy with every server's fields overridden (e.g. ``F=``, ``capacity_bytes=``)."""
        servers = [
            EdgeServerSpec(
                s.k,
                changes.get("F", s.F),
                changes.get("capacity_bytes", s.capacity_bytes),
                changes.get("tp", s.tp),
                changes.get("bandwidth", s.bandwidth),
            )
            for s in self.servers
        ]
        return Scenario(
            self.graph, servers, self.users, self.env, self.workload, self.patterns,
            self.cycles_per_extension, self.server_ids, self.user_ids, self.graph_path,
        )


# ---------------------------------------------------------------------------
# Loading


def _req(obj: Any, key: str, path: str) -> Any:
    if not isinstance(obj, dict):
        raise ScenarioError(path, "expected an object")
    if key not in obj:
        raise ScenarioError(f"{path}.{key}" if path else key, "missing required field")
    return obj[key]


def _num(value: Any, path: str, *, positive: bool = False, nonneg: bool = False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ScenarioError(path, f"expected a finite number, got {value!r}")
    if positive and not value > 0:
        raise ScenarioError(path, "must be positive")
    if nonneg and value < 0:
        raise ScenarioError(path, "must be nonnegative")
    return float(value)


def _list(obj: Any, path: str) -> list:
    if not isinstance(obj, list):
        raise ScenarioError(path, "expected a list")
    return obj


def _load_graph(spec: Any, base: Path) -> tuple[RdfGraph, str | None]:
    try:
        if isinstance(spec, str):
            p = base / spec
            with open(p, encoding="utf-8") as fh:
                return parse_ntriples(fh), str(p)
        if isinstance(spec, dict) and "path" in spec:
            return _load_graph(spec["path"], base)
        if isinstance(spec, dict) and "ntriples" in spec:
            return parse_ntriples(spec["ntriples"]), None
    except ParseError as exc:
        raise ScenarioError("graph", str(exc)) from exc
    except OSError as exc:
        raise ScenarioError("graph", f"cannot read graph: {exc}") from exc
    raise ScenarioError("graph", "expected a path string or an object with 'path' or 'ntriples'")


def _query(text: Any, path: str) -> BgpQuery:
    if not isinstance(text, str):
        raise ScenarioError(path, "expected query text")
    try:
        return parse_bgp(text)
    except ValueError as exc:
        raise ScenarioError(path, str(exc)) from exc


def parse_scenario(data: dict, base_dir: str | Path = ".") -> Scenario:
    """Validate a decoded scenario document and resolve all references."""
    base = Path(base_dir)
    if not isinstance(data, dict):
        raise ScenarioError("<root>", "expected an object")
    graph, graph_path = _load_graph(_req(data, "graph", ""), base)

    servers, server_ids = [], []
    for i, s in enumerate(_list(_req(data, "servers", ""), "servers")):
        p = f"servers[{i}]"
        sid = _req(s, "id", p)
        if sid in server_ids:
            raise ScenarioError(f"{p}.id", f"duplicate server id {sid!r}")
        server_ids.append(sid)
        cap = _num(_req(s, "capacity_bytes", p), f"{p}.capacity_bytes", nonneg=True)
        servers.append(
            EdgeServerSpec(
                i,
                _num(_req(s, "F", p), f"{p}.F", positive=True),
                int(cap),
                _num(_req(s, "tp", p), f"{p}.tp", positive=True),
                _num(_req(s, "bandwidth", p), f"{p}.bandwidth", positive=True),
            )
        )
    index_of_server = {str(sid): k for k, sid in enumerate(server_ids)}

    users, user_ids = [], []
    for i, u in enumerate(_list(_req(data, "users", ""), "users")):
        p = f"users[{i}]"
        uid = _req(u, "id", p)
        if uid in user_ids:
            raise ScenarioError(f"{p}.id", f"duplicate user id {uid!r}")
        user_ids.append(uid)
        assoc = set()
        for j, sid in enumerate(_list(_req(u, "associated", p), f"{p}.associated")):
            if str(sid) not in index_of_server:
                raise ScenarioReferenceError(f"{p}.associated[{j}]", f"unknown server {sid!r}")
            assoc.add(index_of_server[str(sid)])
        gains_raw = _req(u, "h", p)
        if not isinstance(gains_raw, dict):
            raise ScenarioError(f"{p}.h", "expected an object keyed by server id")
        gains = {}
        for sid, val in gains_raw.items():
            if str(sid) not in index_of_server:
                raise ScenarioReferenceError(f"{p}.h.{sid}", f"unknown server {sid!r}")
            gains[index_of_server[str(sid)]] = _num(val, f"{p}.h.{sid}", nonneg=True)
        for k in assoc:
            if not gains.get(k, 0) > 0:
                raise ScenarioError(f"{p}.h.{server_ids[k]}", "associated server needs a positive channel gain")
        users.append(
            EndUserSpec(i, frozenset(assoc), gains, _num(_req(u, "r_cloud", p), f"{p}.r_cloud", positive=True))
        )
    index_of_user = {str(uid): n for n, uid in enumerate(user_ids)}

    env_raw = _req(data, "env", "")
    env = RadioEnv(_num(_req(env_raw, "sigma2", "env"), "env.sigma2", positive=True))
    cpe = _num(env_raw.get("cycles_per_extension", 1.0), "env.cycles_per_extension", positive=True)

    workload = []
    for i, row in enumerate(_list(_req(data, "workload", ""), "workload")):
        p = f"workload[{i}]"
        uid = _req(row, "user", p)
        if str(uid) not in index_of_user:
            raise ScenarioReferenceError(f"{p}.user", f"unknown user {uid!r}")
        n = index_of_user[str(uid)]
        if "query" in row:
            workload.append(WorkloadItem(n, row["query"], _query(row["query"], f"{p}.query")))
            continue
        c = _num(_req(row, "c", p), f"{p}.c", positive=True)
        w = _num(_req(row, "w", p), f"{p}.w", nonneg=True)
        e = _list(_req(row, "e", p), f"{p}.e")
        if len(e) != len(servers):
            raise ScenarioError(f"{p}.e", f"expected {len(servers)} entries, got {len(e)}")
        flags = tuple(bool(x) for x in e)
        for k, flag in enumerate(flags):
            if flag and k not in users[n].associated:
                raise ScenarioReferenceError(f"{p}.e[{k}]", f"user {uid!r} is not associated with server {server_ids[k]!r}")
        workload.append(WorkloadItem(n, c=c, w=w, e=flags))

    patterns = None
    if data.get("patterns") is not None:
        patterns = [_query(t, f"patterns[{i}]") for i, t in enumerate(_list(data["patterns"], "patterns"))]

    return Scenario(graph, servers, users, env, workload, patterns, cpe, server_ids, user_ids, graph_path)


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ScenarioError("<root>", f"invalid JSON: {exc}") from exc
    return parse_scenario(data, path.parent)


def scenario_to_dict(sc: Scenario, inline_graph: bool = True) -> dict:
    sids = sc.server_ids or list(range(sc.K))
    uids = sc.user_ids or list(range(len(sc.users)))
    if inline_graph or sc.graph_path is None:
        graph: Any = {"ntriples": serialize_ntriples(sc.graph)}
    else:
        graph = sc.graph_path
    rows = []
    for item in sc.workload:
        if item.query_text is not None:
            rows.append({"user": uids[item.user], "query": item.query_text})
        else:
            rows.append({"user": uids[item.user], "c": item.c, "w": item.w, "e": [int(x) for x in item.e]})
    doc = {
        "graph": graph,
        "servers": [
            {"id": sids[s.k], "F": s.F, "capacity_bytes": s.capacity_bytes, "tp": s.tp, "bandwidth": s.bandwidth}
            for s in sc.servers
        ],
        "users": [
            {
                "id": uids[u.n],
                "associated": [sids[k] for k in sorted(u.associated)],
                "h": {str(sids[k]): u.h[k] for k in sorted(u.h)},
                "r_cloud": u.r_cloud,
            }
            for u in sc.users
        ],
        "env": {"sigma2": sc.env.sigma2, "cycles_per_extension": sc.cycles_per_extension},
        "workload": rows,
    }
    if sc.patterns is not None:
        doc["patterns"] = [q.to_sparql() for q in sc.patterns]
    return doc


def dump_scenario(sc: Scenario) -> str:
    return json.dumps(scenario_to_dict(sc), indent=1) + "\n"


# ---------------------------------------------------------------------------
# Synthetic scenarios


@dataclass(frozen=True)
class GraphParams:
    triples: int = 600
    entities: int = 150
    labels: int = 6
    motif_weights: tuple[float, float, float] = (0.5, 0.3, 0.2)  # star, path, triangle


@dataclass(frozen=True)
class RadioParams:
    F: float = 2e8  # cycles/s
    capacity_bytes: int = 12000
    tp: float = 1.0
    bandwidth: float = 5e6  # Hz
    sigma2: float = 1e-3
    gain_range: tuple[float, float] = (0.02, 0.2)
    r_cloud: float = 5e6  # bits/s


@dataclass(frozen=True)
class WorkloadParams:
    templates: int = 8
    zipf_s: float = 1.2
    queries_per_user: int = 1
    constant_prob: float = 0.5
    cycles_per_extension: float = 1e3


_SHAPES = (
    [(0, 1)],
    [(0, 1), (1, 2)],
    [(0, 1), (0, 2)],
    [(1, 0), (2, 0)],
    [(0, 1), (1, 2), (2, 3)],
    [(0, 1), (0, 2), (0, 3)],
    [(0, 1), (1, 2), (2, 0)],
    [(0, 1), (1, 2), (0, 3)],
)


def _synthetic_graph(rng: np.random.Generator, gp: GraphParams) -> RdfGraph:
    ents = [Term.iri(f"http://example.org/e{i}") for i in range(gp.entities)]
    labels = [Term.iri(f"http://example.org/p{i}") for i in range(gp.labels)]
    # skewed entity popularity keeps hubs and therefore recurring shapes
    weights = 1.0 / np.arange(1, gp.entities + 1) ** 0.8
    weights /= weights.sum()
    triples: set[Triple] = set()
    guard = 0
    while len(triples) < gp.triples and guard < 50 * gp.triples:
        guard += 1
        shape = rng.choice(3, p=np.asarray(gp.motif_weights) / sum(gp.motif_weights))
        size = int(rng.integers(2, 5))
        vs = [ents[int(i)] for i in rng.choice(gp.entities, size=size + 1, p=weights)]
        if shape == 0:
            edges = [(vs[0], vs[i]) for i in range(1, size + 1)]
        elif shape == 1:
            edges = [(vs[i], vs[i + 1]) for i in range(size)]
        else:
            edges = [(vs[0], vs[1]), (vs[1], vs[2]), (vs[2], vs[0])]
        for s, o in edges:
            if s != o:
                triples.add(Triple(s, labels[int(rng.integers(gp.labels))], o))
    return RdfGraph(triples)


def _template_queries(rng: np.random.Generator, graph: RdfGraph, count: int) -> list[list[tuple[int, int, Term]]]:
    """Structured templates whose label choices are drawn from real graph walks."""
    labels = graph.labels
    out, seen = [], set()
    attempts = 0
    while len(out) < count and attempts < 200 * count:
        attempts += 1
        shape = _SHAPES[int(rng.integers(len(_SHAPES)))]
        tmpl = [(s, d, labels[int(rng.integers(len(labels)))]) for s, d in shape]
        key = tuple(tmpl)
        if key in seen:
            continue
        q = BgpQuery(("v0",), tuple(_tp(s, lab, d, {}) for s, d, lab in tmpl))
        if len(match(q, graph)) == 0:
            continue
        seen.add(key)
        out.append(tmpl)
    return out


def _tp(s: int, label: Term, d: int, consts: dict[int, Term]) -> TriplePattern:
    def node(i: int) -> Term:
        return consts.get(i, Term.var(f"v{i}"))

    return TriplePattern(node(s), label, node(d))


def _instantiate(rng, graph: RdfGraph, tmpl, constant_prob: float) -> str:
    nvars = 1 + max(max(s, d) for s, d, _ in tmpl)
    base = BgpQuery(tuple(f"v{i}" for i in range(nvars)), tuple(_tp(s, lab, d, {}) for s, d, lab in tmpl))
    consts: dict[int, Term] = {}
    if rng.random() < constant_prob:
        ms = match(base, graph)
        if len(ms):
            pick = ms.bindings[int(rng.integers(len(ms)))]
            leaf = int(rng.integers(nvars))
            consts[leaf] = pick[f"v{leaf}"]
    tps = tuple(_tp(s, lab, d, consts) for s, d, lab in tmpl)
    proj = tuple(f"v{i}" for i in range(nvars) if i not in consts)
    return BgpQuery(proj, tps).to_sparql()


def generate_scenario(
    seed: int,
    K: int = 4,
    N: int = 20,
    graph_params: GraphParams = GraphParams(),
    radio: RadioParams = RadioParams(),
    workload: WorkloadParams = WorkloadParams(),
) -> Scenario:
    """Deterministic synthetic scenario.

    Exactly ceil(0.2 N) users are single-homed (all of them when K == 1);
    the others associate with 2-3 servers. Each server region draws query
    templates from its own Zipf ranking so regional workloads share shapes.
    """
    if K < 1 or N < 1:
        raise ValueError("K and N must be at least 1")
    rng = np.random.default_rng(seed)
    graph = _synthetic_graph(rng, graph_params)
    templates = _template_queries(rng, graph, workload.templates)
    servers = [EdgeServerSpec(k, radio.F, radio.capacity_bytes, radio.tp, radio.bandwidth) for k in range(K)]

    single = math.ceil(0.2 * N)
    single_homed = set(int(i) for i in rng.choice(N, size=single, replace=False))
    lo, hi = radio.gain_range
    users = []
    for n in range(N):
        home = n % K
        assoc = {home}
        if n not in single_homed and K > 1:
            extra = int(rng.integers(1, min(K - 1, 2) + 1))
            others = [k for k in range(K) if k != home]
            assoc.update(int(k) for k in rng.choice(others, size=extra, replace=False))
        gains = {k: float(np.exp(rng.uniform(np.log(lo), np.log(hi)))) for k in sorted(assoc)}
        users.append(EndUserSpec(n, frozenset(assoc), gains, radio.r_cloud))

    T = len(templates)
    zipf = 1.0 / np.arange(1, T + 1) ** workload.zipf_s
    zipf /= zipf.sum()
    rankings = [rng.permutation(T) for _ in range(K)]
    rows = []
    for n in range(N):
        order = rankings[n % K]
        for _ in range(workload.queries_per_user):
            tmpl = templates[int(order[int(rng.choice(T, p=zipf))])]
            text = _instantiate(rng, graph, tmpl, workload.constant_prob)
            rows.append(WorkloadItem(n, text, parse_bgp(text)))

    return Scenario(
        graph,
        servers,
        users,
        RadioEnv(radio.sigma2),
        rows,
        None,
        workload.cycles_per_extension,
        [f"ES{k + 1}" for k in range(K)],
        [f"EU{n + 1}" for n in range(N)],
    )


# ---------------------------------------------------------------------------
# Experiments


@dataclass
class StrategyResult:
    total_cost: float
    ratios: tuple[float, ...]
    sched_time_ms: float | None
    schedule: Schedule | None = field(default=None, repr=False)


@dataclass
class Prepared:
    """Everything derived from a scenario before scheduling."""

    instance: ProblemInstance
    tasks: list[QueryTask]
    catalog: PatternCatalog
    placement: Placement
    codes: list[DfsCode | None]


@dataclass
class RunReport:
    per_strategy: dict[str, StrategyResult]
    echo: dict[str, Any] = field(default_factory=dict)
    prepared: Prepared | None = field(default=None, repr=False)

    @property
    def K(self) -> int:
        return self.echo.get("K", 0)


def measure_query(query: BgpQuery, graph: RdfGraph, cycles_per_extension: float = 1.0) -> tuple[float, float]:
    """(c, w): matcher work scaled to cycles, and result size in bits."""
    ms = match(query, graph)
    return max(1, ms.extensions) * cycles_per_extension, 8.0 * result_bytes(ms)


def prepare(scenario: Scenario) -> Prepared:
    """Build the catalog, place patterns, and derive (c, w, e) per workload row."""
    graph = scenario.graph
    K = scenario.K
    codes: list[DfsCode | None] = []
    for item in scenario.workload:
        codes.append(min_dfs_code(generalize(item.query)) if item.query is not None else None)
    counts = Counter(c for c in codes if c is not None)

    if scenario.patterns is not None:
        base_patterns = [generalize(q) for q in scenario.patterns]
    else:
        base_patterns = [generalize(item.query) for item in scenario.workload if item.query is not None]
    catalog = PatternCatalog.build(graph, base_patterns, counts)

    eligibility: list[set[DfsCode]] = [set() for _ in range(K)]
    for item, code in zip(scenario.workload, codes):
        if code is None:
            continue
        for k in scenario.users[item.user].associated:
            eligibility[k].add(code)
    placement = place_greedy(catalog, [s.capacity_bytes for s in scenario.servers], eligibility)

    cache: dict[str, tuple[float, float]] = {}
    tasks = []
    for n, (item, code) in enumerate(zip(scenario.workload, codes)):
        assoc = scenario.users[item.user].associated
        if item.query is not None:
            key = item.query.to_sparql()
            if key not in cache:
                cache[key] = measure_query(item.query, graph, scenario.cycles_per_extension)
            c, w = cache[key]
            e = tuple(k in assoc and code in placement.stored(k) for k in range(K))
        else:
            c, w, e = item.c, item.w, item.e
        tasks.append(QueryTask(n, c, w, e, user=item.user))
    inst = ProblemInstance.from_specs(tasks, scenario.servers, scenario.users, scenario.env)
    return Prepared(inst, tasks, catalog, placement, codes)


def run_experiment(
    scenario: Scenario,
    strategies: Sequence[str] = STRATEGIES,
    eps: float = 1e-6,
    seed: int = 0,
) -> RunReport:
    prep = prepare(scenario)
    inst = prep.instance
    results = {}
    for name in strategies:
        if name not in STRATEGIES:
            raise ValueError(f"unknown strategy {name!r}; choose from {', '.join(STRATEGIES)}")
        start = time.perf_counter()
        sched = run_strategy(name, inst, eps, seed)
        elapsed = (time.perf_counter() - start) * 1000.0
        results[name] = StrategyResult(sched.total_cost, sched.ratios, elapsed, sched)
    echo = {
        "K": inst.K,
        "N": inst.N,
        "F": inst.F.tolist(),
        "capacity_bytes": [s.capacity_bytes for s in scenario.servers],
        "c": inst.c.tolist(),
        "w": inst.w.tolist(),
        "e": inst.e.astype(int).tolist(),
        "placed_patterns": [len(p) for p in prep.placement.per_server],
        "used_bytes": list(prep.placement.used_bytes),
    }
    return RunReport(results, echo, prep)


# ---------------------------------------------------------------------------
# CSV


def csv_header(K: int) -> list[str]:
    return ["strategy", "total_cost_s", "sched_time_ms"] + [f"ratio_es{k + 1}" for k in range(K)] + ["ratio_cloud"]


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def emit_csv(report: RunReport, path: str | Path, timing: bool = True) -> None:
    """Write one row per strategy; ``timing=False`` leaves sched_time_ms blank for byte-stable output."""
    K = report.K
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(csv_header(K))
        for name, res in report.per_strategy.items():
            t = _fmt(res.sched_time_ms) if timing and res.sched_time_ms is not None else ""
            writer.writerow([name, _fmt(res.total_cost), t] + [_fmt(r) for r in res.ratios])


def read_csv(path: str | Path) -> RunReport:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        K = len(header) - 4
        per = {}
        for row in reader:
            t = float(row[2]) if row[2] else None
            per[row[0]] = StrategyResult(float(row[1]), tuple(float(x) for x in row[3:]), t)
    return RunReport(per, {"K": K})
