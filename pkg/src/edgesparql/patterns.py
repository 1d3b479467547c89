"""Query patterns, minimum DFS codes, pattern-induced subgraphs and edge placement."""

from __future__ import annotations

import enum
import hashlib
import logging
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

from .rdf import (
    BgpQuery,
    RdfGraph,
    Term,
    TermKind,
    Triple,
    TriplePattern,
    match,
    ntriples_size,
)

log = logging.getLogger(__name__)

MAX_PATTERN_EDGES = 10


class PatternTooLargeError(ValueError):
    pass


@dataclass(frozen=True)
class Pattern:
    """A query with every subject/object replaced by a numbered variable.

    ``edges`` are ``(src, dst, label)`` triples; labels are IRIs or variables.
    """

    edges: tuple[tuple[int, int, Term], ...]
    var_count: int

    def __post_init__(self):
        if not self.edges:
            raise ValueError("pattern needs at least one edge")
        for s, d, label in self.edges:
            if not (0 <= s < self.var_count and 0 <= d < self.var_count):
                raise ValueError(f"edge ({s}, {d}) out of range for {self.var_count} vertices")
            if label.kind is TermKind.LITERAL:
                raise ValueError("edge labels must be IRIs or variables")
        seen = {0}
        frontier = [0]
        adj: dict[int, set[int]] = {}
        for s, d, _ in self.edges:
            adj.setdefault(s, set()).add(d)
            adj.setdefault(d, set()).add(s)
        while frontier:
            v = frontier.pop()
            for u in adj.get(v, ()):
                if u not in seen:
                    seen.add(u)
                    frontier.append(u)
        if len(seen) != self.var_count:
            raise ValueError("pattern graph must be weakly connected with no isolated vertices")

    def as_query(self) -> BgpQuery:
        """BGP query whose matches are this pattern's matches (node vars ``?n0``...)."""

        def node(i: int) -> Term:
            return Term.var(f"n{i}")

        def label(t: Term) -> Term:
            return Term.var("p_" + t.text) if t.is_var else t

        tps = tuple(TriplePattern(node(s), label(lab), node(d)) for s, d, lab in self.edges)
        return BgpQuery(tuple(f"n{i}" for i in range(self.var_count)), tps)

    def relabel(self, perm: Sequence[int]) -> Pattern:
        """Rename vertex i to perm[i]."""
        return Pattern(tuple((perm[s], perm[d], lab) for s, d, lab in self.edges), self.var_count)


def generalize(query: BgpQuery) -> Pattern:
    """Replace each distinct subject/object term by a variable id (first-occurrence order)."""
    ids: dict[Term, int] = {}
    edges: dict[tuple[int, int, Term], None] = {}
    for tp in query.patterns:
        s = ids.setdefault(tp.subject, len(ids))
        o = ids.setdefault(tp.object, len(ids))
        edges.setdefault((s, o, tp.predicate), None)
    return Pattern(tuple(edges), len(ids))


# ---------------------------------------------------------------------------
# Minimum DFS code


class Direction(enum.IntEnum):
    FORWARD = 0  # stored edge runs from vertex i to vertex j
    BACKWARD = 1  # stored edge runs from vertex j to vertex i


LabelToken = tuple[int, str]
WILDCARD: LabelToken = (1, "")


def label_token(label: Term) -> LabelToken:
    # constants sort before the single variable wildcard
    return WILDCARD if label.is_var else (0, label.text)


CodeTuple = tuple[int, int, Direction, LabelToken]


@dataclass(frozen=True, order=True)
class DfsCode:
    tuples: tuple[CodeTuple, ...]

    def lines(self) -> list[str]:
        out = []
        for i, j, d, (kind, text) in self.tuples:
            lab = "?" if kind else f"<{text}>"
            out.append(f"{i} {j} {'F' if d is Direction.FORWARD else 'B'} {lab}")
        return out

    def text(self) -> str:
        return ";".join(s.replace(" ", ",") for s in self.lines())

    @property
    def digest(self) -> str:
        return hashlib.sha1(self.text().encode("utf-8")).hexdigest()[:16]

    def __str__(self) -> str:
        return self.text()


class _Canonicalizer:
    def __init__(self, pattern: Pattern):
        self.edges = [(s, d, label_token(lab)) for s, d, lab in pattern.edges]
        self.n = pattern.var_count
        self.incident: list[list[int]] = [[] for _ in range(self.n)]
        for idx, (s, d, _) in enumerate(self.edges):
            self.incident[s].append(idx)
            if d != s:
                self.incident[d].append(idx)
        self.edge_count = Counter(self.edges)
        self._swap_cache: dict[tuple[int, int], bool] = {}
        self.best: list[CodeTuple] | None = None

    def swappable(self, a: int, b: int) -> bool:
        """Is the transposition (a b) an automorphism?"""
        key = (min(a, b), max(a, b))
        hit = self._swap_cache.get(key)
        if hit is None:
            sw = {a: b, b: a}
            mapped = Counter((sw.get(s, s), sw.get(d, d), lab) for s, d, lab in self.edges)
            hit = self._swap_cache[key] = mapped == self.edge_count
        return hit

    def run(self) -> DfsCode:
        roots: list[int] = []
        for v in range(self.n):
            if not any(self.swappable(v, r) for r in roots):
                roots.append(v)
        for r in roots:
            self._search({r: 0}, [r], frozenset(), [])
        assert self.best is not None
        return DfsCode(tuple(self.best))

    def _candidates(self, ids: dict[int, int], path: list[int], used: frozenset[int]):
        rm = path[-1]
        back = []
        for e in self.incident[rm]:
            if e in used:
                continue
            s, d, lab = self.edges[e]
            other = d if s == rm else s
            if other in ids:
                direction = Direction.FORWARD if s == rm else Direction.BACKWARD
                back.append(((ids[rm], ids[other], direction, lab), e, None))
        if back:
            return back
        fwd = []
        nxt = len(ids)
        for u in reversed(path):
            pending = False
            for e in self.incident[u]:
                if e in used:
                    continue
                pending = True
                s, d, lab = self.edges[e]
                v = d if s == u else s
                direction = Direction.FORWARD if s == u else Direction.BACKWARD
                fwd.append(((ids[u], nxt, direction, lab), e, v))
            if pending:
                break
        return fwd

    def _search(self, ids, path, used, code) -> None:
        if self.best is not None:
            prefix = self.best[: len(code)]
            if code > prefix:
                return
        if len(code) == len(self.edges):
            if self.best is None or code < self.best:
                self.best = list(code)
            return
        cands = self._candidates(ids, path, used)
        if not cands:
            raise ValueError("pattern is not connected")
        low = min(c[0] for c in cands)
        kept: list[tuple[int, int | None]] = []
        seen_targets: list[int] = []
        seen_back: set[tuple] = set()
        for tup, e, v in cands:
            if tup != low:
                continue
            if v is None:
                if self.edges[e] in seen_back:
                    continue
                seen_back.add(self.edges[e])
            else:
                if any(v == w or self.swappable(v, w) for w in seen_targets):
                    continue
                seen_targets.append(v)
            kept.append((e, v))
        for e, v in kept:
            if v is None:
                self._search(ids, path, used | {e}, code + [low])
            else:
                u_id = low[0]
                cut = next(i for i, p in enumerate(path) if ids[p] == u_id)
                new_ids = dict(ids)
                new_ids[v] = len(ids)
                self._search(new_ids, path[: cut + 1] + [v], used | {e}, code + [low])


def min_dfs_code(pattern: Pattern, max_edges: int = MAX_PATTERN_EDGES) -> DfsCode:
    """Lexicographically smallest DFS code over all DFS traversals of ``pattern``.

    Tuples are ``(i, j, direction, label)`` with discovery-order vertex ids;
    all variable labels share one wildcard token. Equal codes iff the
    patterns are isomorphic as directed edge-labelled multigraphs.
    """
    if len(pattern.edges) > max_edges:
        raise PatternTooLargeError(f"pattern has {len(pattern.edges)} edges; limit is {max_edges}")
    return _Canonicalizer(pattern).run()


def query_code(query: BgpQuery) -> DfsCode:
    return min_dfs_code(generalize(query))


def executable(query: BgpQuery, stored: Iterable[DfsCode]) -> bool:
    """True iff the query's pattern is isomorphic to a stored pattern."""
    stored = stored if isinstance(stored, (set, frozenset)) else set(stored)
    if not stored:
        return False
    return query_code(query) in stored


# ---------------------------------------------------------------------------
# Pattern-induced subgraphs


def induced_triples(graph: RdfGraph, patterns: Iterable[Pattern]) -> frozenset[Triple]:
    edges: set[Triple] = set()
    for p in patterns:
        for used in match(p.as_query(), graph).matched_edges:
            edges.update(used)
    return frozenset(edges)


def induce(graph: RdfGraph, patterns: Iterable[Pattern]) -> RdfGraph:
    """Union of the vertices and edges of every homomorphic match of every pattern."""
    return RdfGraph(induced_triples(graph, patterns))


# ---------------------------------------------------------------------------
# Catalog and placement


@dataclass(frozen=True)
class CatalogEntry:
    pattern: Pattern
    code: DfsCode
    frequency: int
    subgraph: frozenset[Triple] = field(repr=False)
    subgraph_bytes: int = -1

    def __post_init__(self):
        if self.frequency < 0:
            raise ValueError("frequency must be nonnegative")
        if self.subgraph_bytes < 0:
            object.__setattr__(self, "subgraph_bytes", ntriples_size(self.subgraph))


class PatternCatalog:
    """Hash index of patterns keyed by the digest of their minimum DFS code."""

    def __init__(self, entries: Iterable[CatalogEntry] = ()):
        buckets: dict[str, list[CatalogEntry]] = {}
        for entry in entries:
            bucket = buckets.setdefault(entry.code.digest, [])
            if any(e.code == entry.code for e in bucket):
                raise ValueError(f"duplicate catalog code {entry.code}")
            bucket.append(entry)
        self._buckets = {h: tuple(b) for h, b in buckets.items()}

    @classmethod
    def build(
        cls,
        graph: RdfGraph,
        patterns: Iterable[Pattern],
        frequencies: Mapping[DfsCode, int] | None = None,
    ) -> PatternCatalog:
        """One entry per distinct code; induced subgraph computed once per code."""
        frequencies = frequencies or {}
        reps: dict[DfsCode, Pattern] = {}
        for p in patterns:
            reps.setdefault(min_dfs_code(p), p)
        return cls(
            CatalogEntry(p, code, int(frequencies.get(code, 0)), induced_triples(graph, [p]))
            for code, p in reps.items()
        )

    @classmethod
    def from_queries(cls, graph: RdfGraph, queries: Iterable[BgpQuery]) -> PatternCatalog:
        patterns = [generalize(q) for q in queries]
        counts = Counter(min_dfs_code(p) for p in patterns)
        return cls.build(graph, patterns, counts)

    def __iter__(self):
        return iter(sorted((e for b in self._buckets.values() for e in b), key=lambda e: e.code))

    def __len__(self) -> int:
        return sum(len(b) for b in self._buckets.values())

    def __contains__(self, code: object) -> bool:
        return isinstance(code, DfsCode) and self.get(code) is not None

    def get(self, code: DfsCode) -> CatalogEntry | None:
        for e in self._buckets.get(code.digest, ()):
            if e.code == code:
                return e
        return None

    def lookup(self, query: BgpQuery) -> CatalogEntry | None:
        return self.get(query_code(query))

    def dump(self) -> str:
        return "".join(
            f"{e.code.digest}\t{e.frequency}\t{e.subgraph_bytes}\t{e.code.text()}\n" for e in self
        )


def merge_frequencies(catalog: PatternCatalog, counts: Mapping[DfsCode, int]) -> PatternCatalog:
    """Add cloud-side access counts to the catalog; unknown codes are skipped."""
    unknown = [c for c in counts if c not in catalog]
    if unknown:
        log.debug("ignoring %d codes without catalog entries", len(unknown))
    return PatternCatalog(
        CatalogEntry(e.pattern, e.code, e.frequency + int(counts.get(e.code, 0)), e.subgraph, e.subgraph_bytes)
        for e in catalog
    )


@dataclass(frozen=True)
class Placement:
    per_server: tuple[frozenset[DfsCode], ...]
    used_bytes: tuple[int, ...]

    def stored(self, k: int) -> frozenset[DfsCode]:
        return self.per_server[k]

    def dump(self, server_ids: Sequence[object] | None = None) -> str:
        ids = server_ids if server_ids is not None else range(len(self.per_server))
        lines = []
        for sid, codes in zip(ids, self.per_server):
            lines.extend(f"{sid}\t{c.digest}\n" for c in sorted(codes))
        return "".join(lines)


def _priority(entry: CatalogEntry):
    if entry.subgraph_bytes == 0:
        ratio_key = (0, 0) if entry.frequency > 0 else (1, 0)
    else:
        ratio_key = (1, -Fraction(entry.frequency, entry.subgraph_bytes))
    return (ratio_key, -entry.frequency, entry.code)


def place_greedy(
    catalog: PatternCatalog,
    capacities: Sequence[int],
    eligibility: Sequence[Iterable[DfsCode]] | None = None,
) -> Placement:
    """Per-server greedy knapsack over catalog entries.

    Entries are scanned by descending frequency / subgraph-bytes (ties: higher
    frequency, then smaller code). An entry is accepted when the bytes it adds
    to the server's union subgraph still fit.
    """
    entries = sorted(catalog, key=_priority)
    per_server, used_bytes = [], []
    for k, cap in enumerate(capacities):
        if cap < 0:
            raise ValueError("capacities must be nonnegative")
        allowed = None if eligibility is None else set(eligibility[k])
        union: set[Triple] = set()
        used = 0
        chosen: set[DfsCode] = set()
        for e in entries:
            if allowed is not None and e.code not in allowed:
                continue
            extra = e.subgraph - union
            add = ntriples_size(extra)
            if used + add <= cap:
                chosen.add(e.code)
                union |= extra
                used += add
        per_server.append(frozenset(chosen))
        used_bytes.append(used)
    return Placement(tuple(per_server), tuple(used_bytes))


def update_placement(
    catalog: PatternCatalog,
    cloud_frequencies: Mapping[DfsCode, int],
    placement: Placement,
    capacities: Sequence[int],
    eligibility: Sequence[Iterable[DfsCode]] | None = None,
) -> Placement:
    """Fold new cloud-side counts into the catalog and re-run the greedy placement.

    Returns the new placement only; use :func:`merge_frequencies` to keep the
    merged catalog for later rounds.
    """
    merged = merge_frequencies(catalog, cloud_frequencies)
    fresh = place_greedy(merged, capacities, eligibility)
    for k, (old, new) in enumerate(zip(placement.per_server, fresh.per_server)):
        if old != new:
            log.info("server %d: +%d patterns, -%d evicted", k, len(new - old), len(old - new))
    return fresh
