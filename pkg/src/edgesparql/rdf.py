"""In-memory RDF multigraph, N-Triples / BGP parsing and homomorphic BGP matching."""

from __future__ import annotations

import enum
import io
import re
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, TextIO


class ParseError(ValueError):
    """Malformed N-Triples or BGP input."""

    def __init__(self, message: str, *, line: int | None = None, offset: int | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if offset is not None:
            where.append(f"offset {offset}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.line = line
        self.offset = offset


class ConnectivityError(ValueError):
    """The query graph is not weakly connected."""

    def __init__(self, components: list[list[str]]):
        parts = "; ".join("{" + ", ".join(c) + "}" for c in components)
        super().__init__(f"query graph has {len(components)} weakly connected components: {parts}")
        self.components = components


class TermKind(enum.IntEnum):
    IRI = 0
    LITERAL = 1
    VARIABLE = 2


@dataclass(frozen=True, order=True)
class Term:
    kind: TermKind
    text: str

    def __post_init__(self):
        if self.kind is TermKind.VARIABLE and not self.text:
            raise ValueError("variable name must be nonempty")

    @classmethod
    def iri(cls, text: str) -> Term:
        return cls(TermKind.IRI, text)

    @classmethod
    def literal(cls, text: str) -> Term:
        return cls(TermKind.LITERAL, text)

    @classmethod
    def var(cls, name: str) -> Term:
        return cls(TermKind.VARIABLE, name)

    @property
    def is_var(self) -> bool:
        return self.kind is TermKind.VARIABLE

    def n3(self) -> str:
        if self.kind is TermKind.IRI:
            return f"<{self.text}>"
        if self.kind is TermKind.LITERAL:
            return '"' + _escape_literal(self.text) + '"'
        return "?" + self.text

    def __str__(self) -> str:
        return self.n3()


@dataclass(frozen=True, order=True)
class Triple:
    subject: Term
    predicate: Term
    object: Term

    def __post_init__(self):
        if self.subject.is_var or self.predicate.is_var or self.object.is_var:
            raise ValueError(f"graph triple may not contain variables: {self}")
        if self.predicate.kind is not TermKind.IRI:
            raise ValueError(f"predicate must be an IRI: {self}")

    def n3(self) -> str:
        return f"{self.subject.n3()} {self.predicate.n3()} {self.object.n3()} ."

    def __str__(self) -> str:
        return self.n3()


@dataclass(frozen=True)
class TriplePattern:
    subject: Term
    predicate: Term
    object: Term

    def terms(self) -> tuple[Term, Term, Term]:
        return (self.subject, self.predicate, self.object)

    def __str__(self) -> str:
        return f"{self.subject.n3()} {self.predicate.n3()} {self.object.n3()}"


class RdfGraph:
    """Immutable directed edge-labelled multigraph.

    Byte-identical triples collapse; parallel edges with distinct predicates
    between the same vertex pair are kept. Triples are stored in sorted order
    so iteration (and therefore matching) does not depend on input order.
    """

    def __init__(self, triples: Iterable[Triple] = ()):
        self._triples: tuple[Triple, ...] = tuple(sorted(set(triples)))
        self._set = frozenset(self._triples)
        out: dict[Term, list[Triple]] = {}
        inc: dict[Term, list[Triple]] = {}
        by_pred: dict[Term, list[Triple]] = {}
        by_pair: dict[tuple[Term, Term], list[Triple]] = {}
        for t in self._triples:
            out.setdefault(t.subject, []).append(t)
            inc.setdefault(t.object, []).append(t)
            by_pred.setdefault(t.predicate, []).append(t)
            by_pair.setdefault((t.subject, t.object), []).append(t)
        self._out = out
        self._in = inc
        self._by_pred = by_pred
        self._by_pair = by_pair
        self._vertices = tuple(sorted(set(out) | set(inc)))

    @property
    def triples(self) -> tuple[Triple, ...]:
        return self._triples

    @property
    def vertices(self) -> tuple[Term, ...]:
        return self._vertices

    @property
    def labels(self) -> tuple[Term, ...]:
        return tuple(sorted(self._by_pred))

    def num_vertices(self) -> int:
        return len(self._vertices)

    def num_edges(self) -> int:
        return len(self._triples)

    def __len__(self) -> int:
        return len(self._triples)

    def __iter__(self) -> Iterator[Triple]:
        return iter(self._triples)

    def __contains__(self, triple: object) -> bool:
        return triple in self._set

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RdfGraph):
            return NotImplemented
        return self._set == other._set

    def __hash__(self) -> int:
        return hash(self._set)

    def __repr__(self) -> str:
        return f"RdfGraph(vertices={self.num_vertices()}, edges={self.num_edges()})"

    def outgoing(self, vertex: Term) -> tuple[Triple, ...]:
        return tuple(self._out.get(vertex, ()))

    def incoming(self, vertex: Term) -> tuple[Triple, ...]:
        return tuple(self._in.get(vertex, ()))

    def candidates(self, s: Term | None, p: Term | None, o: Term | None) -> list[Triple]:
        """Triples agreeing with every bound (non-None) component."""
        if s is not None and o is not None:
            pool = self._by_pair.get((s, o), ())
        elif s is not None:
            pool = self._out.get(s, ())
        elif o is not None:
            pool = self._in.get(o, ())
        elif p is not None:
            pool = self._by_pred.get(p, ())
        else:
            pool = self._triples
        if p is None:
            return list(pool)
        return [t for t in pool if t.predicate == p]


# ---------------------------------------------------------------------------
# N-Triples subset

_LIT_ESCAPES = {"\\": "\\\\", '"': '\\"', "\n": "\\n", "\r": "\\r", "\t": "\\t"}
_LIT_UNESCAPES = {"\\": "\\", '"': '"', "n": "\n", "r": "\r", "t": "\t"}

_TOKEN = re.compile(r'\s*(?:<([^<>\s]*)>|"((?:[^"\\]|\\.)*)"|\?([A-Za-z_][A-Za-z0-9_]*)|(\.))')


def _escape_literal(text: str) -> str:
    return "".join(_LIT_ESCAPES.get(ch, ch) for ch in text)


def _unescape_literal(body: str, *, line: int | None = None, offset: int | None = None) -> str:
    out = []
    i = 0
    while i < len(body):
        ch = body[i]
        if ch == "\\":
            nxt = body[i + 1] if i + 1 < len(body) else ""
            if nxt not in _LIT_UNESCAPES:
                raise ParseError(f"bad escape sequence \\{nxt}", line=line, offset=offset)
            out.append(_LIT_UNESCAPES[nxt])
            i += 2
        else:
            out.append(ch)
            i += 1
    return "".join(out)


def _parse_ntriples_line(text: str, lineno: int) -> Triple:
    terms: list[Term] = []
    pos = 0
    while len(terms) < 3:
        m = _TOKEN.match(text, pos)
        if m is None or m.group(4) is not None or m.group(3) is not None:
            raise ParseError("expected <iri> or \"literal\"", line=lineno, offset=pos)
        if m.group(1) is not None:
            terms.append(Term.iri(m.group(1)))
        else:
            terms.append(Term.literal(_unescape_literal(m.group(2), line=lineno, offset=pos)))
        pos = m.end()
    m = _TOKEN.match(text, pos)
    if m is None or m.group(4) is None or text[m.end():].strip():
        raise ParseError("expected terminating '.'", line=lineno, offset=pos)
    s, p, o = terms
    if s.kind is not TermKind.IRI:
        raise ParseError("subject must be an IRI", line=lineno)
    if p.kind is not TermKind.IRI:
        raise ParseError("predicate must be an IRI", line=lineno)
    return Triple(s, p, o)


def parse_ntriples(source: TextIO | str) -> RdfGraph:
    """Parse the N-Triples subset: ``<s> <p> <o> .`` / ``<s> <p> "lit" .`` lines."""
    stream = io.StringIO(source) if isinstance(source, str) else source
    triples = []
    for lineno, raw in enumerate(stream, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        triples.append(_parse_ntriples_line(line, lineno))
    return RdfGraph(triples)


def serialize_ntriples(triples: Iterable[Triple]) -> str:
    return "".join(t.n3() + "\n" for t in sorted(set(triples)))


def ntriples_size(triples: Iterable[Triple]) -> int:
    """UTF-8 byte size of the N-Triples serialization of a triple set."""
    return sum(len(t.n3().encode("utf-8")) + 1 for t in set(triples))


# ---------------------------------------------------------------------------
# BGP queries


@dataclass(frozen=True)
class BgpQuery:
    projected: tuple[str, ...]
    patterns: tuple[TriplePattern, ...]

    def __post_init__(self):
        if not self.patterns:
            raise ValueError("query needs at least one triple pattern")
        names = self.variables()
        missing = [v for v in self.projected if v not in names]
        if missing:
            raise ValueError(f"projected variables not used in any pattern: {missing}")
        components = _components(self.patterns)
        if len(components) > 1:
            raise ConnectivityError(components)

    def variables(self) -> list[str]:
        """Variable names in first-occurrence order (subject, predicate, object)."""
        seen: dict[str, None] = {}
        for tp in self.patterns:
            for t in tp.terms():
                if t.is_var:
                    seen.setdefault(t.text, None)
        return list(seen)

    def to_sparql(self) -> str:
        body = " . ".join(str(tp) for tp in self.patterns)
        return f"SELECT {' '.join('?' + v for v in self.projected)} WHERE {{ {body} }}"


def _components(patterns: Iterable[TriplePattern]) -> list[list[str]]:
    parent: dict[Term, Term] = {}

    def find(x: Term) -> Term:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for tp in patterns:
        for t in (tp.subject, tp.object):
            parent.setdefault(t, t)
        a, b = find(tp.subject), find(tp.object)
        if a != b:
            parent[max(a, b)] = min(a, b)
    groups: dict[Term, list[str]] = {}
    for t in parent:
        groups.setdefault(find(t), []).append(t.n3())
    return [sorted(g) for _, g in sorted(groups.items())]


_KEYWORD = re.compile(r"\s*([A-Za-z]+)")
_BRACE = re.compile(r"\s*([{}])")


def parse_bgp(text: str) -> BgpQuery:
    """Parse ``SELECT ?a ?b WHERE { tp . tp ... }``.

    Terms are ``<iri>``, ``"literal"`` or ``?name``; a trailing ``.`` before
    the closing brace is tolerated.
    """
    pos = 0

    def keyword(expected: str) -> None:
        nonlocal pos
        m = _KEYWORD.match(text, pos)
        if m is None or m.group(1).upper() != expected:
            raise ParseError(f"expected {expected}", offset=_skip_ws(text, pos))
        pos = m.end()

    def brace(expected: str) -> None:
        nonlocal pos
        m = _BRACE.match(text, pos)
        if m is None or m.group(1) != expected:
            raise ParseError(f"expected '{expected}'", offset=_skip_ws(text, pos))
        pos = m.end()

    def term() -> Term:
        nonlocal pos
        m = _TOKEN.match(text, pos)
        if m is None or m.group(4) is not None:
            raise ParseError("expected a term", offset=_skip_ws(text, pos))
        start = _skip_ws(text, pos)
        pos = m.end()
        if m.group(1) is not None:
            return Term.iri(m.group(1))
        if m.group(2) is not None:
            return Term.literal(_unescape_literal(m.group(2), offset=start))
        return Term.var(m.group(3))

    keyword("SELECT")
    projected: list[str] = []
    while True:
        m = _TOKEN.match(text, pos)
        if m is None or m.group(3) is None:
            break
        projected.append(m.group(3))
        pos = m.end()
    if not projected:
        raise ParseError("expected at least one projected ?variable", offset=_skip_ws(text, pos))
    keyword("WHERE")
    brace("{")
    patterns: list[TriplePattern] = []
    while True:
        s, p, o = term(), term(), term()
        if p.kind is TermKind.LITERAL:
            raise ParseError("predicate may not be a literal", offset=pos)
        patterns.append(TriplePattern(s, p, o))
        m = _TOKEN.match(text, pos)
        if m is not None and m.group(4) is not None:
            pos = m.end()
            if _BRACE.match(text, pos) and _BRACE.match(text, pos).group(1) == "}":
                break
            continue
        break
    brace("}")
    if text[pos:].strip():
        raise ParseError("trailing input after '}'", offset=_skip_ws(text, pos))
    try:
        return BgpQuery(tuple(dict.fromkeys(projected)), tuple(patterns))
    except ConnectivityError:
        raise
    except ValueError as exc:
        raise ParseError(str(exc), offset=0) from exc


def _skip_ws(text: str, pos: int) -> int:
    while pos < len(text) and text[pos].isspace():
        pos += 1
    return pos


# ---------------------------------------------------------------------------
# Matching


@dataclass
class MatchSet:
    """Homomorphic matches of a query over a graph.

    ``bindings[i]`` maps every query variable to a term; ``matched_edges[i]``
    holds one graph triple per query triple pattern, in pattern order.
    ``extensions`` counts candidate triples tried by the matcher and is used
    as a deterministic work proxy.
    """

    projected: tuple[str, ...]
    bindings: list[dict[str, Term]] = field(default_factory=list)
    matched_edges: list[tuple[Triple, ...]] = field(default_factory=list)
    extensions: int = field(default=0, compare=False)

    def __len__(self) -> int:
        return len(self.bindings)

    def rows(self) -> list[tuple[str, ...]]:
        return [tuple(b[v].text for v in self.projected) for b in self.bindings]


def _resolve(t: Term, binding: Mapping[str, Term]) -> Term | None:
    if t.is_var:
        return binding.get(t.text)
    return t


def _extend(tp: TriplePattern, triple: Triple, binding: dict[str, Term]) -> list[str] | None:
    """Bind tp's free variables to triple's terms; None on conflict."""
    added: list[str] = []
    for q, g in zip(tp.terms(), (triple.subject, triple.predicate, triple.object)):
        if not q.is_var:
            continue
        cur = binding.get(q.text)
        if cur is None:
            binding[q.text] = g
            added.append(q.text)
        elif cur != g:
            for name in added:
                del binding[name]
            return None
    return added


def _label_groups(query: BgpQuery) -> list[list[Term]]:
    """Distinct predicate terms for each ordered (subject, object) pair with >1 of them."""
    groups: dict[tuple[Term, Term], dict[Term, None]] = {}
    for tp in query.patterns:
        groups.setdefault((tp.subject, tp.object), {}).setdefault(tp.predicate, None)
    return [list(g) for g in groups.values() if len(g) > 1]


def _labels_injective(groups: list[list[Term]], binding: Mapping[str, Term]) -> bool:
    for labels in groups:
        images = [binding[t.text] if t.is_var else t for t in labels]
        if len(set(images)) != len(images):
            return False
    return True


def match(query: BgpQuery, graph: RdfGraph) -> MatchSet:
    """Enumerate every homomorphic match of ``query`` in ``graph``.

    Backtracking over triple patterns; at each step the unmatched pattern
    with the fewest candidate triples under the current binding is expanded.
    Distinct query labels between the same ordered vertex pair must map to
    distinct graph labels.
    """
    patterns = query.patterns
    groups = _label_groups(query)
    result = MatchSet(query.projected)
    chosen: list[Triple | None] = [None] * len(patterns)
    binding: dict[str, Term] = {}
    remaining = set(range(len(patterns)))

    def candidates_for(i: int) -> list[Triple]:
        tp = patterns[i]
        cands = graph.candidates(*(_resolve(t, binding) for t in tp.terms()))
        return cands

    def search() -> None:
        if not remaining:
            if _labels_injective(groups, binding):
                result.bindings.append(dict(binding))
                result.matched_edges.append(tuple(chosen))  # type: ignore[arg-type]
            return
        best_i, best_c = -1, None
        for i in sorted(remaining):
            cands = candidates_for(i)
            if best_c is None or len(cands) < len(best_c):
                best_i, best_c = i, cands
                if not cands:
                    return
        remaining.discard(best_i)
        for triple in best_c:
            result.extensions += 1
            added = _extend(patterns[best_i], triple, binding)
            if added is None:
                continue
            chosen[best_i] = triple
            search()
            for name in added:
                del binding[name]
        chosen[best_i] = None
        remaining.add(best_i)

    search()
    return result


def serialize_matches(ms: MatchSet) -> str:
    """One row per binding: projected term texts joined by TAB, newline-terminated."""
    return "".join("\t".join(row) + "\n" for row in ms.rows())


def result_bytes(ms: MatchSet) -> int:
    return len(serialize_matches(ms).encode("utf-8"))
