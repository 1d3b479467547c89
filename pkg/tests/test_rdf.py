import io
import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edgesparql.rdf import (
    BgpQuery,
    ConnectivityError,
    ParseError,
    RdfGraph,
    Term,
    Triple,
    TriplePattern,
    match,
    ntriples_size,
    parse_bgp,
    parse_ntriples,
    result_bytes,
    serialize_matches,
    serialize_ntriples,
)

I = Term.iri
V = Term.var


def T(s, p, o):
    return Triple(I(s), I(p), I(o))


class TestTerms:
    def test_equality_is_kind_and_text(self):
        assert I("a") == I("a")
        assert I("a") != Term.literal("a")
        assert V("a") != I("a")

    def test_empty_variable_rejected(self):
        with pytest.raises(ValueError):
            V("")

    def test_triple_rejects_variables(self):
        with pytest.raises(ValueError):
            Triple(V("x"), I("p"), I("o"))

    def test_triple_rejects_literal_predicate(self):
        with pytest.raises(ValueError):
            Triple(I("s"), Term.literal("p"), I("o"))


class TestParseNtriples:
    def test_empty(self):
        g = parse_ntriples("")
        assert g.num_vertices() == 0 and g.num_edges() == 0

    def test_single_triple(self):
        g = parse_ntriples("<a> <p> <b> .\n")
        assert g.num_vertices() == 2 and g.num_edges() == 1

    def test_fragment_fixture(self, scenarios_dir):
        # hand count: Resident_Evil, Paul_W._S._Anderson, Milla_Jovovich; 3 lines
        with open(scenarios_dir / "film_fragment.nt", encoding="utf-8") as fh:
            g = parse_ntriples(fh)
        assert g.num_edges() == 3
        assert g.num_vertices() == 3
        assert T("Resident_Evil", "director", "Paul_W._S._Anderson") in g

    def test_parallel_edges_preserved(self):
        g = parse_ntriples("<a> <p> <b> .\n<a> <q> <b> .\n<a> <p> <b> .\n")
        assert g.num_edges() == 2
        assert g.num_vertices() == 2

    def test_literal_escapes_roundtrip(self):
        text = '<a> <p> "x\\ty \\"q\\" \\\\ \\n" .\n'
        g = parse_ntriples(text)
        (t,) = g.triples
        assert t.object.text == 'x\ty "q" \\ \n'
        assert serialize_ntriples(g) == text

    def test_comments_and_blank_lines(self):
        g = parse_ntriples(io.StringIO("# header\n\n<a> <p> <b> .\n   \n"))
        assert g.num_edges() == 1

    @pytest.mark.parametrize(
        "text",
        ["<a> <p> <b>\n", "<a> <p> .\n", '"lit" <p> <b> .\n', '<a> "p" <b> .\n', "<a> <p> <b> . extra\n", '<a> <p> "bad\\q" .\n'],
    )
    def test_malformed_lines(self, text):
        with pytest.raises(ParseError) as info:
            parse_ntriples("<x> <y> <z> .\n" + text)
        assert info.value.line == 2

    def test_size_counts_utf8_bytes(self):
        ts = [T("é", "p", "b")]
        assert ntriples_size(ts) == len(serialize_ntriples(ts).encode("utf-8"))


class TestParseBgp:
    def test_director_query(self):
        q = parse_bgp("SELECT ?f WHERE { ?f <director> <Paul_W._S._Anderson> }")
        assert len(q.patterns) == 1
        assert q.projected == ("f",)

    def test_self_loop_accepted(self):
        q = parse_bgp("SELECT ?x WHERE { ?x <p> ?x }")
        assert q.patterns == (TriplePattern(V("x"), I("p"), V("x")),)

    def test_disconnected_rejected(self):
        with pytest.raises(ConnectivityError) as info:
            parse_bgp("SELECT ?x WHERE { ?x <p> ?y . ?a <q> ?b }")
        assert len(info.value.components) == 2

    def test_unknown_projection(self):
        with pytest.raises(ValueError):
            parse_bgp("SELECT ?z WHERE { ?x <p> ?y }")

    def test_case_and_trailing_dot(self):
        q = parse_bgp("select ?x where { ?x <p> ?y . ?y <q> \"lit\" . }")
        assert len(q.patterns) == 2

    def test_syntax_error_has_offset(self):
        with pytest.raises(ParseError) as info:
            parse_bgp("SELECT ?x WHERE { ?x <p> }")
        assert info.value.offset is not None

    def test_to_sparql_roundtrip(self):
        q = parse_bgp("SELECT ?f ?a WHERE { ?f <director> <P> . ?f <starring> ?a }")
        assert parse_bgp(q.to_sparql()) == q


class TestMatch:
    def test_two_cycle_edge(self):
        g = RdfGraph([T("u", "a", "v"), T("v", "a", "u")])
        assert len(match(parse_bgp("SELECT ?x ?y WHERE { ?x <a> ?y }"), g)) == 2

    def test_constant_anchor(self):
        g = RdfGraph([T("u", "a", "v")])
        ms = match(parse_bgp("SELECT ?y WHERE { <u> <a> ?y }"), g)
        assert ms.bindings == [{"y": I("v")}]

    def test_two_cycle_query(self):
        g = RdfGraph([T("u", "a", "v"), T("v", "a", "u")])
        ms = match(parse_bgp("SELECT ?x ?y WHERE { ?x <a> ?y . ?y <a> ?x }"), g)
        assert sorted(ms.rows()) == [("u", "v"), ("v", "u")]

    def test_homomorphism_not_injective(self):
        # two query vertices may land on the same graph vertex
        g = RdfGraph([T("u", "a", "v")])
        ms = match(parse_bgp("SELECT ?x ?y ?z WHERE { ?x <a> ?y . ?z <a> ?y }"), g)
        assert ms.rows() == [("u", "v", "u")]

    def test_parallel_query_labels_must_differ(self):
        g = RdfGraph([T("u", "a", "v"), T("u", "b", "v")])
        ms = match(parse_bgp("SELECT ?p ?q WHERE { <u> ?p <v> . <u> ?q <v> }"), g)
        assert sorted(ms.rows()) == [("a", "b"), ("b", "a")]

    def test_matched_edges_one_per_pattern(self):
        g = RdfGraph([T("u", "a", "v"), T("v", "b", "w")])
        q = parse_bgp("SELECT ?x WHERE { ?x <a> ?y . ?y <b> ?z }")
        ms = match(q, g)
        assert ms.matched_edges == [(T("u", "a", "v"), T("v", "b", "w"))]

    def test_result_bytes(self):
        assert result_bytes(match(parse_bgp("SELECT ?y WHERE { <u> <a> ?y }"), RdfGraph())) == 0
        ms = match(parse_bgp("SELECT ?y WHERE { <u> <a> ?y }"), RdfGraph([Triple(I("u"), I("a"), Term.literal("v"))]))
        assert serialize_matches(ms) == "v\n"
        assert result_bytes(ms) == 2

    def test_result_bytes_equals_dump(self, scenarios_dir, tmp_path):
        with open(scenarios_dir / "fig1.nt", encoding="utf-8") as fh:
            g = parse_ntriples(fh)
        q = parse_bgp((scenarios_dir / "q1.rq").read_text())
        ms = match(q, g)
        out = tmp_path / "rows.tsv"
        out.write_bytes(serialize_matches(ms).encode("utf-8"))
        assert result_bytes(ms) == out.stat().st_size == sum(len(r[0]) + 1 for r in ms.rows())


# brute-force oracle: try every function from query variables to graph terms

NODES = ["u", "v", "w"]
LABELS = ["a", "b"]


def brute_force(query: BgpQuery, graph: RdfGraph) -> set:
    names = query.variables()
    pool = sorted(set(graph.vertices) | set(graph.labels))
    found = set()
    for combo in itertools.product(pool, repeat=len(names)):
        b = dict(zip(names, combo))

        def res(t):
            return b[t.text] if t.is_var else t

        images = []
        ok = True
        for tp in query.patterns:
            s, p, o = res(tp.subject), res(tp.predicate), res(tp.object)
            try:
                tr = Triple(s, p, o)
            except ValueError:
                ok = False
                break
            if tr not in graph:
                ok = False
                break
            images.append(tr)
        if not ok:
            continue
        # distinct labels on one query vertex pair need distinct images
        pairs: dict = {}
        for tp in query.patterns:
            pairs.setdefault((tp.subject, tp.object), set()).add(tp.predicate)
        injective = all(len({res(p) for p in grp}) == len(grp) for grp in pairs.values())
        if injective:
            found.add(tuple(sorted(b.items())))
    return found


triples_st = st.lists(
    st.tuples(st.sampled_from(NODES), st.sampled_from(LABELS), st.sampled_from(NODES)), min_size=1, max_size=7
)
qterm = st.sampled_from(["?x", "?y", "?z", "<u>", "<v>"])
qpred = st.sampled_from(["<a>", "<b>", "?p"])


@st.composite
def connected_queries(draw):
    n = draw(st.integers(1, 3))
    pats = []
    seen = []
    for i in range(n):
        s = draw(st.sampled_from(["?x", "?y"])) if i == 0 else draw(st.sampled_from(seen))
        o = draw(qterm)
        pats.append(f"{s} {draw(qpred)} {o}")
        seen += [s, o]
    varnames = sorted({t for p in pats for t in p.split() if t.startswith("?")})
    proj = " ".join(varnames)
    return parse_bgp(f"SELECT {proj} WHERE {{ {' . '.join(pats)} }}")


@settings(max_examples=300, deadline=None)
@given(triples_st, connected_queries())
def test_match_equals_brute_force(ts, query):
    g = RdfGraph([T(*t) for t in ts])
    ms = match(query, g)
    got = {tuple(sorted(b.items())) for b in ms.bindings}
    assert len(got) == len(ms.bindings)
    assert got == brute_force(query, g)
    for b, edges in zip(ms.bindings, ms.matched_edges):
        assert len(edges) == len(query.patterns)
        assert all(e in g for e in edges)
