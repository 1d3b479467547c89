"""Brute-force reference implementations shared by the test modules."""

from __future__ import annotations

import itertools

import numpy as np

from edgesparql.patterns import Pattern, label_token
from edgesparql.rdf import Term


def isomorphic(p: Pattern, q: Pattern) -> bool:
    """Try every vertex bijection; variable labels compare as wildcards."""
    if p.var_count != q.var_count:
        return False
    pe = {(s, d, label_token(lab)) for s, d, lab in p.edges}
    qe = {(s, d, label_token(lab)) for s, d, lab in q.edges}
    if len(pe) != len(qe) or sorted(e[2] for e in pe) != sorted(e[2] for e in qe):
        return False
    for perm in itertools.permutations(range(p.var_count)):
        if {(perm[s], perm[d], t) for s, d, t in pe} == qe:
            return True
    return False


def random_pattern(rng: np.random.Generator, max_edges: int = 6, labels=("a", "b")) -> Pattern:
    """Random connected pattern: a spanning walk plus extra edges (loops and parallels allowed)."""
    n_edges = int(rng.integers(1, max_edges + 1))
    pool = [Term.iri(x) for x in labels] + [Term.var("p")]
    edges: set = set()
    nv = 1
    tries = 0
    while len(edges) < n_edges and tries < 100:
        tries += 1
        lab = pool[int(rng.integers(len(pool)))]
        if rng.random() < 0.5 and nv < n_edges + 1:
            old = int(rng.integers(nv))
            e = (old, nv, lab) if rng.random() < 0.5 else (nv, old, lab)
            if e not in edges:
                edges.add(e)
                nv += 1
        else:
            e = (int(rng.integers(nv)), int(rng.integers(nv)), lab)
            if nv > 1 or e[0] == e[1]:
                edges.add(e)
    return Pattern(tuple(sorted(edges, key=lambda e: (e[0], e[1], label_token(e[2])))), nv)


def random_permutation_of(rng: np.random.Generator, p: Pattern) -> Pattern:
    perm = [int(x) for x in rng.permutation(p.var_count)]
    edges = list(p.relabel(perm).edges)
    rng.shuffle(edges)
    return Pattern(tuple(edges), p.var_count)


def mutate(rng: np.random.Generator, p: Pattern, labels=("a", "b")) -> Pattern:
    """Flip one edge's direction or label; may or may not stay isomorphic."""
    edges = list(p.edges)
    i = int(rng.integers(len(edges)))
    s, d, lab = edges[i]
    if rng.random() < 0.5:
        cand = (d, s, lab)
    else:
        pool = [Term.iri(x) for x in labels] + [Term.var("p")]
        cand = (s, d, pool[int(rng.integers(len(pool)))])
    if cand in edges:
        return p
    edges[i] = cand
    return Pattern(tuple(edges), p.var_count)


# ---------------------------------------------------------------------------
# scheduling oracles, written against the raw instance arrays only


def brute_cost(targets, inst) -> float:
    """Total cost of an assignment with the optimal split, from c, w, rates and F."""
    total = 0.0
    load = np.zeros(inst.K)
    for n, k in enumerate(targets):
        if k < 0:
            total += inst.w[n] / inst.cloud_rate[n]
        else:
            assert inst.e[n, k]
            load[k] += np.sqrt(inst.c[n])
            total += inst.w[n] / inst.edge_rate[n, k]
    return float(total + np.sum(load**2 / inst.F))


def subtree_optimum(inst, prefix=()) -> float:
    """Minimum cost over every completion of a decided prefix."""
    options = [[-1] + [int(k) for k in np.flatnonzero(inst.e[n])] for n in range(len(prefix), inst.N)]
    return min(brute_cost(tuple(prefix) + rest, inst) for rest in itertools.product(*options))


def newton_allocation(c, F, tol=1e-14, max_iter=200):
    """Minimise sum c/f over {f > 0, sum f = F} by equality-constrained Newton.

    Returns (f, gap) with gap the Frank-Wolfe certificate over the scaled simplex.
    """
    c = np.asarray(c, dtype=float)
    f = np.full(len(c), F / len(c))
    for _ in range(max_iter):
        g = -c / f**2
        h = 2 * c / f**3
        # KKT step: dx = -(g + nu) / h with sum dx = 0
        nu = -np.sum(g / h) / np.sum(1 / h)
        dx = -(g + nu) / h
        t = 1.0
        while np.any(f + t * dx <= 0) or np.sum(c / (f + t * dx)) > np.sum(c / f) + 1e-4 * t * (g @ dx):
            t *= 0.5
            if t < 1e-20:
                break
        f = f + t * dx
        f *= F / f.sum()
        g = -c / f**2
        gap = float(g @ f - F * g.min())
        if gap <= tol * max(1.0, np.sum(c / f)):
            break
    return f, gap


def golden_section(fn, lo, hi, tol=1e-12):
    phi = (np.sqrt(5) - 1) / 2
    a, b = lo, hi
    x1, x2 = b - phi * (b - a), a + phi * (b - a)
    f1, f2 = fn(x1), fn(x2)
    while b - a > tol:
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - phi * (b - a)
            f1 = fn(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + phi * (b - a)
            f2 = fn(x2)
    return (a + b) / 2


class AssignmentTable:
    """Every feasible assignment of a small instance with its cost, for prefix queries."""

    def __init__(self, inst):
        options = [[-1] + [int(k) for k in np.flatnonzero(inst.e[n])] for n in range(inst.N)]
        self.combos = np.array(list(itertools.product(*options)), dtype=np.int64).reshape(-1, inst.N)
        cost = np.zeros(len(self.combos))
        for n in range(inst.N):
            col = self.combos[:, n]
            cost += np.where(col < 0, inst.w[n] / inst.cloud_rate[n], 0.0)
            for k in range(inst.K):
                if inst.e[n, k]:
                    cost += np.where(col == k, inst.w[n] / inst.edge_rate[n, k], 0.0)
        for k in range(inst.K):
            load = (self.combos == k) @ np.sqrt(inst.c)
            cost += load**2 / inst.F[k]
        self.cost = cost

    def optimum(self, prefix=()) -> float:
        d = len(prefix)
        if d == 0:
            return float(self.cost.min())
        mask = np.all(self.combos[:, :d] == np.asarray(prefix), axis=1)
        return float(self.cost[mask].min())
