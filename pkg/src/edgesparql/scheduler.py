"""Query assignment and computational resource allocation.

The joint problem is split into a closed-form allocation step (given an
assignment, each server shares its cycles in proportion to sqrt(c_n)) and an
assignment search solved exactly by branch-and-bound, with lower bounds from
the continuous relaxation and upper bounds from rounding it.

Assignments are handled internally as *target tuples*: ``targets[n]`` is the
server index task n runs on, or ``CLOUD`` (-1).
"""

from __future__ import annotations

import heapq
import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .cost import ProblemInstance, total_cost

log = logging.getLogger(__name__)

CLOUD = -1
ORACLE_LIMIT = 10**6


class SolverError(RuntimeError):
    def __init__(self, message: str, gap: float):
        super().__init__(message)
        self.gap = gap


# ---------------------------------------------------------------------------
# Assignment helpers


def targets_to_matrix(targets: Sequence[int], K: int) -> np.ndarray:
    D = np.zeros((len(targets), K), dtype=np.int8)
    for n, k in enumerate(targets):
        if k != CLOUD:
            D[n, k] = 1
    return D


def matrix_to_targets(D, e: np.ndarray | None = None) -> tuple[int, ...]:
    """Effective target per row (rows with no executable 1-entry go to the cloud)."""
    D = np.asarray(D)
    eff = D if e is None else D * e
    out = []
    for row in eff:
        hits = np.flatnonzero(row)
        if len(hits) > 1:
            raise ValueError("row assigns a task to more than one server")
        out.append(int(hits[0]) if len(hits) else CLOUD)
    return tuple(out)


def assignment_cost(targets: Sequence[int], inst: ProblemInstance) -> float:
    """Optimal total cost of an assignment once resources are allocated in closed form."""
    load = [0.0] * inst.K
    tx = 0.0
    for n, k in enumerate(targets):
        if k == CLOUD:
            tx += inst.cloud_tx[n]
        else:
            if not inst.e[n, k]:
                raise ValueError(f"task {n} is not executable on server {k}")
            load[k] += inst.sqrt_c[n]
            tx += inst.edge_tx[n, k]
    return sum(load[k] ** 2 / inst.F[k] for k in range(inst.K)) + tx


def cra_closed_form(D, inst: ProblemInstance) -> np.ndarray:
    """f_{n,k} = F_k sqrt(c_n) / sum_{m in N_k} sqrt(c_m); zero outside the assignment."""
    D = np.asarray(D)
    eff = (D * inst.e).astype(bool)
    Fm = np.zeros(eff.shape)
    for k in range(inst.K):
        members = np.flatnonzero(eff[:, k])
        if len(members):
            roots = inst.sqrt_c[members]
            Fm[members, k] = inst.F[k] * roots / roots.sum()
    return Fm


def cra_compute_cost(D, inst: ProblemInstance) -> float:
    """sum_k (sum_{n in N_k} sqrt(c_n))^2 / F_k."""
    eff = (np.asarray(D) * inst.e).astype(bool)
    loads = inst.sqrt_c @ eff
    return float(np.sum(loads**2 / inst.F))


def upper_bound(D, inst: ProblemInstance) -> float:
    return assignment_cost(matrix_to_targets(D, inst.e), inst)


def assignment_ratios(targets: Sequence[int], K: int) -> tuple[float, ...]:
    """Fraction of tasks per server, cloud last."""
    N = len(targets)
    if N == 0:
        return (0.0,) * (K + 1)
    counts = [0] * (K + 1)
    for k in targets:
        counts[K if k == CLOUD else k] += 1
    return tuple(c / N for c in counts)


@dataclass
class SearchStats:
    nodes: int = 0
    pruned: int = 0
    incumbents: list[float] = field(default_factory=list)
    explored: list["BnbNode"] = field(default_factory=list, repr=False)


@dataclass
class Schedule:
    assignment: np.ndarray
    allocation: np.ndarray
    total_cost: float
    ratios: tuple[float, ...]
    strategy: str = ""
    stats: SearchStats | None = field(default=None, repr=False)

    @property
    def targets(self) -> tuple[int, ...]:
        return matrix_to_targets(self.assignment)

    def dump(self) -> str:
        lines = [f"total_cost_seconds={self.total_cost!r}"]
        for n, k in enumerate(self.targets):
            where = "cloud" if k == CLOUD else str(k)
            f = 0.0 if k == CLOUD else float(self.allocation[n, k])
            lines.append(f"{n}\t{where}\t{f!r}")
        lines.append("ratios=" + ",".join(repr(r) for r in self.ratios))
        return "\n".join(lines) + "\n"


def make_schedule(targets: Sequence[int], inst: ProblemInstance, strategy: str = "") -> Schedule:
    D = targets_to_matrix(targets, inst.K)
    Fm = cra_closed_form(D, inst)
    return Schedule(D, Fm, total_cost(D, Fm, inst), assignment_ratios(targets, inst.K), strategy)


# ---------------------------------------------------------------------------
# Continuous relaxation


@dataclass
class Relaxation:
    D: np.ndarray
    value: float
    gap: float
    lower: float
    iterations: int


def _relaxed_objective(x: np.ndarray, inst: ProblemInstance) -> float:
    loads = inst.sqrt_c @ x
    lin = np.where(inst.e, inst.edge_tx - inst.cloud_tx[:, None], 0.0)
    return float(np.sum(loads**2 / inst.F) + np.sum(x * lin) + inst.cloud_tx.sum())


def _fw_gap(x: np.ndarray, inst: ProblemInstance, free: Sequence[int]) -> float:
    loads = inst.sqrt_c @ x
    gap = 0.0
    for n in free:
        elig = inst.e[n]
        g = 2.0 * inst.sqrt_c[n] * loads[elig] / inst.F[elig] + inst.edge_tx[n, elig] - inst.cloud_tx[n]
        gap += float(g @ x[n, elig]) - min(0.0, float(g.min()))
    return max(gap, 0.0)


def solve_rqad(
    inst: ProblemInstance,
    decided: Sequence[int] = (),
    eps: float = 1e-6,
    max_iter: int = 100_000,
    warm: np.ndarray | None = None,
) -> Relaxation:
    """Minimise the relaxed assignment objective with tasks ``decided`` fixed.

    Tasks ``0..len(decided)-1`` are pinned to their targets; the rest range
    over ``{x >= 0, sum_k x_nk <= 1}`` on their executable servers. The solver
    is a block-coordinate pairwise Frank-Wolfe with exact line search (the
    objective is quadratic); it stops once the Frank-Wolfe duality gap is at
    most ``eps``, so ``lower = value - gap`` never exceeds the true optimum.
    """
    N, K = inst.N, inst.K
    d = len(decided)
    x = np.zeros((N, K)) if warm is None else np.array(warm, dtype=float)
    for n, k in enumerate(decided):
        x[n] = 0.0
        if k != CLOUD:
            x[n, k] = 1.0
    free = [n for n in range(d, N) if inst.e[n].any()]
    for n in range(d, N):
        if n not in free:
            x[n] = 0.0

    s = inst.sqrt_c.tolist()
    F = inst.F.tolist()
    loads = (inst.sqrt_c @ x).tolist()
    elig = {n: np.flatnonzero(inst.e[n]).tolist() for n in free}
    lin = {n: [inst.edge_tx[n, k] - inst.cloud_tx[n] for k in elig[n]] for n in free}
    rows = {n: [float(x[n, k]) for k in elig[n]] for n in free}
    idle = {n: max(0.0, 1.0 - sum(rows[n])) for n in free}

    gap = _fw_gap(x, inst, free) if free else 0.0
    it = 0
    while gap > eps and it < max_iter:
        it += 1
        for n in free:
            ks, row, sn = elig[n], rows[n], s[n]
            g = [2.0 * sn * loads[k] / F[k] + lin[n][j] for j, k in enumerate(ks)]
            # vertex j = -1 is the origin (task stays in the cloud), gradient 0
            fw_j, fw_g = -1, 0.0
            for j, gj in enumerate(g):
                if gj < fw_g:
                    fw_j, fw_g = j, gj
            aw_j, aw_g = (-1, 0.0) if idle[n] > 0.0 else (None, -math.inf)
            for j, gj in enumerate(g):
                if row[j] > 0.0 and gj > aw_g:
                    aw_j, aw_g = j, gj
            if aw_j is None or fw_j == aw_j:
                continue
            slope = fw_g - aw_g
            if slope >= 0.0:
                continue
            cap = idle[n] if aw_j == -1 else row[aw_j]
            curv = 0.0
            if fw_j >= 0:
                curv += sn * sn / F[ks[fw_j]]
            if aw_j >= 0:
                curv += sn * sn / F[ks[aw_j]]
            step = min(cap, -slope / (2.0 * curv)) if curv > 0 else cap
            if step <= 0.0:
                continue
            if fw_j >= 0:
                row[fw_j] += step
                loads[ks[fw_j]] += sn * step
            else:
                idle[n] += step
            if aw_j >= 0:
                row[aw_j] = 0.0 if step == cap else row[aw_j] - step
                loads[ks[aw_j]] -= sn * step
            else:
                idle[n] = 0.0 if step == cap else idle[n] - step
        for n in free:
            x[n, elig[n]] = rows[n]
        gap = _fw_gap(x, inst, free)
    if gap > eps:
        raise SolverError(f"relaxation did not reach gap {eps} in {max_iter} sweeps", gap)
    value = _relaxed_objective(x, inst)
    # a few ulps of slack keeps the bound safe under rounding
    lower = value - gap - 1e-13 * max(1.0, abs(value))
    return Relaxation(x, value, gap, lower, it)


def round_relaxation(Dcont, e: np.ndarray | None = None) -> np.ndarray:
    """Threshold at 0.5; rows left with several ones keep their largest entry (ties: lowest k)."""
    Dc = np.asarray(Dcont, dtype=float)
    D = (Dc >= 0.5).astype(np.int8)
    if e is not None:
        D &= np.asarray(e, dtype=np.int8)
    for n in np.flatnonzero(D.sum(axis=1) > 1):
        keep = int(np.argmax(np.where(D[n] == 1, Dc[n], -np.inf)))
        D[n] = 0
        D[n, keep] = 1
    return D


# ---------------------------------------------------------------------------
# Branch and bound


@dataclass
class BnbNode:
    depth: int
    decided: tuple[int, ...]
    lower: float
    upper: float
    rounded: tuple[int, ...]
    determined_cost: float = 0.0
    gap: float = 0.0
    relaxed: np.ndarray | None = field(default=None, repr=False)


def determined_cost(decided: Sequence[int], inst: ProblemInstance) -> float:
    """Cost of the decided tasks taken on their own."""
    return assignment_cost(decided, _prefix(inst, len(decided)))


def _prefix(inst: ProblemInstance, d: int) -> ProblemInstance:
    return ProblemInstance(
        inst.c[:d], inst.w[:d], inst.e[:d], inst.edge_rate[:d], inst.cloud_rate[:d], inst.F
    )


def evaluate_node(
    inst: ProblemInstance,
    decided: tuple[int, ...],
    eps: float = 1e-6,
    max_iter: int = 100_000,
    warm: np.ndarray | None = None,
) -> BnbNode:
    od = determined_cost(decided, inst)
    if len(decided) == inst.N:
        cost = assignment_cost(decided, inst)
        return BnbNode(len(decided), decided, cost, cost, decided, od)
    relax = solve_rqad(inst, decided, eps, max_iter, warm)
    rounded = matrix_to_targets(round_relaxation(relax.D, inst.e))
    return BnbNode(
        len(decided), decided, relax.lower, assignment_cost(rounded, inst), rounded, od, relax.gap, relax.D
    )


def branch(node: BnbNode, inst: ProblemInstance, eps: float = 1e-6, max_iter: int = 100_000) -> list[BnbNode]:
    """Fix the next task to each executable server, then to the cloud."""
    n = node.depth
    if n >= inst.N:
        raise ValueError("cannot branch a complete node")
    options = [int(k) for k in np.flatnonzero(inst.e[n])] + [CLOUD]
    return [evaluate_node(inst, node.decided + (k,), eps, max_iter, node.relaxed) for k in options]


def branch_and_bound(
    inst: ProblemInstance,
    eps: float = 1e-6,
    max_iter: int = 100_000,
    record: bool = False,
) -> Schedule:
    """Exact minimum-cost assignment.

    Nodes are expanded deepest first, then by lowest upper bound; the
    incumbent starts at the all-cloud cost and nodes whose lower bound
    exceeds it are discarded.
    """
    N = inst.N
    stats = SearchStats()
    cloud = (CLOUD,) * N
    best_cost = assignment_cost(cloud, inst)
    best = cloud
    stats.incumbents.append(best_cost)
    if N == 0:
        sched = make_schedule(best, inst, "bnb")
        sched.stats = stats
        return sched

    def slack() -> float:
        return 1e-12 * max(1.0, abs(best_cost))

    root = evaluate_node(inst, (), eps, max_iter)
    heap: list[tuple[int, float, int, BnbNode]] = []
    seq = itertools.count()
    for node in (root,):
        stats.nodes += 1
        if record:
            stats.explored.append(node)
        if node.upper < best_cost:
            best_cost, best = node.upper, node.rounded
            stats.incumbents.append(best_cost)
        heapq.heappush(heap, (-node.depth, node.upper, next(seq), node))

    while heap:
        _, _, _, node = heapq.heappop(heap)
        if node.lower > best_cost + slack():
            stats.pruned += 1
            continue
        if node.depth == N:
            continue
        for child in branch(node, inst, eps, max_iter):
            stats.nodes += 1
            if record:
                stats.explored.append(child)
            if child.upper < best_cost:
                best_cost, best = child.upper, child.rounded
                stats.incumbents.append(best_cost)
            if child.lower > best_cost + slack():
                stats.pruned += 1
                continue
            heapq.heappush(heap, (-child.depth, child.upper, next(seq), child))

    log.debug("bnb: %d nodes, %d pruned, cost %.9g", stats.nodes, stats.pruned, best_cost)
    sched = make_schedule(best, inst, "bnb")
    sched.stats = stats
    return sched


# ---------------------------------------------------------------------------
# Baselines and oracle


def cloud_only(inst: ProblemInstance) -> Schedule:
    return make_schedule((CLOUD,) * inst.N, inst, "cloud-only")


def random_assignment(inst: ProblemInstance, seed: int = 0) -> Schedule:
    rng = np.random.default_rng(seed)
    targets = []
    for n in range(inst.N):
        options = [CLOUD] + [int(k) for k in np.flatnonzero(inst.e[n])]
        targets.append(options[int(rng.integers(len(options)))])
    return make_schedule(targets, inst, "random")


def edge_first(inst: ProblemInstance) -> Schedule:
    counts = [0] * inst.K
    targets = []
    for n in range(inst.N):
        elig = np.flatnonzero(inst.e[n])
        if len(elig) == 0:
            targets.append(CLOUD)
            continue
        k = int(min(elig, key=lambda k: (counts[k], k)))
        counts[k] += 1
        targets.append(k)
    return make_schedule(targets, inst, "edge-first")


def greedy(inst: ProblemInstance) -> Schedule:
    """Per task, the cheaper of the cloud and each executable server at an equal share of F_k."""
    counts = [0] * inst.K
    targets = []
    for n in range(inst.N):
        best_k, best_cost = CLOUD, inst.cloud_tx[n]
        for k in np.flatnonzero(inst.e[n]):
            f = inst.F[k] / (counts[k] + 1)
            cost = inst.c[n] / f + inst.edge_tx[n, k]
            if cost < best_cost:
                best_k, best_cost = int(k), cost
        if best_k != CLOUD:
            counts[best_k] += 1
        targets.append(best_k)
    return make_schedule(targets, inst, "greedy")


STRATEGIES = ("bnb", "greedy", "edge-first", "random", "cloud-only")


def baseline(strategy: str, inst: ProblemInstance, seed: int = 0) -> Schedule:
    if strategy == "cloud-only":
        return cloud_only(inst)
    if strategy == "random":
        return random_assignment(inst, seed)
    if strategy == "edge-first":
        return edge_first(inst)
    if strategy == "greedy":
        return greedy(inst)
    raise ValueError(f"unknown baseline {strategy!r}")


def run_strategy(strategy: str, inst: ProblemInstance, eps: float = 1e-6, seed: int = 0) -> Schedule:
    if strategy == "bnb":
        return branch_and_bound(inst, eps)
    return baseline(strategy, inst, seed)


def oracle_exhaustive(inst: ProblemInstance) -> Schedule:
    """Enumerate every feasible assignment; ties go to the lexicographically smallest D."""
    N, K = inst.N, inst.K
    options = [[CLOUD] + [int(k) for k in np.flatnonzero(inst.e[n])] for n in range(N)]
    total = math.prod(len(o) for o in options)
    if total > ORACLE_LIMIT:
        raise ValueError(f"{total} assignments exceed the oracle limit of {ORACLE_LIMIT}")
    if N == 0:
        return make_schedule((), inst, "oracle")
    combos = np.array(list(itertools.product(*options)), dtype=np.int64).reshape(total, N)
    cost = (combos == CLOUD) @ inst.cloud_tx
    for k in range(K):
        on_k = combos == k
        sums = on_k @ inst.sqrt_c
        cost = cost + sums * sums / inst.F[k]
        cost = cost + np.where(on_k, np.where(inst.e[:, k], inst.edge_tx[:, k], 0.0), 0.0).sum(axis=1)
    ties = np.flatnonzero(cost == cost.min())
    pick = min(ties, key=lambda i: targets_to_matrix(combos[i], K).ravel().tolist())
    return make_schedule(tuple(int(k) for k in combos[pick]), inst, "oracle")
