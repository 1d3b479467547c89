"""Workload, radio and computation cost model of the edge-cloud system.

Units are SI throughout: cycles, cycles/s, bits, bits/s and seconds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np


class AssociationError(ValueError):
    pass


class ConstraintViolation(ValueError):
    """An assignment/allocation breaks one of the constraints C1..C4."""

    def __init__(self, constraint: str, detail: str):
        super().__init__(f"{constraint} violated: {detail}")
        self.constraint = constraint


@dataclass(frozen=True)
class QueryTask:
    n: int
    c: float
    w: float
    e: tuple[bool, ...]
    user: int = -1  # index of the submitting end user; defaults to n

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError(f"task {self.n}: c must be positive")
        if self.w < 0:
            raise ValueError(f"task {self.n}: w must be nonnegative")
        if self.user < 0:
            object.__setattr__(self, "user", self.n)


@dataclass(frozen=True)
class EdgeServerSpec:
    k: int
    F: float
    capacity_bytes: int
    tp: float
    bandwidth: float

    def __post_init__(self):
        if not self.F > 0:
            raise ValueError(f"server {self.k}: F must be positive")
        if not self.bandwidth > 0:
            raise ValueError(f"server {self.k}: bandwidth must be positive")
        if self.capacity_bytes < 0:
            raise ValueError(f"server {self.k}: capacity must be nonnegative")


@dataclass(frozen=True)
class EndUserSpec:
    n: int
    associated: frozenset[int]
    h: Mapping[int, float] = field(hash=False)
    r_cloud: float

    def __post_init__(self):
        for k in self.associated:
            if not self.h.get(k, 0) > 0:
                raise ValueError(f"user {self.n}: channel gain to server {k} must be positive")
        if not self.r_cloud > 0:
            raise ValueError(f"user {self.n}: cloud rate must be positive")


@dataclass(frozen=True)
class RadioEnv:
    sigma2: float

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")


def downlink_rate(server: EdgeServerSpec, user: EndUserSpec, env: RadioEnv) -> float:
    """Shannon rate B * log2(1 + tp * h / sigma^2) from server to user."""
    if server.k not in user.associated:
        raise AssociationError(f"user {user.n} is not associated with server {server.k}")
    return server.bandwidth * math.log2(1.0 + server.tp * user.h[server.k] / env.sigma2)


def edge_cost(task: QueryTask, f: float, rate: float) -> float:
    if not f > 0:
        raise ValueError("allocated resource f must be positive")
    if not rate > 0:
        raise ValueError("rate must be positive")
    return task.c / f + task.w / rate


def cloud_cost(task: QueryTask, r_cloud: float) -> float:
    return task.w / r_cloud


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    """Dense arrays for N tasks and K servers.

    ``edge_tx[n, k]`` is w_n / r^{n,k} (inf where the pair is not associated),
    ``cloud_tx[n]`` is w_n / r^{n,c}.
    """

    c: np.ndarray
    w: np.ndarray
    e: np.ndarray
    edge_rate: np.ndarray
    cloud_rate: np.ndarray
    F: np.ndarray

    def __post_init__(self):
        n, k = self.e.shape
        if self.c.shape != (n,) or self.w.shape != (n,) or self.cloud_rate.shape != (n,):
            raise ValueError("per-task arrays must have length N")
        if self.edge_rate.shape != (n, k) or self.F.shape != (k,):
            raise ValueError("edge_rate must be N x K and F length K")
        bad = self.e & ~(self.edge_rate > 0)
        if bad.any():
            n0, k0 = map(int, np.argwhere(bad)[0])
            raise AssociationError(f"task {n0} executable on server {k0} without a downlink")
        linked = self.edge_rate > 0
        edge_tx = np.full(self.e.shape, np.inf)
        edge_tx[linked] = np.broadcast_to(self.w[:, None], (n, k))[linked] / self.edge_rate[linked]
        object.__setattr__(self, "sqrt_c", np.sqrt(self.c))
        object.__setattr__(self, "edge_tx", edge_tx)
        object.__setattr__(self, "cloud_tx", self.w / self.cloud_rate)

    sqrt_c: np.ndarray = field(init=False, repr=False)
    edge_tx: np.ndarray = field(init=False, repr=False)
    cloud_tx: np.ndarray = field(init=False, repr=False)

    @property
    def N(self) -> int:
        return self.e.shape[0]

    @property
    def K(self) -> int:
        return self.e.shape[1]

    @classmethod
    def from_arrays(cls, c, w, e, edge_rate, cloud_rate, F) -> ProblemInstance:
        F = np.atleast_1d(np.asarray(F, dtype=float))
        e = np.asarray(e, dtype=bool).reshape(-1, len(F))
        return cls(
            np.asarray(c, dtype=float),
            np.asarray(w, dtype=float),
            e,
            np.asarray(edge_rate, dtype=float).reshape(e.shape),
            np.asarray(cloud_rate, dtype=float),
            F,
        )

    @classmethod
    def from_specs(
        cls,
        tasks: Sequence[QueryTask],
        servers: Sequence[EdgeServerSpec],
        users: Sequence[EndUserSpec],
        env: RadioEnv,
    ) -> ProblemInstance:
        K = len(servers)
        for s_idx, s in enumerate(servers):
            if s.k != s_idx:
                raise ValueError("servers must be indexed 0..K-1 in order")
        by_user = {u.n: u for u in users}
        rate = np.zeros((len(tasks), K))
        e = np.zeros((len(tasks), K), dtype=bool)
        rc = np.zeros(len(tasks))
        for i, t in enumerate(tasks):
            if len(t.e) != K:
                raise ValueError(f"task {t.n}: executability vector has length {len(t.e)}, expected {K}")
            u = by_user.get(t.user)
            if u is None:
                raise AssociationError(f"task {t.n} references unknown user {t.user}")
            rc[i] = u.r_cloud
            for k in range(K):
                if k in u.associated:
                    rate[i, k] = downlink_rate(servers[k], u, env)
                e[i, k] = bool(t.e[k])
        return cls(
            np.array([t.c for t in tasks], dtype=float),
            np.array([t.w for t in tasks], dtype=float),
            e,
            rate,
            rc,
            np.array([s.F for s in servers], dtype=float),
        )


def check_constraints(D, F, inst: ProblemInstance, rtol: float = 1e-9) -> list[ConstraintViolation]:
    """All violations of C1 (binary D), C2 (one server), C3 (0<=f<=F_k), C4 (sum f <= F_k)."""
    D = np.asarray(D)
    Fm = np.asarray(F, dtype=float)
    problems: list[ConstraintViolation] = []
    if D.shape != inst.e.shape or Fm.shape != inst.e.shape:
        raise ValueError("D and F must be N x K")
    if not np.isin(D, (0, 1)).all():
        problems.append(ConstraintViolation("C1", "D has non-binary entries"))
    per_row = (D * inst.e).sum(axis=1)
    if (per_row > 1).any():
        n = int(np.argmax(per_row > 1))
        problems.append(ConstraintViolation("C2", f"task {n} assigned to {int(per_row[n])} servers"))
    slack = rtol * inst.F
    if (Fm < 0).any() or (Fm > inst.F + slack).any():
        problems.append(ConstraintViolation("C3", "allocation outside [0, F_k]"))
    col = Fm.sum(axis=0)
    if (col > inst.F + slack).any():
        k = int(np.argmax(col > inst.F + slack))
        problems.append(ConstraintViolation("C4", f"server {k} allocates {col[k]} > {inst.F[k]}"))
    return problems


def total_cost(D, F, inst: ProblemInstance) -> float:
    """Total response time, summed per task over edge and cloud terms."""
    problems = check_constraints(D, F, inst)
    if problems:
        raise problems[0]
    D = np.asarray(D)
    Fm = np.asarray(F, dtype=float)
    total = 0.0
    for n in range(inst.N):
        on_edge = 0
        for k in range(inst.K):
            if D[n, k] and inst.e[n, k]:
                f = Fm[n, k]
                if not f > 0:
                    raise ValueError(f"task {n} runs on server {k} with no allocated resource")
                total += inst.c[n] / f + inst.w[n] / inst.edge_rate[n, k]
                on_edge += 1
        total += (1 - on_edge) * inst.w[n] / inst.cloud_rate[n]
    return float(total)


def total_cost_regrouped(D, F, inst: ProblemInstance) -> float:
    """Same objective grouped by server sets N_k and the cloud set N_c."""
    D = np.asarray(D)
    Fm = np.asarray(F, dtype=float)
    eff = (D * inst.e).astype(bool)
    compute = sum(inst.c[n] / Fm[n, k] for k in range(inst.K) for n in np.flatnonzero(eff[:, k]))
    edge_tx = sum(inst.w[n] / inst.edge_rate[n, k] for k in range(inst.K) for n in np.flatnonzero(eff[:, k]))
    cloud = sum(inst.w[n] / inst.cloud_rate[n] for n in np.flatnonzero(~eff.any(axis=1)))
    return float(compute + edge_tx + cloud)
