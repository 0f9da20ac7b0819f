"""M-of-N selection policies: index ranking, slack/workload dominance
ordering, and the classical deadline heuristics.

All selections are pure functions of the per-user keys and deterministic:
every tie breaks toward the smaller user index, and idle users rank after
all users holding a task under every criterion.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .dynamics import ActionVector

__all__ = [
    "PolicyKind",
    "UserKeys",
    "PriorityDag",
    "select",
    "build_stlw_dag",
    "kahn_topo_sort",
]


class PolicyKind(Enum):
    """Selection rule used by the scheduler each slot."""

    WI = "wi"
    STLW_WI = "stlw-wi"
    EDF = "edf"
    LST = "lst"
    GREEDY = "greedy"

    @classmethod
    def parse(cls, name: str) -> "PolicyKind":
        try:
            return cls(name.strip().lower())
        except ValueError:
            valid = ", ".join(p.value for p in cls)
            raise ValueError(f"unknown policy {name!r}; expected one of: {valid}") from None


@dataclass(frozen=True)
class UserKeys:
    """Per-user ranking keys computed by the caller for one slot.

    ``slack`` is exact (rational) and None for idle users; ``tau`` is None
    for idle users.  ``greedy_gain`` is the immediate advantage of acting,
    reward(s, 1) - reward(s, 0).  ``capacity`` is the user's per-slot
    offload capacity, used to classify states (a task is a lost cause once
    backlog exceeds capacity * tau).
    """

    user: int
    idle: bool
    tau: Optional[int]
    backlog: int
    slack: Optional[Fraction]
    wi: float
    greedy_gain: float
    capacity: int = 1

    @property
    def has_work(self) -> bool:
        return not self.idle and self.backlog > 0

    @property
    def lost_cause(self) -> bool:
        """True when the deadline cannot be met even with service every slot."""
        return self.has_work and self.backlog > self.capacity * self.tau

    @property
    def index_flat(self) -> bool:
        """True in the comfortable regime where the index equals the saving
        and carries no urgency information (one spare slot or more)."""
        return self.has_work and self.backlog <= self.capacity * (self.tau - 1) + 1


@dataclass
class PriorityDag:
    """Dominance DAG over users holding a task.

    ``edge[m, n]`` means user (row) m dominates user (column) n: no longer
    slack and no more backlog, at least one strictly smaller.  The relation
    is a strict partial order, so the graph is acyclic by construction.
    """

    users: np.ndarray  # user indices, aligned with matrix rows
    wi: np.ndarray
    edge: np.ndarray  # bool (n, n)
    indegree: np.ndarray

    def edges(self) -> list[tuple[int, int]]:
        rows, cols = np.nonzero(self.edge)
        return [(int(self.users[r]), int(self.users[c])) for r, c in zip(rows, cols)]


def build_stlw_dag(keys: Sequence[UserKeys], scope_flat_index: bool = True) -> PriorityDag:
    """Pairwise dominance graph for the active users in ``keys``.

    Idle users must be excluded by the caller (they carry no slack).
    Slack comparisons are exact: tau - backlog/capacity is compared via
    integer cross-multiplication, never floats.

    With ``scope_flat_index`` (the default used by the scheduler),
    dominance edges are kept only between users in the flat-index regime -
    the states the index ranks purely by energy saving and therefore
    cannot distinguish by urgency, which is the gap the rule exists to
    close.  Applied to the whole population, the literal rule backfires:
    finished tasks and lost causes (shortest slack of all) capture server
    slots through the graph, and low-index dominators drag their
    high-index victims below the selection cut.  Both effects measurably
    collapse completion under load.  Pass ``scope_flat_index=False`` for
    the unrestricted relation.
    """
    active = [k for k in keys if not k.idle]
    n = len(active)
    users = np.array([k.user for k in active], dtype=np.int64)
    wi = np.array([k.wi for k in active], dtype=np.float64)
    if n == 0:
        return PriorityDag(users=users, wi=wi, edge=np.zeros((0, 0), bool), indegree=np.zeros(0, np.int64))

    num = np.array([k.slack.numerator for k in active], dtype=np.int64)
    den = np.array([k.slack.denominator for k in active], dtype=np.int64)
    backlog = np.array([k.backlog for k in active], dtype=np.int64)

    # slack_m <= slack_n  <=>  num_m * den_n <= num_n * den_m (denominators > 0)
    cross_m = num[:, None] * den[None, :]
    cross_n = num[None, :] * den[:, None]
    slack_le = cross_m <= cross_n
    slack_lt = cross_m < cross_n
    b_le = backlog[:, None] <= backlog[None, :]
    b_lt = backlog[:, None] < backlog[None, :]
    edge = slack_le & b_le & (slack_lt | b_lt)
    if scope_flat_index:
        flat = np.array([k.index_flat for k in active], dtype=bool)
        edge = edge & flat[:, None] & flat[None, :]
    else:
        # a user with nothing left to offload never takes priority
        edge = edge & (backlog[:, None] > 0)
    np.fill_diagonal(edge, False)
    return PriorityDag(users=users, wi=wi, edge=edge, indegree=edge.sum(axis=0).astype(np.int64))


def kahn_topo_sort(dag: PriorityDag) -> list[int]:
    """Topological order, always popping the zero-indegree vertex with the
    largest index value (ties: smallest user id).

    Raises RuntimeError if vertices remain with positive indegree, which
    would mean the dominance relation was not a partial order.
    """
    n = len(dag.users)
    indegree = dag.indegree.copy()
    heap = [(-dag.wi[v], int(dag.users[v]), v) for v in range(n) if indegree[v] == 0]
    heapq.heapify(heap)
    order: list[int] = []
    while heap:
        _, user, v = heapq.heappop(heap)
        order.append(user)
        for w in np.nonzero(dag.edge[v])[0]:
            indegree[w] -= 1
            if indegree[w] == 0:
                heapq.heappush(heap, (-dag.wi[w], int(dag.users[w]), int(w)))
    if len(order) != n:
        raise RuntimeError("dominance relation not a partial order (cycle found)")
    return order


def _ranked(keys: Sequence[UserKeys], kind: PolicyKind) -> list[int]:
    """Full priority order for one slot under the given policy.

    Users with nothing to offload (idle, or holding a task with zero
    backlog) gain nothing from a server slot, so they rank after every
    user with work under all criteria; idle users last of all.  Least
    slack ranks lost causes (negative slack, deadline unmeetable at full
    service) after every task that can still finish: slack is itself a
    feasibility measure, and sorting negative slack first would funnel
    all capacity into unsalvageable tasks the moment the system is
    loaded.  Earliest-deadline stays classic (deadline proximity only,
    overload degradation and all), and the index policies need no guard
    because the index prices lost causes.
    """
    if kind is PolicyKind.STLW_WI:
        workers = [k for k in keys if k.has_work]
        order = kahn_topo_sort(build_stlw_dag(workers))
        order.extend(sorted(k.user for k in keys if not k.idle and k.backlog == 0))
        order.extend(sorted(k.user for k in keys if k.idle))
        return order

    guard_lost = kind is PolicyKind.LST

    def sort_key(k: UserKeys):
        if kind is PolicyKind.EDF:
            crit = k.tau if not k.idle else None
        elif kind is PolicyKind.LST:
            crit = k.slack if not k.idle else None
        elif kind is PolicyKind.GREEDY:
            crit = -k.greedy_gain
        elif kind is PolicyKind.WI:
            crit = -k.wi
        else:  # pragma: no cover - exhaustive enum
            raise ValueError(kind)
        if k.idle:
            return (4, 0, k.user)
        if k.backlog == 0:
            return (3, 0, k.user)
        if guard_lost and k.lost_cause:
            return (1, crit, k.user)
        return (0, crit, k.user)

    return [k.user for k in sorted(keys, key=sort_key)]


def select(kind: PolicyKind, keys: Sequence[UserKeys], num_servers: int) -> ActionVector:
    """Pick exactly ``num_servers`` users to offload this slot."""
    if num_servers > len(keys):
        raise ValueError("cannot select more users than exist")
    order = _ranked(keys, kind)
    return ActionVector.of(order[:num_servers])
