"""Placement policies: random work stealing, fixed- and dynamic-asymmetry
schedulers, each with and without moldability.

Low-priority tasks under moldable policies get a *local* search (own core
fixed, width varies, minimise estimate*width). High-priority tasks under the
dynamic policies get a *global* search over every place.
"""
from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass
from enum import Enum, IntEnum

from .errors import ContractViolation
from .ptt import Objective, PerfTraceTable
from .topology import ExecutionPlace, Topology, local_domain


class Priority(IntEnum):
    LOW = 0
    HIGH = 1


class PolicyKind(Enum):
    RWS = "rws"
    RWSM_C = "rwsm-c"
    FA = "fa"
    FAM_C = "fam-c"
    DA = "da"
    DAM_C = "dam-c"
    DAM_P = "dam-p"


POLICY_NAMES = tuple(k.value for k in PolicyKind)


class Search(Enum):
    NONE = "none"
    LOCAL = "local"
    GLOBAL = "global"


@dataclass(frozen=True)
class Policy:
    kind: PolicyKind
    fast_cluster: int | None = None

    def __post_init__(self):
        if self.kind in (PolicyKind.FA, PolicyKind.FAM_C) and self.fast_cluster is None:
            raise ContractViolation(f"{self.name} needs a fast cluster")

    @classmethod
    def from_name(cls, name: str, fast_cluster: int | None = 0) -> "Policy":
        key = name.strip().lower().replace("_", "-")
        try:
            kind = PolicyKind(key)
        except ValueError:
            raise ValueError(f"unknown policy {name!r}; choose from {', '.join(POLICY_NAMES)}") from None
        if kind not in (PolicyKind.FA, PolicyKind.FAM_C):
            fast_cluster = None
        return cls(kind, fast_cluster)

    @property
    def name(self) -> str:
        return self.kind.value.upper()

    @property
    def priority_aware(self) -> bool:
        """High-priority tasks are placed at release and never stolen."""
        return self.kind not in (PolicyKind.RWS, PolicyKind.RWSM_C)

    @property
    def uses_ptt(self) -> bool:
        return self.kind not in (PolicyKind.RWS, PolicyKind.FA)


@dataclass(frozen=True)
class PlacementDecision:
    place: ExecutionPlace
    searched: Search


class Scheduler:
    """Maps ``(task type table, worker, priority)`` to an execution place.

    Stateless apart from the round-robin counter FA uses to spread
    high-priority tasks over the fast cluster.
    """

    def __init__(self, policy: Policy, topology: Topology):
        self.policy = policy
        self.topology = topology
        if policy.fast_cluster is not None:
            if not 0 <= policy.fast_cluster < len(topology.clusters):
                raise ContractViolation(f"fast cluster {policy.fast_cluster} not in topology")
            self._fast_cores = list(topology.clusters[policy.fast_cluster].cores)
            self._fast_places = topology.places_in_cluster(policy.fast_cluster)
        self._rr = itertools.count()
        self._rr_lock = threading.Lock()
        self._width1 = [p for p in topology.places if p.width == 1]

    def _local(self, ptt, worker) -> PlacementDecision:
        place = ptt.argmin(local_domain(self.topology, worker), Objective.COST)
        return PlacementDecision(place, Search.LOCAL)

    def decide(self, ptt: PerfTraceTable | None, worker: int, priority: Priority) -> PlacementDecision:
        self.topology.check_core(worker)
        kind = self.policy.kind
        high = priority is Priority.HIGH
        if kind is PolicyKind.RWS or (not high and kind in (PolicyKind.FA, PolicyKind.DA)):
            return PlacementDecision(ExecutionPlace(worker, 1), Search.NONE)
        if kind is PolicyKind.FA:
            with self._rr_lock:
                i = next(self._rr)
            return PlacementDecision(ExecutionPlace(self._fast_cores[i % len(self._fast_cores)], 1),
                                     Search.NONE)
        if ptt is None:
            raise ContractViolation(f"{self.policy.name} needs a performance trace table")
        if kind is PolicyKind.RWSM_C or not high:
            return self._local(ptt, worker)
        if kind is PolicyKind.FAM_C:
            return PlacementDecision(ptt.argmin(self._fast_places, Objective.COST), Search.GLOBAL)
        if kind is PolicyKind.DA:
            return PlacementDecision(ptt.argmin(self._width1, Objective.PERF), Search.GLOBAL)
        objective = Objective.COST if kind is PolicyKind.DAM_C else Objective.PERF
        return PlacementDecision(ptt.argmin(self.topology.places, objective), Search.GLOBAL)


def decide(policy: Policy, topo: Topology, ptt: PerfTraceTable | None, worker: int,
           priority: Priority) -> PlacementDecision:
    """One-shot decision; FA's round robin restarts on every call, so prefer
    a long-lived :class:`Scheduler` inside a runtime."""
    return Scheduler(policy, topo).decide(ptt, worker, priority)
