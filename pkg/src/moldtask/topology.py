"""Machine model: clusters of cores, moldable widths and execution places.

A place ``(leader, width)`` names the contiguous cores
``leader .. leader + width - 1``. Places wider than one core start at an
offset (relative to the cluster's first core) that is a multiple of the
width, so a 4-core cluster with widths ``[1, 2, 4]`` has exactly seven places.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, NamedTuple

from .errors import ContractViolation, TopologyError


class ExecutionPlace(NamedTuple):
    leader: int
    width: int

    @property
    def members(self) -> range:
        return range(self.leader, self.leader + self.width)

    def __str__(self):
        return f"(C{self.leader},{self.width})"


@dataclass(frozen=True)
class Cluster:
    first_core: int
    size: int
    widths: tuple[int, ...] = (1,)
    speed_label: str = ""

    @property
    def cores(self) -> range:
        return range(self.first_core, self.first_core + self.size)

    def __contains__(self, core):
        return self.first_core <= core < self.first_core + self.size


@dataclass(frozen=True)
class Topology:
    clusters: tuple[Cluster, ...]
    total_cores: int = field(init=False)

    def __post_init__(self):
        clusters = tuple(self.clusters)
        object.__setattr__(self, "clusters", clusters)
        if not clusters:
            raise TopologyError("topology needs at least one cluster")
        expected = 0
        for i, cl in enumerate(clusters):
            if cl.first_core != expected:
                raise TopologyError(
                    f"cluster {i}: first_core={cl.first_core}, expected {expected} "
                    "(clusters must tile the core ids contiguously)")
            if cl.size < 1:
                raise TopologyError(f"cluster {i}: size must be >= 1")
            ws = list(cl.widths)
            if 1 not in ws:
                raise TopologyError(f"cluster {i}: width 1 must be valid")
            if ws != sorted(set(ws)):
                raise TopologyError(f"cluster {i}: widths must be ascending and unique")
            if ws[-1] > cl.size:
                raise TopologyError(f"cluster {i}: width {ws[-1]} exceeds cluster size {cl.size}")
            expected += cl.size
        object.__setattr__(self, "total_cores", expected)

    @classmethod
    def from_dict(cls, data: dict) -> "Topology":
        try:
            raw = data["clusters"]
        except (KeyError, TypeError):
            raise TopologyError("topology config needs a 'clusters' list") from None
        clusters = []
        for i, c in enumerate(raw):
            try:
                clusters.append(Cluster(first_core=int(c["first_core"]), size=int(c["size"]),
                                        widths=tuple(int(w) for w in c.get("widths", [1])),
                                        speed_label=str(c.get("label", ""))))
            except (KeyError, TypeError, ValueError) as exc:
                raise TopologyError(f"cluster {i}: malformed entry ({exc})") from None
        return cls(tuple(clusters))

    @classmethod
    def from_json(cls, path: str | Path) -> "Topology":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return {"clusters": [{"first_core": c.first_core, "size": c.size,
                              "widths": list(c.widths), "label": c.speed_label}
                             for c in self.clusters]}

    @classmethod
    def symmetric(cls, cores: int, widths: Iterable[int] | None = None, label="") -> "Topology":
        if widths is None:
            widths = [w for w in (1, 2, 4, 8, 16, 32, 64) if w <= cores]
        return cls((Cluster(0, cores, tuple(widths), label),))

    @cached_property
    def _cluster_of(self) -> tuple[int, ...]:
        return tuple(i for i, cl in enumerate(self.clusters) for _ in cl.cores)

    def cluster_index(self, core: int) -> int:
        self.check_core(core)
        return self._cluster_of[core]

    def cluster_of(self, core: int) -> Cluster:
        return self.clusters[self.cluster_index(core)]

    def check_core(self, core: int) -> None:
        if not 0 <= core < self.total_cores:
            raise ContractViolation(f"core {core} outside 0..{self.total_cores - 1}")

    def is_valid(self, place: tuple[int, int]) -> bool:
        leader, width = place
        if not 0 <= leader < self.total_cores:
            return False
        cl = self.clusters[self._cluster_of[leader]]
        return (width in cl.widths and (leader - cl.first_core) % width == 0
                and leader + width <= cl.first_core + cl.size)

    def check_place(self, place: tuple[int, int]) -> ExecutionPlace:
        if not self.is_valid(place):
            raise ContractViolation(f"{tuple(place)} is not a valid execution place")
        return ExecutionPlace(*place)

    @cached_property
    def places(self) -> tuple[ExecutionPlace, ...]:
        out = []
        for cl in self.clusters:
            for c in cl.cores:
                for w in cl.widths:
                    if (c - cl.first_core) % w == 0 and c + w <= cl.first_core + cl.size:
                        out.append(ExecutionPlace(c, w))
        return tuple(sorted(out))

    def places_in_cluster(self, index: int) -> list[ExecutionPlace]:
        cl = self.clusters[index]
        return [p for p in self.places if p.leader in cl]


def valid_places(topo: Topology) -> list[ExecutionPlace]:
    """Every legal place, in ascending ``(leader, width)`` order."""
    return list(topo.places)


def local_domain(topo: Topology, core: int) -> list[ExecutionPlace]:
    """Places of ``core``'s cluster whose member set contains ``core``.

    This is the low-priority search space: the core (and hence its cluster)
    stays fixed and only the width varies. For a non-leader core the wider
    entries are led by another core of the same aligned block.
    """
    topo.check_core(core)
    return [p for p in topo.places if p.leader <= core < p.leader + p.width]


def tx2_like() -> Topology:
    """Two fast cores with widths 1,2 followed by four slower cores with widths 1,2,4."""
    return Topology((Cluster(0, 2, (1, 2), "fast"), Cluster(2, 4, (1, 2, 4), "slow")))
