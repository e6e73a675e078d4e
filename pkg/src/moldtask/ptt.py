"""Performance Trace Table: online per-task-type execution time model.

One table per task type. Row ``c`` holds one estimate (seconds) per width
valid in core ``c``'s cluster and is written only by tasks led by ``c``.
A zero estimate means the cell was never measured; searches visit such
cells before trusting any measured value.
"""
from __future__ import annotations

import csv
import io
from enum import Enum
from typing import Iterable, Sequence

from .errors import ContractViolation
from .topology import ExecutionPlace, Topology


class Objective(Enum):
    COST = "cost"   # estimate * width
    PERF = "perf"   # estimate


class PerfTraceTable:
    def __init__(self, topology: Topology, task_type: str = "", weight_old: int = 4,
                 weight_new: int = 1):
        if weight_old < 0 or weight_new < 1:
            raise ValueError("weights must satisfy weight_old >= 0, weight_new >= 1")
        self.topology = topology
        self.task_type = task_type
        self.weight_old = int(weight_old)
        self.weight_new = int(weight_new)
        # one dict per core row; cells exist for every width of the core's cluster
        self._rows: list[dict[int, float]] = [
            dict.fromkeys(topology.cluster_of(c).widths, 0.0)
            for c in range(topology.total_cores)]

    def _row(self, leader: int, width: int) -> dict[int, float]:
        if not 0 <= leader < len(self._rows) or width not in self._rows[leader]:
            raise ContractViolation(f"no PTT cell for (core={leader}, width={width})")
        return self._rows[leader]

    def update(self, leader: int, width: int, measured: float) -> float:
        if measured < 0:
            raise ContractViolation(f"negative measurement {measured}")
        row = self._row(leader, width)
        old = row[width]
        if old == 0.0:
            new = float(measured)
        else:
            new = (self.weight_old * old + self.weight_new * measured) / (self.weight_old + self.weight_new)
        row[width] = new
        return new

    def lookup(self, place: tuple[int, int]) -> float:
        leader, width = place
        return self._row(leader, width)[width]

    def cells(self) -> Iterable[tuple[int, int, float]]:
        for core, row in enumerate(self._rows):
            for width, est in row.items():
                yield core, width, est

    def argmin(self, domain: Sequence[tuple[int, int]], objective: Objective) -> ExecutionPlace:
        """Pick a place from ``domain``.

        Unmeasured cells win first, lowest ``(leader, width)`` first. Otherwise
        minimise ``estimate * width`` (COST) or ``estimate`` (PERF); ties go to
        the smaller width, then the smaller leader.
        """
        if not domain:
            raise ContractViolation("argmin over an empty domain")
        best = None
        best_key = None
        unexplored = None
        for place in domain:
            est = self.lookup(place)
            leader, width = place
            if est == 0.0:
                if unexplored is None or (leader, width) < unexplored:
                    unexplored = (leader, width)
                continue
            score = est * width if objective is Objective.COST else est
            key = (score, width, leader)
            if best_key is None or key < best_key:
                best, best_key = place, key
        if unexplored is not None:
            return ExecutionPlace(*unexplored)
        return ExecutionPlace(*best)

    def to_csv_rows(self) -> list[tuple]:
        return [(self.task_type, core, width, est * 1e6) for core, width, est in self.cells()]

    def __repr__(self):
        return f"PerfTraceTable({self.task_type!r}, {self.weight_old}:{self.weight_new})"


def dump_csv(tables: Iterable[PerfTraceTable], out=None) -> str:
    """Write ``task_type,core,width,estimate_us`` rows; returns the text."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["task_type", "core", "width", "estimate_us"])
    for table in tables:
        for ttype, core, width, est_us in table.to_csv_rows():
            w.writerow([ttype, core, width, f"{est_us:.6g}"])
    text = buf.getvalue()
    if out is not None:
        out.write(text)
    return text


class PttRegistry(dict):
    """Lazily creates one table per task type."""

    def __init__(self, topology: Topology, weight_old: int = 4, weight_new: int = 1):
        super().__init__()
        self.topology = topology
        self.weight_old = weight_old
        self.weight_new = weight_new

    def __missing__(self, task_type):
        table = PerfTraceTable(self.topology, task_type, self.weight_old, self.weight_new)
        self[task_type] = table
        return table
