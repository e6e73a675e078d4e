"""Synthetic layered DAGs and the three kernel families.

Every layer holds ``P`` tasks of one kernel type. The last task of each
layer is high priority and is the only one with successors: finishing it
releases the whole next layer, so the critical path is the chain of
high-priority tasks and the DAG parallelism is ``P``.

Kernels split their tile by row blocks across the members of a place;
every output row is computed the same way whatever the split, so results
do not depend on the width a task ran with.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .runtime import Dag
from .scheduler import Priority

# per-task tile side and task count of the full-scale experiments
FULL_SCALE_SIZES = {"matmul": (64, 32000), "copy": (1024, 10000), "stencil": (1024, 20000)}
# scaled-down sizes for CI
CI_TILE, CI_TASKS = 32, 500

BUFFER_BUDGET = 256 * 2**20


class Kernel(Enum):
    MATMUL = "matmul"
    COPY = "copy"
    STENCIL = "stencil"


@dataclass(frozen=True)
class SyntheticDagSpec:
    kernel: Kernel = Kernel.MATMUL
    parallelism: int = 2
    total_tasks: int = CI_TASKS
    tile: int = CI_TILE
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kernel", Kernel(self.kernel))
        if self.parallelism < 1:
            raise ValueError("parallelism must be >= 1")
        if self.total_tasks < self.parallelism:
            raise ValueError("total_tasks must be >= parallelism")
        if self.tile < 1:
            raise ValueError("tile must be >= 1")

    @property
    def layers(self) -> int:
        return math.ceil(self.total_tasks / self.parallelism)


def row_block(n: int, member: int, width: int) -> tuple[int, int]:
    """Rows ``[r0, r1)`` owned by ``member``; the last member takes the remainder."""
    if not 0 <= member < width:
        raise ValueError(f"member {member} outside 0..{width - 1}")
    step = n // width
    r0 = member * step
    r1 = n if member == width - 1 else r0 + step
    return r0, r1


def matmul_rows(a, b, c, r0, r1):
    # one vector-matrix product per row: a row's result never depends on
    # how many rows share the call (blocked GEMM does not guarantee that)
    for i in range(r0, r1):
        np.dot(a[i], b, out=c[i])


def copy_rows(src, dst, r0, r1):
    dst[r0:r1] = src[r0:r1]


def stencil_rows(grid, out, r0, r1):
    """Jacobi 5-point average on rows ``[r0, r1)``; edges are copied through."""
    n = grid.shape[0]
    for edge in (0, n - 1):
        if r0 <= edge < r1:
            out[edge] = grid[edge]
    a, b = max(r0, 1), min(r1, n - 1)
    if a >= b:
        return
    out[a:b, 0] = grid[a:b, 0]
    out[a:b, -1] = grid[a:b, -1]
    out[a:b, 1:-1] = 0.2 * (grid[a:b, 1:-1] + grid[a - 1:b - 1, 1:-1] + grid[a + 1:b + 1, 1:-1]
                            + grid[a:b, :-2] + grid[a:b, 2:])


class KernelBuffers:
    """Pre-allocated operands, one slot per task (or a bounded ring of slots)."""

    def __init__(self, kernel: Kernel, n: int, slots: int, seed: int = 0):
        self.kernel = Kernel(kernel)
        self.n = n
        rng = np.random.default_rng(seed)
        nmat = 3 if self.kernel is Kernel.MATMUL else 2
        per_slot = nmat * n * n * 8
        self.slots = max(1, min(slots, BUFFER_BUDGET // per_slot))
        self.inputs = []
        self.outputs = []
        for _ in range(self.slots):
            if self.kernel is Kernel.MATMUL:
                self.inputs.append((rng.standard_normal((n, n)), rng.standard_normal((n, n))))
            else:
                self.inputs.append((rng.standard_normal((n, n)),))
            self.outputs.append(np.zeros((n, n)))

    def run(self, slot: int, member: int, width: int) -> None:
        kernel_body(self.kernel, self, slot, member, width)

    def body_for(self, task_index: int):
        slot = task_index % self.slots
        return lambda member, width: self.run(slot, member, width)


def kernel_body(kind: Kernel, buffers: KernelBuffers, slot: int, member: int, width: int) -> None:
    r0, r1 = row_block(buffers.n, member, width)
    ins, out = buffers.inputs[slot], buffers.outputs[slot]
    kind = Kernel(kind)
    if kind is Kernel.MATMUL:
        matmul_rows(ins[0], ins[1], out, r0, r1)
    elif kind is Kernel.COPY:
        copy_rows(ins[0], out, r0, r1)
    else:
        stencil_rows(ins[0], out, r0, r1)


def build_synthetic(spec: SyntheticDagSpec, kernels: bool = False) -> Dag:
    """Layered DAG with one high-priority task per layer gating the next layer.

    With ``kernels=True`` the tasks carry real kernel bodies over freshly
    allocated buffers (for the threaded executor); otherwise bodies are empty.
    """
    dag = Dag()
    ttype = spec.kernel.value
    buffers = KernelBuffers(spec.kernel, spec.tile, spec.total_tasks, spec.seed) if kernels else None
    dag.buffers = buffers
    prev_critical = None
    for layer in range(spec.layers):
        lo = layer * spec.parallelism
        hi = min(spec.total_tasks, lo + spec.parallelism)
        deps = () if prev_critical is None else (prev_critical,)
        for i in range(lo, hi):
            prio = Priority.HIGH if i == hi - 1 else Priority.LOW
            body = buffers.body_for(i) if buffers is not None else None
            dag.add(ttype, prio, body, deps)
        prev_critical = hi - 1
    return dag
