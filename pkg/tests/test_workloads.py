import numpy as np
import pytest

from moldtask.scheduler import Priority
from moldtask.workloads import (FULL_SCALE_SIZES, Kernel, KernelBuffers, SyntheticDagSpec,
                                build_synthetic, copy_rows, kernel_body, matmul_rows, row_block,
                                stencil_rows)


def test_layers_and_parallelism():
    dag = build_synthetic(SyntheticDagSpec(parallelism=4, total_tasks=12))
    assert len(dag) == 12
    assert dag.longest_path() == 3
    assert dag.parallelism() == 4


def test_chain_when_p_is_one():
    dag = build_synthetic(SyntheticDagSpec(parallelism=1, total_tasks=5))
    assert dag.longest_path() == 5 and dag.parallelism() == 1
    assert all(t.priority is Priority.HIGH for t in dag.tasks)


def test_partial_last_layer():
    spec = SyntheticDagSpec(parallelism=6, total_tasks=32000)
    assert spec.layers == 5334
    dag = build_synthetic(SyntheticDagSpec(parallelism=6, total_tasks=20))
    assert dag.longest_path() == 4
    assert [t.id for t in dag.tasks if t.priority is Priority.HIGH] == [5, 11, 17, 19]


def test_one_high_task_per_layer_gates_next_layer():
    p = 3
    dag = build_synthetic(SyntheticDagSpec(parallelism=p, total_tasks=30))
    preds = dag.predecessors()
    for layer in range(10):
        ids = range(layer * p, layer * p + p)
        highs = [i for i in ids if dag.tasks[i].priority is Priority.HIGH]
        assert highs == [layer * p + p - 1]
        for i in ids:
            assert preds[i] == ([] if layer == 0 else [layer * p - 1])
            if i not in highs:
                assert dag.tasks[i].successors == []


def test_spec_validation():
    with pytest.raises(ValueError):
        SyntheticDagSpec(parallelism=0)
    with pytest.raises(ValueError):
        SyntheticDagSpec(parallelism=4, total_tasks=3)
    with pytest.raises(ValueError):
        SyntheticDagSpec(tile=0)
    with pytest.raises(ValueError):
        SyntheticDagSpec(kernel="fft")
    assert SyntheticDagSpec(kernel="copy").kernel is Kernel.COPY


def test_full_scale_sizes():
    assert FULL_SCALE_SIZES["matmul"] == (64, 32000)
    assert FULL_SCALE_SIZES["copy"] == (1024, 10000)
    assert FULL_SCALE_SIZES["stencil"] == (1024, 20000)


@pytest.mark.parametrize("n,width", [(32, 1), (32, 3), (7, 4), (5, 4), (64, 2)])
def test_row_blocks_partition(n, width):
    blocks = [row_block(n, m, width) for m in range(width)]
    rows = [r for a, b in blocks for r in range(a, b)]
    assert rows == list(range(n))
    assert blocks[-1][1] - blocks[-1][0] >= n // width
    with pytest.raises(ValueError):
        row_block(n, width, width)


def test_matmul_identity():
    rng = np.random.default_rng(1)
    b = rng.standard_normal((8, 8))
    c = np.zeros_like(b)
    matmul_rows(np.eye(8), b, c, 0, 8)
    assert np.array_equal(c, b)


def test_matmul_matches_numpy():
    rng = np.random.default_rng(2)
    a, b = rng.standard_normal((16, 16)), rng.standard_normal((16, 16))
    c = np.zeros((16, 16))
    matmul_rows(a, b, c, 0, 16)
    assert np.allclose(c, a @ b)


def test_stencil_oracle():
    rng = np.random.default_rng(3)
    g = rng.standard_normal((6, 5))
    out = np.zeros_like(g)
    stencil_rows(g, out, 0, 6)
    want = g.copy()
    for i in range(1, 5):
        for j in range(1, 4):
            want[i, j] = 0.2 * (g[i, j] + g[i - 1, j] + g[i + 1, j] + g[i, j - 1] + g[i, j + 1])
    assert np.allclose(out, want)


def test_copy():
    src = np.arange(12.0).reshape(4, 3)
    dst = np.zeros_like(src)
    copy_rows(src, dst, 1, 3)
    assert np.array_equal(dst[1:3], src[1:3]) and not dst[0].any() and not dst[3].any()


@pytest.mark.parametrize("kernel", list(Kernel))
@pytest.mark.parametrize("n", [32, 33])
def test_kernels_width_invariant(kernel, n):
    results = {}
    for width in (1, 2, 4):
        buf = KernelBuffers(kernel, n, 1, seed=7)
        for m in reversed(range(width)):
            kernel_body(kernel, buf, 0, m, width)
        results[width] = buf.outputs[0].copy()
    assert np.array_equal(results[1], results[2])
    assert np.array_equal(results[1], results[4])


def test_buffers_budget_and_bodies():
    buf = KernelBuffers(Kernel.COPY, 1024, 10000)
    assert 1 <= buf.slots < 10000
    dag = build_synthetic(SyntheticDagSpec(kernel="matmul", parallelism=2, total_tasks=6, tile=8),
                          kernels=True)
    assert dag.buffers.slots == 6
    for t in dag.tasks:
        t.body(0, 1)
    a, b = dag.buffers.inputs[5]
    assert np.allclose(dag.buffers.outputs[5], a @ b)
