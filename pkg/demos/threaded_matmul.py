"""Real threads, real kernels: a 500-task matmul DAG on every policy.

Workers are pinned when the OS allows it. On a small host the six
workers share fewer cores, so absolute numbers mean little; the point is
that every policy runs the same DAG to completion and learns a table.
"""
import sys

from moldtask import POLICY_NAMES, Policy, ThreadedRuntime, dump_csv, metrics, tx2_like
from moldtask.workloads import Kernel, SyntheticDagSpec, build_synthetic

topo = tx2_like()
for name in POLICY_NAMES:
    dag = build_synthetic(SyntheticDagSpec(Kernel.MATMUL, parallelism=4, total_tasks=500,
                                           tile=32), kernels=True)
    with ThreadedRuntime(topo, Policy.from_name(name), pin=True) as rt:
        trace = rt.spawn(dag).wait(timeout=60)
    widths = sorted({e.place.width for e in trace.events})
    print(f"{name:7} {metrics(trace).throughput:10.0f} tasks/s  widths used {widths}  "
          f"pinned={trace.pinned}")

print("\nlast table (DAM-P):")
dump_csv(rt.ptts.values(), sys.stdout)
