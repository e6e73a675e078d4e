"""Where do critical tasks end up when core 0 is shared with a co-runner?

Simulated TX2-like board: cores 0-1 are the fast pair, 2-5 the slower quad.
Core 0 runs four times slower for the whole run.
"""
from moldtask import Policy, build_synthetic, corun_profile, metrics, simulate, tx2_scenario
from moldtask.workloads import SyntheticDagSpec

config = tx2_scenario(corun_profile(core=0, slowdown=4.0))
dag = build_synthetic(SyntheticDagSpec(parallelism=2, total_tasks=2000))

print(f"{'policy':8} {'tasks/s':>8}  high-priority placement (after 100 warmup tasks)")
for name in ("rws", "fa", "da", "dam-c", "dam-p"):
    m = metrics(simulate(dag, Policy.from_name(name), config), warmup_tasks=100)
    total = sum(m.priority_distribution.values())
    top = sorted(m.priority_distribution.items(), key=lambda kv: -kv[1])[:3]
    where = ", ".join(f"{p} {n / total:.0%}" for p, n in top)
    print(f"{name:8} {m.throughput:8.3f}  {where}")

# FA keeps half its critical tasks on the slowed core; the dynamic
# schedulers notice the slowdown through the table and move them to core 1.
