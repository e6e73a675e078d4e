"""How fast must the table react? A DVFS square wave on the fast pair.

Cores 0-1 drop to 345/2035 of their speed for half of every period. The
table smooths each new sample 4:1 against the old estimate, so it needs a
number of fresh samples per place before it trusts the new speed. With a
short period the estimates lag the phase and the fixed-asymmetry FA policy
wins; once the period is long enough, the adaptive policies pull ahead.
Periods are in units of one critical task on a fast core.
"""
from moldtask import Policy, build_synthetic, dvfs_profile, metrics, simulate, tx2_scenario
from moldtask.workloads import SyntheticDagSpec

names = ("rws", "fa", "da", "dam-c", "dam-p")
for p in (2, 3):
    dag = build_synthetic(SyntheticDagSpec(parallelism=p, total_tasks=4000))
    print(f"\nP={p}  period  " + "  ".join(f"{n:>6}" for n in names))
    for period in (20, 40, 80, 160, 320, 640):
        config = tx2_scenario(dvfs_profile(period, 0.5, cores=(0, 1)))
        thr = [metrics(simulate(dag, Policy.from_name(n), config)).throughput for n in names]
        print(f"     {period:>7}  " + "  ".join(f"{t:6.3f}" for t in thr))
