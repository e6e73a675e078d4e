"""Experiment matrix runner and command-line entry point.

One run is a (policy, parallelism, tile, weight ratio, repetition) point.
Each experiment writes three CSV tables to the output directory:

``throughput.csv``
    executor, policy, kernel, parallelism, tasks, tile, weight_new,
    interference, rep, seed, pinned, makespan_s, throughput
``distribution.csv``
    policy, parallelism, tile, weight_new, rep, leader, width, count
    (high-priority tasks per execution place)
``worktime.csv``
    policy, parallelism, tile, weight_new, rep, core, worktime_s

Floats are printed with 6 significant digits so simulator output diffs
cleanly. ``weight_new`` is the weight of a new measurement in the PTT
update, out of 5 (the default table uses 1).
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .interference import InterferenceKind, InterferenceSpec, launch_corun
from .ptt import PttRegistry, dump_csv
from .runtime import Trace, ThreadedRuntime
from .scheduler import POLICY_NAMES, Policy
from .simexec import SimConfig, metrics, simulate, tx2_scenario
from .topology import Topology, tx2_like
from .workloads import CI_TASKS, CI_TILE, Kernel, SyntheticDagSpec, build_synthetic

log = logging.getLogger(__name__)

SEED_ENV = "MOLDTASK_SEED"
WEIGHT_DENOM = 5

THROUGHPUT_HEADER = ["executor", "policy", "kernel", "parallelism", "tasks", "tile", "weight_new",
                     "interference", "rep", "seed", "pinned", "makespan_s", "throughput"]
DISTRIBUTION_HEADER = ["policy", "parallelism", "tile", "weight_new", "rep", "leader", "width",
                       "count"]
WORKTIME_HEADER = ["policy", "parallelism", "tile", "weight_new", "rep", "core", "worktime_s"]


def fmt(x: float) -> str:
    return f"{x:.6g}"


@dataclass
class ExperimentSpec:
    executor: str
    policies: list[str]
    out: Path
    kernel: Kernel = Kernel.MATMUL
    parallelism: list[int] = field(default_factory=lambda: [2])
    tasks: int = CI_TASKS
    tiles: list[int] = field(default_factory=lambda: [CI_TILE])
    weight_new: list[int] = field(default_factory=lambda: [1])
    interference: InterferenceSpec = field(default_factory=InterferenceSpec)
    interference_text: str = "none"
    reps: int = 1
    seed: int = 0
    topology: Topology | None = None
    sim_config: SimConfig | None = None
    warmup: int = 0
    dump_traces: bool = False

    def __post_init__(self):
        self.out = Path(self.out)
        self.kernel = Kernel(self.kernel)
        if self.executor not in ("threads", "sim"):
            raise ValueError(f"executor must be 'threads' or 'sim', got {self.executor!r}")
        if self.reps < 1:
            raise ValueError("reps must be >= 1")
        if not self.policies:
            raise ValueError("at least one policy is required")
        for name in self.policies:
            Policy.from_name(name)
        if self.executor == "sim" and self.sim_config is None:
            raise ValueError("the sim executor needs a SimConfig")
        for w in self.weight_new:
            if not 1 <= w < WEIGHT_DENOM:
                raise ValueError(f"weight_new must lie in 1..{WEIGHT_DENOM - 1}, got {w}")
        if any(p < 1 for p in self.parallelism):
            raise ValueError("parallelism values must be >= 1")

    def resolved_topology(self) -> Topology:
        if self.executor == "sim":
            return self.sim_config.topology
        return self.topology or tx2_like()


@dataclass
class RunResult:
    policy: str
    parallelism: int
    tile: int
    weight_new: int
    rep: int
    seed: int
    trace: Trace
    ptts: PttRegistry
    pinned: bool | None


def _one_run(spec: ExperimentSpec, policy: Policy, p: int, tile: int, wnew: int,
             rep: int) -> RunResult:
    seed = spec.seed + rep
    topo = spec.resolved_topology()
    weights = (WEIGHT_DENOM - wnew, wnew)
    ptts = PttRegistry(topo, *weights)
    dag_spec = SyntheticDagSpec(spec.kernel, p, spec.tasks, tile, seed)
    if spec.executor == "sim":
        config = spec.sim_config
        config = SimConfig(topo, config.base_time, config.profile, seed, config.steal_latency,
                           weights, config.measure)
        trace = simulate(build_synthetic(dag_spec), policy, config, ptts)
        pinned = None
    else:
        dag = build_synthetic(dag_spec, kernels=True)
        corun = None
        if spec.interference.kind is not InterferenceKind.NONE:
            corun = launch_corun(spec.interference, tile, strict=False)
        try:
            rt = ThreadedRuntime(topo, policy, ptts=ptts, seed=seed, pin=True)
            trace = rt.run(dag)
        finally:
            if corun is not None:
                corun.stop()
        pinned = rt.pinned and (corun is None or corun.pinned)
    return RunResult(policy.kind.value, p, tile, wnew, rep, seed, trace, ptts, pinned)


def iter_runs(spec: ExperimentSpec):
    for rep in range(spec.reps):
        for tile in spec.tiles:
            for wnew in spec.weight_new:
                for p in spec.parallelism:
                    for name in spec.policies:
                        policy = Policy.from_name(name)
                        log.info("run %s P=%d tile=%d w=%d/5 rep=%d", policy.name, p, tile,
                                 wnew, rep)
                        yield _one_run(spec, policy, p, tile, wnew, rep)


def run_experiment(spec: ExperimentSpec) -> dict[str, Path]:
    """Run the whole matrix and write the three result tables; returns their paths."""
    spec.out.mkdir(parents=True, exist_ok=True)
    paths = {name: spec.out / f"{name}.csv" for name in ("throughput", "distribution", "worktime")}
    with open(paths["throughput"], "w", newline="") as ft, \
            open(paths["distribution"], "w", newline="") as fd, \
            open(paths["worktime"], "w", newline="") as fw:
        wt, wd, ww = (csv.writer(f, lineterminator="\n") for f in (ft, fd, fw))
        wt.writerow(THROUGHPUT_HEADER)
        wd.writerow(DISTRIBUTION_HEADER)
        ww.writerow(WORKTIME_HEADER)
        for r in iter_runs(spec):
            m = metrics(r.trace, spec.warmup)
            pinned = "" if r.pinned is None else str(r.pinned).lower()
            wt.writerow([spec.executor, r.policy, spec.kernel.value, r.parallelism, spec.tasks,
                         r.tile, r.weight_new, spec.interference_text, r.rep, r.seed, pinned,
                         fmt(m.makespan), fmt(m.throughput)])
            key = [r.policy, r.parallelism, r.tile, r.weight_new, r.rep]
            for place, n in m.priority_distribution.items():
                wd.writerow(key + [place.leader, place.width, n])
            for core, secs in m.per_core_worktime.items():
                ww.writerow(key + [core, fmt(secs)])
            if spec.dump_traces:
                stem = f"{r.policy}_p{r.parallelism}_t{r.tile}_w{r.weight_new}_r{r.rep}"
                tdir = spec.out / "traces"
                tdir.mkdir(exist_ok=True)
                (tdir / f"{stem}.csv").write_text(r.trace.to_csv(vtime=spec.executor == "sim"))
                (tdir / f"{stem}_ptt.csv").write_text(dump_csv(r.ptts.values()))
    return paths


def parse_range(text: str) -> list[int]:
    """``"4"``, ``"2..6"`` or ``"2,4,6"``."""
    out = []
    for part in text.split(","):
        part = part.strip()
        if ".." in part:
            a, b = part.split("..", 1)
            lo, hi = int(a), int(b)
            if hi < lo:
                raise ValueError(f"empty range {part!r}")
            out.extend(range(lo, hi + 1))
        elif part:
            out.append(int(part))
    if not out:
        raise ValueError("empty list")
    return out


def _int_list(text: str) -> list[int]:
    try:
        return parse_range(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _policies(text: str) -> list[str]:
    names = [n.strip() for n in text.split(",") if n.strip()]
    if not names:
        raise argparse.ArgumentTypeError(f"no policy given; choose from {', '.join(POLICY_NAMES)}")
    for n in names:
        try:
            Policy.from_name(n)
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from None
    return names


def _interference(text: str) -> str:
    try:
        InterferenceSpec.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None
    return text


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="moldtask",
                                     description="Moldable task scheduling experiments.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log each run")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run an experiment matrix and write CSV tables")
    run.add_argument("--executor", choices=("threads", "sim"), default="sim")
    run.add_argument("--policy", type=_policies, default=list(POLICY_NAMES),
                     help=f"comma list of {', '.join(POLICY_NAMES)} (default: all)")
    run.add_argument("--kernel", choices=[k.value for k in Kernel], default="matmul")
    run.add_argument("--parallelism", type=_int_list, default=[2], help="p, p..q or a comma list")
    run.add_argument("--tasks", type=int, default=CI_TASKS)
    run.add_argument("--tile", type=_int_list, default=[CI_TILE], help="tile side(s)")
    run.add_argument("--weight-new", type=_int_list, default=[1],
                     help="PTT weight of a new sample, out of 5 (e.g. 1..4 for a sweep)")
    run.add_argument("--interference", type=_interference, default="none",
                     help="none | corun:core=K,kernel=X | dvfs:period=S,duty=D,factor=F,cores=A-B")
    run.add_argument("--topology", type=Path, help="topology JSON (threads executor)")
    run.add_argument("--sim-config", type=Path,
                     help="simulator scenario JSON (default: built-in TX2-like table)")
    run.add_argument("--reps", type=int, default=1)
    run.add_argument("--seed", type=int, default=0, help=f"base seed; {SEED_ENV} overrides")
    run.add_argument("--warmup", type=int, default=0,
                     help="skip this many tasks before counting the priority distribution")
    run.add_argument("--dump-traces", action="store_true",
                     help="also write per-run trace and PTT CSVs under OUT/traces")
    run.add_argument("--out", type=Path, required=True)
    return parser


def spec_from_args(args: argparse.Namespace) -> ExperimentSpec:
    seed = args.seed
    if os.environ.get(SEED_ENV):
        seed = int(os.environ[SEED_ENV])
    interference = InterferenceSpec.parse(args.interference)
    topology = Topology.from_json(args.topology) if args.topology else None
    sim_config = None
    if args.executor == "sim":
        sim_config = SimConfig.from_json(args.sim_config) if args.sim_config else tx2_scenario()
        if topology is not None:
            sim_config = SimConfig(topology, sim_config.base_time, sim_config.profile,
                                   sim_config.seed, sim_config.steal_latency,
                                   sim_config.weights, sim_config.measure)
        if interference.kind is not InterferenceKind.NONE:
            sim_config = sim_config.with_profile(interference.to_profile())
    return ExperimentSpec(args.executor, args.policy, args.out, Kernel(args.kernel),
                          args.parallelism, args.tasks, args.tile, args.weight_new, interference,
                          args.interference, args.reps, seed, topology, sim_config, args.warmup,
                          args.dump_traces)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        spec = spec_from_args(args)
        paths = run_experiment(spec)
    except (ValueError, OSError) as exc:
        parser.exit(2, f"moldtask: error: {exc}\n")
    for p in paths.values():
        print(p)
    return 0


if __name__ == "__main__":
    sys.exit(main())
