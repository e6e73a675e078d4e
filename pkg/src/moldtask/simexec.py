"""Deterministic discrete-event executor over virtual time.

Drives :class:`~moldtask.runtime.RuntimeCore` exactly as the threaded
executor does, but member shares take ``base_time(type, cluster, width)``
seconds of work, stretched by the executing core's speed profile.
"""
from __future__ import annotations

import dataclasses
import heapq
import json
import random
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

from .errors import SimConfigError, StuckDagError
from .interference import InterferenceSpec, SpeedProfile
from .ptt import PttRegistry
from .runtime import Dag, RuntimeCore, Trace
from .scheduler import Policy, Priority
from .topology import ExecutionPlace, Topology, tx2_like

EPS = 1e-12


@dataclass
class SimConfig:
    topology: Topology
    base_time: dict[tuple[str, int, int], float]
    profile: SpeedProfile = field(default_factory=SpeedProfile)
    seed: int = 0
    steal_latency: float = 0.0
    weights: tuple[int, int] = (4, 1)
    measure: str = "leader"

    def to_dict(self) -> dict:
        rows = [{"type": t, "cluster": cl, "width": w, "seconds": s}
                for (t, cl, w), s in sorted(self.base_time.items())]
        return {"topology": self.topology.to_dict(), "base_times": rows, "seed": self.seed,
                "steal_latency": self.steal_latency, "weights": list(self.weights),
                "measure": self.measure}

    def with_profile(self, profile: SpeedProfile) -> "SimConfig":
        return dataclasses.replace(self, profile=profile)

    def service_time(self, task_type: str, place: ExecutionPlace) -> float:
        key = (task_type, self.topology.cluster_index(place.leader), place.width)
        try:
            return self.base_time[key]
        except KeyError:
            raise SimConfigError(f"no base time for task type {task_type!r} at place "
                                 f"{tuple(place)} (cluster {key[1]}, width {key[2]})") from None

    def check_covers(self, task_types) -> None:
        for ttype in sorted(task_types):
            for place in self.topology.places:
                self.service_time(ttype, place)

    @classmethod
    def from_dict(cls, data: dict) -> "SimConfig":
        topo = Topology.from_dict(data["topology"])
        base = {}
        for i, row in enumerate(data.get("base_times", [])):
            try:
                base[(str(row["type"]), int(row["cluster"]), int(row["width"]))] = float(row["seconds"])
            except (KeyError, ValueError, TypeError) as exc:
                raise SimConfigError(f"base_times[{i}]: malformed entry ({exc})") from None
        interference = InterferenceSpec.from_dict(data.get("interference"))
        measure = data.get("measure", "leader")
        if measure not in ("leader", "task"):
            raise SimConfigError(f"measure must be 'leader' or 'task', got {measure!r}")
        return cls(topo, base, interference.to_profile(), int(data.get("seed", 0)),
                   float(data.get("steal_latency", 0.0)), tuple(data.get("weights", (4, 1))),
                   measure)

    @classmethod
    def from_json(cls, path) -> "SimConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


# Relative service times for a TX2-like board: the two-core cluster is twice
# as fast at width 1; the four-core cluster scales poorly to width 4.
TX2_BASE_TIMES = {
    "matmul": {0: {1: 1.0, 2: 0.7}, 1: {1: 2.0, 2: 1.4, 4: 1.1}},
    "copy": {0: {1: 1.0, 2: 0.8}, 1: {1: 1.6, 2: 1.2, 4: 1.05}},
    "stencil": {0: {1: 1.0, 2: 0.65}, 1: {1: 1.8, 2: 1.1, 4: 0.9}},
}


def tx2_scenario(profile: SpeedProfile | None = None, seed: int = 0) -> SimConfig:
    base = {(k, cl, w): s for k, per in TX2_BASE_TIMES.items()
            for cl, ws in per.items() for w, s in ws.items()}
    return SimConfig(tx2_like(), base, profile or SpeedProfile(), seed)


def simulate(dag: Dag, policy: Policy, config: SimConfig, ptts: PttRegistry | None = None) -> Trace:
    """Run ``dag`` to completion in virtual time; a pure function of its inputs."""
    topo = config.topology
    config.check_covers(dag.task_types)
    if ptts is None:
        ptts = PttRegistry(topo, *config.weights)
    core = RuntimeCore(topo, policy, ptts, config.measure)
    rng = random.Random(config.seed)
    profile = config.profile
    heap: list = []
    seq = 0
    idle = set(range(topo.total_cores))
    samples = []

    def start_member(c, item, t):
        nonlocal seq
        task, member = item
        work = config.service_time(task.task_type, task.assigned_place)
        end = profile.finish_time(c, t, work)
        heapq.heappush(heap, (end, task.id, c, seq, "done", task, member, t))
        seq += 1
        idle.discard(c)

    def step(c, t):
        nonlocal seq
        if config.steal_latency <= 0:
            item = core.next_member(c, rng)
        elif core.aq[c]:
            item = core.aq[c].popleft()
        else:
            task = core.pop_local(c)
            if task is None:
                task = core.steal(c, rng)
                if task is None:
                    return False
                heapq.heappush(heap, (t + config.steal_latency, task.id, c, seq, "stolen", task, -1, t))
                seq += 1
                idle.discard(c)
                return True
            core.dispatch(task, c)
            item = core.aq[c].popleft()
        if item is None:
            return False
        start_member(c, item, t)
        return True

    def activate(t):
        progress = True
        while progress:
            progress = False
            order = sorted(idle)
            rng.shuffle(order)
            for c in order:
                if c in idle and step(c, t):
                    progress = True
        wsq, aq = core.queued()
        samples.append((t, wsq, aq, len(idle)))

    run = core.spawn(dag)
    activate(0.0)
    makespan = 0.0
    while heap:
        first = now = heap[0][0]
        # completions within EPS of each other form one instant; new work
        # starts at the latest of them so no successor precedes its cause
        while heap and heap[0][0] <= first + EPS:
            end, _, c, _, kind, task, member, started = heapq.heappop(heap)
            now = max(now, end)
            if kind == "stolen":
                core.dispatch(task, c)
                start_member(c, core.aq[c].popleft(), end)
                continue
            core.finish_member(task, member, c, started, end - started, end)
            makespan = max(makespan, end)
            idle.add(c)
        activate(now)
    if run.unfinished:
        raise StuckDagError(t.id for t in dag.tasks if t.pending_deps > 0)
    trace = run.trace()
    trace.makespan = makespan
    trace.samples = samples
    return trace


@dataclass
class Metrics:
    throughput: float
    makespan: float
    tasks: int
    priority_distribution: dict[ExecutionPlace, int]
    per_core_worktime: dict[int, float]
    # the same sums in exact rational arithmetic
    exact_worktime: dict[int, Fraction] = field(default_factory=dict)

    def priority_share(self, pred) -> float:
        total = sum(self.priority_distribution.values())
        if not total:
            return 0.0
        return sum(n for p, n in self.priority_distribution.items() if pred(p)) / total


def metrics(trace: Trace, warmup_tasks: int = 0) -> Metrics:
    """Throughput over the whole run; the priority distribution skips the
    first ``warmup_tasks`` events in start order."""
    if not trace.events or trace.makespan <= 0:
        return Metrics(0.0, 0.0, len(trace.events), {}, {})
    dist = Counter()
    for e in trace.sorted_events()[warmup_tasks:]:
        if e.priority is Priority.HIGH:
            dist[e.place] += 1
    work = defaultdict(Fraction)
    for e in trace.events:
        d = Fraction(e.duration)
        for c in e.place.members:
            work[c] += d
    exact = dict(sorted(work.items()))
    n = len(trace.events)
    return Metrics(n / trace.makespan, trace.makespan, n, dict(sorted(dist.items())),
                   {c: float(w) for c, w in exact.items()}, exact)
