"""Task-DAG runtime with per-worker work-stealing and assembly queues.

Each worker owns a work-stealing queue (WSQ) of ready tasks and a FIFO
assembly queue (AQ) of ``(task, member index)`` entries. A worker drains its
AQ first, then pops its own WSQ (newest first), then tries to steal the
oldest stealable task from a random victim. Popping or stealing a task runs
the placement decision and pushes one AQ entry to every member core of the
chosen place. The leader (lowest core) times its own share and feeds the
performance table; the last member to finish releases the successors.

:class:`RuntimeCore` holds that logic without threads or clocks so the
threaded executor here and the virtual-time simulator drive the same code.
"""
from __future__ import annotations

import csv
import io
import logging
import os
import random
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from .errors import StuckDagError, TaskFailedError
from .ptt import PttRegistry
from .scheduler import Policy, Priority, Scheduler
from .topology import ExecutionPlace, Topology

log = logging.getLogger(__name__)

Body = Callable[[int, int], None]

TRACE_HEADER = ["task_id", "type", "priority", "leader", "width", "start_us", "duration_us"]


@dataclass(eq=False)
class TaskNode:
    id: int
    task_type: str
    priority: Priority = Priority.LOW
    body: Body | None = None
    successors: list[int] = field(default_factory=list)
    pending_deps: int = 0
    assigned_place: ExecutionPlace | None = None
    remaining_members: int = 0
    indegree: int = 0
    executed_on: list[int] = field(default_factory=list, repr=False)
    leader_start: float = 0.0
    _run: "Run | None" = field(default=None, repr=False)

    def reset(self):
        self.pending_deps = self.indegree
        self.assigned_place = None
        self.remaining_members = 0
        self.executed_on = []


class Dag:
    """A static task graph. Ids are dense, in insertion order."""

    def __init__(self):
        self.tasks: list[TaskNode] = []
        # kernel operands kept alive for the task bodies, if any
        self.buffers = None

    def add(self, task_type: str, priority: Priority = Priority.LOW, body: Body | None = None,
            deps: Iterable[int] = ()) -> int:
        tid = len(self.tasks)
        self.tasks.append(TaskNode(tid, task_type, Priority(priority), body))
        for d in deps:
            self.add_edge(d, tid)
        return tid

    def add_edge(self, src: int, dst: int) -> None:
        self.tasks[src].successors.append(dst)
        self.tasks[dst].indegree += 1

    def __len__(self):
        return len(self.tasks)

    def __iter__(self):
        return iter(self.tasks)

    @property
    def task_types(self) -> set[str]:
        return {t.task_type for t in self.tasks}

    def roots(self) -> list[TaskNode]:
        return [t for t in self.tasks if t.indegree == 0]

    def predecessors(self) -> list[list[int]]:
        preds = [[] for _ in self.tasks]
        for t in self.tasks:
            for s in t.successors:
                preds[s].append(t.id)
        return preds

    def longest_path(self) -> int:
        """Number of tasks on the longest dependency chain (0 for an empty DAG)."""
        depth = [1] * len(self.tasks)
        indeg = [t.indegree for t in self.tasks]
        ready = deque(t.id for t in self.tasks if indeg[t.id] == 0)
        seen = 0
        while ready:
            u = ready.popleft()
            seen += 1
            for s in self.tasks[u].successors:
                depth[s] = max(depth[s], depth[u] + 1)
                indeg[s] -= 1
                if indeg[s] == 0:
                    ready.append(s)
        if seen != len(self.tasks):
            raise ValueError("graph has a cycle")
        return max(depth, default=0)

    def parallelism(self) -> float:
        lp = self.longest_path()
        return len(self.tasks) / lp if lp else 0.0


@dataclass(frozen=True)
class TraceEvent:
    task_id: int
    task_type: str
    priority: Priority
    place: ExecutionPlace
    start: float
    duration: float
    leader: int

    @property
    def end(self) -> float:
        return self.start + self.duration


@dataclass
class Trace:
    events: list[TraceEvent]
    makespan: float
    decisions: dict[int, ExecutionPlace] = field(default_factory=dict)
    executed_on: dict[int, tuple[int, ...]] = field(default_factory=dict)
    finish_times: dict[int, float] = field(default_factory=dict)
    # (time, ready tasks in WSQs, AQ entries, idle workers); simulator only
    samples: list[tuple[float, int, int, int]] = field(default_factory=list)
    pinned: bool | None = None

    def sorted_events(self) -> list[TraceEvent]:
        return sorted(self.events, key=lambda e: (e.start, e.task_id))

    def to_csv(self, vtime: bool = False) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_HEADER + (["vtime"] if vtime else []))
        for e in self.sorted_events():
            row = [e.task_id, e.task_type, e.priority.name.lower(), e.leader, e.place.width,
                   f"{e.start * 1e6:.6g}", f"{e.duration * 1e6:.6g}"]
            if vtime:
                row.append(f"{self.finish_times.get(e.task_id, e.end):.6g}")
            w.writerow(row)
        return buf.getvalue()


class Run:
    """Book-keeping for one spawned DAG."""

    def __init__(self, dag: Dag):
        self.dag = dag
        self.unfinished = len(dag)
        self.events: list[TraceEvent] = []
        self.decisions: dict[int, ExecutionPlace] = {}
        self.finish_times: dict[int, float] = {}
        self.error: BaseException | None = None
        self.done = threading.Event()
        self.last_finish = 0.0
        self.epoch = 0.0
        if not dag.tasks:
            self.done.set()

    def trace(self) -> Trace:
        return Trace(list(self.events), self.last_finish, dict(self.decisions),
                     {t.id: tuple(t.executed_on) for t in self.dag.tasks},
                     dict(self.finish_times))


class RuntimeCore:
    """Queue and dispatch state shared by both executors; not thread-safe."""

    def __init__(self, topology: Topology, policy: Policy, ptts: PttRegistry | None = None,
                 measure: str = "leader"):
        if measure not in ("leader", "task"):
            raise ValueError("measure must be 'leader' or 'task'")
        self.measure = measure
        self.topology = topology
        self.policy = policy
        self.scheduler = Scheduler(policy, topology)
        self.ptts = ptts if ptts is not None else PttRegistry(topology)
        n = topology.total_cores
        self.wsq: list[deque[TaskNode]] = [deque() for _ in range(n)]
        self.aq: list[deque[tuple[TaskNode, int]]] = [deque() for _ in range(n)]
        self.runs: list[Run] = []
        self._rr = 0

    @property
    def workers(self) -> int:
        return self.topology.total_cores

    # -- release / dispatch -------------------------------------------------

    def spawn(self, dag: Dag, core: int | None = None) -> Run:
        """Reset ``dag`` and release its roots.

        From inside a worker, pass ``core``: roots land on that worker's
        queue. From outside, roots are dealt round-robin over workers.
        """
        if any(t._run is not None and not t._run.done.is_set() for t in dag.tasks):
            raise RuntimeError("this DAG is already running; wait for it before respawning")
        run = Run(dag)
        for t in dag.tasks:
            t.reset()
            t._run = run
        self.runs.append(run)
        for t in dag.roots():
            if core is None:
                target = self._rr % self.workers
                self._rr += 1
            else:
                target = core
            self.release(t, target)
        return run

    def _pinned(self, task: TaskNode) -> bool:
        return self.policy.priority_aware and task.priority is Priority.HIGH

    def release(self, task: TaskNode, core: int) -> None:
        if self._pinned(task):
            # high-priority placement is final at release; the task waits on
            # the chosen leader's queue and is never stolen
            d = self.scheduler.decide(self.ptts[task.task_type], core, task.priority)
            task.assigned_place = d.place
            task._run.decisions[task.id] = d.place
            self.wsq[d.place.leader].append(task)
        else:
            self.wsq[core].append(task)

    def dispatch(self, task: TaskNode, worker: int) -> ExecutionPlace:
        if task.assigned_place is None:
            d = self.scheduler.decide(self.ptts[task.task_type], worker, task.priority)
            task.assigned_place = d.place
            task._run.decisions[task.id] = d.place
        place = task.assigned_place
        task.remaining_members = place.width
        for m, c in enumerate(place.members):
            self.aq[c].append((task, m))
        return place

    def pop_local(self, core: int) -> TaskNode | None:
        q = self.wsq[core]
        return q.pop() if q else None

    def steal(self, thief: int, rng: random.Random) -> TaskNode | None:
        victims = [v for v in range(self.workers) if v != thief]
        rng.shuffle(victims)
        for v in victims:
            q = self.wsq[v]
            for i, t in enumerate(q):
                if not self._pinned(t):
                    del q[i]
                    return t
        return None

    def next_member(self, core: int, rng: random.Random) -> tuple[TaskNode, int] | None:
        """One worker-loop step: AQ, then own WSQ, then steal."""
        if self.aq[core]:
            return self.aq[core].popleft()
        task = self.pop_local(core)
        if task is None:
            task = self.steal(core, rng)
        if task is None:
            return None
        self.dispatch(task, core)
        # the deciding worker always belongs to its own place
        return self.aq[core].popleft()

    # -- completion ---------------------------------------------------------

    def finish_member(self, task: TaskNode, member: int, core: int, start: float,
                      duration: float, end: float | None = None) -> list[TaskNode]:
        """Record one member's completion; returns tasks released by it.

        ``end`` defaults to ``start + duration``; executors that know the
        exact end time pass it so rounding cannot reorder events.
        """
        run = task._run
        task.executed_on.append(core)
        place = task.assigned_place
        if end is None:
            end = start + duration
        if member == 0:
            run.events.append(TraceEvent(task.id, task.task_type, task.priority, place,
                                         start, duration, place.leader))
            task.leader_start = start
            if self.measure == "leader":
                self.ptts[task.task_type].update(place.leader, place.width, duration)
        run.last_finish = max(run.last_finish, end)
        task.remaining_members -= 1
        released = []
        if task.remaining_members == 0:
            run.finish_times[task.id] = end
            if self.measure == "task":
                self.ptts[task.task_type].update(place.leader, place.width,
                                                 end - task.leader_start)
            run.unfinished -= 1
            for sid in task.successors:
                succ = run.dag.tasks[sid]
                succ.pending_deps -= 1
                if succ.pending_deps == 0:
                    self.release(succ, core)
                    released.append(succ)
            if run.unfinished == 0:
                run.done.set()
        return released

    # -- introspection ------------------------------------------------------

    def queued(self) -> tuple[int, int]:
        return sum(map(len, self.wsq)), sum(map(len, self.aq))

    def purge(self, run: Run) -> None:
        for q in self.wsq:
            keep = [t for t in q if t._run is not run]
            q.clear()
            q.extend(keep)
        for q in self.aq:
            keep = [e for e in q if e[0]._run is not run]
            q.clear()
            q.extend(keep)


class RunHandle:
    def __init__(self, runtime: "ThreadedRuntime", run: Run):
        self._runtime = runtime
        self._run = run

    def done(self) -> bool:
        return self._run.done.is_set()

    def wait(self, timeout: float | None = None) -> Trace:
        if not self._run.done.wait(timeout):
            raise TimeoutError(f"run did not finish within {timeout} s")
        if self._run.error is not None:
            raise self._run.error
        trace = self._run.trace()
        trace.pinned = self._runtime.pinned
        return trace


def pin_current_thread(core: int) -> None:
    if not hasattr(os, "sched_setaffinity"):
        from .errors import PinningError
        raise PinningError("thread pinning is not supported on this OS")
    os.sched_setaffinity(0, {core})


class ThreadedRuntime:
    """One OS thread per core, all sharing a :class:`RuntimeCore` under a lock.

    Kernel bodies run outside the lock. Use as a context manager::

        with ThreadedRuntime(topo, Policy.from_name("dam-c")) as rt:
            trace = rt.spawn(dag).wait()
    """

    def __init__(self, topology: Topology, policy: Policy, *, ptts: PttRegistry | None = None,
                 seed: int = 0, pin: bool = False, idle_wait: float = 0.01):
        self.core = RuntimeCore(topology, policy, ptts)
        self.seed = seed
        self.pin = pin
        self.pinned = False
        self.idle_wait = idle_wait
        self._cv = threading.Condition()
        self._threads: list[threading.Thread] = []
        self._shutdown = False
        self._running = 0
        self._pin_failures = 0
        self._local = threading.local()

    @property
    def ptts(self) -> PttRegistry:
        return self.core.ptts

    def start(self) -> "ThreadedRuntime":
        if self._threads:
            return self
        ready = threading.Barrier(self.core.workers + 1)
        for c in range(self.core.workers):
            th = threading.Thread(target=self._worker, args=(c, ready), name=f"worker-{c}",
                                  daemon=True)
            th.start()
            self._threads.append(th)
        ready.wait()
        self.pinned = self.pin and self._pin_failures == 0
        if self._pin_failures:
            log.warning("could not pin %d of %d workers; running them unpinned",
                        self._pin_failures, self.core.workers)
        return self

    def shutdown(self) -> None:
        with self._cv:
            self._shutdown = True
            self._cv.notify_all()
        for th in self._threads:
            th.join()
        self._threads = []

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.shutdown()

    def spawn(self, dag: Dag) -> RunHandle:
        """Submit a DAG. Called from a task body, roots go to the calling worker."""
        with self._cv:
            run = self.core.spawn(dag, getattr(self._local, "core", None))
            run.epoch = time.perf_counter()
            self._cv.notify_all()
        return RunHandle(self, run)

    def run(self, dag: Dag, timeout: float | None = None) -> Trace:
        with self:
            return self.spawn(dag).wait(timeout)

    def _check_stuck(self) -> None:
        if self._running or any(self.core.queued()):
            return
        for run in self.core.runs:
            if not run.done.is_set():
                run.error = StuckDagError(t.id for t in run.dag.tasks if t.pending_deps > 0)
                run.done.set()
        self.core.runs = [r for r in self.core.runs if not r.done.is_set()]

    def _worker(self, core: int, ready: threading.Barrier) -> None:
        self._local.core = core
        if self.pin:
            try:
                pin_current_thread(core)
            except OSError as exc:
                log.debug("could not pin worker %d: %s", core, exc)
                with self._cv:
                    self._pin_failures += 1
        rng = random.Random(self.seed * 7919 + core)
        ready.wait()
        while True:
            with self._cv:
                while True:
                    if self._shutdown:
                        return
                    item = self.core.next_member(core, rng)
                    if item is not None:
                        self._running += 1
                        if any(self.core.aq[c] for c in range(self.core.workers) if c != core):
                            self._cv.notify_all()
                        break
                    self._check_stuck()
                    self._cv.wait(self.idle_wait)
            task, member = item
            width = task.assigned_place.width
            run = task._run
            t0 = time.perf_counter()
            err = None
            try:
                if task.body is not None and run.error is None:
                    task.body(member, width)
            except BaseException as exc:  # noqa: BLE001 - reported through the handle
                err = exc
            t1 = time.perf_counter()
            with self._cv:
                self._running -= 1
                if err is not None:
                    if run.error is None:
                        run.error = TaskFailedError(task.id, err)
                        self.core.purge(run)
                        run.done.set()
                elif run.error is None:
                    self.core.finish_member(task, member, core, t0 - run.epoch, t1 - t0)
                if run.done.is_set():
                    self.core.runs = [r for r in self.core.runs if not r.done.is_set()]
                self._cv.notify_all()


def run_threaded(dag: Dag, topology: Topology, policy: Policy, *, timeout: float | None = None,
                 **kwargs) -> Trace:
    return ThreadedRuntime(topology, policy, **kwargs).run(dag, timeout)


def check_trace(dag: Dag, trace: Trace) -> list[str]:
    """Return a list of violated runtime properties (empty when clean).

    Checks: one event per task, each member core ran exactly once, no task
    started before its predecessors' last member finished, and every
    high-priority task ran where it was placed.
    """
    problems = []
    by_id = {}
    for e in trace.events:
        if e.task_id in by_id:
            problems.append(f"task {e.task_id}: duplicate trace event")
        by_id[e.task_id] = e
    for t in dag.tasks:
        e = by_id.get(t.id)
        if e is None:
            problems.append(f"task {t.id}: no trace event")
            continue
        ran = sorted(trace.executed_on.get(t.id, ()))
        if ran != list(e.place.members):
            problems.append(f"task {t.id}: members {ran} != place {e.place}")
        if t.priority is Priority.HIGH and trace.decisions.get(t.id) != e.place:
            problems.append(f"task {t.id}: ran at {e.place}, decided {trace.decisions.get(t.id)}")
    preds = dag.predecessors()
    for t in dag.tasks:
        e = by_id.get(t.id)
        if e is None:
            continue
        for p in preds[t.id]:
            fin = trace.finish_times.get(p)
            if fin is None or fin > e.start:
                problems.append(f"task {t.id} started at {e.start} before predecessor {p} "
                                f"finished at {fin}")
    return problems
