import random
import threading
import time

import pytest

from moldtask.errors import StuckDagError, TaskFailedError
from moldtask.ptt import PttRegistry
from moldtask.runtime import (TRACE_HEADER, Dag, RuntimeCore, ThreadedRuntime, Trace,
                              TraceEvent, check_trace, run_threaded)
from moldtask.scheduler import POLICY_NAMES, Policy, Priority
from moldtask.topology import ExecutionPlace, Topology, tx2_like

HIGH, LOW = Priority.HIGH, Priority.LOW


def fig1_dag():
    """T0 fans out to T1..T4 (T1 critical), which join into T5."""
    dag = Dag()
    t0 = dag.add("k", HIGH)
    mids = [dag.add("k", HIGH if i == 0 else LOW, deps=[t0]) for i in range(4)]
    dag.add("k", LOW, deps=mids)
    return dag


def recording_dag(n_chain=0):
    log = []
    lock = threading.Lock()

    def body_for(tid):
        def body(member, width):
            with lock:
                log.append((tid, member, width))
        return body
    return log, body_for


# -- RuntimeCore, driven by hand ---------------------------------------------

def test_roots_dealt_round_robin(tx2):
    dag = Dag()
    for _ in range(8):
        dag.add("k")
    core = RuntimeCore(tx2, Policy.from_name("rws"))
    core.spawn(dag)
    assert [len(q) for q in core.wsq] == [2, 2, 1, 1, 1, 1]


def test_roots_to_spawning_worker(tx2):
    dag = Dag()
    for _ in range(3):
        dag.add("k")
    core = RuntimeCore(tx2, Policy.from_name("rws"))
    core.spawn(dag, core=4)
    assert len(core.wsq[4]) == 3


def test_high_priority_goes_to_decided_leader_and_is_not_stolen(tx2):
    ptts = PttRegistry(tx2)
    t = ptts["k"]
    for c, w, _ in list(t.cells()):
        t.update(c, w, 0.4 if (c, w) == (2, 2) else 1.0)    # (2,2) costs 0.8, the cheapest
    dag = Dag()
    dag.add("k", HIGH)
    core = RuntimeCore(tx2, Policy.from_name("dam-c"), ptts)
    run = core.spawn(dag, core=0)
    assert run.decisions[0] == (2, 2)
    assert list(core.wsq[2]) == [dag.tasks[0]]
    rng = random.Random(0)
    for thief in (0, 1, 3, 4, 5):
        assert core.steal(thief, rng) is None
    task, member = core.next_member(2, rng)
    assert (task.id, member) == (0, 0)
    assert [(e[0].id, e[1]) for e in core.aq[3]] == [(0, 1)]


def test_steal_redecides_from_thief(tx2):
    ptts = PttRegistry(tx2)
    t = ptts["k"]
    for c, w, _ in list(t.cells()):
        t.update(c, w, 0.1 if (c, w) == (2, 4) else 1.0)    # core 2 alone would pick width 4
    dag = Dag()
    dag.add("k", LOW)
    core = RuntimeCore(tx2, Policy.from_name("dam-c"), ptts)
    core.spawn(dag, core=2)
    rng = random.Random(0)
    task, member = core.next_member(1, rng)
    assert task.assigned_place == (1, 1) and member == 0
    assert not any(core.aq[c] for c in range(6))


def test_dispatch_fills_member_aqs_in_order(tx2):
    dag = Dag()
    dag.add("k")
    core = RuntimeCore(tx2, Policy.from_name("rws"))
    core.spawn(dag)
    task = core.pop_local(0)
    task.assigned_place = ExecutionPlace(2, 4)
    task._run.decisions[task.id] = task.assigned_place
    core.dispatch(task, 2)
    assert [core.aq[c][0][1] for c in range(2, 6)] == [0, 1, 2, 3]
    assert task.remaining_members == 4


def test_last_member_releases_successors(tx2):
    dag = Dag()
    root = dag.add("k", LOW)
    kids = [dag.add("k", LOW, deps=[root]) for _ in range(4)]
    core = RuntimeCore(tx2, Policy.from_name("rws"))
    core.spawn(dag, core=0)
    task = core.pop_local(0)
    task.assigned_place = ExecutionPlace(0, 2)
    core.dispatch(task, 0)
    assert core.finish_member(task, 1, 1, 0.0, 1.0) == []
    released = core.finish_member(task, 0, 0, 0.0, 2.0)
    assert [t.id for t in released] == kids
    # children land on the releasing worker
    assert [t.id for t in core.wsq[0]] == kids
    assert core.ptts["k"].lookup((0, 2)) == 2.0


def test_only_leader_updates_table(tx2):
    dag = Dag()
    dag.add("k")
    core = RuntimeCore(tx2, Policy.from_name("rws"))
    core.spawn(dag)
    task = core.pop_local(0)
    task.assigned_place = ExecutionPlace(2, 2)
    core.dispatch(task, 2)
    core.finish_member(task, 1, 3, 0.0, 5.0)
    assert all(est == 0 for _, _, est in core.ptts["k"].cells())
    core.finish_member(task, 0, 2, 0.0, 3.0)
    assert core.ptts["k"].lookup((2, 2)) == 3.0
    assert core.ptts["k"].lookup((3, 1)) == 0


# -- DAG helpers --------------------------------------------------------------

def test_dag_parallelism():
    dag = fig1_dag()
    assert dag.longest_path() == 3
    assert dag.parallelism() == 2
    assert Dag().parallelism() == 0
    assert [t.id for t in dag.roots()] == [0]
    assert dag.predecessors()[5] == [1, 2, 3, 4]


def test_cycle_detected_by_longest_path():
    dag = Dag()
    a, b = dag.add("k"), dag.add("k")
    dag.add_edge(a, b)
    dag.add_edge(b, a)
    with pytest.raises(ValueError):
        dag.longest_path()


# -- threaded executor ---------------------------------------------------------

def test_empty_dag(tx2):
    trace = run_threaded(Dag(), tx2, Policy.from_name("dam-c"), timeout=5)
    assert trace.events == []


def test_chain_runs_in_order(tx2):
    dag = Dag()
    prev = ()
    for _ in range(5):
        prev = (dag.add("k", deps=prev),)
    trace = run_threaded(dag, tx2, Policy.from_name("rws"), timeout=5)
    starts = [e.start for e in sorted(trace.events, key=lambda e: e.task_id)]
    assert len(starts) == 5
    assert starts == sorted(starts) and len(set(starts)) == 5
    assert check_trace(dag, trace) == []


def test_single_worker_is_serial_topological():
    log, body_for = recording_dag()
    dag = Dag()
    ids = []
    for i in range(6):
        deps = [ids[i - 1]] if i % 2 else []
        tid = dag.add("k", deps=deps)
        dag.tasks[tid].body = body_for(tid)
        ids.append(tid)
    for name in POLICY_NAMES:
        log.clear()
        trace = run_threaded(dag, Topology.symmetric(1), Policy.from_name(name), timeout=5)
        order = [tid for tid, _, _ in log]
        assert sorted(order) == ids
        for i in range(1, 6, 2):
            assert order.index(i) > order.index(i - 1)
        assert check_trace(dag, trace) == []


def test_wide_task_runs_each_member_once():
    log, body_for = recording_dag()
    topo = Topology.symmetric(4, [1, 2, 4])
    ptts = PttRegistry(topo)
    t = ptts["k"]
    for c, w, _ in list(t.cells()):
        t.update(c, w, 1.0 if w < 4 else 0.1)
    dag = Dag()
    for _ in range(6):
        tid = dag.add("k", HIGH)
        dag.tasks[tid].body = body_for(tid)
    trace = run_threaded(dag, topo, Policy.from_name("dam-p"), ptts=ptts, timeout=5)
    assert all(e.place == (0, 4) for e in trace.events)
    assert sorted(log) == sorted((tid, m, 4) for tid in range(6) for m in range(4))
    assert check_trace(dag, trace) == []


def test_fig1_dag_all_policies(tx2):
    for name in POLICY_NAMES:
        dag = fig1_dag()
        trace = run_threaded(dag, tx2, Policy.from_name(name), timeout=5)
        assert check_trace(dag, trace) == [], name
        assert len(trace.events) == 6
        assert trace.makespan > 0


def test_cycle_reports_stuck(tx2):
    dag = Dag()
    root = dag.add("k")
    a = dag.add("k", deps=[root])
    b = dag.add("k", deps=[a])
    dag.add_edge(b, a)
    with pytest.raises(StuckDagError) as info:
        run_threaded(dag, tx2, Policy.from_name("rws"), timeout=5)
    assert info.value.pending == [a, b]


def test_body_failure_aborts_with_task_id(tx2):
    dag = Dag()
    root = dag.add("k")

    def boom(member, width):
        raise RuntimeError("kernel exploded")

    bad = dag.add("k", deps=[root], body=boom)
    for _ in range(10):
        dag.add("k", deps=[bad])
    with pytest.raises(TaskFailedError) as info:
        run_threaded(dag, tx2, Policy.from_name("dam-c"), timeout=5)
    assert info.value.task_id == bad
    assert isinstance(info.value.cause, RuntimeError)


def test_runtime_survives_failed_run(tx2):
    with ThreadedRuntime(tx2, Policy.from_name("rws")) as rt:
        dag = Dag()
        dag.add("k", body=lambda m, w: 1 / 0)
        with pytest.raises(TaskFailedError):
            rt.spawn(dag).wait(5)
        ok = fig1_dag()
        assert check_trace(ok, rt.spawn(ok).wait(5)) == []


def test_nested_spawn_from_body(tx2):
    child = fig1_dag()
    handles = []
    with ThreadedRuntime(tx2, Policy.from_name("dam-c")) as rt:
        parent = Dag()
        parent.add("k", body=lambda m, w: m == 0 and handles.append(rt.spawn(child)))
        rt.spawn(parent).wait(5)
        trace = handles[0].wait(5)
    assert check_trace(child, trace) == []


def test_ptt_learns_in_threaded_run(tx2):
    ptts = PttRegistry(tx2)
    # a chain: each high-priority task is decided after its predecessor measured
    dag = Dag()
    prev = ()
    for _ in range(40):
        prev = (dag.add("k", HIGH, body=lambda m, w: time.sleep(0.0005), deps=prev),)
    run_threaded(dag, tx2, Policy.from_name("dam-c"), ptts=ptts, timeout=10)
    measured = {(c, w) for c, w, est in ptts["k"].cells() if est > 0}
    assert set(tx2.places) <= measured


def test_respawn_while_running_rejected(tx2):
    gate = threading.Event()
    dag = Dag()
    dag.add("k", body=lambda m, w: gate.wait(5))
    with ThreadedRuntime(tx2, Policy.from_name("rws")) as rt:
        h = rt.spawn(dag)
        with pytest.raises(RuntimeError, match="already running"):
            rt.spawn(dag)
        gate.set()
        h.wait(5)
        gate.clear()
        gate.set()
        assert len(rt.spawn(dag).wait(5).events) == 1


def test_pinning_failure_is_reported_not_fatal(tx2):
    dag = fig1_dag()
    with ThreadedRuntime(tx2, Policy.from_name("rws"), pin=True) as rt:
        trace = rt.spawn(dag).wait(5)
    assert check_trace(dag, trace) == []
    assert trace.pinned is rt.pinned
    assert isinstance(rt.pinned, bool)


def test_check_trace_flags_violations():
    dag = Dag()
    a = dag.add("k", HIGH)
    dag.add("k", deps=[a])
    ev = [TraceEvent(0, "k", HIGH, ExecutionPlace(0, 1), 0.0, 1.0, 0),
          TraceEvent(1, "k", LOW, ExecutionPlace(1, 1), 0.5, 1.0, 1)]
    trace = Trace(ev, 1.5, {0: ExecutionPlace(1, 1)}, {0: (0,), 1: (1,)}, {0: 1.0, 1: 1.5})
    problems = check_trace(dag, trace)
    assert any("decided" in p for p in problems)
    assert any("before predecessor" in p for p in problems)


def test_trace_csv():
    ev = [TraceEvent(1, "matmul", LOW, ExecutionPlace(2, 2), 2e-6, 3e-6, 2),
          TraceEvent(0, "matmul", HIGH, ExecutionPlace(0, 1), 0.0, 1.5e-6, 0)]
    trace = Trace(ev, 5e-6, finish_times={0: 1.5e-6, 1: 6e-6})
    lines = trace.to_csv().splitlines()
    assert lines[0] == ",".join(TRACE_HEADER)
    assert lines[1:] == ["0,matmul,high,0,1,0,1.5", "1,matmul,low,2,2,2,3"]
    assert trace.to_csv(vtime=True).splitlines()[2].endswith(",6e-06")
