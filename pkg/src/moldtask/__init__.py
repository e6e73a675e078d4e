"""Moldable task scheduling on asymmetric multicores.

A small task-DAG runtime whose schedulers choose an execution place
(leader core, width) per task from an online performance table, plus a
virtual-time simulator, interference generators and an experiment harness.
"""
from .errors import (ContractViolation, PinningError, SimConfigError, StuckDagError,
                     TaskFailedError, TopologyError)
from .interference import (InterferenceSpec, SpeedProfile, corun_profile, dvfs_profile,
                           launch_corun)
from .ptt import Objective, PerfTraceTable, PttRegistry, dump_csv
from .runtime import Dag, ThreadedRuntime, Trace, TraceEvent, check_trace, run_threaded
from .scheduler import POLICY_NAMES, PlacementDecision, Policy, Priority, Scheduler, decide
from .simexec import Metrics, SimConfig, metrics, simulate, tx2_scenario
from .topology import Cluster, ExecutionPlace, Topology, local_domain, tx2_like, valid_places
from .workloads import Kernel, SyntheticDagSpec, build_synthetic

__version__ = "0.1.0"
