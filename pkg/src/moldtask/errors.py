"""Exception types shared across the runtime, simulator and harness."""


class ContractViolation(ValueError):
    """A caller broke an operation's precondition (bad place, empty domain...)."""


class TopologyError(ValueError):
    pass


class SimConfigError(ValueError):
    pass


class StuckDagError(RuntimeError):
    """Raised when a run quiesces while tasks still have unmet dependencies."""

    def __init__(self, pending):
        self.pending = sorted(pending)
        super().__init__(f"DAG is stuck: {len(self.pending)} task(s) never became ready "
                         f"(first ids: {self.pending[:8]}); is there a cycle?")


class TaskFailedError(RuntimeError):
    def __init__(self, task_id, cause):
        self.task_id = task_id
        self.cause = cause
        super().__init__(f"task {task_id} failed: {cause!r}")


class PinningError(OSError):
    pass
