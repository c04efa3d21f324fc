"""Experiment specs, task generation and distributed execution."""
from .coordinator import Coordinator, coordinator_serve
from .local import ClusterRun, IncompleteError, LocalCluster, run_experiment, task_queue
from .policy_server import PolicyServer, make_policy, policy_server_run
from .report import ExperimentReport, aggregate_report, force_histogram, write_report
from .spec import ExperimentSpec, SpecError, dump_spec, from_dict, load_spec
from .tasks import Task, execute_task, generate_tasks, run_sequential, shuffle_tasks
from .worker import SimWorker, sim_worker_run

__all__ = [
    "ClusterRun", "Coordinator", "ExperimentReport", "ExperimentSpec", "IncompleteError",
    "LocalCluster", "PolicyServer", "SimWorker", "SpecError", "Task",
    "aggregate_report", "coordinator_serve", "dump_spec", "execute_task", "force_histogram",
    "from_dict", "generate_tasks", "load_spec", "make_policy", "policy_server_run",
    "run_experiment", "run_sequential", "shuffle_tasks", "sim_worker_run", "task_queue", "write_report",
]
