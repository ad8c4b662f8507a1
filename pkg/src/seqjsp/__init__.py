"""Sequence-to-sequence job-shop scheduling: instances, list scheduling,
dispatching rules, an exact oracle and a REINFORCE-trained attention policy."""

from .instance import Instance, generate_flowshop, generate_taillard, read_dataset, read_instance, write_dataset, write_instance
from .schedule import APPEND, GAP_INSERT, Schedule, build_schedule, check_feasible
from .rules import RuleKind, run_pdr
from .oracle import optimal_makespan

__all__ = [
    "Instance",
    "generate_taillard",
    "generate_flowshop",
    "read_instance",
    "write_instance",
    "read_dataset",
    "write_dataset",
    "GAP_INSERT",
    "APPEND",
    "Schedule",
    "build_schedule",
    "check_feasible",
    "RuleKind",
    "run_pdr",
    "optimal_makespan",
]

__version__ = "0.1.0"
