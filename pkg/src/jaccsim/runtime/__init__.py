"""Task graphs, action graphs and graph-atomic execution."""

from .actions import ActionGraph, ActionKind, optimize_actions
from .graph import GraphState, Runtime, Task, TaskGraph, receiver_for, run_task
from .taskfile import TaskGraphSpec, build_graph, parse_taskgraph

__all__ = [
    "ActionGraph",
    "ActionKind",
    "GraphState",
    "Runtime",
    "Task",
    "TaskGraph",
    "TaskGraphSpec",
    "build_graph",
    "optimize_actions",
    "parse_taskgraph",
    "receiver_for",
    "run_task",
]
