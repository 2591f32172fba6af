from .base import (
    ALLOWED_TRANSITIONS,
    FAILED,
    PENDING_STATES,
    POD_STATES,
    PREEMPTED,
    QUEUED,
    RUNNING,
    STARTING,
    SUCCEEDED,
    TERMINAL_STATES,
    TERMINATING,
    Backend,
    PodRecord,
    Transition,
    audit_transitions,
    selector_matches,
)
from .simkube import DEFAULT_PRIORITY, DEFAULT_PRIORITY_CLASSES, NodeSpec, PriorityClass, SimKube, minimal_eviction
from .simlancium import PHASE_TO_STATE, LanciumJobRecord, SimLancium

BACKENDS = ("simkube", "simlancium")

__all__ = [
    "ALLOWED_TRANSITIONS",
    "BACKENDS",
    "Backend",
    "DEFAULT_PRIORITY",
    "DEFAULT_PRIORITY_CLASSES",
    "FAILED",
    "LanciumJobRecord",
    "NodeSpec",
    "PENDING_STATES",
    "PHASE_TO_STATE",
    "POD_STATES",
    "PREEMPTED",
    "PodRecord",
    "PriorityClass",
    "QUEUED",
    "RUNNING",
    "STARTING",
    "SUCCEEDED",
    "SimKube",
    "SimLancium",
    "TERMINAL_STATES",
    "TERMINATING",
    "Transition",
    "audit_transitions",
    "minimal_eviction",
    "selector_matches",
]
