from __future__ import annotations

from abc import ABC, abstractmethod
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, replace

from ..errors import BackendUnreachable, InvalidPodSpec
from ..model import PodSpec

QUEUED = "Queued"
STARTING = "Starting"
RUNNING = "Running"
TERMINATING = "Terminating"
SUCCEEDED = "Succeeded"
FAILED = "Failed"
PREEMPTED = "Preempted"

POD_STATES = (QUEUED, STARTING, RUNNING, TERMINATING, SUCCEEDED, FAILED, PREEMPTED)
TERMINAL_STATES = frozenset({SUCCEEDED, FAILED, PREEMPTED})
PENDING_STATES = frozenset({QUEUED, STARTING})

# None marks pod creation
ALLOWED_TRANSITIONS = {
    (None, QUEUED),
    (QUEUED, STARTING),
    (QUEUED, FAILED),
    (STARTING, RUNNING),
    (STARTING, FAILED),
    (RUNNING, TERMINATING),
    (RUNNING, PREEMPTED),
    (RUNNING, SUCCEEDED),
    (RUNNING, FAILED),
    (TERMINATING, SUCCEEDED),
    (TERMINATING, FAILED),
}


@dataclass
class PodRecord:
    pod_id: str
    spec: PodSpec
    state: str = QUEUED
    node_id: str | None = None
    submit_time: int | None = None
    start_time: int | None = None
    end_time: int | None = None

    @property
    def labels(self) -> dict[str, str]:
        return self.spec.labels

    @property
    def unified_state(self) -> str:
        return self.state


@dataclass(frozen=True)
class Transition:
    time: int
    pod_id: str
    old: str | None
    new: str
    node_id: str | None = None

    def to_dict(self) -> dict:
        return {"time": self.time, "pod_id": self.pod_id, "from": self.old, "to": self.new, "node_id": self.node_id}


def audit_transitions(transitions: Iterable[Transition]) -> list[Transition]:
    """Return every transition outside the allowed state machine, including
    ones that do not start from the pod's last observed state."""
    last: dict[str, str | None] = {}
    bad = []
    for t in transitions:
        if (t.old, t.new) not in ALLOWED_TRANSITIONS or last.get(t.pod_id) != t.old:
            bad.append(t)
        last[t.pod_id] = t.new
    return bad


def selector_matches(labels: Mapping[str, str], selector: Mapping[str, str]) -> bool:
    return all(labels.get(k) == v for k, v in selector.items())


class Backend(ABC):
    """Pod provider as seen by the provisioner (``list_pods``/``submit_pods``)
    plus the hooks the simulator drives (``step``, ``pod_exited``).

    There is deliberately no way to delete a pod: pods only end by exiting
    on their own or by being preempted.
    """

    name = "backend"
    id_prefix = "pod"

    def __init__(self, start_latency_s: int = 30):
        if start_latency_s < 0:
            raise ValueError("start_latency_s must be >= 0")
        self.start_latency_s = start_latency_s
        self.now = 0
        self.reachable = True
        self.transitions: list[Transition] = []
        self.warnings: list[str] = []
        self._seq = 0

    def set_reachable(self, reachable: bool) -> None:
        self.reachable = reachable

    def _check_reachable(self, what: str) -> None:
        if not self.reachable:
            raise BackendUnreachable(f"{self.name}: {what} failed, backend unreachable")

    def _next_id(self) -> str:
        self._seq += 1
        return f"{self.id_prefix}-{self._seq:06d}"

    def _record(self, time: int, pod_id: str, old: str | None, new: str, node_id=None) -> Transition:
        t = Transition(time, pod_id, old, new, node_id)
        self.transitions.append(t)
        return t

    def validate_spec(self, spec: PodSpec) -> None:
        if spec.cpus < 1 or spec.memory < 1 or spec.gpus < 0:
            raise InvalidPodSpec(f"{self.name}: invalid resources cpus={spec.cpus} memory={spec.memory} gpus={spec.gpus}")

    def list_pods(self, selector: Mapping[str, str] | None = None) -> list[PodRecord]:
        self._check_reachable("list_pods")
        selector = selector or {}
        return [replace(p) for p in self.all_pods() if selector_matches(p.labels, selector)]

    @abstractmethod
    def all_pods(self) -> list[PodRecord]:
        """Every pod ever created, ordered by pod_id, ignoring reachability."""

    @abstractmethod
    def submit_pods(self, spec: PodSpec, count: int) -> list[str]:
        ...

    @abstractmethod
    def step(self, now: int) -> list[Transition]:
        ...

    @abstractmethod
    def pod_exited(self, pod_id: str, now: int) -> list[Transition]:
        """The pod's main process ended (worker self-termination)."""

    @abstractmethod
    def capacity_violations(self) -> list[str]:
        ...
