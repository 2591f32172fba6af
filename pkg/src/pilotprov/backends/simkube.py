"""Kubernetes-like backend: nodes, first-fit binding, priority classes and
preemption of backfill pods."""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

from ..errors import InvalidPodSpec
from ..model import PodSpec
from .base import (
    FAILED,
    PREEMPTED,
    QUEUED,
    RUNNING,
    STARTING,
    SUCCEEDED,
    TERMINATING,
    Backend,
    PodRecord,
    Transition,
)

# Beyond this many candidate victims on one node, fall back to taking them
# in priority order instead of searching all subsets.
_EXACT_SEARCH_LIMIT = 12

_BOUND_STATES = (STARTING, RUNNING, TERMINATING)


@dataclass(frozen=True)
class NodeSpec:
    node_id: str
    cpus: int
    memory: int
    gpus: int = 0
    labels: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.cpus < 0 or self.memory < 0 or self.gpus < 0:
            raise ValueError(f"node {self.node_id}: negative capacity")

    @property
    def capacity(self) -> tuple[int, int, int]:
        return (self.cpus, self.memory, self.gpus)


@dataclass(frozen=True)
class PriorityClass:
    name: str
    value: int
    preemptable: bool


DEFAULT_PRIORITY = PriorityClass("", 1000, False)
DEFAULT_PRIORITY_CLASSES = {"opportunistic2": PriorityClass("opportunistic2", 10, True)}


def _demand(spec: PodSpec) -> tuple[int, int, int]:
    return (spec.cpus, spec.memory, spec.gpus)


def _fits(free, need) -> bool:
    return all(f >= n for f, n in zip(free, need))


def _add(a, b):
    return tuple(x + y for x, y in zip(a, b))


def minimal_eviction(candidates, free, need):
    """Smallest subset of ``candidates`` whose resources, added to ``free``,
    cover ``need``.  Among equal-sized subsets the first in candidate order
    wins.  Returns ``None`` if even evicting everything is not enough.

    ``candidates`` is a sequence of ``(pod_id, demand)`` already sorted by
    eviction preference.
    """
    if _fits(free, need):
        return []
    total = free
    for _, d in candidates:
        total = _add(total, d)
    if not _fits(total, need):
        return None
    if len(candidates) > _EXACT_SEARCH_LIMIT:
        chosen, acc = [], free
        for c in candidates:
            if _fits(acc, need):
                break
            chosen.append(c)
            acc = _add(acc, c[1])
        return [c[0] for c in chosen]
    for k in range(1, len(candidates) + 1):
        for combo in combinations(candidates, k):
            acc = free
            for _, d in combo:
                acc = _add(acc, d)
            if _fits(acc, need):
                return [c[0] for c in combo]
    return None  # pragma: no cover - total check above guarantees a hit


class SimKube(Backend):
    name = "simkube"
    id_prefix = "pod"

    def __init__(self, nodes, start_latency_s: int = 30, priority_classes=None):
        super().__init__(start_latency_s)
        self.nodes = sorted(nodes, key=lambda n: n.node_id)
        if len({n.node_id for n in self.nodes}) != len(self.nodes):
            raise ValueError("duplicate node_id")
        self.priority_classes = dict(DEFAULT_PRIORITY_CLASSES if priority_classes is None else priority_classes)
        self.pods: dict[str, PodRecord] = {}
        self._ready_at: dict[str, int] = {}

    def priority_of(self, spec: PodSpec) -> PriorityClass:
        if spec.priority_class is None:
            return DEFAULT_PRIORITY
        return self.priority_classes[spec.priority_class]

    def validate_spec(self, spec: PodSpec) -> None:
        super().validate_spec(spec)
        if spec.priority_class is not None and spec.priority_class not in self.priority_classes:
            raise InvalidPodSpec(f"simkube: unknown priority class {spec.priority_class!r}")

    def all_pods(self) -> list[PodRecord]:
        return list(self.pods.values())

    def submit_pods(self, spec: PodSpec, count: int) -> list[str]:
        if count < 1:
            raise ValueError("count must be >= 1")
        self._check_reachable("submit_pods")
        self.validate_spec(spec)
        ids = []
        for _ in range(count):
            pod_id = self._next_id()
            self.pods[pod_id] = PodRecord(pod_id, spec, QUEUED, submit_time=self.now)
            self._record(self.now, pod_id, None, QUEUED)
            ids.append(pod_id)
        return ids

    # -- resource accounting

    def allocated(self, node_id: str) -> tuple[int, int, int]:
        used = (0, 0, 0)
        for p in self.pods.values():
            if p.node_id == node_id and p.state in _BOUND_STATES:
                used = _add(used, _demand(p.spec))
        return used

    def free(self, node: NodeSpec) -> tuple[int, int, int]:
        return tuple(c - u for c, u in zip(node.capacity, self.allocated(node.node_id)))

    def capacity_violations(self) -> list[str]:
        out = []
        for node in self.nodes:
            used = self.allocated(node.node_id)
            if not _fits(node.capacity, used):
                out.append(f"node {node.node_id}: allocated {used} exceeds capacity {node.capacity}")
        return out

    # -- state changes

    def _move(self, rec: PodRecord, new: str, now: int) -> Transition:
        old = rec.state
        rec.state = new
        if new == RUNNING:
            rec.start_time = now
        if new in (SUCCEEDED, FAILED, PREEMPTED):
            rec.end_time = now
        return self._record(now, rec.pod_id, old, new, rec.node_id)

    def _eligible_nodes(self, spec: PodSpec):
        for node in self.nodes:
            if all(t.satisfied_by(node.labels) for t in spec.affinity_terms):
                yield node

    def _preemption_plan(self, rec: PodRecord):
        prio = self.priority_of(rec.spec)
        need = _demand(rec.spec)
        best = None
        for node in self._eligible_nodes(rec.spec):
            if not _fits(node.capacity, need):
                continue
            victims = []
            for p in self.pods.values():
                if p.node_id != node.node_id or p.state != RUNNING:
                    continue
                vp = self.priority_of(p.spec)
                if vp.preemptable and vp.value < prio.value:
                    victims.append((vp.value, p.start_time, p.pod_id, _demand(p.spec)))
            victims.sort()
            chosen = minimal_eviction([(v[2], v[3]) for v in victims], self.free(node), need)
            if chosen is not None and (best is None or len(chosen) < len(best[1])):
                best = (node, chosen)
        return best

    def step(self, now: int) -> list[Transition]:
        """One scheduler pass: finish terminations, start pods whose latency
        has elapsed, then bind queued pods (preempting backfill if needed)."""
        self.now = now
        events = []
        for rec in self.pods.values():
            if rec.state == TERMINATING:
                events.append(self._move(rec, SUCCEEDED, now))
        for rec in self.pods.values():
            if rec.state == STARTING and self._ready_at[rec.pod_id] <= now:
                events.append(self._move(rec, RUNNING, now))

        queued = [r for r in self.pods.values() if r.state == QUEUED]
        queued.sort(key=lambda r: (-self.priority_of(r.spec).value, r.submit_time, r.pod_id))
        for rec in queued:
            need = _demand(rec.spec)
            target = None
            for node in self._eligible_nodes(rec.spec):
                if _fits(self.free(node), need):
                    target = node
                    break
            if target is None:
                plan = self._preemption_plan(rec)
                if plan is None:
                    continue
                target, victims = plan
                for pod_id in victims:
                    events.append(self._move(self.pods[pod_id], PREEMPTED, now))
            rec.node_id = target.node_id
            self._ready_at[rec.pod_id] = now + self.start_latency_s
            events.append(self._move(rec, STARTING, now))
        return events

    def pod_exited(self, pod_id: str, now: int) -> list[Transition]:
        rec = self.pods[pod_id]
        if rec.state != RUNNING:
            return []
        return [self._move(rec, TERMINATING, now)]
