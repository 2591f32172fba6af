"""Lancium-like batch service.

Same provisioner-facing interface as :class:`SimKube`, different semantics:
a single aggregate capacity, strict FIFO admission, two-phase
create/submit, and its own phase vocabulary.  Affinity and priority are
accepted but have no effect.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..model import PodSpec
from .base import FAILED, QUEUED, RUNNING, STARTING, SUCCEEDED, Backend, PodRecord, Transition

CREATED, SUBMITTED, LQUEUED, LRUNNING, FINISHED, ERROR = (
    "created",
    "submitted",
    "queued",
    "running",
    "finished",
    "error",
)

PHASE_TO_STATE = {
    CREATED: QUEUED,
    SUBMITTED: QUEUED,
    LQUEUED: QUEUED,
    LRUNNING: RUNNING,
    FINISHED: SUCCEEDED,
    ERROR: FAILED,
}

_PHASE_ORDER = {
    CREATED: {SUBMITTED, ERROR},
    SUBMITTED: {LQUEUED, ERROR},
    LQUEUED: {LRUNNING, ERROR},
    LRUNNING: {FINISHED, ERROR},
}


@dataclass
class LanciumJobRecord:
    lancium_id: str
    phase: str
    payload: dict
    spec: PodSpec
    submit_time: int
    reserved: bool = False
    start_at: int | None = None
    start_time: int | None = None
    end_time: int | None = None

    @property
    def unified_state(self) -> str:
        # admitted with capacity reserved, waiting out the start latency
        if self.phase == LQUEUED and self.reserved:
            return STARTING
        return PHASE_TO_STATE[self.phase]


class SimLancium(Backend):
    name = "simlancium"
    id_prefix = "lancium"

    def __init__(self, cpus: int, memory: int, gpus: int = 0, start_latency_s: int = 30):
        super().__init__(start_latency_s)
        if cpus < 0 or memory < 0 or gpus < 0:
            raise ValueError("negative capacity")
        self.capacity = (cpus, memory, gpus)
        self.jobs: dict[str, LanciumJobRecord] = {}
        self.phase_log: list[tuple[int, str, str | None, str]] = []

    # -- the two native calls

    def create_job(self, spec: PodSpec) -> str:
        lid = self._next_id()
        self.jobs[lid] = LanciumJobRecord(lid, CREATED, spec.to_dict(), spec, submit_time=self.now)
        self.phase_log.append((self.now, lid, None, CREATED))
        self._record(self.now, lid, None, QUEUED)
        return lid

    def submit_job(self, lancium_id: str) -> None:
        rec = self.jobs[lancium_id]
        if rec.phase != CREATED:
            raise ValueError(f"{lancium_id}: can only submit a created job, phase is {rec.phase}")
        self._set_phase(rec, SUBMITTED, self.now)

    def _set_phase(self, rec: LanciumJobRecord, phase: str, now: int) -> Transition | None:
        if phase not in _PHASE_ORDER.get(rec.phase, ()):
            raise ValueError(f"{rec.lancium_id}: illegal phase change {rec.phase} -> {phase}")
        old_state = rec.unified_state
        self.phase_log.append((now, rec.lancium_id, rec.phase, phase))
        rec.phase = phase
        if phase == LRUNNING:
            rec.start_time = now
        if phase in (FINISHED, ERROR):
            rec.end_time = now
        if rec.unified_state != old_state:
            return self._record(now, rec.lancium_id, old_state, rec.unified_state)
        return None

    # -- provisioner-facing interface

    def submit_pods(self, spec: PodSpec, count: int) -> list[str]:
        if count < 1:
            raise ValueError("count must be >= 1")
        self._check_reachable("submit_pods")
        self.validate_spec(spec)
        if spec.affinity_terms:
            self.warnings.append(f"t={self.now}: affinity ignored: {[t.render() for t in spec.affinity_terms]}")
        if spec.priority_class is not None:
            self.warnings.append(f"t={self.now}: priority class {spec.priority_class!r} ignored")
        ids = []
        for _ in range(count):
            lid = self.create_job(spec)
            self.submit_job(lid)
            ids.append(lid)
        return ids

    def all_pods(self) -> list[PodRecord]:
        return [
            PodRecord(
                pod_id=r.lancium_id,
                spec=r.spec,
                state=r.unified_state,
                node_id=None,
                submit_time=r.submit_time,
                start_time=r.start_time,
                end_time=r.end_time,
            )
            for r in self.jobs.values()
        ]

    # -- simulation

    def allocated(self) -> tuple[int, int, int]:
        used = [0, 0, 0]
        for r in self.jobs.values():
            if r.phase == LRUNNING or (r.phase == LQUEUED and r.reserved):
                used[0] += r.spec.cpus
                used[1] += r.spec.memory
                used[2] += r.spec.gpus
        return tuple(used)

    def capacity_violations(self) -> list[str]:
        used = self.allocated()
        if any(u > c for u, c in zip(used, self.capacity)):
            return [f"aggregate allocated {used} exceeds capacity {self.capacity}"]
        return []

    def step(self, now: int) -> list[Transition]:
        self.now = now
        events = []

        def emit(t):
            if t is not None:
                events.append(t)

        for r in self.jobs.values():
            if r.phase == LQUEUED and r.reserved and r.start_at <= now:
                emit(self._set_phase(r, LRUNNING, now))
        for r in self.jobs.values():
            if r.phase == SUBMITTED:
                emit(self._set_phase(r, LQUEUED, now))

        # strict FIFO: the head of the queue blocks everything behind it
        waiting = [r for r in self.jobs.values() if r.phase == LQUEUED and not r.reserved]
        waiting.sort(key=lambda r: (r.submit_time, r.lancium_id))
        for r in waiting:
            need = (r.spec.cpus, r.spec.memory, r.spec.gpus)
            if any(n > c for n, c in zip(need, self.capacity)):
                emit(self._set_phase(r, ERROR, now))
                continue
            used = self.allocated()
            if any(u + n > c for u, n, c in zip(used, need, self.capacity)):
                break
            r.reserved = True
            r.start_at = now + self.start_latency_s
            emit(self._record(now, r.lancium_id, QUEUED, STARTING))
        return events

    def pod_exited(self, pod_id: str, now: int) -> list[Transition]:
        rec = self.jobs[pod_id]
        if rec.phase != LRUNNING:
            return []
        t = self._set_phase(rec, FINISHED, now)
        return [t] if t else []
