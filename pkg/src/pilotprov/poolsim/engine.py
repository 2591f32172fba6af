"""Discrete-event engine wiring provisioner, backend, schedd and pool."""

from __future__ import annotations

import csv
import heapq
import io
import json
import random
from collections.abc import Callable
from dataclasses import astuple, dataclass, field, fields, replace
from typing import Any

from ..backends import (
    PENDING_STATES,
    PREEMPTED,
    RUNNING,
    TERMINAL_STATES,
    TERMINATING,
    Backend,
    SimKube,
    SimLancium,
    Transition,
)
from ..errors import ScenarioError
from ..model import COMPLETED, IDLE, JobAd, ProvisionerConfig
from ..model import RUNNING as JOB_RUNNING
from ..provisioner import TickRecord, audit_jsonl, poll
from . import pool as P
from .scenario import ScenarioSpec

# event kinds
JOB_ARRIVAL = "job-arrival"
PROVISIONER_TICK = "provisioner-tick"
BACKEND_STEP = "backend-step"
WORKER_REGISTER = "worker-register"
JOB_DISPATCH = "job-dispatch"
JOB_COMPLETE = "job-complete"
JOB_REQUEUE = "job-requeue"
WORKER_IDLE_CHECK = "worker-idle-check"
WORKER_LIFETIME_CHECK = "worker-lifetime-check"
WORKER_EXIT = "worker-exit"
POD_TRANSITION = "pod-transition"
OUTAGE_START = "{}-outage-start"
OUTAGE_END = "{}-outage-end"


@dataclass(frozen=True)
class MetricsSample:
    time: int
    idle_jobs: int
    running_jobs: int
    completed_jobs: int
    queued_pods: int
    running_workers_idle: int
    running_workers_claimed: int
    cumulative_pods_submitted: int
    cumulative_preemptions: int
    wasted_worker_idle_seconds: int

    @property
    def running_workers(self) -> int:
        return self.running_workers_idle + self.running_workers_claimed


METRIC_FIELDS = tuple(f.name for f in fields(MetricsSample))


@dataclass(order=True)
class SimEvent:
    time: int
    seq: int
    kind: str = field(compare=False)
    payload: dict = field(compare=False, default_factory=dict)


@dataclass
class SimResult:
    metrics: list[MetricsSample]
    audit: list[TickRecord]
    trace: list[dict]
    transitions: list[Transition]
    quiescent: bool
    end_time: int
    backend_name: str
    jobs: dict[str, JobAd]
    completion_times: dict[str, int]

    @property
    def completed_jobs(self) -> int:
        return sum(1 for j in self.jobs.values() if j.state == COMPLETED)

    @property
    def pods_submitted(self) -> int:
        return self.metrics[-1].cumulative_pods_submitted if self.metrics else 0

    @property
    def preemptions(self) -> int:
        return self.metrics[-1].cumulative_preemptions if self.metrics else 0

    @property
    def wasted_seconds(self) -> int:
        return self.metrics[-1].wasted_worker_idle_seconds if self.metrics else 0

    @property
    def last_completion(self) -> int | None:
        return max(self.completion_times.values(), default=None)

    def metrics_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(METRIC_FIELDS)
        for m in self.metrics:
            w.writerow(astuple(m))
        return buf.getvalue()

    def trace_jsonl(self) -> str:
        return "".join(json.dumps(e, sort_keys=True, separators=(",", ":")) + "\n" for e in self.trace)

    def audit_jsonl(self) -> str:
        return audit_jsonl(self.audit)

    def summary(self) -> str:
        return (
            f"jobs_completed={self.completed_jobs}/{len(self.jobs)} pods_submitted={self.pods_submitted} "
            f"preemptions={self.preemptions} waste_s={self.wasted_seconds} "
            f"end_time={self.end_time} quiescent={'yes' if self.quiescent else 'no'}"
        )


def tenant_configs(scenario: ScenarioSpec, config: ProvisionerConfig) -> list[ProvisionerConfig]:
    """Main provisioner first, then one per ``[tenant]`` block.  Tenants
    inherit the main config except for the fields they set; an unset
    ``priority_class`` means regular priority."""
    out = [config]
    for t in scenario.tenants:
        changes: dict[str, Any] = {"provisioner_id": t.provisioner_id, "priority_class": t.priority_class}
        if t.additional_requirements is not None:
            changes["additional_requirements"] = t.additional_requirements
        if t.max_submit_pods_per_cluster is not None:
            changes["max_submit_pods_per_cluster"] = t.max_submit_pods_per_cluster
        out.append(replace(config, **changes))
    if len({c.provisioner_id for c in out}) != len(out):
        raise ScenarioError("tenant provisioner_id collides with the main provisioner")
    return out


def make_backend(name: str, scenario: ScenarioSpec) -> Backend:
    if name == "simkube":
        return SimKube(scenario.nodes, start_latency_s=scenario.start_latency_s)
    cpus, memory, gpus = scenario.lancium_capacity
    return SimLancium(cpus, memory, gpus, start_latency_s=scenario.start_latency_s)


class Simulation:
    def __init__(
        self,
        scenario: ScenarioSpec,
        config: ProvisionerConfig,
        *,
        backend_override: str | None = None,
        seed_override: int | None = None,
        until: int | None = None,
        observer: Callable[[Simulation, SimEvent], None] | None = None,
    ):
        self.scenario = scenario
        self.configs = tenant_configs(scenario, config)
        self.backend_name = scenario.resolve_backend(config.backend_name, backend_override)
        self.backend = make_backend(self.backend_name, scenario)
        self.schedd = P.Schedd()
        self.pool = P.Pool(self.schedd, scenario.pool_token)
        seed = seed_override if seed_override is not None else scenario.seed
        self.rng = random.Random(seed)
        self.horizon = scenario.horizon_s if until is None else until
        self.observer = observer

        self.now = 0
        self._heap: list[SimEvent] = []
        self._seq = 0
        self.trace: list[dict] = []
        self.metrics: list[MetricsSample] = []
        self.audit: list[TickRecord] = []
        self._tcursor = 0
        self._job_seq = 0
        self._durations: dict[str, int] = {}
        self._generation: dict[str, int] = {}
        self._job_worker: dict[str, str] = {}
        self.completion_times: dict[str, int] = {}
        self._pending_arrivals = 0
        self.pods_submitted = 0
        self.preemptions = 0
        self.waste = 0
        self._last_accrual = 0

    # -- event plumbing

    def _next_seq(self) -> int:
        self._seq += 1
        return self._seq

    def schedule(self, time: int, kind: str, **payload) -> None:
        heapq.heappush(self._heap, SimEvent(time, self._next_seq(), kind, payload))

    def _log(self, kind: str, seq: int | None = None, **details) -> None:
        entry = {"seq": self._next_seq() if seq is None else seq, "time": self.now, "kind": kind}
        entry.update(details)
        self.trace.append(entry)

    def _trace_transitions(self) -> None:
        new = self.backend.transitions[self._tcursor :]
        self._tcursor = len(self.backend.transitions)
        for t in new:
            self._log(POD_TRANSITION, pod_id=t.pod_id, old=t.old, new=t.new, node_id=t.node_id)

    def _seed_events(self) -> None:
        # order matters for same-time events: outages, arrivals, ticks, steps
        for f in self.scenario.faults:
            self.schedule(f.start, OUTAGE_START.format(f.target), target=f.target)
            self.schedule(f.end, OUTAGE_END.format(f.target), target=f.target)
        for i, a in enumerate(self.scenario.arrivals):
            self.schedule(a.time, JOB_ARRIVAL, group=i)
            self._pending_arrivals += 1
        for i in range(len(self.configs)):
            self.schedule(0, PROVISIONER_TICK, provisioner=i)
        self.schedule(0, BACKEND_STEP)

    # -- observables

    def _accrue(self, time: int) -> None:
        idle = self.pool.count(P.W_IDLE)
        self.waste += idle * (time - self._last_accrual)
        self._last_accrual = time

    def sample(self) -> MetricsSample:
        pods = self.backend.all_pods()
        return MetricsSample(
            time=self.now,
            idle_jobs=self.schedd.count(IDLE),
            running_jobs=self.schedd.count(JOB_RUNNING),
            completed_jobs=self.schedd.count(COMPLETED),
            queued_pods=sum(1 for p in pods if p.state in PENDING_STATES),
            running_workers_idle=self.pool.count(P.W_IDLE),
            running_workers_claimed=self.pool.count(P.W_CLAIMED),
            cumulative_pods_submitted=self.pods_submitted,
            cumulative_preemptions=self.preemptions,
            wasted_worker_idle_seconds=self.waste,
        )

    def quiescent(self) -> bool:
        if self._pending_arrivals or self.pool.workers:
            return False
        if any(j.state != COMPLETED for j in self.schedd.jobs.values()):
            return False
        return all(p.state in TERMINAL_STATES for p in self.backend.all_pods())

    # -- main loop

    def run(self) -> SimResult:
        self._seed_events()
        quiescent = False
        end_time = 0
        while self._heap:
            if self._heap[0].time > self.horizon:
                end_time = self.horizon
                break
            ev = heapq.heappop(self._heap)
            self._accrue(ev.time)
            self.now = end_time = ev.time
            changed = getattr(self, "_on_" + _handler_name(ev.kind))(ev)
            if changed:
                self.metrics.append(self.sample())
            if self.observer is not None:
                self.observer(self, ev)
            if self.quiescent():
                quiescent = True
                break
        else:
            quiescent = self.quiescent()
        if not quiescent and end_time < self.horizon:
            end_time = self.horizon
        return SimResult(
            metrics=self.metrics,
            audit=self.audit,
            trace=self.trace,
            transitions=list(self.backend.transitions),
            quiescent=quiescent,
            end_time=end_time,
            backend_name=self.backend_name,
            jobs=dict(self.schedd.jobs),
            completion_times=dict(self.completion_times),
        )

    # -- handlers; each returns True when simulation state changed

    def _on_outage(self, ev: SimEvent) -> bool:
        down = ev.kind.endswith("-start")
        target = self.backend if ev.payload["target"] == "backend" else self.schedd
        if isinstance(target, Backend):
            target.set_reachable(not down)
        else:
            target.reachable = not down
        self._log(ev.kind, ev.seq)
        return True

    def _on_job_arrival(self, ev: SimEvent) -> bool:
        group = self.scenario.arrivals[ev.payload["group"]]
        ids = []
        for _ in range(group.count):
            self._job_seq += 1
            job_id = f"job-{self._job_seq:06d}"
            self.schedd.add(JobAd(job_id, group.attrs, IDLE, submit_time=self.now))
            if group.duration_s is not None:
                self._durations[job_id] = group.duration_s
            else:
                self._durations[job_id] = self.scenario.job_duration.draw(self.rng)
            self._generation[job_id] = 0
            ids.append(job_id)
        self._pending_arrivals -= 1
        self._log(JOB_ARRIVAL, ev.seq, count=group.count, first=ids[0], last=ids[-1])
        self._matchmake()
        return True

    def _on_provisioner_tick(self, ev: SimEvent) -> bool:
        cfg = self.configs[ev.payload["provisioner"]]
        rec = poll(self.schedd, self.backend, cfg, self.now)
        self.audit.append(rec)
        self.pods_submitted += rec.submitted
        self._log(
            PROVISIONER_TICK,
            ev.seq,
            provisioner_id=cfg.provisioner_id,
            decisions=[{"cluster": d.cluster_key.render(), "count": d.count, "failed": d.failure is not None} for d in rec.decisions],
            errors=rec.errors,
        )
        self._trace_transitions()
        self.schedule(self.now + cfg.poll_interval_s, PROVISIONER_TICK, provisioner=ev.payload["provisioner"])
        return True

    def _on_backend_step(self, ev: SimEvent) -> bool:
        transitions = self.backend.step(self.now)
        self.schedule(self.now + self.scenario.backend_step_s, BACKEND_STEP)
        if not transitions:
            return False
        self._log(BACKEND_STEP, ev.seq, transitions=len(transitions))
        self._trace_transitions()
        for t in transitions:
            self._react(t)
        self._matchmake()
        return True

    def _react(self, t: Transition) -> None:
        if t.new == RUNNING:
            pod = next(p for p in self.backend.all_pods() if p.pod_id == t.pod_id)
            worker = self.pool.register_worker(pod, self.now)
            if worker is None:
                self._log(WORKER_REGISTER, pod_id=pod.pod_id, accepted=False)
                # nobody will ever claim it; the pilot idles out
                self.schedule(self.now + pod.spec.max_idle_s, WORKER_IDLE_CHECK, pod_id=pod.pod_id)
                return
            self._log(WORKER_REGISTER, pod_id=pod.pod_id, worker_id=worker.worker_id, accepted=True)
            self.schedule(self.now + worker.max_idle_s, WORKER_IDLE_CHECK, worker_id=worker.worker_id)
            self.schedule(self.now + worker.max_lifetime_s, WORKER_LIFETIME_CHECK, worker_id=worker.worker_id)
            return
        if t.new == PREEMPTED:
            self.preemptions += 1
        if t.new in TERMINAL_STATES or t.new == TERMINATING:
            worker = self.pool.worker_for_pod(t.pod_id)
            if worker is not None:
                self._drop_worker(worker)

    def _drop_worker(self, worker: P.WorkerAd) -> None:
        """Worker vanished underneath its job (preemption): requeue the job."""
        self.pool.remove(worker.worker_id)
        job_id = worker.claimed_job_id
        if job_id is not None:
            self.schedd.set_state(job_id, IDLE)
            self._generation[job_id] += 1
            del self._job_worker[job_id]
            self._log(JOB_REQUEUE, job_id=job_id, worker_id=worker.worker_id, pod_id=worker.pod_id)

    def _matchmake(self) -> None:
        for job_id, worker_id in self.pool.matchmake_step(self.now):
            self._generation[job_id] += 1
            self._job_worker[job_id] = worker_id
            self.schedule(
                self.now + self._durations[job_id], JOB_COMPLETE, job_id=job_id, generation=self._generation[job_id]
            )
            self._log(JOB_DISPATCH, job_id=job_id, worker_id=worker_id)

    def _on_job_complete(self, ev: SimEvent) -> bool:
        job_id = ev.payload["job_id"]
        if self._generation[job_id] != ev.payload["generation"]:
            return False  # job was requeued since this completion was scheduled
        self.schedd.set_state(job_id, COMPLETED)
        self.completion_times[job_id] = self.now
        worker = self.pool.workers[self._job_worker.pop(job_id)]
        self._log(JOB_COMPLETE, ev.seq, job_id=job_id, worker_id=worker.worker_id)
        if self.now - worker.registered_time >= worker.max_lifetime_s:
            self._terminate(worker, P.TERMINATE_LIFETIME)
        else:
            self.pool.release(worker, self.now)
            self.schedule(self.now + worker.max_idle_s, WORKER_IDLE_CHECK, worker_id=worker.worker_id)
        self._matchmake()
        return True

    def _terminate(self, worker: P.WorkerAd, reason: str) -> None:
        self.pool.remove(worker.worker_id)
        self._log(WORKER_EXIT, worker_id=worker.worker_id, pod_id=worker.pod_id, reason=reason)
        self.backend.pod_exited(worker.pod_id, self.now)
        self._trace_transitions()

    def _on_worker_check(self, ev: SimEvent) -> bool:
        if "pod_id" in ev.payload:
            exited = self.backend.pod_exited(ev.payload["pod_id"], self.now)
            if exited:
                self._log(ev.kind, ev.seq, pod_id=ev.payload["pod_id"], action="pod-exit")
                self._trace_transitions()
            return bool(exited)
        worker = self.pool.workers.get(ev.payload["worker_id"])
        if worker is None:
            return False
        action = P.worker_tick(worker, self.now)
        if action in (P.TERMINATE_IDLE, P.TERMINATE_LIFETIME):
            self._log(ev.kind, ev.seq, worker_id=worker.worker_id, action=action)
            self._terminate(worker, action)
            return True
        return False


def _handler_name(kind: str) -> str:
    if kind.endswith("-outage-start") or kind.endswith("-outage-end"):
        return "outage"
    if kind in (WORKER_IDLE_CHECK, WORKER_LIFETIME_CHECK):
        return "worker_check"
    return kind.replace("-", "_")


def run_scenario(
    scenario: ScenarioSpec,
    config: ProvisionerConfig,
    *,
    backend_override: str | None = None,
    seed_override: int | None = None,
    until: int | None = None,
    observer: Callable[[Simulation, SimEvent], None] | None = None,
) -> SimResult:
    """Run to quiescence or the horizon.  Identical inputs give identical
    metrics, audit log and trace."""
    sim = Simulation(
        scenario,
        config,
        backend_override=backend_override,
        seed_override=seed_override,
        until=until,
        observer=observer,
    )
    return sim.run()
