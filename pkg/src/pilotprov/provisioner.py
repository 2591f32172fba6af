"""Demand-driven provisioning loop.

Each poll reads the idle jobs that pass the admin filter and this
provisioner's pods, groups jobs into clusters, and submits just enough pods
to cover idle jobs that no pending pod is already waiting for.  The loop
only ever adds pods; they go away by self-terminating.
"""

from __future__ import annotations

import json
import logging
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass, field
from typing import Protocol

from .errors import InvalidPodSpec, Unreachable
from .expr import ExprNode
from .model import (
    LABEL_CLUSTER,
    LABEL_PROVISIONER,
    ClusterKey,
    JobAd,
    JobCluster,
    PodSpec,
    ProvisionerConfig,
    cluster_hash,
    cluster_jobs,
    pod_spec_for,
)

log = logging.getLogger(__name__)

_PENDING = ("Queued", "Starting")
_RUNNING = "Running"


class Scheduler(Protocol):
    def query(self, constraint: ExprNode) -> list[JobAd]: ...


class PodBackend(Protocol):
    """Everything the provisioner may ask of a backend.  There is no delete."""

    def list_pods(self, selector: dict[str, str]) -> list: ...

    def submit_pods(self, spec: PodSpec, count: int) -> list[str]: ...


@dataclass(frozen=True)
class ClusterDemand:
    key: ClusterKey
    job_ids: tuple[str, ...]
    queued_pods: int
    running_pods: int

    @property
    def idle_jobs(self) -> int:
        return len(self.job_ids)


@dataclass(frozen=True)
class DemandSnapshot:
    time: int
    clusters: tuple[ClusterDemand, ...]

    def get(self, key: ClusterKey) -> ClusterDemand | None:
        for c in self.clusters:
            if c.key == key:
                return c
        return None


@dataclass(frozen=True)
class SubmitDecision:
    cluster_key: ClusterKey
    pod_spec: PodSpec
    count: int
    reason: str
    pod_ids: tuple[str, ...] = ()
    failure: str | None = None

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("a submit decision needs count >= 1")

    @property
    def submitted(self) -> int:
        return 0 if self.failure else self.count


def build_snapshot(jobs: Iterable[JobAd], pods: Iterable, config: ProvisionerConfig, now: int) -> DemandSnapshot:
    """Join idle jobs with this provisioner's pods, cluster by cluster."""
    clusters = cluster_jobs(jobs, config.cluster_key_attrs)
    pending: dict[str, int] = {}
    running: dict[str, int] = {}
    pod_keys: dict[str, ClusterKey] = {}
    for pod in pods:
        if pod.labels.get(LABEL_PROVISIONER) != config.provisioner_id:
            continue
        h = pod.labels.get(LABEL_CLUSTER)
        if pod.state in _PENDING:
            pending[h] = pending.get(h, 0) + 1
        elif pod.state == _RUNNING:
            running[h] = running.get(h, 0) + 1
        else:
            continue
        pod_keys.setdefault(h, pod.spec.cluster_key)

    out = []
    seen = set()
    for c in clusters:
        h = cluster_hash(c.key)
        seen.add(h)
        out.append(ClusterDemand(c.key, c.job_ids, pending.get(h, 0), running.get(h, 0)))
    # clusters with live pods but no idle jobs: no demand, but they use quota
    extra = [(k.render(), h, k) for h, k in pod_keys.items() if h not in seen]
    for _, h, k in sorted(extra):
        out.append(ClusterDemand(k, (), pending.get(h, 0), running.get(h, 0)))
    return DemandSnapshot(now, tuple(out))


def compute_submissions(snapshot: DemandSnapshot, config: ProvisionerConfig) -> list[SubmitDecision]:
    """Per cluster: cover idle jobs not already covered by pending pods,
    without letting pending+running exceed the per-cluster quota."""
    decisions = []
    quota = config.max_submit_pods_per_cluster
    for c in snapshot.clusters:
        want = max(0, c.idle_jobs - c.queued_pods)
        headroom = max(0, quota - (c.queued_pods + c.running_pods))
        count = min(want, headroom)
        if count <= 0:
            continue
        reason = (
            f"idle={c.idle_jobs} queued={c.queued_pods} running={c.running_pods} "
            f"want={want} headroom={headroom}"
        )
        spec = pod_spec_for(JobCluster(c.key, c.job_ids), config)
        decisions.append(SubmitDecision(c.key, spec, count, reason))
    return decisions


@dataclass
class TickRecord:
    """One poll's worth of audit data."""

    provisioner_id: str
    time: int
    snapshot: DemandSnapshot | None = None
    decisions: list[SubmitDecision] = field(default_factory=list)
    errors: list[str] = field(default_factory=list)
    retryable: bool = False

    def to_dict(self) -> dict:
        clusters = {}
        if self.snapshot is not None:
            for c in self.snapshot.clusters:
                clusters[c.key.render()] = {
                    "idle": c.idle_jobs,
                    "queued": c.queued_pods,
                    "running": c.running_pods,
                    "submitted": 0,
                }
        for d in self.decisions:
            entry = clusters.setdefault(
                d.cluster_key.render(), {"idle": 0, "queued": 0, "running": 0, "submitted": 0}
            )
            entry["submitted"] += d.submitted
        return {
            "provisioner_id": self.provisioner_id,
            "time": self.time,
            "clusters": clusters,
            "errors": list(self.errors),
        }

    @property
    def submitted(self) -> int:
        return sum(d.submitted for d in self.decisions)


def poll(sched: Scheduler, backend: PodBackend, config: ProvisionerConfig, now: int) -> TickRecord:
    """Run one provisioning pass and return its full audit record.

    Unreachable services turn the pass into a no-op with ``retryable`` set;
    a failed submission for one cluster is noted on its decision and does not
    stop the others.
    """
    record = TickRecord(config.provisioner_id, now)
    try:
        jobs = sched.query(config.job_constraint)
        pods = backend.list_pods({LABEL_PROVISIONER: config.provisioner_id})
    except Unreachable as e:
        log.warning("poll at t=%s skipped: %s", now, e)
        record.errors.append(str(e))
        record.retryable = True
        return record

    snapshot = build_snapshot(jobs, pods, config, now)
    record.snapshot = snapshot
    for d in compute_submissions(snapshot, config):
        try:
            ids = backend.submit_pods(d.pod_spec, d.count)
        except (Unreachable, InvalidPodSpec) as e:
            log.warning("submit of %d pods for %s failed: %s", d.count, d.cluster_key.render(), e)
            record.errors.append(f"{d.cluster_key.render()}: {e}")
            record.retryable = record.retryable or isinstance(e, Unreachable)
            d = SubmitDecision(d.cluster_key, d.pod_spec, d.count, d.reason, failure=str(e))
        else:
            d = SubmitDecision(d.cluster_key, d.pod_spec, d.count, d.reason, pod_ids=tuple(ids))
        record.decisions.append(d)
    return record


def poll_once(sched: Scheduler, backend: PodBackend, config: ProvisionerConfig, now: int) -> list[SubmitDecision]:
    return poll(sched, backend, config, now).decisions


class VirtualClock:
    """Injected clock.  ``on_advance(old, new)`` lets a test harness move the
    rest of the world forward while the loop sleeps."""

    def __init__(self, start: int = 0, on_advance: Callable[[int, int], None] | None = None):
        self._now = start
        self.on_advance = on_advance

    def now(self) -> int:
        return self._now

    def sleep(self, seconds: int) -> None:
        old = self._now
        self._now += seconds
        if self.on_advance is not None:
            self.on_advance(old, self._now)


def run_loop(
    sched: Scheduler,
    backend: PodBackend,
    config: ProvisionerConfig,
    clock,
    stop: Callable[[int, Sequence[TickRecord]], bool],
) -> list[TickRecord]:
    """Poll every ``poll_interval_s`` of ``clock`` until ``stop(now, log)``."""
    audit: list[TickRecord] = []
    while not stop(clock.now(), audit):
        audit.append(poll(sched, backend, config, clock.now()))
        clock.sleep(config.poll_interval_s)
    return audit


def audit_jsonl(records: Iterable[TickRecord]) -> str:
    return "".join(json.dumps(r.to_dict(), separators=(",", ":")) + "\n" for r in records)
