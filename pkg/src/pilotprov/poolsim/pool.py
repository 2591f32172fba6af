"""Simulated HTCondor side: the job queue (schedd) and the pool of pilot
workers that match against it."""

from __future__ import annotations

from dataclasses import dataclass

from .. import expr
from ..errors import SchedulerUnreachable, SimulationError
from ..expr import UNDEFINED, AttrBag, ExprNode, matches, string_list_member
from ..model import (
    COMPLETED,
    IDLE,
    LABEL_PROVISIONER,
    RUNNING,
    SITE_ATTR,
    START_ATTR,
    JobAd,
)

W_STARTING, W_IDLE, W_CLAIMED = "starting", "idle", "claimed"

NO_ACTION = "none"
TERMINATE_IDLE = "terminate-idle"
TERMINATE_LIFETIME = "terminate-lifetime"
DRAIN = "drain"


class Schedd:
    """Job queue.  Jobs are immutable :class:`JobAd` values replaced on each
    state change."""

    def __init__(self):
        self.jobs: dict[str, JobAd] = {}
        self.reachable = True

    def add(self, job: JobAd) -> None:
        if job.job_id in self.jobs:
            raise SimulationError(f"duplicate job id {job.job_id}")
        self.jobs[job.job_id] = job

    def set_state(self, job_id: str, state: str) -> JobAd:
        job = self.jobs[job_id].with_state(state)
        self.jobs[job_id] = job
        return job

    def ad_of(self, job: JobAd) -> AttrBag:
        return job.attrs.updated(JobStatus=job.job_status)

    def query(self, constraint: ExprNode) -> list[JobAd]:
        """Jobs whose ad (attributes plus ``JobStatus``) definitely satisfies
        ``constraint``, ordered by job_id."""
        if not self.reachable:
            raise SchedulerUnreachable("schedd unreachable")
        return [j for _, j in sorted(self.jobs.items()) if matches(constraint, self.ad_of(j))]

    def count(self, state: str) -> int:
        return sum(1 for j in self.jobs.values() if j.state == state)


@dataclass
class WorkerAd:
    worker_id: str
    pod_id: str
    attrs: AttrBag
    state: str
    registered_time: int
    max_idle_s: int
    max_lifetime_s: int
    start_expr: ExprNode = expr.TRUE_EXPR
    idle_since: int | None = None
    claimed_job_id: str | None = None

    @property
    def provisioner_id(self) -> str:
        return self.attrs.lookup(LABEL_PROVISIONER)


def job_fits_worker(job: JobAd, worker: WorkerAd) -> bool:
    """Resources fit, site preferences hold, and the worker's own start
    expression accepts the job."""
    ja, wa = job.attrs, worker.attrs
    for req, have in (("RequestCpus", "Cpus"), ("RequestMemory", "Memory"), ("RequestGpus", "Gpus")):
        need = ja.lookup(req)
        if need is UNDEFINED:
            continue
        if need > wa.lookup(have):
            return False
    site = wa.lookup(SITE_ATTR)
    desired = ja.lookup("DESIRED_Sites")
    if desired is not UNDEFINED and string_list_member(site, desired, "") is not True:
        return False
    undesired = ja.lookup("UNDESIRED_Sites")
    if undesired is not UNDEFINED and string_list_member(site, undesired, "") is not False:
        return False
    return matches(worker.start_expr, ja)


class Pool:
    """Collector plus a greedy negotiator."""

    def __init__(self, schedd: Schedd, token_name: str):
        self.schedd = schedd
        self.token_name = token_name
        self.workers: dict[str, WorkerAd] = {}
        self._seq = 0
        self.rejected_pods: list[str] = []

    def register_worker(self, pod, now: int) -> WorkerAd | None:
        """Join a freshly running pod's worker to the pool.  Returns ``None``
        when authentication fails; that pod then just idles out."""
        if pod.state != "Running":
            raise SimulationError(f"register_worker on pod {pod.pod_id} in state {pod.state}")
        spec = pod.spec
        if spec.secret_ref != self.token_name:
            self.rejected_pods.append(pod.pod_id)
            return None
        attrs = spec.injected_attrs.updated(Cpus=spec.cpus, Memory=spec.memory, Gpus=spec.gpus)
        start = attrs.lookup(START_ATTR)
        start_expr = expr.parse(start) if isinstance(start, str) else expr.TRUE_EXPR
        self._seq += 1
        worker = WorkerAd(
            worker_id=f"w-{self._seq:06d}",
            pod_id=pod.pod_id,
            attrs=attrs,
            state=W_STARTING,
            registered_time=now,
            max_idle_s=spec.max_idle_s,
            max_lifetime_s=spec.max_lifetime_s,
            start_expr=start_expr,
        )
        # no startup work is modelled: starting -> idle immediately
        worker.state = W_IDLE
        worker.idle_since = now
        self.workers[worker.worker_id] = worker
        return worker

    def worker_for_pod(self, pod_id: str) -> WorkerAd | None:
        for w in self.workers.values():
            if w.pod_id == pod_id:
                return w
        return None

    def remove(self, worker_id: str) -> WorkerAd:
        return self.workers.pop(worker_id)

    def matchmake_step(self, now: int) -> list[tuple[str, str]]:
        """Pair idle jobs (oldest first) with the first idle worker that can
        run them.  Returns ``(job_id, worker_id)`` pairs already applied."""
        idle_workers = sorted((w for w in self.workers.values() if w.state == W_IDLE), key=lambda w: w.worker_id)
        if not idle_workers:
            return []
        jobs = sorted(
            (j for j in self.schedd.jobs.values() if j.state == IDLE),
            key=lambda j: (j.submit_time, j.job_id),
        )
        dispatched = []
        for job in jobs:
            for w in idle_workers:
                if w.state == W_IDLE and job_fits_worker(job, w):
                    self.schedd.set_state(job.job_id, RUNNING)
                    w.state = W_CLAIMED
                    w.claimed_job_id = job.job_id
                    w.idle_since = None
                    dispatched.append((job.job_id, w.worker_id))
                    break
        return dispatched

    def release(self, worker: WorkerAd, now: int) -> None:
        """The claimed job finished: back to idle."""
        worker.state = W_IDLE
        worker.claimed_job_id = None
        worker.idle_since = now

    def count(self, state: str) -> int:
        return sum(1 for w in self.workers.values() if w.state == state)


def worker_tick(worker: WorkerAd, now: int) -> str:
    """Self-termination rule for one worker.

    Idle too long, or idle past the lifetime, means terminate.  A claimed
    worker past its lifetime drains: the job finishes first.
    """
    if worker.state == W_IDLE and now - worker.idle_since >= worker.max_idle_s:
        return TERMINATE_IDLE
    if now - worker.registered_time >= worker.max_lifetime_s:
        return DRAIN if worker.state == W_CLAIMED else TERMINATE_LIFETIME
    return NO_ACTION


__all__ = [
    "COMPLETED",
    "DRAIN",
    "NO_ACTION",
    "Pool",
    "Schedd",
    "TERMINATE_IDLE",
    "TERMINATE_LIFETIME",
    "W_CLAIMED",
    "W_IDLE",
    "W_STARTING",
    "WorkerAd",
    "job_fits_worker",
    "worker_tick",
]
