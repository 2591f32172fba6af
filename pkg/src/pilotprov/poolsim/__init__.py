"""Deterministic simulation of the pool, its workers and the provisioner."""

from .engine import METRIC_FIELDS, MetricsSample, SimEvent, SimResult, Simulation, run_scenario
from .pool import Pool, Schedd, WorkerAd, job_fits_worker, worker_tick
from .scenario import ArrivalGroup, DurationModel, FaultWindow, ScenarioSpec, TenantSpec, parse_scenario

__all__ = [
    "METRIC_FIELDS",
    "ArrivalGroup",
    "DurationModel",
    "FaultWindow",
    "MetricsSample",
    "Pool",
    "ScenarioSpec",
    "Schedd",
    "SimEvent",
    "SimResult",
    "Simulation",
    "TenantSpec",
    "WorkerAd",
    "job_fits_worker",
    "parse_scenario",
    "run_scenario",
    "worker_tick",
]
