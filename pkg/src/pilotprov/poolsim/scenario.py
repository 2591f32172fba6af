"""Scenario description and its file format.

Example::

    [scenario]
    horizon_s = 7200
    backend = simkube
    job_duration = fixed:300

    [arrival]
    time_s = 0
    count = 100
    RequestCpus = 1
    RequestMemory = 2048

    [node]
    node_id = k8s
    count = 25
    cpus = 4
    memory = 16384
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field

from .. import expr
from ..backends import NodeSpec
from ..errors import ScenarioError
from ..expr import AttrBag
from ..inifile import IniSyntaxError, Section, read_ini
from ..model import parse_affinity_entry

DURATION_KINDS = ("fixed", "uniform", "exponential")


@dataclass(frozen=True)
class DurationModel:
    """``fixed:S``, ``uniform:LO:HI`` or ``exponential:MEAN`` (seconds,
    rounded up to whole seconds, at least 1)."""

    kind: str = "fixed"
    params: tuple[int, ...] = (300,)

    @classmethod
    def parse(cls, text: str) -> DurationModel:
        kind, *rest = text.strip().split(":")
        arity = {"fixed": 1, "uniform": 2, "exponential": 1}
        if kind not in arity or len(rest) != arity[kind]:
            raise ValueError(f"bad job_duration {text!r}; use fixed:S, uniform:LO:HI or exponential:MEAN")
        params = tuple(int(p) for p in rest)
        if any(p < 1 for p in params) or (kind == "uniform" and params[0] > params[1]):
            raise ValueError(f"bad job_duration parameters {text!r}")
        return cls(kind, params)

    @property
    def random(self) -> bool:
        return self.kind != "fixed"

    def draw(self, rng: random.Random) -> int:
        if self.kind == "fixed":
            return self.params[0]
        if self.kind == "uniform":
            return rng.randint(self.params[0], self.params[1])
        return max(1, math.ceil(rng.expovariate(1.0 / self.params[0])))

    def render(self) -> str:
        return ":".join([self.kind, *map(str, self.params)])


@dataclass(frozen=True)
class ArrivalGroup:
    time: int
    count: int
    attrs: AttrBag
    duration_s: int | None = None


@dataclass(frozen=True)
class FaultWindow:
    target: str  # backend | scheduler
    start: int
    end: int


@dataclass(frozen=True)
class TenantSpec:
    """An extra provisioner sharing the pool and backend, e.g. a backfill
    one with a low priority class."""

    provisioner_id: str
    priority_class: str | None = None
    additional_requirements: str | None = None
    max_submit_pods_per_cluster: int | None = None


@dataclass(frozen=True)
class ScenarioSpec:
    arrivals: tuple[ArrivalGroup, ...] = ()
    horizon_s: int = 86400
    backend: str | None = None
    nodes: tuple[NodeSpec, ...] = ()
    lancium_capacity: tuple[int, int, int] | None = None
    start_latency_s: int = 30
    backend_step_s: int = 10
    job_duration: DurationModel = field(default_factory=DurationModel)
    seed: int | None = None
    faults: tuple[FaultWindow, ...] = ()
    pool_token: str = "pilot-token"
    tenants: tuple[TenantSpec, ...] = ()

    def __post_init__(self):
        if self.horizon_s < 0:
            raise ScenarioError("horizon_s must be >= 0")
        if self.backend_step_s < 1:
            raise ScenarioError("backend_step_s must be >= 1")
        if self.start_latency_s < 0:
            raise ScenarioError("start_latency_s must be >= 0")
        for a in self.arrivals:
            if not 0 <= a.time <= self.horizon_s:
                raise ScenarioError(f"arrival at t={a.time} outside [0, {self.horizon_s}]")
            if a.count < 1:
                raise ScenarioError("arrival count must be >= 1")
        for f in self.faults:
            if f.target not in ("backend", "scheduler"):
                raise ScenarioError(f"unknown outage target {f.target!r}")
            if not 0 <= f.start < f.end or f.start > self.horizon_s:
                raise ScenarioError(f"bad outage window [{f.start}, {f.end})")
        needs_seed = self.job_duration.random
        if needs_seed and self.seed is None:
            raise ScenarioError("seed is required with a random job_duration")
        ids = [t.provisioner_id for t in self.tenants]
        if len(set(ids)) != len(ids):
            raise ScenarioError("duplicate tenant provisioner_id")

    def resolve_backend(self, default: str | None = None, override: str | None = None) -> str:
        """Pick the backend and check the scenario describes its capacity."""
        name = override or self.backend or default or "simkube"
        if name == "simkube":
            if not self.nodes:
                raise ScenarioError("backend simkube needs at least one [node] block")
        elif name == "simlancium":
            if self.lancium_capacity is None:
                raise ScenarioError("backend simlancium needs a [lancium] block")
        else:
            raise ScenarioError(f"unknown backend {name!r}")
        return name


# --------------------------------------------------------------------------
# file format


def _int(entry) -> int:
    try:
        return int(entry.value)
    except ValueError:
        raise ScenarioError(f"{entry.key}: expected an integer, got {entry.value!r}", entry.line) from None


def _take(section: Section, allowed: dict, required=()) -> dict:
    """Convert known keys; unknown keys are errors."""
    out = {}
    for e in section.entries:
        conv = allowed.get(e.key)
        if conv is None:
            raise ScenarioError(f"unknown key {e.key!r} in [{section.name}]", e.line)
        try:
            out[e.key] = conv(e)
        except ScenarioError:
            raise
        except ValueError as err:
            raise ScenarioError(f"{e.key}: {err}", e.line) from None
    for key in required:
        if key not in out:
            raise ScenarioError(f"[{section.name}] is missing {key!r}", section.line)
    return out


def _str(entry) -> str:
    return entry.value


def _labels(entry) -> dict[str, str]:
    labels = {}
    for item in entry.value.replace(",", " ").split():
        term = parse_affinity_entry(item)
        if term.negated:
            raise ValueError(f"node label {item!r} cannot be negated")
        labels[term.key] = term.value
    return labels


def _parse_arrival(section: Section) -> ArrivalGroup:
    time_s = count = None
    duration = None
    attrs = []
    for e in section.entries:
        if e.key == "time_s":
            time_s = _int(e)
        elif e.key == "count":
            count = _int(e)
        elif e.key == "duration_s":
            duration = _int(e)
        elif expr.ATTR_NAME_RE.match(e.key):
            attrs.append((e.key, expr.parse_value(e.value)))
        else:
            raise ScenarioError(f"invalid attribute name {e.key!r}", e.line)
    return ArrivalGroup(
        time=0 if time_s is None else time_s,
        count=1 if count is None else count,
        attrs=AttrBag(attrs),
        duration_s=duration,
    )


def _parse_nodes(section: Section) -> list[NodeSpec]:
    v = _take(
        section,
        {"node_id": _str, "count": _int, "cpus": _int, "memory": _int, "gpus": _int, "labels": _labels},
        required=("node_id", "cpus", "memory"),
    )
    count = v.pop("count", 1)
    if count < 1:
        raise ScenarioError("node count must be >= 1", section.line)
    base = v.pop("node_id")
    width = len(str(count))
    names = [base] if count == 1 else [f"{base}-{i:0{width}d}" for i in range(1, count + 1)]
    try:
        return [NodeSpec(node_id=n, **v) for n in names]
    except ValueError as e:
        raise ScenarioError(str(e), section.line) from None


def parse_scenario(text: str) -> ScenarioSpec:
    try:
        sections = read_ini(text)
    except IniSyntaxError as e:
        raise ScenarioError(e.message, e.line) from None
    kwargs: dict = {}
    arrivals, nodes, faults, tenants = [], [], [], []
    seen_scenario = False
    for s in sections:
        if s.name == "scenario":
            if seen_scenario:
                raise ScenarioError("duplicate [scenario] section", s.line)
            seen_scenario = True
            v = _take(
                s,
                {
                    "horizon_s": _int,
                    "backend": _str,
                    "start_latency_s": _int,
                    "backend_step_s": _int,
                    "job_duration": lambda e: DurationModel.parse(e.value),
                    "seed": _int,
                    "pool_token": _str,
                },
            )
            kwargs.update(v)
        elif s.name == "arrival":
            arrivals.append(_parse_arrival(s))
        elif s.name == "node":
            nodes.extend(_parse_nodes(s))
        elif s.name == "lancium":
            if "lancium_capacity" in kwargs:
                raise ScenarioError("duplicate [lancium] section", s.line)
            v = _take(s, {"cpus": _int, "memory": _int, "gpus": _int}, required=("cpus", "memory"))
            kwargs["lancium_capacity"] = (v["cpus"], v["memory"], v.get("gpus", 0))
        elif s.name == "outage":
            v = _take(s, {"target": _str, "start_s": _int, "end_s": _int}, required=("target", "start_s", "end_s"))
            faults.append(FaultWindow(v["target"], v["start_s"], v["end_s"]))
        elif s.name == "tenant":
            v = _take(
                s,
                {
                    "provisioner_id": _str,
                    "priority_class": lambda e: e.value or None,
                    "additional_requirements": _str,
                    "max_submit_pods_per_cluster": _int,
                },
                required=("provisioner_id",),
            )
            tenants.append(TenantSpec(**v))
        else:
            raise ScenarioError(f"unknown section [{s.name}]", s.line)
    if len({n.node_id for n in nodes}) != len(nodes):
        raise ScenarioError("duplicate node_id")
    try:
        return ScenarioSpec(
            arrivals=tuple(arrivals), nodes=tuple(nodes), faults=tuple(faults), tenants=tuple(tenants), **kwargs
        )
    except ScenarioError:
        raise
    except (TypeError, ValueError) as e:
        raise ScenarioError(str(e)) from None
