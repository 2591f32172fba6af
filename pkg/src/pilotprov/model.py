"""Jobs, clusters, pod specs and provisioner configuration."""

from __future__ import annotations

import hashlib
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, replace
from functools import cached_property

from . import expr
from .errors import ConfigError, InvalidPodSpec
from .expr import UNDEFINED, AttrBag, ExprNode, Value
from .inifile import IniSyntaxError, read_ini

DEFAULT_KEY_ATTRS = ("RequestCpus", "RequestMemory", "RequestGpus")

IDLE, RUNNING, COMPLETED = "idle", "running", "completed"
JOB_STATES = (IDLE, RUNNING, COMPLETED)
_JOB_TRANSITIONS = {(IDLE, RUNNING), (RUNNING, COMPLETED), (RUNNING, IDLE)}

# HTCondor JobStatus codes
JOB_STATUS = {IDLE: 1, RUNNING: 2, COMPLETED: 4}

LABEL_PROVISIONER = "provisioner_id"
LABEL_CLUSTER = "cluster_hash"
SITE_ATTR = "GLIDEIN_Site"
START_ATTR = "ProvisionerRequirements"


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


@dataclass(frozen=True)
class JobAd:
    job_id: str
    attrs: AttrBag
    state: str = IDLE
    submit_time: int = 0

    def __post_init__(self):
        if not isinstance(self.attrs, AttrBag):
            object.__setattr__(self, "attrs", AttrBag(self.attrs))
        if self.state not in JOB_STATES:
            raise ValueError(f"unknown job state {self.state!r}")
        for name, minimum in (("RequestCpus", 1), ("RequestMemory", 1)):
            v = self.attrs.lookup(name)
            if not _is_number(v) or v < minimum:
                raise ValueError(f"job {self.job_id}: {name} must be a number >= {minimum}, got {v!r}")
        gpus = self.attrs.lookup("RequestGpus")
        if gpus is not UNDEFINED and (not _is_number(gpus) or gpus < 0):
            raise ValueError(f"job {self.job_id}: RequestGpus must be >= 0, got {gpus!r}")

    def with_state(self, state: str) -> JobAd:
        if (self.state, state) not in _JOB_TRANSITIONS:
            raise ValueError(f"job {self.job_id}: illegal transition {self.state} -> {state}")
        return replace(self, state=state)

    @property
    def job_status(self) -> int:
        return JOB_STATUS[self.state]


@dataclass(frozen=True, eq=False)
class ClusterKey:
    """Projection of a job onto the clustering attributes, in config order.

    Equality is type-exact: ``1`` and ``1.0`` are different keys.
    """

    items: tuple[tuple[str, Value], ...]

    def _canon(self):
        return tuple((name.lower(), expr.canonical(v)) for name, v in self.items)

    def __eq__(self, other):
        if not isinstance(other, ClusterKey):
            return NotImplemented
        return self._canon() == other._canon()

    def __hash__(self):
        return hash(self._canon())

    def get(self, name: str) -> Value:
        for n, v in self.items:
            if n.lower() == name.lower():
                return v
        return UNDEFINED

    def render(self) -> str:
        return ";".join(f"{n}={expr.format_value(v)}" for n, v in self.items)

    @property
    def digest(self) -> str:
        return cluster_hash(self)

    def __repr__(self):
        return f"ClusterKey({self.render()})"


def cluster_hash(key: ClusterKey) -> str:
    """Stable across processes (no use of ``hash()``); short enough for a
    Kubernetes label value."""
    return hashlib.sha256(key.render().encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class JobCluster:
    key: ClusterKey
    job_ids: tuple[str, ...]

    @property
    def idle_count(self) -> int:
        return len(self.job_ids)


def cluster_key(job: JobAd, key_attrs: Sequence[str]) -> ClusterKey:
    if not key_attrs:
        raise ValueError("key_attrs must not be empty")
    return ClusterKey(tuple((name, job.attrs.lookup(name)) for name in key_attrs))


def cluster_jobs(jobs: Iterable[JobAd], key_attrs: Sequence[str]) -> list[JobCluster]:
    """Group idle jobs by identical key; largest groups first, ties broken by
    the rendered key."""
    groups: dict[ClusterKey, list[str]] = {}
    for job in jobs:
        if job.state != IDLE:
            raise ValueError(f"job {job.job_id} is {job.state}, only idle jobs can be clustered")
        groups.setdefault(cluster_key(job, key_attrs), []).append(job.job_id)
    clusters = [JobCluster(k, tuple(ids)) for k, ids in groups.items()]
    clusters.sort(key=lambda c: (-c.idle_count, c.key.render()))
    return clusters


@dataclass(frozen=True)
class AffinityTerm:
    key: str
    value: str
    negated: bool = False

    def satisfied_by(self, labels: dict[str, str]) -> bool:
        if self.negated:
            return labels.get(self.key) != self.value
        return labels.get(self.key) == self.value

    def render(self) -> str:
        return f"{'^' if self.negated else ''}{self.key}:{self.value}"


def parse_affinity_entry(entry: str) -> AffinityTerm:
    """``label:value`` requires the label; ``^label:value`` avoids it."""
    negated = entry.startswith("^")
    body = entry[1:] if negated else entry
    key, sep, value = body.partition(":")
    if not sep or not key:
        raise ValueError(f"affinity entry {entry!r} is not of the form [^]label:value")
    return AffinityTerm(key, value, negated)


@dataclass(frozen=True)
class PodSpec:
    cluster_key: ClusterKey
    cpus: int
    memory: int
    gpus: int
    image_ref: str
    labels: dict[str, str]
    injected_attrs: AttrBag
    secret_ref: str
    max_lifetime_s: int
    max_idle_s: int
    priority_class: str | None = None
    affinity_terms: tuple[AffinityTerm, ...] = ()

    def __post_init__(self):
        if LABEL_PROVISIONER not in self.labels or LABEL_CLUSTER not in self.labels:
            raise InvalidPodSpec("pod labels must carry provisioner_id and cluster_hash")
        if not self.max_lifetime_s > self.max_idle_s > 0:
            raise InvalidPodSpec("need max_lifetime_s > max_idle_s > 0")

    @property
    def provisioner_id(self) -> str:
        return self.labels[LABEL_PROVISIONER]

    def to_dict(self) -> dict:
        d = {
            "cluster_key": self.cluster_key.render(),
            "resources": {"cpus": self.cpus, "memory": self.memory, "gpus": self.gpus},
            "image": self.image_ref,
            "labels": dict(sorted(self.labels.items())),
            "affinity": [t.render() for t in self.affinity_terms],
            "injected_attrs": {k: expr.format_value(v) for k, v in self.injected_attrs.items()},
            "secret_ref": self.secret_ref,
            "max_lifetime_s": self.max_lifetime_s,
            "max_idle_s": self.max_idle_s,
        }
        # regular-priority pods carry no priority field at all
        if self.priority_class is not None:
            d["priority_class"] = self.priority_class
        return d


@dataclass(frozen=True)
class ProvisionerConfig:
    poll_interval_s: int = 60
    additional_requirements: str = ""
    cluster_key_attrs: tuple[str, ...] = DEFAULT_KEY_ATTRS
    max_submit_pods_per_cluster: int = 100
    priority_class: str | None = None
    node_affinity_dict: tuple[str, ...] = ()
    image_ref: str = "osg-pilot:latest"
    max_lifetime_s: int = 86400
    max_idle_s: int = 1200
    backend_name: str = "simkube"
    provisioner_id: str = "pilotprov"
    secret_ref: str = "pilot-token"
    site: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "cluster_key_attrs", tuple(self.cluster_key_attrs))
        object.__setattr__(self, "node_affinity_dict", tuple(self.node_affinity_dict))
        if self.poll_interval_s <= 0:
            raise ConfigError("poll_interval_s must be > 0", field="poll_interval_s")
        if self.max_submit_pods_per_cluster < 1:
            raise ConfigError("max_submit_pods_per_cluster must be >= 1", field="max_submit_pods_per_cluster")
        if self.max_idle_s <= 0:
            raise ConfigError("max_idle_s must be > 0", field="max_idle_s")
        if self.max_lifetime_s <= self.max_idle_s:
            raise ConfigError("max_lifetime_s must exceed max_idle_s", field="max_lifetime_s")
        if not self.cluster_key_attrs:
            raise ConfigError("cluster_key_attrs must not be empty", field="cluster_key_attrs")
        for name in self.cluster_key_attrs:
            if not expr.ATTR_NAME_RE.match(name):
                raise ConfigError(f"invalid attribute name {name!r}", field="cluster_key_attrs")
        lowered = {n.lower() for n in self.cluster_key_attrs}
        if not {"requestcpus", "requestmemory"} <= lowered:
            # pods are sized from the cluster key
            raise ConfigError("cluster_key_attrs must include RequestCpus and RequestMemory", field="cluster_key_attrs")
        if not self.provisioner_id:
            raise ConfigError("provisioner_id must not be empty", field="provisioner_id")
        for entry in self.node_affinity_dict:
            try:
                parse_affinity_entry(entry)
            except ValueError as e:
                raise ConfigError(str(e), field="node_affinity_dict") from None
        text = self.additional_requirements.strip()
        if text:
            try:
                node = expr.parse(text)
            except expr.ExprSyntaxError as e:
                raise ConfigError(f"additional_requirements: {e}", field="additional_requirements") from None
            text = expr.render(node)
        object.__setattr__(self, "additional_requirements", text)

    @cached_property
    def requirements(self) -> ExprNode:
        if not self.additional_requirements:
            return expr.TRUE_EXPR
        return expr.parse(self.additional_requirements)

    @cached_property
    def job_constraint(self) -> ExprNode:
        """Idle jobs passing the admin filter."""
        idle = expr.binary("==", expr.attr("JobStatus"), expr.literal(JOB_STATUS[IDLE]))
        if not self.additional_requirements:
            return idle
        return expr.binary("&&", idle, self.requirements)

    @cached_property
    def affinity_terms(self) -> tuple[AffinityTerm, ...]:
        return tuple(parse_affinity_entry(e) for e in self.node_affinity_dict)


def pod_spec_for(cluster: JobCluster, config: ProvisionerConfig) -> PodSpec:
    key = cluster.key

    def resource(name, default=None):
        v = key.get(name)
        if v is UNDEFINED and default is not None:
            return default
        if not _is_number(v):
            raise InvalidPodSpec(f"cannot size a pod: cluster key {key.render()} has no numeric {name}")
        return int(math.ceil(v))

    cpus = resource("RequestCpus")
    memory = resource("RequestMemory")
    gpus = resource("RequestGpus", default=0)

    injected = dict(key.items)
    injected[LABEL_PROVISIONER] = config.provisioner_id
    injected[START_ATTR] = expr.render(config.requirements)
    if config.site:
        injected[SITE_ATTR] = config.site

    return PodSpec(
        cluster_key=key,
        cpus=cpus,
        memory=memory,
        gpus=gpus,
        image_ref=config.image_ref,
        labels={LABEL_PROVISIONER: config.provisioner_id, LABEL_CLUSTER: cluster_hash(key)},
        injected_attrs=AttrBag(injected),
        secret_ref=config.secret_ref,
        max_lifetime_s=config.max_lifetime_s,
        max_idle_s=config.max_idle_s,
        priority_class=config.priority_class,
        affinity_terms=config.affinity_terms,
    )


# --------------------------------------------------------------------------
# Config file


def _split_list(text: str) -> tuple[str, ...]:
    return tuple(p for p in text.replace(",", " ").split() if p)


def _positive_int(text: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ValueError(f"expected an integer, got {text!r}") from None


def _optional_str(text: str) -> str | None:
    return text or None


# section -> key -> parser
CONFIG_SCHEMA = {
    "HTCondor": {
        "additional_requirements": str,
        "cluster_key_attrs": _split_list,
    },
    "k8s": {
        "node_affinity_dict": _split_list,
        "priority_class": _optional_str,
        "image_ref": str,
    },
    "provisioner": {
        "poll_interval_s": _positive_int,
        "max_submit_pods_per_cluster": _positive_int,
        "max_lifetime_s": _positive_int,
        "max_idle_s": _positive_int,
        "provisioner_id": str,
        "backend_name": str,
    },
    "pool": {
        "secret_ref": str,
        "site": _optional_str,
    },
}


def parse_config(text: str) -> ProvisionerConfig:
    """Read an admin config file.  Errors are :class:`ConfigError` with the
    source line of the offending header or key."""
    try:
        sections = read_ini(text)
    except IniSyntaxError as e:
        raise ConfigError(e.message, e.line) from None
    values = {}
    lines = {}
    seen_sections = set()
    for section in sections:
        schema = CONFIG_SCHEMA.get(section.name)
        if schema is None:
            raise ConfigError(f"unknown section [{section.name}]", section.line)
        if section.name in seen_sections:
            raise ConfigError(f"duplicate section [{section.name}]", section.line)
        seen_sections.add(section.name)
        for entry in section.entries:
            conv = schema.get(entry.key)
            if conv is None:
                raise ConfigError(f"unknown key {entry.key!r} in [{section.name}]", entry.line, entry.key)
            try:
                values[entry.key] = conv(entry.value)
            except ValueError as e:
                raise ConfigError(f"{entry.key}: {e}", entry.line, entry.key) from None
            lines[entry.key] = entry.line
    try:
        return ProvisionerConfig(**values)
    except ConfigError as e:
        raise e.at_line(lines.get(e.field)) from None


def render_config(config: ProvisionerConfig) -> str:
    """Normalized config text; parsing it back gives an equal config."""
    out = []
    for section, schema in CONFIG_SCHEMA.items():
        out.append(f"[{section}]")
        for key in schema:
            v = getattr(config, key)
            if v is None:
                continue
            if isinstance(v, tuple):
                v = ",".join(v)
            out.append(f"{key}={v}")
        out.append("")
    return "\n".join(out)
