import pytest
from hypothesis import given
from hypothesis import strategies as st

from pilotprov.errors import ConfigError, InvalidPodSpec
from pilotprov.expr import UNDEFINED, AttrBag
from pilotprov.model import (
    COMPLETED,
    IDLE,
    RUNNING,
    DEFAULT_KEY_ATTRS,
    ClusterKey,
    JobAd,
    JobCluster,
    ProvisionerConfig,
    cluster_hash,
    cluster_jobs,
    cluster_key,
    parse_affinity_entry,
    parse_config,
    pod_spec_for,
    render_config,
)


def job(job_id, cpus=1, memory=2048, gpus=None, **extra):
    attrs = {"RequestCpus": cpus, "RequestMemory": memory, **extra}
    if gpus is not None:
        attrs["RequestGpus"] = gpus
    return JobAd(job_id, AttrBag(attrs))


def test_cluster_key_projects_in_config_order():
    key = cluster_key(job("j1", 1, 2048), DEFAULT_KEY_ATTRS)
    assert key.items == (("RequestCpus", 1), ("RequestMemory", 2048), ("RequestGpus", UNDEFINED))


def test_cluster_jobs_groups_identical_shapes():
    jobs = [job("j1"), job("j2"), job("j3", cpus=4)]
    clusters = cluster_jobs(jobs, DEFAULT_KEY_ATTRS)
    assert [c.job_ids for c in clusters] == [("j1", "j2"), ("j3",)]
    assert [c.idle_count for c in clusters] == [2, 1]


def test_cluster_jobs_rejects_non_idle():
    with pytest.raises(ValueError):
        cluster_jobs([job("j1").with_state(RUNNING)], DEFAULT_KEY_ATTRS)


def test_cluster_key_equality_is_type_exact():
    a = cluster_key(job("a", memory=2048), DEFAULT_KEY_ATTRS)
    b = cluster_key(job("b", memory=2048.0), DEFAULT_KEY_ATTRS)
    assert a != b
    assert len(cluster_jobs([job("a", memory=2048), job("b", memory=2048.0)], DEFAULT_KEY_ATTRS)) == 2


def test_cluster_hash_is_frozen():
    # frozen value; a change here breaks label continuity for running pods
    key = cluster_key(job("j", 1, 2048), DEFAULT_KEY_ATTRS)
    assert key.render() == "RequestCpus=1;RequestMemory=2048;RequestGpus=undefined"
    assert cluster_hash(key) == cluster_hash(ClusterKey(key.items))
    assert len(cluster_hash(key)) == 16
    import hashlib

    assert cluster_hash(key) == hashlib.sha256(key.render().encode()).hexdigest()[:16]


@pytest.mark.parametrize(
    "attrs",
    [{"RequestCpus": 0, "RequestMemory": 1}, {"RequestCpus": 1, "RequestMemory": 0}, {"RequestCpus": 1}],
)
def test_job_ad_validates_resources(attrs):
    with pytest.raises(ValueError):
        JobAd("bad", AttrBag(attrs))


def test_job_state_machine():
    j = job("j")
    assert j.with_state(RUNNING).with_state(IDLE).state == IDLE
    with pytest.raises(ValueError):
        j.with_state(COMPLETED)


# --------------------------------------------------------------------------
# brute-force partition oracle


def brute_partition(jobs, key_attrs):
    """Quadratic grouping with a hand-written equality on (type, value)."""

    def same(a, b):
        for name in key_attrs:
            x, y = a.attrs.lookup(name), b.attrs.lookup(name)
            if type(x) is not type(y) or x != y:
                return False
        return True

    groups = []
    for j in jobs:
        for g in groups:
            if same(g[0], j):
                g.append(j)
                break
        else:
            groups.append([j])
    return sorted(sorted(x.job_id for x in g) for g in groups)


shapes = st.tuples(
    st.sampled_from([1, 2, 4, 8]),
    st.sampled_from([1024, 2048, 2048.0, 4096]),
    st.sampled_from([None, 0, 1]),
)


@given(st.lists(shapes, min_size=1, max_size=5, unique=True).flatmap(
    lambda ss: st.lists(st.sampled_from(ss), max_size=50)
))
def test_cluster_jobs_matches_brute_force(picks):
    jobs = [job(f"j{i}", c, m, g) for i, (c, m, g) in enumerate(picks)]
    got = cluster_jobs(jobs, DEFAULT_KEY_ATTRS)
    assert sorted(sorted(c.job_ids) for c in got) == brute_partition(jobs, DEFAULT_KEY_ATTRS)
    assert sum(c.idle_count for c in got) == len(jobs)
    counts = [c.idle_count for c in got]
    assert counts == sorted(counts, reverse=True)


# --------------------------------------------------------------------------
# pod specs


def test_pod_spec_from_example_config(site_filter_text):
    config = parse_config(site_filter_text)
    cluster = JobCluster(cluster_key(job("j", 2, 4096, 1), DEFAULT_KEY_ATTRS), ("j",))
    spec = pod_spec_for(cluster, config)
    assert (spec.cpus, spec.memory, spec.gpus) == (2, 4096, 1)
    assert len(spec.affinity_terms) == 1
    term = spec.affinity_terms[0]
    assert (term.key, term.value, term.negated) == ("nautilus.io/low-power", "true", True)
    assert spec.labels == {"provisioner_id": "pilotprov", "cluster_hash": cluster_hash(cluster.key)}
    assert spec.injected_attrs["RequestCpus"] == 2
    assert spec.injected_attrs["provisioner_id"] == "pilotprov"
    # regular priority: the field is absent, not empty
    assert spec.priority_class is None
    assert "priority_class" not in spec.to_dict()


def test_pod_spec_defaults_gpus_to_zero():
    cluster = JobCluster(cluster_key(job("j"), DEFAULT_KEY_ATTRS), ("j",))
    assert pod_spec_for(cluster, ProvisionerConfig()).gpus == 0


def test_pod_spec_carries_priority_class():
    cluster = JobCluster(cluster_key(job("j"), DEFAULT_KEY_ATTRS), ("j",))
    spec = pod_spec_for(cluster, ProvisionerConfig(priority_class="opportunistic2"))
    assert spec.to_dict()["priority_class"] == "opportunistic2"


def test_pod_spec_injects_site():
    cluster = JobCluster(cluster_key(job("j"), DEFAULT_KEY_ATTRS), ("j",))
    spec = pod_spec_for(cluster, ProvisionerConfig(site="SDSC-PRP"))
    assert spec.injected_attrs["GLIDEIN_Site"] == "SDSC-PRP"


def test_pod_spec_rejects_bad_limits():
    cluster = JobCluster(cluster_key(job("j"), DEFAULT_KEY_ATTRS), ("j",))
    spec = pod_spec_for(cluster, ProvisionerConfig())
    from dataclasses import replace

    with pytest.raises(InvalidPodSpec):
        replace(spec, max_idle_s=spec.max_lifetime_s)
    with pytest.raises(InvalidPodSpec):
        replace(spec, labels={"provisioner_id": "x"})


def test_affinity_entry_parsing():
    t = parse_affinity_entry("^nautilus.io/low-power:true")
    assert t.negated and not t.satisfied_by({"nautilus.io/low-power": "true"})
    assert t.satisfied_by({})
    t = parse_affinity_entry("zone:west")
    assert t.satisfied_by({"zone": "west"}) and not t.satisfied_by({"zone": "east"})
    with pytest.raises(ValueError):
        parse_affinity_entry("nocolon")


# --------------------------------------------------------------------------
# config files


def test_parse_example_config(site_filter_text):
    from pilotprov.expr import conjuncts

    config = parse_config(site_filter_text)
    assert len(conjuncts(config.requirements)) == 4
    assert config.node_affinity_dict == ("^nautilus.io/low-power:true",)


def test_empty_config_gets_defaults():
    config = parse_config("")
    assert config == ProvisionerConfig()
    assert config.poll_interval_s == 60


def test_zero_quota_is_rejected_with_line():
    with pytest.raises(ConfigError) as exc:
        parse_config("[provisioner]\n\nmax_submit_pods_per_cluster = 0\n")
    assert exc.value.line == 3


@pytest.mark.parametrize(
    "text",
    [
        "[nope]\nx = 1\n",
        "[provisioner]\nbogus = 1\n",
        "[provisioner]\npoll_interval_s = soon\n",
        "[HTCondor]\nadditional_requirements = a && (b\n",
        "[HTCondor]\ncluster_key_attrs = RequestGpus\n",
        "[provisioner]\nmax_idle_s = 100\nmax_lifetime_s = 100\n",
        "[provisioner]\npoll_interval_s = 1\npoll_interval_s = 2\n",
    ],
)
def test_invalid_configs(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_config_round_trip(site_filter_text):
    config = parse_config(site_filter_text)
    again = parse_config(render_config(config))
    assert again == config


@given(
    st.integers(1, 3600),
    st.integers(1, 500),
    st.sampled_from([None, "opportunistic2"]),
    st.sampled_from(["", "ProjectName isnt undefined", 'a == "x" || !b']),
    st.sampled_from([None, "SDSC-PRP"]),
)
def test_config_round_trip_property(poll, quota, prio, req, site):
    config = ProvisionerConfig(
        poll_interval_s=poll,
        max_submit_pods_per_cluster=quota,
        priority_class=prio,
        additional_requirements=req,
        site=site,
    )
    assert parse_config(render_config(config)) == config
