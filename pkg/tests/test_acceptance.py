"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""

from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path

from hypothesis import given, settings
from hypothesis import strategies as st

from pilotprov import cli
from pilotprov.backends import PREEMPTED, QUEUED, RUNNING, STARTING, NodeSpec, SimKube, audit_transitions
from pilotprov.expr import UNDEFINED, AttrBag, eval_expr, is_identical, parse
from pilotprov.model import (
    COMPLETED,
    DEFAULT_KEY_ATTRS,
    LABEL_CLUSTER,
    LABEL_PROVISIONER,
    JobAd,
    ProvisionerConfig,
    cluster_jobs,
    parse_config,
)
from pilotprov.poolsim import Schedd, Simulation, parse_scenario, run_scenario
from pilotprov.provisioner import poll, poll_once

SAMPLES = Path(__file__).parent.parent / "samples"
DATA = Path(__file__).parent / "data"


@contextmanager
def criterion(capsys, number, title):
    status = "FAIL"
    try:
        yield
        status = "PASS"
    finally:
        with capsys.disabled():
            print(f"\n[acceptance] criterion {number:>2}: {status}  {title}")


def convergence(**changes):
    config = replace(parse_config((SAMPLES / "convergence.conf").read_text()), **changes)
    return parse_scenario((SAMPLES / "convergence.scenario").read_text()), config


# --------------------------------------------------------------------------
# 1. three-valued logic

T, F, U = True, False, UNDEFINED
AND_TABLE = {
    (T, T): T, (T, F): F, (T, U): U,
    (F, T): F, (F, F): F, (F, U): F,
    (U, T): U, (U, F): F, (U, U): U,
}
OR_TABLE = {
    (T, T): T, (T, F): T, (T, U): T,
    (F, T): T, (F, F): F, (F, U): U,
    (U, T): T, (U, F): U, (U, U): U,
}
NOT_TABLE = {T: F, F: T, U: U}
SRC = {T: "true", F: "false", U: "undefined"}


def test_criterion_01_truth_tables(capsys):
    with criterion(capsys, 1, "three-valued truth tables (27+3 assertions)"):
        order = {F: 0, U: 1, T: 2}
        checked = 0
        for (a, b), want in AND_TABLE.items():
            # the frozen table itself agrees with Kleene min/max
            assert order[want] == min(order[a], order[b]) and order[OR_TABLE[a, b]] == max(order[a], order[b])
            assert is_identical(eval_expr(parse(f"{SRC[a]} && {SRC[b]}")), want)
            assert is_identical(eval_expr(parse(f"{SRC[a]} || {SRC[b]}")), OR_TABLE[a, b])
            # the same tables reached through attributes; absent ones are undefined
            bag = AttrBag({k: v for k, v in (("A", a), ("B", b)) if v is not U})
            assert is_identical(eval_expr(parse("!(A && B) || false"), bag), OR_TABLE[NOT_TABLE[want], F])
            checked += 3
        for a, want in NOT_TABLE.items():
            assert is_identical(eval_expr(parse(f"!{SRC[a]}")), want)
            checked += 1
        assert checked == 30


# --------------------------------------------------------------------------
# 2. site filter end to end

QUEUE = [
    # job id, attrs, passes by hand evaluation
    ("plain", {"ProjectName": "P", "SingularityImage": "img"}, True),
    ("no-project", {"SingularityImage": "img"}, False),
    ("desired-hit", {"ProjectName": "P", "SingularityImage": "img", "DESIRED_Sites": "UNL,SDSC-PRP"}, True),
    ("undesired-hit", {"ProjectName": "P", "SingularityImage": "img", "UNDESIRED_Sites": "SDSC-PRP"}, False),
    ("no-image", {"ProjectName": "P"}, False),
    ("desired-miss", {"ProjectName": "P", "SingularityImage": "img", "DESIRED_Sites": "UNL"}, False),
]


def test_criterion_02_site_filter_demand(capsys):
    with criterion(capsys, 2, "example filter config counts exactly the hand-evaluated jobs"):
        config = parse_config((DATA / "site_filter.conf").read_text())
        sched = Schedd()
        for job_id, attrs, _ in QUEUE:
            sched.add(JobAd(job_id, AttrBag({"RequestCpus": 1, "RequestMemory": 2048, **attrs})))
        backend = SimKube([NodeSpec("n", 8, 32768)])
        record = poll(sched, backend, config, 0)
        counted = {j for c in record.snapshot.clusters for j in c.job_ids}
        expected = {job_id for job_id, _, ok in QUEUE if ok}
        mismatches = counted ^ expected
        assert len(mismatches) == 0, mismatches
        assert sum(d.count for d in record.decisions) == len(expected) == 2


# --------------------------------------------------------------------------
# 3. demand convergence


def test_criterion_03_demand_convergence(capsys):
    with criterion(capsys, 3, "100 jobs complete, <=100 pods, no decisions after last completion + poll"):
        scenario, config = convergence(max_submit_pods_per_cluster=200)
        r = run_scenario(scenario, config)
        assert r.completed_jobs == 100
        assert r.pods_submitted <= 100
        cutoff = r.last_completion + config.poll_interval_s
        late = [rec.time for rec in r.audit if rec.decisions and rec.time > cutoff]
        assert late == []


# --------------------------------------------------------------------------
# 4. quota safety


def test_criterion_04_quota_safety(capsys):
    with criterion(capsys, 4, "quota 10 never exceeded per cluster; 50 jobs complete through pod reuse"):
        scenario, config = convergence(max_submit_pods_per_cluster=10, max_idle_s=1200)
        scenario = replace(scenario, arrivals=(replace(scenario.arrivals[0], count=50),))
        worst = 0

        def observe(sim, ev):
            nonlocal worst
            live = {}
            for p in sim.backend.all_pods():
                if p.labels[LABEL_PROVISIONER] == config.provisioner_id and p.state in (QUEUED, STARTING, RUNNING):
                    live[p.labels[LABEL_CLUSTER]] = live.get(p.labels[LABEL_CLUSTER], 0) + 1
            worst = max([worst, *live.values()])
            assert all(n <= 10 for n in live.values()), (ev, live)

        r = run_scenario(scenario, config, observer=observe)
        assert worst == 10
        assert r.completed_jobs == 50
        # pods were reused: far fewer pods than jobs
        assert r.pods_submitted < 50


# --------------------------------------------------------------------------
# 5. idempotence

job_shapes = st.sampled_from([(1, 1024), (1, 2048), (2, 4096), (4, 8192)])


@st.composite
def frozen_worlds(draw):
    jobs = draw(st.lists(job_shapes, max_size=12))
    existing = draw(st.lists(job_shapes, max_size=10))
    steps = draw(st.integers(0, 3))
    quota = draw(st.integers(1, 8))
    foreign = draw(st.booleans())
    return jobs, existing, steps, quota, foreign


def test_criterion_05_idempotence(capsys):
    seen = []

    @settings(max_examples=200, derandomize=True, deadline=None, database=None)
    @given(frozen_worlds())
    def check(world):
        jobs, existing, steps, quota, foreign = world
        config = ProvisionerConfig(max_submit_pods_per_cluster=quota)
        sched = Schedd()
        for i, (cpus, mem) in enumerate(jobs):
            sched.add(JobAd(f"j{i:03d}", AttrBag(RequestCpus=cpus, RequestMemory=mem)))
        backend = SimKube([NodeSpec("a", 4, 16384), NodeSpec("b", 2, 8192)], start_latency_s=10)
        # earlier history: pods from a previous poll and from another provisioner, partly scheduled
        if existing:
            prior = Schedd()
            for i, (cpus, mem) in enumerate(existing):
                prior.add(JobAd(f"p{i:03d}", AttrBag(RequestCpus=cpus, RequestMemory=mem)))
            poll_once(prior, backend, config, 0)
        if foreign:
            poll_once(sched, backend, replace(config, provisioner_id="someone-else"), 0)
        for t in range(steps):
            backend.step(10 * t)
        poll_once(sched, backend, config, 100)
        assert poll_once(sched, backend, config, 100) == []
        seen.append(1)

    with criterion(capsys, 5, "second consecutive poll_once is empty on 200 frozen worlds"):
        check()
        assert len(seen) >= 200


# --------------------------------------------------------------------------
# 6. down-scale convergence


def test_criterion_06_downscale(capsys):
    with criterion(capsys, 6, "workers drain to 0 within the waste bound; waste <= pods * max_idle"):
        scenario, config = convergence(max_submit_pods_per_cluster=200, max_idle_s=600)
        r = run_scenario(scenario, config)
        bound = r.last_completion + 600 + config.poll_interval_s + scenario.start_latency_s
        zero_at = next(
            m.time for m in r.metrics if m.time >= r.last_completion and m.running_workers == 0
        )
        assert zero_at <= bound
        assert r.metrics[-1].running_workers == 0
        assert r.wasted_seconds <= r.pods_submitted * 600


# --------------------------------------------------------------------------
# 7. preemption


def test_criterion_07_preemption(capsys):
    with criterion(capsys, 7, "backfill preempted, regular pods run, requeued jobs complete, no illegal transitions"):
        scenario = parse_scenario((SAMPLES / "backfill.scenario").read_text())
        config = parse_config((SAMPLES / "backfill.conf").read_text())
        seen_full = False

        def observe(sim, ev):
            nonlocal seen_full
            running = [p for p in sim.backend.all_pods() if p.labels[LABEL_PROVISIONER] == "backfill" and p.state == RUNNING]
            seen_full = seen_full or len(running) == 2

        sim = Simulation(scenario, config, observer=observe)
        r = sim.run()
        owner = {p.pod_id: p.labels[LABEL_PROVISIONER] for p in sim.backend.all_pods()}
        assert seen_full
        preempted = [t.pod_id for t in r.transitions if t.new == PREEMPTED]
        assert len(preempted) == 2 and all(owner[p] == "backfill" for p in preempted)
        regular_ran = {t.pod_id for t in r.transitions if t.new == RUNNING and owner[t.pod_id] == config.provisioner_id}
        assert len(regular_ran) == 2
        requeued = {e["job_id"] for e in r.trace if e["kind"] == "job-requeue"}
        assert len(requeued) == 2
        assert all(r.jobs[j].state == COMPLETED for j in requeued)
        assert r.completed_jobs == 4 and r.quiescent
        assert audit_transitions(r.transitions) == []


# --------------------------------------------------------------------------
# 8. backend parity

PARITY = """
[scenario]
horizon_s = 20000
job_duration = fixed:400

[arrival]
time_s = 0
count = 12
RequestCpus = 1
RequestMemory = 2048

[arrival]
time_s = 90
count = 8
RequestCpus = 2
RequestMemory = 4096

[node]
node_id = big
count = 10
cpus = 8
memory = 65536

[lancium]
cpus = 80
memory = 655360
"""


def decision_trace(result):
    return [(rec.time, [(d.cluster_key.render(), d.count) for d in rec.decisions]) for rec in result.audit]


def test_criterion_08_backend_parity(capsys):
    with criterion(capsys, 8, "SimKube and SimLancium give identical decision traces"):
        scenario = parse_scenario(PARITY)
        kube = run_scenario(scenario, ProvisionerConfig(), backend_override="simkube")
        lancium = run_scenario(scenario, ProvisionerConfig(), backend_override="simlancium")
        assert kube.backend_name == "simkube" and lancium.backend_name == "simlancium"
        assert kube.completed_jobs == lancium.completed_jobs == 20
        assert decision_trace(kube) == decision_trace(lancium)
        assert sum(n for _, ds in decision_trace(kube) for _, n in ds) == 20


# --------------------------------------------------------------------------
# 9. determinism


def test_criterion_09_determinism(capsys, tmp_path):
    with criterion(capsys, 9, "two cmd_run invocations give byte-identical outputs"):
        outs = []
        for name in ("a", "b"):
            argv = [
                "run",
                "--config", str(SAMPLES / "convergence.conf"),
                "--scenario", str(SAMPLES / "convergence.scenario"),
                "--out", str(tmp_path / name),
            ]
            assert cli.main(argv) == 0
            outs.append(tmp_path / name)
        capsys.readouterr()
        for fname in ("metrics.csv", "trace.jsonl", "audit.jsonl"):
            assert (outs[0] / fname).read_bytes() == (outs[1] / fname).read_bytes()


# --------------------------------------------------------------------------
# 10. clustering oracle


def brute_partition(jobs):
    groups = []
    for j in jobs:
        for g in groups:
            if all(
                type(g[0].attrs.lookup(a)) is type(j.attrs.lookup(a)) and g[0].attrs.lookup(a) == j.attrs.lookup(a)
                for a in DEFAULT_KEY_ATTRS
            ):
                g.append(j)
                break
        else:
            groups.append([j])
    return sorted((len(g), sorted(x.job_id for x in g)) for g in groups)


shape = st.fixed_dictionaries(
    {"RequestCpus": st.integers(1, 8), "RequestMemory": st.sampled_from([1024, 2048, 2048.0, 8192])},
    optional={"RequestGpus": st.integers(0, 2)},
)


def test_criterion_10_clustering_oracle(capsys):
    runs = []

    @settings(max_examples=500, derandomize=True, deadline=None, database=None)
    @given(st.lists(shape, min_size=1, max_size=5).flatmap(lambda ss: st.lists(st.sampled_from(ss), max_size=50)))
    def check(picks):
        jobs = [JobAd(f"j{i:02d}", AttrBag(a)) for i, a in enumerate(picks)]
        got = sorted((c.idle_count, sorted(c.job_ids)) for c in cluster_jobs(jobs, DEFAULT_KEY_ATTRS))
        assert got == brute_partition(jobs)
        runs.append(1)

    with criterion(capsys, 10, "cluster_jobs equals brute-force partition on 500 job sets"):
        check()
        assert len(runs) >= 500


def test_every_criterion_has_a_test():
    names = [n for n in globals() if n.startswith("test_criterion_")]
    assert sorted(int(n.split("_")[2]) for n in names) == list(range(1, 11))

