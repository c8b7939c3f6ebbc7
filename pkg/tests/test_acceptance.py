"""Acceptance gate: ten end-to-end criteria, each reporting one PASS/FAIL
line on the terminal (bypassing capture) so a suite run shows the verdicts
at a glance."""

import random
from contextlib import contextmanager

import pytest

from nlpgrid.broker import (
    DATA_CENTRIC,
    SchedulingPreferences,
    match_nodes,
    node_satisfies,
    package,
    plan,
    schedule_violations,
)
from nlpgrid.cli import EXIT_OK, main
from nlpgrid.errors import NoConversionPath
from nlpgrid.gridsim import execute, render_trace, verify_trace
from nlpgrid.resolver import build_dag, check_compat, resolve
from nlpgrid.resultstore import ContentStore, ResultCache
from nlpgrid.speclang import (
    DataSourceDescription,
    parse_application,
    parse_component,
    serialize_application,
    serialize_component,
)

from conftest import FIXTURES, fresh_registry, random_requirements
from test_broker import MB, chain_dag, node, pool_of
from test_resolver import bfs_distance, converter_registry, make_app


@contextmanager
def verdict(capsys, label):
    try:
        yield
    except BaseException:
        with capsys.disabled():
            print(f"[acceptance] {label}: FAIL")
        raise
    else:
        with capsys.disabled():
            print(f"[acceptance] {label}: PASS")


class TestAcceptance:
    def test_01_fixture_round_trip_fidelity(self, capsys):
        with verdict(capsys, "01 description round-trip fidelity"):
            for name, parse, serialize in (
                ("component_sph2pipe.xml", parse_component, serialize_component),
                ("app_sample.xml", parse_application, serialize_application),
                ("app_pipeline4.xml", parse_application, serialize_application),
            ):
                text = (FIXTURES / name).read_text()
                assert serialize(parse(text)) == text
                assert serialize(parse(serialize(parse(text)))) == text

    def test_02_packaging_partitions_large_sources(self, capsys):
        with verdict(capsys, "02 data packaging partitions the source"):
            ds = DataSourceDescription(
                "http://x/big", "audio/wav", "EN", size_bytes=500 * MB
            )
            chunks = package(ds, 10 * MB)
            assert len(chunks) == 50
            assert sum(c.length for c in chunks) == 500 * MB
            assert [c.offset for c in chunks] == [i * 10 * MB for i in range(50)]
            rng = random.Random(11)
            for _ in range(200):
                size = rng.randint(1, 10**9)
                chunk = rng.randint(1, 10**8)
                parts = package(
                    DataSourceDescription("http://x/d", "a/b", "EN", size_bytes=size),
                    chunk,
                )
                covered = 0
                for c in parts:
                    assert c.offset == covered and 0 < c.length <= chunk
                    covered += c.length
                assert covered == size

    def test_03_conversion_chains_match_bfs_oracle(self, capsys):
        with verdict(capsys, "03 conversion-chain repair matches shortest-path oracle"):
            rng = random.Random(271828)
            for _ in range(500):
                media = [f"m/t{i}" for i in range(rng.randint(2, 8))]
                conversions = [
                    tuple(rng.sample(media, 2)) for _ in range(rng.randint(0, 12))
                ]
                reg = converter_registry(conversions)
                src, dst = rng.sample(media, 2)
                app = make_app(
                    [("x/src", src), (dst, "x/out")], source_format="x/src"
                )
                dag = build_dag(app)
                distance = bfs_distance(conversions, src, dst)
                if distance is None:
                    with pytest.raises(NoConversionPath):
                        resolve(dag, reg)
                else:
                    resolved = resolve(dag, reg)
                    assert len(resolved.tasks) - 2 == distance
                    assert check_compat(resolved) == []

    def test_04_matchmaking_matches_linear_scan(self, capsys):
        with verdict(capsys, "04 matchmaking agrees with the linear-scan oracle"):
            rng = random.Random(524287)
            checked = 0
            while checked < 1000:
                nodes = [
                    node(
                        f"n{i}",
                        cpu=rng.choice(["x86", "sparc", "ppc"]),
                        os=rng.choice(["unix", "win32"]),
                        licenses=rng.sample(["ldc", "gpl", "bsd"], rng.randint(0, 3)),
                        memory_mb=rng.choice([256, 1024, 8192]),
                        storage_mb=rng.choice([50, 1000, 100000]),
                    )
                    for i in range(rng.randint(1, 5))
                ]
                req = random_requirements(rng)
                expected = [n.node_id for n in nodes if node_satisfies(req, n)]
                assert match_nodes(req, nodes) == expected
                checked += len(nodes)

    def test_05_schedules_valid_and_near_optimal(self, capsys):
        from test_broker import TestOptimalityOracle

        rng = random.Random(8675309)
        trials = 40
        optimal = 0
        with verdict(capsys, "05 schedules valid; min_time within 1.5x of optimum"):
            ratios = []
            for _ in range(trials):
                n_tasks = rng.randint(1, 6)
                dag = chain_dag(
                    n_tasks,
                    size_bytes=10 * MB,
                    wupm=[rng.choice([None, 0.5, 2.0]) for _ in range(n_tasks)],
                )
                nodes = [
                    node(f"n{i}", speed=rng.choice([0.5, 1.0, 2.0]))
                    for i in range(rng.randint(1, 3))
                ]
                pool = pool_of(nodes)
                schedule = plan(dag, pool, chunk_bytes=None)
                assert schedule_violations(schedule, dag, pool) == []
                optimum = TestOptimalityOracle._brute_force_makespan(dag, pool)
                ratio = schedule.makespan_s / optimum
                ratios.append(ratio)
                assert ratio <= 1.5 + 1e-9
                if ratio <= 1.0 + 1e-9:
                    optimal += 1
            assert optimal >= trials * 0.9
        with capsys.disabled():
            print(
                "[acceptance] 05 detail: %d/%d optimal, worst ratio %.4f"
                % (optimal, trials, max(ratios))
            )

    def test_06_placement_dichotomy(self, capsys):
        with verdict(capsys, "06 data-centric never transfers more when data is colocated"):
            rng = random.Random(4321)
            strict = False
            for _ in range(50):
                uri = "http://x/d.wav"
                holder = node(
                    "holder", speed=rng.choice([0.25, 0.5, 1.0]), colocated=[uri]
                )
                others = [
                    node(f"n{i}", speed=rng.choice([1.0, 2.0, 4.0]))
                    for i in range(rng.randint(1, 3))
                ]
                pool = pool_of([*others, holder])
                dag = chain_dag(1, size_bytes=rng.choice([10 * MB, 100 * MB]))
                pc = plan(dag, pool)
                dc = plan(dag, pool, SchedulingPreferences(placement=DATA_CENTRIC))
                pc_transfer = sum(a.transfer_in_s for a in pc.assignments)
                dc_transfer = sum(a.transfer_in_s for a in dc.assignments)
                assert dc_transfer <= pc_transfer + 1e-9
                if dc_transfer < pc_transfer - 1e-9:
                    strict = True
            assert strict  # at least one scenario where staying put saves transfer

    def test_07_cache_soundness(self, capsys, tmp_path):
        with verdict(capsys, "07 repeated runs hit the cache with identical digests"):
            dag = chain_dag(3, size_bytes=25 * MB)
            pool = pool_of([node("a"), node("b", speed=2.0)])
            store = ContentStore(tmp_path / "results")
            cache = ResultCache(tmp_path / "cache.json")
            first = plan(dag, pool, cache=cache)
            t1 = execute(first, dag, pool, store=store, cache=cache)
            assert first.cache_hits == frozenset()
            second = plan(dag, pool, cache=cache)
            assert second.cache_hits == {1, 2, 3}
            assert second.total_cost == 0.0
            t2 = execute(second, dag, pool, store=store, cache=cache)
            assert verify_trace(t2, second, dag) == []
            assert {p: r.digest for p, r in t1.final_outputs.items()} == {
                p: r.digest for p, r in t2.final_outputs.items()
            }

    def test_08_registry_closure_under_harvest(self, capsys):
        from nlpgrid.harvesting import harvest
        from conftest import random_record

        with verdict(capsys, "08 harvesting reaches closure and is idempotent"):
            rng = random.Random(13)
            provider = fresh_registry(name="provider")
            for _ in range(37):
                provider.add_record(random_record(rng))
            clone = fresh_registry(name="clone")
            report = harvest(clone, provider)
            assert report.inserted == 37
            assert clone.snapshot() == provider.snapshot()
            again = harvest(clone, provider)
            assert again.inserted == 0 and again.updated == 0
            assert clone.snapshot() == provider.snapshot()

    def test_09_simulator_determinism_and_fidelity(self, capsys):
        with verdict(capsys, "09 simulation is deterministic and matches the plan"):
            rng = random.Random(60609)
            for _ in range(50):
                n_tasks = rng.randint(1, 4)
                dag = chain_dag(
                    n_tasks,
                    size_bytes=rng.choice([1 * MB, 10 * MB, 35 * MB]),
                    wupm=[rng.choice([None, 0.5, 2.0]) for _ in range(n_tasks)],
                )
                nodes = [
                    node(f"n{i}", speed=rng.choice([0.5, 1.0, 2.0]))
                    for i in range(rng.randint(1, 3))
                ]
                pool = pool_of(nodes)
                schedule = plan(dag, pool)
                t1 = execute(schedule, dag, pool, seed=1)
                t2 = execute(schedule, dag, pool, seed=2)
                assert render_trace(t1) == render_trace(t2)
                assert verify_trace(t1, schedule, dag) == []
                assert t1.wall_makespan_s == pytest.approx(schedule.makespan_s)

    def test_10_end_to_end_workflow(self, capsys, tmp_path):
        ws = str(tmp_path / "workspace")
        app = str(FIXTURES / "app_pipeline4.xml")
        pool = str(FIXTURES / "pool_e2e.txt")
        with verdict(capsys, "10 validate/resolve/plan/run/query workflow succeeds"):
            assert main(["--workspace", ws, "validate", app]) == EXIT_OK
            assert main(["--workspace", ws, "resolve", app]) == EXIT_OK
            out = tmp_path / "report"
            assert (
                main(["--workspace", ws, "plan", app, pool, "--out", str(out)])
                == EXIT_OK
            )
            assert (out / "schedule.tsv").exists()
            assert (
                main(
                    ["--workspace", ws, "run", app, pool, "--out", str(out)]
                )
                == EXIT_OK
            )
            captured = capsys.readouterr().out
            assert "MAKESPAN\t" in captured
            for name in ("trace.tsv", "schedule.png", "trace.png"):
                assert (out / name).exists()
            assert main(["--workspace", ws, "registry", "query", "--kind", "result"]) == EXIT_OK
            record_ids = capsys.readouterr().out.split()
            assert len(record_ids) == 4
