import json
from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from screensearch.config import RunConfig
from screensearch.eval_harness import (
    BenchmarkResult,
    HarnessError,
    PolicyResult,
    PolicySpec,
    ambiguity_curve,
    auc,
    default_policies,
    discovery_rate,
    emit_report,
    frontier_curve,
    read_summary,
    run_benchmark,
)
from screensearch.explorer import read_traces
from screensearch.gui_sim import build_replay_pool
from screensearch.runs import explore


@pytest.fixture
def toy(fixtures_dir):
    traces = read_traces(fixtures_dir / "toy_traces.jsonl")
    expected = json.loads((fixtures_dir / "toy_expected.json").read_text())
    return traces, expected


@pytest.fixture(scope="module")
def bench_setup():
    r = explore(RunConfig(workers=2, episodes=3, budget=40))
    pool = build_replay_pool(r.scenario, r.traces, r.world.index)
    return r.scenario, pool


class TestMetrics:
    def test_toy_fixture(self, toy):
        traces, exp = toy
        m = frontier_curve(traces)
        d = ambiguity_curve(traces)
        assert m == pytest.approx(exp["frontier"], abs=1e-9)
        assert d == pytest.approx(exp["ambiguity"], abs=1e-9)
        assert abs(auc(m) - exp["frontier_auc"]) <= 1e-9
        assert abs(auc(d) - exp["ambiguity_auc"]) <= 1e-9
        assert abs(m[-1] - exp["M_V_final"]) <= 1e-9
        assert abs(d[-1] - exp["delta_u_final"]) <= 1e-9

    def test_origin(self, toy):
        traces, _ = toy
        assert frontier_curve(traces)[0] == 0.0
        assert ambiguity_curve(traces)[0] == 0.0

    def test_length_mismatch(self, toy):
        traces, _ = toy
        short = replace(traces[0], steps=traces[0].steps[:3])
        with pytest.raises(HarnessError):
            frontier_curve([short, traces[1]])
        with pytest.raises(HarnessError):
            ambiguity_curve([short, traces[1]])

    def test_empty(self):
        assert frontier_curve([]) == [] and ambiguity_curve([]) == []

    def test_auc_examples(self):
        assert auc([0.0] * 50) == 0.0
        assert auc([1, 2, 3]) == 6

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(-1e3, 1e3), max_size=60))
    def test_auc_is_exact_sum(self, xs):
        import math

        assert auc(xs) == math.fsum(xs)

    @pytest.mark.parametrize("label", ["reactive_nano_no_ctx", "reactive_nano_ctx", "reactive_mini_no_ctx", "reactive_mini_ctx", "puct"])
    def test_published_curves(self, published_curves, label):
        table = dict(zip(published_curves["table_columns"], published_curves["table"][label]))
        frontier = published_curves["frontier"][label]
        amb = published_curves["ambiguity"][label]
        assert len(frontier) == len(amb) == 50
        assert abs(auc(frontier) - table["frontier_auc"]) <= 0.01
        # the ambiguity curve points are read off a plot, so only two decimals hold
        assert abs(auc(amb) - table["ambiguity_auc"]) <= 0.01


class TestDiscoveryRate:
    @pytest.mark.parametrize("total, unique, rate", [(30445, 314, 1.03), (86025, 2585, 3.00), (1007406, 31146, 3.09)])
    def test_rows(self, total, unique, rate):
        assert round(discovery_rate(total, unique), 2) == rate

    def test_all_unique(self):
        assert discovery_rate(17, 17) == 100.0

    def test_zero_interactions(self):
        with pytest.raises(ValueError):
            discovery_rate(0, 0)


class TestReport:
    def test_header_only(self, tmp_path):
        emit_report(BenchmarkResult(50, []), tmp_path)
        lines = (tmp_path / "summary.csv").read_text().splitlines()
        assert lines[0].startswith("# config:") and len(lines) == 2
        assert read_summary(tmp_path / "summary.csv") == []

    def test_parse_back_exact(self, tmp_path):
        pols = [
            PolicyResult(f"p{i}", [0.1 * i * t for t in range(5)], [0.01 * (t - i) / 3 for t in range(5)])
            for i in range(5)
        ]
        written = emit_report(BenchmarkResult(5, pols, {"seed": 1}), tmp_path)
        assert len(written) == 6
        rows = read_summary(tmp_path / "summary.csv")
        assert len(rows) == 5
        for row, pr in zip(rows, pols):
            s = pr.scalars()
            for key in ("M_V_final", "frontier_auc", "delta_u_final", "ambiguity_auc"):
                assert row[key] == s[key]

    def test_unwritable(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        with pytest.raises(OSError):
            emit_report(BenchmarkResult(1, []), blocker / "sub")


class TestBenchmark:
    def test_refuses_unverified(self, bench_setup):
        sc, pool = bench_setup
        bad = [replace(pool[0], verified=False)]
        with pytest.raises(HarnessError, match="unverified"):
            run_benchmark(sc, bad, default_policies(), budget=5)

    def test_refuses_duplicate_labels(self, bench_setup):
        sc, pool = bench_setup
        with pytest.raises(HarnessError):
            run_benchmark(sc, pool, [PolicySpec("puct", "x"), PolicySpec("reactive_random", "x")], budget=5)

    def test_budget_zero_refused(self, bench_setup):
        sc, pool = bench_setup
        with pytest.raises(HarnessError):
            run_benchmark(sc, pool, default_policies(), budget=0)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            PolicySpec("gpt", "gpt")

    def test_budget_one(self, bench_setup):
        sc, pool = bench_setup
        res = run_benchmark(sc, pool, default_policies(), budget=1)
        for pr in res.policies:
            assert pr.frontier == [0.0] and pr.ambiguity == [0.0]
            assert pr.episodes == len(pool)

    def test_deterministic_and_consistent(self, bench_setup, tmp_path):
        sc, pool = bench_setup
        runs = []
        for k in range(2):
            res = run_benchmark(sc, pool, default_policies(), budget=20, seeds=(0, 1))
            emit_report(res, tmp_path / str(k))
            runs.append(res)
        for name in sorted(p.name for p in (tmp_path / "0").iterdir()):
            assert (tmp_path / "0" / name).read_bytes() == (tmp_path / "1" / name).read_bytes()
        for pr in runs[0].policies:
            assert pr.frontier_auc == auc(pr.frontier)
            assert all(a <= b for a, b in zip(pr.frontier, pr.frontier[1:]))
            assert pr.ambiguity[0] == 0.0
            assert pr.episodes == 2 * len(pool)

    def test_episode_isolation(self, bench_setup):
        # running one policy alone reproduces its traces from the joint run
        sc, pool = bench_setup
        joint = run_benchmark(sc, pool, default_policies(), budget=10)
        solo = run_benchmark(sc, pool[::-1], [default_policies()[2]], budget=10)
        want = {t.header()["prefix_target"]: t.to_lines() for t in joint.policies[2].traces}
        got = {t.header()["prefix_target"]: t.to_lines() for t in solo.policies[0].traces}
        assert got == want
