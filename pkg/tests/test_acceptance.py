"""Headline acceptance checks, one test per criterion.

Each test carries an ``acceptance`` marker; conftest prints a PASS/FAIL line
per criterion at the end of the run. Time bounds are asserted in-test.
"""

import math
import random
import time

import pytest

from oracles import brute_dedup, brute_search, puct_argmax, random_corpus, sparse_sim
from screensearch.ambiguity import AmbiguityParams, dispersion, shrink
from screensearch.cli import main
from screensearch.config import RunConfig
from screensearch.eval_harness import ambiguity_curve, auc, discovery_rate, frontier_curve, probe_ambiguity
from screensearch.explorer import ActionStats, PuctConfig, read_traces, select_action
from screensearch.gui_sim import load_scenario
from screensearch.retrieval_index import DedupConfig, IndexedScreen, RetrievalQuery, ScreenIndex, sparse_similarity
from screensearch.runs import explore, latency_profile, prior_ablation
from screensearch.screen_model import build_signature
from screensearch.state_graph import ActionSignature, StateGraph


class Clock:
    def __init__(self, bound):
        self.bound = bound

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.t0
        if exc[0] is None:
            assert self.elapsed < self.bound, f"took {self.elapsed:.1f}s, bound {self.bound}s"


def tokens(n, kind="T"):
    return {f"r{i // 30}_c{i % 30}|{kind}:t{i}" for i in range(n)}


@pytest.mark.acceptance("dedup boundary at tau", "< 1 s")
def test_dedup_boundary():
    with Clock(1.0):
        base = build_signature(tokens(10000), tokens(10000, "X"), "light", 100)
        idx = ScreenIndex(DedupConfig(tau=0.93))
        idx.resolve(base)
        below = build_signature(tokens(9299), tokens(9299, "X"), "light", 100)
        at = build_signature(tokens(9300), tokens(9300, "X"), "light", 100)
        assert sparse_similarity(below, base) == pytest.approx(0.9299, abs=1e-12)
        assert sparse_similarity(at, base) == pytest.approx(0.9300, abs=1e-12)
        assert idx.dedup_decide(below, idx.make_query(below)).is_new
        merged = idx.dedup_decide(at, idx.make_query(at))
        assert not merged.is_new and merged.state_id == base.canonical_id


S1 = ActionSignature("click", "r1_c1|T:button")
S2 = ActionSignature("click", "r2_c2|T:button")


def _graph(outcomes):
    g = StateGraph()
    g.add_state("s")
    for sig, dests in outcomes.items():
        for d in dests:
            g.record_transition("s", sig, d)
    return g


@pytest.mark.acceptance("ambiguity closed forms", "< 10 s")
def test_ambiguity_closed_forms():
    with Clock(10.0):
        assert dispersion("s", _graph({S1: ["a"] * 3, S2: ["b"] * 2}))[0] == 0.0
        assert abs(dispersion("s", _graph({S1: ["a", "b"]}))[0] - 1.0) <= 1e-9
        assert abs(dispersion("s", _graph({S1: ["a", "b", "a", "b"], S2: ["c"] * 4}))[0] - 0.5) <= 1e-9
        p = AmbiguityParams(kappa=5.0, u0=0.5)
        assert abs(shrink(0.8, 0, p).score - 0.5) <= 1e-9
        assert abs(shrink(1.0, 10**9, p).score - 1.0) <= 1e-8
        assert abs(shrink(0.5, 8, p).score - 0.5) <= 1e-9
        rng = random.Random(0)
        for _ in range(10**4):
            k = rng.randint(1, 4)
            outcomes = {
                ActionSignature("click", f"r{i}_c0|T:button"): [f"d{rng.randrange(4)}" for _ in range(rng.randint(1, 6))]
                for i in range(k)
            }
            d, n = dispersion("s", _graph(outcomes))
            u = shrink(d, n, AmbiguityParams(rng.uniform(0.01, 50), rng.random())).score
            assert 0.0 <= u <= 1.0


@pytest.mark.acceptance("PUCT brute-force oracle", "< 10 s")
def test_puct_oracle():
    with Clock(10.0):
        rng = random.Random(11)
        ties = 0
        for _ in range(1000):
            k = rng.randint(1, 8)
            sigs = [ActionSignature("click", f"r{i}_c0|T:button") for i in range(k)]
            rng.shuffle(sigs)
            stats = ActionStats()
            q, n = {}, {}
            for sig in sigs:
                visits = rng.choice([0, 0, 1, 2, 4])
                for _ in range(visits):
                    stats.backup("x", sig, rng.choice([0.0, 0.5, 1.0, 1.5]))
                if visits:
                    n[sig.key], q[sig.key] = stats.get("x", sig)
            priors = [rng.choice([0.125, 0.25, 0.25]) for _ in sigs]
            c = rng.choice([0.5, 1.0, 1.25, 2.0])
            want = puct_argmax([s.key for s in sigs], q, n, priors, c)
            ties += len(set(priors)) < len(priors)
            assert select_action("x", sigs, stats, priors, PuctConfig(c_puct=c)).key == want
        assert ties > 100
        for _ in range(200):
            stats = ActionStats()
            rewards = [rng.uniform(0, 2.5) for _ in range(rng.randint(1, 60))]
            for r in rewards:
                stats.backup("x", S1, r)
            assert abs(stats.get("x", S1)[1] - math.fsum(rewards) / len(rewards)) <= 1e-12


@pytest.mark.acceptance("retrieval exhaustive-scan oracle", "< 60 s")
def test_retrieval_oracle():
    with Clock(60.0):
        rng = random.Random(2024)
        for _ in range(200):
            corpus = random_corpus(rng, rng.randint(1, 1000))
            idx = ScreenIndex(DedupConfig(top_k=rng.choice([1, 5, 20])))
            for cid, s, g in corpus:
                idx.insert(IndexedScreen(cid, s, g))
            state_of = {x.canonical_id: x.dedup_state_id for x in idx.screens}
            for _ in range(3):
                _, q, _ = corpus[rng.randrange(len(corpus))]
                prefix = rng.choice(["", "app/", "web/"])
                query = RetrievalQuery(q, prefix, top_k=idx.config.top_k)
                got = idx.search(query)
                want = brute_search(corpus, q, prefix, q.display_mode, q.text_size_bin, idx.config.top_k)
                assert got == want
                dec = idx.dedup_decide(q, query)
                assert (dec.state_id, dec.is_new) == brute_dedup(corpus, state_of, q, [c for c, _ in want], 0.93)[:2]
                # a screen already in the index always merges, whatever K is
                if any(g.startswith(prefix) and s is q for _, s, g in corpus):
                    assert not dec.is_new
                    assert dec.best_similarity == pytest.approx(
                        max(sparse_sim(q, s) for _, s, g in corpus if g.startswith(prefix) and s.display_mode == q.display_mode and s.text_size_bin == q.text_size_bin),
                        abs=1e-12,
                    )


@pytest.mark.acceptance("metric oracle and published AUCs", "< 1 s")
def test_metric_oracle(fixtures_dir, published_curves):
    import json

    with Clock(1.0):
        traces = read_traces(fixtures_dir / "toy_traces.jsonl")
        exp = json.loads((fixtures_dir / "toy_expected.json").read_text())
        m, d = frontier_curve(traces), ambiguity_curve(traces)
        for got, want in zip(m, exp["frontier"]):
            assert abs(got - want) <= 1e-9
        for got, want in zip(d, exp["ambiguity"]):
            assert abs(got - want) <= 1e-9
        assert abs(auc(m) - exp["frontier_auc"]) <= 1e-9
        assert abs(auc(d) - exp["ambiguity_auc"]) <= 1e-9
        assert abs(auc(published_curves["frontier"]["puct"]) - 253.33) <= 0.01
        assert abs(auc(published_curves["frontier"]["reactive_mini_ctx"]) - 411.00) <= 0.01


@pytest.mark.acceptance("discovery-rate rows", "< 1 s")
def test_discovery_rate_rows():
    with Clock(1.0):
        assert f"{discovery_rate(30445, 314):.2f}" == "1.03"
        assert f"{discovery_rate(86025, 2585):.2f}" == "3.00"
        assert f"{discovery_rate(1007406, 31146):.2f}" == "3.09"


@pytest.mark.acceptance("exactly-once discovery, 8 threads", "< 2 min")
def test_exactly_once_concurrency():
    with Clock(120.0):
        cfg = RunConfig(workers=8, episodes=200, budget=20, schedule="threads", seed=3)
        result = explore(cfg)
        graph = result.world.graph
        new_states = sum(t.start_was_new + sum(r.was_new_state for r in t.steps) for t in result.traces)
        new_edges = sum(r.was_new_edge for t in result.traces for r in t.steps)
        assert len(result.traces) == 1600
        assert new_states == len(graph.nodes)
        assert new_edges == graph.edge_count()
        assert graph.check_consistency() == []
        assert sum(n for *_, n in graph.edges()) == sum(len(t.steps) for t in result.traces)


@pytest.mark.acceptance("aliasing detection, hub vs control", "< 1 min")
def test_aliasing_detection():
    with Clock(60.0):
        hub, control = load_scenario("aliased_hub"), load_scenario("alias_free")
        path = [ActionSignature("click", "r10_c14|T:button")]
        u0 = AmbiguityParams().u0
        good = 0
        for seed in range(20):
            a = probe_ambiguity(hub, path, 50, seed)
            b = probe_ambiguity(control, path, 50, seed)
            good += a.score > u0 + 0.2 and b.score < u0 - 0.2
        assert good >= 18


@pytest.mark.acceptance("prior ablation direction", "< 5 min")
def test_prior_ablation_direction():
    with Clock(300.0):
        wins = 0
        for seed in range(20):
            rows = prior_ablation(RunConfig(seed=seed, workers=1, episodes=2, budget=50))
            assert [r["prior"] for r in rows] == ["heuristic@1", "uniform_prior@1"]
            wins += rows[0]["discovery_rate"] >= rows[1]["discovery_rate"]
        assert wins >= 16


@pytest.mark.acceptance("decision latency flatness", "< 5 min")
def test_latency_flatness():
    with Clock(300.0):
        prof = latency_profile(RunConfig(), (1000, 30000), 200)
        assert len(prof["series"]) == 400
        assert prof["ratio"] <= 3.0


@pytest.mark.acceptance("byte-identical reruns", "< 2 min")
def test_determinism(tmp_path):
    with Clock(120.0):
        flags = ["--workers", "2", "--episodes", "3", "--budget", "40", "--seed", "5"]
        for k in ("a", "b"):
            assert main(["explore", *flags, "--out", str(tmp_path / k / "explore")]) == 0
            pool = str(tmp_path / "a" / "explore" / "replay_pool.jsonl")
            assert main(["bench", "run", "--pool", pool, "--budget", "20", "--seeds", "0,1", "--out", str(tmp_path / k / "bench")]) == 0
        files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
        assert len(files) >= 10
        for rel in files:
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes(), rel
