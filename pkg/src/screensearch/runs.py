"""Multi-worker exploration runs and the experiments built on them."""

from __future__ import annotations

import json
import random
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterator, Sequence

from .config import RunConfig
from .eval_harness import discovery_rate
from .explorer import EpisodeTrace, World, episode_steps, write_traces
from .gui_sim import GuiEnv, PoolShortfall, Scenario, build_replay_pool, load_scenario, save_pool
from .retrieval_index import IndexedScreen
from .screen_model import GRID, build_signature
from .seeding import derive_seed
from .state_graph import ActionSignature

TRAJECTORY_LENGTH = 3


@dataclass
class ExploreSummary:
    total_observations: int
    unique_states: int
    discovery_rate: float
    cross_app_states: int
    trajectories: int
    episodes: int
    interactions: int

    def row(self) -> str:
        return (
            f"observations={self.total_observations} unique={self.unique_states} "
            f"rate={self.discovery_rate:.2f}% cross_app={self.cross_app_states} "
            f"trajectories(len {TRAJECTORY_LENGTH})={self.trajectories}"
        )


@dataclass
class ExploreResult:
    world: World
    traces: list[EpisodeTrace]
    summary: ExploreSummary
    scenario: Scenario


def episode_seed(root: int, worker: int, episode: int) -> int:
    return derive_seed(root, "worker", worker, "episode", episode)


def _worker(cfg: RunConfig, scenario: Scenario, world: World, w: int, sink: list) -> Iterator[None]:
    env = GuiEnv(scenario)
    header = {"scenario_hash": scenario.scenario_hash, "config": cfg.echo()}
    for ep in range(cfg.episodes):
        trace = None
        for trace in episode_steps(
            env, world, cfg.budget, episode_seed(cfg.seed, w, ep), worker_id=f"w{w}", episode=ep, header_extra=header
        ):
            yield
        sink.append(trace)


def count_trajectories(traces: Sequence[EpisodeTrace], length: int = TRAJECTORY_LENGTH) -> int:
    """Distinct length-``length`` state/action paths with no self-transition."""
    seen = set()
    for trace in traces:
        steps = trace.steps
        for i in range(len(steps) - length + 1):
            window = steps[i : i + length]
            if any(r.state_id == r.to_state_id for r in window):
                continue
            seen.add(tuple((r.state_id, r.signature.key) for r in window) + (window[-1].to_state_id,))
    return len(seen)


def explore(cfg: RunConfig, scenario: Scenario | None = None, world: World | None = None) -> ExploreResult:
    """Run ``workers`` x ``episodes`` episodes against one shared world.

    ``round_robin`` interleaves workers step by step in one thread and is
    reproducible; ``threads`` runs each worker on its own thread.
    """
    scenario = scenario or load_scenario(cfg.scenario)
    world = world or World(cfg.dedup, cfg.ambiguity, cfg.puct)
    sinks: list[list[EpisodeTrace]] = [[] for _ in range(cfg.workers)]
    gens = [_worker(cfg, scenario, world, w, sinks[w]) for w in range(cfg.workers)]
    if cfg.schedule == "threads" and cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            for fut in [pool.submit(lambda g: [None for _ in g], g) for g in gens]:
                fut.result()
    else:
        active = list(gens)
        while active:
            still = []
            for g in active:
                try:
                    next(g)
                    still.append(g)
                except StopIteration:
                    pass
            active = still
    traces = [t for sink in sinks for t in sink]
    interactions = sum(len(t.steps) for t in traces)
    graph = world.graph
    summary = ExploreSummary(
        total_observations=world.observations,
        unique_states=len(graph.nodes),
        discovery_rate=discovery_rate(world.observations, len(graph.nodes)) if world.observations else float("nan"),
        cross_app_states=len(graph.external_nodes),
        trajectories=count_trajectories(traces),
        episodes=len(traces),
        interactions=interactions,
    )
    return ExploreResult(world, traces, summary, scenario)


def write_explore_outputs(result: ExploreResult, cfg: RunConfig, out: str | Path) -> dict:
    """Persist traces, graph, index, replay pool and summary; returns the summary dict."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    echo = cfg.echo()
    write_traces(out / "traces.jsonl", result.traces)
    result.world.graph.export_graph(out / "graph.jsonl", config_echo=echo)
    result.world.index.save(out / "index.jsonl", config_echo=echo)
    summary = {
        "config": echo,
        "scenario_hash": result.scenario.scenario_hash,
        **result.summary.__dict__,
    }
    p = cfg.pool
    try:
        pool = build_replay_pool(
            result.scenario, result.traces, result.world.index, p.min_occurrences, p.min_anchor, p.count, p.trials
        )
        summary["replay_pool"] = {"selected": len(pool), "shortfall": 0}
    except PoolShortfall as exc:
        pool = exc.pool
        summary["replay_pool"] = {"selected": len(pool), "shortfall": exc.requested - len(pool), "eligible": exc.eligible}
    save_pool(out / "replay_pool.jsonl", pool, header={"config": echo, "scenario_hash": result.scenario.scenario_hash})
    with open(out / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2, default=str)
        fh.write("\n")
    return summary


# -- prior ablation ------------------------------------------------------------


def prior_ablation(cfg: RunConfig, scenario: Scenario | None = None) -> list[dict]:
    """Matched-seed runs under both priors; one row per prior."""
    if cfg.budget < 1 or cfg.episodes < 1:
        raise ValueError("prior ablation needs budget >= 1 and episodes >= 1 (rates are undefined otherwise)")
    scenario = scenario or load_scenario(cfg.scenario)
    rows = []
    for kind in ("heuristic@1", "uniform_prior@1"):
        run_cfg = replace(cfg, puct=replace(cfg.puct, prior_kind=kind))
        s = explore(run_cfg, scenario).summary
        rows.append(
            {
                "prior": kind,
                "observations": s.total_observations,
                "unique_states": s.unique_states,
                "discovery_rate": s.discovery_rate,
            }
        )
    return rows


# -- latency profile -----------------------------------------------------------


def pad_world(world: World, n_states: int, seed: int, rollout_group: str, display_mode: str = "light", text_size_bin: int = 100) -> None:
    """Grow the index and graph by ``n_states`` synthetic screens and edges."""
    rng = random.Random(derive_seed(seed, "pad"))
    labels = ("button", "text", "image", "menuitem", "edit", "listitem")
    words = [f"w{k}" for k in range(5000)]
    prev = None
    for i in range(n_states):
        ct, txt = set(), set()
        for _ in range(rng.randint(10, 25)):
            r, c = rng.randrange(GRID), rng.randrange(GRID)
            ct.add(f"r{r}_c{c}|T:{rng.choice(labels)}")
            txt.add(f"r{r}_c{c}|X:{rng.choice(words)} {rng.choice(words)}")
        ct.add(f"r0_c0|T:pad{i}")
        sig = build_signature(ct, txt, display_mode, text_size_bin, world.index.config.embed_dim)
        world.index.insert(IndexedScreen(sig.canonical_id, sig, rollout_group))
        world.graph.add_state(sig.canonical_id)
        if prev is not None:
            world.graph.record_transition(prev, ActionSignature("click", sorted(ct)[0]), sig.canonical_id)
        prev = sig.canonical_id


def latency_profile(
    cfg: RunConfig,
    sizes: Sequence[int] = (1000, 30000),
    steps: int = 200,
    scenario: Scenario | None = None,
) -> dict:
    """Per-decision wall-clock at several graph sizes.

    Each size gets a fresh world padded to that many states, then runs
    ``steps`` exploration actions on the scenario.
    """
    scenario = scenario or load_scenario(cfg.scenario)
    series = []
    medians = {}
    for size in sizes:
        world = World(cfg.dedup, cfg.ambiguity, cfg.puct)
        pad_world(world, size, cfg.seed, scenario.rollout_group, scenario.display_mode, scenario.text_size_bin)
        env = GuiEnv(scenario)
        times: list[float] = []
        ep = 0
        while len(times) < steps:
            budget = min(cfg.budget or 50, steps - len(times))
            trace = None
            for trace in episode_steps(env, world, budget, episode_seed(cfg.seed, 0, ep), episode=ep, clock=time.perf_counter):
                pass
            for t in trace.decision_seconds:
                series.append({"size": size, "graph_states": len(world.graph.nodes), "step": len(times), "decision_seconds": t})
                times.append(t)
            ep += 1
            if not trace.decision_seconds:
                break
        medians[size] = statistics.median(times) if times else None
    ratio = None
    if len(sizes) >= 2 and medians.get(sizes[0]) and medians.get(sizes[-1]) is not None:
        ratio = medians[sizes[-1]] / medians[sizes[0]]
    return {"series": series, "medians": medians, "ratio": ratio}
