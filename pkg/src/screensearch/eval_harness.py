"""Replay-start policy evaluation: frontier and ambiguity curves and their AUCs."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .ambiguity import AmbiguityParams
from .explorer import (
    DecisionContext,
    EpisodeTrace,
    PuctConfig,
    PuctPolicy,
    World,
    enumerate_signatures,
    heuristic_scores,
    run_episode,
    target_tokens,
)
from .gui_sim import GuiEnv, ReplayPrefix, Scenario, replay
from .retrieval_index import DedupConfig
from .seeding import derive_seed, substream
from .state_graph import ActionSignature

POLICY_KINDS = ("puct", "reactive_random", "reactive_greedy_novelty", "reactive_loop_avoid")
SUMMARY_FIELDS = ("label", "M_V_final", "frontier_auc", "delta_u_final", "ambiguity_auc", "episodes")


class HarnessError(Exception):
    pass


# -- metrics -----------------------------------------------------------------


def frontier_curve(traces: Sequence[EpisodeTrace]) -> list[float]:
    """M_V(t): mean count of distinct states seen at steps 1..t, start state excluded.

    s_t is the state observed at step t (s_0 is the replay start), so
    M_V(0) = 0 for every episode.
    """
    if not traces:
        return []
    lengths = {len(t.steps) for t in traces}
    if len(lengths) != 1:
        raise HarnessError(f"traces have different lengths: {sorted(lengths)}")
    horizon = lengths.pop()
    totals = [0] * horizon
    for trace in traces:
        seen: set[str] = set()
        start = trace.start_state
        for t, rec in enumerate(trace.steps):
            if rec.state_id != start:
                seen.add(rec.state_id)
            totals[t] += len(seen)
    return [x / len(traces) for x in totals]


def ambiguity_curve(traces: Sequence[EpisodeTrace]) -> list[float]:
    """Delta u_t: mean of u(s_t) - u(s_0), each u read on the episode's own graph at visit time."""
    if not traces:
        return []
    lengths = {len(t.steps) for t in traces}
    if len(lengths) != 1:
        raise HarnessError(f"traces have different lengths: {sorted(lengths)}")
    horizon = lengths.pop()
    totals = [0.0] * horizon
    for trace in traces:
        u0 = trace.steps[0].u_before if trace.steps else 0.0
        for t, rec in enumerate(trace.steps):
            totals[t] += rec.u_before - u0
    return [x / len(traces) for x in totals]


def auc(series: Sequence[float]) -> float:
    return math.fsum(series)


def discovery_rate(total_interactions: int, unique_states: int) -> float:
    if total_interactions < 1:
        raise ValueError("discovery rate needs at least one interaction")
    return 100.0 * unique_states / total_interactions


# -- scripted baselines ------------------------------------------------------


class RandomPolicy:
    def __init__(self, label: str = "reactive_random"):
        self.label = label

    def choose(self, ctx: DecisionContext) -> ActionSignature:
        return ctx.signatures[ctx.rng.randrange(len(ctx.signatures))]


class GreedyNoveltyPolicy:
    """Target the element with the most never-acted-on tokens."""

    def __init__(self, label: str = "reactive_greedy_novelty"):
        self.label = label

    def scores(self, ctx: DecisionContext) -> list[float]:
        vocab = ctx.world.vocabulary
        targets = target_tokens(ctx.obs)
        out = []
        for sig in ctx.signatures:
            _, txts = targets.get(sig.target_token, ("", set()))
            out.append(float((sig.target_token not in vocab) + sum(t not in vocab for t in txts)))
        return out

    def choose(self, ctx: DecisionContext) -> ActionSignature:
        scores = self.scores(ctx)
        best = max(range(len(scores)), key=lambda i: (scores[i], -i))
        return ctx.signatures[best]


class LoopAvoidPolicy(GreedyNoveltyPolicy):
    """Greedy novelty minus a penalty when the usual outcome is a recently visited state."""

    def __init__(self, label: str = "reactive_loop_avoid", penalty: float = 2.0, window: int = 5):
        super().__init__(label)
        self.penalty = penalty
        self.window = window

    def scores(self, ctx: DecisionContext) -> list[float]:
        base = super().scores(ctx)
        recent = set(ctx.recent_states[-self.window :])
        graph = ctx.world.graph
        out = []
        for sig, score in zip(ctx.signatures, base):
            counts = graph.outcome_counts(ctx.state, sig)
            if counts:
                likely = min(counts, key=lambda s: (-counts[s], s))
                if likely in recent:
                    score -= self.penalty
            out.append(score)
        return out


@dataclass(frozen=True)
class PolicySpec:
    kind: str
    label: str
    config: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"unknown policy kind {self.kind!r}")

    def build(self, puct: PuctConfig):
        if self.kind == "puct":
            cfg = PuctConfig(**{**puct.__dict__, **self.config}) if self.config else puct
            return PuctPolicy(cfg, self.label)
        if self.kind == "reactive_random":
            return RandomPolicy(self.label)
        if self.kind == "reactive_greedy_novelty":
            return GreedyNoveltyPolicy(self.label)
        return LoopAvoidPolicy(self.label, **self.config)


def default_policies() -> list[PolicySpec]:
    return [PolicySpec(kind, kind) for kind in POLICY_KINDS]


# -- benchmark ---------------------------------------------------------------


@dataclass
class PolicyResult:
    label: str
    frontier: list[float]
    ambiguity: list[float]
    traces: list[EpisodeTrace] = field(default_factory=list, repr=False)

    @property
    def episodes(self) -> int:
        return len(self.traces)

    @property
    def frontier_final(self) -> float:
        return self.frontier[-1] if self.frontier else 0.0

    @property
    def frontier_auc(self) -> float:
        return auc(self.frontier)

    @property
    def ambiguity_final(self) -> float:
        return self.ambiguity[-1] if self.ambiguity else 0.0

    @property
    def ambiguity_auc(self) -> float:
        return auc(self.ambiguity)

    def scalars(self) -> dict:
        return {
            "label": self.label,
            "M_V_final": self.frontier_final,
            "frontier_auc": self.frontier_auc,
            "delta_u_final": self.ambiguity_final,
            "ambiguity_auc": self.ambiguity_auc,
            "episodes": self.episodes,
        }


@dataclass
class BenchmarkResult:
    budget: int
    policies: list[PolicyResult]
    config: dict = field(default_factory=dict)


def run_replay_episode(
    scenario: Scenario,
    prefix: ReplayPrefix,
    spec: PolicySpec,
    budget: int,
    seed: int,
    puct: PuctConfig,
    dedup: DedupConfig,
    ambiguity: AmbiguityParams,
) -> EpisodeTrace:
    """One isolated episode: fresh world, replay the prefix, act for ``budget`` steps."""
    world = World(dedup, ambiguity, puct)
    env = GuiEnv(scenario)
    start = replay(env, prefix, seed)
    return run_episode(
        env,
        world,
        budget,
        seed,
        policy=spec.build(puct),
        start_obs=start,
        header_extra={"prefix_target": prefix.target_state_id, "scenario_hash": scenario.scenario_hash},
    )


def run_benchmark(
    scenario: Scenario,
    pool: Sequence[ReplayPrefix],
    policies: Sequence[PolicySpec],
    budget: int = 50,
    seeds: Sequence[int] = (0,),
    puct: PuctConfig | None = None,
    dedup: DedupConfig | None = None,
    ambiguity: AmbiguityParams | None = None,
) -> BenchmarkResult:
    """Every (policy, prefix, seed) episode starts from scratch; nothing carries over."""
    if budget < 1:
        raise HarnessError("budget must be >= 1")
    labels = [p.label for p in policies]
    if len(set(labels)) != len(labels):
        raise HarnessError("policy labels must be unique")
    for prefix in pool:
        if not prefix.verified:
            raise HarnessError(f"refusing unverified replay prefix for {prefix.target_state_id}")
    puct = puct or PuctConfig()
    dedup = dedup or DedupConfig()
    ambiguity = ambiguity or AmbiguityParams()
    results = []
    for spec in policies:
        traces = []
        for prefix in pool:
            for seed in seeds:
                ep_seed = derive_seed(seed, "bench", spec.label, prefix.target_state_id)
                trace = run_replay_episode(scenario, prefix, spec, budget, ep_seed, puct, dedup, ambiguity)
                if len(trace.steps) != budget:
                    raise HarnessError(
                        f"{spec.label} episode on {prefix.target_state_id} ended after {len(trace.steps)} steps"
                    )
                traces.append(trace)
        results.append(PolicyResult(spec.label, frontier_curve(traces), ambiguity_curve(traces), traces))
    config = {
        "budget": budget,
        "seeds": list(seeds),
        "pool": [p.target_state_id for p in pool],
        "policies": [{"kind": p.kind, "label": p.label, "config": p.config} for p in policies],
        "scenario": scenario.name,
        "scenario_hash": scenario.scenario_hash,
    }
    return BenchmarkResult(budget, results, config)


# -- reporting ---------------------------------------------------------------


def _comment(config: dict | None) -> str:
    return "# config: " + json.dumps(config or {}, sort_keys=True) + "\n"


def _safe(label: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in label)


def emit_report(result: BenchmarkResult, path: str | Path) -> list[Path]:
    """Write summary.csv plus one curve CSV per policy into directory ``path``.

    Floats are written with repr so parsing the CSV back is exact.
    """
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    summary = out / "summary.csv"
    with open(summary, "w", newline="", encoding="utf-8") as fh:
        fh.write(_comment(result.config))
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_FIELDS)
        for pr in result.policies:
            s = pr.scalars()
            writer.writerow([s["label"]] + [repr(s[k]) for k in SUMMARY_FIELDS[1:-1]] + [s["episodes"]])
    written.append(summary)
    for pr in result.policies:
        curve = out / f"curve_{_safe(pr.label)}.csv"
        with open(curve, "w", newline="", encoding="utf-8") as fh:
            fh.write(_comment(result.config))
            writer = csv.writer(fh)
            writer.writerow(["t", "M_V", "delta_u"])
            for t, (m, d) in enumerate(zip(pr.frontier, pr.ambiguity)):
                writer.writerow([t, repr(m), repr(d)])
        written.append(curve)
    return written


def read_summary(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
    for row in rows:
        for key in SUMMARY_FIELDS[1:-1]:
            row[key] = float(row[key])
        row["episodes"] = int(row["episodes"])
    return rows


# -- aliasing probe ----------------------------------------------------------


@dataclass
class ProbeResult:
    state_id: str
    samples: int
    dispersion: float
    score: float


def probe_ambiguity(
    scenario: Scenario,
    path: Sequence[ActionSignature],
    samples: int,
    seed: int,
    params: AmbiguityParams | None = None,
    dedup: DedupConfig | None = None,
) -> ProbeResult:
    """Collect ``samples`` matched-action transitions out of the state reached by ``path``.

    Each sample resets the env, walks ``path`` and executes one signature
    drawn uniformly from the probed screen.
    """
    world = World(dedup, params)
    env = GuiEnv(scenario)
    rng = substream(seed, "probe")
    probed = None
    for k in range(samples):
        obs = env.reset(derive_seed(seed, "probe-episode", k))
        state = world.observe(obs)
        world.graph.add_state(state)
        for sig in path:
            obs = env.step(sig)
            nxt = world.observe(obs)
            world.graph.record_transition(state, sig, nxt)
            state = nxt
        probed = probed or state
        if state != probed:
            raise HarnessError("probe path does not return to one dedup state")
        sigs = enumerate_signatures(obs, scenario.payloads)
        sig = sigs[rng.randrange(len(sigs))]
        nxt = world.observe(env.step(sig))
        world.graph.record_transition(state, sig, nxt)
    est = world.ambiguity.estimate(probed)
    return ProbeResult(probed, est.evidence, est.dispersion, est.score)
