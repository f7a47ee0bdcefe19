"""One-step PUCT graph-bandit over the shared deduplicated state graph.

Each step observes a screen, maps it to a dedup state, scores the
executable signatures with Q + U, executes the argmax, and credits the
immediate frontier/ambiguity reward to a running mean. Nothing is
propagated beyond the (state, signature) pair that was executed.
"""

from __future__ import annotations

import json
import math
import random
import threading
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterator, Protocol, Sequence

from .ambiguity import AmbiguityParams, AmbiguityTracker
from .gui_sim import GuiEnv, is_editable
from .retrieval_index import DedupConfig, ScreenIndex
from .screen_model import ScreenObservation, element_tokens, extract_signature, parse_token
from .seeding import substream
from .state_graph import ActionSignature, StateGraph

PRIOR_KINDS = ("uniform_prior@1", "heuristic@1")
PREFERRED_CONTROLS = frozenset({"button", "menuitem", "edit"})


@dataclass(frozen=True)
class PuctConfig:
    c_puct: float = 1.25
    lambda_state: float = 1.0
    lambda_edge: float = 0.5
    lambda_amb: float = 1.0
    prior_kind: str = "uniform_prior@1"
    gamma: float = 1.0
    heuristic_top_m: int = 10
    heuristic_floor: float = 0.01

    def __post_init__(self) -> None:
        if not self.c_puct > 0:
            raise ValueError("c_puct must be > 0")
        if min(self.lambda_state, self.lambda_edge, self.lambda_amb) < 0:
            raise ValueError("reward weights must be non-negative")
        if self.prior_kind not in PRIOR_KINDS:
            raise ValueError(f"prior_kind must be one of {PRIOR_KINDS}")
        if self.gamma != 1.0:
            raise ValueError("gamma is fixed at 1.0 (backup is one step, undiscounted)")


class ActionStats:
    """Visit counts and running-mean rewards per (state, signature)."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._stats: dict[tuple[str, ActionSignature], tuple[int, float]] = {}
        self._totals: dict[str, int] = {}

    def get(self, state: str, sig: ActionSignature) -> tuple[int, float]:
        return self._stats.get((state, sig), (0, 0.0))

    def total(self, state: str) -> int:
        return self._totals.get(state, 0)

    def backup(self, state: str, sig: ActionSignature, reward: float) -> None:
        with self._lock:
            n, q = self._stats.get((state, sig), (0, 0.0))
            n += 1
            q += (reward - q) / n
            self._stats[(state, sig)] = (n, q)
            self._totals[state] = self._totals.get(state, 0) + 1

    def items(self) -> list[tuple[tuple[str, ActionSignature], tuple[int, float]]]:
        with self._lock:
            return list(self._stats.items())


def backup(stats: ActionStats, state: str, sig: ActionSignature, reward: float) -> None:
    stats.backup(state, sig, reward)


class TokenVocabulary:
    """Structural tokens of elements that some executed action has targeted."""

    def __init__(self) -> None:
        self._tokens: set[str] = set()
        self._lock = threading.Lock()

    def __contains__(self, token: str) -> bool:
        return token in self._tokens

    def __len__(self) -> int:
        return len(self._tokens)

    def update(self, tokens) -> None:
        with self._lock:
            self._tokens.update(tokens)


# -- signatures and priors ---------------------------------------------------


def target_tokens(obs: ScreenObservation) -> dict[str, tuple[str, set[str]]]:
    """ct token -> (control label, txt tokens of elements in that slot)."""
    out: dict[str, tuple[str, set[str]]] = {}
    for el in obs.elements:
        ct, txt = element_tokens(el, obs.screen_width, obs.screen_height)
        label, txts = out.setdefault(ct, (el.control_label, set()))
        if txt is not None:
            txts.add(txt)
    return out


def enumerate_signatures(obs: ScreenObservation, payloads: Sequence[str] = ()) -> list[ActionSignature]:
    """Executable signatures in lexicographic order of their serialized key.

    Editable elements get one type_text signature per payload (a click when
    there are no payloads); other executable elements get a click.
    """
    sigs: set[ActionSignature] = set()
    for el in obs.elements:
        if not el.executable:
            continue
        ct, _ = element_tokens(el, obs.screen_width, obs.screen_height)
        if is_editable(el) and payloads:
            sigs.update(ActionSignature("type_text", ct, p) for p in payloads)
        else:
            sigs.add(ActionSignature("click", ct))
    return sorted(sigs, key=lambda s: s.key)


def _label_of(token: str) -> str:
    return parse_token(token)[3]


def heuristic_scores(
    obs: ScreenObservation, signatures: Sequence[ActionSignature], vocabulary: TokenVocabulary
) -> list[float]:
    targets = target_tokens(obs)
    scores = []
    for sig in signatures:
        label, txts = targets.get(sig.target_token, (_label_of(sig.target_token), set()))
        novelty = (sig.target_token not in vocabulary) + sum(t not in vocabulary for t in txts)
        bonus = 1.0 if label.lower().replace("-", "").replace(" ", "") in PREFERRED_CONTROLS else 0.0
        scores.append(novelty + bonus)
    return scores


def prior(
    obs: ScreenObservation,
    signatures: Sequence[ActionSignature],
    kind: str = "uniform_prior@1",
    vocabulary: TokenVocabulary | None = None,
    top_m: int = 10,
    floor: float = 0.01,
) -> list[float]:
    """Proposal distribution P(sig | s) aligned with ``signatures``."""
    n = len(signatures)
    if n == 0:
        raise ValueError("prior over an empty signature set")
    if kind == "uniform_prior@1":
        return [1.0 / n] * n
    if kind != "heuristic@1":
        raise ValueError(f"unknown prior kind {kind!r}")
    scores = heuristic_scores(obs, signatures, vocabulary or TokenVocabulary())
    order = sorted(range(n), key=lambda i: (-scores[i], signatures[i].key))
    weights = [0.0] * n
    for rank, i in enumerate(order[:top_m], start=1):
        weights[i] = 1.0 / rank
    rest = order[top_m:]
    for i in rest:
        weights[i] = floor / len(rest)
    total = math.fsum(weights)
    return [w / total for w in weights]


def puct_scores(
    state: str,
    signatures: Sequence[ActionSignature],
    stats: ActionStats,
    priors: Sequence[float],
    c_puct: float,
) -> list[float]:
    sqrt_total = math.sqrt(stats.total(state))
    out = []
    for sig, p in zip(signatures, priors):
        n, q = stats.get(state, sig)
        out.append(q + c_puct * p * sqrt_total / (1 + n))
    return out


def select_action(
    state: str,
    signatures: Sequence[ActionSignature],
    stats: ActionStats,
    priors: Sequence[float],
    cfg: PuctConfig,
) -> ActionSignature:
    """argmax of Q + U; ties go to the higher prior, then the smaller key."""
    if not signatures:
        raise ValueError("no signatures to select from")
    values = puct_scores(state, signatures, stats, priors, cfg.c_puct)
    best = 0
    for i in range(1, len(signatures)):
        if values[i] > values[best]:
            best = i
        elif values[i] == values[best]:
            if priors[i] > priors[best] or (
                priors[i] == priors[best] and signatures[i].key < signatures[best].key
            ):
                best = i
    return signatures[best]


@dataclass(frozen=True)
class Reward:
    state: float
    edge: float
    ambiguity: float

    @property
    def total(self) -> float:
        return self.state + self.edge + self.ambiguity


def immediate_reward(
    new_state: bool, new_edge: bool, u_from: float, u_to: float, cfg: PuctConfig
) -> Reward:
    """Frontier indicators plus clipped ambiguity reduction, all read on G_t."""
    return Reward(
        cfg.lambda_state * float(new_state),
        cfg.lambda_edge * float(new_edge),
        cfg.lambda_amb * max(u_from - u_to, 0.0),
    )


# -- policies ----------------------------------------------------------------


@dataclass
class DecisionContext:
    state: str
    obs: ScreenObservation
    signatures: list[ActionSignature]
    world: "World"
    rng: random.Random
    recent_states: list[str]


class Policy(Protocol):
    label: str

    def choose(self, ctx: DecisionContext) -> ActionSignature: ...


class PuctPolicy:
    def __init__(self, cfg: PuctConfig | None = None, label: str = "puct"):
        self.cfg = cfg or PuctConfig()
        self.label = label

    def choose(self, ctx: DecisionContext) -> ActionSignature:
        cfg = self.cfg
        p = prior(ctx.obs, ctx.signatures, cfg.prior_kind, ctx.world.vocabulary, cfg.heuristic_top_m, cfg.heuristic_floor)
        return select_action(ctx.state, ctx.signatures, ctx.world.stats, p, cfg)


# -- shared world and episodes -----------------------------------------------


class World:
    """Everything workers share: index, graph, action stats, token vocabulary."""

    def __init__(
        self,
        dedup: DedupConfig | None = None,
        ambiguity: AmbiguityParams | None = None,
        puct: PuctConfig | None = None,
    ):
        self.index = ScreenIndex(dedup)
        self.graph = StateGraph()
        self.stats = ActionStats()
        self.vocabulary = TokenVocabulary()
        self.ambiguity = AmbiguityTracker(self.graph, ambiguity)
        self.puct = puct or PuctConfig()
        self.observations = 0
        self._count_lock = threading.Lock()

    def observe(self, obs: ScreenObservation, rollout_group: str = "") -> str:
        sig = extract_signature(obs, self.index.config.embed_dim)
        decision, _ = self.index.resolve(sig, rollout_group or obs.rollout_group)
        self.graph.add_member(decision.state_id, sig.canonical_id)
        with self._count_lock:
            self.observations += 1
        return decision.state_id


@dataclass
class StepRecord:
    step: int
    state_id: str
    signature: ActionSignature
    to_state_id: str
    reward: Reward
    u_before: float
    u_to_before: float
    u_after: float
    was_new_state: bool
    was_new_edge: bool
    external: bool = False

    def to_dict(self) -> dict:
        return {
            "type": "step",
            "step": self.step,
            "state_id": self.state_id,
            "signature": self.signature.to_dict(),
            "to_state_id": self.to_state_id,
            "reward": self.reward.total,
            "r_state": self.reward.state,
            "r_edge": self.reward.edge,
            "r_amb": self.reward.ambiguity,
            "u_before": self.u_before,
            "u_to_before": self.u_to_before,
            "u_after": self.u_after,
            "was_new_state": self.was_new_state,
            "was_new_edge": self.was_new_edge,
            "external": self.external,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StepRecord":
        return cls(
            step=d["step"],
            state_id=d["state_id"],
            signature=ActionSignature.from_dict(d["signature"]),
            to_state_id=d["to_state_id"],
            reward=Reward(d["r_state"], d["r_edge"], d["r_amb"]),
            u_before=d["u_before"],
            u_to_before=d["u_to_before"],
            u_after=d["u_after"],
            was_new_state=d["was_new_state"],
            was_new_edge=d["was_new_edge"],
            external=d.get("external", False),
        )


@dataclass
class EpisodeTrace:
    seed: int
    worker_id: str
    episode: int
    policy: str
    start_state: str
    start_was_new: bool
    initial_hidden_state: str
    header_extra: dict = field(default_factory=dict)
    steps: list[StepRecord] = field(default_factory=list)
    aborted: bool = False
    error: str | None = None
    # wall-clock per decision; never serialized so traces stay reproducible
    decision_seconds: list[float] = field(default_factory=list, repr=False)

    def state_path(self) -> list[str]:
        """s_0 .. s_T: the dedup state after each number of actions."""
        return [self.start_state] + [r.to_state_id for r in self.steps]

    def header(self) -> dict:
        return {
            "type": "header",
            "seed": self.seed,
            "worker_id": self.worker_id,
            "episode": self.episode,
            "policy": self.policy,
            "start_state": self.start_state,
            "start_was_new": self.start_was_new,
            "initial_hidden_state": self.initial_hidden_state,
            **self.header_extra,
        }

    def to_lines(self) -> list[str]:
        lines = [json.dumps(self.header(), sort_keys=True)]
        lines += [json.dumps(r.to_dict(), sort_keys=True) for r in self.steps]
        lines.append(json.dumps({"type": "end", "steps": len(self.steps), "aborted": self.aborted, "error": self.error}, sort_keys=True))
        return lines

    @classmethod
    def from_lines(cls, lines: Sequence[str]) -> "EpisodeTrace":
        recs = [json.loads(line) for line in lines if line.strip()]
        h = recs[0]
        known = {"type", "seed", "worker_id", "episode", "policy", "start_state", "start_was_new", "initial_hidden_state"}
        trace = cls(
            seed=h["seed"],
            worker_id=h["worker_id"],
            episode=h["episode"],
            policy=h["policy"],
            start_state=h["start_state"],
            start_was_new=h["start_was_new"],
            initial_hidden_state=h["initial_hidden_state"],
            header_extra={k: v for k, v in h.items() if k not in known},
        )
        for rec in recs[1:]:
            if rec["type"] == "step":
                trace.steps.append(StepRecord.from_dict(rec))
            elif rec["type"] == "end":
                trace.aborted = rec["aborted"]
                trace.error = rec["error"]
        return trace


def write_traces(path, traces: Sequence[EpisodeTrace]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for trace in traces:
            for line in trace.to_lines():
                fh.write(line + "\n")


def read_traces(path) -> list[EpisodeTrace]:
    traces, current = [], []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            current.append(line)
            if json.loads(line)["type"] == "end":
                traces.append(EpisodeTrace.from_lines(current))
                current = []
    return traces


def episode_steps(
    env: GuiEnv,
    world: World,
    budget: int,
    seed: int,
    policy: Policy | None = None,
    worker_id: str = "w0",
    episode: int = 0,
    start_obs: ScreenObservation | None = None,
    header_extra: dict | None = None,
    clock: Callable[[], float] = time.perf_counter,
) -> Iterator[EpisodeTrace]:
    """Run one episode, yielding the (growing) trace after the start and after every step.

    ``start_obs`` lets a caller begin from a replayed position; otherwise the
    env is reset with ``seed``. Policy randomness comes from a stream derived
    from ``seed``.
    """
    policy = policy or PuctPolicy(world.puct)
    cfg = world.puct
    if start_obs is None:
        start_obs = env.reset(seed)
    initial_hidden = env.hidden_state
    state = world.observe(start_obs, env.scenario.rollout_group)
    start_new = world.graph.add_state(state)
    if env.is_external:
        world.graph.mark_external(state)
    trace = EpisodeTrace(
        seed=seed,
        worker_id=worker_id,
        episode=episode,
        policy=policy.label,
        start_state=state,
        start_was_new=start_new,
        initial_hidden_state=initial_hidden,
        header_extra=dict(header_extra or {}),
    )
    rng = substream(seed, "policy", worker_id, episode)
    obs = start_obs
    recent = [state]
    payloads = env.scenario.payloads
    yield trace
    for t in range(budget):
        t0 = clock()
        signatures = enumerate_signatures(obs, payloads)
        if not signatures:
            break
        sig = policy.choose(DecisionContext(state, obs, signatures, world, rng, recent[-5:]))
        trace.decision_seconds.append(clock() - t0)
        u_from = world.ambiguity.score(state)
        try:
            next_obs = env.step(sig)
        except Exception as exc:  # environment fault: keep the partial trace
            trace.aborted = True
            trace.error = f"{type(exc).__name__}: {exc}"
            break
        next_state = world.observe(next_obs, env.scenario.rollout_group)
        rec = world.graph.record_transition(state, sig, next_state, worker_id, t)
        external = env.is_external
        if external:
            world.graph.mark_external(next_state)
        # u(s') on G_t: a brand-new state has no evidence; a self-loop saw u_from
        if rec.was_new_state:
            u_to = world.ambiguity.params.u0
        elif next_state == state:
            u_to = u_from
        else:
            u_to = world.ambiguity.score(next_state)
        reward = immediate_reward(rec.was_new_state, rec.was_new_edge, u_from, u_to, cfg)
        world.stats.backup(state, sig, reward.total)
        targets = target_tokens(obs).get(sig.target_token)
        world.vocabulary.update([sig.target_token, *(targets[1] if targets else ())])
        trace.steps.append(
            StepRecord(
                step=t,
                state_id=state,
                signature=sig,
                to_state_id=next_state,
                reward=reward,
                u_before=u_from,
                u_to_before=u_to,
                u_after=world.ambiguity.score(state),
                was_new_state=rec.was_new_state,
                was_new_edge=rec.was_new_edge,
                external=external,
            )
        )
        state, obs = next_state, next_obs
        recent.append(state)
        yield trace


def run_episode(env: GuiEnv, world: World, budget: int, seed: int, **kwargs) -> EpisodeTrace:
    trace = None
    for trace in episode_steps(env, world, budget, seed, **kwargs):
        pass
    return trace


def config_echo(world: World) -> dict:
    return {
        "puct": asdict(world.puct),
        "ambiguity": asdict(world.ambiguity.params),
        "dedup": asdict(world.index.config),
    }
