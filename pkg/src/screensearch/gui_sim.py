"""Deterministic simulated GUI with hidden workflow state and aliased observations.

A scenario is a set of screen templates, hidden states that render one
template each, and a transition table keyed by (hidden state, element,
payload). Hidden states sharing a template are indistinguishable on
screen; that is how aliasing is built. Jitter perturbs raw observations
(pixel offsets, letter case, decorative elements) within bounds that are
checked at load time against the dedup threshold.
"""

from __future__ import annotations

import hashlib
import json
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import yaml

from .retrieval_index import DEFAULT_TAU, ScreenIndex
from .screen_model import (
    GRID,
    ScreenObservation,
    UiElement,
    extract_signature,
    normalize_text,
    quantize_cell,
)
from .seeding import derive_seed
from .state_graph import ActionSignature

EDITABLE_LABELS = frozenset({"edit"})


def is_editable(element: UiElement) -> bool:
    return element.executable and element.control_label in EDITABLE_LABELS


class ScenarioError(ValueError):
    def __init__(self, violations: Sequence[str]):
        self.violations = list(violations)
        super().__init__("invalid scenario:\n  " + "\n  ".join(self.violations))


@dataclass(frozen=True)
class TemplateElement:
    id: str
    bbox: tuple[float, float, float, float]
    control_label: str
    text: str = ""
    executable: bool = False
    decorative: bool = False


@dataclass(frozen=True)
class HiddenState:
    id: str
    template: str
    external: bool = False
    flags: tuple[tuple[str, str], ...] = ()


@dataclass(frozen=True)
class JitterSpec:
    position_px: float = 0.0
    fraction: float = 0.1
    case_flip_prob: float = 0.0
    decorative_drop_prob: float = 0.0

    @property
    def is_zero(self) -> bool:
        return (
            self.position_px == 0
            and self.case_flip_prob == 0
            and self.decorative_drop_prob == 0
        )


@dataclass
class Scenario:
    name: str
    width: int
    height: int
    initial_state: str
    templates: dict[str, tuple[TemplateElement, ...]]
    hidden_states: dict[str, HiddenState]
    # (hidden state, element id, payload or None) -> ((next state, prob), ...)
    transitions: dict[tuple[str, str, str | None], tuple[tuple[str, float], ...]]
    alias_groups: list[tuple[str, ...]] = field(default_factory=list)
    jitter: JitterSpec = field(default_factory=JitterSpec)
    payloads: tuple[str, ...] = ()
    display_mode: str = "light"
    text_size_bin: int = 100
    rollout_group: str = ""
    seed: int = 0
    tau: float = DEFAULT_TAU
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def scenario_hash(self) -> str:
        blob = json.dumps(self.raw, sort_keys=True, default=str).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]

    def element(self, state: str, element_id: str) -> TemplateElement:
        for el in self.templates[self.hidden_states[state].template]:
            if el.id == element_id:
                return el
        raise KeyError(element_id)

    def template_observation(self, state: str) -> ScreenObservation:
        """The unperturbed rendering of a hidden state."""
        tmpl = self.templates[self.hidden_states[state].template]
        return self._observation(
            UiElement(e.bbox, e.control_label, e.text, e.executable) for e in tmpl
        )

    def _observation(self, elements: Iterable[UiElement]) -> ScreenObservation:
        return ScreenObservation(
            elements=tuple(elements),
            screen_width=self.width,
            screen_height=self.height,
            text_size_bin=self.text_size_bin,
            display_mode=self.display_mode,
            rollout_group=self.rollout_group,
        )


# -- loading -----------------------------------------------------------------


def cell_bbox(row: int, col: int, width: int, height: int, fill: float = 0.7) -> tuple[float, float, float, float]:
    """Box centered on a grid cell, so small offsets never change its cell."""
    cw, ch = width / GRID, height / GRID
    cx, cy = (col + 0.5) * cw, (row + 0.5) * ch
    hw, hh = cw * fill / 2, ch * fill / 2
    return (cx - hw, cy - hh, cx + hw, cy + hh)


def _parse_element(d: dict, width: int, height: int) -> TemplateElement:
    if "bbox" in d:
        bbox = tuple(float(v) for v in d["bbox"])
    else:
        row, col = d["cell"]
        bbox = cell_bbox(int(row), int(col), width, height)
    return TemplateElement(
        id=str(d["id"]),
        bbox=bbox,
        control_label=str(d.get("control", d.get("control_label", ""))),
        text=str(d.get("text", "")),
        executable=bool(d.get("executable", False)),
        decorative=bool(d.get("decorative", False)),
    )


def _parse_outcomes(to) -> tuple[tuple[str, float], ...]:
    if isinstance(to, str):
        return ((to, 1.0),)
    return tuple((str(k), float(v)) for k, v in to.items())


def scenario_from_dict(data: dict) -> Scenario:
    data = dict(data)
    if "generate" in data:
        data = expand_generated(data)
    violations: list[str] = []
    try:
        width = int(data.get("screen", {}).get("width", 1200))
        height = int(data.get("screen", {}).get("height", 900))
        templates = {
            str(name): tuple(_parse_element(e, width, height) for e in elements)
            for name, elements in data.get("templates", {}).items()
        }
        hidden = {}
        for sid, spec in data.get("hidden_states", {}).items():
            spec = spec or {}
            hidden[str(sid)] = HiddenState(
                id=str(sid),
                template=str(spec.get("template", sid)),
                external=bool(spec.get("external", False)),
                flags=tuple(sorted((str(k), str(v)) for k, v in (spec.get("flags") or {}).items())),
            )
        transitions: dict = {}
        for t in data.get("transitions", []):
            payload = t.get("payload")
            key = (str(t["from"]), str(t["element"]), None if payload is None else str(payload))
            if key in transitions:
                violations.append(f"duplicate transition {key}")
            transitions[key] = _parse_outcomes(t["to"])
        j = data.get("jitter") or {}
        jitter = JitterSpec(
            position_px=float(j.get("position_px", 0.0)),
            fraction=float(j.get("fraction", 0.1)),
            case_flip_prob=float(j.get("case_flip_prob", 0.0)),
            decorative_drop_prob=float(j.get("decorative_drop_prob", 0.0)),
        )
        scenario = Scenario(
            name=str(data.get("name", "scenario")),
            width=width,
            height=height,
            initial_state=str(data["initial_state"]),
            templates=templates,
            hidden_states=hidden,
            transitions=transitions,
            alias_groups=[tuple(str(s) for s in g) for g in data.get("alias_groups", [])],
            jitter=jitter,
            payloads=tuple(str(p) for p in data.get("payloads", [])),
            display_mode=str(data.get("display_mode", "light")),
            text_size_bin=int(data.get("text_size_bin", 100)),
            rollout_group=str(data.get("rollout_group", data.get("name", ""))),
            seed=int(data.get("seed", 0)),
            tau=float(data.get("tau", DEFAULT_TAU)),
            raw=data,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioError([f"malformed scenario: {exc!r}"]) from exc
    violations.extend(validate_scenario(scenario))
    if violations:
        raise ScenarioError(violations)
    return scenario


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    if not path.exists() and not path.suffix:
        path = builtin_scenario_path(str(path))
    with open(path, encoding="utf-8") as fh:
        data = yaml.safe_load(fh)
    if not isinstance(data, dict):
        raise ScenarioError([f"{path}: top level must be a mapping"])
    return scenario_from_dict(data)


def builtin_scenario_path(name: str) -> Path:
    return Path(__file__).with_name("scenarios") / f"{name}.yaml"


def builtin_scenarios() -> list[str]:
    return sorted(p.stem for p in Path(__file__).with_name("scenarios").glob("*.yaml"))


# -- validation --------------------------------------------------------------


def jitter_similarity_bound(
    template: Sequence[TemplateElement],
    width: int,
    height: int,
    jitter: JitterSpec,
    lambda_ct: float = 0.5,
    lambda_txt: float = 0.5,
) -> float:
    """Worst-case sparse similarity between a template and any jittered rendering.

    Case flips never change tokens (text is lowercased). A position offset
    changes at most one ct and one txt token, and only for elements whose
    cell can actually change. A dropped decorative element removes at most
    its tokens.
    """
    ct, txt = set(), set()
    for e in template:
        row, col = quantize_cell(e.bbox, width, height)
        ct.add((row, col, e.control_label))
        if normalize_text(e.text):
            txt.add((row, col, normalize_text(e.text)))
    movable = [e for e in template if not e.decorative]
    budget = math.floor(jitter.fraction * len(movable)) if jitter.position_px > 0 else 0
    g = jitter.position_px
    crossable = []
    for e in movable:
        lo = quantize_cell((e.bbox[0] - g, e.bbox[1] - g, e.bbox[2] - g, e.bbox[3] - g), width, height)
        hi = quantize_cell((e.bbox[0] + g, e.bbox[1] + g, e.bbox[2] + g, e.bbox[3] + g), width, height)
        if lo != hi:
            crossable.append(e)
    moved_ct = min(budget, len(crossable))
    moved_txt = min(budget, sum(1 for e in crossable if normalize_text(e.text)))
    dropped_ct = dropped_txt = 0
    if jitter.decorative_drop_prob > 0:
        deco = [e for e in template if e.decorative]
        dropped_ct = len(deco)
        dropped_txt = sum(1 for e in deco if normalize_text(e.text))

    def bound(size: int, removed: int, added: int) -> float:
        if size == 0:
            return 1.0 if added == 0 else 0.0
        return max(0.0, (size - removed) / (size + added))

    b_ct = bound(len(ct), moved_ct + dropped_ct, moved_ct)
    b_txt = bound(len(txt), moved_txt + dropped_txt, moved_txt)
    return lambda_ct * b_ct + lambda_txt * b_txt


def validate_scenario(sc: Scenario) -> list[str]:
    v: list[str] = []
    if sc.width <= 0 or sc.height <= 0:
        v.append("screen dimensions must be positive")
    if sc.display_mode not in ("light", "dark"):
        v.append(f"display_mode must be light or dark, got {sc.display_mode!r}")
    if sc.initial_state not in sc.hidden_states:
        v.append(f"initial_state {sc.initial_state!r} is not a hidden state")
    j = sc.jitter
    if j.position_px < 0 or not 0 <= j.fraction <= 1:
        v.append("jitter position_px must be >= 0 and fraction in [0, 1]")
    for p in (j.case_flip_prob, j.decorative_drop_prob):
        if not 0 <= p <= 1:
            v.append(f"jitter probability {p} outside [0, 1]")
    for name, elements in sc.templates.items():
        ids = [e.id for e in elements]
        if len(set(ids)) != len(ids):
            v.append(f"template {name}: duplicate element ids")
        for e in elements:
            if not e.control_label:
                v.append(f"template {name}: element {e.id} has no control label")
            l, t, r, b = e.bbox
            if l > r or t > b:
                v.append(f"template {name}: element {e.id} bbox not well-ordered")
            if r < 0 or b < 0 or l > sc.width or t > sc.height:
                v.append(f"template {name}: element {e.id} lies outside the screen")
        if not any(e.executable for e in elements):
            v.append(f"template {name}: no executable element")
        bound = jitter_similarity_bound(elements, sc.width, sc.height, j)
        if bound + 1e-9 < sc.tau:
            v.append(f"template {name}: worst-case jitter similarity {bound:.4f} below tau {sc.tau}")
    for sid, hs in sc.hidden_states.items():
        if hs.template not in sc.templates:
            v.append(f"hidden state {sid}: unknown template {hs.template!r}")
    for (src, el, payload), outcomes in sc.transitions.items():
        if src not in sc.hidden_states:
            v.append(f"transition from unknown state {src!r}")
            continue
        tmpl = sc.templates.get(sc.hidden_states[src].template, ())
        match = [e for e in tmpl if e.id == el]
        if not match:
            v.append(f"transition {src}/{el}: element not in template")
        elif not match[0].executable:
            v.append(f"transition {src}/{el}: element not executable")
        total = 0.0
        for dest, p in outcomes:
            if dest not in sc.hidden_states:
                v.append(f"transition {src}/{el}: unknown target {dest!r}")
            if p <= 0:
                v.append(f"transition {src}/{el}: non-positive probability")
            total += p
        if abs(total - 1.0) > 1e-9:
            v.append(f"transition {src}/{el}: probabilities sum to {total}")
    for group in sc.alias_groups:
        missing = [s for s in group if s not in sc.hidden_states]
        if missing:
            v.append(f"alias group {group}: unknown states {missing}")
            continue
        if len({sc.hidden_states[s].template for s in group}) != 1:
            v.append(f"alias group {group}: members do not share one template")
    return v


# -- environment -------------------------------------------------------------


class GuiEnv:
    """One simulated application instance. Not shared between workers."""

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self.hidden_state: str | None = None
        self.observation: ScreenObservation | None = None
        self._element_ids: list[str] = []
        self._rng = random.Random(0)

    @property
    def is_external(self) -> bool:
        return self.scenario.hidden_states[self.hidden_state].external

    def reset(self, seed: int, initial_state: str | None = None) -> ScreenObservation:
        self._rng = random.Random(derive_seed(seed, "env", self.scenario.name))
        self.hidden_state = initial_state or self.scenario.initial_state
        if self.hidden_state not in self.scenario.hidden_states:
            raise KeyError(f"unknown hidden state {self.hidden_state!r}")
        return self._emit()

    def _emit(self) -> ScreenObservation:
        sc, rng, j = self.scenario, self._rng, self.scenario.jitter
        tmpl = sc.templates[sc.hidden_states[self.hidden_state].template]
        kept = [e for e in tmpl if not (e.decorative and j.decorative_drop_prob > 0 and rng.random() < j.decorative_drop_prob)]
        movable = [i for i, e in enumerate(kept) if not e.decorative]
        n_move = math.floor(j.fraction * sum(1 for e in tmpl if not e.decorative)) if j.position_px > 0 else 0
        moved = set(rng.sample(movable, min(n_move, len(movable))))
        elements, ids = [], []
        for i, e in enumerate(kept):
            bbox = e.bbox
            if i in moved:
                dx = rng.uniform(-j.position_px, j.position_px)
                dy = rng.uniform(-j.position_px, j.position_px)
                bbox = (bbox[0] + dx, bbox[1] + dy, bbox[2] + dx, bbox[3] + dy)
            text = e.text
            if j.case_flip_prob > 0 and text.isascii() and rng.random() < j.case_flip_prob:
                text = text.swapcase()
            elements.append(UiElement(bbox, e.control_label, text, e.executable))
            ids.append(e.id)
        self._element_ids = ids
        self.observation = sc._observation(elements)
        return self.observation

    def resolve_element(self, sig: ActionSignature) -> str | None:
        """Template element id targeted by a signature on the current screen."""
        obs = self.observation
        for el_id, el in zip(self._element_ids, obs.elements):
            if not el.executable or (sig.kind == "type_text") != is_editable(el):
                continue
            row, col = quantize_cell(el.bbox, obs.screen_width, obs.screen_height)
            if sig.target_token == f"r{row}_c{col}|T:{el.control_label}":
                return el_id
        return None

    def step(self, sig: ActionSignature) -> ScreenObservation:
        if self.observation is None:
            raise RuntimeError("environment not reset")
        el_id = self.resolve_element(sig)
        if el_id is not None:
            table = self.scenario.transitions
            outcomes = table.get((self.hidden_state, el_id, sig.payload))
            if outcomes is None and sig.payload is not None:
                outcomes = table.get((self.hidden_state, el_id, None))
            if outcomes is not None:
                self.hidden_state = _sample(outcomes, self._rng)
        return self._emit()


def _sample(outcomes: Sequence[tuple[str, float]], rng: random.Random) -> str:
    if len(outcomes) == 1:
        return outcomes[0][0]
    x = rng.random()
    acc = 0.0
    for state, p in outcomes:
        acc += p
        if x < acc:
            return state
    return outcomes[-1][0]


# -- replay ------------------------------------------------------------------


@dataclass
class ReplayPrefix:
    seed: int
    initial_state: str
    actions: tuple[ActionSignature, ...]
    target_state_id: str
    anchor_step: int
    verified: bool = False

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "initial_state": self.initial_state,
            "actions": [a.to_dict() for a in self.actions],
            "target_state_id": self.target_state_id,
            "anchor_step": self.anchor_step,
            "verified": self.verified,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ReplayPrefix":
        return cls(
            seed=int(d["seed"]),
            initial_state=d["initial_state"],
            actions=tuple(ActionSignature.from_dict(a) for a in d["actions"]),
            target_state_id=d["target_state_id"],
            anchor_step=int(d["anchor_step"]),
            verified=bool(d.get("verified", False)),
        )


class PoolShortfall(Exception):
    def __init__(self, pool: list[ReplayPrefix], requested: int, eligible: int):
        super().__init__(f"replay pool shortfall: requested {requested}, only {eligible} eligible states")
        self.pool = pool
        self.requested = requested
        self.eligible = eligible


def replay(env: GuiEnv, prefix: ReplayPrefix, seed: int) -> ScreenObservation:
    obs = env.reset(seed, prefix.initial_state)
    for sig in prefix.actions:
        obs = env.step(sig)
    return obs


def verify_replay(scenario: Scenario, prefix: ReplayPrefix, trials: int, index: ScreenIndex) -> bool:
    """True iff every trial (each with its own env seed) lands in the target state.

    ``index`` is the dedup map the target id belongs to; it is only read.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    env = GuiEnv(scenario)
    for trial in range(trials):
        obs = replay(env, prefix, derive_seed(prefix.seed, "replay-trial", trial))
        sig = extract_signature(obs, index.config.embed_dim)
        if index.get(sig.canonical_id) is not None:
            state = index.get(sig.canonical_id).dedup_state_id
        else:
            state = index.dedup_decide(sig, index.make_query(sig, scenario.rollout_group)).state_id
        if state != prefix.target_state_id:
            return False
    return True


def build_replay_pool(
    scenario: Scenario,
    traces: Sequence,
    index: ScreenIndex,
    min_occurrences: int = 3,
    min_anchor: int = 5,
    count: int = 3,
    trials: int = 5,
    candidates_per_state: int = 3,
) -> list[ReplayPrefix]:
    """Select ``count`` verified replay-start prefixes from exploration traces.

    Eligible states occur at least ``min_occurrences`` times and are reached
    by some trace after at least ``min_anchor`` actions. Selection is in
    lexicographic state-id order. Raises PoolShortfall (carrying the partial
    pool) when too few states qualify.
    """
    occurrences: dict[str, int] = {}
    anchors: dict[str, list[ReplayPrefix]] = {}
    for trace in traces:
        path = trace.state_path()
        for state in path:
            occurrences[state] = occurrences.get(state, 0) + 1
        actions = [rec.signature for rec in trace.steps]
        for k in range(min_anchor, len(path)):
            state = path[k]
            cands = anchors.setdefault(state, [])
            if len(cands) < candidates_per_state and not any(c.seed == trace.seed for c in cands):
                cands.append(
                    ReplayPrefix(trace.seed, trace.initial_hidden_state, tuple(actions[:k]), state, k)
                )
    pool: list[ReplayPrefix] = []
    eligible = 0
    for state in sorted(anchors):
        if occurrences.get(state, 0) < min_occurrences:
            continue
        for cand in anchors[state]:
            if verify_replay(scenario, cand, trials, index):
                cand.verified = True
                eligible += 1
                if len(pool) < count:
                    pool.append(cand)
                break
    if len(pool) < count:
        raise PoolShortfall(pool, count, eligible)
    return pool


def save_pool(path: str | Path, pool: Iterable[ReplayPrefix], header: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if header is not None:
            fh.write(json.dumps({"type": "header", **header}, sort_keys=True) + "\n")
        for p in pool:
            fh.write(json.dumps({"type": "prefix", **p.to_dict()}, sort_keys=True) + "\n")


def read_pool_header(path: str | Path) -> dict:
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
    rec = json.loads(first) if first.strip() else {}
    return rec if rec.get("type") == "header" else {}


def load_pool(path: str | Path) -> list[ReplayPrefix]:
    pool = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            if rec.get("type", "prefix") == "prefix":
                pool.append(ReplayPrefix.from_dict(rec))
    return pool


# -- procedural scenarios ----------------------------------------------------

_WORDS = (
    "account alpha archive audio backup banner border bridge budget cache calendar canvas "
    "caption chart clock cloud column comment contact cursor dashboard data delta device "
    "draft driver email export feed filter folder font format frame gallery graph grid "
    "header history image import index inbox invoice label layer layout ledger library "
    "link list locale macro margin market media memo metric module monitor network note "
    "notice number option order outline packet page palette panel paper pattern photo "
    "pilot plugin policy portal preview print profile project query queue radio range "
    "record region report request review ribbon route ruler sample schema scope screen "
    "script section sensor server session shape sheet signal sketch slide source spell "
    "status storage style summary symbol table tag task template theme thread ticket "
    "timer title token toolbar topic track update upload user value vector version view "
    "volume widget window wizard zone"
).split()

_MENU = ("File", "Edit", "View", "Help")


def expand_generated(data: dict) -> dict:
    """Expand a ``generate:`` block into templates, states and transitions."""
    gen = dict(data["generate"])
    kind = gen.pop("kind", "app")
    if kind != "app":
        raise ScenarioError([f"unknown generator kind {kind!r}"])
    width = int(data.get("screen", {}).get("width", 1200))
    height = int(data.get("screen", {}).get("height", 900))
    generated = generate_app(width=width, height=height, payloads=data.get("payloads", []), **gen)
    out = {k: v for k, v in data.items() if k != "generate"}
    out["generate_spec"] = data["generate"]
    for key in ("templates", "hidden_states"):
        merged = dict(generated[key])
        merged.update(data.get(key) or {})
        out[key] = merged
    out["transitions"] = generated["transitions"] + list(data.get("transitions") or [])
    out["alias_groups"] = generated["alias_groups"] + list(data.get("alias_groups") or [])
    out.setdefault("initial_state", generated["initial_state"])
    return out


def generate_app(
    screens: int = 100,
    seed: int = 0,
    width: int = 1200,
    height: int = 900,
    payloads: Sequence[str] = (),
    buttons: tuple[int, int] = (2, 5),
    static_texts: tuple[int, int] = (4, 8),
    images: tuple[int, int] = (1, 3),
    edit_prob: float = 0.3,
    stochastic_prob: float = 0.08,
    alias_prob: float = 0.1,
    external_prob: float = 0.04,
) -> dict:
    """Random application: a screen tree with back links, cross links, menus,
    no-op static content, aliased twins, stochastic and external edges."""
    rng = random.Random(derive_seed(seed, "generate-app"))
    words = list(_WORDS)

    def phrase(n: int = 2) -> str:
        return " ".join(rng.choice(words) for _ in range(n))

    templates: dict[str, list[dict]] = {}
    hidden: dict[str, dict] = {}
    transitions: list[dict] = []
    alias_groups: list[list[str]] = []

    def menu_elements() -> list[dict]:
        return [
            {"id": f"menu_{m.lower()}", "cell": [1, 1 + 3 * i], "control": "menuitem", "text": m, "executable": True}
            for i, m in enumerate(_MENU)
        ]

    # global menu screens reachable from every app screen
    for m in _MENU:
        name = f"menu_{m.lower()}"
        elements = [
            {"id": "title", "cell": [0, 1], "control": "text", "text": f"{m} menu"},
            {"id": "close", "cell": [2, 20], "control": "button", "text": "Close", "executable": True},
        ]
        for k in range(4):
            elements.append({"id": f"entry{k}", "cell": [3 + 2 * k, 2], "control": "text", "text": f"{m} {phrase()}", "executable": True})
        templates[name] = elements
        hidden[name] = {"template": name}

    children: dict[int, list[int]] = {i: [] for i in range(screens)}
    parent = {0: None}
    for i in range(1, screens):
        p = rng.randrange(max(1, i - 8), i) if i > 1 else 0
        parent[i] = p
        children[p].append(i)

    for i in range(screens):
        name = f"s{i:03d}"
        used: set[tuple[int, int]] = {(1, 1 + 3 * k) for k in range(len(_MENU))}

        def free_cell() -> list[int]:
            while True:
                cell = (rng.randrange(4, 27), rng.randrange(0, 30))
                if cell not in used:
                    used.add(cell)
                    return list(cell)

        title = f"{phrase(3)} {i}"
        els = [{"id": "title", "cell": [0, 1], "control": "text", "text": title}]
        used.add((0, 1))
        els += menu_elements()
        n_buttons = max(rng.randint(*buttons), len(children[i]) + (1 if i else 0))
        for b in range(n_buttons):
            els.append({"id": f"btn{b}", "cell": free_cell(), "control": "button", "text": phrase(), "executable": True})
        for t in range(rng.randint(*static_texts)):
            els.append({"id": f"txt{t}", "cell": free_cell(), "control": "text", "text": phrase(), "executable": True})
        for g in range(rng.randint(*images)):
            els.append({"id": f"img{g}", "cell": free_cell(), "control": "image", "text": "", "executable": True})
        els.append({"id": "spinner", "cell": free_cell(), "control": "image", "text": "", "decorative": True})
        els.append({"id": "status", "cell": [29, 0], "control": "text", "text": f"status {phrase(1)}"})
        has_edit = bool(payloads) and rng.random() < edit_prob
        if has_edit:
            els.append({"id": "edit", "cell": free_cell(), "control": "edit", "text": "", "executable": True})
        templates[name] = els
        hidden[name] = {"template": name}

        for m in _MENU:
            transitions.append({"from": name, "element": f"menu_{m.lower()}", "to": f"menu_{m.lower()}"})
        targets = [f"s{c:03d}" for c in children[i]]
        if i:
            targets.append(f"s{parent[i]:03d}")
        while len(targets) < n_buttons:
            targets.append(f"s{rng.randrange(screens):03d}" if rng.random() < 0.6 else name)
        for b, target in enumerate(targets):
            transitions.append({"from": name, "element": f"btn{b}", "to": target})
        if has_edit:
            results = f"{name}_results"
            templates[results] = [
                {"id": "title", "cell": [0, 1], "control": "text", "text": f"results for {title}"},
                {"id": "back", "cell": [2, 20], "control": "button", "text": "Back", "executable": True},
                {"id": "hit0", "cell": [5, 3], "control": "listitem", "text": phrase(), "executable": True},
                {"id": "hit1", "cell": [7, 3], "control": "listitem", "text": phrase(), "executable": True},
            ]
            hidden[results] = {"template": results}
            transitions.append({"from": name, "element": "edit", "payload": str(payloads[0]), "to": results})
            transitions.append({"from": results, "element": "back", "to": name})

    for m in _MENU:
        transitions.append({"from": f"menu_{m.lower()}", "element": "close", "to": "s000"})

    # post-pass: stochastic, external and aliased edges on button transitions
    by_key = {(t["from"], t["element"]): t for t in transitions}
    button_edges = [t for t in transitions if t["element"].startswith("btn") and t["from"].startswith("s")]
    ext_count = 0
    for t in button_edges:
        roll = rng.random()
        src = t["from"]
        dest = t["to"]
        if roll < external_prob:
            ext = f"ext{ext_count}"
            ext_count += 1
            templates[ext] = [
                {"id": "title", "cell": [10, 10], "control": "text", "text": f"external dialog {phrase()}"},
                {"id": "ok", "cell": [14, 14], "control": "button", "text": "OK", "executable": True},
                {"id": "cancel", "cell": [14, 18], "control": "button", "text": "Cancel", "executable": True},
            ]
            hidden[ext] = {"template": ext, "external": True}
            transitions.append({"from": ext, "element": "ok", "to": dest})
            transitions.append({"from": ext, "element": "cancel", "to": src})
            t["to"] = ext
        elif roll < external_prob + stochastic_prob and dest != src:
            t["to"] = {dest: 0.7, src: 0.3}
        elif roll < external_prob + stochastic_prob + alias_prob and dest != src and dest.startswith("s") and dest != "s000":
            twin = f"{dest}_alias"
            if twin in hidden:
                continue
            hidden[twin] = {"template": dest, "flags": {"variant": "b"}}
            alias_groups.append([dest, twin])
            t["to"] = {dest: 0.5, twin: 0.5}
            # the twin behaves like its original except that its first button
            # leads somewhere else
            for (s, el), orig in list(by_key.items()):
                if s != dest:
                    continue
                twin_t = dict(orig, **{"from": twin})
                if el == "btn0":
                    twin_t["to"] = f"s{rng.randrange(screens):03d}"
                transitions.append(twin_t)
    return {
        "templates": templates,
        "hidden_states": hidden,
        "transitions": transitions,
        "alias_groups": alias_groups,
        "initial_state": "s000",
    }
