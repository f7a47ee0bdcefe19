import random

import pytest
import yaml

from screensearch.config import RunConfig
from screensearch.explorer import World, enumerate_signatures
from screensearch.gui_sim import (
    GuiEnv,
    JitterSpec,
    PoolShortfall,
    ReplayPrefix,
    ScenarioError,
    build_replay_pool,
    builtin_scenario_path,
    builtin_scenarios,
    jitter_similarity_bound,
    load_pool,
    load_scenario,
    save_pool,
    scenario_from_dict,
    verify_replay,
)
from screensearch.retrieval_index import ScreenIndex, sparse_similarity
from screensearch.runs import explore
from screensearch.screen_model import extract_signature
from screensearch.state_graph import ActionSignature


def tiny(jitter=None, **overrides):
    data = {
        "name": "tiny",
        "initial_state": "a",
        "templates": {
            "a": [
                {"id": "go", "cell": [5, 5], "control": "button", "text": "Go", "executable": True},
                {"id": "t1", "cell": [1, 1], "control": "text", "text": "Alpha page"},
            ],
            "b": [
                {"id": "back", "cell": [5, 5], "control": "button", "text": "Back", "executable": True},
                {"id": "t1", "cell": [1, 1], "control": "text", "text": "Beta page"},
            ],
        },
        "hidden_states": {"a": {}, "b": {}},
        "transitions": [
            {"from": "a", "element": "go", "to": "b"},
            {"from": "b", "element": "back", "to": "a"},
        ],
    }
    if jitter is not None:
        data["jitter"] = jitter
    data.update(overrides)
    return scenario_from_dict(data)


def click_on(obs, text):
    el = next(e for e in obs.elements if e.text.lower() == text.lower())
    return next(s for s in enumerate_signatures(obs) if s.target_token.startswith(_cell(el, obs)))


def _cell(el, obs):
    from screensearch.screen_model import quantize_cell

    r, c = quantize_cell(el.bbox, obs.screen_width, obs.screen_height)
    return f"r{r}_c{c}|"


class TestScenarios:
    @pytest.mark.parametrize("name", ["aliased_hub", "alias_free", "loop_trap", "reference"])
    def test_builtins_load(self, name):
        assert name in builtin_scenarios()
        sc = load_scenario(name)
        assert sc.hidden_states and sc.transitions

    def test_violations_listed(self):
        with pytest.raises(ScenarioError) as info:
            tiny(transitions=[{"from": "a", "element": "go", "to": {"b": 0.5, "zz": 0.2}}])
        text = " ".join(info.value.violations)
        assert "unknown target" in text and "sum to" in text

    def test_non_executable_transition_rejected(self):
        with pytest.raises(ScenarioError):
            tiny(transitions=[{"from": "a", "element": "t1", "to": "b"}])

    def test_unbounded_jitter_rejected(self):
        # half of two elements may move with a 40 px shift: bound falls below tau
        with pytest.raises(ScenarioError, match="jitter"):
            tiny(jitter={"position_px": 40, "fraction": 0.5})

    def test_bad_alias_group(self):
        with pytest.raises(ScenarioError):
            tiny(alias_groups=[["a", "b"]])

    def test_hash_changes_with_content(self):
        assert tiny().scenario_hash != tiny(name="other").scenario_hash


class TestEnv:
    def test_same_seed_same_observation(self):
        sc = load_scenario("aliased_hub")
        assert GuiEnv(sc).reset(3) == GuiEnv(sc).reset(3)

    def test_zero_jitter_identical_across_seeds(self):
        sc = tiny()
        assert GuiEnv(sc).reset(1) == GuiEnv(sc).reset(2)

    def test_different_seeds_dedup_together(self):
        sc = load_scenario("reference")
        obs = [extract_signature(GuiEnv(sc).reset(s)) for s in range(30)]
        assert all(sparse_similarity(obs[0], o) >= 0.93 - 1e-9 for o in obs)

    def test_noop_and_deterministic_edges(self):
        sc = tiny()
        env = GuiEnv(sc)
        obs = env.reset(0)
        start = extract_signature(obs).canonical_id
        ghost = ActionSignature("click", "r20_c20|T:button")
        assert extract_signature(env.step(ghost)).canonical_id == start
        go = enumerate_signatures(obs)[0]
        targets = set()
        for seed in range(20):
            env.reset(seed)
            targets.add(extract_signature(env.step(go)).canonical_id)
        assert len(targets) == 1 and start not in targets

    def test_stochastic_split(self):
        sc = load_scenario("aliased_hub")
        env = GuiEnv(sc)
        signin = enumerate_signatures(env.reset(0))[0]
        hits = 0
        for seed in range(1000):
            env.reset(seed)
            env.step(signin)
            hits += env.hidden_state == "hub_a"
        assert abs(hits / 1000 - 0.5) <= 0.05

    def test_episode_is_pure_function_of_seed(self):
        sc = load_scenario("loop_trap")
        rng = random.Random(4)
        runs = []
        for _ in range(2):
            env = GuiEnv(sc)
            obs = env.reset(12)
            out = [obs]
            pick = random.Random(8)
            for _ in range(30):
                sigs = enumerate_signatures(obs, sc.payloads)
                obs = env.step(sigs[pick.randrange(len(sigs))])
                out.append(obs)
            runs.append(out)
        assert runs[0] == runs[1]
        del rng

    def test_external_flag(self):
        sc = load_scenario("loop_trap")
        assert any(h.external for h in sc.hidden_states.values())


class TestJitter:
    @pytest.mark.parametrize("name", ["aliased_hub", "alias_free", "loop_trap", "reference"])
    def test_jitter_soundness(self, name):
        sc = load_scenario(name)
        env = GuiEnv(sc)
        states = sorted(sc.hidden_states)
        rng = random.Random(1)
        for draw in range(1000):
            state = states[draw % len(states)] if len(states) <= 20 else rng.choice(states)
            template = extract_signature(sc.template_observation(state))
            jittered = extract_signature(env.reset(draw, state))
            assert sparse_similarity(template, jittered) >= sc.tau - 1e-9

    def test_alias_group_merges(self):
        sc = load_scenario("aliased_hub")
        for group in sc.alias_groups:
            index = ScreenIndex()
            ids = set()
            for member in group:
                for seed in range(20):
                    decision, _ = index.resolve(extract_signature(GuiEnv(sc).reset(seed, member)), sc.rollout_group)
                    ids.add(decision.state_id)
            assert len(ids) == 1

    def test_bound_is_conservative(self):
        sc = load_scenario("aliased_hub")
        spec = JitterSpec(position_px=5, fraction=0.1, case_flip_prob=1.0, decorative_drop_prob=1.0)
        for template in sc.templates.values():
            assert jitter_similarity_bound(template, sc.width, sc.height, spec) <= 1.0


class TestReplay:
    def _index_with(self, sc, states, seed=0):
        index = ScreenIndex()
        for s in states:
            index.resolve(extract_signature(GuiEnv(sc).reset(seed, s)), sc.rollout_group)
        return index

    def test_empty_prefix(self):
        sc = tiny()
        index = self._index_with(sc, ["a", "b"])
        a_id = extract_signature(sc.template_observation("a")).canonical_id
        b_id = extract_signature(sc.template_observation("b")).canonical_id
        assert verify_replay(sc, ReplayPrefix(0, "a", (), a_id, 0), 3, index)
        assert not verify_replay(sc, ReplayPrefix(0, "a", (), b_id, 0), 3, index)

    def test_deterministic_prefix(self):
        sc = tiny()
        index = self._index_with(sc, ["a", "b"])
        go = enumerate_signatures(sc.template_observation("a"))[0]
        b_id = extract_signature(sc.template_observation("b")).canonical_id
        assert verify_replay(sc, ReplayPrefix(0, "a", (go,), b_id, 1), 7, index)

    def test_stochastic_prefix_fails(self):
        sc = load_scenario("aliased_hub")
        index = self._index_with(sc, list(sc.hidden_states))
        start = sc.template_observation("start")
        signin = enumerate_signatures(start)[0]
        hub = sc.template_observation("hub_a")
        open_sig = click_on(hub, "Open")
        target = extract_signature(sc.template_observation("open_a")).canonical_id
        assert not verify_replay(sc, ReplayPrefix(0, "start", (signin, open_sig), target, 2), 5, index)

    def test_trials_must_be_positive(self):
        sc = tiny()
        with pytest.raises(ValueError):
            verify_replay(sc, ReplayPrefix(0, "a", (), "x", 0), 0, ScreenIndex())

    def test_empty_traces(self):
        with pytest.raises(PoolShortfall) as info:
            build_replay_pool(tiny(), [], ScreenIndex())
        assert info.value.pool == [] and info.value.eligible == 0

    def test_pool_deterministic_and_persisted(self, tmp_path):
        cfg = RunConfig(workers=2, episodes=3, budget=40)
        pools = []
        for _ in range(2):
            r = explore(cfg)
            pool = build_replay_pool(r.scenario, r.traces, r.world.index)
            assert len(pool) == 3
            assert all(p.verified and p.anchor_step >= 5 for p in pool)
            assert [p.target_state_id for p in pool] == sorted(p.target_state_id for p in pool)
            pools.append([p.to_dict() for p in pool])
        assert pools[0] == pools[1]
        save_pool(tmp_path / "pool.jsonl", [ReplayPrefix.from_dict(d) for d in pools[0]], header={"x": 1})
        assert [p.to_dict() for p in load_pool(tmp_path / "pool.jsonl")] == pools[0]

    def test_occurrence_filter(self):
        cfg = RunConfig(workers=1, episodes=1, budget=30)
        r = explore(cfg)
        with pytest.raises(PoolShortfall):
            build_replay_pool(r.scenario, r.traces, r.world.index, min_occurrences=10**6)


def test_builtin_paths_are_yaml():
    for name in builtin_scenarios():
        assert isinstance(yaml.safe_load(builtin_scenario_path(name).read_text()), dict)


def test_world_counts_observations():
    sc = tiny()
    world = World()
    env = GuiEnv(sc)
    world.observe(env.reset(0))
    assert world.observations == 1
