import numpy as np
import pytest

from foresight import rsa_oracle
from foresight.environments import (
    Outcome,
    RandomAgent,
    RsaEnv,
    TabooHeuristicAttacker,
    TabooHeuristicDefender,
    make_env,
    scripted_agents,
    taboo_generate_world,
    transcript_record,
)
from foresight.errors import ConfigError, ContractViolation, IllegalActionError
from foresight.paramcore import PROMPT_SIZE, Role
from foresight.rsa_oracle import parse_object_name as obj
from foresight.selfplay import play_episode
from foresight.settings import RsaGameConfig


def _play(env, state, actions):
    outcome = None
    for a in actions:
        state, outcome = env.step(state, a)
    return state, outcome


# ============================================================
# Cooperative RSA
# ============================================================

def test_rsa_reset(rsa_env, circles_instance, chain_instance):
    state = rsa_env.reset(circles_instance)
    assert len(state.candidates) == 8
    assert state.whose_turn == Role.SPEAKER
    assert len(rsa_env.reset(chain_instance).candidates) == 8


def test_rsa_speaker_and_listener_actions(rsa_env, circles_instance):
    slots = rsa_env.slots
    state = rsa_env.reset(circles_instance)
    assert rsa_env.legal_actions(state) == [slots.speak(j) for j in range(4)]
    state, outcome = rsa_env.step(state, slots.speak(3))
    assert not outcome.terminal
    assert state.last_feature == "circle"
    listener = rsa_env.legal_actions(state, Role.LISTENER)
    assert listener[:2] == [slots.literal_update, slots.pragmatic_update]
    assert listener[2:] == [slots.declare(i) for i in range(8)]


def test_rsa_pragmatic_update_after_circle(rsa_env, circles_instance):
    slots = rsa_env.slots
    state, outcome = _play(rsa_env, rsa_env.reset(circles_instance), [slots.speak(3), slots.pragmatic_update])
    assert set(state.candidates) == {obj("dry-blue-smooth-circle"), obj("wet-blue-smooth-circle")}
    assert not outcome.terminal
    assert state.whose_turn == Role.SPEAKER
    assert rsa_env.legal_actions(state) == [slots.speak(j) for j in range(3)]


def test_rsa_literal_update_keeps_all_matches(rsa_env, circles_instance):
    slots = rsa_env.slots
    state, _ = _play(rsa_env, rsa_env.reset(circles_instance), [slots.speak(3), slots.literal_update])
    assert len(state.candidates) == 3


def test_rsa_declarations(rsa_env, circles_instance):
    slots = rsa_env.slots
    start = rsa_env.reset(circles_instance)
    _, outcome = _play(rsa_env, start, [slots.speak(0), slots.declare(circles_instance.target_index)])
    assert outcome.result == Outcome.RSA_SUCCESS and outcome.total_turns == 2
    _, outcome = _play(rsa_env, start, [slots.speak(0), slots.declare(0)])
    assert outcome.result == Outcome.RSA_FAILURE


def test_rsa_singleton_update_ends_the_game(rsa_env, chain_instance):
    slots = rsa_env.slots
    state = rsa_env.reset(chain_instance)
    # loud, late, lean with pragmatic updates isolates the target in three rounds
    for dim in (0, 2, 3):
        state, outcome = _play(rsa_env, state, [slots.speak(dim), slots.pragmatic_update])
    assert state.done
    assert outcome.result == Outcome.RSA_SUCCESS
    assert outcome.total_turns == 6


def test_rsa_contract_violations(rsa_env, circles_instance):
    slots = rsa_env.slots
    state = rsa_env.reset(circles_instance)
    with pytest.raises(IllegalActionError):
        rsa_env.step(state, slots.pragmatic_update)
    with pytest.raises(ContractViolation):
        rsa_env.legal_actions(state, Role.LISTENER)
    done, _ = _play(rsa_env, state, [slots.speak(0), slots.declare(0)])
    with pytest.raises(ContractViolation):
        rsa_env.legal_actions(done)
    with pytest.raises(ContractViolation):
        rsa_env.step(done, slots.speak(1))


def test_rsa_capacity_check(circles_instance):
    with pytest.raises(ContractViolation):
        RsaEnv(RsaGameConfig(max_features=3, max_objects=8)).reset(circles_instance)


def test_rsa_features_match_layout(rsa_env, circles_instance):
    state = rsa_env.reset(circles_instance)
    layout = rsa_env.policy_layout()
    for role_state in (state, rsa_env.step(state, rsa_env.slots.speak(3))[0]):
        ctx, sf = rsa_env.features(role_state)
        assert sf.features.shape == (layout.n_features - PROMPT_SIZE,)
        assert sf.legal_actions == rsa_env.legal_actions(role_state)
        assert ctx.role == role_state.whose_turn


def test_rsa_oracle_play_reaches_min_rounds(rsa_env, circles_instance, chain_instance, small_instances):
    for inst in [circles_instance, chain_instance] + list(small_instances):
        traj = play_episode(rsa_env, inst, scripted_agents("rsa"), seed=0)
        assert traj.outcome.result == Outcome.RSA_SUCCESS
        assert traj.outcome.total_turns == 2 * rsa_oracle.golden_chain(inst).min_rounds
        assert traj.min_rounds == rsa_oracle.golden_chain(inst).min_rounds


def test_rsa_describe(rsa_env, circles_instance):
    state = rsa_env.reset(circles_instance)
    assert rsa_env.describe(state, rsa_env.slots.speak(3)) == "speak:circle"
    listener_turn, _ = rsa_env.step(state, rsa_env.slots.speak(3))
    assert rsa_env.describe(listener_turn, rsa_env.slots.declare(7)) == "declare:dry-blue-smooth-circle"
    assert rsa_env.describe(listener_turn, rsa_env.slots.pragmatic_update) == "pragmatic_update"


def test_roles_share_the_slot_vocabulary(rsa_env, taboo_env):
    rsa, taboo = rsa_env.slots, taboo_env.slots
    assert rsa_env.n_actions == max(rsa.max_features, rsa.max_objects + 2) == 10
    assert rsa.speak(0) == rsa.literal_update
    assert rsa.describe(1, Role.SPEAKER) == ("speak", 1)
    assert rsa.describe(1, Role.LISTENER) == ("pragmatic_update", -1)
    assert taboo_env.n_actions == max(taboo.cue_count, 2 * taboo.vocab_size)
    assert taboo.cue(2) == taboo.respond(2)
    assert taboo.describe(taboo.guess(1), Role.DEFENDER) == ("guess", 1)


# ============================================================
# Competitive Taboo
# ============================================================

def test_taboo_reset_and_actions(taboo_env, taboo_world):
    slots = taboo_env.slots
    state = taboo_env.reset(taboo_world)
    assert state.whose_turn == Role.ATTACKER
    assert taboo_env.legal_actions(state) == [slots.cue(c) for c in range(6)]
    state, _ = taboo_env.step(state, slots.cue(0))
    assert taboo_env.respond_candidates(state) == [0, 1]
    assert taboo_env.legal_actions(state) == [slots.respond(0), slots.respond(1)] + [slots.guess(w) for w in range(4)]


def test_taboo_guess_outcomes(taboo_env, taboo_world):
    slots = taboo_env.slots
    start = taboo_env.reset(taboo_world)
    _, outcome = _play(taboo_env, start, [slots.cue(0), slots.guess(0)])
    assert outcome.result == Outcome.DEFENDER_WIN and outcome.total_turns == 2
    _, outcome = _play(taboo_env, start, [slots.cue(0), slots.guess(2)])
    assert outcome.result == Outcome.ATTACKER_WIN


def test_taboo_saying_the_target_loses(taboo_env, taboo_world):
    slots = taboo_env.slots
    _, outcome = _play(taboo_env, taboo_env.reset(taboo_world), [slots.cue(0), slots.respond(0)])
    assert outcome.result == Outcome.ATTACKER_WIN


def test_taboo_turn_limit_is_a_tie(taboo_env, taboo_world):
    slots = taboo_env.slots
    actions = [slots.cue(4), slots.respond(1), slots.cue(5), slots.respond(1), slots.cue(1), slots.respond(1)]
    state, outcome = _play(taboo_env, taboo_env.reset(taboo_world), actions)
    assert state.done
    assert outcome.result == Outcome.TIE and outcome.total_turns == 6


def test_taboo_attacker_out_of_cues_is_a_tie(taboo_env, taboo_world):
    from dataclasses import replace

    slots = taboo_env.slots
    state = taboo_env.reset(replace(taboo_world, max_turns=50))
    outcome = None
    for cue in range(6):
        state, outcome = taboo_env.step(state, slots.cue(cue))
        word = next(w for w in taboo_env.respond_candidates(state) if w != state.target)
        state, outcome = taboo_env.step(state, slots.respond(word))
    assert outcome.result == Outcome.TIE and outcome.total_turns == 12


def test_taboo_heuristics_on_decisive_world(taboo_env, taboo_world):
    state = taboo_env.reset(taboo_world)
    ctx, sf = taboo_env.features(state)
    action, logp = TabooHeuristicAttacker().choose(taboo_env, state, ctx, sf, np.random.default_rng(0))
    assert action == taboo_env.slots.cue(0) and logp is None

    traj = play_episode(taboo_env, taboo_world, scripted_agents("taboo"), seed=0)
    assert traj.outcome.result == Outcome.DEFENDER_WIN
    assert traj.outcome.total_turns == 2


def test_taboo_defender_responds_below_threshold(taboo_env, taboo_world):
    state, _ = taboo_env.step(taboo_env.reset(taboo_world), taboo_env.slots.cue(0))
    ctx, sf = taboo_env.features(state)
    strict = TabooHeuristicDefender(guess_threshold=0.99)
    action, _ = strict.choose(taboo_env, state, ctx, sf, np.random.default_rng(0))
    # MAP word 0 is skipped, so the next associated word is said instead
    assert action == taboo_env.slots.respond(1)


def test_taboo_features_match_layout(taboo_env, taboo_world):
    layout = taboo_env.policy_layout()
    state = taboo_env.reset(taboo_world)
    for s in (state, taboo_env.step(state, taboo_env.slots.cue(2))[0]):
        ctx, sf = taboo_env.features(s)
        assert sf.features.shape == (layout.n_features - PROMPT_SIZE,)
        assert sf.legal_actions == taboo_env.legal_actions(s)


def test_taboo_world_generation():
    a = taboo_generate_world(7, K=8, C=12)
    b = taboo_generate_world(7, K=8, C=12)
    assert np.array_equal(a.weights, b.weights) and a.target_index == b.target_index
    assert np.allclose(a.weights.sum(axis=1), 1.0)
    assert len(set(np.argmax(a.weights, axis=1))) == 8
    with pytest.raises(ConfigError):
        taboo_generate_world(0, K=3, C=12)
    with pytest.raises(ConfigError):
        taboo_generate_world(0, K=8, C=6)


def test_taboo_world_shape_must_match_config(taboo_env):
    with pytest.raises(ContractViolation):
        taboo_env.reset(taboo_generate_world(1, K=8, C=12))


# ============================================================
# Shared pieces
# ============================================================

def test_random_agent_plays_legal_moves(rsa_env, small_instances):
    agents = {Role.AGENT1: RandomAgent(), Role.AGENT2: RandomAgent()}
    for i, inst in enumerate(small_instances):
        traj = play_episode(rsa_env, inst, agents, seed=i)
        assert traj.outcome.terminal
        for step in traj.steps:
            assert step.sf.legal_mask[step.action]
            assert step.behavior_logp == pytest.approx(-np.log(len(step.sf.legal_actions)))


def test_make_env_rejects_unknown_game():
    with pytest.raises(ConfigError):
        make_env("chess")


def test_transcript_record(rsa_env, chain_instance):
    traj = play_episode(rsa_env, chain_instance, scripted_agents("rsa"), seed=3)
    record = transcript_record(0, traj)
    assert record["schema"] == "transcript/1"
    assert record["outcome"] == "rsa_success"
    assert record["total_turns"] == 6
    assert [s["role"] for s in record["steps"]] == ["agent1", "agent2"] * 3
    assert record["steps"][-1]["terminal"] and not record["steps"][0]["terminal"]
