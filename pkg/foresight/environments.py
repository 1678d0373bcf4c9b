"""
Turn-alternating two-player games.

RsaEnv  - Cooperative RSA: speaker names target features, listener narrows
          the candidate set (literal or pragmatic update) or declares.
TabooEnv - Competitive Taboo on a symbolic cue/word association world: the
          attacker gives cues, the defender responds with a word or guesses
          the target once.

Agent1 moves on even turns, agent2 on odd turns. States are immutable.
"""

from dataclasses import dataclass, replace
from enum import Enum
from typing import Dict, FrozenSet, List, Optional, Protocol, Sequence, Tuple

import numpy as np

from foresight import featuremaps, rsa_oracle
from foresight.errors import ConfigError, ContractViolation, IllegalActionError
from foresight.featuremaps import RsaActionLayout, TabooActionLayout
from foresight.paramcore import Role, RoleContext, StateFeatures
from foresight.settings import RsaGameConfig, TabooGameConfig


class Outcome(str, Enum):
    RSA_SUCCESS = "rsa_success"
    RSA_FAILURE = "rsa_failure"
    ATTACKER_WIN = "attacker_win"
    DEFENDER_WIN = "defender_win"
    TIE = "tie"
    ONGOING = "ongoing"


@dataclass(frozen=True)
class GameOutcome:
    terminal: bool
    result: Outcome
    total_turns: int

    def __post_init__(self):
        if self.terminal != (self.result != Outcome.ONGOING):
            raise ContractViolation("terminal flag and result disagree")

    @classmethod
    def ongoing(cls, t: int) -> "GameOutcome":
        return cls(False, Outcome.ONGOING, t)

    @classmethod
    def finished(cls, result: Outcome, t: int) -> "GameOutcome":
        return cls(True, result, t)


@dataclass(frozen=True)
class GameState:
    game_id: str
    t: int
    history: Tuple[int, ...]
    done: bool

    @property
    def whose_turn(self) -> Role:
        return Role.for_turn(self.t)


@dataclass(frozen=True)
class RsaState(GameState):
    instance: rsa_oracle.ObjectSet
    candidates: rsa_oracle.Candidates
    used: FrozenSet[str]
    last_feature: Optional[str]


@dataclass(frozen=True)
class TabooWorld:
    """K words × C cues association weights (rows sum to 1) plus the hidden target."""
    weights: np.ndarray
    target_index: int
    max_turns: int
    world_id: str = ""

    @property
    def vocab_size(self) -> int:
        return self.weights.shape[0]

    @property
    def cue_count(self) -> int:
        return self.weights.shape[1]


@dataclass(frozen=True)
class TabooState(GameState):
    world: TabooWorld
    target: int
    cues: Tuple[int, ...]
    responses: Tuple[int, ...]


# ============================================================
# Cooperative RSA
# ============================================================

class RsaEnv:
    game_id = "rsa"

    def __init__(self, config: Optional[RsaGameConfig] = None):
        self.config = config or RsaGameConfig()
        self.slots = RsaActionLayout.from_config(self.config)

    @property
    def n_actions(self) -> int:
        return self.slots.n_actions

    def instance_id(self, instance: rsa_oracle.ObjectSet) -> str:
        return instance.instance_id

    def reset(self, instance: rsa_oracle.ObjectSet) -> RsaState:
        if instance.n_dims > self.config.max_features or instance.n_objects > self.config.max_objects:
            raise ContractViolation(
                f"instance with {instance.n_dims} dims / {instance.n_objects} objects exceeds "
                f"capacity {self.config.max_features} / {self.config.max_objects}"
            )
        return RsaState(game_id=self.game_id, t=0, history=(), done=False, instance=instance,
                        candidates=instance.objects, used=frozenset(), last_feature=None)

    def legal_actions(self, state: RsaState, role: Optional[Role] = None) -> List[int]:
        _check_mover(state, role)
        if state.whose_turn == Role.SPEAKER:
            return [self.slots.speak(j) for j, v in enumerate(state.instance.target) if v not in state.used]
        index = {o: i for i, o in enumerate(state.instance.objects)}
        actions = [self.slots.literal_update, self.slots.pragmatic_update]
        actions += sorted(self.slots.declare(index[o]) for o in state.candidates)
        return actions

    def step(self, state: RsaState, action: int) -> Tuple[RsaState, GameOutcome]:
        if action not in self.legal_actions(state):
            raise IllegalActionError(f"action {action} is not legal at t={state.t}")
        t_next = state.t + 1
        history = state.history + (action,)
        instance = state.instance

        if state.whose_turn == Role.SPEAKER:
            feature = instance.target[action]
            nxt = replace(state, t=t_next, history=history, used=state.used | {feature}, last_feature=feature)
            return nxt, GameOutcome.ongoing(t_next)

        kind, arg = self.slots.describe(action, Role.LISTENER)
        if kind == "declare":
            result = Outcome.RSA_SUCCESS if arg == instance.target_index else Outcome.RSA_FAILURE
            return replace(state, t=t_next, history=history, done=True), GameOutcome.finished(result, t_next)

        before = state.used - {state.last_feature}
        if kind == "pragmatic_update":
            candidates = rsa_oracle.listener_update(state.last_feature, state.candidates, before)
        else:
            candidates = rsa_oracle.literal_filter(state.last_feature, state.candidates)
        nxt = replace(state, t=t_next, history=history, candidates=candidates)

        if instance.target not in candidates:
            return replace(nxt, done=True), GameOutcome.finished(Outcome.RSA_FAILURE, t_next)
        if len(candidates) == 1:
            # declaration of the last candidate counts as this listener turn
            return replace(nxt, done=True), GameOutcome.finished(Outcome.RSA_SUCCESS, t_next)
        if all(v in state.used for v in instance.target):
            return replace(nxt, done=True), GameOutcome.finished(Outcome.RSA_FAILURE, t_next)
        return nxt, GameOutcome.ongoing(t_next)

    def features(self, state: RsaState, role: Optional[Role] = None) -> Tuple[RoleContext, StateFeatures]:
        role = role or state.whose_turn
        mask = np.zeros(self.n_actions, dtype=bool)
        mask[self.legal_actions(state, role)] = True
        vec = featuremaps.rsa_state_vector(self.slots, state.instance, state.candidates, state.used,
                                           state.last_feature, role)
        return RoleContext.for_role(role), StateFeatures(vec, mask)

    def policy_layout(self, hidden_units: int = 0):
        return featuremaps.rsa_policy_layout(self.config, hidden_units)

    def describe(self, state: RsaState, action: int) -> str:
        kind, arg = self.slots.describe(action, state.whose_turn)
        if kind == "speak":
            return f"speak:{state.instance.target[arg]}"
        if kind == "declare":
            return f"declare:{rsa_oracle.object_name(state.instance.objects[arg])}"
        return kind


# ============================================================
# Competitive Taboo
# ============================================================

def taboo_generate_world(seed: int, K: int = 8, C: int = 12, max_turns: int = 8,
                         signature_size: int = 3, world_id: str = "") -> TabooWorld:
    """
    Reproducible association world.

    Every word gets its own top cue plus signature_size-1 further strong cues
    on top of small noise, so no two words share a top cue.

    Raises:
        ConfigError: K < 4, C < K or an impossible signature size
    """
    if K < 4 or C < K:
        raise ConfigError(f"taboo world needs K >= 4 and C >= K (got K={K}, C={C})")
    if not 1 <= signature_size <= C:
        raise ConfigError(f"signature_size {signature_size} out of range for C={C}")
    if max_turns < 2:
        raise ConfigError("max_turns must be >= 2")

    rng = np.random.default_rng(seed)
    weights = rng.uniform(0.01, 0.05, size=(K, C))
    top_cues = rng.permutation(C)[:K]
    strengths = np.linspace(1.0, 0.3, signature_size)
    for w in range(K):
        others = rng.choice([c for c in range(C) if c != top_cues[w]], size=signature_size - 1, replace=False)
        signature = np.concatenate([[top_cues[w]], others]).astype(int)
        weights[w, signature] += strengths * rng.uniform(0.9, 1.1, size=signature_size)
    weights /= weights.sum(axis=1, keepdims=True)
    target = int(rng.integers(K))
    return TabooWorld(weights=weights, target_index=target, max_turns=max_turns, world_id=world_id)


class TabooEnv:
    game_id = "taboo"

    def __init__(self, config: Optional[TabooGameConfig] = None):
        self.config = config or TabooGameConfig()
        self.slots = TabooActionLayout.from_config(self.config)

    @property
    def n_actions(self) -> int:
        return self.slots.n_actions

    def instance_id(self, world: TabooWorld) -> str:
        return world.world_id

    def reset(self, world: TabooWorld, target: Optional[int] = None) -> TabooState:
        if world.weights.shape != (self.config.vocab_size, self.config.cue_count):
            raise ContractViolation(f"world shape {world.weights.shape} does not match the configured game")
        target = world.target_index if target is None else target
        if not 0 <= target < world.vocab_size:
            raise ContractViolation(f"target {target} out of range")
        return TabooState(game_id=self.game_id, t=0, history=(), done=False, world=world,
                          target=target, cues=(), responses=())

    def respond_candidates(self, state: TabooState) -> List[int]:
        return [int(w) for w in featuremaps.top_words(state.world.weights, state.cues[-1], self.config.respond_top_k)]

    def legal_actions(self, state: TabooState, role: Optional[Role] = None) -> List[int]:
        _check_mover(state, role)
        if state.whose_turn == Role.ATTACKER:
            return [self.slots.cue(c) for c in range(state.world.cue_count) if c not in state.cues]
        responds = sorted(self.slots.respond(w) for w in self.respond_candidates(state))
        return responds + [self.slots.guess(w) for w in range(state.world.vocab_size)]

    def step(self, state: TabooState, action: int) -> Tuple[TabooState, GameOutcome]:
        if action not in self.legal_actions(state):
            raise IllegalActionError(f"action {action} is not legal at t={state.t}")
        t_next = state.t + 1
        history = state.history + (action,)

        if state.whose_turn == Role.ATTACKER:
            nxt = replace(state, t=t_next, history=history, cues=state.cues + (action,))
        else:
            kind, word = self.slots.describe(action, Role.DEFENDER)
            if kind == "guess":
                result = Outcome.DEFENDER_WIN if word == state.target else Outcome.ATTACKER_WIN
                return replace(state, t=t_next, history=history, done=True), GameOutcome.finished(result, t_next)
            if word == state.target:
                return (replace(state, t=t_next, history=history, done=True),
                        GameOutcome.finished(Outcome.ATTACKER_WIN, t_next))
            nxt = replace(state, t=t_next, history=history, responses=state.responses + (word,))

        if t_next >= state.world.max_turns or (nxt.whose_turn == Role.ATTACKER
                                                and len(nxt.cues) >= state.world.cue_count):
            return replace(nxt, done=True), GameOutcome.finished(Outcome.TIE, t_next)
        return nxt, GameOutcome.ongoing(t_next)

    def features(self, state: TabooState, role: Optional[Role] = None) -> Tuple[RoleContext, StateFeatures]:
        role = role or state.whose_turn
        mask = np.zeros(self.n_actions, dtype=bool)
        mask[self.legal_actions(state, role)] = True
        vec = featuremaps.taboo_state_vector(self.slots, state.world.weights, state.target, state.cues,
                                             state.t, state.world.max_turns, self.config.respond_top_k, role)
        return RoleContext.for_role(role), StateFeatures(vec, mask)

    def policy_layout(self, hidden_units: int = 0):
        return featuremaps.taboo_policy_layout(self.config, hidden_units)

    def describe(self, state: TabooState, action: int) -> str:
        kind, arg = self.slots.describe(action, state.whose_turn)
        return f"{kind}:{arg}"


def _check_mover(state: GameState, role: Optional[Role]) -> None:
    if state.done:
        raise ContractViolation("state is terminal")
    if role is not None and role != state.whose_turn:
        raise ContractViolation(f"it is not {role.name}'s turn at t={state.t}")


# ============================================================
# Scripted agents
# ============================================================

class Agent(Protocol):
    """Chooses an action; returns it with its log-probability when the agent has one."""

    def choose(self, env, state: GameState, ctx: RoleContext, sf: StateFeatures,
               rng: np.random.Generator) -> Tuple[int, Optional[float]]:
        ...


class RandomAgent:
    label = "random"

    def choose(self, env, state, ctx, sf, rng):
        legal = sf.legal_actions
        return legal[int(rng.integers(len(legal)))], -float(np.log(len(legal)))


class RsaOracleSpeaker:
    """Speaks the next feature of the shortest pragmatic dialogue."""
    label = "oracle"

    def choose(self, env: RsaEnv, state: RsaState, ctx, sf, rng):
        feature = rsa_oracle.plan_feature(state.instance.target, state.candidates, state.used)
        return env.slots.speak(state.instance.target.index(feature)), None


class RsaOracleListener:
    label = "oracle"

    def choose(self, env: RsaEnv, state: RsaState, ctx, sf, rng):
        return env.slots.pragmatic_update, None


class TabooHeuristicAttacker:
    """Highest-association unused cue for the target."""
    label = "heuristic"

    def choose(self, env: TabooEnv, state: TabooState, ctx, sf, rng):
        row = state.world.weights[state.target]
        unused = [c for c in range(state.world.cue_count) if c not in state.cues]
        best = max(unused, key=lambda c: (row[c], -c))
        return env.slots.cue(best), None


class TabooHeuristicDefender:
    """
    Guess the naive-Bayes MAP word once its posterior exceeds the threshold,
    otherwise respond with the most associated word of the last cue that is
    not the current MAP word.
    """
    label = "heuristic"

    def __init__(self, guess_threshold: Optional[float] = None):
        self.guess_threshold = guess_threshold

    def choose(self, env: TabooEnv, state: TabooState, ctx, sf, rng):
        threshold = env.config.guess_threshold if self.guess_threshold is None else self.guess_threshold
        post = featuremaps.word_posterior(state.world.weights, state.cues)
        map_word = int(np.argmax(post))
        if post[map_word] > threshold:
            return env.slots.guess(map_word), None
        options = [w for w in env.respond_candidates(state) if w != map_word]
        if not options:
            return env.slots.guess(map_word), None
        return env.slots.respond(options[0]), None


def scripted_agents(game: str) -> Dict[Role, Agent]:
    if game == "rsa":
        return {Role.AGENT1: RsaOracleSpeaker(), Role.AGENT2: RsaOracleListener()}
    return {Role.AGENT1: TabooHeuristicAttacker(), Role.AGENT2: TabooHeuristicDefender()}


def make_env(game: str, rsa_config: Optional[RsaGameConfig] = None,
             taboo_config: Optional[TabooGameConfig] = None):
    if game == "rsa":
        return RsaEnv(rsa_config)
    if game == "taboo":
        return TabooEnv(taboo_config)
    raise ConfigError(f"unknown game {game!r}")


def transcript_record(episode_id: int, trajectory, descriptions: Optional[Sequence[str]] = None) -> Dict:
    """Line record of one episode (schema transcript/1)."""
    steps = []
    last = len(trajectory.steps) - 1
    for i, step in enumerate(trajectory.steps):
        entry = {"t": step.t, "role": step.role.name.lower(), "action": step.action, "terminal": i == last}
        if descriptions is not None:
            entry["label"] = descriptions[i]
        if step.reward is not None:
            entry["reward"] = step.reward
        steps.append(entry)
    return {
        "schema": "transcript/1",
        "episode_id": episode_id,
        "instance_id": trajectory.instance_id,
        "seed": trajectory.seed,
        "outcome": trajectory.outcome.result.value,
        "total_turns": trajectory.outcome.total_turns,
        "steps": steps,
    }
