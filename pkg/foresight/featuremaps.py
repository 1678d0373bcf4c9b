"""
Feature maps and action-slot layouts for the two games.

Each game exposes a fixed action-slot layout (so one parameter vector covers
every instance up to the configured capacity) and a pure function from
(state, role) to a state feature vector. The role prompt (bias + role flags)
is prepended by the policy, not here.

Both roles share one slot vocabulary, the way two prompted players share one
output head: a slot means different moves for different roles, and the legal
mask of the mover picks the meaning. The bias column of a shared slot row is
touched by both roles' gradients.

RSA slots    speaker:  [speak dim 0..M_max-1]
             listener: [literal_update | pragmatic_update | declare object 0..N_max-1]
Taboo slots  attacker: [cue 0..C-1]
             defender: [respond word 0..K-1 | guess word 0..K-1]
"""

from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from foresight import rsa_oracle
from foresight.paramcore import PROMPT_SIZE, PolicyLayout, Role
from foresight.settings import RsaGameConfig, TabooGameConfig

RSA_GAME_ID = 1
TABOO_GAME_ID = 2
RSA_FEATURE_MAP_ID = 1
TABOO_FEATURE_MAP_ID = 1

SPEAKER_DIM_FEATURES = 7
LISTENER_GLOBAL_FEATURES = 5
LISTENER_OBJECT_FEATURES = 3


# ============================================================
# Cooperative RSA
# ============================================================

@dataclass(frozen=True)
class RsaActionLayout:
    max_features: int
    max_objects: int

    @classmethod
    def from_config(cls, cfg: RsaGameConfig) -> "RsaActionLayout":
        return cls(cfg.max_features, cfg.max_objects)

    @property
    def literal_update(self) -> int:
        return 0

    @property
    def pragmatic_update(self) -> int:
        return 1

    def speak(self, dim: int) -> int:
        return dim

    def declare(self, object_index: int) -> int:
        return 2 + object_index

    @property
    def n_actions(self) -> int:
        return max(self.max_features, self.max_objects + 2)

    @property
    def n_state_features(self) -> int:
        return (SPEAKER_DIM_FEATURES * self.max_features
                + LISTENER_GLOBAL_FEATURES
                + LISTENER_OBJECT_FEATURES * self.max_objects)

    def describe(self, slot: int, role: Role) -> Tuple[str, int]:
        if role == Role.SPEAKER:
            return ("speak", slot)
        if slot == self.literal_update:
            return ("literal_update", -1)
        if slot == self.pragmatic_update:
            return ("pragmatic_update", -1)
        return ("declare", slot - 2)


def rsa_policy_layout(cfg: RsaGameConfig, hidden_units: int = 0) -> PolicyLayout:
    slots = RsaActionLayout.from_config(cfg)
    return PolicyLayout(
        n_actions=slots.n_actions,
        n_features=PROMPT_SIZE + slots.n_state_features,
        hidden_units=hidden_units,
        game_id=RSA_GAME_ID,
        feature_map_id=RSA_FEATURE_MAP_ID,
    )


def rsa_state_vector(slots: RsaActionLayout, instance: rsa_oracle.ObjectSet, candidates: rsa_oracle.Candidates,
                     used: frozenset, last_feature, role: Role) -> np.ndarray:
    """
    Speaker block, per dimension of the target:
      exists, used, 1/target rank, rank is minimal, count fraction, unique to target,
      first unused dimension of minimal rank (the rational speaker's pick).
    Listener block:
      candidate fraction, literal fraction, belief-set fraction, pragmatic-update
      fraction, belief set empty; per object: in candidates, has last feature,
      in pragmatic update.
    """
    vec = np.zeros(slots.n_state_features)
    n = len(candidates)

    if role == Role.SPEAKER:
        target = instance.target
        ranks = {}
        for j, value in enumerate(target):
            if value not in used:
                ranks[j] = rsa_oracle.target_rank(value, target, candidates)
        best = min(ranks.values()) if ranks else None
        pick = min(j for j in ranks if ranks[j] == best) if ranks else None
        for j, value in enumerate(target):
            base = SPEAKER_DIM_FEATURES * j
            count = rsa_oracle.feature_count(candidates, value)
            vec[base] = 1.0
            vec[base + 1] = float(value in used)
            if j in ranks:
                vec[base + 2] = 1.0 / ranks[j]
                vec[base + 3] = float(ranks[j] == best)
            vec[base + 4] = count / n
            vec[base + 5] = float(count == 1)
            vec[base + 6] = float(j == pick)
        return vec

    offset = SPEAKER_DIM_FEATURES * slots.max_features
    literal = rsa_oracle.literal_filter(last_feature, candidates)
    before = used - {last_feature}
    beliefs = rsa_oracle.belief_set(last_feature, candidates, before)
    update = rsa_oracle.listener_update(last_feature, candidates, before)
    vec[offset] = n / instance.n_objects
    vec[offset + 1] = len(literal) / n
    vec[offset + 2] = len(beliefs) / n
    vec[offset + 3] = len(update) / n
    vec[offset + 4] = float(not beliefs)

    offset += LISTENER_GLOBAL_FEATURES
    in_candidates = set(candidates)
    in_update = set(update)
    for i, obj in enumerate(instance.objects):
        base = offset + LISTENER_OBJECT_FEATURES * i
        vec[base] = float(obj in in_candidates)
        vec[base + 1] = float(obj in in_candidates and last_feature in obj)
        vec[base + 2] = float(obj in in_update)
    return vec


# ============================================================
# Competitive Taboo
# ============================================================

@dataclass(frozen=True)
class TabooActionLayout:
    vocab_size: int
    cue_count: int

    @classmethod
    def from_config(cls, cfg: TabooGameConfig) -> "TabooActionLayout":
        return cls(cfg.vocab_size, cfg.cue_count)

    def cue(self, c: int) -> int:
        return c

    def respond(self, word: int) -> int:
        return word

    def guess(self, word: int) -> int:
        return self.vocab_size + word

    @property
    def n_actions(self) -> int:
        return max(self.cue_count, 2 * self.vocab_size)

    @property
    def n_state_features(self) -> int:
        K, C = self.vocab_size, self.cue_count
        return (K + 3 * C + 1) + (4 * K + 2)

    def describe(self, slot: int, role: Role) -> Tuple[str, int]:
        if role == Role.ATTACKER:
            return ("cue", slot)
        if slot < self.vocab_size:
            return ("respond", slot)
        return ("guess", slot - self.vocab_size)


def taboo_policy_layout(cfg: TabooGameConfig, hidden_units: int = 0) -> PolicyLayout:
    slots = TabooActionLayout.from_config(cfg)
    return PolicyLayout(
        n_actions=slots.n_actions,
        n_features=PROMPT_SIZE + slots.n_state_features,
        hidden_units=hidden_units,
        game_id=TABOO_GAME_ID,
        feature_map_id=TABOO_FEATURE_MAP_ID,
    )


def word_posterior(weights: np.ndarray, cues: Sequence[int]) -> np.ndarray:
    """Naive-Bayes posterior over words given the cue history (uniform prior)."""
    log_post = np.zeros(weights.shape[0])
    for c in cues:
        log_post += np.log(weights[:, c])
    log_post -= log_post.max()
    post = np.exp(log_post)
    return post / post.sum()


def top_words(weights: np.ndarray, cue: int, k: int) -> np.ndarray:
    """The k words most associated with a cue; ties by lower word index."""
    return np.argsort(-weights[:, cue], kind="stable")[:k]


def taboo_state_vector(slots: TabooActionLayout, weights: np.ndarray, target: int, cues: Sequence[int],
                       t: int, max_turns: int, top_k: int, role: Role) -> np.ndarray:
    """
    Attacker block: target one-hot, scaled target association row, used cues,
    target among the top-k words of each cue, turn fraction.
    Defender block: word posterior, MAP one-hot, max posterior, scaled
    association column of the last cue, respond candidates, turn fraction.
    """
    K, C = slots.vocab_size, slots.cue_count
    vec = np.zeros(slots.n_state_features)
    turn_frac = t / max_turns

    if role == Role.ATTACKER:
        row = weights[target]
        vec[target] = 1.0
        vec[K:K + C] = row / row.max()
        for c in cues:
            vec[K + C + c] = 1.0
        for c in range(C):
            vec[K + 2 * C + c] = float(target in top_words(weights, c, top_k))
        vec[K + 3 * C] = turn_frac
        return vec

    offset = K + 3 * C + 1
    post = word_posterior(weights, cues)
    map_word = int(np.argmax(post))
    last = cues[-1]
    column = weights[:, last]
    vec[offset:offset + K] = post
    vec[offset + K + map_word] = 1.0
    vec[offset + 2 * K] = post[map_word]
    vec[offset + 2 * K + 1:offset + 3 * K + 1] = column / column.max()
    for w in top_words(weights, last, top_k):
        vec[offset + 3 * K + 1 + w] = 1.0
    vec[offset + 4 * K + 1] = turn_frac
    return vec
