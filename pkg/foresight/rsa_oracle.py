"""
Exact rational-speech-acts inference for the Cooperative RSA reference game.

Objects are tuples of feature values, one value per dimension; feature values
are unique across dimensions so a value names its dimension. A candidate set
is a tuple of objects in instance order. All probabilities are Fractions;
conversion to float happens only at the boundary (Posterior.as_floats).

Tie-breaking everywhere: lowest feature-dimension index wins.
"""

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple

from foresight.errors import (
    ContractViolation,
    DegenerateInstanceError,
    FeatureExhaustedError,
    ZeroCountError,
)

Obj = Tuple[str, ...]
Candidates = Tuple[Obj, ...]

NAME_SEPARATOR = "-"


# ============================================================
# Types
# ============================================================

@dataclass(frozen=True)
class ObjectSet:
    """One reference-game instance: N distinct objects over M binary dimensions."""
    feature_dims: Tuple[str, ...]
    objects: Candidates
    target_index: int
    instance_id: str = ""

    def __post_init__(self):
        m = len(self.feature_dims)
        if m == 0 or len(self.objects) < 2:
            raise ContractViolation("instance needs at least one dimension and two objects")
        if any(len(o) != m for o in self.objects):
            raise ContractViolation("every object needs exactly one value per dimension")
        if len(set(self.objects)) != len(self.objects):
            raise ContractViolation("objects must be distinct")
        if not 0 <= self.target_index < len(self.objects):
            raise ContractViolation(f"target_index {self.target_index} out of range")
        seen: Dict[str, int] = {}
        for j in range(m):
            values = {o[j] for o in self.objects}
            if len(values) > 2:
                raise ContractViolation(f"dimension {self.feature_dims[j]} is not binary")
            for v in values:
                if seen.setdefault(v, j) != j:
                    raise ContractViolation(f"feature value {v!r} used by two dimensions")

    @property
    def target(self) -> Obj:
        return self.objects[self.target_index]

    @property
    def n_objects(self) -> int:
        return len(self.objects)

    @property
    def n_dims(self) -> int:
        return len(self.feature_dims)

    def dim_of(self, value: str) -> int:
        for o in self.objects:
            if value in o:
                return o.index(value)
        raise ZeroCountError(f"feature {value!r} not in instance")

    @classmethod
    def from_names(cls, feature_dims: Sequence[str], names: Sequence[str], target: str,
                   instance_id: str = "") -> "ObjectSet":
        """Build from hyphenated names such as "dry-blue-smooth-circle"."""
        objects = tuple(parse_object_name(n) for n in names)
        return cls(tuple(feature_dims), objects, list(names).index(target), instance_id)


def parse_object_name(name: str) -> Obj:
    return tuple(name.split(NAME_SEPARATOR))


def object_name(obj: Obj) -> str:
    return NAME_SEPARATOR.join(obj)


@dataclass(frozen=True)
class Posterior:
    """Distribution over the objects of a candidate set (zeros for non-matching objects)."""
    objects: Candidates
    probabilities: Tuple[Fraction, ...]

    def __getitem__(self, obj: Obj) -> Fraction:
        return self.probabilities[self.objects.index(obj)]

    def as_floats(self) -> List[float]:
        return [float(p) for p in self.probabilities]


@dataclass(frozen=True)
class GoldenChain:
    """Rational dialogue: one uttered feature and one post-update candidate set per round."""
    feature_sequence: Tuple[str, ...]
    candidate_sets: Tuple[Candidates, ...]

    @property
    def min_rounds(self) -> int:
        return len(self.feature_sequence)

    @property
    def set_sizes(self) -> List[int]:
        return [len(c) for c in self.candidate_sets]


# ============================================================
# Counting and likelihoods
# ============================================================

@lru_cache(maxsize=65536)
def _counts(S: FrozenSet[Obj]) -> Dict[str, int]:
    counts: Dict[str, int] = {}
    for o in S:
        for v in o:
            counts[v] = counts.get(v, 0) + 1
    return counts


def feature_count(O: Candidates, f: str) -> int:
    """Number of candidates possessing f."""
    count = _counts(frozenset(O)).get(f, 0)
    if count == 0:
        raise ZeroCountError(f"feature {f!r} does not occur in the candidate set")
    return count


def l0_likelihoods(O: Candidates) -> Dict[Obj, Dict[str, Fraction]]:
    """Speaker likelihood table P(f | o, O) = |f|⁻¹ / Σ_{f'∈o} |f'|⁻¹ for every o in O."""
    return _l0_likelihoods(frozenset(O))


# tables depend on the candidate set only, never on its order
@lru_cache(maxsize=65536)
def _l0_likelihoods(S: FrozenSet[Obj]) -> Dict[Obj, Dict[str, Fraction]]:
    counts = _counts(S)
    table: Dict[Obj, Dict[str, Fraction]] = {}
    for o in S:
        inv = [Fraction(1, counts[v]) for v in o]
        norm = sum(inv)
        table[o] = {v: w / norm for v, w in zip(o, inv)}
    return table


def speaker_likelihood(o: Obj, f: str, O: Candidates) -> Fraction:
    O = tuple(O)
    if f not in o:
        raise ContractViolation(f"{f!r} is not a feature of {object_name(o)}")
    if o not in O:
        raise ContractViolation(f"{object_name(o)} is not a candidate")
    return l0_likelihoods(O)[o][f]


def _l0_table(O: Candidates) -> Dict[str, Dict[Obj, Fraction]]:
    # f -> {o: P_L0(o | f, O)} over objects containing f, uniform prior
    return _l0_table_of(frozenset(O))


@lru_cache(maxsize=65536)
def _l0_table_of(S: FrozenSet[Obj]) -> Dict[str, Dict[Obj, Fraction]]:
    lik = _l0_likelihoods(S)
    table: Dict[str, Dict[Obj, Fraction]] = {}
    for f in _counts(S):
        scores = {o: lik[o][f] for o in S if f in o}
        norm = sum(scores.values())
        table[f] = {o: s / norm for o, s in scores.items()}
    return table


def l0_posterior(f: str, O: Candidates) -> Posterior:
    O = tuple(O)
    feature_count(O, f)
    post = _l0_table(O)[f]
    return Posterior(O, tuple(post.get(o, Fraction(0)) for o in O))


def target_rank(f: str, target: Obj, O: Candidates) -> int:
    """Inclusive rank: number of candidates whose L0 posterior is ≥ the target's."""
    O = tuple(O)
    if f not in target:
        raise ContractViolation(f"{f!r} is not a feature of the target")
    feature_count(O, f)
    post = _l0_table(O)[f]
    if target not in post:
        raise ContractViolation("target is not a candidate")
    p_target = post[target]
    return sum(1 for p in post.values() if p >= p_target)


def _preference(target: Obj, O: Candidates, used: FrozenSet[str]) -> List[str]:
    # unused target features by target rank, then dimension index
    options = [v for v in target if v not in used]
    return sorted(options, key=lambda v: (target_rank(v, target, O), target.index(v)))


def select_feature(target: Obj, O: Candidates, used_features: FrozenSet[str] = frozenset()) -> str:
    """
    Rational speaker: unused target feature with the smallest target rank.

    Raises:
        FeatureExhaustedError: every target feature has been used
    """
    O = tuple(O)
    if target not in O:
        raise ContractViolation("target is not a candidate")
    options = _preference(target, O, frozenset(used_features))
    if not options:
        raise FeatureExhaustedError("no unused target feature left")
    return options[0]


def plan_feature(target: Obj, O: Candidates, used_features: FrozenSet[str] = frozenset()) -> str:
    """
    Planning speaker: first utterance of the shortest pragmatic dialogue from
    (O, used_features); the rational choice when no dialogue isolates the target.

    Raises:
        FeatureExhaustedError: every target feature has been used
    """
    O = tuple(O)
    used_features = frozenset(used_features)
    if target not in O:
        raise ContractViolation("target is not a candidate")
    rounds = _shortest_dialogue(O, target, used_features)
    if rounds is None:
        return select_feature(target, O, used_features)
    return rounds[0][0]


def _simulated_choice(o: Obj, O: Candidates, used: FrozenSet[str]) -> Optional[str]:
    # argmax_f P_L0(o | f, O) over o's unused features
    table = _l0_table(O)
    best, best_p = None, None
    for v in o:
        if v in used:
            continue
        p = table[v][o]
        if best_p is None or p > best_p:
            best, best_p = v, p
    return best


# ============================================================
# Listeners
# ============================================================

def literal_filter(f: str, O: Candidates) -> Candidates:
    return tuple(o for o in O if f in o)


def l1_literal_posterior(f: str, O: Candidates) -> Posterior:
    """Uniform over the candidates containing f."""
    O = tuple(O)
    share = Fraction(1, feature_count(O, f))
    return Posterior(O, tuple(share if f in o else Fraction(0) for o in O))


def belief_set(f_observed: str, O: Candidates, used_features: FrozenSet[str] = frozenset()) -> Candidates:
    """
    Candidates whose simulated rational speaker would have said f_observed.

    used_features are the features spoken before f_observed; the simulated
    speaker does not repeat them.
    """
    O = tuple(O)
    feature_count(O, f_observed)
    return tuple(o for o in O
                 if f_observed in o and _simulated_choice(o, O, used_features) == f_observed)


def listener_update(f_observed: str, O: Candidates, used_features: FrozenSet[str] = frozenset()) -> Candidates:
    """Maximal-posterior subset of the belief set; literal filter when the belief set is empty."""
    O = tuple(O)
    beliefs = belief_set(f_observed, O, used_features)
    if not beliefs:
        return literal_filter(f_observed, O)
    post = _l0_table(O)[f_observed]
    top = max(post[o] for o in beliefs)
    return tuple(o for o in beliefs if post[o] == top)


# ============================================================
# Golden chains
# ============================================================

Round = Tuple[str, Candidates]


@lru_cache(maxsize=65536)
def _shortest_dialogue(O: Candidates, target: Obj, used: FrozenSet[str]) -> Optional[Tuple[Round, ...]]:
    # fewest (feature, pragmatic update) rounds from (O, used) down to the target alone;
    # equal lengths keep the rational speaker's order
    best: Optional[Tuple[Round, ...]] = None
    for f in _preference(target, O, used):
        nxt = listener_update(f, O, used)
        if target not in nxt or len(nxt) >= len(O):
            continue
        if len(nxt) == 1:
            return ((f, nxt),)
        rest = _shortest_dialogue(nxt, target, used | {f})
        if rest is not None and (best is None or len(rest) + 1 < len(best)):
            best = ((f, nxt),) + rest
    return best


def golden_chain(instance: ObjectSet) -> GoldenChain:
    """
    Shortest pragmatic dialogue: the fewest speaker utterances that, each followed
    by a pragmatic listener update, leave the target alone.

    Every round strictly shrinks the candidate set and keeps the target. Among
    equally short dialogues the rational speaker's preference (target rank, then
    dimension index) decides, so the chain is the rational one whenever that is
    already shortest.

    Raises:
        DegenerateInstanceError: no dialogue isolates the target
    """
    return _golden_chain(instance.objects, instance.target_index)


@lru_cache(maxsize=16384)
def _golden_chain(objects: Candidates, target_index: int) -> GoldenChain:
    rounds = _shortest_dialogue(objects, objects[target_index], frozenset())
    if rounds is None:
        raise DegenerateInstanceError("no pragmatic dialogue isolates the target")
    return GoldenChain(tuple(f for f, _ in rounds), tuple(c for _, c in rounds))


def rational_chain(instance: ObjectSet) -> GoldenChain:
    """
    Greedy dialogue of select_feature and listener_update until a singleton remains.

    Raises:
        DegenerateInstanceError: the target is dropped, a round does not shrink
            the candidate set, or the speaker runs out of features
    """
    target = instance.target
    O = instance.objects
    used: FrozenSet[str] = frozenset()
    features: List[str] = []
    sets: List[Candidates] = []
    while len(O) > 1:
        try:
            f = select_feature(target, O, used)
        except FeatureExhaustedError as e:
            raise DegenerateInstanceError(f"no convergence within {len(target)} rounds") from e
        nxt = listener_update(f, O, used)
        if target not in nxt:
            raise DegenerateInstanceError(f"listener update on {f!r} drops the target")
        if len(nxt) >= len(O):
            raise DegenerateInstanceError(f"listener update on {f!r} does not shrink the candidate set")
        used = used | {f}
        features.append(f)
        sets.append(nxt)
        O = nxt
    return GoldenChain(tuple(features), tuple(sets))


def chain_record(instance: ObjectSet, chain: GoldenChain) -> Dict:
    """Line record for a golden chain (schema rsa-chain/1)."""
    return {
        "schema": "rsa-chain/1",
        "instance_id": instance.instance_id,
        "features": list(chain.feature_sequence),
        "set_sizes": chain.set_sizes,
        "candidate_sets": [[object_name(o) for o in c] for c in chain.candidate_sets],
        "min_rounds": chain.min_rounds,
    }


def instance_record(instance: ObjectSet) -> Dict:
    """Line record for an instance (schema rsa-instance/1)."""
    return {
        "schema": "rsa-instance/1",
        "instance_id": instance.instance_id,
        "feature_dims": list(instance.feature_dims),
        "objects": [list(o) for o in instance.objects],
        "target_index": instance.target_index,
    }


def instance_from_record(record: Dict) -> ObjectSet:
    if record.get("schema") != "rsa-instance/1":
        raise ContractViolation(f"unexpected schema {record.get('schema')!r}")
    return ObjectSet(
        feature_dims=tuple(record["feature_dims"]),
        objects=tuple(tuple(o) for o in record["objects"]),
        target_index=int(record["target_index"]),
        instance_id=str(record.get("instance_id", "")),
    )
