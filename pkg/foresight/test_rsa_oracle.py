import itertools
from fractions import Fraction

import pytest

from foresight import datagen, rsa_oracle
from foresight.errors import (
    ContractViolation,
    DegenerateInstanceError,
    FeatureExhaustedError,
    ZeroCountError,
)
from foresight.rsa_oracle import parse_object_name as obj
from foresight.settings import DataGenConfig


# ============================================================
# Counting and speaker likelihoods
# ============================================================

def test_feature_count(circles_instance):
    O = circles_instance.objects
    assert rsa_oracle.feature_count(O, "circle") == 3
    assert rsa_oracle.feature_count(O, "blue") == 6
    with pytest.raises(ZeroCountError):
        rsa_oracle.feature_count(O, "purple")


@pytest.mark.parametrize("name, expected", [
    ("dry-blue-smooth-square", Fraction(15, 49)),
    ("dry-blue-rough-circle", Fraction(3, 13)),
    ("dry-blue-smooth-circle", Fraction(15, 57)),
])
def test_speaker_likelihood_worked_example(circles_instance, name, expected):
    assert rsa_oracle.speaker_likelihood(obj(name), "dry", circles_instance.objects) == expected


def test_speaker_likelihood_sums_to_one(circles_instance):
    O = circles_instance.objects
    for o in O:
        assert sum(rsa_oracle.speaker_likelihood(o, f, O) for f in o) == 1


def test_likelihood_tables_ignore_candidate_order(circles_instance):
    O = circles_instance.objects
    reordered = tuple(reversed(O))
    assert rsa_oracle.l0_likelihoods(O) is rsa_oracle.l0_likelihoods(reordered)
    target = circles_instance.target
    assert rsa_oracle.target_rank("circle", target, reordered) == rsa_oracle.target_rank("circle", target, O)
    assert set(rsa_oracle.listener_update("circle", reordered)) == set(rsa_oracle.listener_update("circle", O))


def test_speaker_likelihood_rejects_foreign_feature(circles_instance):
    with pytest.raises(ContractViolation):
        rsa_oracle.speaker_likelihood(obj("dry-blue-smooth-square"), "circle", circles_instance.objects)


def test_l0_posterior_dry(circles_instance):
    O = circles_instance.objects
    post = rsa_oracle.l0_posterior("dry", O)
    weights = [Fraction(15, 49), Fraction(3, 13), Fraction(15, 57), Fraction(15, 57)]
    norm = sum(weights)
    dry_objects = ["dry-blue-smooth-square", "dry-blue-rough-circle", "dry-blue-rough-square",
                   "dry-blue-smooth-circle"]
    for name, w in zip(dry_objects, weights):
        assert post[obj(name)] == w / norm
    assert post[obj("wet-blue-smooth-circle")] == 0
    assert sum(post.probabilities) == 1


def test_target_rank(circles_instance):
    O, target = circles_instance.objects, circles_instance.target
    assert rsa_oracle.target_rank("circle", target, O) == 2
    assert rsa_oracle.target_rank("dry", target, O) == 3


# ============================================================
# Speaker and listeners
# ============================================================

def test_select_feature_worked_examples(circles_instance, chain_instance):
    assert rsa_oracle.select_feature(circles_instance.target, circles_instance.objects) == "circle"
    assert rsa_oracle.select_feature(chain_instance.target, chain_instance.objects) == "loud"


def test_select_feature_skips_used_and_exhausts(circles_instance):
    target, O = circles_instance.target, circles_instance.objects
    assert rsa_oracle.select_feature(target, O, frozenset({"circle"})) != "circle"
    with pytest.raises(FeatureExhaustedError):
        rsa_oracle.select_feature(target, O, frozenset(target))


def test_literal_posterior_is_uniform(circles_instance):
    post = rsa_oracle.l1_literal_posterior("circle", circles_instance.objects)
    circles = [o for o in circles_instance.objects if "circle" in o]
    assert all(post[o] == Fraction(1, 3) for o in circles)
    assert sum(post.probabilities) == 1


def test_belief_set_circle(circles_instance):
    beliefs = rsa_oracle.belief_set("circle", circles_instance.objects)
    assert set(beliefs) == {obj("dry-blue-smooth-circle"), obj("wet-blue-smooth-circle")}
    assert obj("dry-blue-rough-circle") not in beliefs


def test_listener_update(circles_instance, chain_instance):
    assert set(rsa_oracle.listener_update("circle", circles_instance.objects)) == {
        obj("dry-blue-smooth-circle"), obj("wet-blue-smooth-circle")}
    loud = rsa_oracle.listener_update("loud", chain_instance.objects)
    assert set(loud) == {o for o in chain_instance.objects if "loud" in o}
    assert len(loud) == 4


def test_listener_update_never_grows(small_instances):
    for inst in small_instances:
        for f in inst.target:
            nxt = rsa_oracle.listener_update(f, inst.objects)
            assert set(nxt) <= set(rsa_oracle.literal_filter(f, inst.objects))


# ============================================================
# Golden chains
# ============================================================

def test_golden_chain_worked_example(chain_instance):
    chain = rsa_oracle.golden_chain(chain_instance)
    assert list(chain.feature_sequence) == ["loud", "late", "lean"]
    assert chain.set_sizes == [4, 2, 1]
    assert chain.min_rounds == 3
    assert chain.candidate_sets[-1] == (chain_instance.target,)


def test_golden_chain_dry_circles(circles_instance):
    chain = rsa_oracle.golden_chain(circles_instance)
    assert chain.feature_sequence[0] == "circle"
    assert chain.candidate_sets[-1] == (circles_instance.target,)
    assert chain.min_rounds == 2


def test_golden_chain_rejects_stalled_listener(monkeypatch):
    inst = rsa_oracle.ObjectSet(("p", "q"), (("p1", "q1"), ("p1", "q2"), ("p2", "q2")), 0, "stall")
    monkeypatch.setattr(rsa_oracle, "listener_update", lambda f, O, used=frozenset(): tuple(O))
    with pytest.raises(DegenerateInstanceError):
        rsa_oracle.golden_chain(inst)


def test_golden_chain_rejects_dropped_target(monkeypatch):
    inst = rsa_oracle.ObjectSet(("r", "s"), (("r1", "s1"), ("r1", "s2"), ("r2", "s2")), 0, "drop")
    monkeypatch.setattr(rsa_oracle, "listener_update", lambda f, O, used=frozenset(): tuple(O)[1:])
    with pytest.raises(DegenerateInstanceError):
        rsa_oracle.golden_chain(inst)


def _shortest_pragmatic_dialogue(instance):
    """Fewest utterances, over every ordering of target features, that isolate the target."""
    target = instance.target
    for k in range(1, instance.n_dims + 1):
        for order in itertools.permutations(target, k):
            O, used = instance.objects, frozenset()
            for i, f in enumerate(order):
                O = rsa_oracle.listener_update(f, O, used)
                used = used | {f}
                if target not in O or (len(O) == 1 and i < k - 1):
                    break
            else:
                if O == (target,):
                    return k
    return None


def _replay(instance, features):
    O, used = instance.objects, frozenset()
    for f in features:
        assert f == rsa_oracle.plan_feature(instance.target, O, used)
        O = rsa_oracle.listener_update(f, O, used)
        used = used | {f}
    return O


def _random_instances(count=200, seed=5):
    cfg = DataGenConfig(seed=seed, min_dims=2, max_dims=5, min_referents=2, max_referents=8)
    matrices = datagen.generate_matrices(None, count, seed=seed, cfg=cfg)
    _, bank = datagen.build_feature_bank(seed)
    return [(matrix, datagen.materialize_instance(matrix, bank, seed=i)) for i, matrix in enumerate(matrices)]


def test_golden_chain_matches_brute_force():
    for matrix, inst in _random_instances():
        chain = rsa_oracle.golden_chain(inst)
        assert chain.min_rounds == matrix.min_rounds
        assert _replay(inst, chain.feature_sequence) == (inst.target,)
        assert all(len(b) < len(a) for a, b in zip((inst.objects,) + chain.candidate_sets, chain.candidate_sets))
        assert _shortest_pragmatic_dialogue(inst) == chain.min_rounds


def test_golden_chain_is_never_longer_than_the_greedy_dialogue():
    shorter = 0
    for _, inst in _random_instances():
        golden = rsa_oracle.golden_chain(inst)
        try:
            greedy = rsa_oracle.rational_chain(inst)
        except DegenerateInstanceError:
            shorter += 1
            continue
        assert golden.min_rounds <= greedy.min_rounds
        if golden.min_rounds == greedy.min_rounds:
            assert golden.feature_sequence == greedy.feature_sequence
        else:
            shorter += 1
    # the greedy speaker misses a shorter dialogue on a few of these instances
    assert shorter > 0


def test_rational_chain_worked_example(chain_instance):
    assert rsa_oracle.rational_chain(chain_instance) == rsa_oracle.golden_chain(chain_instance)
    assert rsa_oracle.plan_feature(chain_instance.target, chain_instance.objects) == "loud"


# ============================================================
# Records
# ============================================================

def test_instance_record_round_trip(chain_instance):
    record = rsa_oracle.instance_record(chain_instance)
    assert record["schema"] == "rsa-instance/1"
    assert rsa_oracle.instance_from_record(record) == chain_instance


def test_chain_record(chain_instance):
    record = rsa_oracle.chain_record(chain_instance, rsa_oracle.golden_chain(chain_instance))
    assert record["features"] == ["loud", "late", "lean"]
    assert record["candidate_sets"][-1] == ["loud-weak-late-lean"]
    assert record["min_rounds"] == 3


def test_object_set_validation():
    with pytest.raises(ContractViolation):
        rsa_oracle.ObjectSet(("a",), (("x",), ("x",)), 0)
    with pytest.raises(ContractViolation):
        rsa_oracle.ObjectSet(("a", "b"), (("x", "y"), ("y", "x")), 0)
