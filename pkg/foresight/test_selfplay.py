import json
import logging
from concurrent.futures import ProcessPoolExecutor

import numpy as np
import pandas as pd
import pytest

from foresight import datagen, optim
from foresight.checkpoint import load_checkpoint
from foresight.environments import Outcome, scripted_agents
from foresight.errors import CheckpointError, ContractViolation
from foresight.evalharness import evaluate_rsa
from foresight.paramcore import PolicyNetwork, Role, greedy_action, init_parameters, log_prob
from foresight.rewards import propagate_decay
from foresight.rsa_oracle import golden_chain
from foresight.selfplay import (
    SelfPlayTrainer,
    build_golden_dataset,
    collect_phase,
    episode_seed,
    pair_steps,
    play_episode,
    pretrain,
    train,
)
from foresight.settings import DataGenConfig, PretrainConfig, RsaGameConfig, TrainRunConfig, UpdateConfig

logger = logging.getLogger(__name__)


def _run(algorithm="fopo", **overrides):
    update = dict(algorithm=algorithm, alpha=0.05, beta=0.1, eta=0.2, group_size=2, batch_size=4)
    update.update(overrides.pop("update", {}))
    fields = dict(game="rsa", rsa=RsaGameConfig(max_features=4, max_objects=8), update=UpdateConfig(**update),
                  episodes_per_phase=8, phases=2, seed=1)
    fields.update(overrides)
    return TrainRunConfig(**fields)


# ============================================================
# Episodes
# ============================================================

def test_pair_steps(rsa_env, chain_instance):
    traj = play_episode(rsa_env, chain_instance, scripted_agents("rsa"), seed=0)
    pairs = pair_steps(traj)
    assert len(pairs) == len(traj.steps) == 6
    for i, pair in enumerate(pairs[:-1]):
        assert pair.self_step is traj.steps[i]
        assert pair.counterpart_step is traj.steps[i + 1]
        assert pair.counterpart_step.role == pair.self_step.role.counterpart
    assert pairs[-1].counterpart_step is None


def test_episode_seeds_are_stable_and_distinct():
    assert episode_seed(3, 1, 0) == episode_seed(3, 1, 0)
    seeds = {episode_seed(3, phase, k) for phase in range(5) for k in range(20)}
    assert len(seeds) == 100


def test_collect_phase_groups_and_determinism(rsa_env, small_instances):
    run = _run("grpo", episodes_per_phase=7, update={"group_size": 3})
    net = PolicyNetwork(rsa_env.policy_layout())
    theta = init_parameters(net.layout, 0, 0.5).values
    first = collect_phase(rsa_env, net, theta, small_instances, run, phase=1)
    second = collect_phase(rsa_env, net, theta, small_instances, run, phase=1)
    assert len(first) == 9
    for g in range(3):
        assert len({t.instance_id for t in first[3 * g:3 * g + 3]}) == 1
    assert [[s.action for s in t.steps] for t in first] == [[s.action for s in t.steps] for t in second]
    with pytest.raises(ContractViolation):
        collect_phase(rsa_env, net, theta, [], run, phase=1)


def test_collect_phase_does_not_depend_on_workers(rsa_env, small_instances):
    run = _run("ppo", workers=2)
    net = PolicyNetwork(rsa_env.policy_layout())
    theta = init_parameters(net.layout, 0, 0.5).values
    serial = collect_phase(rsa_env, net, theta, small_instances, run, phase=2)
    with ProcessPoolExecutor(max_workers=2) as pool:
        parallel = collect_phase(rsa_env, net, theta, small_instances, run, phase=2, executor=pool)
    assert [t.seed for t in serial] == [t.seed for t in parallel]
    assert [[s.action for s in t.steps] for t in serial] == [[s.action for s in t.steps] for t in parallel]


# ============================================================
# Pretraining
# ============================================================

def test_rsa_golden_dataset_covers_every_oracle_turn(rsa_env, small_instances):
    examples = build_golden_dataset(rsa_env, small_instances)
    assert len(examples) == sum(2 * golden_chain(inst).min_rounds for inst in small_instances)
    assert {e.ctx.role for e in examples} == {Role.AGENT1, Role.AGENT2}
    assert all(e.sf.legal_mask[e.action] for e in examples)


def test_taboo_golden_dataset_keeps_winning_heuristic_moves(taboo_env, taboo_worlds):
    examples = build_golden_dataset(taboo_env, taboo_worlds, seed=2)
    assert examples
    assert all(e.sf.legal_mask[e.action] for e in examples)


def test_pretraining_memorizes_a_single_example(rsa_env, chain_instance):
    example = build_golden_dataset(rsa_env, [chain_instance])[0]
    net = PolicyNetwork(rsa_env.policy_layout())
    theta0 = init_parameters(net.layout).values
    cfg = PretrainConfig(alpha=0.5, beta=0.0, batch_size=1, epochs=400, max_grad_norm=None)
    result = pretrain(net, theta0, [example], cfg)
    assert all(b >= a - 1e-12 for a, b in zip(result.history, result.history[1:]))
    assert np.exp(result.mean_log_likelihood) > 0.99
    assert np.exp(log_prob(net, result.theta, example.ctx, example.sf, example.action)) > 0.99


def test_kl_pull_keeps_pretraining_near_the_start(rsa_env, small_instances):
    dataset = build_golden_dataset(rsa_env, small_instances)
    net = PolicyNetwork(rsa_env.policy_layout())
    theta0 = init_parameters(net.layout).values
    free = pretrain(net, theta0, dataset, PretrainConfig(alpha=0.01, beta=0.0, batch_size=8, epochs=20,
                                                          max_grad_norm=None))
    pulled = pretrain(net, theta0, dataset, PretrainConfig(alpha=0.01, beta=10.0, batch_size=8, epochs=20,
                                                            max_grad_norm=None))
    assert np.linalg.norm(pulled.theta - theta0) < np.linalg.norm(free.theta - theta0)
    initial = float(np.mean([log_prob(net, theta0, e.ctx, e.sf, e.action) for e in dataset]))
    assert free.mean_log_likelihood > initial


def test_pretraining_rejects_empty_dataset(rsa_env):
    net = PolicyNetwork(rsa_env.policy_layout())
    with pytest.raises(ContractViolation):
        pretrain(net, np.zeros(net.d), [])


# ============================================================
# Training loop
# ============================================================

def test_ppo_and_fopo_without_foresight_train_identically(small_instances):
    ppo = train(_run("ppo"), small_instances)
    fopo = train(_run("fopo", update={"eta": 0.0}), small_instances)
    pd.testing.assert_frame_equal(ppo.metrics, fopo.metrics)
    assert np.array_equal(ppo.theta, fopo.theta)


@pytest.mark.parametrize("algorithm", ["fopo", "gr_fopo"])
@pytest.mark.parametrize("game", ["rsa", "taboo"])
def test_foresight_changes_the_self_play_gradient(game, algorithm, small_instances, taboo_config, taboo_worlds):
    run = _run(algorithm, game=game, taboo=taboo_config, episodes_per_phase=16)
    trainer = SelfPlayTrainer(run, small_instances if game == "rsa" else taboo_worlds)
    net, theta, cfg = trainer.net, trainer.theta, run.update
    trajectories = collect_phase(trainer.env, net, theta, trainer.instances, run, phase=1)
    trajectories = optim.assign_advantages([propagate_decay(t, cfg=run.reward) for t in trajectories], cfg)
    pairs = [p for t in trajectories for p in pair_steps(t)]

    overlaps = []
    for pair in pairs:
        if pair.counterpart_step is not None:
            v1 = optim.step_terms(net, theta, theta, pair.self_step, cfg).grad_ratio
            v2 = optim.step_terms(net, theta, theta, pair.counterpart_step, cfg).grad_ratio
            overlaps.append(abs(float(np.dot(v1, v2))))
    assert max(overlaps) > 1e-3

    with_foresight = optim.fopo_gradient(net, theta, theta, pairs, cfg)
    without = optim.ppo_gradient(net, theta, theta, pairs, cfg)
    assert not np.allclose(with_foresight, without)
    assert not np.allclose(optim.compute_gradient(net, theta, theta, pairs, cfg), without)


def test_training_is_reproducible(small_instances):
    a = train(_run("gr_fopo"), small_instances)
    b = train(_run("gr_fopo"), small_instances)
    pd.testing.assert_frame_equal(a.metrics, b.metrics)
    assert np.array_equal(a.theta, b.theta)


def test_phase_metrics_columns(small_instances):
    result = train(_run("grpo"), small_instances)
    assert list(result.metrics["phase"]) == [1, 2]
    for column in ("mean_reward_agent1", "success_rate", "mean_turn_gap", "entropy", "kl", "grad_norm_max",
                   "collapse"):
        assert column in result.metrics.columns
    assert (result.metrics["episodes"] == 8).all()
    assert (result.metrics["updates"] == 2).all()


def test_taboo_training_reports_win_rates(taboo_config, taboo_worlds):
    run = _run("fopo", game="taboo", taboo=taboo_config)
    result = train(run, taboo_worlds)
    rates = result.metrics[["attacker_win_rate", "defender_win_rate", "tie_rate"]].sum(axis=1)
    assert np.allclose(rates, 1.0)


def test_checkpoint_retention_and_outputs(run_dir, small_instances):
    run = _run("ppo", phases=7, checkpoint_every=3, keep_last=2)
    result = train(run, small_instances, out_dir=run_dir)
    names = sorted(p.name for p in (run_dir / "checkpoints").iterdir())
    assert names == ["final.ckpt", "phase_00003.ckpt", "phase_00006.ckpt", "phase_00007.ckpt"]
    assert [p.name for p in result.checkpoints] == ["phase_00003.ckpt", "phase_00006.ckpt", "phase_00007.ckpt"]
    lines = (run_dir / "metrics.jsonl").read_text().splitlines()
    assert [json.loads(line)["phase"] for line in lines] == list(range(1, 8))
    long = pd.read_csv(run_dir / "metrics_long.csv")
    assert list(long.columns) == ["phase", "metric", "value"]
    final = load_checkpoint(run_dir / "checkpoints" / "final.ckpt")
    assert final.theta_old is None and final.phase == 7
    assert np.array_equal(final.theta, result.theta)


def test_resume_continues_the_same_run(tmp_path, small_instances):
    full = train(_run("fopo", phases=4), small_instances, out_dir=tmp_path / "full")
    train(_run("fopo", phases=2), small_instances, out_dir=tmp_path / "half")
    resumed = train(_run("fopo", phases=4), small_instances, out_dir=tmp_path / "half",
                    resume=tmp_path / "half" / "checkpoints" / "phase_00002.ckpt")
    assert resumed.phases_run == 2
    assert np.array_equal(resumed.theta, full.theta)
    with pytest.raises(CheckpointError):
        SelfPlayTrainer(_run("fopo", phases=4, seed=9), small_instances,
                        resume=tmp_path / "half" / "checkpoints" / "phase_00002.ckpt")


def test_checkpoint_header_carries_the_sampling_state(run_dir, small_instances):
    train(_run("ppo", phases=3, dump_trajectories=True), small_instances, out_dir=run_dir)
    ckpt = load_checkpoint(run_dir / "checkpoints" / "phase_00002.ckpt")
    lines = (run_dir / "transcripts" / "phase_00003.jsonl").read_text().splitlines()
    seeds = [json.loads(line)["seed"] for line in lines]
    assert seeds == [episode_seed(ckpt.master_seed, ckpt.phase + 1, k) for k in range(len(seeds))]


def test_transcripts_are_dumped_on_request(run_dir, small_instances):
    train(_run("ppo", phases=1, dump_trajectories=True), small_instances, out_dir=run_dir)
    records = [json.loads(line) for line in (run_dir / "transcripts" / "phase_00001.jsonl").read_text().splitlines()]
    assert len(records) == 8
    assert {r["outcome"] for r in records} <= {Outcome.RSA_SUCCESS.value, Outcome.RSA_FAILURE.value}


def test_wrong_initial_parameters_are_rejected(small_instances):
    with pytest.raises(ContractViolation):
        SelfPlayTrainer(_run(), small_instances, theta_init=np.zeros(3))


def test_large_steps_trigger_entropy_collapse(small_instances):
    run = _run("grpo", phases=500, stop_on_collapse=True,
               update={"alpha": 20.0, "beta": 0.0, "max_grad_norm": None, "batch_size": 8})
    result = train(run, small_instances)
    assert result.collapsed
    assert result.phases_run < 500
    assert bool(result.metrics["collapse"].iloc[-1])
    assert not result.metrics["collapse"].iloc[:-1].any()


@pytest.mark.slow
def test_pretrained_self_play_smoke(small_instances, rsa_env):
    net = PolicyNetwork(rsa_env.policy_layout())
    dataset = build_golden_dataset(rsa_env, small_instances)
    warm = pretrain(net, init_parameters(net.layout).values, dataset, PretrainConfig(alpha=0.05, epochs=30))
    result = train(_run("gr_fopo", phases=20, episodes_per_phase=16), small_instances, theta_init=warm.theta)
    assert result.phases_run == 20
    assert np.isfinite(result.metrics.drop(columns=["collapse"]).to_numpy(dtype=float)).all()
    assert result.metrics["success_rate"].mean() > 0.0


def _split_corpus():
    cfg = DataGenConfig(seed=7, rl_count=40, pretrain_count=150, min_dims=2, max_dims=4,
                        min_referents=2, max_referents=8)
    return datagen.generate_rsa_corpus(cfg)


def _pretrained(env, corpus):
    net = PolicyNetwork(env.policy_layout())
    dataset = build_golden_dataset(env, corpus.instances("pretrain"))
    cfg = PretrainConfig(alpha=0.5, beta=0.0, batch_size=16, epochs=40, max_grad_norm=None)
    return net, pretrain(net, init_parameters(net.layout).values, dataset, cfg, seed=7).theta


@pytest.mark.slow
def test_pretraining_reproduces_oracle_actions_on_held_out_instances(rsa_env):
    corpus = _split_corpus()
    net, theta = _pretrained(rsa_env, corpus)
    held_out = build_golden_dataset(rsa_env, corpus.instances("rl"))
    agreement = float(np.mean([greedy_action(net, theta, e.ctx, e.sf) == e.action for e in held_out]))
    logger.info("greedy agreement with oracle actions on %d held-out steps: %.3f", len(held_out), agreement)
    assert agreement >= 0.9


@pytest.mark.slow
def test_pretrained_ppo_and_fopo_play_near_the_oracle(rsa_env):
    corpus = _split_corpus()
    net, warm = _pretrained(rsa_env, corpus)
    instances = corpus.instances("rl")
    rows = {}
    for algorithm in ("ppo", "fopo"):
        run = _run(algorithm, phases=8, episodes_per_phase=32,
                   update={"alpha": 0.005, "group_size": 4, "batch_size": 8})
        result = train(run, instances, theta_init=warm)
        report = evaluate_rsa(rsa_env, net, result.theta, result.theta, instances, episodes=len(instances))
        rows[algorithm] = {"success_rate": report.success_rate, "mean_reward": report.mean_reward,
                           "mean_turn_gap": report.mean_turn_gap,
                           "train_success_rate": float(result.metrics["success_rate"].iloc[-1])}
    comparison = pd.DataFrame.from_dict(rows, orient="index")
    logger.info("pretrained self-play after RL, greedy on %d instances:\n%s", len(instances), comparison.to_string())
    assert (comparison["success_rate"] >= 0.9).all()
    assert (comparison["mean_reward"] >= 80.0).all()
