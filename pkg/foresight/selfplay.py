"""
Self-play: rollout collection, step pairing, pretraining on oracle dialogues
and the offline training loop.

Training alternates phases of
    freeze θ_old ← θ -> collect episodes with θ_old -> propagate rewards
    -> advantages -> minibatch gradient steps on θ
and writes one metrics record per phase.
"""

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from tqdm import tqdm

from foresight import optim, rsa_oracle
from foresight.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from foresight.environments import (
    Agent,
    Outcome,
    RandomAgent,
    make_env,
    scripted_agents,
    transcript_record,
)
from foresight.errors import CheckpointError, ContractViolation, NumericError
from foresight.logsetup import format_metrics, progress_enabled
from foresight.optim import PretrainExample
from foresight.paramcore import (
    PolicyNetwork,
    Role,
    entropy,
    greedy_action,
    init_parameters,
    kl_divergence_and_gradient,
    log_probabilities,
    log_prob,
    sample_action,
)
from foresight.records import PairedStep, StepRecord, Trajectory
from foresight.rewards import episode_terminal_rewards, propagate_decay
from foresight.settings import PretrainConfig, RewardConfig, TrainRunConfig

logger = logging.getLogger(__name__)

METRICS_FILE = "metrics.jsonl"
METRICS_LONG_FILE = "metrics_long.csv"
CHECKPOINT_DIR = "checkpoints"

_STREAM_SCHEDULE = 7


# ============================================================
# Agents and episodes
# ============================================================

class ParamAgent:
    """Plays with the shared policy θ; samples during training, argmax when greedy."""

    def __init__(self, net: PolicyNetwork, theta: np.ndarray, greedy: bool = False, label: str = "policy"):
        self.net = net
        self.theta = theta
        self.greedy = greedy
        self.label = label

    def choose(self, env, state, ctx, sf, rng):
        if self.greedy:
            action = greedy_action(self.net, self.theta, ctx, sf)
        else:
            action = sample_action(self.net, self.theta, ctx, sf, rng)
        return action, float(log_probabilities(self.net, self.theta, ctx, sf)[action])


def play_episode(env, instance, agents: Dict[Role, Agent], seed: int,
                 reward_cfg: Optional[RewardConfig] = None) -> Trajectory:
    """Run one episode to termination and attach terminal rewards."""
    rng = np.random.default_rng(seed)
    state = env.reset(instance)
    steps: List[StepRecord] = []
    outcome = None
    while not state.done:
        role = state.whose_turn
        ctx, sf = env.features(state, role)
        action, logp = agents[role].choose(env, state, ctx, sf, rng)
        steps.append(StepRecord(t=state.t, role=role, ctx=ctx, sf=sf, action=int(action), behavior_logp=logp))
        state, outcome = env.step(state, int(action))

    min_rounds = None
    if env.game_id == "rsa":
        min_rounds = rsa_oracle.golden_chain(instance).min_rounds
    return Trajectory(
        instance_id=env.instance_id(instance),
        steps=tuple(steps),
        outcome=outcome,
        seed=int(seed),
        terminal_rewards=episode_terminal_rewards(state, outcome, reward_cfg),
        min_rounds=min_rounds,
    )


def rollout(env, net: PolicyNetwork, theta: np.ndarray, instance, seed: int,
            reward_cfg: Optional[RewardConfig] = None) -> Trajectory:
    """Self-play episode: both roles sample from the same θ."""
    agent = ParamAgent(net, theta)
    return play_episode(env, instance, {Role.AGENT1: agent, Role.AGENT2: agent}, seed, reward_cfg)


def pair_steps(trajectory: Trajectory) -> List[PairedStep]:
    """Each step with the other agent's immediate reply; the final step is unpaired."""
    steps = trajectory.steps
    return [PairedStep(step, steps[i + 1] if i + 1 < len(steps) else None) for i, step in enumerate(steps)]


def episode_seed(master_seed: int, phase: int, episode: int) -> int:
    return int(np.random.SeedSequence([master_seed, phase, episode]).generate_state(1)[0])


def _rollout_job(job):
    env, net, theta, instance, seed, reward_cfg = job
    return rollout(env, net, theta, instance, seed, reward_cfg)


def collect_phase(env, net: PolicyNetwork, theta: np.ndarray, instances: Sequence, run: TrainRunConfig,
                  phase: int, executor: Optional[ProcessPoolExecutor] = None) -> List[Trajectory]:
    """
    Episodes of one phase in group order: group_size consecutive rollouts per sampled instance.

    Seeds depend only on (master seed, phase, episode index), so results do not
    depend on the number of workers.
    """
    if not instances:
        raise ContractViolation("no instances to play")
    G = run.update.group_size
    n_groups = -(-run.episodes_per_phase // G)
    schedule = np.random.default_rng(np.random.SeedSequence([run.seed, phase, _STREAM_SCHEDULE]))
    picks = schedule.integers(len(instances), size=n_groups)
    jobs = []
    for g, idx in enumerate(picks):
        for k in range(G):
            jobs.append((env, net, theta, instances[int(idx)], episode_seed(run.seed, phase, g * G + k), run.reward))
    if executor is None:
        return [_rollout_job(job) for job in jobs]
    chunk = max(1, len(jobs) // (run.workers * 4))
    return list(executor.map(_rollout_job, jobs, chunksize=chunk))


# ============================================================
# Pretraining
# ============================================================

def build_golden_dataset(env, instances: Sequence, seed: int = 0) -> List[PretrainExample]:
    """
    (state, role, oracle action) examples.

    RSA: every step of the golden dialogue (planning speaker, pragmatic listener).
    Taboo: for each player, the steps of scripted-heuristic games that player
    won (heuristic vs heuristic and heuristic vs random opponents).
    """
    examples: List[PretrainExample] = []
    scripted = scripted_agents(env.game_id)
    for i, instance in enumerate(instances):
        if env.game_id == "rsa":
            traj = play_episode(env, instance, scripted, seed)
            if traj.outcome.result == Outcome.RSA_SUCCESS:
                examples.extend(PretrainExample(s.ctx, s.sf, s.action) for s in traj.steps)
            continue

        pairings = [
            scripted,
            {Role.ATTACKER: scripted[Role.ATTACKER], Role.DEFENDER: RandomAgent()},
            {Role.ATTACKER: RandomAgent(), Role.DEFENDER: scripted[Role.DEFENDER]},
        ]
        for k, agents in enumerate(pairings):
            traj = play_episode(env, instance, agents, episode_seed(seed, i, k))
            winner = {Outcome.ATTACKER_WIN: Role.ATTACKER, Outcome.DEFENDER_WIN: Role.DEFENDER}.get(traj.outcome.result)
            if winner is None or isinstance(agents[winner], RandomAgent):
                continue
            examples.extend(PretrainExample(s.ctx, s.sf, s.action) for s in traj.steps_of(winner))
    return examples


@dataclass
class PretrainResult:
    theta: np.ndarray
    mean_log_likelihood: float
    history: List[float] = field(default_factory=list)


def mean_log_likelihood(net: PolicyNetwork, theta: np.ndarray, examples: Sequence[PretrainExample]) -> float:
    return float(np.mean([log_prob(net, theta, e.ctx, e.sf, e.action) for e in examples]))


def pretrain(net: PolicyNetwork, theta_init: np.ndarray, dataset: Sequence[PretrainExample],
             cfg: Optional[PretrainConfig] = None, seed: int = 0) -> PretrainResult:
    """
    Maximum-likelihood pretraining with a KL pull toward θ_init.

    Raises:
        ContractViolation: empty dataset
    """
    cfg = cfg or PretrainConfig()
    if not dataset:
        raise ContractViolation("empty pretraining dataset")
    rng = np.random.default_rng(seed)
    theta = theta_init.copy()
    history: List[float] = []
    for epoch in tqdm(range(cfg.epochs), desc="pretrain", disable=not progress_enabled()):
        order = rng.permutation(len(dataset))
        for batch in optim.split_batches(order, cfg.batch_size):
            examples = [dataset[int(i)] for i in batch]
            g = optim.pretrain_gradient(net, theta, theta_init, examples, cfg)
            theta = optim.apply_update(theta, g, cfg.alpha, cfg.max_grad_norm)
        history.append(mean_log_likelihood(net, theta, dataset))
        logger.debug("pretrain epoch %d: mean log-likelihood %.5f", epoch + 1, history[-1])
    final = history[-1] if history else mean_log_likelihood(net, theta, dataset)
    logger.info("Pretraining done: %d examples, mean log-likelihood %.4f", len(dataset), final)
    return PretrainResult(theta, final, history)


# ============================================================
# Training loop
# ============================================================

@dataclass
class TrainResult:
    theta: np.ndarray
    metrics: pd.DataFrame
    checkpoints: List[Path]
    collapsed: bool = False
    phases_run: int = 0


def phase_metrics(net: PolicyNetwork, game: str, theta_old: np.ndarray, theta: np.ndarray,
                  trajectories: Sequence[Trajectory], grad_norms: Sequence[float]) -> Dict:
    """Named numeric summary of one phase (the metrics.jsonl record without the phase index)."""
    states = [(s.ctx, s.sf) for t in trajectories for s in t.steps]
    results = [t.outcome.result for t in trajectories]
    n = len(trajectories)
    record = {
        "episodes": n,
        "mean_reward_agent1": float(np.mean([t.terminal_rewards[Role.AGENT1] for t in trajectories])),
        "mean_reward_agent2": float(np.mean([t.terminal_rewards[Role.AGENT2] for t in trajectories])),
        "mean_turns": float(np.mean([t.outcome.total_turns for t in trajectories])),
        "entropy": float(np.mean([entropy(net, theta_old, ctx, sf) for ctx, sf in states])),
        "kl": float(kl_divergence_and_gradient(net, theta, theta_old, states)[0]),
        "grad_norm_mean": float(np.mean(grad_norms)) if grad_norms else 0.0,
        "grad_norm_max": float(np.max(grad_norms)) if grad_norms else 0.0,
        "updates": len(grad_norms),
    }
    if game == "rsa":
        record["success_rate"] = results.count(Outcome.RSA_SUCCESS) / n
        record["mean_turn_gap"] = float(np.mean([t.outcome.total_turns - 2 * t.min_rounds for t in trajectories]))
    else:
        record["attacker_win_rate"] = results.count(Outcome.ATTACKER_WIN) / n
        record["defender_win_rate"] = results.count(Outcome.DEFENDER_WIN) / n
        record["tie_rate"] = results.count(Outcome.TIE) / n
    return record


class SelfPlayTrainer:
    """
    Runs the offline self-play loop for one TrainRunConfig.

    Args:
        run: Training configuration
        instances: RSA ObjectSets or Taboo worlds to sample from
        out_dir: Where checkpoints and metrics go (None keeps everything in memory)
        theta_init: Starting parameters (pretrained); zeros by default
        resume: Optimizer checkpoint to continue from
    """

    def __init__(self, run: TrainRunConfig, instances: Sequence, out_dir: Optional[Path] = None,
                 theta_init: Optional[np.ndarray] = None, resume: Optional[Path] = None):
        self.run = run
        self.instances = list(instances)
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.env = make_env(run.game, run.rsa, run.taboo)
        self.layout = self.env.policy_layout(run.policy.hidden_units)
        self.net = PolicyNetwork(self.layout)
        if theta_init is None:
            theta_init = init_parameters(self.layout, run.seed, run.policy.init_scale).values
        if theta_init.shape != (self.layout.d,):
            raise ContractViolation(f"theta_init has {theta_init.shape[0]} entries, layout needs {self.layout.d}")
        self.theta = np.array(theta_init, dtype=np.float64)
        self.start_phase = 0
        self.step = 0
        if resume is not None:
            ckpt = load_checkpoint(resume, expected=self.layout)
            if ckpt.master_seed != run.seed:
                raise CheckpointError(f"checkpoint seed {ckpt.master_seed} differs from run seed {run.seed}")
            self.theta, self.start_phase, self.step = ckpt.theta, ckpt.phase, ckpt.step
        self.records: List[Dict] = []
        self.checkpoints: List[Path] = []
        self.stats = {"phases": 0, "episodes": 0, "updates": 0, "collapse_alarms": 0}

    # --------------------------------------------------------
    def _checkpoint_path(self, phase: int) -> Path:
        return self.out_dir / CHECKPOINT_DIR / f"phase_{phase:05d}.ckpt"

    def _save_phase_checkpoint(self, phase: int, theta_old: np.ndarray) -> None:
        if self.out_dir is None:
            return
        path = save_checkpoint(self._checkpoint_path(phase),
                               Checkpoint(self.layout, self.theta, theta_old, self.run.seed, phase, self.step))
        self.checkpoints.append(path)
        self._apply_retention()

    def _apply_retention(self) -> None:
        # keep the last keep_last plus every checkpoint_every-th phase
        keep_recent = set(self.checkpoints[-self.run.keep_last:])
        kept = []
        for path in self.checkpoints:
            phase = int(path.stem.split("_")[1])
            if path in keep_recent or phase % self.run.checkpoint_every == 0:
                kept.append(path)
            elif path.exists():
                path.unlink()
        self.checkpoints = kept

    def _write_metrics(self, record: Dict) -> None:
        if self.out_dir is None:
            return
        self.out_dir.mkdir(parents=True, exist_ok=True)
        with open(self.out_dir / METRICS_FILE, "a", encoding="utf-8", newline="\n") as f:
            f.write(json.dumps(record, sort_keys=True) + "\n")

    def _dump_transcripts(self, phase: int, trajectories: Sequence[Trajectory]) -> None:
        if self.out_dir is None or not self.run.dump_trajectories:
            return
        path = self.out_dir / "transcripts" / f"phase_{phase:05d}.jsonl"
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            for i, traj in enumerate(trajectories):
                f.write(json.dumps(transcript_record(i, traj), sort_keys=True) + "\n")

    # --------------------------------------------------------
    def _update(self, theta_old: np.ndarray, trajectories: List[Trajectory]) -> List[float]:
        cfg = self.run.update
        grad_norms: List[float] = []
        for _ in range(cfg.epochs):
            for batch in optim.split_batches(trajectories, cfg.batch_size):
                pairs = [p for traj in batch for p in pair_steps(traj)]
                g = optim.compute_gradient(self.net, self.theta, theta_old, pairs, cfg)
                if not np.all(np.isfinite(g)):
                    self._save_diagnostic(theta_old)
                    raise NumericError(f"non-finite gradient at optimizer step {self.step}")
                grad_norms.append(optim.gradient_norm(g))
                self.theta = optim.apply_update(self.theta, g, cfg.alpha, cfg.max_grad_norm)
                self.step += 1
        return grad_norms

    def _save_diagnostic(self, theta_old: np.ndarray) -> None:
        if self.out_dir is None:
            return
        path = self.out_dir / CHECKPOINT_DIR / "diagnostic.ckpt"
        save_checkpoint(path, Checkpoint(self.layout, self.theta, theta_old, self.run.seed, self.stats["phases"],
                                         self.step))
        logger.error("Non-finite update; diagnostic checkpoint written to %s", path)

    def train(self) -> TrainResult:
        run = self.run
        collapsed = False
        executor = ProcessPoolExecutor(max_workers=run.workers) if run.workers > 1 else None
        logger.info("Training %s with %s: phases %d..%d, %d episodes/phase",
                    run.game, run.algorithm, self.start_phase + 1, run.phases, run.episodes_per_phase)
        try:
            phases = range(self.start_phase + 1, run.phases + 1)
            for phase in tqdm(phases, desc=f"train {run.algorithm}", disable=not progress_enabled()):
                theta_old = self.theta.copy()
                trajectories = collect_phase(self.env, self.net, theta_old, self.instances, run, phase, executor)
                trajectories = [propagate_decay(t, cfg=run.reward) for t in trajectories]
                trajectories = optim.assign_advantages(trajectories, run.update)
                grad_norms = self._update(theta_old, trajectories)

                record = {"phase": phase}
                record.update(phase_metrics(self.net, run.game, theta_old, self.theta, trajectories, grad_norms))
                record["collapse"] = record["entropy"] < run.entropy_threshold
                self.records.append(record)
                self._write_metrics(record)
                self._dump_transcripts(phase, trajectories)
                self._save_phase_checkpoint(phase, theta_old)
                self.stats["phases"] += 1
                self.stats["episodes"] += len(trajectories)
                self.stats["updates"] += len(grad_norms)
                logger.info("phase %d: %s", phase, format_metrics({k: v for k, v in record.items() if k != "phase"}))

                if record["collapse"]:
                    self.stats["collapse_alarms"] += 1
                    logger.warning("Entropy collapse at phase %d: mean entropy %.5f nats < %.3g",
                                   phase, record["entropy"], run.entropy_threshold)
                    collapsed = True
                    if run.stop_on_collapse:
                        break
        finally:
            if executor is not None:
                executor.shutdown()

        metrics = pd.DataFrame(self.records)
        if self.out_dir is not None:
            save_checkpoint(self.out_dir / CHECKPOINT_DIR / "final.ckpt",
                            Checkpoint(self.layout, self.theta, None, run.seed, self.start_phase + self.stats["phases"],
                                       self.step))
            write_long_metrics(metrics, self.out_dir / METRICS_LONG_FILE)
        self._print_statistics()
        return TrainResult(self.theta, metrics, list(self.checkpoints), collapsed, self.stats["phases"])

    def _print_statistics(self) -> None:
        logger.info("Training summary: %d phases, %d episodes, %d updates, %d collapse alarms",
                    self.stats["phases"], self.stats["episodes"], self.stats["updates"],
                    self.stats["collapse_alarms"])


def write_long_metrics(metrics: pd.DataFrame, path: Path) -> None:
    """Plot-ready long format: phase, metric, value."""
    if metrics.empty:
        pd.DataFrame(columns=["phase", "metric", "value"]).to_csv(path, index=False)
        return
    numeric = metrics.copy()
    numeric["collapse"] = numeric["collapse"].astype(int)
    numeric.melt(id_vars=["phase"], var_name="metric", value_name="value").to_csv(path, index=False)


def train(run: TrainRunConfig, instances: Sequence, out_dir: Optional[Path] = None,
          theta_init: Optional[np.ndarray] = None, resume: Optional[Path] = None) -> TrainResult:
    """Convenience wrapper around SelfPlayTrainer."""
    return SelfPlayTrainer(run, instances, out_dir, theta_init, resume).train()
