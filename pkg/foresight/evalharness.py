"""
In-domain evaluation: fixed-role pairings, cross-play tournaments and
entropy diagnostics.

Evaluation uses greedy decoding for parametric agents and never writes to
the parameter arrays it is given.
"""

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from tqdm import tqdm

from foresight.environments import Agent, Outcome
from foresight.errors import ContractViolation
from foresight.excel_export import export_pairings_to_excel
from foresight.logsetup import progress_enabled
from foresight.paramcore import PolicyNetwork, Role, entropy
from foresight.records import Trajectory
from foresight.selfplay import ParamAgent, episode_seed, play_episode
from foresight.settings import EvalConfig, RewardConfig

logger = logging.getLogger(__name__)

Z_95 = 1.96
REPORT_SCHEMA = "eval-report/1"
RSA_METRICS = ("mean_reward", "success_rate", "mean_turn_gap", "mean_turns")
TABOO_METRICS = ("attacker_win_rate", "defender_win_rate", "tie_rate", "mean_turns")

Player = Union[Agent, np.ndarray]


# ============================================================
# Report
# ============================================================

@dataclass
class EvalReport:
    """
    Summary of one (agent1, agent2) pairing.

    RSA fields are None for Taboo reports and vice versa. mean_reward is the
    mean conversation reward scaled by 100.
    """
    game: str
    agent1: str
    agent2: str
    episodes: int
    mean_turns: float
    entropy: Optional[float] = None
    mean_reward: Optional[float] = None
    mean_reward_hw: Optional[float] = None
    success_rate: Optional[float] = None
    success_rate_hw: Optional[float] = None
    mean_turn_gap: Optional[float] = None
    attacker_win_rate: Optional[float] = None
    attacker_win_rate_hw: Optional[float] = None
    defender_win_rate: Optional[float] = None
    defender_win_rate_hw: Optional[float] = None
    tie_rate: Optional[float] = None

    def role_rates(self, role: Role) -> Tuple[float, float, float]:
        """(win, loss, tie) rates of one Taboo role."""
        if self.game != "taboo":
            raise ContractViolation("role rates are only defined for taboo reports")
        if role == Role.ATTACKER:
            return self.attacker_win_rate, self.defender_win_rate, self.tie_rate
        return self.defender_win_rate, self.attacker_win_rate, self.tie_rate

    def to_record(self) -> Dict:
        record = {"schema": REPORT_SCHEMA}
        record.update(asdict(self))
        return record


def _rate_half_width(p: float, n: int) -> float:
    return Z_95 * float(np.sqrt(p * (1.0 - p) / n))


def _mean_half_width(values: np.ndarray) -> float:
    if len(values) < 2:
        return 0.0
    return Z_95 * float(np.std(values, ddof=1) / np.sqrt(len(values)))


def summarize(game: str, trajectories: Sequence[Trajectory], labels: Tuple[str, str] = ("agent1", "agent2"),
              mean_entropy: Optional[float] = None) -> EvalReport:
    """Build an EvalReport from finished episodes."""
    if not trajectories:
        raise ContractViolation("no episodes to summarize")
    n = len(trajectories)
    results = [t.outcome.result for t in trajectories]
    report = EvalReport(
        game=game, agent1=labels[0], agent2=labels[1], episodes=n,
        mean_turns=float(np.mean([t.outcome.total_turns for t in trajectories])),
        entropy=mean_entropy,
    )
    if game == "rsa":
        rewards = 100.0 * np.array([t.terminal_rewards[Role.SPEAKER] for t in trajectories])
        success = results.count(Outcome.RSA_SUCCESS) / n
        report.mean_reward = float(rewards.mean())
        report.mean_reward_hw = _mean_half_width(rewards)
        report.success_rate = success
        report.success_rate_hw = _rate_half_width(success, n)
        report.mean_turn_gap = float(np.mean([t.outcome.total_turns - 2 * t.min_rounds for t in trajectories]))
    else:
        a_win = results.count(Outcome.ATTACKER_WIN) / n
        d_win = results.count(Outcome.DEFENDER_WIN) / n
        report.attacker_win_rate = a_win
        report.attacker_win_rate_hw = _rate_half_width(a_win, n)
        report.defender_win_rate = d_win
        report.defender_win_rate_hw = _rate_half_width(d_win, n)
        report.tie_rate = results.count(Outcome.TIE) / n
    return report


# ============================================================
# Fixed-role evaluation
# ============================================================

def as_agent(net: Optional[PolicyNetwork], player: Player, greedy: bool = True, label: str = "policy") -> Agent:
    """Parameter vectors become greedy ParamAgents; agents pass through."""
    if isinstance(player, np.ndarray):
        if net is None:
            raise ContractViolation("a policy network is needed to evaluate parameter vectors")
        return ParamAgent(net, player, greedy=greedy, label=label)
    return player


def _label(agent: Agent, fallback: str) -> str:
    return getattr(agent, "label", fallback)


def _policy_entropy(agents: Dict[Role, Agent], trajectories: Sequence[Trajectory]) -> Optional[float]:
    values = []
    for traj in trajectories:
        for step in traj.steps:
            agent = agents[step.role]
            if isinstance(agent, ParamAgent):
                values.append(entropy(agent.net, agent.theta, step.ctx, step.sf))
    return float(np.mean(values)) if values else None


def play_pairing(env, agents: Dict[Role, Agent], instances: Sequence, episodes: int, seed: int,
                 pairing_index: int = 0, reward_cfg: Optional[RewardConfig] = None) -> List[Trajectory]:
    """Episode i plays instance i mod len(instances) with a seed fixed by (seed, pairing, i)."""
    if not instances:
        raise ContractViolation("evaluation needs at least one instance")
    return [
        play_episode(env, instances[i % len(instances)], agents, episode_seed(seed, pairing_index, i), reward_cfg)
        for i in range(episodes)
    ]


def _evaluate(env, net, first: Player, second: Player, instances: Sequence,
              eval_cfg: Optional[EvalConfig], reward_cfg: Optional[RewardConfig],
              episodes: Optional[int], labels: Optional[Tuple[str, str]], pairing_index: int) -> EvalReport:
    eval_cfg = eval_cfg or EvalConfig()
    agents = {
        Role.AGENT1: as_agent(net, first, eval_cfg.greedy, labels[0] if labels else "agent1"),
        Role.AGENT2: as_agent(net, second, eval_cfg.greedy, labels[1] if labels else "agent2"),
    }
    n = episodes or eval_cfg.episodes_per_pairing
    trajectories = play_pairing(env, agents, instances, n, eval_cfg.seed, pairing_index, reward_cfg)
    labels = labels or (_label(agents[Role.AGENT1], "agent1"), _label(agents[Role.AGENT2], "agent2"))
    return summarize(env.game_id, trajectories, labels, _policy_entropy(agents, trajectories))


def evaluate_rsa(env, net: Optional[PolicyNetwork], speaker: Player, listener: Player, instances: Sequence,
                 eval_cfg: Optional[EvalConfig] = None, reward_cfg: Optional[RewardConfig] = None,
                 episodes: Optional[int] = None, labels: Optional[Tuple[str, str]] = None,
                 pairing_index: int = 0) -> EvalReport:
    """
    Evaluate a speaker/listener pairing on RSA instances.

    Args:
        env: RsaEnv
        net: Policy network for parameter-vector players (None if both are agents)
        speaker: Parameter vector or agent playing the speaker
        listener: Parameter vector or agent playing the listener
        instances: ObjectSets, cycled over the episodes
        eval_cfg: Episode count, seed and decoding
        episodes: Overrides eval_cfg.episodes_per_pairing

    Returns:
        EvalReport with success rate, reward ×100 and turn gap
    """
    if env.game_id != "rsa":
        raise ContractViolation(f"evaluate_rsa needs the rsa environment, got {env.game_id}")
    return _evaluate(env, net, speaker, listener, instances, eval_cfg, reward_cfg, episodes, labels, pairing_index)


def evaluate_taboo(env, net: Optional[PolicyNetwork], attacker: Player, defender: Player, worlds: Sequence,
                   eval_cfg: Optional[EvalConfig] = None, episodes: Optional[int] = None,
                   labels: Optional[Tuple[str, str]] = None, pairing_index: int = 0) -> EvalReport:
    """Evaluate an attacker/defender pairing on Taboo worlds (win/tie rates per role)."""
    if env.game_id != "taboo":
        raise ContractViolation(f"evaluate_taboo needs the taboo environment, got {env.game_id}")
    return _evaluate(env, net, attacker, defender, worlds, eval_cfg, None, episodes, labels, pairing_index)


def evaluate(env, net, first: Player, second: Player, instances: Sequence, eval_cfg: Optional[EvalConfig] = None,
             reward_cfg: Optional[RewardConfig] = None, episodes: Optional[int] = None,
             labels: Optional[Tuple[str, str]] = None, pairing_index: int = 0) -> EvalReport:
    if env.game_id == "rsa":
        return evaluate_rsa(env, net, first, second, instances, eval_cfg, reward_cfg, episodes, labels, pairing_index)
    return evaluate_taboo(env, net, first, second, instances, eval_cfg, episodes, labels, pairing_index)


def evaluate_vs_reference(env, net: PolicyNetwork, theta: np.ndarray, theta_ref: np.ndarray, instances: Sequence,
                          eval_cfg: Optional[EvalConfig] = None, reward_cfg: Optional[RewardConfig] = None,
                          label: str = "policy", reference_label: str = "reference") -> List[EvalReport]:
    """Both role assignments against a reference policy: (policy, reference) then (reference, policy)."""
    return [
        evaluate(env, net, theta, theta_ref, instances, eval_cfg, reward_cfg,
                 labels=(label, reference_label), pairing_index=0),
        evaluate(env, net, theta_ref, theta, instances, eval_cfg, reward_cfg,
                 labels=(reference_label, label), pairing_index=1),
    ]


# ============================================================
# Diagnostics
# ============================================================

def entropy_diagnostics(net: PolicyNetwork, theta: np.ndarray, states: Sequence,
                        threshold: float = 0.01) -> Tuple[float, bool]:
    """
    Mean categorical entropy (nats) over (ctx, sf) states and the collapse flag.

    Raises:
        ContractViolation: no states
    """
    if not states:
        raise ContractViolation("entropy diagnostics need at least one state")
    value = float(np.mean([entropy(net, theta, ctx, sf) for ctx, sf in states]))
    return value, value < threshold


# ============================================================
# Tournament
# ============================================================

@dataclass
class Tournament:
    labels: List[str]
    reports: List[EvalReport]

    @property
    def game(self) -> str:
        return self.reports[0].game

    def frame(self) -> pd.DataFrame:
        return pairing_frame(self.reports)

    def matrix(self, metric: str) -> pd.DataFrame:
        return pairing_matrix(self.frame(), metric, self.labels)

    def metrics(self) -> Tuple[str, ...]:
        return RSA_METRICS if self.game == "rsa" else TABOO_METRICS


def _pairing_job(job) -> EvalReport:
    env, net, first, second, instances, eval_cfg, reward_cfg, labels, index = job
    return evaluate(env, net, first, second, instances, eval_cfg, reward_cfg, labels=labels, pairing_index=index)


def tournament(env, net: PolicyNetwork, entries: Sequence[Tuple[str, np.ndarray]], instances: Sequence,
               eval_cfg: Optional[EvalConfig] = None, reward_cfg: Optional[RewardConfig] = None,
               workers: int = 1) -> Tournament:
    """
    Evaluate every ordered pairing of the entries, diagonal included.

    Pairing k = i·n + j puts entry i in role agent1 and entry j in role agent2
    and draws its episode seeds from (eval seed, k), so reports do not depend
    on the worker count.

    Raises:
        ContractViolation: fewer than two entries or duplicate labels
    """
    if len(entries) < 2:
        raise ContractViolation("a tournament needs at least two checkpoints")
    labels = [label for label, _ in entries]
    if len(set(labels)) != len(labels):
        raise ContractViolation(f"duplicate tournament labels: {labels}")
    eval_cfg = eval_cfg or EvalConfig()
    n = len(entries)
    jobs = [
        (env, net, entries[i][1], entries[j][1], list(instances), eval_cfg, reward_cfg,
         (labels[i], labels[j]), i * n + j)
        for i in range(n) for j in range(n)
    ]
    logger.info("Tournament: %d checkpoints, %d pairings, %d episodes each",
                n, len(jobs), eval_cfg.episodes_per_pairing)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            reports = list(tqdm(pool.map(_pairing_job, jobs), total=len(jobs), desc="tournament",
                                disable=not progress_enabled()))
    else:
        reports = [_pairing_job(job) for job in tqdm(jobs, desc="tournament", disable=not progress_enabled())]
    return Tournament(labels, reports)


def pairing_frame(reports: Sequence[EvalReport]) -> pd.DataFrame:
    columns = [f.name for f in fields(EvalReport)]
    return pd.DataFrame([asdict(r) for r in reports], columns=columns)


def pairing_matrix(frame: pd.DataFrame, metric: str, labels: Optional[Sequence[str]] = None) -> pd.DataFrame:
    """Square matrix of one metric: rows agent1, columns agent2."""
    matrix = frame.pivot(index="agent1", columns="agent2", values=metric)
    if labels is not None:
        matrix = matrix.reindex(index=list(labels), columns=list(labels))
    return matrix


def aggregate_include_exclude(matrix: pd.DataFrame, group: Sequence[str]) -> pd.Series:
    """
    Mean of a pairing matrix over pairings that include a group member
    (either role, or one role only) versus pairings that exclude the group.
    """
    group = set(group)
    rows = matrix.index.isin(group)
    cols = matrix.columns.isin(group)
    values = matrix.to_numpy(dtype=float)
    include = rows[:, None] | cols[None, :]

    def mean(mask: np.ndarray) -> float:
        return float(np.nanmean(values[mask])) if mask.any() else float("nan")

    return pd.Series({
        "include": mean(include),
        "exclude": mean(~include),
        "include_as_agent1": mean(np.broadcast_to(rows[:, None], values.shape)),
        "include_as_agent2": mean(np.broadcast_to(cols[None, :], values.shape)),
    })


# ============================================================
# Report files
# ============================================================

def write_reports(reports: Sequence[EvalReport], out_dir: Path, stem: str = "eval") -> Dict[str, Path]:
    """<stem>.csv (one row per pairing) and <stem>.jsonl (one record per pairing)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{stem}.csv"
    jsonl_path = out_dir / f"{stem}.jsonl"
    pairing_frame(reports).to_csv(csv_path, index=False)
    with open(jsonl_path, "w", encoding="utf-8", newline="\n") as f:
        for report in reports:
            f.write(json.dumps(report.to_record(), sort_keys=True) + "\n")
    return {"csv": csv_path, "jsonl": jsonl_path}


def write_tournament(result: Tournament, out_dir: Path, group: Optional[Sequence[str]] = None,
                     excel: bool = True) -> Dict[str, Path]:
    """
    Pairing reports plus one matrix CSV per metric; with a group, the
    include/exclude aggregates; with excel, the workbook export.
    """
    out_dir = Path(out_dir)
    paths = write_reports(result.reports, out_dir, stem="pairings")
    matrices = {metric: result.matrix(metric) for metric in result.metrics()}
    for metric, matrix in matrices.items():
        path = out_dir / f"matrix_{metric}.csv"
        matrix.to_csv(path)
        paths[f"matrix_{metric}"] = path
    if group:
        aggregates = pd.DataFrame({metric: aggregate_include_exclude(m, group) for metric, m in matrices.items()})
        path = out_dir / "aggregates.csv"
        aggregates.to_csv(path, index_label="grouping")
        paths["aggregates"] = path
    if excel:
        paths["xlsx"] = export_pairings_to_excel(result.frame(), matrices, out_dir / "tournament.xlsx")
    return paths
