"""
Terminal rewards for both games and backward decay to per-step rewards.
"""

import math
from dataclasses import replace
from typing import Dict, Iterable, Optional, Tuple

import pandas as pd

from foresight import rsa_oracle
from foresight.environments import GameOutcome, Outcome
from foresight.errors import ConfigError, ContractViolation
from foresight.paramcore import Role
from foresight.records import Trajectory
from foresight.settings import RewardConfig


def rsa_terminal_reward(T: float, conv_min: float, n: float, cfg: Optional[RewardConfig] = None) -> float:
    """
    Shaped reward of a successful reference game.

    R̃ = T / conv_min for T ≤ conv_min, else max(0, (n − T + ε) / (n − conv_min + ε));
    the result is clip(R̃^γ, 0, 1). T, conv_min and n must be in the same unit.

    Raises:
        ConfigError: conv_min > n or non-positive lengths
    """
    cfg = cfg or RewardConfig()
    if T < 1 or conv_min < 1:
        raise ConfigError(f"turn counts must be >= 1 (T={T}, conv_min={conv_min})")
    if conv_min > n:
        raise ConfigError(f"conv_min={conv_min} exceeds n={n}: unit mismatch")
    if T <= conv_min:
        shaped = T / conv_min
    else:
        shaped = max(0.0, (n - T + cfg.epsilon) / (n - conv_min + cfg.epsilon))
    return min(max(shaped ** cfg.gamma, 0.0), 1.0)


def rsa_episode_reward(outcome: GameOutcome, min_rounds: int, n_features: int,
                       cfg: Optional[RewardConfig] = None) -> float:
    """Shared reward of both RSA players; failures earn 0."""
    cfg = cfg or RewardConfig()
    if not outcome.terminal:
        raise ContractViolation("episode is not finished")
    if outcome.result != Outcome.RSA_SUCCESS:
        return 0.0
    if cfg.turn_unit == "turns":
        return rsa_terminal_reward(outcome.total_turns, 2 * min_rounds, 2 * n_features, cfg)
    rounds = math.ceil(outcome.total_turns / 2)
    return rsa_terminal_reward(rounds, min_rounds, n_features, cfg)


def taboo_terminal_reward(outcome: GameOutcome) -> Tuple[float, float]:
    """(attacker reward, defender reward): +1 winner, −1 loser, 0 on a tie."""
    if not outcome.terminal:
        raise ContractViolation("episode is not finished")
    if outcome.result == Outcome.ATTACKER_WIN:
        return 1.0, -1.0
    if outcome.result == Outcome.DEFENDER_WIN:
        return -1.0, 1.0
    if outcome.result == Outcome.TIE:
        return 0.0, 0.0
    raise ContractViolation(f"{outcome.result.value} is not a Taboo outcome")


def episode_terminal_rewards(state, outcome: GameOutcome, cfg: Optional[RewardConfig] = None) -> Dict[Role, float]:
    """Terminal reward per role for a finished episode of either game."""
    if state.game_id == "rsa":
        chain = rsa_oracle.golden_chain(state.instance)
        value = rsa_episode_reward(outcome, chain.min_rounds, state.instance.n_dims, cfg)
        return {Role.AGENT1: value, Role.AGENT2: value}
    attacker, defender = taboo_terminal_reward(outcome)
    return {Role.AGENT1: attacker, Role.AGENT2: defender}


def propagate_decay(trajectory: Trajectory, terminal_rewards: Optional[Dict[Role, float]] = None,
                    cfg: Optional[RewardConfig] = None) -> Trajectory:
    """
    Per-step rewards R(a_t) = δ · R(a_{t+2}) walking back from each agent's last step.

    Rewards depend only on the terminal rewards, so applying this twice gives
    the same trajectory.
    """
    cfg = cfg or RewardConfig()
    if not trajectory.steps:
        raise ContractViolation("empty trajectory")
    terminal = dict(trajectory.terminal_rewards if terminal_rewards is None else terminal_rewards)

    rewards: Dict[int, float] = {}
    for role, final in terminal.items():
        value = final
        for step in reversed(trajectory.steps_of(role)):
            rewards[step.t] = value
            value = cfg.delta * value

    steps = [replace(s, reward=rewards.get(s.t, 0.0)) for s in trajectory.steps]
    return replace(trajectory, steps=tuple(steps), terminal_rewards=terminal)


def reward_curve(conv_min: int, n: int, gammas: Iterable[float],
                 cfg: Optional[RewardConfig] = None) -> pd.DataFrame:
    """Reward over T = 1..n for each shaping exponent (long format: T, gamma, reward)."""
    cfg = cfg or RewardConfig()
    rows = []
    for gamma in gammas:
        shaped_cfg = cfg.model_copy(update={"gamma": float(gamma)})
        for T in range(1, n + 1):
            rows.append({"T": T, "gamma": float(gamma), "reward": rsa_terminal_reward(T, conv_min, n, shaped_cfg)})
    return pd.DataFrame(rows, columns=["T", "gamma", "reward"])
