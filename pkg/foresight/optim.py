"""
Optimizer family: PPO clipped updates, GRPO group-relative advantages, the
FoPO foresight correction, GR.FoPO, and maximum-likelihood pretraining.

Every gradient here is an ascent direction. Batch gradients are built from
per-step sums and divided by the step count at the end, so partial sums over
any partition of a batch add up to the same gradient.
"""

import logging
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from foresight.errors import ContractViolation, NumericError
from foresight.paramcore import (
    GradientVector,
    PolicyNetwork,
    RoleContext,
    StateFeatures,
    kl_sum_and_gradient,
    log_prob,
    log_prob_gradient,
    ratio_and_gradient,
)
from foresight.records import PairedStep, StepRecord, Trajectory
from foresight.settings import PretrainConfig, UpdateConfig

logger = logging.getLogger(__name__)

STD_FLOOR = 1e-8

Batch = Sequence[Union[PairedStep, StepRecord]]


@dataclass(frozen=True)
class AdvantageEstimate:
    value: float
    mode: str


@dataclass(frozen=True)
class PretrainExample:
    """One (state, oracle action) pair from a golden dialogue."""
    ctx: RoleContext
    sf: StateFeatures
    action: int


# ============================================================
# Surrogate and advantages
# ============================================================

def clipped_surrogate(r: float, adv: float, eps: float) -> float:
    """min(r·Â, clip(r, 1−ε, 1+ε)·Â)."""
    return min(r * adv, float(np.clip(r, 1.0 - eps, 1.0 + eps)) * adv)


def surrogate_slope(r: float, adv: float, eps: float) -> float:
    """Derivative of the clipped surrogate in r; zero when the clipped branch is selected outside the trust region."""
    clipped = float(np.clip(r, 1.0 - eps, 1.0 + eps)) * adv
    if r * adv <= clipped:
        return adv
    return 0.0


def advantage_plain(step: StepRecord) -> float:
    """No critic: the decay-propagated step reward is the advantage."""
    if step.reward is None:
        raise ContractViolation(f"step t={step.t} has no propagated reward")
    return step.reward


def advantage_group_relative(rewards: Sequence[float], mode: str = "group_relative") -> np.ndarray:
    """(R − mean) / std over one instance's G rollouts (population std); no-std mode skips the division."""
    values = np.asarray(rewards, dtype=np.float64)
    if values.shape[0] < 2:
        raise ContractViolation("group needs at least two rollouts")
    centered = values - values.mean()
    if mode == "group_relative_no_std":
        return centered
    std = values.std()
    if std < STD_FLOOR:
        return np.zeros_like(values)
    return centered / std


def assign_advantages(trajectories: Sequence[Trajectory], cfg: UpdateConfig) -> List[Trajectory]:
    """
    Fill StepRecord.advantage.

    Plain mode uses step rewards. Group modes expect consecutive chunks of
    group_size rollouts of one instance; every step of an agent receives that
    agent's group-relative terminal advantage.
    """
    mode = cfg.resolved_advantage_mode
    if mode == "plain":
        return [t.with_steps(replace(s, advantage=advantage_plain(s)) for s in t.steps) for t in trajectories]

    G = cfg.group_size
    if len(trajectories) % G:
        raise ContractViolation(f"{len(trajectories)} trajectories do not split into groups of {G}")
    out: List[Trajectory] = []
    for start in range(0, len(trajectories), G):
        group = list(trajectories[start:start + G])
        if len({t.instance_id for t in group}) != 1:
            raise ContractViolation("a group must hold rollouts of a single instance")
        per_role: Dict = {}
        for role in group[0].terminal_rewards:
            per_role[role] = advantage_group_relative([t.terminal_rewards[role] for t in group], mode)
        for k, traj in enumerate(group):
            out.append(traj.with_steps(
                replace(s, advantage=float(per_role[s.role][k])) for s in traj.steps
            ))
    return out


def estimate(step: StepRecord, cfg: UpdateConfig) -> AdvantageEstimate:
    if step.advantage is None:
        raise ContractViolation(f"step t={step.t} has no advantage")
    return AdvantageEstimate(step.advantage, cfg.resolved_advantage_mode)


# ============================================================
# Per-step terms
# ============================================================

@dataclass(frozen=True)
class StepTerms:
    ratio: float
    grad_ratio: GradientVector
    surrogate: float
    slope: float

    @property
    def clipped_advantage(self) -> float:
        """Â^clip = O / r, the advantage as it enters the clipped surrogate."""
        return self.surrogate / self.ratio


def step_terms(net: PolicyNetwork, theta: np.ndarray, theta_old: Optional[np.ndarray], step: StepRecord,
               cfg: UpdateConfig) -> StepTerms:
    adv = estimate(step, cfg).value
    ratio, grad = ratio_and_gradient(net, theta, theta_old, step.ctx, step.sf, step.action, step.behavior_logp)
    return StepTerms(ratio, grad, clipped_surrogate(ratio, adv, cfg.clip_epsilon),
                     surrogate_slope(ratio, adv, cfg.clip_epsilon))


def foresight_term(v1: np.ndarray, v2: np.ndarray, o1: float, a2: float, eta: float,
                   orientation: str = "counterpart") -> GradientVector:
    """
    η · O¹ · Â² · (mixed derivative applied to the counterpart step).

    counterpart: direction v2 scaled by ⟨v1, v2⟩
    self:        direction v1 scaled by ‖v2‖²
    """
    if orientation == "counterpart":
        return eta * o1 * a2 * float(np.dot(v1, v2)) * v2
    return eta * o1 * a2 * float(np.dot(v2, v2)) * v1


def _as_pairs(batch: Batch) -> List[PairedStep]:
    return [b if isinstance(b, PairedStep) else PairedStep(b, None) for b in batch]


class _TermCache:
    def __init__(self, net, theta, theta_old, cfg):
        self.net, self.theta, self.theta_old, self.cfg = net, theta, theta_old, cfg
        self._terms: Dict[int, StepTerms] = {}

    def __call__(self, step: StepRecord) -> StepTerms:
        key = id(step)
        if key not in self._terms:
            self._terms[key] = step_terms(self.net, self.theta, self.theta_old, step, self.cfg)
        return self._terms[key]


# ============================================================
# Objectives and gradients
# ============================================================

def ppo_objective(net: PolicyNetwork, theta: np.ndarray, theta_old: np.ndarray, batch: Batch,
                  cfg: UpdateConfig) -> float:
    """Batch-mean clipped surrogate minus β · mean KL(p_θ ∥ p_θold); the scalar ppo_gradient differentiates."""
    pairs = _as_pairs(batch)
    steps = [p.self_step for p in pairs]
    surrogate = sum(step_terms(net, theta, theta_old, s, cfg).surrogate for s in steps)
    kl, _ = kl_sum_and_gradient(net, theta, theta_old, [(s.ctx, s.sf) for s in steps])
    return (surrogate - cfg.beta * kl) / len(steps)


def _gradient_sum(net: PolicyNetwork, theta: np.ndarray, theta_old: np.ndarray, pairs: Sequence[PairedStep],
                  cfg: UpdateConfig, foresight: bool) -> GradientVector:
    terms = _TermCache(net, theta, theta_old, cfg)
    total = np.zeros(net.d)
    for pair in pairs:
        t1 = terms(pair.self_step)
        if t1.slope != 0.0:
            total += t1.slope * t1.grad_ratio
        if foresight and cfg.eta != 0.0 and pair.counterpart_step is not None:
            t2 = terms(pair.counterpart_step)
            total += foresight_term(t1.grad_ratio, t2.grad_ratio, t1.surrogate, t2.clipped_advantage,
                                    cfg.eta, cfg.foresight_orientation)
    if cfg.beta != 0.0:
        _, kl_grad = kl_sum_and_gradient(net, theta, theta_old, [(p.self_step.ctx, p.self_step.sf) for p in pairs])
        total -= cfg.beta * kl_grad
    return total


def ppo_gradient(net: PolicyNetwork, theta: np.ndarray, theta_old: np.ndarray, batch: Batch,
                 cfg: UpdateConfig) -> GradientVector:
    """Batch-mean ∇[clipped surrogate] − β∇KL."""
    pairs = _as_pairs(batch)
    if not pairs:
        raise ContractViolation("empty batch")
    return _gradient_sum(net, theta, theta_old, pairs, cfg, foresight=False) / len(pairs)


def fopo_correction(net: PolicyNetwork, theta: np.ndarray, theta_old: Optional[np.ndarray], pair: PairedStep,
                    cfg: UpdateConfig) -> GradientVector:
    """Foresight correction of one step against the counterpart's reply; zero for the final step."""
    if pair.counterpart_step is None or cfg.eta == 0.0:
        return np.zeros(net.d)
    t1 = step_terms(net, theta, theta_old, pair.self_step, cfg)
    t2 = step_terms(net, theta, theta_old, pair.counterpart_step, cfg)
    return foresight_term(t1.grad_ratio, t2.grad_ratio, t1.surrogate, t2.clipped_advantage,
                          cfg.eta, cfg.foresight_orientation)


def fopo_gradient(net: PolicyNetwork, theta: np.ndarray, theta_old: np.ndarray, batch: Sequence[PairedStep],
                  cfg: UpdateConfig) -> GradientVector:
    """ppo_gradient plus the batch-mean foresight correction over both agents' steps."""
    pairs = _as_pairs(batch)
    if not pairs:
        raise ContractViolation("empty batch")
    return _gradient_sum(net, theta, theta_old, pairs, cfg, foresight=True) / len(pairs)


def batch_gradient(net: PolicyNetwork, theta: np.ndarray, theta_old: np.ndarray, batch: Sequence[PairedStep],
                   cfg: UpdateConfig, partitions: int = 1) -> GradientVector:
    """
    Gradient of the configured algorithm, summed over contiguous partitions.

    Partial sums are independent of each other; only their merge touches the result.
    """
    pairs = _as_pairs(batch)
    if not pairs:
        raise ContractViolation("empty batch")
    partitions = max(1, min(partitions, len(pairs)))
    bounds = np.linspace(0, len(pairs), partitions + 1).astype(int)
    total = np.zeros(net.d)
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        if hi > lo:
            total += _gradient_sum(net, theta, theta_old, pairs[lo:hi], cfg, foresight=cfg.uses_foresight)
    return total / len(pairs)


# ============================================================
# Pretraining
# ============================================================

def pretrain_objective(net: PolicyNetwork, theta: np.ndarray, theta_init: np.ndarray,
                       examples: Sequence[PretrainExample], cfg: PretrainConfig) -> float:
    """Mean log-likelihood of the oracle actions minus β · KL(p_θ ∥ p_θinit)."""
    if not examples:
        raise ContractViolation("empty pretraining batch")
    loglik = sum(log_prob(net, theta, e.ctx, e.sf, e.action) for e in examples)
    kl, _ = kl_sum_and_gradient(net, theta, theta_init, [(e.ctx, e.sf) for e in examples])
    return (loglik - cfg.beta * kl) / len(examples)


def pretrain_gradient(net: PolicyNetwork, theta: np.ndarray, theta_init: np.ndarray,
                      examples: Sequence[PretrainExample], cfg: PretrainConfig) -> GradientVector:
    if not examples:
        raise ContractViolation("empty pretraining batch")
    total = np.zeros(net.d)
    for e in examples:
        total += log_prob_gradient(net, theta, e.ctx, e.sf, e.action)
    if cfg.beta != 0.0:
        _, kl_grad = kl_sum_and_gradient(net, theta, theta_init, [(e.ctx, e.sf) for e in examples])
        total -= cfg.beta * kl_grad
    return total / len(examples)


# ============================================================
# Update
# ============================================================

def gradient_norm(gradient: np.ndarray) -> float:
    return float(np.linalg.norm(gradient))


def apply_update(theta: np.ndarray, gradient: np.ndarray, alpha: float,
                 max_grad_norm: Optional[float] = None) -> np.ndarray:
    """
    Ascent step θ + α·g, with the gradient rescaled to max_grad_norm when longer.

    Raises:
        NumericError: non-finite gradient or resulting parameters
    """
    if not np.all(np.isfinite(gradient)):
        raise NumericError("non-finite gradient, update rejected")
    norm = gradient_norm(gradient)
    if max_grad_norm is not None and norm > max_grad_norm:
        gradient = gradient * (max_grad_norm / norm)
    updated = theta + alpha * gradient
    if not np.all(np.isfinite(updated)):
        raise NumericError("non-finite parameters after update")
    return updated


def compute_gradient(net: PolicyNetwork, theta: np.ndarray, theta_old: np.ndarray, batch: Sequence[PairedStep],
                     cfg: UpdateConfig) -> GradientVector:
    """Dispatch on cfg.algorithm (advantages must already be assigned)."""
    if cfg.uses_foresight:
        return fopo_gradient(net, theta, theta_old, batch, cfg)
    return ppo_gradient(net, theta, theta_old, batch, cfg)


def split_batches(items: Sequence, batch_size: int) -> List[Sequence]:
    return [items[i:i + batch_size] for i in range(0, len(items), batch_size)]


