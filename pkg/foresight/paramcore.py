"""
Role-conditioned softmax policy shared by both players.

logits = W · φ with φ = [prompt features of the role | state features]; an
optional tanh hidden layer sits in front of the output weights. Illegal
actions are removed from the normalizer, so their probability is exactly 0.
All gradients are computed in logit space and pushed back through
PolicyNetwork.backprop.
"""

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Callable, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from foresight.errors import ContractViolation, DegenerateRatioError, IllegalActionError, NumericError

GradientVector = np.ndarray


class Role(IntEnum):
    """Agent index; agent1 moves on even turns, agent2 on odd turns."""
    AGENT1 = 1
    AGENT2 = 2
    # game-specific aliases
    SPEAKER = 1
    LISTENER = 2
    ATTACKER = 1
    DEFENDER = 2

    @property
    def counterpart(self) -> "Role":
        return Role.AGENT2 if self == Role.AGENT1 else Role.AGENT1

    @classmethod
    def for_turn(cls, t: int) -> "Role":
        return cls.AGENT1 if t % 2 == 0 else cls.AGENT2


def role_prompt(role: Role) -> np.ndarray:
    """Role conditioning vector: bias, agent1 flag, agent2 flag."""
    return np.array([1.0, float(role == Role.AGENT1), float(role == Role.AGENT2)])


PROMPT_SIZE = 3


@dataclass(frozen=True)
class RoleContext:
    role: Role
    prompt_features: np.ndarray

    @classmethod
    def for_role(cls, role: Role) -> "RoleContext":
        return cls(role=role, prompt_features=role_prompt(role))


@dataclass(frozen=True)
class StateFeatures:
    features: np.ndarray
    legal_mask: np.ndarray

    @property
    def legal_actions(self) -> List[int]:
        return [int(a) for a in np.flatnonzero(self.legal_mask)]


@dataclass(frozen=True)
class PolicyLayout:
    """
    Shape of the policy.

    n_features counts the full input φ (role prompt included).
    """
    n_actions: int
    n_features: int
    hidden_units: int = 0
    game_id: int = 0
    feature_map_id: int = 0

    @property
    def d(self) -> int:
        if self.hidden_units == 0:
            return self.n_actions * self.n_features
        h = self.hidden_units
        return h * self.n_features + h + self.n_actions * h


@dataclass
class PolicyParameters:
    """Flat parameter vector θ of fixed length d."""
    values: np.ndarray
    layout: PolicyLayout = field(compare=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (self.layout.d,):
            raise ContractViolation(f"expected {self.layout.d} parameters, got {self.values.shape}")
        assert_finite(self.values, "parameters")

    @property
    def d(self) -> int:
        return self.layout.d

    def copy(self) -> "PolicyParameters":
        return PolicyParameters(self.values.copy(), self.layout)


def assert_finite(values: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(values)):
        raise NumericError(f"non-finite {what}")


class PolicyNetwork:
    """Logits and logit-space backpropagation for a PolicyLayout."""

    def __init__(self, layout: PolicyLayout):
        self.layout = layout

    @property
    def d(self) -> int:
        return self.layout.d

    def _split(self, theta: np.ndarray):
        A, D, H = self.layout.n_actions, self.layout.n_features, self.layout.hidden_units
        if H == 0:
            return theta.reshape(A, D), None, None
        w1 = theta[:H * D].reshape(H, D)
        b1 = theta[H * D:H * D + H]
        w2 = theta[H * D + H:].reshape(A, H)
        return w1, b1, w2

    def inputs(self, ctx: RoleContext, sf: StateFeatures) -> np.ndarray:
        phi = np.concatenate([ctx.prompt_features, sf.features])
        if phi.shape[0] != self.layout.n_features:
            raise ContractViolation(f"feature size {phi.shape[0]} != layout {self.layout.n_features}")
        if sf.legal_mask.shape[0] != self.layout.n_actions:
            raise ContractViolation(f"mask size {sf.legal_mask.shape[0]} != layout {self.layout.n_actions}")
        return phi

    def logits(self, theta: np.ndarray, phi: np.ndarray) -> np.ndarray:
        if self.layout.hidden_units == 0:
            w, _, _ = self._split(theta)
            return w @ phi
        w1, b1, w2 = self._split(theta)
        return w2 @ np.tanh(w1 @ phi + b1)

    def backprop(self, theta: np.ndarray, phi: np.ndarray, g_logits: np.ndarray) -> GradientVector:
        """Gradient with respect to θ of g_logits · logits(θ, φ)."""
        if self.layout.hidden_units == 0:
            return np.outer(g_logits, phi).ravel()
        w1, b1, w2 = self._split(theta)
        hidden = np.tanh(w1 @ phi + b1)
        g_w2 = np.outer(g_logits, hidden)
        g_pre = (w2.T @ g_logits) * (1.0 - hidden ** 2)
        g_w1 = np.outer(g_pre, phi)
        return np.concatenate([g_w1.ravel(), g_pre, g_w2.ravel()])


# ============================================================
# Distribution
# ============================================================

def _masked_log_softmax(z: np.ndarray, mask: np.ndarray) -> np.ndarray:
    if not mask.any():
        raise ContractViolation("no legal action")
    legal = z[mask]
    if not np.all(np.isfinite(legal)):
        raise NumericError("non-finite logits")
    top = legal.max()
    lse = top + np.log(np.exp(legal - top).sum())
    logp = np.full(z.shape, -np.inf)
    logp[mask] = legal - lse
    return logp


def log_probabilities(net: PolicyNetwork, theta: np.ndarray, ctx: RoleContext, sf: StateFeatures) -> np.ndarray:
    """Log-probabilities over all action slots (-inf on illegal slots)."""
    phi = net.inputs(ctx, sf)
    return _masked_log_softmax(net.logits(theta, phi), sf.legal_mask)


def action_distribution(net: PolicyNetwork, theta: np.ndarray, ctx: RoleContext, sf: StateFeatures) -> np.ndarray:
    """Probabilities over action slots; illegal actions get exactly 0."""
    return np.exp(log_probabilities(net, theta, ctx, sf))


def log_prob(net: PolicyNetwork, theta: np.ndarray, ctx: RoleContext, sf: StateFeatures, action: int) -> float:
    _check_legal(sf, action)
    return float(log_probabilities(net, theta, ctx, sf)[action])


def entropy(net: PolicyNetwork, theta: np.ndarray, ctx: RoleContext, sf: StateFeatures) -> float:
    """Categorical entropy in nats over the legal actions."""
    logp = log_probabilities(net, theta, ctx, sf)
    mask = sf.legal_mask
    p = np.exp(logp[mask])
    return float(max(0.0, -(p * logp[mask]).sum()))


def _check_legal(sf: StateFeatures, action: int) -> None:
    if not (0 <= action < sf.legal_mask.shape[0]) or not sf.legal_mask[action]:
        raise IllegalActionError(f"action {action} is not legal")


def log_prob_gradient(net: PolicyNetwork, theta: np.ndarray, ctx: RoleContext,
                      sf: StateFeatures, action: int) -> GradientVector:
    """∇θ log p(action); in logit space this is onehot(action) − p."""
    _check_legal(sf, action)
    phi = net.inputs(ctx, sf)
    p = np.exp(_masked_log_softmax(net.logits(theta, phi), sf.legal_mask))
    g = -p
    g[action] += 1.0
    return net.backprop(theta, phi, g)


def ratio_and_gradient(net: PolicyNetwork, theta: np.ndarray, theta_old: np.ndarray, ctx: RoleContext,
                       sf: StateFeatures, action: int,
                       behavior_logp: Optional[float] = None) -> Tuple[float, GradientVector]:
    """
    Likelihood ratio p_θ(a|s) / p_θold(a|s) and its gradient ratio · ∇log p_θ.

    Args:
        behavior_logp: Log-probability recorded at collection time; when given
            it replaces the evaluation under theta_old.

    Raises:
        DegenerateRatioError: behaviour probability is zero
    """
    _check_legal(sf, action)
    if behavior_logp is None:
        behavior_logp = float(log_probabilities(net, theta_old, ctx, sf)[action])
    if not np.isfinite(behavior_logp):
        raise DegenerateRatioError(f"behaviour probability of action {action} is zero")
    phi = net.inputs(ctx, sf)
    logp = _masked_log_softmax(net.logits(theta, phi), sf.legal_mask)
    ratio = float(np.exp(logp[action] - behavior_logp))
    g = -np.exp(logp)
    g[action] += 1.0
    return ratio, ratio * net.backprop(theta, phi, g)


def kl_divergence_and_gradient(net: PolicyNetwork, theta: np.ndarray, theta_old: np.ndarray,
                               batch: Sequence[Tuple[RoleContext, StateFeatures]]) -> Tuple[float, GradientVector]:
    """Batch-mean KL(p_θ ∥ p_θold) and its gradient in θ."""
    total, grad = kl_sum_and_gradient(net, theta, theta_old, batch)
    n = len(batch)
    return total / n, grad / n


def kl_sum_and_gradient(net: PolicyNetwork, theta: np.ndarray, theta_old: np.ndarray,
                        batch: Iterable[Tuple[RoleContext, StateFeatures]]) -> Tuple[float, GradientVector]:
    """Unnormalized KL sum; partial sums over partitions add up to the full batch."""
    total = 0.0
    grad = np.zeros(net.d)
    count = 0
    for ctx, sf in batch:
        count += 1
        phi = net.inputs(ctx, sf)
        mask = sf.legal_mask
        logp = _masked_log_softmax(net.logits(theta, phi), mask)
        logq = _masked_log_softmax(net.logits(theta_old, phi), mask)
        p = np.exp(logp[mask])
        diff = logp[mask] - logq[mask]
        kl = float((p * diff).sum())
        g = np.zeros(mask.shape[0])
        g[mask] = p * (diff - kl)
        total += max(kl, 0.0)
        grad += net.backprop(theta, phi, g)
    if count == 0:
        raise ContractViolation("empty batch")
    return total, grad


def finite_difference_gradient(f: Callable[[np.ndarray], float], theta: np.ndarray, h: float = 1e-5) -> GradientVector:
    """Central differences per coordinate; test oracle for the analytic gradients."""
    if h <= 0:
        raise ContractViolation("h must be positive")
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.zeros_like(theta)
    for i in range(theta.shape[0]):
        up = theta.copy()
        down = theta.copy()
        up[i] += h
        down[i] -= h
        grad[i] = (f(up) - f(down)) / (2.0 * h)
    return grad


# ============================================================
# Decoding
# ============================================================

def sample_action(net: PolicyNetwork, theta: np.ndarray, ctx: RoleContext, sf: StateFeatures,
                  rng: np.random.Generator) -> int:
    p = action_distribution(net, theta, ctx, sf)
    cdf = np.cumsum(p)
    idx = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    legal = sf.legal_actions
    # float round-off can land one past the last legal slot
    return idx if idx < p.shape[0] and sf.legal_mask[idx] else legal[-1]


def greedy_action(net: PolicyNetwork, theta: np.ndarray, ctx: RoleContext, sf: StateFeatures) -> int:
    """Argmax action; ties go to the lowest slot."""
    return int(np.argmax(log_probabilities(net, theta, ctx, sf)))


def init_parameters(layout: PolicyLayout, seed: int = 0, init_scale: float = 0.1) -> PolicyParameters:
    """
    Initial θ: zeros for the linear policy (uniform over legal actions).

    The hidden layer gets small seeded normal input weights; output weights
    start at zero so the initial policy is still uniform.
    """
    if layout.hidden_units == 0:
        return PolicyParameters(np.zeros(layout.d), layout)
    rng = np.random.default_rng(seed)
    h, D, A = layout.hidden_units, layout.n_features, layout.n_actions
    w1 = rng.normal(0.0, init_scale, size=h * D)
    return PolicyParameters(np.concatenate([w1, np.zeros(h), np.zeros(A * h)]), layout)
