"""Episode records shared by rollout collection, rewards and the optimizers."""

from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple

from foresight.environments import GameOutcome
from foresight.paramcore import Role, RoleContext, StateFeatures


@dataclass(frozen=True)
class StepRecord:
    """
    One agent action.

    behavior_logp is the log-probability of the action under the collection
    parameters (None for scripted agents); reward and advantage are filled in
    after the episode ends.
    """
    t: int
    role: Role
    ctx: RoleContext
    sf: StateFeatures
    action: int
    behavior_logp: Optional[float] = None
    reward: Optional[float] = None
    advantage: Optional[float] = None


@dataclass(frozen=True)
class Trajectory:
    instance_id: str
    steps: Tuple[StepRecord, ...]
    outcome: GameOutcome
    seed: int
    terminal_rewards: Dict[Role, float] = field(default_factory=dict)
    min_rounds: Optional[int] = None

    def steps_of(self, role: Role) -> List[StepRecord]:
        return [s for s in self.steps if s.role == role]

    def with_steps(self, steps) -> "Trajectory":
        return replace(self, steps=tuple(steps))


@dataclass(frozen=True)
class PairedStep:
    """A step together with the counterpart's immediate reply (None for the final step)."""
    self_step: StepRecord
    counterpart_step: Optional[StepRecord] = None
