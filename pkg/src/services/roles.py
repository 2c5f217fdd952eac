"""
The three agent roles and the hierarchical fallback ladder that turns an illegal or
missing consensus output into a legal goal.
"""
import enum
from dataclasses import dataclass
from typing import Collection, Iterable, Optional, Tuple


class Role(enum.IntEnum):
    """Role index order is the Q-network output order; authority runs the other way."""
    Commander = 0
    Coordinator = 1
    Executor = 2


ROLES: Tuple[Role, ...] = tuple(Role)


class DecisionSource(str, enum.Enum):
    LLM_OUTPUT = "llm_output"
    FALLBACK_SELF = "fallback_self"
    FALLBACK_SUPERIOR = "fallback_superior"


@dataclass(frozen=True)
class Intent:
    goal: int
    role: Role


@dataclass(frozen=True)
class ConsensusDecision:
    """
    Refined goal of one agent. goal is None for an illegal output, which only an
    LLM_OUTPUT decision may carry.
    """
    goal: Optional[int]
    source: DecisionSource = DecisionSource.LLM_OUTPUT
    reason: str = ""

    def __post_init__(self):
        if self.goal is None and self.source is not DecisionSource.LLM_OUTPUT:
            raise ValueError("a fallback decision must carry a goal")

    @classmethod
    def illegal(cls, reason: str) -> "ConsensusDecision":
        return cls(goal=None, source=DecisionSource.LLM_OUTPUT, reason=reason)

    def is_legal(self, active_targets: Optional[Collection[int]] = None) -> bool:
        if self.goal is None:
            return False
        return active_targets is None or self.goal in active_targets


def role_authority(a: Role, b: Role) -> int:
    """
    The role_authority function compares fallback authority: Commander > Coordinator > Executor.

    :param a: Role: Left operand
    :param b: Role: Right operand
    :return: 1 if a outranks b, -1 if b outranks a, 0 when equal
    """
    return (int(b) > int(a)) - (int(a) > int(b))


def _superiors(own_role: Role) -> Tuple[Role, ...]:
    if own_role is Role.Coordinator:
        return (Role.Commander,)
    if own_role is Role.Executor:
        return Role.Commander, Role.Coordinator
    return ()


def fallback_resolve(own_role: Role, own_initial: Intent, own_output: ConsensusDecision,
                     neighbor_decisions: Iterable[Tuple[int, Role, ConsensusDecision]],
                     active_targets: Optional[Collection[int]] = None) -> ConsensusDecision:
    """
    The fallback_resolve function applies the contingency ladder to one agent's consensus output.
    A legal output is returned unchanged. Otherwise a Commander keeps its initial intent, a
    Coordinator defers to a neighbor Commander with a legal decision, and an Executor follows
    a legal Commander, then a legal Coordinator. Among several candidates of the same rank
    the lowest agent id wins; with none available the agent reverts to its initial intent.

    :param own_role: Role: Role of the resolving agent
    :param own_initial: Intent: Stage-one intent of the resolving agent
    :param own_output: ConsensusDecision: Stage-two output, possibly illegal
    :param neighbor_decisions: (agent id, role, decision) of every one-hop neighbor
    :param active_targets: Collection[int]: Currently active target ids, or None to accept any goal
    :return: A legal ConsensusDecision
    """
    if own_output.is_legal(active_targets):
        return own_output
    neighbors = sorted(neighbor_decisions, key=lambda item: item[0])
    for superior in _superiors(own_role):
        for agent_id, role, decision in neighbors:
            if role is superior and decision.is_legal(active_targets):
                return ConsensusDecision(decision.goal, DecisionSource.FALLBACK_SUPERIOR,
                                         f"followed {role.name} {agent_id}")
    return ConsensusDecision(own_initial.goal, DecisionSource.FALLBACK_SELF, "kept initial intent")
