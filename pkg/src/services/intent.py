"""
Intent and consensus policy plumbing: prompt rendering, strict output parsing, and the
scripted oracle that stands in for a language model.
"""
import enum
import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from string import Template
from typing import TYPE_CHECKING, Collection, Mapping, Optional, Sequence, Tuple

import numpy as np

from src.exceptions import ConfigurationError, NoTargetsError
from src.schemas import OracleConfig
from src.services.geometry import Vec2
from src.services.roles import ConsensusDecision, DecisionSource, Role
from src.services.world import Observation, TargetView

if TYPE_CHECKING:
    from src.services.consensus import LocalInfo, NeighborInfo

logger = logging.getLogger(__name__)

PROMPT_DIR = Path(__file__).resolve().parent.parent / "assets" / "prompts"
NO_NEIGHBORS_CLAUSE = "No neighbors are within communication range."
RECOMMENDATION = "I recommend going to target"

_NUMBER = r"[-+]?\d+(?:\.\d+)?"
_PAIR = re.compile(rf"[\[(]\s*({_NUMBER})\s*,\s*({_NUMBER})\s*[\])]")
_BRACKETED_DIGITS = re.compile(r"[\[(][^\[\]()]*\d[^\[\]()]*[\])]")

INIT_FIELDS = ("agent_id", "self_pos", "self_vel", "enemy_pos", "enemy_vel", "enemy_distance",
               "target_lines", "formation_max")
CONS_FIELDS = INIT_FIELDS + ("role", "role_description", "own_goal", "neighbor_lines", "cot")


@dataclass(frozen=True)
class FewShotExample:
    prompt: str
    response: str


@dataclass(frozen=True)
class PromptBundle:
    task_instruction: str
    cot_guidance: str
    init_template: str
    cons_template: str
    role_descriptions: Mapping[str, str]
    few_shot: Tuple[FewShotExample, ...] = ()

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        """
        The validate function renders both templates with placeholder values and fails when a
        template names a field the renderer does not provide.
        """
        for name, template, fields in (("init", self.init_template, INIT_FIELDS),
                                       ("cons", self.cons_template, CONS_FIELDS)):
            try:
                Template(template).substitute({field: "" for field in fields})
            except (KeyError, ValueError) as error:
                raise ConfigurationError(f"{name} template has an unresolved placeholder: {error}") from error
        missing = [role.name for role in Role if role.name not in self.role_descriptions]
        if missing:
            raise ConfigurationError(f"role descriptions missing for {missing}")

    @classmethod
    def load(cls, prompt_dir: str | Path | None = None) -> "PromptBundle":
        """
        The load function reads the prompt assets from prompt_dir (the packaged defaults when None).

        :param prompt_dir: str | Path | None: Directory holding the prompt files
        :return: A validated PromptBundle
        """
        directory = Path(prompt_dir) if prompt_dir else PROMPT_DIR
        try:
            few_shot_path = directory / "few_shot.jsonl"
            return cls(
                task_instruction=(directory / "task_instruction.txt").read_text(encoding="utf-8").strip(),
                cot_guidance=(directory / "cot_guidance.txt").read_text(encoding="utf-8").strip(),
                init_template=(directory / "init_template.txt").read_text(encoding="utf-8").strip(),
                cons_template=(directory / "cons_template.txt").read_text(encoding="utf-8").strip(),
                role_descriptions=json.loads((directory / "roles.json").read_text(encoding="utf-8")),
                few_shot=load_few_shot(few_shot_path) if few_shot_path.exists() else (),
            )
        except OSError as error:
            raise ConfigurationError(f"cannot read prompt assets from {directory}: {error}") from error


def load_few_shot(path: str | Path) -> Tuple[FewShotExample, ...]:
    examples = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                row = json.loads(line)
                examples.append(FewShotExample(prompt=row["prompt"], response=row["response"]))
    return tuple(examples)


def _vec(point: Sequence[float]) -> str:
    return f"[{float(point[0]):.3f}, {float(point[1]):.3f}]"


def _pair(point: Sequence[float]) -> str:
    return f"[{float(point[0]):g},{float(point[1]):g}]"


def _distance(a: Sequence[float], b: Sequence[float]) -> float:
    return float(np.hypot(a[0] - b[0], a[1] - b[1]))


def _target_lines(obs: Observation) -> str:
    return "\n".join(f"Target {t.id}: position {_vec(t.pos)}, urgency {t.urgency:.3f}" for t in obs.targets)


def _common_fields(obs: Observation, formation_max: int) -> dict:
    return {
        "agent_id": obs.agent_id,
        "self_pos": _vec(obs.self_pos),
        "self_vel": _vec(obs.self_vel),
        "enemy_pos": _vec(obs.enemy_pos),
        "enemy_vel": _vec(obs.enemy_vel),
        "enemy_distance": f"{_distance(obs.self_pos, obs.enemy_pos):.3f}",
        "target_lines": _target_lines(obs),
        "formation_max": formation_max,
    }


def render_init_prompt(bundle: PromptBundle, obs: Observation, formation_max: int = 8) -> str:
    """
    The render_init_prompt function fills the initial-intent template with one observation.
    Numbers use three decimals and targets are listed in id order.

    :param bundle: PromptBundle: Prompt assets
    :param obs: Observation: Local observation of the agent
    :param formation_max: int: Largest permitted formation, stated in the prompt
    :return: The rendered prompt text
    """
    return Template(bundle.init_template).substitute(_common_fields(obs, formation_max))


def render_cons_prompt(bundle: PromptBundle, info: "LocalInfo", own_role: Role, own_goal: int,
                       formation_max: int = 8) -> str:
    """
    The render_cons_prompt function fills the consensus template with the agent's own intent and
    role, every neighbor's intent and role, and the chain-of-thought guidance.

    :param bundle: PromptBundle: Prompt assets
    :param info: LocalInfo: Own observation and one-hop neighbor messages
    :param own_role: Role: Role selected for this frame
    :param own_goal: int: Target id of the stage-one intent
    :param formation_max: int: Largest permitted formation, stated in the prompt
    :return: The rendered prompt text
    """
    obs = info.own_obs
    positions = {t.id: t.pos for t in obs.targets}
    if info.neighbors:
        neighbor_lines = "\n".join(
            f"UAV {n.agent_id} ({n.role.name}) intends target {_vec(positions[n.intent_goal])}, "
            f"position {_vec(n.pos)}, velocity {_vec(n.vel)}"
            for n in info.neighbors
        )
    else:
        neighbor_lines = NO_NEIGHBORS_CLAUSE
    fields = _common_fields(obs, formation_max)
    fields.update(
        role=own_role.name,
        role_description=bundle.role_descriptions[own_role.name],
        own_goal=_vec(positions[own_goal]),
        neighbor_lines=neighbor_lines,
        cot=bundle.cot_guidance,
    )
    return Template(bundle.cons_template).substitute(fields)


class IllegalReason(str, enum.Enum):
    NO_COORDINATES = "no-coordinates"
    NOT_A_TARGET = "not-a-target"
    MALFORMED = "malformed"


@dataclass(frozen=True)
class ParsedDecision:
    goal: Optional[int] = None
    pos: Optional[Vec2] = None
    reason: Optional[IllegalReason] = None

    @property
    def legal(self) -> bool:
        return self.goal is not None

    def to_decision(self) -> ConsensusDecision:
        if self.legal:
            return ConsensusDecision(self.goal, DecisionSource.LLM_OUTPUT)
        return ConsensusDecision.illegal(self.reason.value)


def parse_decision(text: str, active_targets: Mapping[int, Sequence[float]]) -> ParsedDecision:
    """
    The parse_decision function extracts the last coordinate pair written as [x,y] or (x,y)
    and accepts it only when, rounded to one decimal, it equals the position of an active
    target. Anything else is an Illegal value carrying its reason.

    :param text: str: Raw model output
    :param active_targets: Mapping[int, Sequence[float]]: Active target positions by id
    :return: A ParsedDecision
    """
    matches = list(_PAIR.finditer(text or ""))
    if not matches:
        if _BRACKETED_DIGITS.search(text or ""):
            return ParsedDecision(reason=IllegalReason.MALFORMED)
        return ParsedDecision(reason=IllegalReason.NO_COORDINATES)
    try:
        point = (round(float(matches[-1].group(1)), 1), round(float(matches[-1].group(2)), 1))
    except ValueError:
        return ParsedDecision(reason=IllegalReason.MALFORMED)
    for target_id in sorted(active_targets):
        pos = active_targets[target_id]
        if (round(float(pos[0]), 1), round(float(pos[1]), 1)) == point:
            return ParsedDecision(goal=target_id, pos=Vec2(float(pos[0]), float(pos[1])))
    return ParsedDecision(reason=IllegalReason.NOT_A_TARGET)


def target_scores(obs: Observation, config: OracleConfig) -> dict[int, float]:
    """
    Base desirability of each target for one agent: urgency discounted by the agent's distance,
    minus a penalty that grows as the enemy approaches the target.
    """
    scores = {}
    for target in obs.targets:
        reach = target.urgency / (1.0 + _distance(obs.self_pos, target.pos))
        threat = max(0.0, 1.0 - _distance(target.pos, obs.enemy_pos) / config.threat_radius)
        scores[target.id] = reach - config.enemy_weight * threat
    return scores


def _argmax(scores: Mapping[int, float]) -> int:
    best = None
    for target_id in sorted(scores):
        if best is None or scores[target_id] > scores[best]:
            best = target_id
    return best


def oracle_intent(obs: Observation, role: Role, rng: np.random.Generator,
                  neighbors: Sequence["NeighborInfo"] = (), config: OracleConfig = OracleConfig()) -> int:
    """
    The oracle_intent function is the scripted stand-in for the language model's target choice.
    A Commander takes the best-scoring target. A Coordinator adds a team bonus proportional to
    the share of neighbors that intend each target. An Executor copies the intent of its
    highest-authority Commander or Coordinator neighbor (lowest id first) and otherwise acts
    like a Commander. Ties go to the lowest target id.

    :param obs: Observation: Local observation
    :param role: Role: Role the agent plays
    :param rng: np.random.Generator: Source for the optional score noise
    :param neighbors: Sequence[NeighborInfo]: One-hop neighbor messages, empty at stage one
    :param config: OracleConfig: Scoring constants
    :return: The chosen target id
    """
    if not obs.targets:
        raise NoTargetsError(f"agent {obs.agent_id} observes no active targets")
    scores = target_scores(obs, config)
    if config.noise > 0:
        jitter = rng.normal(0.0, config.noise, size=len(scores))
        scores = {target_id: value + jitter[k] for k, (target_id, value) in enumerate(sorted(scores.items()))}

    if role is Role.Executor:
        for superior in (Role.Commander, Role.Coordinator):
            for neighbor in sorted(neighbors, key=lambda n: n.agent_id):
                if neighbor.role is superior and neighbor.intent_goal in scores:
                    return neighbor.intent_goal
    elif role is Role.Coordinator and neighbors:
        bonus = config.team_weight / (1 + len(neighbors))
        for neighbor in neighbors:
            if neighbor.intent_goal in scores:
                scores[neighbor.intent_goal] += bonus
    return _argmax(scores)


def oracle_role(obs: Observation, config: OracleConfig = OracleConfig()) -> Role:
    """
    Scripted role choice used to seed the replay buffer: Executor under threat, Commander when
    one target clearly dominates, Coordinator otherwise.
    """
    if _distance(obs.self_pos, obs.enemy_pos) < config.threat_radius:
        return Role.Executor
    ranked = sorted(target_scores(obs, config).values(), reverse=True)
    if len(ranked) < 2 or ranked[0] - ranked[1] >= config.commander_margin:
        return Role.Commander
    return Role.Coordinator


_ROLE_REASONING = {
    Role.Commander: "As Commander I pick the target that yields the highest personal return and hold "
                    "to it so that my teammates can rely on my choice when they refine their own.",
    Role.Coordinator: "As Coordinator I weigh my own score against the team bonus of joining teammates "
                      "and give priority to any Commander in my neighborhood when the scores are close.",
    Role.Executor: "As Executor I follow the guidance of the highest ranking neighbor when one is "
                   "available and otherwise take the target that serves the team best.",
}


def oracle_consensus_text(obs: Observation, role: Role, goal: int, neighbors: Sequence["NeighborInfo"] = (),
                          config: OracleConfig = OracleConfig(), formation_max: int = 8) -> str:
    """
    The oracle_consensus_text function writes the step-by-step rationale that accompanies an
    oracle decision and ends with the recommendation sentence for goal.

    :param obs: Observation: Local observation
    :param role: Role: Role the agent plays
    :param goal: int: Target id being recommended
    :param neighbors: Sequence[NeighborInfo]: One-hop neighbor messages
    :param config: OracleConfig: Scoring constants
    :param formation_max: int: Largest permitted formation
    :return: The rationale text
    """
    positions = {t.id: t.pos for t in obs.targets}
    scores = target_scores(obs, config)
    enemy_distance = _distance(obs.self_pos, obs.enemy_pos)
    parts = [
        f"I am UAV {obs.agent_id} acting as {role.name}. My position is {_pair(obs.self_pos)} "
        f"and the enemy is at {_pair(np.round(obs.enemy_pos, 2))}, {enemy_distance:.2f} m away from me."
    ]
    if enemy_distance < config.threat_radius:
        parts.append(f"The enemy is inside my threat radius of {config.threat_radius:g} m, so I must avoid "
                     f"clustering in its path and keep a safe distance while I move.")
    else:
        parts.append(f"The enemy is outside my threat radius of {config.threat_radius:g} m, so I can commit "
                     f"to a target without an immediate evasive detour.")
    parts.append("Step 1, urgency against distance:")
    for target in obs.targets:
        parts.append(f"target {_pair(target.pos)} has urgency {target.urgency:.3f}, lies "
                     f"{_distance(obs.self_pos, target.pos):.2f} m from me and "
                     f"{_distance(target.pos, obs.enemy_pos):.2f} m from the enemy, giving a score of "
                     f"{scores[target.id]:.3f}.")
    nearest = min(obs.targets, key=lambda t: (_distance(t.pos, obs.enemy_pos), t.id))
    parts.append(f"Step 2, threat assessment: the target nearest to the enemy is {_pair(nearest.pos)}, "
                 f"so a formation there will attract pursuit and should be approached with caution.")
    if neighbors:
        intents = "; ".join(f"UAV {n.agent_id} as {n.role.name} intends {_pair(positions[n.intent_goal])}"
                            for n in neighbors if n.intent_goal in positions)
        parts.append(f"Step 3, teammates: I can hear {len(neighbors)} neighbors. Their intents are: {intents}. "
                     f"A target needs cluster with other two teammates to be covered, so joining a shared "
                     f"intent raises the chance of completing coverage.")
    else:
        parts.append("Step 3, teammates: no neighbors are within communication range, so I plan on my own "
                     "and expect teammates to converge in later frames.")
    parts.append(f"Step 4, role: {_ROLE_REASONING[role]}")
    parts.append(f"Step 5, formation size: no more than {formation_max} UAVs may share one formation, so if "
                 f"too many teammates converge on the same target part of the group should split toward "
                 f"the next most urgent target.")
    parts.append(f"Taking urgency, distance, the enemy threat and my role together, target "
                 f"{_pair(positions[goal])} offers the best balance for me and my team at this moment. "
                 f"{RECOMMENDATION} {_pair(positions[goal])}")
    return " ".join(parts)


@dataclass(frozen=True)
class PromptContext:
    """Fields recovered from a rendered prompt by the scripted completion responder."""
    obs: Observation
    role: Optional[Role]
    own_goal: Optional[int]
    neighbors: Tuple["NeighborInfo", ...]
    formation_max: int


_RE_AGENT = re.compile(r"You are UAV (\d+)")
_RE_ROLE = re.compile(r"acting as (Commander|Coordinator|Executor)")
_RE_SELF = re.compile(rf"Your position: \[({_NUMBER}), ({_NUMBER})\], your velocity: \[({_NUMBER}), ({_NUMBER})\]")
_RE_ENEMY = re.compile(rf"Enemy position: \[({_NUMBER}), ({_NUMBER})\], enemy velocity: \[({_NUMBER}), ({_NUMBER})\]")
_RE_TARGET = re.compile(rf"Target (\d+): position \[({_NUMBER}), ({_NUMBER})\], urgency ({_NUMBER})")
_RE_OWN_GOAL = re.compile(rf"Your initial intent: target \[({_NUMBER}), ({_NUMBER})\]")
_RE_NEIGHBOR = re.compile(
    rf"UAV (\d+) \((Commander|Coordinator|Executor)\) intends target \[({_NUMBER}), ({_NUMBER})\], "
    rf"position \[({_NUMBER}), ({_NUMBER})\], velocity \[({_NUMBER}), ({_NUMBER})\]"
)
_RE_CAP = re.compile(r"At most (\d+) UAVs")


def read_prompt_context(text: str) -> Optional[PromptContext]:
    """
    The read_prompt_context function recovers the observation, role and neighbor intents from a
    prompt produced by render_init_prompt or render_cons_prompt.

    :param text: str: Rendered prompt
    :return: The PromptContext, or None when the text is not a rendered prompt
    """
    from src.services.consensus import NeighborInfo

    agent, own, enemy = _RE_AGENT.search(text), _RE_SELF.search(text), _RE_ENEMY.search(text)
    targets = tuple(
        TargetView(int(m.group(1)), Vec2(float(m.group(2)), float(m.group(3))), float(m.group(4)))
        for m in _RE_TARGET.finditer(text)
    )
    if not (agent and own and enemy and targets):
        return None
    obs = Observation(
        agent_id=int(agent.group(1)),
        self_pos=Vec2(float(own.group(1)), float(own.group(2))),
        self_vel=Vec2(float(own.group(3)), float(own.group(4))),
        enemy_pos=Vec2(float(enemy.group(1)), float(enemy.group(2))),
        enemy_vel=Vec2(float(enemy.group(3)), float(enemy.group(4))),
        targets=tuple(sorted(targets, key=lambda t: t.id)),
    )
    positions = {t.id: t.pos for t in obs.targets}
    neighbors = []
    for m in _RE_NEIGHBOR.finditer(text):
        goal = parse_decision(f"[{m.group(3)},{m.group(4)}]", positions).goal
        if goal is not None:
            neighbors.append(NeighborInfo(agent_id=int(m.group(1)), pos=Vec2(float(m.group(5)), float(m.group(6))),
                                          vel=Vec2(float(m.group(7)), float(m.group(8))), intent_goal=goal,
                                          role=Role[m.group(2)]))
    role = _RE_ROLE.search(text)
    own_goal = _RE_OWN_GOAL.search(text)
    cap = _RE_CAP.search(text)
    return PromptContext(
        obs=obs,
        role=Role[role.group(1)] if role else None,
        own_goal=parse_decision(f"[{own_goal.group(1)},{own_goal.group(2)}]", positions).goal if own_goal else None,
        neighbors=tuple(neighbors),
        formation_max=int(cap.group(1)) if cap else 8,
    )


class OracleIntentPolicy:
    """Stage-one oracle: every agent proposes its own best target, as a Commander would."""

    def __init__(self, config: OracleConfig = OracleConfig()):
        self.config = config

    def __call__(self, obs: Observation, turn) -> int:
        return oracle_intent(obs, Role.Commander, turn.rng, config=self.config)


class OracleConsensusPolicy:
    """Stage-two oracle: refines the goal for the agent's role and answers with a full rationale."""

    def __init__(self, config: OracleConfig = OracleConfig(), formation_max: int = 8):
        self.config = config
        self.formation_max = formation_max

    def __call__(self, info: "LocalInfo", role: Role, intent_goal: int, turn) -> str:
        goal = oracle_intent(info.own_obs, role, turn.rng, info.neighbors, self.config)
        return oracle_consensus_text(info.own_obs, role, goal, info.neighbors, self.config, self.formation_max)


class OracleRoleSelector:
    """
    Oracle role policy, optionally limited to a subset of roles. A role outside the subset is
    replaced by the nearest allowed rank, the lower authority on ties.
    """

    def __init__(self, config: OracleConfig = OracleConfig(), allowed_roles: Optional[Collection[Role]] = None):
        self.config = config
        self.allowed_roles = tuple(sorted(allowed_roles)) if allowed_roles else None

    def __call__(self, obs: Observation, turn) -> Role:
        role = oracle_role(obs, self.config)
        if self.allowed_roles is None or role in self.allowed_roles:
            return role
        return min(self.allowed_roles, key=lambda allowed: (abs(int(allowed) - int(role)), -int(allowed)))
