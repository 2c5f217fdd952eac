"""
One high-level decision frame: stage-one intents, role selection, one-hop exchange, stage-two
consensus refinement and the fallback ladder.
"""
import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Any, Callable, Dict, FrozenSet, Mapping, Optional, Sequence, Tuple

import numpy as np

from src.schemas import OracleConfig
from src.services.geometry import Vec2
from src.services.intent import parse_decision, oracle_intent
from src.services.llm import TransportFailure
from src.services.roles import ConsensusDecision, DecisionSource, Intent, Role, fallback_resolve
from src.services.world import GlobalState, Observation, observe

logger = logging.getLogger(__name__)

STAGE_INTENT, STAGE_ROLE, STAGE_CONSENSUS = 0, 1, 2


@dataclass(frozen=True)
class AgentTurn:
    """Per-call context handed to policies; rng is private to (seed, frame, agent, stage)."""
    agent_id: int
    frame_index: int
    stage: int
    rng: np.random.Generator


@dataclass(frozen=True)
class MessageFrame:
    sender: int
    intent: Intent
    pos: Vec2
    vel: Vec2


@dataclass(frozen=True)
class NeighborInfo:
    agent_id: int
    pos: Vec2
    vel: Vec2
    intent_goal: int
    role: Role


@dataclass(frozen=True)
class LocalInfo:
    own_obs: Observation
    neighbors: Tuple[NeighborInfo, ...] = ()


@dataclass(frozen=True)
class CommGraph:
    n_agents: int
    edges: FrozenSet[Tuple[int, int]]

    def neighbors(self, agent_id: int) -> Tuple[int, ...]:
        return tuple(sorted({j for i, j in self.edges if i == agent_id} | {i for i, j in self.edges if j == agent_id}))


def build_comm_graph(state: GlobalState, obs_range: float = 3.0) -> CommGraph:
    """
    The build_comm_graph function links every pair of agents strictly closer than obs_range.

    :param state: GlobalState: Current state
    :param obs_range: float: Communication range delta_obs
    :return: An undirected CommGraph with edges stored as (lower id, higher id)
    """
    positions = state.agent_pos
    edges = set()
    for i in range(state.n_agents):
        distances = np.hypot(*(positions[i + 1:] - positions[i]).T)
        edges.update((i, i + 1 + int(k)) for k in np.flatnonzero(distances < obs_range))
    return CommGraph(state.n_agents, frozenset(edges))


def exchange(frames: Sequence[MessageFrame], graph: CommGraph,
             observations: Sequence[Observation]) -> Tuple[LocalInfo, ...]:
    """
    The exchange function delivers each agent's message to its one-hop neighbors.

    :param frames: Sequence[MessageFrame]: One message per agent, indexed by sender id
    :param graph: CommGraph: Communication graph of the frame
    :param observations: Sequence[Observation]: Own observation per agent
    :return: LocalInfo per agent, neighbors ordered by sender id
    """
    if len(frames) != graph.n_agents or len(observations) != graph.n_agents:
        raise ValueError(f"exchange needs one frame and one observation per agent ({graph.n_agents})")
    by_sender = {frame.sender: frame for frame in frames}
    return tuple(
        LocalInfo(
            own_obs=observations[i],
            neighbors=tuple(
                NeighborInfo(j, by_sender[j].pos, by_sender[j].vel, by_sender[j].intent.goal, by_sender[j].intent.role)
                for j in graph.neighbors(i)
            ),
        )
        for i in range(graph.n_agents)
    )


def observation_digest(obs: Observation) -> str:
    payload = json.dumps(asdict(obs), sort_keys=True)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class AgentRecord:
    """Transcript row for one agent in one frame."""
    frame_index: int
    agent_id: int
    obs_digest: str
    intent_goal: int
    intent_source: str
    role: Role
    raw_text: str
    goal: int
    source: DecisionSource
    reason: str = ""

    def to_dict(self) -> Dict[str, Any]:
        return {
            "frame": self.frame_index,
            "agent": self.agent_id,
            "obs_digest": self.obs_digest,
            "intent": self.intent_goal,
            "intent_source": self.intent_source,
            "role": self.role.name,
            "raw_text": self.raw_text,
            "goal": self.goal,
            "source": self.source.value,
            "reason": self.reason,
        }


@dataclass(frozen=True)
class FrameResult:
    frame_index: int
    observations: Tuple[Observation, ...]
    intents: Tuple[Intent, ...]
    infos: Tuple[LocalInfo, ...]
    raw_outputs: Tuple[str, ...]
    decisions: Tuple[ConsensusDecision, ...]
    records: Tuple[AgentRecord, ...]

    @property
    def goals(self) -> Tuple[int, ...]:
        return tuple(decision.goal for decision in self.decisions)

    @property
    def roles(self) -> Tuple[Role, ...]:
        return tuple(intent.role for intent in self.intents)


def _interpret(output: Any, active: Mapping[int, Vec2]) -> Tuple[ConsensusDecision, str]:
    if isinstance(output, TransportFailure):
        return ConsensusDecision.illegal(f"transport: {output.reason}"), ""
    if isinstance(output, (int, np.integer)) and not isinstance(output, bool):
        if int(output) in active:
            return ConsensusDecision(int(output)), ""
        return ConsensusDecision.illegal("not-a-target"), ""
    if isinstance(output, str):
        return parse_decision(output, active).to_decision(), output
    return ConsensusDecision.illegal(f"unexpected output {type(output).__name__}"), ""


def _call_all(fn: Callable[[int], Any], n_agents: int, max_in_flight: int) -> list:
    if max_in_flight <= 1:
        return [fn(i) for i in range(n_agents)]
    with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
        return list(pool.map(fn, range(n_agents)))


def _guarded(policy: Callable, agent_id: int, stage: int, *args) -> Any:
    try:
        return policy(*args)
    except Exception as error:
        logger.warning("agent %d stage %d policy failed: %s", agent_id, stage, error)
        return TransportFailure(reason=f"{type(error).__name__}: {error}", attempts=0)


def resolve_frame(roles: Sequence[Role], intents: Sequence[Intent], outputs: Sequence[ConsensusDecision],
                  graph: CommGraph, active_targets: Sequence[int]) -> Tuple[ConsensusDecision, ...]:
    """
    The resolve_frame function applies the fallback ladder rank by rank: Commanders first, then
    Coordinators against their resolved Commander neighbors, then Executors against resolved
    Commanders and Coordinators.

    :param roles: Sequence[Role]: Role per agent
    :param intents: Sequence[Intent]: Stage-one intent per agent
    :param outputs: Sequence[ConsensusDecision]: Stage-two output per agent, possibly illegal
    :param graph: CommGraph: Communication graph of the frame
    :param active_targets: Sequence[int]: Active target ids
    :return: A legal decision per agent
    """
    resolved: Dict[int, ConsensusDecision] = {}
    for rank in (Role.Commander, Role.Coordinator, Role.Executor):
        for i in range(len(roles)):
            if roles[i] is not rank:
                continue
            neighbors = [(j, roles[j], resolved[j]) for j in graph.neighbors(i) if j in resolved]
            resolved[i] = fallback_resolve(roles[i], intents[i], outputs[i], neighbors, active_targets)
            if resolved[i] is not outputs[i]:
                logger.debug("agent %d (%s) fell back: %s", i, rank.name, resolved[i].reason)
    return tuple(resolved[i] for i in range(len(roles)))


def run_decision_frame(state: GlobalState, intent_policy: Callable, role_selector: Callable,
                       consensus_policy: Optional[Callable], *, obs_range: float = 3.0, seed: int = 0,
                       frame_index: int = 0, stages: int = 2, max_in_flight: int = 1,
                       oracle_config: OracleConfig = OracleConfig()) -> FrameResult:
    """
    The run_decision_frame function executes one decision frame. Stage one collects intents
    (an illegal intent falls back to the oracle's choice), roles are selected from each local
    observation, messages are exchanged with one-hop neighbors, stage two refines each goal and
    the fallback ladder turns every illegal output into a legal goal. With stages=1 the
    refinement is skipped and decisions are the stage-one intents.

    Policy calls may run concurrently (max_in_flight); results are applied in agent-id order.

    :param state: GlobalState: State at the frame boundary
    :param intent_policy: Callable: (Observation, AgentTurn) -> target id, raw text or TransportFailure
    :param role_selector: Callable: (Observation, AgentTurn) -> Role
    :param consensus_policy: Callable: (LocalInfo, Role, intent goal, AgentTurn) -> raw text, target id
        or TransportFailure
    :param obs_range: float: Communication range
    :param seed: int: Episode seed for the per-agent generators
    :param frame_index: int: Index of the frame within the episode
    :param stages: int: 2 for the full protocol, 1 for the intent-only baseline
    :param max_in_flight: int: Concurrent policy calls
    :param oracle_config: OracleConfig: Scoring used when a stage-one intent is illegal
    :return: A FrameResult with one legal decision per agent
    """
    if stages not in (1, 2):
        raise ValueError(f"stages must be 1 or 2, got {stages}")
    n = state.n_agents
    active = state.target_positions()
    observations = tuple(observe(state, i) for i in range(n))

    def turn(agent_id: int, stage: int) -> AgentTurn:
        return AgentTurn(agent_id, frame_index, stage,
                         np.random.default_rng([seed, frame_index, agent_id, stage]))

    raw_intents = _call_all(
        lambda i: _guarded(intent_policy, i, STAGE_INTENT, observations[i], turn(i, STAGE_INTENT)), n, max_in_flight)
    intent_goals, intent_sources = [], []
    for i, output in enumerate(raw_intents):
        decision, _ = _interpret(output, active)
        if decision.is_legal(active):
            intent_goals.append(decision.goal)
            intent_sources.append("policy")
        else:
            logger.warning("agent %d stage-one intent illegal (%s), using oracle intent", i, decision.reason)
            intent_goals.append(oracle_intent(observations[i], Role.Commander, turn(i, STAGE_INTENT).rng,
                                              config=oracle_config))
            intent_sources.append("oracle-fallback")

    roles = [Role(role_selector(observations[i], turn(i, STAGE_ROLE))) for i in range(n)]
    intents = tuple(Intent(goal, role) for goal, role in zip(intent_goals, roles))

    graph = build_comm_graph(state, obs_range)
    frames = [MessageFrame(i, intents[i], observations[i].self_pos, observations[i].self_vel) for i in range(n)]
    infos = exchange(frames, graph, observations)

    if stages == 2 and consensus_policy is not None:
        raw = _call_all(
            lambda i: _guarded(consensus_policy, i, STAGE_CONSENSUS, infos[i], roles[i], intent_goals[i],
                               turn(i, STAGE_CONSENSUS)), n, max_in_flight)
        interpreted = [_interpret(output, active) for output in raw]
        outputs = [decision for decision, _ in interpreted]
        texts = tuple(text for _, text in interpreted)
    else:
        outputs = [ConsensusDecision(goal, DecisionSource.LLM_OUTPUT, "stage-one intent") for goal in intent_goals]
        texts = ("",) * n

    for i, decision in enumerate(outputs):
        if not decision.is_legal(active):
            logger.warning("agent %d consensus output illegal: %s", i, decision.reason)
    decisions = resolve_frame(roles, intents, outputs, graph, tuple(active))

    records = tuple(
        AgentRecord(frame_index, i, observation_digest(observations[i]), intent_goals[i], intent_sources[i],
                    roles[i], texts[i], decisions[i].goal, decisions[i].source,
                    decisions[i].reason or outputs[i].reason)
        for i in range(n)
    )
    return FrameResult(frame_index, observations, intents, infos, texts, tuple(decisions), records)
