"""
Episode runner: decision frames every decision_period steps, navigation toward formation slots,
enemy pursuit, coverage detection, urgency decay and reward accounting.
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from src.schemas import RunConfig
from src.services.consensus import FrameResult, run_decision_frame
from src.services.nav import nav_commands, plan_detachments, slot_positions
from src.services.roles import DecisionSource
from src.services.world import (
    GlobalState, RewardComponents, compute_reward, detect_coverage, enemy_policy, init_world,
    step_physics, update_urgency,
)

logger = logging.getLogger(__name__)

StepHook = Callable[[dict], None]


def episode_seed(seed: int, episode: int) -> int:
    """Independent, reproducible seed for episode `episode` of a run seeded with `seed`."""
    return int(np.random.SeedSequence([seed, episode]).generate_state(1)[0])


def discounted_return(frame_rewards: Sequence[float], gamma: float = 0.92) -> float:
    """
    The discounted_return function discounts window rewards per decision frame:
    sum over f of gamma**f * R_f.

    :param frame_rewards: Sequence[float]: Window reward of each frame in order
    :param gamma: float: Per-frame discount factor
    :return: The discounted return
    """
    total, weight = 0.0, 1.0
    for reward in frame_rewards:
        total += weight * reward
        weight *= gamma
    return total


def decoy_slot(state: GlobalState, agent_id: int, bait_distance: float) -> np.ndarray:
    """
    Bait point for a decoy: bait_distance from the enemy on the side facing away from the
    active targets, so that pursuit is drawn off the formations.
    """
    enemy = state.enemy_pos
    if state.targets:
        away = enemy - np.mean([t.pos for t in state.targets], axis=0)
    else:
        away = enemy - state.agent_pos[agent_id]
    norm = float(np.hypot(*away))
    direction = away / norm if norm > 0 else np.array([1.0, 0.0])
    return enemy + direction * bait_distance


@dataclass(frozen=True)
class FrameOutcome:
    episode_seed: int
    frame_index: int
    state: GlobalState
    result: FrameResult
    next_state: GlobalState
    window_reward: float
    components: RewardComponents
    terminal: bool
    decoys: Tuple[int, ...] = ()


@dataclass
class EpisodeSummary:
    episode: int
    seed: int
    frame_rewards: List[float] = field(default_factory=list)
    components: RewardComponents = field(default_factory=RewardComponents)
    fallbacks: int = 0

    @property
    def total_return(self) -> float:
        return float(sum(self.frame_rewards))

    def discounted(self, gamma: float) -> float:
        return discounted_return(self.frame_rewards, gamma)


class Simulator:
    """
    Runs episodes of the coverage task with pluggable intent, role and consensus policies.

    :param config: RunConfig: Resolved run configuration
    :param intent_policy: Callable: Stage-one policy
    :param consensus_policy: Callable: Stage-two policy (ignored when stages == 1)
    :param stages: int: 2 for the full protocol, 1 for the intent-only baseline
    :param decoys: int: Agents per frame detached as enemy bait (nearest to the enemy first)
    :param on_step: StepHook: Receives one plain-data record per environment step
    """

    def __init__(self, config: RunConfig, intent_policy: Callable, consensus_policy: Optional[Callable],
                 stages: int = 2, decoys: int = 0, on_step: Optional[StepHook] = None):
        self.config = config
        self.intent_policy = intent_policy
        self.consensus_policy = consensus_policy
        self.stages = stages
        self.decoys = decoys
        self.on_step = on_step

    def __enter__(self) -> "Simulator":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()

    def close(self) -> None:
        """Releases the transports held by the policies."""
        for policy in (self.intent_policy, self.consensus_policy):
            close = getattr(policy, "close", None)
            if callable(close):
                close()

    def _decoys(self, state: GlobalState) -> Tuple[int, ...]:
        if not self.decoys:
            return ()
        distances = np.hypot(*(state.agent_pos - state.enemy_pos).T)
        order = np.lexsort((np.arange(state.n_agents), distances))
        return tuple(sorted(int(i) for i in order[:self.decoys]))

    def episode(self, seed: int, role_selector: Callable) -> Iterator[FrameOutcome]:
        """
        The episode function yields one FrameOutcome per decision frame of an episode.

        :param seed: int: Episode seed
        :param role_selector: Callable: (Observation, AgentTurn) -> Role
        :return: An iterator over the frames of the episode
        """
        world = self.config.world
        state = init_world(world, seed)
        frames = world.frames_per_episode
        for frame_index in range(frames):
            result = run_decision_frame(
                state, self.intent_policy, role_selector, self.consensus_policy,
                obs_range=world.obs_range, seed=seed, frame_index=frame_index, stages=self.stages,
                max_in_flight=self.config.policy.max_in_flight, oracle_config=self.config.oracle,
            )
            goals = list(result.goals)
            decoys = self._decoys(state)
            formed = [i for i in range(state.n_agents) if i not in decoys]
            plans = plan_detachments(state.agent_pos[formed], [goals[i] for i in formed], state.target_positions(),
                                     world.formation_max, world.formation_radius)
            frame_start = state
            window = RewardComponents()
            window_reward = 0.0
            for _ in range(world.decision_period):
                slots = np.zeros((state.n_agents, 2))
                slots[formed] = slot_positions(plans, state.target_positions(), len(formed))
                for agent in decoys:
                    slots[agent] = decoy_slot(state, agent, world.safe_distance + 0.5)
                accelerations = nav_commands(state.agent_pos, state.agent_vel, slots, state.obstacles,
                                             state.enemy_pos, self.config.nav, 2 * world.safe_distance)
                state = step_physics(state, accelerations, enemy_policy(state, world), world)
                report = detect_coverage(state, goals, world)
                reward = compute_reward(state, report, world.weights, world)
                if self.on_step is not None:
                    record = state.snapshot()
                    record.update(frame=frame_index, goals=goals, reward=reward.total,
                                  components=list(reward.components.as_tuple()))
                    self.on_step(record)
                state = update_urgency(state, report, world)
                window = window + reward.components
                window_reward += reward.total
            yield FrameOutcome(seed, frame_index, frame_start, result, state, window_reward, window,
                               frame_index == frames - 1, decoys)

    def run_episode(self, episode: int, seed: int, role_selector: Callable,
                    on_frame: Optional[Callable[[FrameOutcome], None]] = None) -> EpisodeSummary:
        summary = EpisodeSummary(episode=episode, seed=seed)
        for outcome in self.episode(seed, role_selector):
            summary.frame_rewards.append(outcome.window_reward)
            summary.components = summary.components + outcome.components
            summary.fallbacks += sum(record.source is not DecisionSource.LLM_OUTPUT
                                     for record in outcome.result.records)
            if on_frame is not None:
                on_frame(outcome)
        logger.info("episode %d seed=%d return=%.3f", episode, seed, summary.total_return)
        return summary
