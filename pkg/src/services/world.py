"""
Deterministic 2D particle world for swarm formation coverage under pursuit: agents, a
scripted enemy, static obstacles, urgency-decaying target regions, point-mass physics
and the composite reward.
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Dict, Sequence, Tuple

import numpy as np
from scipy.sparse.csgraph import connected_components
from scipy.spatial.distance import cdist, pdist

from src.exceptions import AgentLookupError, ConfigurationError, ShapeError
from src.schemas import RewardWeights, WorldConfig
from src.services.geometry import GRID_POINTS, ObstacleDisc, Vec2, as_points, grid_index, hausdorff
from src.services.nav import FormationTemplate, formation_slots

logger = logging.getLogger(__name__)

SWARM_SIZES = range(8, 12)
_SPAWN_TRIES = 10000
_SPAWN_SPACING = 0.6
_SPAWN_CLEARANCE = 0.5
_RADIUS_SLACK = 1e-9

__all__ = [
    "AgentState", "CoverageReport", "Detachment", "EnemyState", "GlobalState", "Observation",
    "RewardBreakdown", "RewardComponents", "TargetRegion", "TargetView", "compute_reward",
    "detect_coverage", "enemy_policy", "hausdorff", "init_world", "neighbor_set", "observe",
    "step_physics", "update_urgency", "weighted_total",
]


@dataclass(frozen=True)
class TargetRegion:
    id: int
    pos: Vec2
    urgency: float
    radius: float


@dataclass(frozen=True)
class AgentState:
    id: int
    pos: Vec2
    vel: Vec2


@dataclass(frozen=True)
class EnemyState:
    pos: Vec2
    vel: Vec2


def _frozen(values, shape) -> np.ndarray:
    array = np.array(values, dtype=float).reshape(shape)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class GlobalState:
    """
    Joint world state s. Arrays are read-only, so a state can be handed to other threads
    for metric computation while stepping continues on a new value.
    """
    agent_pos: np.ndarray
    agent_vel: np.ndarray
    enemy_pos: np.ndarray
    enemy_vel: np.ndarray
    targets: Tuple[TargetRegion, ...]
    obstacles: Tuple[ObstacleDisc, ...] = ()
    step: int = 0
    seed: int = 0

    def __post_init__(self):
        pos = as_points(self.agent_pos)
        object.__setattr__(self, "agent_pos", _frozen(pos, pos.shape))
        vel = as_points(self.agent_vel) if np.size(self.agent_vel) else np.zeros_like(pos)
        if vel.shape != pos.shape:
            raise ShapeError(f"agent velocities {vel.shape} do not match positions {pos.shape}")
        object.__setattr__(self, "agent_vel", _frozen(vel, vel.shape))
        object.__setattr__(self, "enemy_pos", _frozen(self.enemy_pos, (2,)))
        object.__setattr__(self, "enemy_vel", _frozen(self.enemy_vel, (2,)))
        object.__setattr__(self, "targets", tuple(sorted(self.targets, key=lambda t: t.id)))
        object.__setattr__(self, "obstacles", tuple(self.obstacles))

    @classmethod
    def build(cls, agent_pos, enemy_pos=(9.0, 9.0), targets=(), agent_vel=(), enemy_vel=(0.0, 0.0),
              obstacles=(), step=0, seed=0) -> "GlobalState":
        """
        The build function assembles a state from plain coordinates. Targets may be given as
        TargetRegion values or as (x, y, urgency) triples, which receive ids in order.

        :param agent_pos: Agent positions, shape (N, 2)
        :param enemy_pos: Enemy position
        :param targets: Target regions or (x, y, urgency) triples
        :param agent_vel: Agent velocities, zeros when omitted
        :param enemy_vel: Enemy velocity
        :param obstacles: Obstacle discs or (x, y, radius) triples
        :param step: int: Environment step counter
        :param seed: int: Episode seed used for target re-sampling
        :return: A GlobalState
        """
        regions = tuple(
            t if isinstance(t, TargetRegion)
            else TargetRegion(id=k, pos=Vec2(float(t[0]), float(t[1])), urgency=float(t[2]), radius=1.5)
            for k, t in enumerate(targets)
        )
        discs = tuple(
            o if isinstance(o, ObstacleDisc) else ObstacleDisc(Vec2(float(o[0]), float(o[1])), float(o[2]))
            for o in obstacles
        )
        return cls(agent_pos=agent_pos, agent_vel=agent_vel, enemy_pos=enemy_pos, enemy_vel=enemy_vel,
                   targets=regions, obstacles=discs, step=step, seed=seed)

    @property
    def n_agents(self) -> int:
        return len(self.agent_pos)

    @property
    def agents(self) -> Tuple[AgentState, ...]:
        return tuple(
            AgentState(i, Vec2(*map(float, self.agent_pos[i])), Vec2(*map(float, self.agent_vel[i])))
            for i in range(self.n_agents)
        )

    @property
    def enemy(self) -> EnemyState:
        return EnemyState(Vec2(*map(float, self.enemy_pos)), Vec2(*map(float, self.enemy_vel)))

    def target(self, target_id: int) -> TargetRegion:
        for region in self.targets:
            if region.id == target_id:
                return region
        raise AgentLookupError(f"unknown target id {target_id}")

    def target_positions(self) -> Dict[int, Vec2]:
        return {region.id: region.pos for region in self.targets}

    def snapshot(self) -> dict:
        """Plain-data view used by trace writers."""
        return {
            "step": self.step,
            "agents": [[*map(float, p), *map(float, v)] for p, v in zip(self.agent_pos, self.agent_vel)],
            "enemy": [*map(float, self.enemy_pos), *map(float, self.enemy_vel)],
            "targets": [{"id": t.id, "pos": [t.pos.x, t.pos.y], "urgency": t.urgency} for t in self.targets],
        }


@dataclass(frozen=True)
class TargetView:
    id: int
    pos: Vec2
    urgency: float


@dataclass(frozen=True)
class Observation:
    agent_id: int
    self_pos: Vec2
    self_vel: Vec2
    enemy_pos: Vec2
    enemy_vel: Vec2
    targets: Tuple[TargetView, ...]

    def target_by_pos(self, point) -> TargetView | None:
        key = (round(float(point[0]), 1), round(float(point[1]), 1))
        for view in self.targets:
            if (round(view.pos.x, 1), round(view.pos.y, 1)) == key:
                return view
        return None


def _check_swarm_size(config: WorldConfig) -> None:
    if config.strict and config.n_agents not in SWARM_SIZES:
        raise ConfigurationError(
            f"n_agents={config.n_agents} outside the supported swarm sizes "
            f"{SWARM_SIZES.start}..{SWARM_SIZES.stop - 1} (set strict=false to override)"
        )
    if config.n_agents < 1:
        raise ConfigurationError("n_agents must be positive")


def _obstacles(config: WorldConfig) -> Tuple[ObstacleDisc, ...]:
    return tuple(ObstacleDisc(Vec2(*spec.center), spec.radius) for spec in config.obstacles)


def init_world(config: WorldConfig, seed: int) -> GlobalState:
    """
    The init_world function creates the initial state of an episode. Targets occupy distinct
    cells of the candidate grid with urgency 1; agents spawn uniformly inside the spawn box
    clear of obstacles and of each other; the enemy starts near a random arena corner.

    :param config: WorldConfig: Validated world configuration
    :param seed: int: Episode seed
    :return: The initial GlobalState, identical for identical (config, seed)
    """
    _check_swarm_size(config)
    rng = np.random.default_rng(seed)
    obstacles = _obstacles(config)

    cells = rng.choice(len(GRID_POINTS), size=config.n_targets, replace=False)
    targets = tuple(
        TargetRegion(id=k, pos=GRID_POINTS[int(cell)], urgency=1.0, radius=config.target_radius)
        for k, cell in enumerate(cells)
    )

    positions: list[np.ndarray] = []
    for _ in range(_SPAWN_TRIES):
        if len(positions) == config.n_agents:
            break
        candidate = rng.uniform(-config.spawn_half_width, config.spawn_half_width, size=2)
        if any(np.hypot(*(candidate - np.asarray(o.center))) < o.radius + _SPAWN_CLEARANCE for o in obstacles):
            continue
        if any(np.hypot(*(candidate - other)) < _SPAWN_SPACING for other in positions):
            continue
        positions.append(candidate)
    if len(positions) < config.n_agents:
        raise ConfigurationError(f"could not place {config.n_agents} agents in the spawn box")

    corner = config.arena - 1.5
    signs = ((1, 1), (1, -1), (-1, 1), (-1, -1))[int(rng.integers(4))]
    enemy = np.array([signs[0] * corner, signs[1] * corner]) + rng.uniform(-0.5, 0.5, size=2)
    enemy, _ = _confine(enemy.reshape(1, 2), np.zeros((1, 2)), obstacles, config)

    state = GlobalState(agent_pos=np.stack(positions), agent_vel=np.zeros((config.n_agents, 2)),
                        enemy_pos=enemy[0], enemy_vel=np.zeros(2), targets=targets, obstacles=obstacles,
                        step=0, seed=seed)
    logger.debug("initialised world seed=%d agents=%d targets=%s", seed, config.n_agents,
                 [t.pos for t in targets])
    return state


def observe(state: GlobalState, agent_id: int) -> Observation:
    if not isinstance(agent_id, (int, np.integer)) or not 0 <= agent_id < state.n_agents:
        raise AgentLookupError(f"unknown agent id {agent_id!r} (swarm of {state.n_agents})")
    agent = state.agents[agent_id]
    enemy = state.enemy
    return Observation(
        agent_id=int(agent_id),
        self_pos=agent.pos,
        self_vel=agent.vel,
        enemy_pos=enemy.pos,
        enemy_vel=enemy.vel,
        targets=tuple(TargetView(t.id, t.pos, t.urgency) for t in state.targets),
    )


def neighbor_set(state: GlobalState, agent_id: int, obs_range: float = 3.0) -> frozenset:
    """
    The neighbor_set function returns the agents strictly closer than obs_range to agent_id.

    :param state: GlobalState: Current state
    :param agent_id: int: The agent whose neighborhood is requested
    :param obs_range: float: Observation distance delta_obs
    :return: A frozenset of agent ids, never containing agent_id itself
    """
    if not 0 <= agent_id < state.n_agents:
        raise AgentLookupError(f"unknown agent id {agent_id!r}")
    distances = np.hypot(*(state.agent_pos - state.agent_pos[agent_id]).T)
    return frozenset(int(j) for j in np.flatnonzero(distances < obs_range) if j != agent_id)


def _confine(positions: np.ndarray, velocities: np.ndarray, obstacles: Sequence[ObstacleDisc],
             config: WorldConfig) -> Tuple[np.ndarray, np.ndarray]:
    positions, velocities = positions.copy(), velocities.copy()
    outside = np.abs(positions) > config.arena
    outward = outside & (np.sign(velocities) == np.sign(positions))
    velocities[outward] = 0.0
    positions = np.clip(positions, -config.arena, config.arena)
    for obstacle in obstacles:
        center = np.asarray(obstacle.center, dtype=float)
        for i in range(len(positions)):
            offset = positions[i] - center
            distance = float(np.hypot(*offset))
            if distance >= obstacle.radius:
                continue
            normal = offset / distance if distance > 0 else np.array([1.0, 0.0])
            positions[i] = center + normal * (obstacle.radius + config.obstacle_margin)
            inward = float(velocities[i] @ normal)
            if inward < 0:
                velocities[i] = velocities[i] - inward * normal
    return positions, velocities


def step_physics(state: GlobalState, accelerations, enemy_accel, config: WorldConfig) -> GlobalState:
    """
    The step_physics function advances the world by one timestep using semi-implicit Euler:
    velocities are updated and clamped componentwise first, then positions move with the
    new velocities. Bodies are kept inside the arena and outside obstacle discs.

    :param state: GlobalState: State at step t
    :param accelerations: Per-agent accelerations, shape (N, 2)
    :param enemy_accel: Enemy acceleration, shape (2,)
    :param config: WorldConfig: Timestep, speed limits, arena and obstacle margin
    :return: The state at step t + 1
    """
    acc = np.asarray(accelerations, dtype=float)
    if acc.shape != (state.n_agents, 2):
        raise ShapeError(f"expected accelerations of shape {(state.n_agents, 2)}, got {acc.shape}")
    enemy_acc = np.asarray(enemy_accel, dtype=float)
    if enemy_acc.shape != (2,):
        raise ShapeError(f"expected an enemy acceleration of shape (2,), got {enemy_acc.shape}")

    vel = np.clip(state.agent_vel + acc * config.dt, -config.agent_speed, config.agent_speed)
    pos = state.agent_pos + vel * config.dt
    pos, vel = _confine(pos, vel, state.obstacles, config)
    vel = np.clip(vel, -config.agent_speed, config.agent_speed)

    enemy_vel = np.clip(state.enemy_vel + enemy_acc * config.dt, -config.enemy_speed, config.enemy_speed)
    enemy_pos = state.enemy_pos + enemy_vel * config.dt
    enemy_pos, enemy_vel = _confine(enemy_pos.reshape(1, 2), enemy_vel.reshape(1, 2), state.obstacles, config)
    enemy_vel = np.clip(enemy_vel, -config.enemy_speed, config.enemy_speed)

    return replace(state, agent_pos=pos, agent_vel=vel, enemy_pos=enemy_pos[0], enemy_vel=enemy_vel[0],
                   step=state.step + 1)


@dataclass(frozen=True)
class Detachment:
    target_id: int
    members: Tuple[int, ...]
    formation_error: float
    formation_ok: bool

    @property
    def size(self) -> int:
        return len(self.members)


@dataclass(frozen=True)
class CoverageReport:
    detachments: Tuple[Detachment, ...] = ()

    def covering(self) -> Tuple[Detachment, ...]:
        return tuple(d for d in self.detachments if d.formation_ok)

    def covered_size(self, target_id: int) -> int:
        return sum(d.size for d in self.covering() if d.target_id == target_id)


def detect_coverage(state: GlobalState, goals: Sequence[int], config: WorldConfig) -> CoverageReport:
    """
    The detect_coverage function groups the agents that share a goal the way navigation plans
    them: by agent id into chunks of at most formation_max, chunk c flying the regular template
    of radius formation_radius * (1 + c). The members of a chunk that sit inside the target
    radius form a detachment, and it holds a valid formation when its size lies in
    [formation_min, formation_max] and its Hausdorff distance to the template centred on the
    target is within formation_tolerance.

    :param state: GlobalState: Current state
    :param goals: Sequence[int]: Goal target id for every agent
    :param config: WorldConfig: Formation bounds and tolerances
    :return: A CoverageReport with one detachment per occupied chunk, ordered by target id then chunk
    """
    if len(goals) != state.n_agents:
        raise ShapeError(f"goal assignment covers {len(goals)} agents, expected {state.n_agents}")
    detachments = []
    for region in state.targets:
        center = np.asarray(region.pos, dtype=float)
        group = [i for i in range(state.n_agents) if goals[i] == region.id]
        for start in range(0, len(group), config.formation_max):
            members = tuple(
                i for i in group[start:start + config.formation_max]
                if np.hypot(*(state.agent_pos[i] - center)) <= region.radius + _RADIUS_SLACK
            )
            if not members:
                continue
            ring = 1 + start // config.formation_max
            template = FormationTemplate.regular(len(members), config.formation_radius * ring)
            error = hausdorff(state.agent_pos[list(members)], formation_slots(template, region.pos))
            sized = config.formation_min <= len(members) <= config.formation_max
            detachments.append(Detachment(region.id, members, error, sized and error <= config.formation_tolerance))
    return CoverageReport(tuple(detachments))


def update_urgency(state: GlobalState, report: CoverageReport, config: WorldConfig) -> GlobalState:
    """
    The update_urgency function decays the urgency of every target covered by a valid
    formation by decay * n_k (clamped at zero) and re-samples exhausted targets onto a free
    grid cell with urgency 1. The re-sampling generator is seeded from (episode seed, step,
    target id), so the update is a pure function of its inputs.

    :param state: GlobalState: Current state
    :param report: CoverageReport: Coverage detected on state
    :param config: WorldConfig: Decay factor
    :return: A new state with updated targets
    """
    occupied = {grid_index(t.pos) for t in state.targets}
    updated = []
    for region in state.targets:
        n_k = report.covered_size(region.id)
        urgency = region.urgency if n_k == 0 else max(region.urgency - config.decay * n_k, 0.0)
        if urgency <= 0.0:
            rng = np.random.default_rng([state.seed, state.step, region.id])
            free = [k for k in range(len(GRID_POINTS)) if k not in occupied]
            cell = int(rng.choice(free)) if free else grid_index(region.pos)
            occupied.discard(grid_index(region.pos))
            occupied.add(cell)
            logger.debug("target %d exhausted at step %d, moved to %s", region.id, state.step, GRID_POINTS[cell])
            region = replace(region, pos=GRID_POINTS[cell], urgency=1.0)
        else:
            region = replace(region, urgency=urgency)
        updated.append(region)
    return replace(state, targets=tuple(updated))


@dataclass(frozen=True)
class RewardComponents:
    formation: float = 0.0
    navigation: float = 0.0
    completion: float = 0.0
    interference: float = 0.0
    collision: float = 0.0

    def as_tuple(self) -> Tuple[float, float, float, float, float]:
        return self.formation, self.navigation, self.completion, self.interference, self.collision

    def __add__(self, other: "RewardComponents") -> "RewardComponents":
        return RewardComponents(*(a + b for a, b in zip(self.as_tuple(), other.as_tuple())))


@dataclass(frozen=True)
class RewardBreakdown:
    total: float
    components: RewardComponents = field(default_factory=RewardComponents)


def weighted_total(components: RewardComponents, weights: RewardWeights) -> float:
    return (weights.w_f * components.formation + weights.w_n * components.navigation
            + weights.w_tc * components.completion - weights.w_e * components.interference
            - weights.w_c * components.collision)


def compute_reward(state: GlobalState, report: CoverageReport, weights: RewardWeights,
                   config: WorldConfig) -> RewardBreakdown:
    """
    The compute_reward function evaluates the five nonnegative reward components and their
    weighted sum:

    - formation: sum over formation-sized detachments of max(0, 1 - error / formation_reward_scale)
    - navigation: sum over agents and targets of urgency * max(0, 1 - distance / arena diagonal)
    - completion: sum over targets of urgency * size of the covering formations
    - interference: agents closer to the enemy than safe_distance
    - collision: agent pairs and agent-obstacle pairs closer than collision_distance

    :param state: GlobalState: State after the physics step
    :param report: CoverageReport: Coverage detected on state
    :param weights: RewardWeights: Component weights
    :param config: WorldConfig: Distances and scales
    :return: A RewardBreakdown with the total and the components
    """
    formation = sum(
        max(0.0, 1.0 - d.formation_error / config.formation_reward_scale)
        for d in report.detachments if config.formation_min <= d.size <= config.formation_max
    )

    positions = state.agent_pos
    navigation = 0.0
    completion = 0.0
    if state.targets:
        centers = np.array([t.pos for t in state.targets], dtype=float)
        urgency = np.array([t.urgency for t in state.targets])
        closeness = np.maximum(0.0, 1.0 - cdist(positions, centers) / config.navigation_scale)
        navigation = float((closeness * urgency).sum())
        completion = float(sum(t.urgency * report.covered_size(t.id) for t in state.targets))

    interference = float(np.count_nonzero(np.hypot(*(positions - state.enemy_pos).T) < config.safe_distance))

    collision = float(np.count_nonzero(pdist(positions) < config.collision_distance)) if len(positions) > 1 else 0.0
    for obstacle in state.obstacles:
        gaps = np.hypot(*(positions - np.asarray(obstacle.center)).T) - obstacle.radius
        collision += float(np.count_nonzero(gaps < config.collision_distance))

    components = RewardComponents(formation, navigation, completion, interference, collision)
    return RewardBreakdown(weighted_total(components, weights), components)


def enemy_policy(state: GlobalState, config: WorldConfig) -> np.ndarray:
    """
    The enemy_policy function is the scripted pursuer: it chases the centroid of the nearest
    cluster of at least three agents (connected components of the proximity graph with links
    shorter than obs_range), bending around obstacles, and stays put when no cluster exists.

    :param state: GlobalState: Current state
    :param config: WorldConfig: Enemy speed, gains and observation range
    :return: The enemy acceleration, capped at enemy_max_accel
    """
    if state.n_agents < 3:
        return np.zeros(2)
    adjacency = cdist(state.agent_pos, state.agent_pos) < config.obs_range
    n_components, labels = connected_components(adjacency, directed=False)
    best = None
    for label in range(n_components):
        members = np.flatnonzero(labels == label)
        if len(members) < 3:
            continue
        centroid = state.agent_pos[members].mean(axis=0)
        distance = float(np.hypot(*(centroid - state.enemy_pos)))
        if best is None or distance < best[0]:
            best = (distance, centroid)
    if best is None:
        return np.zeros(2)

    distance, centroid = best
    heading = (centroid - state.enemy_pos) / distance if distance > 0 else np.zeros(2)
    command = config.enemy_gain * (heading * config.enemy_speed - state.enemy_vel)
    for obstacle in state.obstacles:
        offset = state.enemy_pos - np.asarray(obstacle.center, dtype=float)
        gap = float(np.hypot(*offset))
        if gap >= 2 * obstacle.radius:
            continue
        away = offset / gap if gap > 0 else np.array([1.0, 0.0])
        clearance = max(gap - obstacle.radius, 1e-3)
        magnitude = config.enemy_repulsion_gain * (1 / clearance ** 2 - 1 / obstacle.radius ** 2)
        side = np.array([-away[1], away[0]])
        if side @ heading < 0:
            side = -side
        command = command + magnitude * away + config.enemy_tangential_gain * magnitude * side
    norm = float(np.hypot(*command))
    if norm > config.enemy_max_accel:
        command = command * (config.enemy_max_accel / norm)
    return command
