"""
Deterministic mid-layer navigation: formation templates, slot allocation and a
potential-field acceleration controller that seeks slots while avoiding obstacles
and the enemy.
"""
import logging
import math
from dataclasses import dataclass
from typing import Dict, Mapping, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from src.schemas import NavConfig
from src.services.geometry import ObstacleDisc, Vec2, as_points

logger = logging.getLogger(__name__)

_MIN_CLEARANCE = 1e-3


@dataclass(frozen=True)
class FormationTemplate:
    size: int
    offsets: Tuple[Vec2, ...]

    @classmethod
    def regular(cls, size: int, radius: float) -> "FormationTemplate":
        """
        The regular function builds the c-gon template of circumradius radius.
        A single agent holds the center; two agents sit on opposite sides of it.

        :param size: int: Number of slots c
        :param radius: float: Circumradius r_f in meters
        :return: A FormationTemplate whose offsets are centered on the origin
        """
        if size < 1:
            raise ValueError(f"formation size must be at least 1, got {size}")
        if size == 1:
            return cls(size=1, offsets=(Vec2(0.0, 0.0),))
        offsets = tuple(
            Vec2(radius * math.cos(2 * math.pi * k / size), radius * math.sin(2 * math.pi * k / size))
            for k in range(size)
        )
        return cls(size=size, offsets=offsets)


def formation_slots(template: FormationTemplate, center: Sequence[float]) -> list[Vec2]:
    cx, cy = float(center[0]), float(center[1])
    return [Vec2(cx + dx, cy + dy) for dx, dy in template.offsets]


def assign_slots(agent_ids: Sequence[int], positions, slots) -> Dict[int, int]:
    """
    The assign_slots function pairs agents with slots so that the total squared travel
    distance is minimal (Hungarian method). Agents are considered in ascending id order,
    which makes the solver's choice among equal-cost assignments reproducible.

    :param agent_ids: Sequence[int]: Members of the detachment
    :param positions: Agent positions aligned with agent_ids, shape (n, 2)
    :param slots: Slot positions, shape (n, 2)
    :return: A dict mapping agent id to slot index
    """
    points, targets = as_points(positions), as_points(slots)
    if not (len(agent_ids) == len(points) == len(targets)):
        raise ValueError(
            f"slot assignment needs as many slots as agents: {len(agent_ids)} agents, "
            f"{len(points)} positions, {len(targets)} slots"
        )
    order = np.argsort(np.asarray(agent_ids), kind="stable")
    cost = cdist(points[order], targets, metric="sqeuclidean")
    rows, cols = linear_sum_assignment(cost)
    return {int(agent_ids[order[row]]): int(col) for row, col in zip(rows, cols)}


def accel_command(position, velocity, slot, obstacles: Sequence[ObstacleDisc], enemy_position,
                  config: NavConfig, enemy_radius: float) -> np.ndarray:
    """
    The accel_command function returns the acceleration that drives one agent to its slot:
    a damped spring toward the slot, inverse-square repulsion from obstacles closer than
    twice their radius (with a tangential part that slides the agent around the disc) and
    from the enemy closer than enemy_radius. The result is capped at config.max_accel.

    :param position: Agent position
    :param velocity: Agent velocity
    :param slot: Slot the agent is heading to
    :param obstacles: Sequence[ObstacleDisc]: Static obstacles
    :param enemy_position: Enemy position
    :param config: NavConfig: Controller gains
    :param enemy_radius: float: Influence radius of the enemy repulsion
    :return: The acceleration command as a length-2 array
    """
    p = np.asarray(position, dtype=float)
    v = np.asarray(velocity, dtype=float)
    goal = np.asarray(slot, dtype=float)
    heading = goal - p
    command = config.k_attract * heading - config.k_damp * v

    for obstacle in obstacles:
        offset = p - np.asarray(obstacle.center, dtype=float)
        distance = float(np.hypot(*offset))
        if distance >= 2 * obstacle.radius:
            continue
        away = offset / distance if distance > 0 else np.array([1.0, 0.0])
        clearance = max(distance - obstacle.radius, _MIN_CLEARANCE)
        magnitude = config.repulsion_gain * (1 / clearance ** 2 - 1 / obstacle.radius ** 2)
        side = np.array([-away[1], away[0]])
        if side @ heading < 0:
            side = -side
        command = command + magnitude * away + config.tangential_gain * magnitude * side

    offset = p - np.asarray(enemy_position, dtype=float)
    distance = float(np.hypot(*offset))
    if distance < enemy_radius:
        away = offset / distance if distance > 0 else np.array([1.0, 0.0])
        gap = max(distance, _MIN_CLEARANCE)
        command = command + config.repulsion_gain * (1 / gap ** 2 - 1 / enemy_radius ** 2) * away

    norm = float(np.hypot(*command))
    if norm > config.max_accel:
        command = command * (config.max_accel / norm)
    return command


@dataclass(frozen=True)
class SlotPlan:
    target_id: int
    members: Tuple[int, ...]
    template: FormationTemplate
    assignment: Mapping[int, int]


def plan_detachments(positions, goals: Sequence[int], target_positions: Mapping[int, Sequence[float]],
                     formation_max: int, formation_radius: float) -> Tuple[SlotPlan, ...]:
    """
    The plan_detachments function groups agents by consensus goal, splits groups larger
    than formation_max by agent id into chunks, and allocates formation slots for each
    chunk. Overflow chunks ring the target on a wider template.

    :param positions: Agent positions, shape (N, 2)
    :param goals: Sequence[int]: Goal target id per agent
    :param target_positions: Mapping[int, Sequence[float]]: Current position per target id
    :param formation_max: int: Largest permitted formation
    :param formation_radius: float: Template circumradius r_f
    :return: One SlotPlan per chunk, ordered by target id then chunk
    """
    points = as_points(positions)
    plans = []
    for target_id in sorted(set(goals)):
        group = [agent for agent, goal in enumerate(goals) if goal == target_id]
        for chunk_index in range(0, len(group), formation_max):
            members = tuple(group[chunk_index:chunk_index + formation_max])
            ring = 1 + chunk_index // formation_max
            template = FormationTemplate.regular(len(members), formation_radius * ring)
            slots = formation_slots(template, target_positions[target_id])
            assignment = assign_slots(members, points[list(members)], slots)
            plans.append(SlotPlan(target_id=target_id, members=members, template=template, assignment=assignment))
    logger.debug("planned %d detachments for %d agents", len(plans), len(goals))
    return tuple(plans)


def slot_positions(plans: Sequence[SlotPlan], target_positions: Mapping[int, Sequence[float]],
                   n_agents: int) -> np.ndarray:
    """Current slot of every agent; slots follow their target when it is re-sampled."""
    result = np.zeros((n_agents, 2))
    for plan in plans:
        slots = formation_slots(plan.template, target_positions[plan.target_id])
        for agent, slot_index in plan.assignment.items():
            result[agent] = slots[slot_index]
    return result


def nav_commands(positions, velocities, slots, obstacles: Sequence[ObstacleDisc], enemy_position,
                 config: NavConfig, enemy_radius: float) -> np.ndarray:
    points, speeds, targets = as_points(positions), as_points(velocities), as_points(slots)
    return np.stack([
        accel_command(points[i], speeds[i], targets[i], obstacles, enemy_position, config, enemy_radius)
        for i in range(len(points))
    ]) if len(points) else np.zeros((0, 2))
