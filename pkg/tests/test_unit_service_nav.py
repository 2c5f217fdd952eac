import itertools
import math
import unittest

import numpy as np

from src.schemas import NavConfig, WorldConfig
from src.services.geometry import ObstacleDisc, Vec2
from src.services.nav import (
    FormationTemplate,
    accel_command,
    assign_slots,
    formation_slots,
    nav_commands,
    plan_detachments,
    slot_positions,
)
from src.services.world import GlobalState, step_physics


class TestFormationTemplate(unittest.TestCase):

    def test_single_agent_holds_the_center(self):
        template = FormationTemplate.regular(1, 0.75)
        self.assertEqual(template.offsets, (Vec2(0.0, 0.0),))

    def test_regular_polygon_lies_on_circumradius(self):
        template = FormationTemplate.regular(5, 0.75)
        self.assertEqual(template.size, 5)
        for dx, dy in template.offsets:
            self.assertAlmostEqual(math.hypot(dx, dy), 0.75)
        centroid = np.mean(template.offsets, axis=0)
        np.testing.assert_allclose(centroid, [0.0, 0.0], atol=1e-12)

    def test_empty_template_is_rejected(self):
        with self.assertRaises(ValueError):
            FormationTemplate.regular(0, 0.75)

    def test_slots_are_offsets_around_center(self):
        template = FormationTemplate.regular(4, 1.0)
        slots = formation_slots(template, (8.0, -8.0))
        self.assertAlmostEqual(slots[0].x, 9.0)
        self.assertAlmostEqual(slots[0].y, -8.0)


class TestAssignSlots(unittest.TestCase):

    def test_assignment_is_a_bijection_with_minimal_cost(self):
        rng = np.random.default_rng(3)
        positions = rng.uniform(-5, 5, size=(5, 2))
        slots = formation_slots(FormationTemplate.regular(5, 1.0), (0.0, 0.0))
        ids = [4, 1, 3, 0, 2]
        assignment = assign_slots(ids, positions, slots)
        self.assertEqual(sorted(assignment), sorted(ids))
        self.assertEqual(sorted(assignment.values()), list(range(5)))
        slot_array = np.asarray(slots)
        position_of = dict(zip(ids, positions))
        cost = sum(np.sum((position_of[a] - slot_array[s]) ** 2) for a, s in assignment.items())
        best = min(
            sum(np.sum((position_of[a] - slot_array[s]) ** 2) for a, s in zip(ids, perm))
            for perm in itertools.permutations(range(5))
        )
        self.assertAlmostEqual(cost, best)

    def test_mismatched_lengths_are_rejected(self):
        with self.assertRaises(ValueError):
            assign_slots([0, 1], [[0, 0], [1, 1]], [[0, 0]])


class TestAccelCommand(unittest.TestCase):

    def setUp(self):
        self.config = NavConfig()

    def test_free_space_command_is_damped_spring(self):
        command = accel_command((0, 0), (0.2, 0), (1, 0), [], (9, 9), self.config, 3.0)
        expected = self.config.k_attract * np.array([1.0, 0.0]) - self.config.k_damp * np.array([0.2, 0.0])
        np.testing.assert_allclose(command, expected)

    def test_command_is_capped(self):
        command = accel_command((0, 0), (0, 0), (50, 0), [], (9, 9), self.config, 3.0)
        self.assertAlmostEqual(float(np.hypot(*command)), self.config.max_accel)

    def test_obstacle_pushes_agent_away(self):
        obstacle = ObstacleDisc(Vec2(0.0, 0.0), 1.0)
        config = NavConfig(k_attract=0.0, k_damp=0.0, tangential_gain=0.0, max_accel=100.0)
        command = accel_command((1.2, 0), (0, 0), (1.2, 0), [obstacle], (9, 9), config, 3.0)
        self.assertGreater(command[0], 0)
        self.assertAlmostEqual(command[1], 0.0)

    def test_obstacle_beyond_twice_radius_is_ignored(self):
        obstacle = ObstacleDisc(Vec2(0.0, 0.0), 1.0)
        with_obstacle = accel_command((2.5, 0), (0, 0), (3, 1), [obstacle], (9, 9), self.config, 3.0)
        without = accel_command((2.5, 0), (0, 0), (3, 1), [], (9, 9), self.config, 3.0)
        np.testing.assert_allclose(with_obstacle, without)

    def test_tangential_term_turns_toward_slot(self):
        obstacle = ObstacleDisc(Vec2(0.0, 0.0), 1.0)
        config = NavConfig(k_attract=0.0, k_damp=0.0, max_accel=100.0)
        command = accel_command((-1.5, 0.0), (0, 0), (3.0, 0.5), [obstacle], (9, 9), config, 3.0)
        self.assertGreater(command[1], 0)

    def test_enemy_inside_radius_repels(self):
        config = NavConfig(k_attract=0.0, k_damp=0.0, max_accel=100.0)
        command = accel_command((1.0, 0.0), (0, 0), (1.0, 0.0), [], (0.0, 0.0), config, 3.0)
        self.assertGreater(command[0], 0)
        far = accel_command((4.0, 0.0), (0, 0), (4.0, 0.0), [], (0.0, 0.0), config, 3.0)
        np.testing.assert_allclose(far, [0.0, 0.0])


class TestDetachments(unittest.TestCase):

    def test_agents_sharing_a_goal_share_a_detachment(self):
        positions = np.array([[0, 0], [1, 0], [2, 0], [-5, -5]], dtype=float)
        targets = {0: Vec2(8.0, 8.0), 1: Vec2(-8.0, -8.0)}
        plans = plan_detachments(positions, [0, 0, 0, 1], targets, 8, 0.75)
        self.assertEqual([plan.target_id for plan in plans], [0, 1])
        self.assertEqual(plans[0].members, (0, 1, 2))
        self.assertEqual(plans[1].template.size, 1)

    def test_oversized_group_is_split_by_agent_id(self):
        positions = np.zeros((5, 2))
        positions[:, 0] = np.arange(5)
        plans = plan_detachments(positions, [2] * 5, {2: Vec2(0.0, 8.0)}, 3, 0.75)
        self.assertEqual([plan.members for plan in plans], [(0, 1, 2), (3, 4)])
        self.assertAlmostEqual(math.hypot(*plans[1].template.offsets[0]), 1.5)

    def test_slot_positions_follow_moved_target(self):
        positions = np.array([[0, 0], [1, 0], [2, 0]], dtype=float)
        plans = plan_detachments(positions, [0, 0, 0], {0: Vec2(0.0, 0.0)}, 8, 0.75)
        before = slot_positions(plans, {0: Vec2(0.0, 0.0)}, 3)
        after = slot_positions(plans, {0: Vec2(8.0, 0.0)}, 3)
        np.testing.assert_allclose(after - before, np.tile([8.0, 0.0], (3, 1)))

    def test_nav_commands_stack_per_agent(self):
        commands = nav_commands([[0, 0], [1, 1]], [[0, 0], [0, 0]], [[1, 0], [1, 2]], [], (9, 9), NavConfig(), 3.0)
        self.assertEqual(commands.shape, (2, 2))
        self.assertEqual(nav_commands(np.zeros((0, 2)), np.zeros((0, 2)), np.zeros((0, 2)), [], (9, 9),
                                      NavConfig(), 3.0).shape, (0, 2))


class TestObstacleRollout(unittest.TestCase):

    def test_agent_rounds_an_obstacle_without_entering_it(self):
        world = WorldConfig()
        obstacle = ObstacleDisc(Vec2(0.0, 0.0), 1.0)
        state = GlobalState.build(agent_pos=[[-3.0, 0.5]], obstacles=[obstacle])
        slot = np.array([3.0, 0.0])
        start = float(np.hypot(*(state.agent_pos[0] - slot)))
        for _ in range(100):
            command = accel_command(state.agent_pos[0], state.agent_vel[0], slot, state.obstacles,
                                    state.enemy_pos, NavConfig(), 2 * world.safe_distance)
            state = step_physics(state, command.reshape(1, 2), np.zeros(2), world)
            self.assertGreaterEqual(float(np.hypot(*state.agent_pos[0])), obstacle.radius)
        self.assertLess(float(np.hypot(*(state.agent_pos[0] - slot))), start)
