import unittest

import numpy as np
import pytest

from src.exceptions import ConfigurationError, NoTargetsError
from src.schemas import OracleConfig
from src.services.consensus import AgentTurn, LocalInfo, NeighborInfo
from src.services.geometry import GRID_POINTS, Vec2
from src.services.intent import (
    NO_NEIGHBORS_CLAUSE,
    RECOMMENDATION,
    IllegalReason,
    OracleConsensusPolicy,
    OracleIntentPolicy,
    OracleRoleSelector,
    PromptBundle,
    oracle_consensus_text,
    oracle_intent,
    oracle_role,
    parse_decision,
    read_prompt_context,
    render_cons_prompt,
    render_init_prompt,
    target_scores,
)
from src.services.roles import DecisionSource, Role
from src.services.world import Observation, TargetView

ACTIVE = {0: Vec2(8.0, 8.0), 1: Vec2(-8.0, 0.0), 2: Vec2(0.0, -8.0)}


def make_obs(agent_id=0, self_pos=(0.0, 0.0), enemy=(9.0, 9.0), targets=((0, (8, 8), 1.0), (1, (-8, 0), 1.0),
                                                                           (2, (0, -8), 0.5))):
    return Observation(
        agent_id=agent_id,
        self_pos=Vec2(*map(float, self_pos)),
        self_vel=Vec2(0.25, -0.5),
        enemy_pos=Vec2(*map(float, enemy)),
        enemy_vel=Vec2(0.0, 0.125),
        targets=tuple(TargetView(i, Vec2(*map(float, pos)), u) for i, pos, u in targets),
    )


def turn(agent_id=0, stage=2):
    return AgentTurn(agent_id, 0, stage, np.random.default_rng(0))


class TestParseDecision(unittest.TestCase):

    def test_recommendation_sentence_is_accepted(self):
        parsed = parse_decision("After weighing the threat, I recommend going to target [-8,0]", ACTIVE)
        self.assertTrue(parsed.legal)
        self.assertEqual(parsed.goal, 1)
        self.assertEqual(parsed.to_decision().source, DecisionSource.LLM_OUTPUT)

    def test_last_pair_wins_and_parentheses_are_accepted(self):
        parsed = parse_decision("Not [8,8] but rather (0.04, -7.96)", ACTIVE)
        self.assertEqual(parsed.goal, 2)
        self.assertEqual(parsed.pos, Vec2(0.0, -8.0))

    def test_unstructured_answers_are_illegal(self):
        self.assertEqual(parse_decision("region 8", ACTIVE).reason, IllegalReason.NO_COORDINATES)
        self.assertEqual(parse_decision("target point #8, #8", ACTIVE).reason, IllegalReason.NO_COORDINATES)
        self.assertEqual(parse_decision("", ACTIVE).reason, IllegalReason.NO_COORDINATES)

    def test_bracketed_but_unreadable_pair_is_malformed(self):
        self.assertEqual(parse_decision("target [8; 8]", ACTIVE).reason, IllegalReason.MALFORMED)

    def test_inactive_cell_is_not_a_target(self):
        parsed = parse_decision("I recommend going to target [8,-8]", ACTIVE)
        self.assertFalse(parsed.legal)
        self.assertEqual(parsed.reason, IllegalReason.NOT_A_TARGET)
        self.assertEqual(parsed.to_decision().reason, "not-a-target")

    def test_noisy_coordinates_never_yield_off_grid_goals(self):
        rng = np.random.default_rng(2024)
        grid = dict(enumerate(GRID_POINTS))
        accepted = 0
        for _ in range(10000):
            base = GRID_POINTS[int(rng.integers(9))]
            x, y = (float(f"{v:.2f}") for v in np.asarray(base) + rng.normal(0.0, 0.3, size=2))
            parsed = parse_decision(f"I recommend going to target [{x},{y}]", grid)
            if parsed.legal:
                accepted += 1
                self.assertIn(parsed.pos, GRID_POINTS)
                self.assertLess(max(abs(x - parsed.pos.x), abs(y - parsed.pos.y)), 0.051)
        self.assertGreater(accepted, 0)


class TestPrompts(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.bundle = PromptBundle.load()

    def test_bundle_ships_roles_and_examples(self):
        self.assertEqual(set(self.bundle.role_descriptions), {"Commander", "Coordinator", "Executor"})
        self.assertGreaterEqual(len(self.bundle.few_shot), 10)

    def test_unknown_placeholder_is_rejected(self):
        with self.assertRaises(ConfigurationError):
            PromptBundle(task_instruction="", cot_guidance="", init_template="$missing_field",
                         cons_template=self.bundle.cons_template, role_descriptions=self.bundle.role_descriptions)

    def test_missing_prompt_dir_is_a_configuration_error(self):
        with self.assertRaises(ConfigurationError):
            PromptBundle.load("/nonexistent/prompts")

    def test_init_prompt_lists_state_and_targets(self):
        text = render_init_prompt(self.bundle, make_obs(agent_id=3), formation_max=6)
        self.assertIn("You are UAV 3.", text)
        self.assertIn("Your position: [0.000, 0.000], your velocity: [0.250, -0.500]", text)
        self.assertIn("Target 0: position [8.000, 8.000], urgency 1.000", text)
        self.assertIn("Target 2: position [0.000, -8.000], urgency 0.500", text)
        self.assertIn("At most 6 UAVs", text)

    def test_cons_prompt_without_neighbors(self):
        text = render_cons_prompt(self.bundle, LocalInfo(make_obs()), Role.Coordinator, 1)
        self.assertIn(NO_NEIGHBORS_CLAUSE, text)
        self.assertIn("acting as Coordinator", text)
        self.assertIn("Your initial intent: target [-8.000, 0.000]", text)
        self.assertIn("Cluster or disperse based on the threats from enemy", text)

    def test_cons_prompt_round_trips_through_the_reader(self):
        neighbors = (
            NeighborInfo(1, Vec2(1.5, -0.25), Vec2(0.0, 0.5), 2, Role.Commander),
            NeighborInfo(4, Vec2(-2.0, 1.0), Vec2(0.125, 0.0), 0, Role.Executor),
        )
        obs = make_obs(agent_id=2, self_pos=(0.5, 0.75))
        text = render_cons_prompt(self.bundle, LocalInfo(obs, neighbors), Role.Executor, 1, formation_max=5)
        self.assertIn("UAV 1 (Commander) intends target [0.000, -8.000]", text)
        context = read_prompt_context(text)
        self.assertEqual(context.obs, obs)
        self.assertEqual(context.role, Role.Executor)
        self.assertEqual(context.own_goal, 1)
        self.assertEqual(context.neighbors, neighbors)
        self.assertEqual(context.formation_max, 5)

    def test_reader_handles_init_prompt_and_foreign_text(self):
        context = read_prompt_context(render_init_prompt(self.bundle, make_obs(agent_id=6)))
        self.assertEqual(context.obs.agent_id, 6)
        self.assertIsNone(context.role)
        self.assertEqual(context.neighbors, ())
        self.assertIsNone(read_prompt_context("Hello there"))


class TestOracle(unittest.TestCase):

    def setUp(self):
        self.config = OracleConfig()
        self.rng = np.random.default_rng(0)

    def test_scores_trade_urgency_distance_and_threat(self):
        scores = target_scores(make_obs(), self.config)
        self.assertAlmostEqual(scores[1], 1.0 / 9.0)
        self.assertAlmostEqual(scores[2], 0.5 / 9.0)
        self.assertLess(scores[0], 0.0)

    def test_commander_takes_best_score(self):
        self.assertEqual(oracle_intent(make_obs(), Role.Commander, self.rng), 1)

    def test_coordinator_joins_shared_intent(self):
        neighbors = (NeighborInfo(1, Vec2(0, 0), Vec2(0, 0), 2, Role.Executor),
                     NeighborInfo(2, Vec2(0, 0), Vec2(0, 0), 2, Role.Executor))
        self.assertEqual(oracle_intent(make_obs(), Role.Coordinator, self.rng, neighbors), 2)

    def test_executor_follows_commander_before_coordinator(self):
        neighbors = (NeighborInfo(5, Vec2(0, 0), Vec2(0, 0), 2, Role.Coordinator),
                     NeighborInfo(7, Vec2(0, 0), Vec2(0, 0), 0, Role.Commander))
        self.assertEqual(oracle_intent(make_obs(), Role.Executor, self.rng, neighbors), 0)
        self.assertEqual(oracle_intent(make_obs(), Role.Executor, self.rng, neighbors[:1]), 2)
        self.assertEqual(oracle_intent(make_obs(), Role.Executor, self.rng), 1)

    def test_no_targets_raises(self):
        with self.assertRaises(NoTargetsError):
            oracle_intent(make_obs(targets=()), Role.Commander, self.rng)

    def test_role_policy(self):
        self.assertEqual(oracle_role(make_obs(enemy=(1.0, 1.0)), self.config), Role.Executor)
        self.assertEqual(oracle_role(make_obs(), self.config), Role.Coordinator)
        dominant = make_obs(targets=((0, (0, 0), 1.0), (1, (-8, 0), 1.0)))
        self.assertEqual(oracle_role(dominant, self.config), Role.Commander)

    def test_role_selector_respects_allowed_roles(self):
        dominant = make_obs(targets=((0, (0, 0), 1.0), (1, (-8, 0), 1.0)))
        self.assertEqual(OracleRoleSelector(self.config, (Role.Executor,))(dominant, turn()), Role.Executor)
        self.assertEqual(OracleRoleSelector(self.config, (Role.Commander, Role.Executor))(make_obs(), turn()),
                         Role.Executor)
        self.assertEqual(OracleRoleSelector(self.config)(dominant, turn()), Role.Commander)

    def test_rationale_ends_with_recommendation_and_fits_the_length_window(self):
        text = oracle_consensus_text(make_obs(), Role.Commander, 1)
        self.assertTrue(text.endswith(f"{RECOMMENDATION} [-8,0]"))
        self.assertEqual(parse_decision(text, ACTIVE).goal, 1)
        assert 200 <= len(text.split()) <= 400

    def test_policies_produce_legal_outputs(self):
        obs = make_obs()
        self.assertEqual(OracleIntentPolicy(self.config)(obs, turn(stage=0)), 1)
        text = OracleConsensusPolicy(self.config)(LocalInfo(obs), Role.Commander, 1, turn())
        self.assertEqual(parse_decision(text, ACTIVE).goal, 1)


@pytest.mark.parametrize("role", list(Role))
def test_rationale_mentions_role(role):
    text = oracle_consensus_text(make_obs(), role, 2)
    assert f"acting as {role.name}" in text
    assert text.endswith("[0,-8]")
