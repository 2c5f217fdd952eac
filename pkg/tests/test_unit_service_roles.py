import itertools
import unittest

from src.services.roles import (
    ROLES,
    ConsensusDecision,
    DecisionSource,
    Intent,
    Role,
    fallback_resolve,
    role_authority,
)


def expected_goal(own_role, own_legal, neighbors):
    """Contingency rules written out directly: a table lookup per role."""
    if own_legal:
        return 2, DecisionSource.LLM_OUTPUT
    superiors = {Role.Commander: (), Role.Coordinator: (Role.Commander,),
                 Role.Executor: (Role.Commander, Role.Coordinator)}[own_role]
    for superior in superiors:
        candidates = [agent_id for agent_id, role, legal in neighbors if role == superior and legal]
        if candidates:
            return 10 + min(candidates), DecisionSource.FALLBACK_SUPERIOR
    return 1, DecisionSource.FALLBACK_SELF


class TestRoleAuthority(unittest.TestCase):

    def test_commander_outranks_everyone(self):
        self.assertEqual(role_authority(Role.Commander, Role.Coordinator), 1)
        self.assertEqual(role_authority(Role.Commander, Role.Executor), 1)
        self.assertEqual(role_authority(Role.Executor, Role.Coordinator), -1)
        self.assertEqual(role_authority(Role.Coordinator, Role.Coordinator), 0)

    def test_role_order_matches_value_outputs(self):
        self.assertEqual([int(r) for r in ROLES], [0, 1, 2])


class TestConsensusDecision(unittest.TestCase):

    def test_illegal_decision_has_no_goal(self):
        decision = ConsensusDecision.illegal("malformed")
        self.assertFalse(decision.is_legal())
        self.assertEqual(decision.source, DecisionSource.LLM_OUTPUT)

    def test_fallback_without_goal_is_rejected(self):
        with self.assertRaises(ValueError):
            ConsensusDecision(None, DecisionSource.FALLBACK_SELF)

    def test_inactive_goal_is_not_legal(self):
        self.assertFalse(ConsensusDecision(4).is_legal(active_targets={0, 1, 2}))
        self.assertTrue(ConsensusDecision(1).is_legal(active_targets={0, 1, 2}))


class TestFallbackLadder(unittest.TestCase):

    def test_truth_table_up_to_three_neighbors(self):
        neighbor_kinds = list(itertools.product(ROLES, (True, False)))
        cases = 0
        for own_role, own_legal, k in itertools.product(ROLES, (True, False), range(4)):
            for kinds in itertools.product(neighbor_kinds, repeat=k):
                neighbors = [(agent_id, role, legal) for agent_id, (role, legal) in zip((7, 3, 5), kinds)]
                decisions = [
                    (agent_id, role, ConsensusDecision(10 + agent_id) if legal else ConsensusDecision.illegal("x"))
                    for agent_id, role, legal in neighbors
                ]
                own_output = ConsensusDecision(2) if own_legal else ConsensusDecision.illegal("no-coordinates")
                result = fallback_resolve(own_role, Intent(1, own_role), own_output, decisions)
                goal, source = expected_goal(own_role, own_legal, neighbors)
                self.assertTrue(result.is_legal())
                self.assertEqual((result.goal, result.source), (goal, source), (own_role, own_legal, neighbors))
                cases += 1
        self.assertEqual(cases, 3 * 2 * sum(6 ** k for k in range(4)))

    def test_legal_output_is_returned_unchanged(self):
        output = ConsensusDecision(2)
        self.assertIs(fallback_resolve(Role.Executor, Intent(1, Role.Executor), output, []), output)

    def test_inactive_neighbor_goal_is_skipped(self):
        decisions = [(0, Role.Commander, ConsensusDecision(6)), (1, Role.Coordinator, ConsensusDecision(2))]
        result = fallback_resolve(Role.Executor, Intent(1, Role.Executor), ConsensusDecision.illegal("x"),
                                  decisions, active_targets={0, 1, 2})
        self.assertEqual(result.goal, 2)
        self.assertEqual(result.reason, "followed Coordinator 1")

    def test_commander_never_defers(self):
        decisions = [(0, Role.Commander, ConsensusDecision(2))]
        result = fallback_resolve(Role.Commander, Intent(1, Role.Commander), ConsensusDecision.illegal("x"),
                                  decisions)
        self.assertEqual(result.source, DecisionSource.FALLBACK_SELF)
        self.assertEqual(result.goal, 1)
