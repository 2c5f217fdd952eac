import unittest
from unittest.mock import MagicMock

from sqlalchemy.orm import Session

from src.database.models import Sample
from src.repository.samples import (
    count_samples,
    create_samples,
    delete_samples,
    get_samples,
    to_model,
    to_record,
)
from src.services.datagen import SampleRecord
from src.services.geometry import Vec2
from src.services.roles import Role
from src.services.world import Observation, TargetView

OBS = Observation(2, Vec2(0.5, -1.25), Vec2(0.0, 0.5), Vec2(9.0, 9.0), Vec2(-0.5, 0.0),
                  (TargetView(1, Vec2(0.0, 8.0), 0.75),))

records = [
    SampleRecord(obs=OBS, role=Role.Coordinator, goal=Vec2(0.0, 8.0), reasoning="I recommend going to target [0,8]",
                 reward=-12.5, instruction="You are UAV 2.", episode_seed=2 ** 40, frame_index=3),
    SampleRecord(obs=OBS, role=Role.Executor, goal=None, reasoning="region 8", reward=4.0,
                 instruction="You are UAV 2.", episode_seed=5, frame_index=0),
]


class TestSamples(unittest.TestCase):

    def setUp(self):
        self.session = MagicMock(spec=Session)
        self.models = [to_model(record, "run-a") for record in records]

    def test_to_model(self):
        model = self.models[0]
        self.assertEqual(model.run_id, "run-a")
        self.assertEqual(model.role, "Coordinator")
        self.assertEqual((model.goal_x, model.goal_y), (0.0, 8.0))
        self.assertEqual(model.agent_id, 2)
        self.assertIsNone(self.models[1].goal_x)

    def test_to_record_round_trip(self):
        self.assertEqual([to_record(model) for model in self.models], records)

    def test_create_samples(self):
        result = create_samples(records, "run-a", self.session)
        self.assertEqual(result, 2)
        stored = self.session.add_all.call_args.args[0]
        self.assertEqual([s.reasoning for s in stored], [r.reasoning for r in records])
        self.session.commit.assert_called_once()

    def test_get_samples(self):
        self.session.query().filter().order_by().offset().all.return_value = self.models
        result = get_samples("run-a", self.session)
        self.assertEqual(result, records)

    def test_get_samples_with_limit(self):
        self.session.query().filter().order_by().offset().limit().all.return_value = self.models[:1]
        result = get_samples("run-a", self.session, skip=0, limit=1)
        self.assertEqual(result, records[:1])

    def test_count_samples(self):
        self.session.query().filter().count.return_value = 7
        self.assertEqual(count_samples("run-a", self.session), 7)

    def test_delete_samples(self):
        self.session.query().filter().delete.return_value = 2
        self.assertEqual(delete_samples("run-a", self.session), 2)
        self.session.commit.assert_called_once()


def test_samples_persist_in_sqlite(session):
    delete_samples("run-db", session)
    delete_samples("other", session)
    assert create_samples(records, "run-db", session) == 2
    create_samples(records[:1], "other", session)
    assert count_samples("run-db", session) == 2
    assert get_samples("run-db", session) == records
    assert get_samples("run-db", session, skip=1) == records[1:]
    assert get_samples("run-db", session, limit=1) == records[:1]
    stored = session.query(Sample).filter(Sample.run_id == "run-db").first()
    assert stored.created_at is not None
    assert delete_samples("run-db", session) == 2
    assert count_samples("run-db", session) == 0
    assert count_samples("other", session) == 1
