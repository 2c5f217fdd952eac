import json
from typing import List, Optional, Sequence

from sqlalchemy.orm import Session

from src.database.models import Sample
from src.services.datagen import SampleRecord, observation_from_dict, observation_to_dict
from src.services.geometry import Vec2
from src.services.roles import Role


def to_model(record: SampleRecord, run_id: str) -> Sample:
    return Sample(
        run_id=run_id,
        episode_seed=record.episode_seed,
        frame_index=record.frame_index,
        agent_id=record.agent_id,
        role=record.role.name,
        goal_x=record.goal.x if record.goal is not None else None,
        goal_y=record.goal.y if record.goal is not None else None,
        reward=record.reward,
        reasoning=record.reasoning,
        instruction=record.instruction,
        observation=json.dumps(observation_to_dict(record.obs), sort_keys=True),
    )


def to_record(sample: Sample) -> SampleRecord:
    goal = Vec2(sample.goal_x, sample.goal_y) if sample.goal_x is not None else None
    return SampleRecord(
        obs=observation_from_dict(json.loads(sample.observation)),
        role=Role[sample.role],
        goal=goal,
        reasoning=sample.reasoning,
        reward=sample.reward,
        instruction=sample.instruction,
        episode_seed=sample.episode_seed,
        frame_index=sample.frame_index,
    )


def create_samples(records: Sequence[SampleRecord], run_id: str, db: Session) -> int:
    """
    The create_samples function stores a batch of raw samples under one run id.

    :param records: Sequence[SampleRecord]: Samples in collection order
    :param run_id: str: Identifier of the collecting run
    :param db: Session: Pass the database session to the function
    :return: The number of stored rows
    """
    db.add_all([to_model(record, run_id) for record in records])
    db.commit()
    return len(records)


def get_samples(run_id: str, db: Session, skip: int = 0, limit: Optional[int] = None) -> List[SampleRecord]:
    """
    The get_samples function returns the samples of a run in insertion order.

    :param run_id: str: Identifier of the collecting run
    :param db: Session: Pass the database session to the function
    :param skip: int: Skip a number of rows
    :param limit: int: Limit the number of rows returned, all when None
    :return: A list of SampleRecords
    """
    query = db.query(Sample).filter(Sample.run_id == run_id).order_by(Sample.id).offset(skip)
    if limit is not None:
        query = query.limit(limit)
    return [to_record(sample) for sample in query.all()]


def count_samples(run_id: str, db: Session) -> int:
    return db.query(Sample).filter(Sample.run_id == run_id).count()


def delete_samples(run_id: str, db: Session) -> int:
    deleted = db.query(Sample).filter(Sample.run_id == run_id).delete()
    db.commit()
    return deleted
