from sqlalchemy import BigInteger, Column, Float, Integer, String, Text, func
from sqlalchemy.orm import declarative_base
from sqlalchemy.sql.sqltypes import DateTime

Base = declarative_base()


class Sample(Base):
    __tablename__ = "samples"
    id = Column(Integer, primary_key=True)
    run_id = Column(String(64), nullable=False, index=True)
    episode_seed = Column(BigInteger, nullable=False)
    frame_index = Column(Integer, nullable=False)
    agent_id = Column(Integer, nullable=False)
    role = Column(String(16), nullable=False)
    goal_x = Column(Float, nullable=True)
    goal_y = Column(Float, nullable=True)
    reward = Column(Float, nullable=False)
    reasoning = Column(Text, nullable=False)
    instruction = Column(Text, nullable=False, default="")
    observation = Column(Text, nullable=False)
    created_at = Column('created_at', DateTime, default=func.now())
