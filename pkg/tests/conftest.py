import pytest
from fastapi.testclient import TestClient
from sqlalchemy import create_engine
from sqlalchemy.orm import sessionmaker

from main import app
from src.database.models import Base
from src.database.db import get_db
from src.schemas import RunConfig
from src.services.intent import OracleConsensusPolicy, OracleIntentPolicy, OracleRoleSelector, PromptBundle
from src.services.simulation import Simulator


SQLALCHEMY_DATABASE_URL = "sqlite:///./test.db"

engine = create_engine(
    SQLALCHEMY_DATABASE_URL, connect_args={"check_same_thread": False}
)
TestingSessionLocal = sessionmaker(autocommit=False, autoflush=False, bind=engine)


@pytest.fixture(scope="module")
def session():
    # Create the database

    Base.metadata.drop_all(bind=engine)
    Base.metadata.create_all(bind=engine)

    db = TestingSessionLocal()
    try:
        yield db
    finally:
        db.close()


@pytest.fixture(scope="module")
def client(session):
    # Dependency override

    def override_get_db():
        try:
            yield session
        finally:
            session.close()

    app.dependency_overrides[get_db] = override_get_db

    yield TestClient(app)


@pytest.fixture(scope="session")
def bundle():
    return PromptBundle.load()


@pytest.fixture()
def short_config():
    """Two decision frames of ten steps each, so whole episodes run in well under a second."""
    return RunConfig.parse_obj({
        "world": {"episode_length": 20, "decision_period": 10},
        "train": {"batch_size": 4, "n_pre": 1, "n_epoch": 2, "buffer_capacity": 64, "log_every": 1},
        "filter": {"min_samples": 16},
    })


@pytest.fixture()
def oracle_simulator(short_config):
    return Simulator(short_config, OracleIntentPolicy(short_config.oracle),
                     OracleConsensusPolicy(short_config.oracle, short_config.world.formation_max))


@pytest.fixture()
def oracle_roles(short_config):
    return OracleRoleSelector(short_config.oracle)
