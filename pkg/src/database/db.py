from sqlalchemy import create_engine
from sqlalchemy.engine import Engine
from sqlalchemy.orm import sessionmaker

from src.conf.config import settings

SQLALCHEMY_DATABASE_URL = settings.sqlalchemy_database_url


def make_engine(url: str) -> Engine:
    connect_args = {"check_same_thread": False} if url.startswith("sqlite") else {}
    return create_engine(url, connect_args=connect_args)


engine = make_engine(SQLALCHEMY_DATABASE_URL)

SessionLocal = sessionmaker(autocommit=False, autoflush=False, bind=engine)


def session_factory(url: str) -> sessionmaker:
    """
    The session_factory function binds a session factory to the sample store at url and creates
    the tables when they are missing.

    :param url: str: SQLAlchemy database URL
    :return: A configured sessionmaker
    """
    from src.database.models import Base

    bound = make_engine(url)
    Base.metadata.create_all(bind=bound)
    return sessionmaker(autocommit=False, autoflush=False, bind=bound)


def get_db():
    db = SessionLocal()
    try:
        yield db
    finally:
        db.close()
