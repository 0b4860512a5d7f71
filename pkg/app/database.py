"""
Database Configuration Module

This module handles the run-ledger connection using SQLAlchemy. The ledger
records every command invocation (RunManifest) with its inputs and outputs.

Features:
- Engine and session factory per ledger URL
- Declarative base for the ledger models
- Session scope that commits on success and rolls back on error
"""

from contextlib import contextmanager
from functools import lru_cache

from sqlalchemy import create_engine
from sqlalchemy.orm import declarative_base, sessionmaker

Base = declarative_base()


@lru_cache(maxsize=None)
def get_engine(url: str):
    """Engine for a ledger URL; SQLite connections may be shared across threads."""
    import app.models  # noqa: F401  registers the ledger tables

    connect_args = {"check_same_thread": False} if url.startswith("sqlite") else {}
    engine = create_engine(url, connect_args=connect_args)
    Base.metadata.create_all(bind=engine)
    return engine


@contextmanager
def session_scope(url: str):
    """
    Ledger session.

    Yields:
        Session: SQLAlchemy session, committed on exit

    Note:
        Rolls back and re-raises on error; always closes the session
    """
    SessionLocal = sessionmaker(autocommit=False, autoflush=False, bind=get_engine(url))
    db = SessionLocal()
    try:
        yield db
        db.commit()
    except Exception:
        db.rollback()
        raise
    finally:
        db.close()
