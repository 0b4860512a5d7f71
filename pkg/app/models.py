"""
Database Models Module

This module defines the SQLAlchemy ORM models of the run ledger.

Models:
- Run: one command invocation (its RunManifest)
- RunInput: an input file and its SHA-256 digest
- RunArtifact: a file the run produced
"""

from sqlalchemy import Column, DateTime, Float, ForeignKey, Integer, String, Text
from sqlalchemy.orm import relationship

from app.database import Base


class Run(Base):
    """
    One command invocation.

    Attributes:
        id (int): Primary key
        run_id (str): SHA-256 of command, config, input digests and seed
        command (str): Subcommand name
        seed (int): Root seed
        config_json (str): Canonical JSON of the config snapshot
        versions_json (str): Canonical JSON of the software versions
        started_at (datetime): Start time
        finished_at (datetime): End time
        elapsed_seconds (float): Wall-clock duration

    Relationships:
        inputs: One-to-many with RunInput
        artifacts: One-to-many with RunArtifact
    """
    __tablename__ = "runs"

    id = Column(Integer, primary_key=True, index=True)
    run_id = Column(String(64), index=True)
    command = Column(String)
    seed = Column(Integer)
    config_json = Column(Text)
    versions_json = Column(Text)
    started_at = Column(DateTime)
    finished_at = Column(DateTime)
    elapsed_seconds = Column(Float)

    inputs = relationship("RunInput", back_populates="run", cascade="all, delete-orphan")
    artifacts = relationship("RunArtifact", back_populates="run", cascade="all, delete-orphan")


class RunInput(Base):
    """Input file of a run."""
    __tablename__ = "run_inputs"

    id = Column(Integer, primary_key=True, index=True)
    name = Column(String)
    path = Column(String)
    sha256 = Column(String(64))
    run_pk = Column(Integer, ForeignKey("runs.id"))

    run = relationship("Run", back_populates="inputs")


class RunArtifact(Base):
    """File produced by a run."""
    __tablename__ = "run_artifacts"

    id = Column(Integer, primary_key=True, index=True)
    path = Column(String)
    run_pk = Column(Integer, ForeignKey("runs.id"))

    run = relationship("Run", back_populates="artifacts")
