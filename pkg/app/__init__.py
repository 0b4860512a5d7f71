"""RecallChat: knowledge-recall conversation models."""

__version__ = "0.1.0"
