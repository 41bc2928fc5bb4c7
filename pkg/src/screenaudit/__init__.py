"""Correspondence-experiment bias audits for LLM candidate screeners."""

__version__ = "0.1.0"
