"""Hypothesis discovery with LLM agents and formal statistical validation."""

__version__ = "0.1.0"
