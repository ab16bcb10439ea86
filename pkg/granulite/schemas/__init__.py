"""Pydantic models for configuration, metrics and run summaries."""
