"""Pydantic schemas for run configuration."""
