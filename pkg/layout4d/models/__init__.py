"""Data models: pydantic schemas and frozen array containers."""
