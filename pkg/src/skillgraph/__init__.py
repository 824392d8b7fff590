"""Skill Graph planning and execution for multi-robot LEGO assembly."""

__version__ = "0.1.0"
