"""Reinforced multi-teacher distillation for image forgery detection and localisation."""

__version__ = "0.1.0"
