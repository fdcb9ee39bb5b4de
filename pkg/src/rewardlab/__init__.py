"""Reward-design laboratory for a muscle-actuated planar arm choice-reaction task."""

__version__ = "0.1.0"
