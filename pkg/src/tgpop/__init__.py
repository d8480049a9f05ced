"""Popularity dynamics, PopTrack and negative sampling for temporal link prediction."""

__version__ = "0.1.0"
