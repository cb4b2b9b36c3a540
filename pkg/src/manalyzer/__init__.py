"""Offline-replayable meta-analysis pipeline over scripted model providers."""

__version__ = "0.1.0"
