"""Keystroke inference from gaze traces, with a synthetic gaze-typing oracle."""

__version__ = "0.1.0"
