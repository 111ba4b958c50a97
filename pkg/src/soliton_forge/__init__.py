"""Periodic grim reaper configurations and desingularized translating surfaces."""

__version__ = "0.1.0"
