"""Planar navigation stack and simulator for a differential-thrust catamaran."""

__version__ = "0.1.0"
