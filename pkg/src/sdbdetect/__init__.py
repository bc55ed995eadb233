"""Acoustic detection of snoring and related breathing events in 16 kHz audio."""

__version__ = "0.1.0"
