"""HDR multi-frequency phase-shifting profilometry with phase stereo matching."""

__version__ = "0.1.0"
