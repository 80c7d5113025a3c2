"""coverforge: music-conditioned vector cover generation."""

__version__ = "0.1.0"
