"""Binaural sound-source localization with a dual-encoder spectrogram transformer."""

__version__ = "0.1.0"
