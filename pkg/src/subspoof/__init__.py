"""Subband spectrogram CNN framework for replay spoofing detection."""

__version__ = "0.1.0"
