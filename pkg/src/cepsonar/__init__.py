"""Cepstral passive-sonar detection and ranging."""
__version__ = "0.1.0"
