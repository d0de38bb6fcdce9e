"""Frequency pretraining on synthetic sine mixtures for EEG sleep staging."""

__version__ = "0.1.0"
