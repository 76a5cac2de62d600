"""Dual self-supervised graph pre-training and topology distillation for EEG."""

__version__ = "0.1.0"
