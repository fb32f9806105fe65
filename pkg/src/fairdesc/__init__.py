"""Descriptor-space adversarial attribute suppression and fairness evaluation."""

__version__ = "0.1.0"
