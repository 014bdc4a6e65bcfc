"""Adversarial attacks and defenses for ML xApps in a simulated O-RAN control loop."""

__version__ = "0.1.0"
