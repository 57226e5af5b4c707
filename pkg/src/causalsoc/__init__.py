"""Causally-constrained autonomous cyber-defense decision engine.

Pipeline: synthetic telemetry generation -> constraint-based causal
discovery -> investigation roadmap compilation -> dual-policy self-play
training -> gated online incident response with calibrated escalation.
"""

__version__ = "0.1.0"
