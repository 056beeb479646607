"""Gridworld combat simulator and mean-field MARL learners (MFQ, MFAC, POMFQ(FOR), GAMFQ)."""

__version__ = "0.1.0"
