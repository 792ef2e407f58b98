"""deskpick: desk-scale closed-loop object picking with trust-region RL."""

__version__ = "0.1.0"
