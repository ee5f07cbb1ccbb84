"""Penalized regression calibration: survival prediction from many
longitudinal markers via mixed-model random effects and penalized Cox
regression."""

__version__ = "0.1.0"
