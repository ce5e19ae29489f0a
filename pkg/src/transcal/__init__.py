"""Bayesian calibration of multi-output simulators observed through a single output.

Model error is carried by extra numerical parameters whose prior is driven by
hyperparameters, estimated with importance sampling over a reusable bank of
prior draws.
"""

__version__ = "0.1.0"
