"""Group-averaging operators and desk-scale verification of invariance
and equivariance generalisation-gap formulas for linear regression and
kernel ridge regression."""

__version__ = "0.1.0"
