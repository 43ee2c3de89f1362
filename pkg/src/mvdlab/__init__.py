"""Monte Carlo gradient estimators for Gaussian search distributions, with LQR and SAC benchmarks."""

__version__ = "0.1.0"
