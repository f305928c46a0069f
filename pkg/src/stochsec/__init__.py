"""Stochastic-security experiments for energy-based models.

Trains continuous-domain EBMs with persistent-chain Langevin Monte Carlo,
measures how the Gibbs-sampling budget affects the adversarial robustness
and calibration of an independent classifier, and validates the Langevin
sampler against a spectral Fokker-Planck solver in low dimension.
"""

__version__ = "0.1.0"
