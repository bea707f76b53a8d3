"""Stochastic point-vortex dynamics with environmental transport noise on the
2-torus, a pseudo-spectral Navier-Stokes reference solver, and a validation
harness for the mean-field comparison between the two.
"""

__version__ = "0.1.0"
