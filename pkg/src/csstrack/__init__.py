"""Resonance-frequency tracking with complex state-space (CSS) envelope models.

Submodules
----------
linsys     real state-space toolkit (ZOH, eigenpairs, Riccati, LQR, gramians)
css        complex-envelope models, domains and simulation
envelope   sliding non-uniform DTFT envelope extraction
estimator  Kalman, RPEM and moving-horizon estimation of the disturbance h
tracker    frequency update laws and the closed tracking loop
bench      study plants, Monte-Carlo harness and the ``track`` CLI
"""
__version__ = "0.1.0"
