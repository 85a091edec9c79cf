"""Simulation and stability verification for SDEs driven by time-changed
Levy noise: subordinators and their inverses, a time-changed Euler scheme
with compensated jumps, Lyapunov-certificate checking, and Monte Carlo
stability estimation."""

__version__ = "0.1.0"
