"""Coarse-grained polymer dynamics with a learned steering policy.

A Brownian-kick (underdamped Langevin) engine over Martini-style bead
chains, an RL environment whose actions modulate per-bead forces and
monomer rotations, a PPO-trained Gaussian MLP policy that steers the chain
into a target radius-of-gyration band, and the analysis tooling that
quantifies the sampling-efficiency gain over unsteered dynamics.
"""

from . import analysis, dynamics, environment, forcefield, policy, topology, units

__all__ = [
    "analysis",
    "dynamics",
    "environment",
    "forcefield",
    "policy",
    "topology",
    "units",
]

__version__ = "0.1.0"
