"""Hybrid Poisson / multi-Bernoulli multi-target tracking.

A marginal track filter that keeps a Poisson intensity of never-detected
targets next to its Bernoulli tracks, uses that intensity to initiate tracks,
and can recycle low-existence tracks back into it.
"""

__version__ = "0.1.0"
