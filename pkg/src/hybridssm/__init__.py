"""Hybrid attention/SSM model machinery: causal mixing matrices and their
minimal time-varying realizations, the Mamba-2 / GDN / GKA recurrences with
the Chebyshev variable-compute solver, weight-transfer priming, training-free
state composition, a sequence-parallelism simulator, the symmetric tiled
decode-kernel model, and the decode-throughput cost model.
"""

__version__ = "0.1.0"
