"""Alternating-updating nonnegative matrix factorization, sequential and SPMD.

The package is organized around the shared structure of alternating-updating
NMF: every iteration needs the small Gram matrix of the fixed factor and its
product with the data matrix, and the three update kernels (multiplicative
updates, hierarchical ALS, block principal pivoting) consume exactly those two
quantities.  On top of that sit a sequential driver, an in-process SPMD layer
with instrumented collectives, two distributed drivers (1-D naive and 2-D
grid), a closed-form communication/computation cost model, and a benchmark CLI.
"""

from aunmf.sequential import NmfConfig, aunmf_run, init_factors

__all__ = ["NmfConfig", "aunmf_run", "init_factors"]
