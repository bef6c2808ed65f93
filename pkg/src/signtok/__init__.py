"""Tokenization pipeline for continuous sign-language feature streams.

Turns continuous feature sequences into discrete character tokens via a
contrastively trained codebook, regroups characters into an entropy-shaped
word vocabulary through an optimal-transport solve, aligns the resulting
embeddings to a target text-embedding space, and decodes through a frozen
toy generator.
"""

__version__ = "0.1.0"
