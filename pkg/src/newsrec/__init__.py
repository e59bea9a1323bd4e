"""Candidate-aware multi-granularity news recommender, desk scale.

Everything runs on plain float64 numpy via a small reverse-mode autodiff
core (:mod:`newsrec.autodiff`); no deep-learning framework is involved.
"""

__version__ = "0.1.0"
