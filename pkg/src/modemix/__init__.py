"""modemix: K-root mode-mixture GAN toolkit.

A self-contained float64 stack: autodiff tensor core, style-based
generator with K blended root constants, adversarial training,
procedural multi-modal datasets, Frechet/IoU evaluation and latent
inversion, all deterministic under explicit seeds.
"""
from .rng import Rng, derive_seed
from .tensor import (NonFiniteError, Tape, TapeError, Tensor, TensorError,
                     current_tape)

__all__ = [
    "Rng", "derive_seed", "Tensor", "Tape", "TensorError", "TapeError",
    "NonFiniteError", "current_tape",
]

__version__ = "0.1.0"
