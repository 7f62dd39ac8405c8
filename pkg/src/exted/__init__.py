"""Knowledge-grounded encoder-decoder dialogue model, from scratch.

An LSTM sequence-to-sequence model whose decoder input is augmented with an
external context vector built from offline knowledge snapshots (Wikipedia
summaries or entity/relation/value triples), trained against three losses:
next-token likelihood, external-vector prediction, and a capped divergence
term that forces the decoder to rely on the external vector.
"""

from .kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
