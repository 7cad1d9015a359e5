"""Satellite transmitter fingerprinting toolkit.

Synthetic impaired-IQ dataset generation, a Siamese convolutional
autoencoder trained with triplet loss over angular distance, multi-anchor
verification, and replay/held-out/time-gap evaluation scenarios.
"""

__version__ = "0.1.0"

from . import datapipe, model, sigcore, synth, verify  # noqa: F401
from .errors import SatfpError  # noqa: F401
