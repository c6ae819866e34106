"""voxkit: speaker-encoder and toy one-shot voice conversion toolkit.

A self-contained numpy implementation: tensor kernels with hand-derived
backward passes, SE-ResNet frame extractor, attentive statistics pooling,
a 16 kHz log-mel frontend, a desk-scale voice-conversion trainer, and
spectral/speaker evaluation metrics.
"""

__version__ = "0.1.0"
