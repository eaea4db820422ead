"""Lung-sound event detection toolkit: features, CNN-BiGRU detector, evaluation."""

__version__ = "0.1.0"

SAMPLE_RATE = 4000
STANDARD_SAMPLES = 60000
FRAME_HOP_S = 64 / SAMPLE_RATE
