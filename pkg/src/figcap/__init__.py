"""Desk-scale multimodal figure caption generator.

Subpackages cover the dense autodiff tensor engine, corpus ingestion and
cleaning, binary feature storage, the fusion/decoder model, the training
loop, BLEU-4 scoring, and the command line surface.
"""

__version__ = "0.1.0"
