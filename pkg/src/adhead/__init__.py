"""Trainable zero-shot anomaly-detection head over frozen backbone features.

Adapter stacks recalibrate frozen visual and text embeddings; cross-modal
cosine maps with a class softmax give per-stage anomaly grids; a mask-
supervised CLS-patch calibration objective regularizes training; focal+dice
losses with exact gradients drive Adam; evaluation reports pooled
pixel-level AUROC and maximum F1.
"""

__version__ = "0.1.0"
