"""Synthetic-to-real point cloud classification: scan simulation, augmentation and
semi-supervised training of a max-pooled point encoder."""

__version__ = "0.1.0"
