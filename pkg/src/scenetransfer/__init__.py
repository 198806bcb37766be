"""Two-stage drop-then-maintain transfer learning for imbalanced,
sequence-labeled scene classification, with a small gradient-checked
numpy backbone and synthetic dataset generators."""

__version__ = "0.1.0"
