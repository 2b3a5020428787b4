"""Supervised-contrastive image classification with cost-sensitive fine-tuning
and CAM explanations, on a small numpy autodiff engine."""

__version__ = "0.1.0"
