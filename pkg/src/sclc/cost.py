"""Per-class loss weights for cost-sensitive fine-tuning."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MODES = ("uniform", "balanced", "explicit")


@dataclass(frozen=True)
class ClassWeights:
    weights: tuple[float, ...]
    mode: str

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown weight mode {self.mode!r}")
        if any(not w > 0 for w in self.weights):
            raise ValueError("class weights must all be > 0")

    def as_array(self) -> np.ndarray:
        return np.asarray(self.weights, dtype=np.float64)


def compute_class_weights(counts, mode: str = "balanced", explicit=None, class_names=None) -> ClassWeights:
    """Weights from per-class training counts.

    ``balanced`` uses ``N / (K * n_c)`` so that every class contributes the
    same total weight; ``uniform`` is all ones; ``explicit`` passes
    ``explicit`` through after validation.
    """
    counts = np.asarray(counts, dtype=np.int64)
    if counts.ndim != 1 or counts.size == 0:
        raise ValueError("counts must be a non-empty 1-D sequence")
    if np.any(counts < 0):
        raise ValueError("counts must be >= 0")
    k = counts.size
    if mode == "uniform":
        return ClassWeights((1.0,) * k, mode)
    if mode == "explicit":
        if explicit is None or len(explicit) != k:
            raise ValueError(f"explicit mode needs {k} weights")
        return ClassWeights(tuple(float(w) for w in explicit), mode)
    if mode != "balanced":
        raise ValueError(f"unknown weight mode {mode!r}; expected one of {MODES}")
    zero = np.flatnonzero(counts == 0)
    if zero.size:
        c = int(zero[0])
        name = class_names[c] if class_names is not None else c
        raise ValueError(f"balanced weights undefined: class {name!r} has no training samples")
    n = counts.sum()
    return ClassWeights(tuple(float(n / (k * c)) for c in counts), mode)
