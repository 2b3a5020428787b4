"""Synthetic shape datasets, folder-per-class loading, splits and batching."""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import netpbm

log = logging.getLogger(__name__)

SHAPES = ("disc", "square", "triangle", "ring", "cross", "h-stripes", "v-stripes", "checker")


@dataclass
class LabeledDataset:
    images: np.ndarray  # [N,3,H,W] in [0,1]
    labels: np.ndarray  # [N] int
    class_names: list[str]
    boxes: np.ndarray | None = None  # [N,4] (top, left, bottom, right), exclusive ends
    masks: np.ndarray | None = None  # [N,H,W] object pixels, synthetic only
    paths: list[str] | None = None

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.images) != len(self.labels):
            raise ValueError("images and labels differ in length")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= len(self.class_names)):
            raise ValueError("label outside the class table")

    def __len__(self):
        return len(self.labels)

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)

    def subset(self, idx) -> "LabeledDataset":
        idx = np.asarray(idx, dtype=np.int64)
        pick = lambda a: None if a is None else a[idx]
        paths = None if self.paths is None else [self.paths[i] for i in idx]
        return LabeledDataset(self.images[idx], self.labels[idx], list(self.class_names),
                              pick(self.boxes), pick(self.masks), paths)


@dataclass(frozen=True)
class SynthSpec:
    classes: tuple[str, ...] = ("disc", "triangle", "ring", "cross")
    counts: tuple[int, ...] = (200, 200, 200, 200)
    resolution: int = 32
    scale: tuple[float, float] = (0.35, 0.6)  # object side as a fraction of the image
    background: tuple[float, float] = (0.05, 0.35)
    foreground: tuple[float, float] = (0.6, 1.0)
    noise: float = 0.05

    def __post_init__(self):
        if len(self.classes) != len(self.counts):
            raise ValueError("classes and counts differ in length")
        if not 1 <= len(self.classes) <= len(SHAPES):
            raise ValueError(f"between 1 and {len(SHAPES)} classes")
        unknown = set(self.classes) - set(SHAPES)
        if unknown:
            raise ValueError(f"unknown shape classes {sorted(unknown)}; choose from {SHAPES}")
        if len(set(self.classes)) != len(self.classes):
            raise ValueError("duplicate class")
        if min(self.counts) < 1:
            raise ValueError("every class needs at least one sample")
        if self.resolution < 8:
            raise ValueError("resolution must be >= 8")


def shape_mask(kind: str, size: int) -> np.ndarray:
    """Boolean ``size x size`` silhouette of ``kind`` sampled at pixel centres."""
    c = (np.arange(size) + 0.5) / size * 2 - 1  # [-1, 1]
    y, x = np.meshgrid(c, c, indexing="ij")
    r = np.hypot(x, y)
    if kind == "disc":
        return r <= 1.0
    if kind == "square":
        return np.ones((size, size), dtype=bool)
    if kind == "triangle":
        # apex at top centre, base along the bottom edge
        return (y >= -1) & (np.abs(x) <= (y + 1) / 2)
    if kind == "ring":
        return (r <= 1.0) & (r >= 0.55)
    if kind == "cross":
        return (np.abs(x) <= 0.3) | (np.abs(y) <= 0.3)
    band = (np.arange(size) // max(2, size // 5)) % 2 == 0
    if kind == "h-stripes":
        return np.broadcast_to(band[:, None], (size, size)).copy()
    if kind == "v-stripes":
        return np.broadcast_to(band[None, :], (size, size)).copy()
    if kind == "checker":
        return band[:, None] ^ band[None, :]
    raise ValueError(f"unknown shape {kind!r}")


def _render(kind, spec: SynthSpec, rng):
    n = spec.resolution
    lo, hi = spec.scale
    size = int(round(n * rng.uniform(lo, hi)))
    size = max(4, min(size, n))
    top = int(rng.integers(0, n - size + 1))
    left = int(rng.integers(0, n - size + 1))
    bg = rng.uniform(*spec.background, size=3)
    fg = rng.uniform(*spec.foreground, size=3)
    img = np.empty((3, n, n))
    img[:] = bg[:, None, None]
    mask = np.zeros((n, n), dtype=bool)
    mask[top:top + size, left:left + size] = shape_mask(kind, size)
    img[:, mask] = fg[:, None]
    img += rng.normal(0.0, spec.noise, size=img.shape)
    return np.clip(img, 0.0, 1.0), (top, left, top + size, left + size), mask


def generate(spec: SynthSpec, seed: int) -> LabeledDataset:
    """Class-ordered synthetic dataset; deterministic for a given ``seed``."""
    rng = np.random.default_rng(seed)
    images, labels, boxes, masks = [], [], [], []
    for c, (kind, count) in enumerate(zip(spec.classes, spec.counts)):
        for _ in range(count):
            img, box, mask = _render(kind, spec, rng)
            images.append(img)
            labels.append(c)
            boxes.append(box)
            masks.append(mask)
    return LabeledDataset(np.stack(images), np.array(labels), list(spec.classes),
                          np.array(boxes, dtype=np.int64), np.stack(masks))


def load_directory(root) -> LabeledDataset:
    """One sub-folder per class (indices by sorted folder name), PPM files inside."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root {root} does not exist")
    folders = sorted(p for p in root.iterdir() if p.is_dir())
    if not folders:
        raise ValueError(f"{root}: no class folders")
    images, labels, paths = [], [], []
    shape = None
    for c, folder in enumerate(folders):
        files = sorted(p for p in folder.iterdir() if p.is_file() and p.suffix.lower() == ".ppm")
        if not files:
            warnings.warn(f"class folder {folder.name!r} has no images; keeping it with zero samples")
        for f in files:
            img = netpbm.read(f)
            if img.ndim != 3:
                raise netpbm.NetpbmError(f"{f}: expected a colour (P6) image")
            if shape is None:
                shape = img.shape
            elif img.shape != shape:
                raise ValueError(f"{f}: size {img.shape[1:]} differs from {shape[1:]}")
            images.append(img)
            labels.append(c)
            paths.append(str(f))
    if not images:
        raise ValueError(f"{root}: no images found")
    return LabeledDataset(np.stack(images), np.array(labels), [f.name for f in folders], paths=paths)


def split_stratified(dataset: LabeledDataset, train_fraction: float = 0.8, seed: int = 0):
    """Per class, ``floor(fraction * n_c + 0.5)`` shuffled samples go to train."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    train, test = [], []
    for c in range(dataset.n_classes):
        idx = np.flatnonzero(dataset.labels == c)
        if idx.size == 0:
            continue
        idx = idx[rng.permutation(idx.size)]
        if idx.size == 1:
            warnings.warn(f"class {dataset.class_names[c]!r} has a single sample; assigned to train")
            n_train = 1
        else:
            n_train = int(np.floor(train_fraction * idx.size + 0.5))
        train.extend(idx[:n_train])
        test.extend(idx[n_train:])
    train, test = np.sort(train).astype(np.int64), np.sort(test).astype(np.int64)
    return dataset.subset(train), dataset.subset(test)


def split_indices(dataset: LabeledDataset, train_fraction: float = 0.8, seed: int = 0):
    """Same partition as ``split_stratified``, as index arrays."""
    tagged = LabeledDataset(np.arange(len(dataset), dtype=np.float64)[:, None, None, None],
                            dataset.labels, list(dataset.class_names))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        tr, te = split_stratified(tagged, train_fraction, seed)
    return tr.images[:, 0, 0, 0].astype(np.int64), te.images[:, 0, 0, 0].astype(np.int64)


def batches(dataset: LabeledDataset, batch_size: int, seed: int, drop_last: bool = False):
    """Yield ``(images, labels, indices)`` over one epoch in seeded random order."""
    if batch_size < 1:
        raise ValueError("batch size must be >= 1")
    order = np.random.default_rng(seed).permutation(len(dataset))
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        if drop_last and idx.size < batch_size:
            break
        yield dataset.images[idx], dataset.labels[idx], idx


def write_directory(dataset: LabeledDataset, root, train_fraction: float = 0.8, seed: int = 0) -> Path:
    """Write one PPM per image under ``root/<class>/`` plus ``manifest.csv``.

    The manifest's class-index is the index ``load_directory`` will assign.
    Bounding boxes, when present, go to ``boxes.csv``.
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    order = {name: i for i, name in enumerate(sorted(dataset.class_names))}
    train_idx, _ = split_indices(dataset, train_fraction, seed)
    in_train = np.zeros(len(dataset), dtype=bool)
    in_train[train_idx] = True
    rows, box_rows = [], []
    for i in range(len(dataset)):
        name = dataset.class_names[dataset.labels[i]]
        (root / name).mkdir(exist_ok=True)
        rel = f"{name}/{i:06d}.ppm"
        netpbm.write(root / rel, dataset.images[i])
        rows.append([rel, name, order[name], "train" if in_train[i] else "test"])
        if dataset.boxes is not None:
            box_rows.append([rel, *map(int, dataset.boxes[i])])
    with open(root / "manifest.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path", "class-name", "class-index", "split"])
        w.writerows(rows)
    if box_rows:
        with open(root / "boxes.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["path", "top", "left", "bottom", "right"])
            w.writerows(box_rows)
    log.info("wrote %d images to %s", len(rows), root)
    return root
