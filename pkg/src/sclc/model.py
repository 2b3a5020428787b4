"""Encoder / projection head / classifier composition, freezing and checkpoints."""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import engine
from .engine import GAP, MAXPOOL2, RELU, SOFTMAX, AdamWState, LayerSpec, conv2d, dense

MAGIC = b"SCLC"
FORMAT_VERSION = 1
STAGES = {"init": 0, "pretrained": 1, "finetuned": 2}
_STAGE_NAMES = {v: k for k, v in STAGES.items()}
_KIND_CODES = {kind: i for i, kind in enumerate(engine.KINDS)}
LAYOUT_TENSOR = "layout.encoder"
HEADS = ("encoder", "projection", "classifier")


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    encoder: tuple[LayerSpec, ...]
    projection: tuple[int, int] = (64, 32)
    n_classes: int = 2
    in_channels: int = 3

    @classmethod
    def default(cls, n_classes: int, channels=(16, 32, 64), projection=(64, 32)) -> "ModelSpec":
        layers = []
        prev = 3
        for c in channels:
            layers += [conv2d(prev, c), RELU, MAXPOOL2]
            prev = c
        layers.append(GAP)
        return cls(tuple(layers), tuple(projection), n_classes)

    @property
    def embedding_dim(self) -> int:
        convs = [s for s in self.encoder if s.kind == "conv2d"]
        return convs[-1].n_out if convs else self.in_channels

    def heads(self) -> dict[str, list[tuple[str, LayerSpec]]]:
        d = self.embedding_dim
        hidden, out = self.projection
        return {
            "encoder": [(f"encoder.{i}", s) for i, s in enumerate(self.encoder)],
            "projection": [("projection.0", dense(d, hidden)), ("projection.1", RELU),
                           ("projection.2", dense(hidden, out))],
            "classifier": [("classifier.0", dense(d, self.n_classes)), ("classifier.1", SOFTMAX)],
        }

    def validate(self) -> None:
        if not self.encoder or self.encoder[-1].kind != "gap":
            raise engine.ShapeError("encoder must end in a gap layer")
        if self.n_classes < 1:
            raise ValueError("n_classes must be positive")
        heads = self.heads()
        probe = (1, self.in_channels) + (2 ** sum(s.kind == "maxpool2" for s in self.encoder),) * 2
        emb = engine.check_chain(heads["encoder"], probe)
        engine.check_chain(heads["projection"], emb)
        engine.check_chain(heads["classifier"], emb)


class HeadPath:
    """Read-through view of a subset of a model's heads, usable by the engine.

    ``logits=True`` drops a trailing softmax so the path ends at class scores.
    """

    def __init__(self, model: "Model", heads: tuple[str, ...], logits: bool = False):
        self.model = model
        all_heads = model.spec.heads()
        self.layers = [item for h in heads for item in all_heads[h]]
        if logits and self.layers and self.layers[-1][1].kind == "softmax":
            self.layers = self.layers[:-1]

    @property
    def params(self):
        return self.model.params

    @property
    def version(self):
        return self.model.version


@dataclass
class Model:
    spec: ModelSpec
    params: dict[str, np.ndarray]
    stage: str = "init"
    frozen: set = field(default_factory=set)
    version: int = 0

    def path(self, *heads: str, logits: bool = False) -> HeadPath:
        return HeadPath(self, heads, logits)

    def layer_ids(self, head: str | None = None) -> list[str]:
        heads = self.spec.heads()
        names = [head] if head else list(HEADS)
        return [lid for h in names for lid, _ in heads[h]]

    def conv_layer_ids(self) -> list[str]:
        return [lid for lid, s in self.spec.heads()["encoder"] if s.kind == "conv2d"]

    def trainable_names(self) -> list[str]:
        return [n for n in self.params if n.split(".")[0] not in self.frozen]

    def touch(self) -> None:
        self.version += 1

    @property
    def n_classes(self) -> int:
        return self.spec.n_classes


def init(spec: ModelSpec, seed: int) -> Model:
    """Glorot-uniform weights, zero biases, drawn in layer order from ``seed``."""
    spec.validate()
    rng = np.random.default_rng(seed)
    params = {}
    for head in HEADS:
        for lid, layer in spec.heads()[head]:
            if not layer.has_params:
                continue
            shapes = layer.param_shapes()
            fan_in, fan_out = layer.fans()
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            params[f"{lid}.weight"] = rng.uniform(-bound, bound, size=shapes["weight"])
            params[f"{lid}.bias"] = np.zeros(shapes["bias"])
    return Model(spec, params)


def embed(model: Model, batch: np.ndarray) -> np.ndarray:
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 4 or batch.shape[1] != model.spec.in_channels:
        raise engine.ShapeError(f"expected [B,{model.spec.in_channels},H,W] images, got {list(batch.shape)}")
    out, _, _ = engine.forward(model.path("encoder"), batch)
    return out


def l2_normalize(h: np.ndarray):
    """Row-normalize ``h``. Zero rows become the first basis vector.

    Returns ``(z, norms, degenerate)``; ``degenerate`` marks replaced rows.
    """
    norms = np.sqrt((h * h).sum(axis=1))
    degenerate = norms == 0
    safe = np.where(degenerate, 1.0, norms)
    z = h / safe[:, None]
    if degenerate.any():
        z[degenerate] = 0.0
        z[degenerate, 0] = 1.0
        warnings.warn(f"{int(degenerate.sum())} zero projection row(s) replaced by a unit basis vector")
    return z, safe, degenerate


def l2_normalize_backward(z, norms, degenerate, dz):
    dh = (dz - z * (z * dz).sum(axis=1, keepdims=True)) / norms[:, None]
    dh[degenerate] = 0.0
    return dh


def project(model: Model, embeddings: np.ndarray) -> np.ndarray:
    h, _, _ = engine.forward(model.path("projection"), embeddings)
    return l2_normalize(h)[0]


def logits(model: Model, batch: np.ndarray) -> np.ndarray:
    out, _, _ = engine.forward(model.path("encoder", "classifier", logits=True), batch)
    return out


def predict_proba(model: Model, batch: np.ndarray) -> np.ndarray:
    out, _, _ = engine.forward(model.path("encoder", "classifier"), batch)
    return out


def freeze_encoder(model: Model) -> Model:
    model.frozen |= {"encoder", "projection"}
    return model


class Optimizer:
    """AdamW over a model's trainable parameters."""

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=1e-4):
        self.hyper = dict(lr=lr, beta1=beta1, beta2=beta2, eps=eps, weight_decay=weight_decay)
        self.state = AdamWState()

    def step(self, model: Model, grads: dict[str, np.ndarray]) -> None:
        allowed = set(model.trainable_names())
        grads = {k: v for k, v in grads.items() if k in allowed}
        engine.adamw_step(model.params, grads, self.state, **self.hyper)
        model.touch()


# -- checkpoints -------------------------------------------------------------

def _tensors(model: Model):
    codes = np.array([_KIND_CODES[s.kind] for s in model.spec.encoder], dtype=np.float64)
    yield LAYOUT_TENSOR, codes
    yield from model.params.items()


def checkpoint_bytes(model: Model) -> bytes:
    items = list(_tensors(model))
    chunks = [MAGIC, struct.pack("<IBI", FORMAT_VERSION, STAGES[model.stage], len(items))]
    for name, arr in items:
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)) + raw)
        chunks.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(chunks)


def save_checkpoint(model: Model, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(model))


class _Reader:
    def __init__(self, buf: bytes, origin: str):
        self.buf, self.pos, self.origin = buf, 0, origin

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"{self.origin}: truncated checkpoint (needed {n} bytes at offset {self.pos})")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def parse_checkpoint(buf: bytes, origin: str = "<bytes>") -> Model:
    r = _Reader(buf, origin)
    if r.take(4) != MAGIC:
        raise CheckpointError(f"{origin}: bad magic, not an SCLC checkpoint")
    version, stage, count = r.unpack("<IBI")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{origin}: unsupported checkpoint version {version}")
    if stage not in _STAGE_NAMES:
        raise CheckpointError(f"{origin}: unknown stage tag {stage}")
    tensors = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        try:
            name = r.take(nlen).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointError(f"{origin}: tensor name is not UTF-8") from exc
        (ndim,) = r.unpack("<B")
        dims = r.unpack(f"<{ndim}I")
        n = int(np.prod(dims, dtype=np.int64))
        tensors[name] = np.frombuffer(r.take(8 * n), dtype="<f8").astype(np.float64).reshape(dims)
    if r.pos != len(buf):
        raise CheckpointError(f"{origin}: {len(buf) - r.pos} trailing bytes after last tensor")
    return _rebuild(tensors, _STAGE_NAMES[stage], origin)


def _rebuild(tensors: dict, stage: str, origin: str) -> Model:
    if LAYOUT_TENSOR not in tensors:
        raise CheckpointError(f"{origin}: missing {LAYOUT_TENSOR}")
    try:
        kinds = [engine.KINDS[int(c)] for c in tensors.pop(LAYOUT_TENSOR)]
        encoder = []
        for i, kind in enumerate(kinds):
            if kind == "conv2d":
                o, c = tensors[f"encoder.{i}.weight"].shape[:2]
                encoder.append(conv2d(c, o))
            elif kind == "dense":
                o, c = tensors[f"encoder.{i}.weight"].shape
                encoder.append(dense(c, o))
            else:
                encoder.append(LayerSpec(kind))
        hidden = tensors["projection.0.weight"].shape[0]
        out = tensors["projection.2.weight"].shape[0]
        k = tensors["classifier.0.weight"].shape[0]
        in_ch = next(s.n_in for s in encoder if s.kind == "conv2d")
    except (KeyError, IndexError, ValueError, StopIteration) as exc:
        raise CheckpointError(f"{origin}: inconsistent tensor set ({exc})") from exc
    spec = ModelSpec(tuple(encoder), (hidden, out), k, in_ch)
    try:
        spec.validate()
    except (engine.ShapeError, ValueError) as exc:
        raise CheckpointError(f"{origin}: {exc}") from exc
    expected = init_shapes(spec)
    if set(expected) != set(tensors):
        raise CheckpointError(f"{origin}: tensor names {sorted(tensors)} do not match layout")
    params = {}
    for name, shape in expected.items():
        if tensors[name].shape != shape:
            raise CheckpointError(f"{origin}: tensor {name} has shape {tensors[name].shape}, expected {shape}")
        params[name] = tensors[name]
    return Model(spec, params, stage=stage)


def init_shapes(spec: ModelSpec) -> dict[str, tuple[int, ...]]:
    out = {}
    for head in HEADS:
        for lid, layer in spec.heads()[head]:
            for pname, shape in layer.param_shapes().items():
                out[f"{lid}.{pname}"] = shape
    return out


def load_checkpoint(path) -> Model:
    path = Path(path)
    return parse_checkpoint(path.read_bytes(), str(path))
