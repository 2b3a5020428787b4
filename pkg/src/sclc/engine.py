"""Float64 tensor engine: six layer kinds, tape-based reverse mode, AdamW.

Tensors are plain ``numpy.ndarray`` objects of dtype float64. A network is
anything exposing ``layers`` (ordered ``(layer_id, LayerSpec)`` pairs),
``params`` (name -> array, keyed ``"<layer_id>.weight"``/``".bias"``) and a
``version`` counter that is bumped whenever parameters are mutated.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

KINDS = ("conv2d", "relu", "maxpool2", "gap", "dense", "softmax")


class ShapeError(ValueError):
    """Input does not chain through a layer."""


class StaleTapeError(RuntimeError):
    """Parameters changed between forward and backward."""


class NonFiniteGradientError(FloatingPointError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    n_in: int = 0
    n_out: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}; expected one of {KINDS}")
        if self.kind in ("conv2d", "dense") and (self.n_in < 1 or self.n_out < 1):
            raise ValueError(f"{self.kind} needs positive in/out sizes")

    @property
    def has_params(self) -> bool:
        return self.kind in ("conv2d", "dense")

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        if self.kind == "conv2d":
            return {"weight": (self.n_out, self.n_in, 3, 3), "bias": (self.n_out,)}
        if self.kind == "dense":
            return {"weight": (self.n_out, self.n_in), "bias": (self.n_out,)}
        return {}

    def fans(self) -> tuple[int, int]:
        if self.kind == "conv2d":
            return self.n_in * 9, self.n_out * 9
        return self.n_in, self.n_out


def conv2d(n_in: int, n_out: int) -> LayerSpec:
    return LayerSpec("conv2d", n_in, n_out)


def dense(n_in: int, n_out: int) -> LayerSpec:
    return LayerSpec("dense", n_in, n_out)


RELU = LayerSpec("relu")
MAXPOOL2 = LayerSpec("maxpool2")
GAP = LayerSpec("gap")
SOFTMAX = LayerSpec("softmax")


def output_shape(layer_id: str, spec: LayerSpec, shape: tuple[int, ...]) -> tuple[int, ...]:
    """Shape produced by ``spec`` for input ``shape`` (batch axis included)."""
    where = f"layer {layer_id!r} ({spec.kind})"
    k = spec.kind
    if k == "conv2d":
        if len(shape) != 4 or shape[1] != spec.n_in:
            raise ShapeError(f"{where}: expected [B,{spec.n_in},H,W], got {list(shape)}")
        return (shape[0], spec.n_out, shape[2], shape[3])
    if k == "maxpool2":
        if len(shape) != 4 or shape[2] % 2 or shape[3] % 2 or shape[2] < 2 or shape[3] < 2:
            raise ShapeError(f"{where}: needs [B,C,H,W] with even H, W, got {list(shape)}")
        return (shape[0], shape[1], shape[2] // 2, shape[3] // 2)
    if k == "gap":
        if len(shape) != 4:
            raise ShapeError(f"{where}: expected [B,C,H,W], got {list(shape)}")
        return (shape[0], shape[1])
    if k == "dense":
        if len(shape) != 2 or shape[1] != spec.n_in:
            raise ShapeError(f"{where}: expected [B,{spec.n_in}], got {list(shape)}")
        return (shape[0], spec.n_out)
    if k == "softmax":
        if len(shape) != 2:
            raise ShapeError(f"{where}: expected [B,K], got {list(shape)}")
    return tuple(shape)


def check_chain(layers, input_shape: tuple[int, ...]) -> tuple[int, ...]:
    shape = tuple(input_shape)
    for layer_id, spec in layers:
        shape = output_shape(layer_id, spec, shape)
    return shape


@dataclass
class Tape:
    """Forward record; ``entries`` are ``(layer_id, spec, saved)`` in forward order."""

    net: object
    version: int
    entries: list = field(default_factory=list)
    captured: frozenset = frozenset()
    output_shape: tuple = ()


class Sequential:
    """Bare layer stack owning its parameters. Used for small standalone nets."""

    def __init__(self, layers: Iterable[tuple[str, LayerSpec]], params: dict[str, np.ndarray] | None = None):
        self.layers = list(layers)
        self.params = {} if params is None else params
        self.version = 0

    def touch(self) -> None:
        self.version += 1


# -- layer kernels -----------------------------------------------------------

def _im2col(xp: np.ndarray, h: int, w: int) -> np.ndarray:
    # xp: [B,C,H+2,W+2] -> [B*H*W, C*9]
    win = sliding_window_view(xp, (3, 3), axis=(2, 3))  # [B,C,H,W,3,3]
    b, c = xp.shape[:2]
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(b * h * w, c * 9)


def _conv_forward(x, weight, bias):
    b, _, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    cols = _im2col(xp, h, w)
    out = cols @ weight.reshape(weight.shape[0], -1).T + bias
    return np.ascontiguousarray(out.reshape(b, h, w, -1).transpose(0, 3, 1, 2)), xp


def _conv_backward(dy, xp, weight, need_params):
    b, o, h, w = dy.shape
    c = weight.shape[1]
    dym = np.ascontiguousarray(dy.transpose(0, 2, 3, 1)).reshape(b * h * w, o)
    grads = {}
    if need_params:
        cols = _im2col(xp, h, w)
        grads["weight"] = (dym.T @ cols).reshape(weight.shape)
        grads["bias"] = dym.sum(axis=0)
    dcols = (dym @ weight.reshape(o, -1)).reshape(b, h, w, c, 3, 3)
    dxp = np.zeros_like(xp)
    for i in range(3):
        for j in range(3):
            dxp[:, :, i:i + h, j:j + w] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return dxp[:, :, 1:-1, 1:-1], grads


def _pool_windows(x):
    b, c, h, w = x.shape
    return x.reshape(b, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h // 2, w // 2, 4)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _apply(layer_id, spec, x, params):
    k = spec.kind
    if k == "conv2d":
        out, xp = _conv_forward(x, params[f"{layer_id}.weight"], params[f"{layer_id}.bias"])
        return out, xp
    if k == "relu":
        mask = x > 0
        return np.where(mask, x, 0.0), mask
    if k == "maxpool2":
        win = _pool_windows(x)
        idx = win.argmax(axis=-1)
        return np.take_along_axis(win, idx[..., None], axis=-1)[..., 0], (idx, x.shape)
    if k == "gap":
        # second pass absorbs rounding so a constant map averages to itself
        m = x.mean(axis=(2, 3))
        m = m + (x - m[:, :, None, None]).mean(axis=(2, 3))
        return m, x.shape
    if k == "dense":
        return x @ params[f"{layer_id}.weight"].T + params[f"{layer_id}.bias"], x
    y = softmax(x)
    return y, y


def _grad(layer_id, spec, saved, dy, params, need_params):
    k = spec.kind
    if k == "conv2d":
        return _conv_backward(dy, saved, params[f"{layer_id}.weight"], need_params)
    if k == "relu":
        return np.where(saved, dy, 0.0), {}
    if k == "maxpool2":
        idx, shape = saved
        b, c, h, w = shape
        g = np.zeros(idx.shape + (4,))
        np.put_along_axis(g, idx[..., None], dy[..., None], axis=-1)
        dx = g.reshape(b, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(shape)
        return dx, {}
    if k == "gap":
        b, c, h, w = saved
        return np.broadcast_to(dy[:, :, None, None] / (h * w), saved).copy(), {}
    if k == "dense":
        weight = params[f"{layer_id}.weight"]
        grads = {"weight": dy.T @ saved, "bias": dy.sum(axis=0)} if need_params else {}
        return dy @ weight, grads
    y = saved
    return y * (dy - (dy * y).sum(axis=1, keepdims=True)), {}


# -- public API --------------------------------------------------------------

def forward(net, batch: np.ndarray, capture: Iterable[str] = (), start: int = 0):
    """Run ``net.layers[start:]`` on ``batch``.

    Returns ``(output, tape, activations)`` where ``activations`` maps each
    captured layer id to that layer's output.
    """
    x = np.asarray(batch, dtype=np.float64)
    capture = frozenset(capture)
    known = {lid for lid, _ in net.layers}
    missing = capture - known
    if missing:
        raise KeyError(f"cannot capture unknown layers {sorted(missing)}")
    tape = Tape(net=net, version=net.version, captured=capture)
    acts = {}
    for layer_id, spec in net.layers[start:]:
        output_shape(layer_id, spec, x.shape)
        x, saved = _apply(layer_id, spec, x, net.params)
        tape.entries.append((layer_id, spec, saved))
        if layer_id in capture:
            acts[layer_id] = x
    tape.output_shape = x.shape
    return x, tape, acts


def backward(tape: Tape, grad_output: np.ndarray, wrt: Iterable[str] = ("parameters", "activations")):
    """Reverse sweep over ``tape``.

    Returns ``{"parameters": {name: grad}, "activations": {layer_id: grad}}``
    restricted to the requested ``wrt`` groups. Activation gradients are
    gradients of the scalar objective with respect to the captured layer
    outputs; uncaptured ones are dropped as the sweep proceeds.
    """
    wrt = set(wrt)
    if tape.net.version != tape.version:
        raise StaleTapeError("parameters were modified after the forward pass; re-run forward")
    dy = np.asarray(grad_output, dtype=np.float64)
    if dy.shape != tuple(tape.output_shape):
        raise ShapeError(f"output gradient shape {list(dy.shape)} != forward output {list(tape.output_shape)}")
    need_params = "parameters" in wrt
    pgrads: dict[str, np.ndarray] = {}
    agrads: dict[str, np.ndarray] = {}
    pending = set(tape.captured) if "activations" in wrt else set()
    swept = True
    for layer_id, spec, saved in reversed(tape.entries):
        if layer_id in pending:
            agrads[layer_id] = dy.copy()
            pending.discard(layer_id)
            if not need_params and not pending:
                swept = False
                break
        dy, g = _grad(layer_id, spec, saved, dy, tape.net.params, need_params)
        for name, val in g.items():
            pgrads[f"{layer_id}.{name}"] = val
    out = {}
    if need_params:
        out["parameters"] = pgrads
    if "activations" in wrt:
        out["activations"] = agrads
    out["input"] = dy if swept else None
    return out


@dataclass
class AdamWState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adamw_step(params: dict, grads: dict, state: AdamWState, lr: float, beta1: float = 0.9,
               beta2: float = 0.999, eps: float = 1e-8, weight_decay: float = 1e-4):
    """One decoupled-weight-decay Adam update, in place, over the names in ``grads``."""
    for name in sorted(grads):
        g = grads[name]
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if g.shape != params[name].shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter {name!r} shape {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient for parameter {name!r}")
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name in sorted(grads):
        g = grads[name]
        p = params[name]
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1 - beta1) * g if m is None else beta1 * m + (1 - beta1) * g
        v = (1 - beta2) * g * g if v is None else beta2 * v + (1 - beta2) * g * g
        state.m[name], state.v[name] = m, v
        p -= lr * ((m / c1) / (np.sqrt(v / c2) + eps) + weight_decay * p)
    return params, state
