"""Class activation maps: GradCAM, GradCAM++, fast ScoreCAM and LayerCAM.

Each method has a pure core operating on a layer's activations ``A`` and
gradients ``g`` (both ``[C,h,w]``), and a model-level entry point that runs
the forward/backward passes and turns the core's map into a ``Heatmap`` at
input resolution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import engine
from .augment import resize_bilinear
from .engine import softmax

METHODS = ("gradcam", "gradcam++", "scorecam-fast", "layercam")

# blue -> cyan -> green -> yellow -> red at 0, .25, .5, .75, 1
RAMP = np.array([[0, 0, 1], [0, 1, 1], [0, 1, 0], [1, 1, 0], [1, 0, 0]], dtype=np.float64)


@dataclass
class Heatmap:
    values: np.ndarray  # [H,W] in [0,1]
    method: str
    target_class: int
    layer: str
    empty: bool = False
    raw: np.ndarray | None = None  # map before normalization, at layer resolution


@dataclass(frozen=True)
class CamRequest:
    method: str = "gradcam"
    layer: str | None = None
    target_class: int | None = None
    channel_budget: int = 16

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown CAM method {self.method!r}; valid: {', '.join(METHODS)}")
        if self.channel_budget < 1:
            raise ValueError("channel budget must be >= 1")


def relu(x):
    return np.maximum(x, 0.0)


def gradcam_map(acts, grads):
    w = grads.mean(axis=(1, 2))
    return relu(np.tensordot(w, acts, axes=1))


def gradcampp_map(acts, grads, eps=1e-8):
    g2 = grads ** 2
    denom = 2 * g2 + (acts * grads ** 3).sum(axis=(1, 2), keepdims=True) + eps
    alpha = g2 / denom
    w = (alpha * relu(grads)).sum(axis=(1, 2))
    return relu(np.tensordot(w, acts, axes=1))


def layercam_map(acts, grads):
    return relu((relu(grads) * acts).sum(axis=0))


def normalize(m):
    """Min-max scale to [0, 1]; a constant map becomes zeros and is flagged."""
    lo, hi = m.min(), m.max()
    if not hi > lo:
        return np.zeros_like(m, dtype=np.float64), True
    return (m - lo) / (hi - lo), False


def upsample(m, shape):
    if m.shape == tuple(shape):
        return m.copy()
    return np.clip(resize_bilinear(m, *shape), 0.0, 1.0)


def to_heatmap(raw, shape, method, target, layer) -> Heatmap:
    norm, empty = normalize(raw)
    return Heatmap(upsample(norm, shape), method, int(target), layer, empty, raw)


def resolve_layer(model, layer: str | None):
    """Map a conv layer id to the layer whose output is explained.

    The explained activation is the conv block output, i.e. the ReLU right
    after the conv when there is one.
    """
    convs = model.conv_layer_ids()
    if not convs:
        raise ValueError("model has no conv layers to explain")
    if layer is None:
        layer = convs[-1]
    if layer not in convs:
        raise ValueError(f"unknown conv layer {layer!r}; valid: {', '.join(convs)}")
    encoder = model.spec.heads()["encoder"]
    pos = [lid for lid, _ in encoder].index(layer)
    if pos + 1 < len(encoder) and encoder[pos + 1][1].kind == "relu":
        return layer, encoder[pos + 1][0]
    return layer, layer


def _check_image(model, image):
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[0] != model.spec.in_channels:
        raise engine.ShapeError(f"expected a [3,H,W] image, got {list(image.shape)}")
    return image


def activations_and_grads(model, image, layer=None, target_class=None):
    """Forward to class scores capturing ``layer``; gradient of the target score.

    Returns ``(A, g, logits, target, layer_id)`` with ``A``/``g`` ``[C,h,w]``.
    """
    image = _check_image(model, image)
    layer, act_id = resolve_layer(model, layer)
    path = model.path("encoder", "classifier", logits=True)
    scores, tape, acts = engine.forward(path, image[None], capture={act_id})
    if target_class is None:
        target_class = int(np.argmax(scores[0]))
    if not 0 <= target_class < scores.shape[1]:
        raise ValueError(f"target class {target_class} outside [0, {scores.shape[1]})")
    seed = np.zeros_like(scores)
    seed[0, target_class] = 1.0
    grads = engine.backward(tape, seed, wrt=("activations",))["activations"][act_id]
    return acts[act_id][0], grads[0], scores[0], target_class, layer


def _gradient_cam(core, method, model, image, request):
    image = _check_image(model, image)
    acts, grads, _, target, layer = activations_and_grads(model, image, request.layer, request.target_class)
    return to_heatmap(core(acts, grads), image.shape[1:], method, target, layer)


def gradcam(model, image, request: CamRequest | None = None) -> Heatmap:
    return _gradient_cam(gradcam_map, "gradcam", model, image, request or CamRequest("gradcam"))


def gradcam_pp(model, image, request: CamRequest | None = None) -> Heatmap:
    return _gradient_cam(gradcampp_map, "gradcam++", model, image, request or CamRequest("gradcam++"))


def layercam(model, image, request: CamRequest | None = None) -> Heatmap:
    return _gradient_cam(layercam_map, "layercam", model, image, request or CamRequest("layercam"))


def select_channels(acts, budget):
    """Indices of the ``budget`` highest-variance channels, ties to lower index."""
    var = acts.reshape(acts.shape[0], -1).var(axis=1)
    return np.argsort(-var, kind="stable")[:min(budget, acts.shape[0])]


def channel_masks(acts, shape):
    return np.stack([upsample(normalize(a)[0], shape) for a in acts])


def scorecam_fast(model, image, request: CamRequest | None = None) -> Heatmap:
    """ScoreCAM over the highest-variance channels, scored in one batched pass.

    Channel weights are the softmax of ``logit_c(image * mask_k) -
    logit_c(zeros)`` where ``mask_k`` is the normalized, upsampled channel.
    """
    request = request or CamRequest("scorecam-fast")
    image = _check_image(model, image)
    layer, act_id = resolve_layer(model, request.layer)
    path = model.path("encoder", "classifier", logits=True)
    scores, _, acts = engine.forward(path, image[None], capture={act_id})
    acts = acts[act_id][0]
    target = int(np.argmax(scores[0])) if request.target_class is None else int(request.target_class)
    if not 0 <= target < scores.shape[1]:
        raise ValueError(f"target class {target} outside [0, {scores.shape[1]})")
    chosen = select_channels(acts, request.channel_budget)
    masks = channel_masks(acts[chosen], image.shape[1:])
    batch = np.concatenate([image[None] * masks[:, None], np.zeros((1,) + image.shape)])
    out, _, _ = engine.forward(path, batch)
    s = out[:-1, target] - out[-1, target]
    w = softmax(s)
    raw = relu(np.tensordot(w, acts[chosen], axes=1))
    return to_heatmap(raw, image.shape[1:], "scorecam-fast", target, layer)


_DISPATCH = {"gradcam": gradcam, "gradcam++": gradcam_pp, "scorecam-fast": scorecam_fast, "layercam": layercam}


def explain(model, image, request: CamRequest) -> Heatmap:
    return _DISPATCH[request.method](model, image, request)


def colormap(h):
    """Five-stop linear ramp; ``[H,W]`` in [0,1] -> ``[3,H,W]``."""
    h = np.clip(np.asarray(h, dtype=np.float64), 0.0, 1.0) * (len(RAMP) - 1)
    lo = np.minimum(np.floor(h).astype(np.int64), len(RAMP) - 2)
    t = (h - lo)[..., None]
    rgb = RAMP[lo] * (1 - t) + RAMP[lo + 1] * t
    return np.moveaxis(rgb, -1, 0)


def overlay(image, heatmap, alpha=0.5):
    image = np.asarray(image, dtype=np.float64)
    values = heatmap.values if isinstance(heatmap, Heatmap) else np.asarray(heatmap, dtype=np.float64)
    if image.ndim != 3 or image.shape[1:] != values.shape:
        raise engine.ShapeError(f"heatmap {values.shape} does not match image {image.shape}")
    return np.clip((1 - alpha) * image + alpha * colormap(values), 0.0, 1.0)


def top_decile_mass_inside(values, box) -> float:
    """Share of heatmap mass among the top-10% pixels that falls inside ``box``.

    ``box`` is ``(top, left, bottom, right)`` with exclusive ends.
    """
    values = np.asarray(values, dtype=np.float64)
    thr = np.quantile(values, 0.9)
    sel = np.where(values >= thr, values, 0.0)
    total = sel.sum()
    if total <= 0:
        return 0.0
    t, l, b, r = (int(v) for v in box)
    return float(sel[t:b, l:r].sum() / total)
