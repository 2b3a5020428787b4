"""Independent reference computations used by the tests.

Nothing here calls into the analytic gradient or vectorized loss code; the
loss oracles are plain Python loops over pairs/triplets/anchors.
"""

import math

import numpy as np

from sclc import engine


def central_diff(f, x, h=1e-5):
    """Central finite-difference gradient of scalar ``f()`` w.r.t. array ``x`` (mutated in place)."""
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f()
        flat[i] = old - h
        down = f()
        flat[i] = old
        g[i] = (up - down) / (2 * h)
    return grad


def rel_error(a, b):
    """Norm-wise relative error ``|a - b| / max(|a|, |b|)``; 0 when both vanish."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if scale == 0 else float(np.linalg.norm(a - b) / scale)


def random_net(rng, c_in=2, c_mid=3, c_out=3, k=4, pool=True):
    """Two conv layers with ReLU, optional pooling, GAP and a dense head."""
    layers = [("c1", engine.conv2d(c_in, c_mid)), ("r1", engine.RELU)]
    if pool:
        layers.append(("p1", engine.MAXPOOL2))
    layers += [("c2", engine.conv2d(c_mid, c_out)), ("r2", engine.RELU), ("g", engine.GAP),
               ("d", engine.dense(c_out, k))]
    params = {}
    for lid, spec in layers:
        for name, shape in spec.param_shapes().items():
            params[f"{lid}.{name}"] = rng.normal(0, 0.5, size=shape)
            if name == "bias":
                params[f"{lid}.{name}"] = rng.normal(0, 0.1, size=shape)
    return engine.Sequential(layers, params)


def gradient_check(net, x, probe, capture=()):
    """Max relative error over every parameter and captured activation.

    The objective is ``sum(probe * net(x))``.
    """
    out, tape, acts = engine.forward(net, x, capture)
    grads = engine.backward(tape, probe)
    objective = lambda: float((engine.forward(net, x)[0] * probe).sum())
    errors = {}
    for name, p in net.params.items():
        errors[name] = rel_error(grads["parameters"][name], central_diff(objective, p))
    ids = [lid for lid, _ in net.layers]
    for lid in capture:
        a = acts[lid].copy()
        start = ids.index(lid) + 1
        tail = lambda: float((engine.forward(net, a, start=start)[0] * probe).sum())
        errors[f"act:{lid}"] = rel_error(grads["activations"][lid], central_diff(tail, a))
    return errors


# -- loss oracles --------------------------------------------------------------

def _dist(u, v):
    return math.sqrt(sum((a - b) ** 2 for a, b in zip(u, v)))


def _dot(u, v):
    return sum(a * b for a, b in zip(u, v))


def max_margin_bruteforce(z, labels, margin):
    z = [list(map(float, r)) for r in z]
    pos, neg = [], []
    for i in range(len(z)):
        for j in range(i + 1, len(z)):
            d = _dist(z[i], z[j])
            if labels[i] == labels[j]:
                pos.append(d * d)
            else:
                neg.append(max(0.0, margin - d) ** 2)
    total = 0.0
    if pos:
        total += math.fsum(pos) / len(pos)
    if neg:
        total += math.fsum(neg) / len(neg)
    return total


def triplet_bruteforce(z, labels, margin):
    z = [list(map(float, r)) for r in z]
    terms = []
    n = len(z)
    for a in range(n):
        for p in range(n):
            if p == a or labels[p] != labels[a]:
                continue
            for q in range(n):
                if labels[q] == labels[a]:
                    continue
                terms.append(max(0.0, _dist(z[a], z[p]) - _dist(z[a], z[q]) + margin))
    return math.fsum(terms) / len(terms)


def npairs_bruteforce(z, labels):
    z = [list(map(float, r)) for r in z]
    n = len(z)
    terms = []
    for i in range(n):
        pos = [j for j in range(n) if j != i and labels[j] == labels[i]]
        if not pos:
            continue
        p = min(pos)
        scores = {j: _dot(z[i], z[j]) for j in range(n) if j != i}
        denom = math.fsum(math.exp(s) for s in scores.values())
        terms.append(-math.log(math.exp(scores[p]) / denom))
    return math.fsum(terms) / len(terms)


def ntxent_bruteforce(z, labels, tau):
    z = [list(map(float, r)) for r in z]
    n = len(z)
    terms = []
    for i in range(n):
        pos = [j for j in range(n) if j != i and labels[j] == labels[i]]
        if not pos:
            continue
        denom = math.fsum(math.exp(_dot(z[i], z[a]) / tau) for a in range(n) if a != i)
        inner = [math.log(math.exp(_dot(z[i], z[p]) / tau) / denom) for p in pos]
        terms.append(-math.fsum(inner) / len(pos))
    return math.fsum(terms) / len(terms)


def weighted_ce_bruteforce(probs, labels, weights):
    terms = [weights[y] * -math.log(float(probs[i][y])) for i, y in enumerate(labels)]
    return math.fsum(terms) / len(labels)


# -- metrics oracle ------------------------------------------------------------

def report_bruteforce(y_true, y_pred, k):
    """Per-class (precision, recall, f1, support) by counting over label lists."""
    rows = []
    for c in range(k):
        tp = sum(1 for t, p in zip(y_true, y_pred) if t == c and p == c)
        fp = sum(1 for t, p in zip(y_true, y_pred) if t != c and p == c)
        fn = sum(1 for t, p in zip(y_true, y_pred) if t == c and p != c)
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        rows.append((prec, rec, f1, tp + fn))
    return rows


# -- CAM oracles ---------------------------------------------------------------

def bilinear_pointwise(m, height, width):
    """Half-pixel bilinear resize of a 2-D map, one output pixel at a time."""
    h, w = m.shape
    out = np.empty((height, width))
    for i in range(height):
        y = min(max((i + 0.5) * h / height - 0.5, 0.0), h - 1)
        y0 = int(math.floor(y))
        y1 = min(y0 + 1, h - 1)
        fy = y - y0
        for j in range(width):
            x = min(max((j + 0.5) * w / width - 0.5, 0.0), w - 1)
            x0 = int(math.floor(x))
            x1 = min(x0 + 1, w - 1)
            fx = x - x0
            top = m[y0, x0] * (1 - fx) + m[y0, x1] * fx
            bot = m[y1, x0] * (1 - fx) + m[y1, x1] * fx
            out[i, j] = top * (1 - fy) + bot * fy
    return out


def _minmax(m):
    lo, hi = float(m.min()), float(m.max())
    return np.zeros_like(m) if hi <= lo else (m - lo) / (hi - lo)


def scorecam_full(model, image, act_id, target):
    """Sequential ScoreCAM over every channel: one forward per masked image.

    Returns the raw (pre-normalization) map at layer resolution.
    """
    path = model.path("encoder", "classifier", logits=True)
    _, _, acts = engine.forward(path, image[None], capture={act_id})
    acts = acts[act_id][0]
    base = float(engine.forward(path, np.zeros((1,) + image.shape))[0][0, target])
    scores = []
    for a in acts:
        mask = bilinear_pointwise(_minmax(a), *image.shape[1:])
        scores.append(float(engine.forward(path, (image * mask)[None])[0][0, target]) - base)
    top = max(scores)
    exp = [math.exp(s - top) for s in scores]
    total = math.fsum(exp)
    raw = np.zeros(acts.shape[1:])
    for e, a in zip(exp, acts):
        raw += (e / total) * a
    return np.maximum(raw, 0.0)
