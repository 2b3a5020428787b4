"""Two-stage training (contrastive pretraining, frozen-encoder fine-tuning),
evaluation, explanation and the loss / cost-sensitivity experiments."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import cam, data, engine, losses, metrics, netpbm, plots
from . import model as M
from .augment import AugmentPolicy, augment_batch, resize_bilinear, sample_rng
from .cost import compute_class_weights

log = logging.getLogger(__name__)

DEFAULT_DATASET = {"kind": "synthetic", "classes": ["disc", "triangle", "ring", "cross"],
                   "counts": [200, 200, 200, 200]}


@dataclass
class RunConfig:
    dataset: dict = field(default_factory=lambda: dict(DEFAULT_DATASET))
    resolution: int = 32
    model: dict = field(default_factory=lambda: {"channels": [16, 32, 64], "projection": [64, 32]})
    loss: dict = field(default_factory=lambda: {"kind": "max-margin"})
    lr: float = 1e-3
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs_pretrain: int = 50
    epochs_finetune: int = 100
    batch_size: int = 32
    augment: bool = True
    train_fraction: float = 0.8
    cost_sensitive: bool = False
    cost_mode: str = "balanced"
    seed: int = 0
    out_dir: str = "runs"

    def __post_init__(self):
        if self.epochs_pretrain < 1 or self.epochs_finetune < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 2:
            raise ValueError("batch size must be >= 2")
        if self.resolution < 8:
            raise ValueError("resolution must be >= 8")
        if self.cost_mode not in ("uniform", "balanced"):
            raise ValueError("cost-mode must be 'uniform' or 'balanced'")
        self.loss_spec()
        kind = self.dataset.get("kind")
        if kind not in ("synthetic", "directory"):
            raise ValueError("dataset.kind must be 'synthetic' or 'directory'")
        _check_keys(self.model, {"channels", "projection"}, "model")
        _check_keys(self.loss, {"kind", "margin", "temperature"}, "loss")
        if kind == "synthetic":
            _check_keys(self.dataset, {"kind", "classes", "counts", "noise", "scale"}, "dataset")
        else:
            _check_keys(self.dataset, {"kind", "path"}, "dataset")

    # kebab-case JSON <-> snake-case fields
    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, value in raw.items():
            name = key.replace("-", "_")
            if name not in names or "_" in key:
                raise ValueError(f"unknown config key {key!r}; valid: {', '.join(sorted(_kebab(n) for n in names))}")
            kwargs[name] = value
        return cls(**kwargs)

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        raw = json.loads(Path(path).read_text())
        if not isinstance(raw, dict):
            raise ValueError("config must be a single JSON object")
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        return {_kebab(k): v for k, v in dataclasses.asdict(self).items()}

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)

    def loss_spec(self) -> losses.LossSpec:
        return losses.LossSpec(self.loss.get("kind", "max-margin"), self.loss.get("margin"),
                               self.loss.get("temperature", 0.1))

    def optimizer(self) -> M.Optimizer:
        return M.Optimizer(self.lr, self.beta1, self.beta2, self.eps, self.weight_decay)

    def model_spec(self, n_classes: int) -> M.ModelSpec:
        return M.ModelSpec.default(n_classes, tuple(self.model.get("channels", (16, 32, 64))),
                                   tuple(self.model.get("projection", (64, 32))))


REFERENCE_PROTOCOL = {"resolution": 224, "lr": 2e-5, "epochs-pretrain": 50, "epochs-finetune": 220, "batch-size": 64}


def _kebab(name: str) -> str:
    return name.replace("_", "-")


def _check_keys(d: dict, allowed: set, where: str):
    extra = set(d) - allowed
    if extra:
        raise ValueError(f"unknown {where} keys {sorted(extra)}; valid: {sorted(allowed)}")


def load_dataset(config: RunConfig) -> data.LabeledDataset:
    ds = config.dataset
    if ds["kind"] == "synthetic":
        kw = {"classes": tuple(ds.get("classes", DEFAULT_DATASET["classes"])),
              "counts": tuple(ds.get("counts", DEFAULT_DATASET["counts"])),
              "resolution": config.resolution}
        if "noise" in ds:
            kw["noise"] = ds["noise"]
        if "scale" in ds:
            kw["scale"] = tuple(ds["scale"])
        return data.generate(data.SynthSpec(**kw), config.seed)
    dataset = data.load_directory(ds["path"])
    if dataset.images.shape[2:] != (config.resolution,) * 2:
        dataset.images = np.stack([resize_bilinear(im, config.resolution, config.resolution)
                                   for im in dataset.images])
    return dataset


def splits(config: RunConfig, dataset=None):
    dataset = load_dataset(config) if dataset is None else dataset
    return data.split_stratified(dataset, config.train_fraction, config.seed)


def _epoch_seed(seed: int, stage: str, epoch: int) -> int:
    return int(sample_rng(seed, {"pretrain": 1, "finetune": 2}[stage], epoch).integers(2 ** 63))


def write_curve(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train-loss", "test-loss"])
        for epoch, tr, te in rows:
            w.writerow([epoch, repr(float(tr)), repr(float(te))])


def read_curve(path):
    with open(path, newline="") as fh:
        return [(int(r["epoch"]), float(r["train-loss"]), float(r["test-loss"])) for r in csv.DictReader(fh)]


# -- stage 1: contrastive pretraining -----------------------------------------

def contrastive_step(model: M.Model, images, labels, spec: losses.LossSpec):
    """Loss and encoder+projection gradients for one batch."""
    path = model.path("encoder", "projection")
    h, tape, _ = engine.forward(path, images)
    z, norms, degenerate = M.l2_normalize(h)
    value, dz = spec(z, labels)
    dh = M.l2_normalize_backward(z, norms, degenerate, dz)
    grads = engine.backward(tape, dh, wrt=("parameters",))["parameters"]
    return value, grads


def contrastive_loss(model: M.Model, dataset: data.LabeledDataset, spec, batch_size: int, seed: int = 0) -> float:
    """Mean batch loss over ``dataset`` without augmentation.

    Batches follow one fixed seeded order so that every call sees the same
    batch composition.
    """
    vals = []
    for x, y, _ in data.batches(dataset, batch_size, seed):
        if len(y) < 2:
            continue
        z = M.project(model, M.embed(model, x))
        try:
            vals.append(spec(z, y)[0])
        except losses.DegenerateBatchError as exc:
            warnings.warn(f"skipping batch: {exc}")
    return float(np.mean(vals)) if vals else float("nan")


@dataclass
class PretrainResult:
    model: M.Model
    curve: list
    checkpoint: Path | None


def pretrain(config: RunConfig, out_dir=None, dataset=None) -> PretrainResult:
    """Train encoder + projection head with the configured contrastive loss."""
    train, test = splits(config, dataset)
    model = M.init(config.model_spec(train.n_classes), config.seed)
    spec = config.loss_spec()
    if spec.kind == "cross-entropy":
        raise ValueError("pretraining needs a contrastive loss")
    opt = config.optimizer()
    policy = AugmentPolicy(target=(config.resolution, config.resolution))
    curve = []
    for epoch in range(1, config.epochs_pretrain + 1):
        vals = []
        for images, labels, idx in data.batches(train, config.batch_size, _epoch_seed(config.seed, "pretrain", epoch)):
            if len(idx) < 2:
                continue
            if config.augment:
                images = augment_batch(images, policy, config.seed, [(epoch, int(i)) for i in idx])
            try:
                value, grads = contrastive_step(model, images, labels, spec)
            except losses.DegenerateBatchError as exc:
                warnings.warn(f"epoch {epoch}: skipping batch: {exc}")
                continue
            opt.step(model, grads)
            vals.append(value)
        test_loss = contrastive_loss(model, test, spec, config.batch_size, config.seed)
        curve.append((epoch, float(np.mean(vals)) if vals else float("nan"), test_loss))
        log.info("pretrain epoch %d  train %.5f  test %.5f", *curve[-1])
    model.stage = "pretrained"
    ckpt = None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        ckpt = out / "pretrained.sclc"
        M.save_checkpoint(model, ckpt)
        write_curve(out / "pretrain_loss.csv", curve)
        plots.loss_curve(curve, out / "pretrain_loss.png", title=f"contrastive pretraining ({spec.kind})")
    return PretrainResult(model, curve, ckpt)


# -- stage 2: frozen-encoder classifier --------------------------------------

def embed_all(model: M.Model, images, batch_size: int = 128) -> np.ndarray:
    return np.concatenate([M.embed(model, images[s:s + batch_size]) for s in range(0, len(images), batch_size)])


def _classifier_step(model, emb, labels, weights):
    path = model.path("classifier", logits=True)
    scores, tape, _ = engine.forward(path, emb)
    value, dlogits = losses.weighted_cross_entropy(engine.softmax(scores), labels, weights)
    grads = engine.backward(tape, dlogits, wrt=("parameters",))["parameters"]
    return value, grads


def _classifier_loss(model, emb, labels, weights):
    scores, _, _ = engine.forward(model.path("classifier", logits=True), emb)
    return losses.weighted_cross_entropy(engine.softmax(scores), labels, weights)[0]


@dataclass
class FinetuneResult:
    model: M.Model
    curve: list
    report: metrics.ClassificationReport
    confusion: np.ndarray
    weights: np.ndarray
    checkpoint: Path | None


def finetune(config: RunConfig, pretrained, out_dir=None, dataset=None) -> FinetuneResult:
    """Fit the classifier head on frozen encoder features.

    ``pretrained`` is a checkpoint path or a ``Model`` at the pretrained stage
    (models are copied, never mutated). The encoder is frozen, so features are
    computed once per split.
    """
    if isinstance(pretrained, M.Model):
        model = M.parse_checkpoint(M.checkpoint_bytes(pretrained))
    else:
        model = M.load_checkpoint(pretrained)
    if model.stage != "pretrained":
        raise ValueError(f"fine-tuning needs a pretrained checkpoint, got stage {model.stage!r}")
    train, test = splits(config, dataset)
    if model.n_classes != train.n_classes:
        raise ValueError(f"checkpoint has {model.n_classes} classes, dataset has {train.n_classes}")
    M.freeze_encoder(model)
    counts = train.counts()
    mode = config.cost_mode if config.cost_sensitive else "uniform"
    weights = compute_class_weights(counts, mode, class_names=train.class_names).as_array()
    emb_train = embed_all(model, train.images)
    emb_test = embed_all(model, test.images)
    opt = config.optimizer()
    curve = []
    for epoch in range(1, config.epochs_finetune + 1):
        vals, sizes = [], []
        for _, labels, idx in data.batches(train, config.batch_size, _epoch_seed(config.seed, "finetune", epoch)):
            value, grads = _classifier_step(model, emb_train[idx], labels, weights)
            opt.step(model, grads)
            vals.append(value)
            sizes.append(len(idx))
        train_loss = float(np.average(vals, weights=sizes))
        test_loss = _classifier_loss(model, emb_test, test.labels, weights) if len(test) else float("nan")
        curve.append((epoch, train_loss, test_loss))
    model.stage = "finetuned"
    model.frozen.clear()
    rep, cm = _report_from_embeddings(model, emb_test, test)
    ckpt = None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        ckpt = out / "finetuned.sclc"
        M.save_checkpoint(model, ckpt)
        write_curve(out / "finetune_loss.csv", curve)
        plots.loss_curve(curve, out / "finetune_loss.png",
                         title="classifier fine-tuning" + (" (cost-sensitive)" if config.cost_sensitive else ""))
        write_report(rep, cm, out)
    return FinetuneResult(model, curve, rep, cm, weights, ckpt)


def _report_from_embeddings(model, emb, dataset):
    scores, _, _ = engine.forward(model.path("classifier", logits=True), emb)
    pred = scores.argmax(axis=1)
    cm = metrics.confusion_matrix(dataset.labels, pred, dataset.n_classes)
    return metrics.report(cm, dataset.class_names), cm


def evaluate(checkpoint, dataset: data.LabeledDataset, out_dir=None):
    """Classification report and confusion matrix of a fine-tuned model."""
    model = checkpoint if isinstance(checkpoint, M.Model) else M.load_checkpoint(checkpoint)
    if model.stage != "finetuned":
        raise ValueError(f"evaluation needs a finetuned checkpoint, got stage {model.stage!r}")
    if model.n_classes != dataset.n_classes:
        raise ValueError(f"checkpoint has {model.n_classes} classes, dataset has {dataset.n_classes}")
    rep, cm = _report_from_embeddings(model, embed_all(model, dataset.images), dataset)
    if out_dir is not None:
        write_report(rep, cm, Path(out_dir))
    return rep, cm


def write_report(rep: metrics.ClassificationReport, cm, out: Path, stem: str = "report") -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{stem}.txt").write_text(rep.to_text())
    (out / f"{stem}.csv").write_text(rep.to_csv())
    with open(out / f"{stem}_confusion.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["true\\pred", *rep.class_names])
        for name, row in zip(rep.class_names, cm):
            w.writerow([name, *map(int, row)])
    plots.confusion(cm, rep.class_names, out / f"{stem}_confusion.png")


# -- stage 3: explanation ------------------------------------------------------

def explain(checkpoint, image, methods=("gradcam",), layer=None, target_class=None,
            out_dir=None, class_names=None, channel_budget: int = 16, resolution=None):
    """Heatmaps for one image. ``image`` is a PPM path or a ``[3,H,W]`` array.

    Writes ``heatmap_<method>.pgm``, ``overlay_<method>.ppm``, ``explain.json``
    and a side-by-side panel figure when ``out_dir`` is given.
    """
    model = checkpoint if isinstance(checkpoint, M.Model) else M.load_checkpoint(checkpoint)
    if model.stage != "finetuned":
        raise ValueError(f"explanations need a finetuned checkpoint, got stage {model.stage!r}")
    if isinstance(methods, str):
        methods = (methods,)
    for m in methods:
        if m not in cam.METHODS:
            raise ValueError(f"unknown CAM method {m!r}; valid: {', '.join(cam.METHODS)}")
    cam.resolve_layer(model, layer)
    source = str(image) if isinstance(image, (str, Path)) else None
    img = netpbm.read(image) if source else np.asarray(image, dtype=np.float64)
    if img.ndim != 3:
        raise ValueError("expected a colour image")
    if resolution and img.shape[1:] != (resolution, resolution):
        img = resize_bilinear(img, resolution, resolution)
    probs = M.predict_proba(model, img[None])[0]
    pred = int(np.argmax(probs))
    maps = {}
    for m in methods:
        maps[m] = cam.explain(model, img, cam.CamRequest(m, layer, target_class, channel_budget))
    names = class_names or [str(i) for i in range(model.n_classes)]
    record = {
        "image": source,
        "predicted-class": pred,
        "predicted-name": names[pred],
        "probability": float(probs[pred]),
        "target-class": int(next(iter(maps.values())).target_class),
        "layer": next(iter(maps.values())).layer,
        "methods": {m: {"empty": h.empty, "heatmap": f"heatmap_{_slug(m)}.pgm",
                        "overlay": f"overlay_{_slug(m)}.ppm"} for m, h in maps.items()},
    }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for m, h in maps.items():
            netpbm.write(out / f"heatmap_{_slug(m)}.pgm", h.values)
            netpbm.write(out / f"overlay_{_slug(m)}.ppm", cam.overlay(img, h))
        (out / "explain.json").write_text(json.dumps(record, indent=2) + "\n")
        plots.cam_panel(img, maps, out / "explain.png", title=f"predicted {names[pred]} ({probs[pred]:.2f})")
    return record, maps


def _slug(method: str) -> str:
    return method.replace("+", "p")


# -- experiments ---------------------------------------------------------------

def experiment_losses(config: RunConfig, out_dir=None, kinds=losses.CONTRASTIVE):
    """Pretrain once per contrastive loss from the same seed and dataset."""
    dataset = load_dataset(config)
    curves = {}
    for kind in kinds:
        cfg = config.replace(loss={**config.loss, "kind": kind})
        sub = None if out_dir is None else Path(out_dir) / kind
        curves[kind] = pretrain(cfg, sub, dataset).curve
    if out_dir is not None:
        out = Path(out_dir)
        with open(out / "loss_curves.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["loss", "epoch", "train-loss", "test-loss"])
            for kind, curve in curves.items():
                for epoch, tr, te in curve:
                    w.writerow([kind, epoch, repr(tr), repr(te)])
        plots.loss_grid(curves, out / "loss_curves.png")
    return curves


def minority_classes(counts) -> np.ndarray:
    """Classes with fewer than half the samples of the largest class."""
    counts = np.asarray(counts)
    return np.flatnonzero(counts < counts.max() / 2)


@dataclass
class CostPair:
    seed: int
    unweighted: metrics.ClassificationReport
    weighted: metrics.ClassificationReport
    minority: np.ndarray

    def minority_recall(self, which: str) -> float:
        rep = self.unweighted if which == "unweighted" else self.weighted
        return float(rep.recall[self.minority].mean()) if self.minority.size else float("nan")

    def macro_f1(self, which: str) -> float:
        rep = self.unweighted if which == "unweighted" else self.weighted
        return rep.macro()[2]

    @property
    def improved(self) -> bool:
        return (self.minority_recall("weighted") > self.minority_recall("unweighted")
                and self.macro_f1("weighted") > self.macro_f1("unweighted"))


def experiment_cost(config: RunConfig, out_dir=None, repeats: int = 5):
    """Paired runs per seed: one pretraining, then unweighted and balanced fine-tuning."""
    pairs = []
    for r in range(repeats):
        cfg = config.replace(seed=config.seed + r)
        dataset = load_dataset(cfg)
        sub = None if out_dir is None else Path(out_dir) / f"seed-{cfg.seed}"
        pre = pretrain(cfg, sub, dataset)
        plain = finetune(cfg.replace(cost_sensitive=False), pre.model,
                         None if sub is None else sub / "unweighted", dataset)
        costed = finetune(cfg.replace(cost_sensitive=True, cost_mode="balanced"), pre.model,
                          None if sub is None else sub / "weighted", dataset)
        train, _ = splits(cfg, dataset)
        pair = CostPair(cfg.seed, plain.report, costed.report, minority_classes(train.counts()))
        pairs.append(pair)
        if sub is not None:
            (sub / "side_by_side.txt").write_text(metrics.side_by_side(plain.report, costed.report))
        log.info("seed %d minority recall %.3f -> %.3f, macro F1 %.3f -> %.3f", cfg.seed,
                 pair.minority_recall("unweighted"), pair.minority_recall("weighted"),
                 pair.macro_f1("unweighted"), pair.macro_f1("weighted"))
    if out_dir is not None:
        out = Path(out_dir)
        with open(out / "cost_summary.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["seed", "minority-recall-unweighted", "minority-recall-weighted",
                        "macro-f1-unweighted", "macro-f1-weighted", "accuracy-unweighted",
                        "accuracy-weighted", "improved"])
            for p in pairs:
                w.writerow([p.seed, f"{p.minority_recall('unweighted'):.6f}", f"{p.minority_recall('weighted'):.6f}",
                            f"{p.macro_f1('unweighted'):.6f}", f"{p.macro_f1('weighted'):.6f}",
                            f"{p.unweighted.accuracy:.6f}", f"{p.weighted.accuracy:.6f}", int(p.improved)])
        (out / "side_by_side.txt").write_text(
            "\n".join(f"seed {p.seed}\n{metrics.side_by_side(p.unweighted, p.weighted)}" for p in pairs))
        plots.cost_comparison(pairs, out / "cost_summary.png")
    return pairs
