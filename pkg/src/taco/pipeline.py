"""Pre-training, linear evaluation, fine-tuning and attribute metrics."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
from torch.utils.data import DataLoader, Dataset

from .augment import AugmentConfig, canvas_fit, make_view_triple
from .datagen import ATTRIBUTES, DatasetManifest, ManifestEntry
from .errors import ConfigError, DataError, TrainingError
from .model import TacoModel, encoder_fingerprint, images_to_tensor, load_checkpoint, save_checkpoint
from .scoring import LossConfig, finetune_loss, labels_to_targets, total_loss

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 32
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    holdout_fraction: float = 0.1
    linear_steps: int = 300
    linear_lr: float = 0.01
    finetune_epochs: int = 20
    finetune_lr: float = 0.05
    early_stopping: int = 0  # patience in epochs, 0 disables
    workers: int = 0
    random_init: bool = False
    manifest: Optional[str] = None
    checkpoint: Optional[str] = None

    def validate(self, loss: Optional[LossConfig] = None):
        if self.epochs < 1 or self.finetune_epochs < 1 or self.linear_steps < 1:
            raise ConfigError("pipeline epoch/step budgets must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("pipeline.batch_size must be >= 1")
        if loss is not None and loss.psm_enabled and self.batch_size < 2:
            raise ConfigError("pipeline.batch_size must be >= 2 when loss.psm_enabled")
        if not 0.0 < self.holdout_fraction < 1.0:
            raise ConfigError("pipeline.holdout_fraction must be in (0, 1)")
        if self.lr <= 0 or self.linear_lr <= 0 or self.finetune_lr <= 0:
            raise ConfigError("learning rates must be > 0")


def cosine_lr(step: int, total_steps: int, base_lr: float) -> float:
    """Cosine annealing from ``base_lr`` at step 0 to 0 at the last step."""
    if total_steps <= 1:
        return base_lr
    return 0.5 * base_lr * (1.0 + math.cos(math.pi * step / (total_steps - 1)))


def seed_everything(seed: int, deterministic: bool = False):
    torch.manual_seed(seed)
    np.random.seed(seed % (2**32))
    if deterministic:
        torch.use_deterministic_algorithms(True)


# ------------------------------------------------------------------ data


def labeled_indices(manifest: DatasetManifest) -> list[int]:
    """Entries usable for supervised work: mixed segments have no single label."""
    return [i for i, e in enumerate(manifest.entries) if not e.is_mixed]


def split_indices(manifest: DatasetManifest, indices: Sequence[int],
                  holdout_fraction: float = 0.1) -> tuple[list[int], list[int]]:
    """Deterministic train / held-out split keyed on a hash of (index, image)."""
    train, held = [], []
    for i in indices:
        digest = hashlib.sha256(f"{i}:{manifest.entries[i].image}".encode()).digest()
        u = int.from_bytes(digest[:8], "big") / 2**64
        (held if u < holdout_fraction else train).append(i)
    if not held and len(train) > 1:
        held.append(train.pop())
    if not train:
        raise DataError("training split is empty")
    return train, held


def check_disjoint(manifest: DatasetManifest, train: Sequence[int], held: Sequence[int]):
    a = {manifest.entries[i].image for i in train}
    b = {manifest.entries[i].image for i in held}
    overlap = a & b
    if set(train) & set(held) or overlap:
        raise DataError(f"train and held-out splits overlap ({len(overlap)} shared images)")


class ImageCache:
    def __init__(self, manifest: DatasetManifest):
        self.manifest = manifest
        self._cache: dict[int, np.ndarray] = {}

    def image(self, i: int) -> np.ndarray:
        if i not in self._cache:
            self._cache[i] = self.manifest.load_image(self.manifest.entries[i])
        return self._cache[i]

    def sample(self, i: int):
        from .datagen import TextSegmentSample
        e = self.manifest.entries[i]
        return TextSegmentSample(self.image(i), e.chars, e.text, e.segment_label)


class ViewTripleDataset(Dataset):
    """Augmented triples; randomness keyed on (seed, epoch, index)."""

    def __init__(self, manifest: DatasetManifest, augment: AugmentConfig, seed: int,
                 indices: Optional[Sequence[int]] = None):
        self.cache = ImageCache(manifest)
        self.augment = augment
        self.seed = seed
        self.indices = list(range(len(manifest.entries))) if indices is None else list(indices)
        self.epoch = 0

    def __len__(self):
        return len(self.indices)

    def __getitem__(self, k):
        i = self.indices[k]
        rng = np.random.default_rng([self.seed, self.epoch, i])
        t = make_view_triple(self.cache.sample(i), rng, self.augment, source_id=i)
        views = [torch.from_numpy(np.ascontiguousarray(v)).permute(2, 0, 1)
                 for v in (t.view_i, t.view_j, t.view_k)]
        return views[0], views[1], views[2], i


def canvas_images(manifest: DatasetManifest, indices: Sequence[int], canvas) -> torch.Tensor:
    """Augmentation-free inputs: each image fitted onto the canvas."""
    cache = ImageCache(manifest)
    return images_to_tensor([canvas_fit(cache.image(i), canvas) for i in indices])


def targets_for(manifest: DatasetManifest, indices: Sequence[int]) -> torch.Tensor:
    labels = []
    for i in indices:
        e = manifest.entries[i]
        if e.is_mixed:
            raise DataError(f"entry {i} is a mixed-attribute segment and has no single label")
        labels.append(e.segment_label)
    return labels_to_targets(labels)


# --------------------------------------------------------------- metrics


@dataclass
class AttributeMetrics:
    precision: float
    recall: float
    f1: float
    accuracy: float
    confusion: list[list[int]]

    def to_dict(self) -> dict:
        return {"precision": self.precision, "recall": self.recall, "f1": self.f1,
                "accuracy": self.accuracy, "confusion": self.confusion}


@dataclass
class MetricsReport:
    attributes: dict[str, AttributeMetrics]
    average_accuracy: float
    n_samples: int = 0

    def __getitem__(self, attr: str) -> AttributeMetrics:
        return self.attributes[attr]

    def to_dict(self) -> dict:
        out = {a: m.to_dict() for a, m in self.attributes.items()}
        out["average_accuracy"] = self.average_accuracy
        out["n_samples"] = self.n_samples
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        attrs = {a: AttributeMetrics(**d[a]) for a in ATTRIBUTES if a in d}
        return cls(attrs, d["average_accuracy"], d.get("n_samples", 0))


def _safe_ratio(num: int, den: int, vacuous: bool) -> float:
    if den > 0:
        return 100.0 * num / den
    return 100.0 if vacuous else 0.0


def harmonic(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def confusion_matrix(y_true, y_pred, num_classes: int) -> np.ndarray:
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true), np.asarray(y_pred)), 1)
    return cm


def binary_metrics(cm: np.ndarray) -> tuple[float, float]:
    """Precision and recall of the positive class (index 1), in percent."""
    tp, fp, fn = int(cm[1, 1]), int(cm[0, 1]), int(cm[1, 0])
    precision = _safe_ratio(tp, tp + fp, vacuous=fn == 0)
    recall = _safe_ratio(tp, tp + fn, vacuous=fp == 0)
    return precision, recall


def macro_metrics(cm: np.ndarray) -> tuple[float, float]:
    """Macro precision/recall over classes seen in labels or predictions."""
    present = [c for c in range(cm.shape[0]) if cm[c, :].sum() or cm[:, c].sum()]
    if not present:
        return 0.0, 0.0
    ps, rs = [], []
    for c in present:
        tp = int(cm[c, c])
        fp = int(cm[:, c].sum()) - tp
        fn = int(cm[c, :].sum()) - tp
        ps.append(_safe_ratio(tp, tp + fp, vacuous=fn == 0))
        rs.append(_safe_ratio(tp, tp + fn, vacuous=fp == 0))
    return float(np.mean(ps)), float(np.mean(rs))


def compute_metrics(y_true: dict, y_pred: dict, sizes: dict[str, int]) -> MetricsReport:
    """Per-attribute precision/recall/F1 (percent) and the six-way mean accuracy.

    F1 is the harmonic mean of the reported precision and recall.
    """
    attrs = {}
    n = 0
    for a in ATTRIBUTES:
        t = np.asarray(y_true[a])
        p = np.asarray(y_pred[a])
        n = len(t)
        if n == 0:
            raise DataError("cannot compute metrics on an empty set")
        cm = confusion_matrix(t, p, sizes[a])
        prec, rec = binary_metrics(cm) if sizes[a] == 2 else macro_metrics(cm)
        acc = 100.0 * float((t == p).mean())
        attrs[a] = AttributeMetrics(prec, rec, harmonic(prec, rec), acc, cm.tolist())
    avg = float(np.mean([m.accuracy for m in attrs.values()]))
    return MetricsReport(attrs, avg, n)


@torch.no_grad()
def extract_features(model: TacoModel, images: torch.Tensor, batch_size: int = 128) -> torch.Tensor:
    model.eval()
    return torch.cat([model.encode(images[s:s + batch_size])
                      for s in range(0, len(images), batch_size)])


@torch.no_grad()
def predict(model: TacoModel, images: torch.Tensor, batch_size: int = 128) -> dict[str, np.ndarray]:
    model.eval()
    outs = {a: [] for a in ATTRIBUTES}
    for s in range(0, len(images), batch_size):
        logits = model(images[s:s + batch_size])
        for a in ATTRIBUTES:
            outs[a].append(logits[a].argmax(1))
    return {a: torch.cat(v).numpy() for a, v in outs.items()}


def _targets_dict(targets: torch.Tensor) -> dict[str, np.ndarray]:
    return {a: targets[:, c].numpy() for c, a in enumerate(ATTRIBUTES)}


def evaluate(model, manifest: DatasetManifest, indices: Optional[Sequence[int]] = None) -> MetricsReport:
    """Metrics of ``model`` (or a checkpoint path) on the labeled entries of ``manifest``."""
    if not isinstance(model, TacoModel):
        model = load_checkpoint(model)
    if indices is None:
        indices = labeled_indices(manifest)
    if len(indices) == 0:
        raise DataError("manifest has no labeled (non-mixed) entries to evaluate")
    _check_tables(model, manifest)
    images = canvas_images(manifest, indices, model.canvas)
    preds = predict(model, images)
    return compute_metrics(_targets_dict(targets_for(manifest, indices)), preds, model.heads.sizes)


def _check_tables(model: TacoModel, manifest: DatasetManifest):
    if len(manifest.font_table) != model.num_fonts:
        raise DataError(f"manifest has {len(manifest.font_table)} fonts, "
                        f"checkpoint expects {model.num_fonts}")


# -------------------------------------------------------------- training


@dataclass
class PretrainResult:
    model: TacoModel
    checkpoint: Optional[Path]
    curve: list[dict] = field(default_factory=list)

    def epoch_totals(self) -> list[float]:
        return [r["total"] for r in self.curve]


def build_model(cfg, manifest: DatasetManifest) -> TacoModel:
    return TacoModel(cfg.model, cfg.maem, manifest.num_fonts, manifest.font_table,
                     manifest.color_table, canvas=cfg.augment.canvas)


def _sgd(params, lr, cfg: TrainConfig):
    return torch.optim.SGD(params, lr=lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay)


def write_curve(path: Path, curve: Sequence[dict]):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["epoch", "step", "l_cos", "kl", "total", "lr"])
        w.writeheader()
        for row in curve:
            w.writerow({k: row[k] for k in w.fieldnames})


def pretrain(cfg, manifest: DatasetManifest, out_dir=None) -> PretrainResult:
    """Contrastive pre-training on augmented view triples.

    ``cfg`` is a :class:`taco.config.RunConfig`. With ``out_dir`` set, writes
    ``loss_curve.csv`` (one row per epoch) and ``pretrain.pt``.
    """
    tc: TrainConfig = cfg.pipeline
    lc: LossConfig = cfg.loss
    if not manifest.entries:
        raise DataError("manifest is empty")
    seed_everything(cfg.seed, cfg.deterministic)
    model = build_model(cfg, manifest)

    data = ViewTripleDataset(manifest, cfg.augment, cfg.seed)
    n = len(data)
    batch = min(tc.batch_size, n)
    if lc.psm_enabled and batch < 2:
        raise DataError("pair scoring needs at least 2 samples per batch")
    workers = 0 if cfg.deterministic else tc.workers
    order_gen = torch.Generator().manual_seed(cfg.seed)
    loader = DataLoader(data, batch_size=batch, shuffle=True, drop_last=True,
                        generator=order_gen, num_workers=workers,
                        persistent_workers=False)
    steps_per_epoch = len(loader)
    total_steps = tc.epochs * steps_per_epoch
    opt = _sgd(model.parameters(), tc.lr, tc)
    out_dir = Path(out_dir) if out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)

    curve, step = [], 0
    for epoch in range(tc.epochs):
        data.epoch = epoch
        model.train()
        sums = {"l_cos": 0.0, "kl": 0.0, "total": 0.0}
        lr = tc.lr
        for b, (vi, vj, vk, idx) in enumerate(loader):
            lr = cosine_lr(step, total_steps, tc.lr)
            for g in opt.param_groups:
                g["lr"] = lr
            N = vi.shape[0]
            z = model.project(model.encode(torch.cat([vi, vj, vk])))
            z_i, z_j, z_k = z[:N], z[N:2 * N], z[2 * N:]
            loss = total_loss(z_i, z_j, z_k, model.predictor, lc.tau, lc.lam,
                              lc.score_grad_mode, lc.psm_enabled)
            if not torch.isfinite(loss.total):
                dump = None
                if out_dir:
                    dump = out_dir / f"nan_batch_e{epoch}_b{b}.pt"
                    torch.save({"views": (vi, vj, vk), "indices": idx}, dump)
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b} "
                                    f"(samples {idx.tolist()}); dump: {dump}")
            opt.zero_grad(set_to_none=True)
            loss.total.backward()
            opt.step()
            for k, v in loss.floats().items():
                sums[k] += v
            step += 1
        row = {"epoch": epoch + 1, "step": step, "lr": lr}
        row.update({k: v / max(1, steps_per_epoch) for k, v in sums.items()})
        curve.append(row)
        logger.info("pretrain epoch %d: total %.4f (l_cos %.4f, kl %.4f)",
                    epoch + 1, row["total"], row["l_cos"], row["kl"])

    ckpt = None
    if out_dir:
        write_curve(out_dir / "loss_curve.csv", curve)
        ckpt = save_checkpoint(model, out_dir / "pretrain.pt",
                               {"stage": "pretrain", "seed": cfg.seed, "epochs": tc.epochs})
    return PretrainResult(model, ckpt, curve)


def _load_or_init(cfg, manifest: DatasetManifest, checkpoint=None, random_init=False) -> TacoModel:
    if random_init or checkpoint is None:
        if not random_init:
            raise ConfigError("a checkpoint is required unless random_init is set")
        seed_everything(cfg.seed)
        return build_model(cfg, manifest)
    model = checkpoint if isinstance(checkpoint, TacoModel) else load_checkpoint(checkpoint)
    _check_tables(model, manifest)
    return model


@dataclass
class LinearEvalResult:
    report: MetricsReport
    train_report: MetricsReport
    fingerprint_before: str
    fingerprint_after: str


def linear_eval(cfg, manifest: DatasetManifest, checkpoint=None,
                random_init: Optional[bool] = None) -> LinearEvalResult:
    """Train only the attribute heads on frozen, standardized backbone features."""
    tc: TrainConfig = cfg.pipeline
    random_init = tc.random_init if random_init is None else random_init
    model = _load_or_init(cfg, manifest, checkpoint, random_init)
    train_idx, held_idx = split_indices(manifest, labeled_indices(manifest), tc.holdout_fraction)
    check_disjoint(manifest, train_idx, held_idx)

    before = encoder_fingerprint(model)
    for p in model.encoder.parameters():
        p.requires_grad_(False)
    feats_tr = extract_features(model, canvas_images(manifest, train_idx, model.canvas))
    feats_ho = extract_features(model, canvas_images(manifest, held_idx, model.canvas))
    mean = feats_tr.mean(0, keepdim=True)
    std = feats_tr.std(0, keepdim=True).clamp_min(1e-6)
    x_tr, x_ho = (feats_tr - mean) / std, (feats_ho - mean) / std
    y_tr, y_ho = targets_for(manifest, train_idx), targets_for(manifest, held_idx)

    torch.manual_seed(cfg.seed)
    heads = type(model.heads)(model.cfg.embedding_dim, model.num_fonts, len(model.color_table))
    opt = torch.optim.Adam(heads.parameters(), lr=tc.linear_lr, weight_decay=1e-4)
    for _ in range(tc.linear_steps):
        opt.zero_grad(set_to_none=True)
        finetune_loss(heads(x_tr), y_tr).backward()
        opt.step()
    after = encoder_fingerprint(model)
    if after != before:
        raise RuntimeError("encoder parameters changed during linear evaluation")

    with torch.no_grad():
        pred_ho = {a: v.argmax(1).numpy() for a, v in heads(x_ho).items()}
        pred_tr = {a: v.argmax(1).numpy() for a, v in heads(x_tr).items()}
    report = compute_metrics(_targets_dict(y_ho), pred_ho, heads.sizes)
    train_report = compute_metrics(_targets_dict(y_tr), pred_tr, heads.sizes)
    return LinearEvalResult(report, train_report, before, after)


def train_supervised(model: TacoModel, images: torch.Tensor, targets: torch.Tensor,
                     epochs: int, batch_size: int, lr: float, cfg: TrainConfig, seed: int = 0,
                     val: Optional[tuple[torch.Tensor, torch.Tensor]] = None,
                     patience: int = 0) -> list[float]:
    """Whole-network training with the weighted attribute loss; returns epoch losses."""
    n = len(images)
    batch_size = min(batch_size, n)
    steps_per_epoch = max(1, n // batch_size)
    total = epochs * steps_per_epoch
    opt = _sgd(model.parameters(), lr, cfg)
    gen = torch.Generator().manual_seed(seed)
    history, best, bad, step = [], -1.0, 0, 0
    best_state = None
    for epoch in range(epochs):
        model.train()
        perm = torch.randperm(n, generator=gen)
        running = 0.0
        for s in range(steps_per_epoch):
            idx = perm[s * batch_size:(s + 1) * batch_size]
            for g in opt.param_groups:
                g["lr"] = cosine_lr(step, total, lr)
            loss = finetune_loss(model(images[idx]), targets[idx])
            if not torch.isfinite(loss):
                raise TrainingError(f"non-finite fine-tuning loss at epoch {epoch}, batch {s}")
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            running += float(loss.detach())
            step += 1
        history.append(running / steps_per_epoch)
        if val is not None and patience > 0:
            preds = predict(model, val[0])
            acc = float(np.mean([(preds[a] == val[1][:, c].numpy()).mean()
                                 for c, a in enumerate(ATTRIBUTES)]))
            if acc > best:
                best, bad = acc, 0
                best_state = {k: v.clone() for k, v in model.state_dict().items()}
            else:
                bad += 1
                if bad >= patience:
                    break
    if best_state is not None:
        model.load_state_dict(best_state)
    return history


@dataclass
class FinetuneResult:
    model: TacoModel
    report: MetricsReport
    checkpoint: Optional[Path]
    history: list[float]


def finetune(cfg, manifest: DatasetManifest, checkpoint=None, out_dir=None,
             random_init: Optional[bool] = None) -> FinetuneResult:
    """Train the whole network on canvas-fitted (unaugmented) images."""
    tc: TrainConfig = cfg.pipeline
    random_init = tc.random_init if random_init is None else random_init
    model = _load_or_init(cfg, manifest, checkpoint, random_init)
    train_idx, held_idx = split_indices(manifest, labeled_indices(manifest), tc.holdout_fraction)
    check_disjoint(manifest, train_idx, held_idx)
    x_tr = canvas_images(manifest, train_idx, model.canvas)
    y_tr = targets_for(manifest, train_idx)
    x_ho = canvas_images(manifest, held_idx, model.canvas)
    y_ho = targets_for(manifest, held_idx)
    seed_everything(cfg.seed, cfg.deterministic)
    history = train_supervised(model, x_tr, y_tr, tc.finetune_epochs, tc.batch_size,
                               tc.finetune_lr, tc, cfg.seed, val=(x_ho, y_ho),
                               patience=tc.early_stopping)
    report = compute_metrics(_targets_dict(y_ho), predict(model, x_ho), model.heads.sizes)
    ckpt = None
    if out_dir:
        ckpt = save_checkpoint(model, Path(out_dir) / "finetune.pt",
                               {"stage": "finetune", "seed": cfg.seed})
    return FinetuneResult(model, report, ckpt, history)
