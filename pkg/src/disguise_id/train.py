"""Mini-batch SGD training of the heatmap regressor."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .augment import AugmentConfig, augment_sample, center_crop_resize
from .errors import ContractError, TrainingDivergence
from .evalkit import mean_pck
from .heatmaps import GaussianSpec, decode, default_min_peak, synthesize
from .network import Regressor, init_velocity, sgd_step
from .synth import AnnotatedFace, DatasetManifest, Disguise

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    base_lr: float = 1e-5
    lr_after_drop: float = 1e-6
    drop_epoch: int = 20
    momentum: float = 0.9
    batch_size: int = 20
    epochs: int = 90
    seed: int = 0
    # Multiplier on the Gaussian targets during training; None means unit peak
    # (2*pi*sigma^2). Saved models have the factor divided back out.
    target_scale: float | None = None

    def __post_init__(self):
        if self.base_lr <= 0 or self.lr_after_drop <= 0:
            raise ContractError("learning rates must be positive")
        if not 0 <= self.momentum < 1:
            raise ContractError("momentum must lie in [0, 1)")
        if self.batch_size < 1 or self.epochs < 0:
            raise ContractError("batch_size must be >= 1 and epochs >= 0")
        if self.target_scale is not None and self.target_scale <= 0:
            raise ContractError("target_scale must be positive")

    def lr(self, epoch: int) -> float:
        """Learning rate for 1-based ``epoch``."""
        return self.base_lr if epoch <= self.drop_epoch else self.lr_after_drop


@dataclass
class EpochLog:
    epoch: int
    lr: float
    train_loss: float
    val_pck5: float


@dataclass
class TrainingLog:
    epochs: list[EpochLog] = field(default_factory=list)
    best_epoch: int = 0

    def to_csv(self) -> str:
        lines = ["epoch,lr,train_loss,val_pck5"]
        for e in self.epochs:
            lines.append(f"{e.epoch},{e.lr!r},{e.train_loss!r},{e.val_pck5!r}")
        return "\n".join(lines) + "\n"

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8")


def _faces(manifest: DatasetManifest, split: str) -> list[AnnotatedFace]:
    out = []
    for rec in manifest.split(split):
        out.append(AnnotatedFace(manifest.load_image(rec), rec.keypoint_set, rec.subject_id,
                                 Disguise(rec.disguise), rec.background, np.array(rec.occluded)))
    return out


def _prepare(faces, aug: AugmentConfig):
    xs, kps = [], []
    for f in faces:
        img, k, _ = center_crop_resize(f.image, f.keypoints, aug)
        xs.append(img)
        kps.append(k)
    return np.stack(xs).astype(np.float32), kps


def predict_keypoints(model: Regressor, images: np.ndarray, spec: GaussianSpec, batch: int = 32,
                      min_peak: float | None = None):
    out = []
    for i in range(0, len(images), batch):
        hm = model.forward(images[i:i + batch], keep_cache=False)
        out.extend(decode(h.transpose(2, 0, 1), spec, min_peak) for h in hm)
    return out


def train(model: Regressor, manifest: DatasetManifest, cfg: TrainConfig, aug: AugmentConfig,
          spec: GaussianSpec, out_dir: str | Path | None = None) -> tuple[Regressor, TrainingLog]:
    """Train ``model`` in place and return ``(best_model, log)``.

    Targets are multiplied by ``cfg.target_scale`` while training; both the
    returned model and the saved checkpoints output heatmaps in the original
    Gaussian units, and the logged loss is in those units too. The best model is
    the one with the highest validation PCK@5 (earliest on ties). With
    ``out_dir`` set, ``best.dfi``, ``last.dfi`` and ``train_log.csv`` are
    written there.
    """
    from .checkpoint import save_checkpoint

    train_faces = _faces(manifest, "train")
    val_faces = _faces(manifest, "val")
    if not train_faces or not val_faces:
        raise ContractError("training needs non-empty train and val splits")
    if tuple(aug.output_size) != model.input_size[1::-1]:
        raise ContractError(f"augmentation output {aug.output_size} does not match network input {model.input_size}")
    scale = cfg.target_scale if cfg.target_scale is not None else 1.0 / spec.peak
    val_x, val_kps = _prepare(val_faces, aug)
    fixed_x = fixed_t = None
    if not aug.enabled:
        fixed_x, fixed_kps = _prepare(train_faces, aug)
        fixed_t = np.stack([synthesize(k, spec).transpose(1, 2, 0) for k in fixed_kps]).astype(np.float32)
        fixed_t *= np.float32(scale)

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
    log_ = TrainingLog()
    best = model.copy()
    best_pck = -np.inf
    velocity = init_velocity(model)
    n = len(train_faces)
    for epoch in range(1, cfg.epochs + 1):
        lr = cfg.lr(epoch)
        order = np.random.default_rng([cfg.seed, epoch]).permutation(n)
        losses = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            if fixed_x is not None:
                x, t = fixed_x[idx], fixed_t[idx]
            else:
                xs, ts = [], []
                for i in idx:
                    f = augment_sample(train_faces[i], aug, [cfg.seed, epoch, int(i)])
                    xs.append(f.image)
                    ts.append(synthesize(f.keypoints, spec).transpose(1, 2, 0))
                x, t = np.stack(xs).astype(np.float32), np.stack(ts).astype(np.float32) * np.float32(scale)
            pred = model.forward(x)
            diff = pred - t
            loss = float(np.sum(np.square(diff, dtype=np.float64))) / len(idx)
            if not np.isfinite(loss):
                raise TrainingDivergence(f"loss became {loss} at epoch {epoch}")
            grads = model.backward(2.0 * diff / len(idx))
            sgd_step(model, grads, velocity, lr, cfg.momentum)
            losses.append(loss * len(idx))
        val_pred = predict_keypoints(model, val_x, spec, min_peak=default_min_peak(spec) * scale)
        val_pck = mean_pck(val_pred, val_kps, 5.0)
        entry = EpochLog(epoch, lr, float(np.sum(losses) / n / scale ** 2), val_pck)
        log_.epochs.append(entry)
        log.info("epoch %d lr %g loss %.6g val PCK@5 %.2f", epoch, lr, entry.train_loss, val_pck)
        if val_pck > best_pck:
            best_pck, best, log_.best_epoch = val_pck, model.scale_output(1.0 / scale), epoch
            if out_dir is not None:
                save_checkpoint(best, out_dir / "best.dfi", aug)
    if cfg.epochs == 0:
        best = model.copy()
    if out_dir is not None:
        last = model.copy() if cfg.epochs == 0 else model.scale_output(1.0 / scale)
        save_checkpoint(last, out_dir / "last.dfi", aug)
        if cfg.epochs == 0:
            save_checkpoint(best, out_dir / "best.dfi", aug)
        log_.write_csv(out_dir / "train_log.csv")
    return best, log_
