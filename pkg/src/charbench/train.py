"""SGD with momentum, step decay, the epoch loop and the transfer workflow."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .arch import zoo_spec, with_num_classes
from .data import BATCH_SIZE, ImageCache, SplitDataset, TransformConfig, batch_order
from .network import (
    FIXED_EXTRACTOR,
    FREEZE_POLICIES,
    FULL_FINETUNE,
    Network,
    ParamStore,
    build,
    decode_params,
    head_width_in_file,
    assign_params,
    replace_head,
    save_params,
    set_freeze_policy,
)

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = BATCH_SIZE
    lr: float = 0.001
    momentum: float = 0.9
    step_size: int = 7
    gamma: float = 0.1
    epochs: int = 15
    seed: int = 0
    freeze_policy: str = FIXED_EXTRACTOR

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.lr > 0:
            raise ValueError("lr must be > 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must be in (0, 1]")
        if self.step_size < 1:
            raise ValueError("step_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.freeze_policy not in FREEZE_POLICIES:
            raise ValueError(f"freeze_policy must be one of {FREEZE_POLICIES}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    train_accuracy: float
    valid_accuracy: float
    lr_used: float
    wall_seconds: float


@dataclass
class OptimizerState:
    velocity: dict = field(default_factory=dict)


class TrainingError(RuntimeError):
    pass


def step_lr(base_lr: float, epoch: int, step_size: int, gamma: float) -> float:
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return base_lr * gamma ** (epoch // step_size)


def sgd_step(params: ParamStore, state: OptimizerState, lr: float, momentum: float) -> None:
    """v <- momentum*v + grad; p <- p - lr*v for trainable params, then clear grads."""
    trainable = params.trainable()
    missing = [n for n, t in trainable.items() if t.grad is None]
    if missing:
        raise TrainingError(f"no gradient for trainable parameter {missing[0]!r}")
    for name, t in trainable.items():
        v = state.velocity.get(name)
        if v is None:
            v = state.velocity[name] = np.zeros_like(t.data)
        v *= t.data.dtype.type(momentum)
        v += t.grad
        t.data -= t.data.dtype.type(lr) * v
    params.zero_grads()


def accuracy(logits: np.ndarray, labels: np.ndarray) -> int:
    """Number of exact argmax hits; ties resolve to the lowest class index."""
    return int((np.argmax(logits, axis=1) == labels).sum())


class FeatureCache:
    """Per-sample outputs of a frozen feature extractor.

    Only valid while every feature parameter is frozen, in which case the
    features are a pure function of the input image.
    """

    def __init__(self, network: Network, images: ImageCache):
        self.network = network
        self.images = images
        self._rows: dict = {}

    def get(self, samples: Sequence, idx) -> np.ndarray:
        todo = [i for i in idx if samples[i][0] not in self._rows]
        if todo:
            was_training = self.network.training
            self.network.eval()
            x = ad.Tensor(np.stack([self.images.get(samples[i][0]) for i in todo]))
            feats = self.network.features(x).data
            self.network.train(was_training)
            for i, row in zip(todo, feats):
                self._rows[samples[i][0]] = row
        return np.stack([self._rows[samples[i][0]] for i in idx])


@dataclass
class PhaseResult:
    loss: float
    accuracy: float
    seconds: float


def _logits(network: Network, samples, idx, images: ImageCache, features: Optional[FeatureCache]):
    if features is not None:
        return network.classify(ad.Tensor(features.get(samples, idx)))
    x = ad.Tensor(np.stack([images.get(samples[i][0]) for i in idx]))
    return network(x)


def run_epoch(
    network: Network,
    params: ParamStore,
    state: OptimizerState,
    samples: Sequence,
    cfg: TrainConfig,
    epoch: int,
    phase: str,
    images: ImageCache,
    lr: Optional[float] = None,
    features: Optional[FeatureCache] = None,
) -> PhaseResult:
    """One pass over ``samples``. Train phase updates parameters; eval phase mutates nothing."""
    if not samples:
        raise TrainingError("empty data for epoch")
    if phase not in ("train", "eval"):
        raise ValueError(f"phase must be 'train' or 'eval', got {phase!r}")
    train = phase == "train"
    lr = step_lr(cfg.lr, epoch, cfg.step_size, cfg.gamma) if lr is None else lr
    network.train(train)
    order = batch_order(len(samples), train, cfg.seed, epoch)
    total_loss, hits = 0.0, 0
    start = time.monotonic()
    for b, lo in enumerate(range(0, len(order), cfg.batch_size)):
        idx = order[lo : lo + cfg.batch_size]
        labels = np.array([samples[i][1] for i in idx], dtype=np.int64)
        try:
            if train:
                with ad.Tape() as tape:
                    logits = _logits(network, samples, idx, images, features)
                    loss = ad.softmax_cross_entropy(logits, labels)
                    tape.backward(loss)
                sgd_step(params, state, lr, cfg.momentum)
                total_loss += float(loss.data) * len(idx)
            else:
                logits = _logits(network, samples, idx, images, features)
        except (ValueError, TrainingError) as exc:
            raise TrainingError(f"epoch {epoch} {phase} batch {b}: {exc}") from exc
        hits += accuracy(logits.data, labels)
    network.eval()
    n = len(samples)
    return PhaseResult(total_loss / n if train else float("nan"), hits / n, time.monotonic() - start)


def predict(network: Network, samples: Sequence, images: ImageCache, batch_size: int = BATCH_SIZE,
            features: Optional[FeatureCache] = None) -> np.ndarray:
    network.eval()
    preds = []
    for lo in range(0, len(samples), batch_size):
        idx = np.arange(lo, min(lo + batch_size, len(samples)))
        preds.append(np.argmax(_logits(network, samples, idx, images, features).data, axis=1))
    return np.concatenate(preds)


def transform_for(network: Network) -> TransformConfig:
    return TransformConfig(target_size=tuple(network.spec.input_size))


def fit(
    network: Network,
    params: ParamStore,
    data: SplitDataset,
    cfg: TrainConfig,
    transform: Optional[TransformConfig] = None,
    cache_features: bool = True,
    images: Optional[ImageCache] = None,
) -> list[EpochMetrics]:
    """Train for ``cfg.epochs`` epochs, evaluating on the test part after each one."""
    images = images or ImageCache(transform or transform_for(network))
    features = FeatureCache(network, images) if cache_features and network.features_frozen() else None
    state = OptimizerState()
    network.rng = np.random.default_rng(cfg.seed)
    history = []
    for epoch in range(cfg.epochs):
        lr = step_lr(cfg.lr, epoch, cfg.step_size, cfg.gamma)
        tr = run_epoch(network, params, state, data.train, cfg, epoch, "train", images, lr, features)
        ev = run_epoch(network, params, state, data.test, cfg, epoch, "eval", images, lr, features)
        row = EpochMetrics(epoch, tr.loss, tr.accuracy, ev.accuracy, lr, tr.seconds + ev.seconds)
        log.info("epoch %d lr=%g loss=%.4f train_acc=%.4f valid_acc=%.4f (%.1fs)", epoch, lr,
                 row.train_loss, row.train_accuracy, row.valid_accuracy, row.wall_seconds)
        history.append(row)
    return history


# ---------------------------------------------------------------------------
# transfer workflow


@dataclass
class TransferResult:
    metrics: list
    network: Network
    params: ParamStore
    features_before: str
    features_after: str
    images: ImageCache = None
    head_before: str = ""

    @property
    def features_unchanged(self) -> bool:
        return self.features_before == self.features_after

    @property
    def head_after(self) -> str:
        return self.params.region_digest("classifier")


def pretrain_source(arch_id: str, source: SplitDataset, cfg: TrainConfig, out_path,
                    scale: str = "mini") -> tuple[Path, list]:
    """Train a model end to end on the source task and save its parameters."""
    if source.num_classes < 2:
        raise ValueError("source dataset needs at least 2 classes")
    spec = zoo_spec(arch_id, scale, source.num_classes)
    network, params = build(spec, cfg.seed)
    set_freeze_policy(params, FULL_FINETUNE)
    history = fit(network, params, source, cfg)
    out_path = Path(out_path)
    save_params(params, out_path)
    return out_path, history


def transfer(
    arch_id: str,
    pretrained,
    target: SplitDataset,
    cfg: TrainConfig,
    scale: str = "mini",
) -> TransferResult:
    """Load pretrained features, attach a fresh head and train it under ``cfg.freeze_policy``.

    ``pretrained`` is a parameter file path, raw file bytes, or None for a
    randomly initialised (seeded) extractor.
    """
    spec = zoo_spec(arch_id, scale, target.num_classes)
    if pretrained is None:
        network, params = build(spec, cfg.seed)
    else:
        blob = pretrained if isinstance(pretrained, bytes) else Path(pretrained).read_bytes()
        values = decode_params(blob)
        spec = with_num_classes(spec, head_width_in_file(values, spec))
        network, params = build(spec, cfg.seed)
        assign_params(params, values)
    replace_head(network, params, target.num_classes, cfg.seed)
    set_freeze_policy(params, cfg.freeze_policy)
    before = params.region_digest("features")
    head_before = params.region_digest("classifier")
    images = ImageCache(transform_for(network))
    history = fit(network, params, target, cfg, images=images)
    after = params.region_digest("features")
    if cfg.freeze_policy == FIXED_EXTRACTOR and before != after:
        raise TrainingError("frozen feature parameters changed during head training")
    return TransferResult(history, network, params, before, after, images, head_before)
