"""Fold training: AdamW + cross-entropy with early stopping on validation loss."""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch
from torch import nn

from .core import DataError, InvalidParams, RuntimeFailure
from .metrics import classification_metrics, macro_f1
from .model import InkClassifier, backbone_features, to_model_input

log = logging.getLogger(__name__)


class NonFiniteLoss(RuntimeFailure):
    pass


class EmptySplit(DataError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-5
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    batch_size: int = 16
    max_epochs: int = 50
    patience: int = 10
    seed: int = 0
    freeze_backbone: bool = False
    augment: bool = False

    def __post_init__(self):
        if not self.lr > 0:
            raise InvalidParams("lr must be positive")
        if not 0 < self.patience < self.max_epochs:
            raise InvalidParams("need 0 < patience < max_epochs")
        if self.batch_size < 1:
            raise InvalidParams("batch_size must be >= 1")


@dataclass
class TrainRecordLog:
    train_loss: list[float] = field(default_factory=list)
    train_accuracy: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_macro_f1: list[float] = field(default_factory=list)
    best_epoch: int = 0  # 1-based
    stop_reason: str = ""

    @property
    def epochs(self) -> int:
        return len(self.val_loss)

    def to_json(self) -> dict:
        return asdict(self)


class EarlyStopping:
    """Strict-improvement tracker: stop after ``patience`` epochs without a new minimum."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best_loss = math.inf
        self.best_epoch = 0
        self.bad_epochs = 0
        self.epoch = 0

    def step(self, val_loss: float) -> bool:
        """Record one epoch; returns True when training should stop."""
        self.epoch += 1
        if val_loss < self.best_loss:
            self.best_loss = val_loss
            self.best_epoch = self.epoch
            self.bad_epochs = 0
            return False
        self.bad_epochs += 1
        return self.bad_epochs >= self.patience


def early_stopping_schedule(val_losses: Sequence[float], patience: int, max_epochs: int
                            ) -> tuple[int, int, str]:
    """Replay a validation-loss sequence: (stop epoch, best epoch, stop reason)."""
    es = EarlyStopping(patience)
    for loss in val_losses[:max_epochs]:
        if es.step(float(loss)):
            return es.epoch, es.best_epoch, "early_stop"
    if es.epoch < max_epochs:
        raise InvalidParams(f"sequence of {len(val_losses)} epochs ended before max_epochs "
                            "without an early stop")
    return es.epoch, es.best_epoch, "max_epochs"


def _batches(n: int, batch_size: int, gen: torch.Generator):
    order = torch.randperm(n, generator=gen)
    for i in range(0, n, batch_size):
        yield order[i:i + batch_size]


def _inputs(pixels: np.ndarray, idx, augment: bool = False, gen=None) -> torch.Tensor:
    x = to_model_input(pixels[np.asarray(idx)])
    if augment:
        flip = torch.rand(len(x), generator=gen) < 0.5
        x[flip] = x[flip].flip(-1)
    return x


class _Data:
    """Either raw uint8 pixels (fine-tuning) or precomputed backbone features."""

    def __init__(self, model: InkClassifier, pixels: np.ndarray, labels: np.ndarray,
                 frozen: bool, name: str):
        if len(pixels) == 0:
            raise EmptySplit(f"{name} split is empty")
        self.pixels = np.asarray(pixels)
        self.labels = torch.as_tensor(np.asarray(labels), dtype=torch.long)
        self.features = None
        if frozen:
            self.features = extract_features(model, self.pixels)

    def __len__(self):
        return len(self.labels)

    def logits(self, model: InkClassifier, idx, augment=False, gen=None) -> torch.Tensor:
        if self.features is not None:
            return model.classify_features(self.features[idx])
        return model(_inputs(self.pixels, idx, augment, gen))


def extract_features(model: InkClassifier, pixels: np.ndarray, batch_size: int = 16
                     ) -> torch.Tensor:
    chunks = [backbone_features(model, to_model_input(pixels[i:i + batch_size]))
              for i in range(0, len(pixels), batch_size)]
    return torch.cat(chunks)


@torch.no_grad()
def _evaluate_loss(model, data: _Data, batch_size: int) -> tuple[float, np.ndarray]:
    model.eval()
    total, preds = 0.0, []
    idx_all = torch.arange(len(data))
    for i in range(0, len(data), batch_size):
        idx = idx_all[i:i + batch_size]
        logits = data.logits(model, idx)
        total += nn.functional.cross_entropy(logits, data.labels[idx], reduction="sum").item()
        preds.append(logits.argmax(1))
    return total / len(data), torch.cat(preds).numpy()


def train_fold(model: InkClassifier, train: tuple[np.ndarray, np.ndarray],
               val: tuple[np.ndarray, np.ndarray], cfg: TrainConfig = TrainConfig(),
               *, train_features: torch.Tensor | None = None,
               val_features: torch.Tensor | None = None,
               on_epoch: Callable[[int, TrainRecordLog], bool] | None = None,
               ) -> tuple[dict, TrainRecordLog]:
    """Train in place and restore the best-validation-loss weights.

    ``train``/``val`` are (uint8 pixels (N, 224, 224), integer labels). With
    ``cfg.freeze_backbone`` only the head is optimized, on backbone features that
    are computed once (or passed in precomputed). ``on_epoch`` may end training
    early by returning True (stop reason ``"callback"``).
    """
    torch.manual_seed(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed)
    frozen = cfg.freeze_backbone
    tr = _Data(model, *train, frozen=frozen and train_features is None, name="train")
    va = _Data(model, *val, frozen=frozen and val_features is None, name="validation")
    if train_features is not None:
        tr.features = train_features
    if val_features is not None:
        va.features = val_features
    if frozen:
        for p in model.backbone.parameters():
            p.requires_grad_(False)
        if model.standardizer is not None:
            model.standardizer.fit(tr.features)
        params = model.head_parameters()
    else:
        if model.standardizer is not None:
            model.standardizer.fit(extract_features(model, tr.pixels))
        params = [p for p in model.parameters() if p.requires_grad]
    opt = torch.optim.AdamW(params, lr=cfg.lr, betas=cfg.betas, weight_decay=cfg.weight_decay)

    rec = TrainRecordLog()
    stopper = EarlyStopping(cfg.patience)
    best_state = copy.deepcopy(model.state_dict())
    for epoch in range(1, cfg.max_epochs + 1):
        if frozen:
            model.eval()  # backbone statistics stay fixed; the head has no dropout/BN
        else:
            model.train()
        loss_sum, correct = 0.0, 0
        for idx in _batches(len(tr), cfg.batch_size, gen):
            logits = tr.logits(model, idx, cfg.augment, gen)
            loss = nn.functional.cross_entropy(logits, tr.labels[idx])
            if not torch.isfinite(loss):
                raise NonFiniteLoss(f"non-finite training loss at epoch {epoch} "
                                    f"(lr={cfg.lr}); aborting")
            opt.zero_grad()
            loss.backward()
            opt.step()
            loss_sum += loss.item() * len(idx)
            correct += int((logits.argmax(1) == tr.labels[idx]).sum())
        val_loss, val_pred = _evaluate_loss(model, va, cfg.batch_size)
        if not math.isfinite(val_loss):
            raise NonFiniteLoss(f"non-finite validation loss at epoch {epoch}")
        rec.train_loss.append(loss_sum / len(tr))
        rec.train_accuracy.append(correct / len(tr))
        rec.val_loss.append(val_loss)
        rec.val_macro_f1.append(macro_f1(va.labels.numpy(), val_pred, labels=[0, 1]))
        stop = stopper.step(val_loss)
        if stopper.best_epoch == epoch:
            best_state = copy.deepcopy(model.state_dict())
        log.debug("epoch %d train_loss %.4f val_loss %.4f", epoch, rec.train_loss[-1], val_loss)
        if stop:
            rec.stop_reason = "early_stop"
            break
        if on_epoch is not None and on_epoch(epoch, rec):
            rec.stop_reason = "callback"
            break
    else:
        rec.stop_reason = "max_epochs"
    rec.best_epoch = stopper.best_epoch
    model.load_state_dict(best_state)
    return best_state, rec


@torch.no_grad()
def evaluate(model: InkClassifier, pixels: np.ndarray, labels: np.ndarray,
             features: torch.Tensor | None = None, batch_size: int = 16) -> dict:
    """Per-sample predictions and probabilities plus aggregate metrics."""
    if len(labels) == 0:
        raise EmptySplit("evaluation set is empty")
    model.eval()
    if features is None:
        probs = []
        for i in range(0, len(pixels), batch_size):
            probs.append(torch.softmax(model(to_model_input(pixels[i:i + batch_size])), 1))
        p = torch.cat(probs)
    else:
        p = torch.softmax(model.classify_features(features), 1)
    p = p.double().numpy()
    y_pred = p.argmax(1)
    y_true = np.asarray(labels)
    return {
        "y_true": y_true.tolist(),
        "y_pred": y_pred.tolist(),
        "probabilities": p.tolist(),
        "metrics": classification_metrics(y_true.tolist(), y_pred.tolist(), labels=[0, 1]),
    }
