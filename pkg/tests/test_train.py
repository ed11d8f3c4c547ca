import warnings

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from inkdx.core import InkWarning, InvalidParams
from inkdx.model import ClassifierConfig, build_classifier, reset_head
from inkdx.train import (
    EmptySplit,
    NonFiniteLoss,
    TrainConfig,
    _evaluate_loss,
    _Data,
    early_stopping_schedule,
    evaluate,
    extract_features,
    train_fold,
)


def oracle_schedule(losses, patience, max_epochs):
    """Plain restatement: stop once ``patience`` epochs in a row fail to beat the best."""
    best, best_epoch, since = float("inf"), 0, 0
    for epoch, loss in enumerate(losses[:max_epochs], start=1):
        if loss < best:
            best, best_epoch, since = loss, epoch, 0
        else:
            since += 1
            if since == patience:
                return epoch, best_epoch, "early_stop"
    return max_epochs, best_epoch, "max_epochs"


def test_patience_example():
    losses = [1.0, 0.9] + [0.95] * 10
    assert early_stopping_schedule(losses, 10, 50) == (12, 2, "early_stop")


def test_plateau_equal_is_not_improvement():
    assert early_stopping_schedule([1.0, 1.0, 1.0], 2, 50) == (3, 1, "early_stop")


def test_max_epochs_reached():
    losses = list(np.linspace(1, 0.1, 50))
    assert early_stopping_schedule(losses, 10, 50) == (50, 50, "max_epochs")
    with pytest.raises(InvalidParams):
        early_stopping_schedule(losses[:20], 10, 50)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 15), st.lists(st.floats(0, 5, allow_nan=False), min_size=60, max_size=60))
def test_schedule_matches_oracle(patience, losses):
    assert early_stopping_schedule(losses, patience, 50) == oracle_schedule(losses, patience, 50)


def test_config_validation():
    with pytest.raises(InvalidParams):
        TrainConfig(patience=50, max_epochs=50)
    with pytest.raises(InvalidParams):
        TrainConfig(lr=0)


@pytest.fixture(scope="module")
def small():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", InkWarning)
        model = build_classifier(ClassifierConfig(pretrained_weights="none",
                                                  standardize_features=True))
    rng = np.random.default_rng(0)
    px = rng.integers(0, 256, (8, 224, 224), dtype=np.uint8)
    px[4:, 60:160, 60:160] = 0  # class 1 carries a dark block
    y = np.array([0, 0, 0, 0, 1, 1, 1, 1])
    return model, px, y, extract_features(model, px)


def test_memorized_set(small):
    model, px, y, feats = small
    reset_head(model, 0)
    cfg = TrainConfig(lr=1e-3, freeze_backbone=True, max_epochs=60, patience=20)
    _, log = train_fold(model, (px, y), (px, y), cfg, train_features=feats, val_features=feats)
    r = evaluate(model, px, y, features=feats)
    assert r["metrics"]["accuracy"] == 1.0
    np.testing.assert_allclose(np.sum(r["probabilities"], 1), 1.0)
    # evaluating from pixels goes through the same backbone
    assert evaluate(model, px, y)["y_pred"] == r["y_pred"]


def test_best_checkpoint_restored(small):
    model, px, y, feats = small
    reset_head(model, 1)
    cfg = TrainConfig(lr=3e-3, freeze_backbone=True, max_epochs=30, patience=5)
    _, log = train_fold(model, (px[:6], y[:6]), (px[2:], y[2:]), cfg,
                        train_features=feats[:6], val_features=feats[2:])
    assert log.best_epoch == int(np.argmin(log.val_loss)) + 1
    va = _Data(model, px[2:], y[2:], frozen=False, name="val")
    va.features = feats[2:]
    loss, _ = _evaluate_loss(model, va, 16)
    assert loss == pytest.approx(min(log.val_loss), rel=1e-5)
    if log.stop_reason == "early_stop":
        assert log.epochs - log.best_epoch == cfg.patience


def test_callback_stops(small):
    model, px, y, feats = small
    reset_head(model, 2)
    cfg = TrainConfig(lr=1e-3, freeze_backbone=True, max_epochs=20, patience=10)
    _, log = train_fold(model, (px, y), (px, y), cfg, train_features=feats, val_features=feats,
                        on_epoch=lambda epoch, rec: epoch == 3)
    assert log.epochs == 3 and log.stop_reason == "callback"


def test_non_finite_loss(small):
    # full fine-tuning at lr 1e3 blows the network up within the first epoch
    model, px, y, _ = small
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", InkWarning)
        fresh = build_classifier(ClassifierConfig(pretrained_weights="none"))
    cfg = TrainConfig(lr=1e3, max_epochs=6, patience=5, batch_size=4)
    with pytest.raises(NonFiniteLoss):
        train_fold(fresh, (px, y), (px[:2], y[:2]), cfg)


def test_empty_splits(small):
    model, px, y, _ = small
    with pytest.raises(EmptySplit):
        train_fold(model, (px[:0], y[:0]), (px, y), TrainConfig(freeze_backbone=True))
    with pytest.raises(EmptySplit):
        evaluate(model, px[:0], y[:0])


def test_reproducible(small):
    model, px, y, feats = small
    cfg = TrainConfig(lr=1e-3, freeze_backbone=True, max_epochs=8, patience=3, seed=5)
    logs = []
    for _ in range(2):
        reset_head(model, 9)
        _, log = train_fold(model, (px, y), (px, y), cfg, train_features=feats,
                            val_features=feats)
        logs.append(log.to_json())
    assert logs[0] == logs[1]
    assert torch.isfinite(torch.tensor(logs[0]["val_loss"])).all()
