"""ResNet-50 v1.5 backbone with a two-layer classification head."""

from __future__ import annotations

import logging
import os
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn
from torchvision.models import ResNet50_Weights, resnet50

from .core import InkWarning, RuntimeFailure, param_digest

log = logging.getLogger(__name__)

WEIGHTS_ENV = "INKDX_WEIGHTS"
CACHE_ENV = "INKDX_CACHE_DIR"
FEATURE_DIM = 2048
# torchvision's ImageNet statistics for its ResNet-50 weights
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


class MissingWeights(RuntimeFailure):
    pass


class WeightShapeMismatch(RuntimeFailure):
    pass


class ShapeError(RuntimeFailure):
    pass


@dataclass(frozen=True)
class ClassifierConfig:
    # "imagenet" (torchvision registry), a filesystem path, or "none" for random init
    pretrained_weights: str = "imagenet"
    hidden_dim: int = 256
    output_dim: int = 2
    standardize_features: bool = False
    seed: int = 0

    def digest(self) -> str:
        return param_digest("model", self)


class FeatureStandardizer(nn.Module):
    """Fixed per-feature affine map (x - mean) / std, fitted from training features."""

    def __init__(self, dim: int):
        super().__init__()
        self.register_buffer("mean", torch.zeros(dim))
        self.register_buffer("std", torch.ones(dim))

    @torch.no_grad()
    def fit(self, features: torch.Tensor) -> None:
        self.mean.copy_(features.mean(0))
        self.std.copy_(features.std(0, unbiased=False).clamp_min(1e-6))

    def forward(self, x):
        return (x - self.mean) / self.std


class InkClassifier(nn.Module):
    def __init__(self, backbone: nn.Module, cfg: ClassifierConfig):
        super().__init__()
        self.cfg = cfg
        self.backbone = backbone
        self.standardizer = FeatureStandardizer(FEATURE_DIM) if cfg.standardize_features else None
        self.head = nn.Sequential(
            nn.Linear(FEATURE_DIM, cfg.hidden_dim),
            nn.ReLU(),
            nn.Linear(cfg.hidden_dim, cfg.output_dim),
        )

    def features(self, x: torch.Tensor) -> torch.Tensor:
        return self.backbone(x)

    def classify_features(self, f: torch.Tensor) -> torch.Tensor:
        if self.standardizer is not None:
            f = self.standardizer(f)
        return self.head(f)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.classify_features(self.features(x))

    def head_parameters(self):
        return list(self.head.parameters())

    def backbone_parameter_count(self) -> int:
        return sum(p.numel() for p in self.backbone.parameters())


def resolve_weights(spec: str | None) -> str:
    """Explicit argument first, then the environment override, then the registry key."""
    if spec:
        return spec
    return os.environ.get(WEIGHTS_ENV, "imagenet")


def _load_state_dict(path: Path) -> dict:
    if not path.exists():
        raise MissingWeights(f"weights file not found: {path}")
    try:
        obj = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:  # torch raises a zoo of types for corrupt files
        raise MissingWeights(f"cannot read weights file {path}: {exc}") from None
    if isinstance(obj, dict) and "state_dict" in obj and isinstance(obj["state_dict"], dict):
        obj = obj["state_dict"]
    if not isinstance(obj, dict):
        raise MissingWeights(f"{path} does not contain a state dict")
    return obj


def _load_backbone_weights(backbone: nn.Module, state: dict) -> None:
    state = {k.removeprefix("module.").removeprefix("backbone."): v for k, v in state.items()}
    # the ImageNet classifier layer is replaced by the head, so it is never loaded
    own = {k: v for k, v in backbone.state_dict().items() if not k.startswith("fc.")}
    missing = sorted(set(own) - set(state))
    if missing:
        raise WeightShapeMismatch(f"weights lack {len(missing)} backbone tensors, "
                                  f"first: {missing[0]}")
    for k, v in own.items():
        if tuple(state[k].shape) != tuple(v.shape):
            raise WeightShapeMismatch(f"{k}: expected {tuple(v.shape)}, got {tuple(state[k].shape)}")
    backbone.load_state_dict({k: state[k] for k in own}, strict=False)


def build_backbone(weights: str) -> nn.Module:
    # torchvision's resnet50 puts the stride on the 3x3 convolution, i.e. v1.5
    net = resnet50(weights=None)
    if weights == "none":
        warnings.warn("backbone randomly initialised (no pretrained weights)", InkWarning,
                      stacklevel=3)
    elif weights == "imagenet":
        cache = os.environ.get(CACHE_ENV)
        if cache:
            torch.hub.set_dir(str(Path(cache) / "torch"))
        try:
            state = ResNet50_Weights.IMAGENET1K_V1.get_state_dict(progress=False)
        except Exception as exc:
            raise MissingWeights(f"ImageNet-1k weights unavailable ({exc}); pass --weights <file> "
                                 f"or set {WEIGHTS_ENV}") from None
        _load_backbone_weights(net, state)
    else:
        _load_backbone_weights(net, _load_state_dict(Path(weights)))
    net.fc = nn.Identity()
    return net


def build_classifier(cfg: ClassifierConfig = ClassifierConfig()) -> InkClassifier:
    torch.manual_seed(cfg.seed)
    backbone = build_backbone(resolve_weights(cfg.pretrained_weights))
    # head initialised after the backbone so its draw depends only on the seed
    torch.manual_seed(cfg.seed + 1)
    model = InkClassifier(backbone, cfg)
    for p in model.parameters():
        p.requires_grad_(True)
    return model


def reset_head(model: InkClassifier, seed: int) -> None:
    torch.manual_seed(seed + 1)
    for m in model.head:
        if isinstance(m, nn.Linear):
            m.reset_parameters()


def to_model_input(pixels: np.ndarray) -> torch.Tensor:
    """uint8 grayscale batch (N, H, W) -> normalized float batch (N, 3, H, W)."""
    px = np.asarray(pixels)
    if px.ndim != 3:
        raise ShapeError(f"expected (N, H, W) grayscale batch, got shape {px.shape}")
    x = torch.from_numpy(px.astype(np.float32) / 255.0)[:, None].expand(-1, 3, -1, -1)
    mean = torch.tensor(IMAGENET_MEAN).view(1, 3, 1, 1)
    std = torch.tensor(IMAGENET_STD).view(1, 3, 1, 1)
    return ((x - mean) / std).contiguous()


def _check_batch(images: torch.Tensor) -> None:
    if images.ndim != 4 or tuple(images.shape[1:]) != (3, 224, 224):
        raise ShapeError(f"expected (N, 3, 224, 224) input, got {tuple(images.shape)}")


@torch.no_grad()
def backbone_features(model: InkClassifier, images: torch.Tensor, batch_size: int = 16
                      ) -> torch.Tensor:
    _check_batch(images)
    model.eval()
    chunks = [model.features(images[i:i + batch_size]) for i in range(0, len(images), batch_size)]
    return torch.cat(chunks) if chunks else torch.empty(0, FEATURE_DIM)


@torch.no_grad()
def predict(model: InkClassifier, images: torch.Tensor, batch_size: int = 16) -> np.ndarray:
    """Softmax class probabilities, shape (N, 2), evaluation mode."""
    _check_batch(images)
    model.eval()
    out = [torch.softmax(model(images[i:i + batch_size]), dim=1)
           for i in range(0, len(images), batch_size)]
    return torch.cat(out).double().numpy()


def save_checkpoint(model: InkClassifier, path: str | Path, extra: dict | None = None) -> None:
    torch.save({"config": asdict(model.cfg), "digest": model.cfg.digest(),
                "state_dict": model.state_dict(), "extra": extra or {}}, path)


def load_checkpoint(path: str | Path) -> InkClassifier:
    path = Path(path)
    if not path.exists():
        raise MissingWeights(f"checkpoint not found: {path}")
    blob = torch.load(path, map_location="cpu", weights_only=False)
    cfg = ClassifierConfig(**{**blob["config"], "pretrained_weights": "none"})
    backbone = resnet50(weights=None)
    backbone.fc = nn.Identity()
    model = InkClassifier(backbone, cfg)
    model.load_state_dict(blob["state_dict"])
    return model
