"""The multi-stream fusion classifier.

Each modality gets its own stream: backbone -> 1x1 channel reduction to 256
-> squeeze-excitation channel attention -> global average pooling. The
resulting 256-d embeddings are concatenated in the configured modality order
into a 256*n vector and classified by a single linear layer over five
classes. Dropout (for training and for Monte Carlo inference) sits on the
fused vector, directly before the classifier.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import torch
import torch.nn.functional as F
from torch import nn

from .backbones import build_backbone
from .errors import ConfigurationError
from .preprocess import IMAGENET_NORM, Normalization
from .types import ModalityKind, parse_modalities

NUM_CLASSES = 5


@dataclass(frozen=True)
class ModelConfig:
    modalities: tuple[ModalityKind, ...]
    backbone: str = "resnet50"
    reduced_channels: int = 256
    se_ratio: int = 16
    dropout: float = 0.5
    num_classes: int = NUM_CLASSES
    se_residual: bool = False
    pretrained_backbone: bool = False
    input_size: int = 224
    normalization: Normalization = IMAGENET_NORM

    def __post_init__(self) -> None:
        object.__setattr__(self, "modalities", parse_modalities(self.modalities))
        if self.reduced_channels % self.se_ratio != 0:
            raise ConfigurationError(
                f"reduced_channels {self.reduced_channels} must be divisible by "
                f"se_ratio {self.se_ratio}"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigurationError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.num_classes < 2:
            raise ConfigurationError(f"num_classes must be >= 2, got {self.num_classes}")

    @property
    def n_modalities(self) -> int:
        return len(self.modalities)

    def to_dict(self) -> dict:
        return {
            "modalities": [m.value for m in self.modalities],
            "backbone": self.backbone,
            "reduced_channels": self.reduced_channels,
            "se_ratio": self.se_ratio,
            "dropout": self.dropout,
            "num_classes": self.num_classes,
            "se_residual": self.se_residual,
            "pretrained_backbone": self.pretrained_backbone,
            "input_size": self.input_size,
            "normalization": {"mean": list(self.normalization.mean), "std": list(self.normalization.std)},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        norm = data.get("normalization")
        normalization = (
            Normalization(mean=tuple(norm["mean"]), std=tuple(norm["std"]))
            if norm
            else IMAGENET_NORM
        )
        return cls(
            modalities=tuple(ModalityKind.parse(m) for m in data["modalities"]),
            backbone=data.get("backbone", "resnet50"),
            reduced_channels=data.get("reduced_channels", 256),
            se_ratio=data.get("se_ratio", 16),
            dropout=data.get("dropout", 0.5),
            num_classes=data.get("num_classes", NUM_CLASSES),
            se_residual=data.get("se_residual", False),
            pretrained_backbone=data.get("pretrained_backbone", False),
            input_size=data.get("input_size", 224),
            normalization=normalization,
        )


def dropout_with_generator(
    x: torch.Tensor,
    p: float,
    generator: Optional[torch.Generator] = None,
) -> torch.Tensor:
    """Inverted dropout whose mask can come from an explicit random stream."""
    if p <= 0.0:
        return x
    keep = 1.0 - p
    mask = (
        torch.rand(x.shape, generator=generator, device=x.device) < keep
    ).to(x.dtype)
    return x * mask / keep


class SqueezeExcite(nn.Module):
    """Channel attention: sigmoid(W1(relu(W0(spatial mean)))) gating each channel.

    With ``residual=True`` the gated map is added back onto the input instead
    of replacing it.
    """

    def __init__(self, channels: int, ratio: int, residual: bool = False) -> None:
        super().__init__()
        if channels % ratio != 0:
            raise ConfigurationError(f"channels {channels} not divisible by ratio {ratio}")
        hidden = channels // ratio
        self.fc_reduce = nn.Linear(channels, hidden)
        self.fc_expand = nn.Linear(hidden, channels)
        self.residual = residual

    def attention(self, x: torch.Tensor) -> torch.Tensor:
        """Per-channel gate weights, shape (B, C, 1, 1), each in (0, 1)."""
        pooled = x.mean(dim=(-2, -1))  # (B, C) spatial average
        gates = torch.sigmoid(self.fc_expand(F.relu(self.fc_reduce(pooled))))
        return gates.unsqueeze(-1).unsqueeze(-1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        gated = x * self.attention(x)
        if self.residual:
            return x + gated
        return gated


class ChannelReducer(nn.Module):
    """Point-wise convolution collapsing backbone channels to the fusion width."""

    def __init__(self, in_channels: int, out_channels: int) -> None:
        super().__init__()
        self.conv = nn.Conv2d(in_channels, out_channels, kernel_size=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.conv(x)


def global_average_pool(x: torch.Tensor) -> torch.Tensor:
    """Spatial mean per channel: (B, C, H, W) -> (B, C)."""
    return x.mean(dim=(-2, -1))


def fuse_embeddings(embeddings: Sequence[torch.Tensor]) -> torch.Tensor:
    """Concatenate per-stream embeddings in order: n x (B, C) -> (B, n*C)."""
    if len(embeddings) == 0:
        raise ValueError("cannot fuse an empty list of embeddings")
    if len(embeddings) == 1:
        return embeddings[0]
    return torch.cat(list(embeddings), dim=-1)


class StreamEncoder(nn.Module):
    """One modality stream: backbone -> reduce -> attend."""

    def __init__(self, config: ModelConfig) -> None:
        super().__init__()
        self.backbone = build_backbone(config.backbone, pretrained=config.pretrained_backbone)
        self.reducer = ChannelReducer(self.backbone.feature_channels, config.reduced_channels)
        self.attention = SqueezeExcite(
            config.reduced_channels, config.se_ratio, residual=config.se_residual
        )

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        """(B, 3, H, W) -> (B, reduced_channels) embedding."""
        features = self.backbone(images)
        reduced = self.reducer(features)
        attended = self.attention(reduced)
        return global_average_pool(attended)


class FusionNet(nn.Module):
    """Multi-stream fusion classifier over a fixed modality order."""

    def __init__(self, config: ModelConfig) -> None:
        super().__init__()
        self.config = config
        self.streams = nn.ModuleDict(
            {m.value: StreamEncoder(config) for m in config.modalities}
        )
        self.classifier = nn.Linear(
            config.reduced_channels * config.n_modalities, config.num_classes
        )

    def _check_parts(self, parts: Sequence[torch.Tensor]) -> None:
        if len(parts) != self.config.n_modalities:
            raise ConfigurationError(
                f"model expects {self.config.n_modalities} modality tensors "
                f"({[m.value for m in self.config.modalities]}), got {len(parts)}"
            )

    def embed(self, parts: Sequence[torch.Tensor]) -> torch.Tensor:
        """Per-stream encode then concatenate: n x (B, 3, H, W) -> (B, 256n)."""
        self._check_parts(parts)
        embeddings = [
            self.streams[m.value](images)
            for m, images in zip(self.config.modalities, parts)
        ]
        return fuse_embeddings(embeddings)

    def logits(
        self,
        parts: Sequence[torch.Tensor],
        use_dropout: bool = False,
        generator: Optional[torch.Generator] = None,
    ) -> torch.Tensor:
        fused = self.embed(parts)
        if use_dropout:
            fused = dropout_with_generator(fused, self.config.dropout, generator)
        return self.classifier(fused)

    def forward(self, parts: Sequence[torch.Tensor]) -> torch.Tensor:
        return self.logits(parts)

    def classify(
        self,
        fused: torch.Tensor,
        use_dropout: bool = False,
        generator: Optional[torch.Generator] = None,
    ) -> torch.Tensor:
        """Posterior probabilities from an already-fused vector."""
        if use_dropout:
            fused = dropout_with_generator(fused, self.config.dropout, generator)
        return torch.softmax(self.classifier(fused), dim=-1)

    @torch.no_grad()
    def predict_proba(self, parts: Sequence[torch.Tensor]) -> torch.Tensor:
        """Deterministic posterior probabilities (dropout off), (B, num_classes)."""
        self.eval()
        return torch.softmax(self.logits(parts, use_dropout=False), dim=-1)

    @torch.no_grad()
    def predict_mc(
        self,
        parts: Sequence[torch.Tensor],
        n_mc: int,
        generator: Optional[torch.Generator] = None,
    ) -> torch.Tensor:
        """Mean posterior over ``n_mc`` stochastic passes with dropout active.

        With dropout probability 0 this equals :meth:`predict_proba` for any
        ``n_mc``. The mean of simplex vectors stays on the simplex, so no
        renormalization is applied.
        """
        if n_mc < 1:
            raise ValueError(f"n_mc must be >= 1, got {n_mc}")
        self.eval()
        fused = self.embed(parts)
        total = torch.zeros(fused.shape[0], self.config.num_classes)
        for _ in range(n_mc):
            total += self.classify(fused, use_dropout=True, generator=generator)
        return total / n_mc


def build_model(config: ModelConfig, seed: int = 0) -> FusionNet:
    """Construct a FusionNet with reproducible weight initialization."""
    torch.manual_seed(seed)
    return FusionNet(config)


CHECKPOINT_FORMAT = 1


def save_checkpoint(model: FusionNet, path: str | Path) -> None:
    """Persist weights plus config; round-trips bit-exactly."""
    torch.save(
        {
            "format": CHECKPOINT_FORMAT,
            "model_config": model.config.to_dict(),
            "state_dict": model.state_dict(),
        },
        path,
    )


def load_checkpoint(path: str | Path) -> FusionNet:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ConfigurationError(f"unsupported checkpoint format in {path}")
    config = ModelConfig.from_dict(payload["model_config"])
    model = FusionNet(config)
    model.load_state_dict(payload["state_dict"])
    return model
