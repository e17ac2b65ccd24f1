"""Feature-extraction backbones.

A backbone is any module mapping (B, 3, H, W) images to (B, C, H/s, W/s)
feature maps and exposing ``feature_channels`` and ``stride``. The default
is a ResNet-50 trunk; a tiny 3-block net (stride 8, 32 channels) is provided
so the full pipeline runs fast on CPU without any pretrained weights.
"""

from __future__ import annotations

import torch
from torch import nn

from .errors import ConfigurationError


class TinyBackbone(nn.Module):
    """Three stride-2 conv blocks: stride 8, 32 output channels."""

    feature_channels = 32
    stride = 8

    def __init__(self) -> None:
        super().__init__()
        self.features = nn.Sequential(
            nn.Conv2d(3, 16, kernel_size=3, stride=2, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(16, 32, kernel_size=3, stride=2, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(32, 32, kernel_size=3, stride=2, padding=1),
            nn.ReLU(inplace=True),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.features(x)


class ResNet50Backbone(nn.Module):
    """ResNet-50 trunk (everything before global pooling): stride 32, 2048 channels."""

    feature_channels = 2048
    stride = 32

    def __init__(self, pretrained: bool = False) -> None:
        super().__init__()
        from torchvision.models import resnet50

        weights = "IMAGENET1K_V1" if pretrained else None
        net = resnet50(weights=weights)
        self.features = nn.Sequential(
            net.conv1, net.bn1, net.relu, net.maxpool,
            net.layer1, net.layer2, net.layer3, net.layer4,
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.features(x)


_BACKBONES = {
    "resnet50": ResNet50Backbone,
    "tiny": TinyBackbone,
}


def build_backbone(name: str, pretrained: bool = False) -> nn.Module:
    """Construct a registered backbone by name."""
    try:
        factory = _BACKBONES[name]
    except KeyError:
        raise ConfigurationError(
            f"unknown backbone {name!r}; available: {sorted(_BACKBONES)}"
        ) from None
    if name == "resnet50":
        return factory(pretrained=pretrained)
    if pretrained:
        raise ConfigurationError(f"backbone {name!r} has no pretrained weights")
    return factory()


def backbone_names() -> list[str]:
    return sorted(_BACKBONES)
