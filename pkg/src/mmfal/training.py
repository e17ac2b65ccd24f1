"""Supervised training and batched inference over multi-modal tuples."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch
from torch import nn

from .network import FusionNet
from .preprocess import IMAGENET_NORM, Normalization, preprocess
from .types import ImageSample, ModalityKind, MultiModalSample


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    epochs: int = 5
    batch_size: int = 32
    weight_decay: float = 0.0
    freeze_backbone: bool = False

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")


class TensorCache:
    """Lazy cache of preprocessed image tensors keyed by sample id.

    Dataset tensors are immutable after load, so one cache can be shared by
    training, pool scoring and evaluation within an experiment.
    """

    def __init__(
        self,
        target_size: tuple[int, int],
        normalization: Normalization = IMAGENET_NORM,
    ) -> None:
        self.target_size = target_size
        self.normalization = normalization
        self._tensors: dict[str, torch.Tensor] = {}

    def get(self, sample: ImageSample) -> torch.Tensor:
        tensor = self._tensors.get(sample.sample_id)
        if tensor is None:
            tensor = preprocess(sample, self.target_size, self.normalization)
            self._tensors[sample.sample_id] = tensor
        return tensor

    def batch(
        self,
        tuples: Sequence[MultiModalSample],
        modalities: Sequence[ModalityKind],
    ) -> list[torch.Tensor]:
        """Stack tuple images into one (B, 3, H, W) tensor per modality."""
        return [
            torch.stack([self.get(t.image(modality)) for t in tuples])
            for modality in modalities
        ]

    def __len__(self) -> int:
        return len(self._tensors)


def fit(
    model: FusionNet,
    tuples: Sequence[MultiModalSample],
    cache: TensorCache,
    config: TrainConfig,
    generator: Optional[torch.Generator] = None,
    labels: Optional[Sequence[int]] = None,
) -> list[float]:
    """Train with cross-entropy and Adam; returns the mean loss per epoch.

    Shuffling and dropout draw from ``generator`` when given, so training is
    reproducible under an explicit seed. With ``freeze_backbone`` only the
    reduction, attention and classifier weights are updated. ``labels``
    overrides the tuples' held stages (used when labels come from a live
    oracle rather than the manifest).
    """
    if len(tuples) == 0:
        raise ValueError("cannot train on an empty tuple list")
    if labels is not None and len(labels) != len(tuples):
        raise ValueError("labels must match tuples one to one")

    for stream in model.streams.values():
        for param in stream.backbone.parameters():
            param.requires_grad = not config.freeze_backbone

    trainable = [p for p in model.parameters() if p.requires_grad]
    optimizer = torch.optim.Adam(
        trainable, lr=config.learning_rate, weight_decay=config.weight_decay
    )
    loss_fn = nn.CrossEntropyLoss()
    if labels is None:
        labels = [int(t.stage) for t in tuples]
    labels = torch.tensor(list(labels), dtype=torch.long)

    model.train()
    epoch_losses: list[float] = []
    n = len(tuples)
    for _ in range(config.epochs):
        order = torch.randperm(n, generator=generator)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            batch = [tuples[i] for i in idx.tolist()]
            parts = cache.batch(batch, model.config.modalities)
            logits = model.logits(parts, use_dropout=True, generator=generator)
            loss = loss_fn(logits, labels[idx])
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total += loss.item() * len(batch)
        epoch_losses.append(total / n)
    model.eval()
    return epoch_losses


def predict_tuples(
    model: FusionNet,
    tuples: Sequence[MultiModalSample],
    cache: TensorCache,
    batch_size: int = 64,
) -> np.ndarray:
    """Deterministic class probabilities for each tuple, shape (N, num_classes)."""
    chunks = []
    for start in range(0, len(tuples), batch_size):
        batch = tuples[start : start + batch_size]
        parts = cache.batch(batch, model.config.modalities)
        chunks.append(model.predict_proba(parts).numpy())
    if not chunks:
        return np.zeros((0, model.config.num_classes), dtype=np.float32)
    return np.concatenate(chunks, axis=0)


def predict_tuples_mc(
    model: FusionNet,
    tuples: Sequence[MultiModalSample],
    cache: TensorCache,
    n_mc: int,
    generator: Optional[torch.Generator] = None,
    batch_size: int = 64,
) -> np.ndarray:
    """MC-dropout-averaged class probabilities for each tuple, shape (N, num_classes)."""
    chunks = []
    for start in range(0, len(tuples), batch_size):
        batch = tuples[start : start + batch_size]
        parts = cache.batch(batch, model.config.modalities)
        chunks.append(model.predict_mc(parts, n_mc=n_mc, generator=generator).numpy())
    if not chunks:
        return np.zeros((0, model.config.num_classes), dtype=np.float32)
    return np.concatenate(chunks, axis=0)
