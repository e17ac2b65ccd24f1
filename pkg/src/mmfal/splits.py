"""Patient-level stratified splitting and cross-modality tuple construction."""

from __future__ import annotations

import itertools
from typing import Iterable, Sequence

import numpy as np

from .types import DatasetIndex, FibrosisStage, ModalityKind, MultiModalSample, parse_modalities


def stratified_patient_split(
    index: DatasetIndex,
    train_fraction: float,
    seed: int,
) -> tuple[list[str], list[str]]:
    """Split patient ids into train/test, stratified per stage.

    Per stage, floor(count * train_fraction) patients go to train and the
    remainder to test, so the test set is never starved by rounding. The
    assignment is a partition and is deterministic for a given seed.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")

    by_stage: dict[FibrosisStage, list[str]] = {stage: [] for stage in FibrosisStage}
    for record in index:
        by_stage[record.stage].append(record.patient_id)

    rng = np.random.default_rng(seed)
    train_ids: list[str] = []
    test_ids: list[str] = []
    for stage in FibrosisStage:
        ids = by_stage[stage]
        if not ids:
            continue
        order = rng.permutation(len(ids))
        n_train = int(np.floor(len(ids) * train_fraction))
        train_ids.extend(ids[i] for i in order[:n_train])
        test_ids.extend(ids[i] for i in order[n_train:])

    return sorted(train_ids), sorted(test_ids)


def build_tuples(
    index: DatasetIndex,
    modalities: Sequence[ModalityKind] | Sequence[str],
    patient_ids: Iterable[str] | None = None,
) -> list[MultiModalSample]:
    """Build the full per-patient Cartesian product of images across modalities.

    Patients missing any requested modality contribute nothing. With a single
    modality this degenerates to one tuple per image. Order is deterministic:
    patients in index order, images in manifest order.
    """
    ordered = parse_modalities(modalities)
    wanted = set(patient_ids) if patient_ids is not None else None

    tuples: list[MultiModalSample] = []
    for record in index:
        if wanted is not None and record.patient_id not in wanted:
            continue
        if not record.has_modalities(ordered):
            continue
        pools = [record.samples[m] for m in ordered]
        for combo in itertools.product(*pools):
            tuples.append(
                MultiModalSample(
                    patient_id=record.patient_id,
                    parts=tuple(zip(ordered, combo)),
                    stage=record.stage,
                )
            )
    return tuples
