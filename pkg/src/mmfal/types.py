"""Core dataset domain types: modalities, stages, samples, patients, tuples."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence


class ModalityKind(str, enum.Enum):
    """The four supported image modalities."""

    LSTE = "LSTE"
    SSTE = "SSTE"
    LSTQ = "LSTQ"
    LUS = "LUS"

    @classmethod
    def parse(cls, token: str) -> "ModalityKind":
        try:
            return cls(token)
        except ValueError:
            valid = ", ".join(m.value for m in cls)
            raise ValueError(f"unknown modality {token!r}; expected one of {valid}") from None

    def __str__(self) -> str:  # "LSTE", not "ModalityKind.LSTE"
        return self.value


# Canonical ordering used everywhere a fixed modality order is needed.
MODALITY_ORDER: tuple[ModalityKind, ...] = (
    ModalityKind.LSTE,
    ModalityKind.SSTE,
    ModalityKind.LSTQ,
    ModalityKind.LUS,
)


class FibrosisStage(enum.IntEnum):
    """Five-stage grading; ordinal value equals the digit in the name."""

    F0 = 0
    F1 = 1
    F2 = 2
    F3 = 3
    F4 = 4

    @classmethod
    def parse(cls, token: str) -> "FibrosisStage":
        try:
            return cls[token]
        except KeyError:
            raise ValueError(f"unknown stage {token!r}; expected F0..F4") from None

    def __str__(self) -> str:
        return self.name


NUM_STAGES = len(FibrosisStage)
STAGES: tuple[FibrosisStage, ...] = tuple(FibrosisStage)


@dataclass(frozen=True)
class RoiBox:
    """Axis-aligned crop region in pixel coordinates (x, y = top-left corner)."""

    x: int
    y: int
    width: int
    height: int

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"ROI must have positive size, got {self.width}x{self.height}")
        if self.x < 0 or self.y < 0:
            raise ValueError(f"ROI origin must be non-negative, got ({self.x}, {self.y})")

    def fits_within(self, image_width: int, image_height: int) -> bool:
        return self.x + self.width <= image_width and self.y + self.height <= image_height

    def as_list(self) -> list[int]:
        return [self.x, self.y, self.width, self.height]


@dataclass(frozen=True)
class ImageSample:
    """One image file belonging to a patient, in one modality."""

    sample_id: str
    patient_id: str
    modality: ModalityKind
    source_path: Path
    roi: Optional[RoiBox] = None

    def __post_init__(self) -> None:
        if not self.sample_id:
            raise ValueError("sample_id must be non-empty")
        if not self.patient_id:
            raise ValueError("patient_id must be non-empty")


@dataclass
class PatientRecord:
    """All images of one patient, grouped per modality, with the per-patient label."""

    patient_id: str
    stage: FibrosisStage
    samples: dict[ModalityKind, list[ImageSample]] = field(default_factory=dict)

    def add(self, sample: ImageSample) -> None:
        if sample.patient_id != self.patient_id:
            raise ValueError(
                f"sample {sample.sample_id} belongs to {sample.patient_id}, "
                f"not {self.patient_id}"
            )
        self.samples.setdefault(sample.modality, []).append(sample)

    def count(self, modality: ModalityKind) -> int:
        return len(self.samples.get(modality, []))

    def has_modalities(self, modalities: Iterable[ModalityKind]) -> bool:
        return all(self.count(m) > 0 for m in modalities)


class DatasetIndex:
    """Catalog of patients and their per-modality images, in manifest order."""

    def __init__(self, patients: Sequence[PatientRecord] = ()) -> None:
        self._patients: dict[str, PatientRecord] = {}
        self._samples: dict[str, ImageSample] = {}
        for record in patients:
            self.add_patient(record)

    def add_patient(self, record: PatientRecord) -> None:
        if record.patient_id in self._patients:
            raise ValueError(f"duplicate patient_id {record.patient_id!r}")
        for samples in record.samples.values():
            for sample in samples:
                if sample.sample_id in self._samples:
                    raise ValueError(f"duplicate sample_id {sample.sample_id!r}")
                self._samples[sample.sample_id] = sample
        self._patients[record.patient_id] = record

    @property
    def patients(self) -> list[PatientRecord]:
        return list(self._patients.values())

    @property
    def patient_ids(self) -> list[str]:
        return list(self._patients.keys())

    def patient(self, patient_id: str) -> PatientRecord:
        return self._patients[patient_id]

    def sample(self, sample_id: str) -> ImageSample:
        return self._samples[sample_id]

    def __len__(self) -> int:
        return len(self._patients)

    def __iter__(self) -> Iterator[PatientRecord]:
        return iter(self._patients.values())

    @property
    def modality_counts(self) -> dict[ModalityKind, int]:
        """Per-modality image totals, recomputed from the records."""
        counts: dict[ModalityKind, int] = {}
        for record in self._patients.values():
            for modality, samples in record.samples.items():
                counts[modality] = counts.get(modality, 0) + len(samples)
        return counts

    @property
    def stage_counts(self) -> dict[FibrosisStage, int]:
        """Per-stage patient totals."""
        counts: dict[FibrosisStage, int] = {stage: 0 for stage in FibrosisStage}
        for record in self._patients.values():
            counts[record.stage] += 1
        return counts


@dataclass(frozen=True)
class MultiModalSample:
    """An ordered tuple of images from one patient, one per selected modality.

    ``tuple_id`` joins the member sample ids with ``|`` and is the stable key
    used for pool bookkeeping and selection tie-breaking.
    """

    patient_id: str
    parts: tuple[tuple[ModalityKind, ImageSample], ...]
    stage: FibrosisStage

    def __post_init__(self) -> None:
        if len(self.parts) < 1:
            raise ValueError("a multi-modal sample needs at least one part")
        modalities = [m for m, _ in self.parts]
        if len(set(modalities)) != len(modalities):
            raise ValueError(f"modalities within one tuple must be distinct, got {modalities}")
        for _, sample in self.parts:
            if sample.patient_id != self.patient_id:
                raise ValueError(
                    f"all parts must come from patient {self.patient_id!r}, "
                    f"found {sample.patient_id!r}"
                )

    @property
    def tuple_id(self) -> str:
        return "|".join(sample.sample_id for _, sample in self.parts)

    @property
    def modalities(self) -> tuple[ModalityKind, ...]:
        return tuple(m for m, _ in self.parts)

    def image(self, modality: ModalityKind) -> ImageSample:
        for m, sample in self.parts:
            if m == modality:
                return sample
        raise KeyError(f"tuple has no {modality} part")


def parse_modalities(tokens: Sequence[str] | Sequence[ModalityKind]) -> tuple[ModalityKind, ...]:
    """Normalize a modality list, enforcing distinctness."""
    parsed = tuple(
        token if isinstance(token, ModalityKind) else ModalityKind.parse(str(token))
        for token in tokens
    )
    if len(parsed) == 0:
        raise ValueError("at least one modality is required")
    if len(set(parsed)) != len(parsed):
        raise ValueError(f"modalities must be distinct, got {[str(m) for m in parsed]}")
    return parsed
