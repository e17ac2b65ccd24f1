"""Deterministic synthetic dataset generator for desk-scale benchmarks.

Every stage imprints a visual signature (mean intensity plus an oriented
sinusoidal texture) on each modality, but the signature only encodes a
*coarsened view* of the stage, and the coarsening differs per modality:

* LSTE and SSTE see the stage's parity: {F0, F2, F4} vs {F1, F3}.
* LUS and LSTQ see the stage's coarse index ``stage // 2``: {F0, F1},
  {F2, F3}, {F4}.

No single modality therefore determines the class, while the pair
(parity, coarse index) does, so an elastography stream fused with either
whole-image stream is fully informative.

Within a class, images vary: each patient draws a per-modality intensity
offset (easy patients sit far from the neighbouring view's level, hard ones
near the boundary), each image jitters its texture phase, and pixels carry
additive noise. A configurable fraction of images is corrupted with the
signature of a wrong view; under a simulated oracle these behave like
mislabeled data. Setting ``noise_level``, ``patient_sigma``, ``phase_jitter``
and ``corrupt_fraction`` all to zero makes the data exactly separable by a
per-class mean.

Generated trees contain ``images/*.png`` plus ``manifest.jsonl`` in the
standard manifest schema, so synthetic and real data flow through one
ingestion path.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
from PIL import Image

from .manifest import load_manifest
from .types import DatasetIndex, FibrosisStage, ModalityKind, MODALITY_ORDER

# Default cohort: 168 patients distributed over F0..F4.
DEFAULT_PATIENTS_PER_STAGE = (41, 51, 31, 27, 18)


def modality_view(modality: ModalityKind, stage: FibrosisStage) -> tuple[int, int]:
    """Return (view value, number of views) the modality exposes for a stage."""
    if modality in (ModalityKind.LSTE, ModalityKind.SSTE):
        return int(stage) % 2, 2
    return int(stage) // 2, 3


@dataclass(frozen=True)
class SyntheticSpec:
    """Shape and signal parameters of a generated dataset.

    ``level_spread`` spaces the per-view mean intensities; ``patient_sigma``
    is the spread of per-patient, per-modality intensity offsets (the source
    of hard boundary cases); ``phase_jitter`` randomizes the texture phase
    per image (1.0 = a full cycle); ``noise_level`` is per-pixel Gaussian.
    """

    patients_per_stage: tuple[int, int, int, int, int] = DEFAULT_PATIENTS_PER_STAGE
    images_per_modality: Mapping[ModalityKind, int] = field(
        default_factory=lambda: {m: 2 for m in MODALITY_ORDER}
    )
    image_size: int = 64
    roi_margin: int = 16
    noise_level: float = 0.06
    patient_sigma: float = 0.05
    phase_jitter: float = 1.0
    corrupt_fraction: float = 0.10
    texture_amplitude: float = 0.08
    level_spread: float = 0.20

    def __post_init__(self) -> None:
        if len(self.patients_per_stage) != len(FibrosisStage):
            raise ValueError("patients_per_stage must list all five stages")
        if any(c <= 0 for c in self.patients_per_stage):
            raise ValueError(f"patient counts must be positive, got {self.patients_per_stage}")
        if any(c <= 0 for c in self.images_per_modality.values()):
            raise ValueError("images_per_modality counts must be positive")
        if self.image_size <= 0 or self.roi_margin < 0:
            raise ValueError("image_size must be positive and roi_margin non-negative")
        if not 0.0 <= self.corrupt_fraction < 1.0:
            raise ValueError(f"corrupt_fraction must be in [0, 1), got {self.corrupt_fraction}")
        for name in ("noise_level", "patient_sigma", "phase_jitter", "level_spread"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be non-negative")

    @property
    def modalities(self) -> tuple[ModalityKind, ...]:
        return tuple(m for m in MODALITY_ORDER if m in self.images_per_modality)


# Texture orientation per modality: coefficients of (row, col) in the phase.
_ORIENTATION = {
    ModalityKind.LSTE: (1.0, 0.0),
    ModalityKind.SSTE: (0.0, 1.0),
    ModalityKind.LSTQ: (0.5, 0.5),
    ModalityKind.LUS: (0.5, -0.5),
}


def view_level(view: int, n_views: int, spread: float) -> float:
    """Mean intensity of one view, centered around 0.5."""
    return 0.5 + spread * (view - (n_views - 1) / 2.0)


def base_pattern(
    modality: ModalityKind,
    view: int,
    n_views: int,
    size: int,
    amplitude: float,
    spread: float,
    phase: float = 0.0,
) -> np.ndarray:
    """Noise-free signature of one (modality, view) pair, values around [0, 1]."""
    level = view_level(view, n_views, spread)
    rows = np.arange(size, dtype=np.float64)[:, None] / size
    cols = np.arange(size, dtype=np.float64)[None, :] / size
    a, b = _ORIENTATION[modality]
    coordinate = a * rows + b * cols
    frequency = 2.0 + 2.0 * view
    return level + amplitude * np.sin(2.0 * np.pi * (frequency * coordinate + phase))


def _render_image(
    spec: SyntheticSpec,
    modality: ModalityKind,
    stage: FibrosisStage,
    patient_offset: float,
    rng: np.random.Generator,
) -> tuple[np.ndarray, tuple[int, int, int, int] | None]:
    """Render one image; returns (uint8 array, roi or None)."""
    view, n_views = modality_view(modality, stage)

    # Corrupted images carry the signature of some other view of the same
    # modality: under a simulated oracle their label stays the patient's true
    # stage, so they behave like mislabeled training data.
    if spec.corrupt_fraction > 0 and rng.random() < spec.corrupt_fraction:
        others = [v for v in range(n_views) if v != view]
        view = int(rng.choice(others))

    phase = float(rng.random()) * spec.phase_jitter
    content = base_pattern(
        modality, view, n_views, spec.image_size,
        spec.texture_amplitude, spec.level_spread, phase,
    )
    content = content + patient_offset

    roi = None
    if modality in (ModalityKind.LSTE, ModalityKind.SSTE) and spec.roi_margin > 0:
        full = spec.image_size + 2 * spec.roi_margin
        canvas = np.full((full, full), 0.5, dtype=np.float64)
        canvas[
            spec.roi_margin : spec.roi_margin + spec.image_size,
            spec.roi_margin : spec.roi_margin + spec.image_size,
        ] = content
        content = canvas
        roi = (spec.roi_margin, spec.roi_margin, spec.image_size, spec.image_size)

    if spec.noise_level > 0:
        content = content + rng.normal(0.0, spec.noise_level, size=content.shape)

    pixels = np.clip(np.round(content * 255.0), 0, 255).astype(np.uint8)
    return pixels, roi


def generate_synthetic(spec: SyntheticSpec, seed: int, out_dir: str | Path) -> DatasetIndex:
    """Generate a dataset tree under ``out_dir`` and load it back.

    The same (spec, seed) always produces byte-identical image files and an
    identical manifest. Returns the DatasetIndex read through the normal
    manifest loader.
    """
    out_dir = Path(out_dir)
    image_dir = out_dir / "images"
    image_dir.mkdir(parents=True, exist_ok=True)
    manifest_path = out_dir / "manifest.jsonl"

    rng = np.random.default_rng(seed)
    lines: list[str] = []

    for stage, n_patients in zip(FibrosisStage, spec.patients_per_stage):
        for p in range(n_patients):
            patient_id = f"{stage.name}-{p:03d}"
            offsets = {
                modality: float(rng.normal(0.0, spec.patient_sigma)) if spec.patient_sigma > 0 else 0.0
                for modality in spec.modalities
            }
            for modality in spec.modalities:
                for k in range(spec.images_per_modality[modality]):
                    sample_id = f"{patient_id}-{modality.value}-{k}"
                    pixels, roi = _render_image(spec, modality, stage, offsets[modality], rng)
                    filename = f"images/{sample_id}.png"
                    Image.fromarray(pixels, mode="L").save(out_dir / filename)
                    lines.append(
                        _manifest_line(sample_id, patient_id, modality, stage, filename, roi)
                    )

    manifest_path.write_text("".join(lines), encoding="utf-8")
    return load_manifest(manifest_path)


def _manifest_line(
    sample_id: str,
    patient_id: str,
    modality: ModalityKind,
    stage: FibrosisStage,
    path: str,
    roi: tuple[int, int, int, int] | None,
) -> str:
    import json

    return (
        json.dumps(
            {
                "sample_id": sample_id,
                "patient_id": patient_id,
                "modality": modality.value,
                "stage": stage.name,
                "path": path,
                "roi": list(roi) if roi else None,
            }
        )
        + "\n"
    )


def spec_from_dict(raw: Mapping) -> SyntheticSpec:
    """Build a SyntheticSpec from a plain JSON-style mapping."""
    kwargs = dict(raw)
    if "images_per_modality" in kwargs:
        kwargs["images_per_modality"] = {
            ModalityKind.parse(str(k)): int(v)
            for k, v in kwargs["images_per_modality"].items()
        }
    if "patients_per_stage" in kwargs:
        kwargs["patients_per_stage"] = tuple(int(v) for v in kwargs["patients_per_stage"])
    return SyntheticSpec(**kwargs)


def spec_to_dict(spec: SyntheticSpec) -> dict:
    return {
        "patients_per_stage": list(spec.patients_per_stage),
        "images_per_modality": {m.value: n for m, n in spec.images_per_modality.items()},
        "image_size": spec.image_size,
        "roi_margin": spec.roi_margin,
        "noise_level": spec.noise_level,
        "patient_sigma": spec.patient_sigma,
        "phase_jitter": spec.phase_jitter,
        "corrupt_fraction": spec.corrupt_fraction,
        "texture_amplitude": spec.texture_amplitude,
        "level_spread": spec.level_spread,
    }
