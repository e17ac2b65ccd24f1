import json
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from mmfal import (
    DatasetIndex,
    FibrosisStage,
    ModalityKind,
    MODALITY_ORDER,
    SyntheticSpec,
    generate_synthetic,
    load_manifest,
)


def write_png(path: Path, array: np.ndarray) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "L" if array.ndim == 2 else "RGB"
    Image.fromarray(array.astype(np.uint8), mode=mode).save(path)


def make_manifest(tmp_path: Path, records: list[dict], name: str = "manifest.jsonl") -> Path:
    path = tmp_path / name
    path.write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")
    return path


def gray_image(size: int = 32, value: int = 128) -> np.ndarray:
    return np.full((size, size), value, dtype=np.uint8)


def small_index(tmp_path: Path, counts_per_modality: dict[ModalityKind, int],
                n_patients: int = 2, stage_cycle: tuple = tuple(FibrosisStage)) -> DatasetIndex:
    """Write a tiny on-disk dataset and load it through the manifest path."""
    records = []
    for p in range(n_patients):
        pid = f"pat{p:02d}"
        stage = stage_cycle[p % len(stage_cycle)]
        for modality, count in counts_per_modality.items():
            for k in range(count):
                sid = f"{pid}-{modality.value}-{k}"
                img_path = tmp_path / "imgs" / f"{sid}.png"
                write_png(img_path, gray_image(value=40 * (p + 1) % 256))
                records.append(
                    {
                        "sample_id": sid,
                        "patient_id": pid,
                        "modality": modality.value,
                        "stage": stage.name,
                        "path": str(img_path),
                        "roi": None,
                    }
                )
    return load_manifest(make_manifest(tmp_path, records))


@pytest.fixture(scope="session")
def desk_spec() -> SyntheticSpec:
    """Small, fast synthetic shape shared by the slower integration tests."""
    return SyntheticSpec(
        patients_per_stage=(5, 5, 5, 5, 5),
        images_per_modality={m: 1 for m in MODALITY_ORDER},
        image_size=32,
        roi_margin=8,
        noise_level=0.05,
        corrupt_fraction=0.0,
    )


@pytest.fixture(scope="session")
def desk_dataset(tmp_path_factory, desk_spec):
    out = tmp_path_factory.mktemp("desk_synth")
    return generate_synthetic(desk_spec, seed=7, out_dir=out)
