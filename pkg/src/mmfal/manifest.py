"""Manifest ingestion and writing.

A manifest is a JSON Lines file with one record per image:

    {"sample_id": str, "patient_id": str, "modality": "LSTE|SSTE|LSTQ|LUS",
     "stage": "F0".."F4", "path": str, "roi": [x, y, w, h] | null}

``path`` is resolved relative to the manifest's directory when not absolute.
All records of one patient must agree on ``stage``.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any

from .errors import ManifestError
from .types import (
    DatasetIndex,
    FibrosisStage,
    ImageSample,
    ModalityKind,
    PatientRecord,
    RoiBox,
)

_REQUIRED_FIELDS = ("sample_id", "patient_id", "modality", "stage", "path")


def _parse_record(record: dict[str, Any], base_dir: Path, line_no: int) -> tuple[ImageSample, FibrosisStage]:
    for fieldname in _REQUIRED_FIELDS:
        if fieldname not in record:
            raise ManifestError(f"line {line_no}: missing field {fieldname!r}")

    try:
        modality = ModalityKind.parse(str(record["modality"]))
        stage = FibrosisStage.parse(str(record["stage"]))
    except ValueError as exc:
        raise ManifestError(f"line {line_no}: {exc}") from exc

    roi_value = record.get("roi")
    roi = None
    if roi_value is not None:
        if not (isinstance(roi_value, (list, tuple)) and len(roi_value) == 4):
            raise ManifestError(f"line {line_no}: roi must be [x, y, w, h] or null, got {roi_value!r}")
        try:
            roi = RoiBox(*(int(v) for v in roi_value))
        except (TypeError, ValueError) as exc:
            raise ManifestError(f"line {line_no}: invalid roi {roi_value!r}: {exc}") from exc

    path = Path(str(record["path"]))
    if not path.is_absolute():
        path = base_dir / path

    try:
        sample = ImageSample(
            sample_id=str(record["sample_id"]),
            patient_id=str(record["patient_id"]),
            modality=modality,
            source_path=path,
            roi=roi,
        )
    except ValueError as exc:
        raise ManifestError(f"line {line_no}: {exc}") from exc
    return sample, stage


def load_manifest(path: str | Path) -> DatasetIndex:
    """Read a JSON Lines manifest into a :class:`DatasetIndex`.

    Raises:
        ManifestError: on malformed records (with the offending line number),
            duplicate sample ids, unknown modality or stage tokens, or a
            patient whose records disagree on stage.
        FileNotFoundError: if the manifest file does not exist.
    """
    path = Path(path)
    base_dir = path.parent
    records: dict[str, PatientRecord] = {}
    seen_samples: set[str] = set()

    with path.open("r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"line {line_no}: not valid JSON: {exc}") from exc
            if not isinstance(raw, dict):
                raise ManifestError(f"line {line_no}: record must be a JSON object")

            sample, stage = _parse_record(raw, base_dir, line_no)
            if sample.sample_id in seen_samples:
                raise ManifestError(f"line {line_no}: duplicate sample_id {sample.sample_id!r}")
            seen_samples.add(sample.sample_id)

            record = records.get(sample.patient_id)
            if record is None:
                record = PatientRecord(patient_id=sample.patient_id, stage=stage)
                records[sample.patient_id] = record
            elif record.stage != stage:
                raise ManifestError(
                    f"line {line_no}: patient {sample.patient_id!r} has conflicting stages "
                    f"{record.stage} and {stage}"
                )
            record.add(sample)

    return DatasetIndex(list(records.values()))


def write_manifest(index: DatasetIndex, path: str | Path, relative_to: str | Path | None = None) -> None:
    """Write a DatasetIndex back out as JSON Lines (one record per image)."""
    path = Path(path)
    base = Path(relative_to) if relative_to is not None else None
    with path.open("w", encoding="utf-8") as handle:
        for record in index:
            for modality in record.samples:
                for sample in record.samples[modality]:
                    source = sample.source_path
                    if base is not None:
                        try:
                            source = source.relative_to(base)
                        except ValueError:
                            pass
                    handle.write(
                        json.dumps(
                            {
                                "sample_id": sample.sample_id,
                                "patient_id": sample.patient_id,
                                "modality": sample.modality.value,
                                "stage": record.stage.name,
                                "path": str(source),
                                "roi": sample.roi.as_list() if sample.roi else None,
                            },
                            sort_keys=False,
                        )
                        + "\n"
                    )
