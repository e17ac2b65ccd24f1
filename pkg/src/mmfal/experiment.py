"""Configuration-driven experiment runner.

One experiment = one dataset (manifest or synthetic), one modality selection,
one model, and optionally one active-learning schedule. The runner writes a
RunReport JSON, the ALHistory CSV plus its JSON sidecar, and a learning-curve
plot; reruns from the same config and seeds reproduce the metric files
byte-for-byte.
"""

from __future__ import annotations

import json
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

from .active_learning import ALHistory, LoopSchedule, QueryConfig, run_al_loop
from .errors import ConfigurationError
from .manifest import load_manifest
from .metrics import EvalReport, evaluate, format_percent
from .network import ModelConfig, build_model, save_checkpoint
from .preprocess import IDENTITY_NORM, IMAGENET_NORM, Normalization, RESIZE_MODE
from .splits import build_tuples, stratified_patient_split
from .synthetic import SyntheticSpec, generate_synthetic, spec_from_dict, spec_to_dict
from .training import TensorCache, TrainConfig, fit, predict_tuples
from .types import DatasetIndex, ModalityKind, parse_modalities

_NAMED_NORMS = {"imagenet": IMAGENET_NORM, "identity": IDENTITY_NORM}


def _parse_normalization(value: Any) -> Normalization:
    if value is None:
        return IMAGENET_NORM
    if isinstance(value, Normalization):
        return value
    if isinstance(value, str):
        try:
            return _NAMED_NORMS[value]
        except KeyError:
            raise ConfigurationError(
                f"unknown normalization {value!r}; expected one of {sorted(_NAMED_NORMS)}"
            ) from None
    return Normalization(mean=tuple(value["mean"]), std=tuple(value["std"]))


def _norm_to_json(norm: Normalization) -> Any:
    for name, known in _NAMED_NORMS.items():
        if norm == known:
            return name
    return {"mean": list(norm.mean), "std": list(norm.std)}


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce one run."""

    name: str
    modalities: tuple[ModalityKind, ...]
    manifest: Optional[Path] = None
    synthetic: Optional[SyntheticSpec] = None
    synthetic_seed: int = 0
    data_dir: Optional[Path] = None  # where synthetic data is generated
    model: ModelConfig = None  # type: ignore[assignment]
    train: TrainConfig = field(default_factory=TrainConfig)
    query: Optional[QueryConfig] = None
    seed_fraction: float = 0.05
    n_query_fraction: Optional[float] = None
    epochs_per_iteration: int = 5
    max_iterations: Optional[int] = None
    target_budget: Optional[float] = None
    train_fraction: float = 0.8
    split_seed: int = 0
    output_dir: Path = Path("runs")

    def __post_init__(self) -> None:
        object.__setattr__(self, "modalities", parse_modalities(self.modalities))
        if not 1 <= len(self.modalities) <= 2:
            raise ConfigurationError(
                f"experiments use one or two modalities, got {len(self.modalities)}"
            )
        if (self.manifest is None) == (self.synthetic is None):
            raise ConfigurationError("exactly one of manifest/synthetic must be set")
        if self.synthetic is not None and self.data_dir is None:
            raise ConfigurationError("synthetic datasets need a data_dir to generate into")
        if self.model is None:
            object.__setattr__(self, "model", ModelConfig(modalities=self.modalities))
        if self.model.modalities != self.modalities:
            raise ConfigurationError("model modalities must match the experiment's")
        if not 0.0 < self.seed_fraction < 1.0:
            raise ConfigurationError(f"seed_fraction must be in (0, 1), got {self.seed_fraction}")

    # -- JSON round trip ----------------------------------------------------

    @classmethod
    def from_dict(cls, raw: dict, base_dir: Path | None = None) -> "ExperimentConfig":
        base = Path(base_dir) if base_dir is not None else Path(".")

        def _resolve(p: Any) -> Optional[Path]:
            if p is None:
                return None
            path = Path(str(p))
            return path if path.is_absolute() else base / path

        modalities = parse_modalities(raw["modalities"])
        dataset = raw.get("dataset", {})
        manifest = _resolve(dataset.get("manifest"))
        synthetic = None
        if "synthetic" in dataset:
            synthetic = spec_from_dict(dataset["synthetic"])

        model_raw = dict(raw.get("model", {}))
        model_raw.setdefault("modalities", [m.value for m in modalities])
        model_raw["normalization"] = _parse_normalization(model_raw.get("normalization"))
        model = ModelConfig(
            modalities=parse_modalities(model_raw.pop("modalities")), **model_raw
        )

        train = TrainConfig(**raw.get("train", {}))

        query = None
        query_raw = raw.get("query")
        n_query_fraction = None
        if query_raw:
            query_raw = dict(query_raw)
            n_query_fraction = query_raw.pop("n_query_fraction", None)
            if "n_query" not in query_raw:
                query_raw["n_query"] = 1  # placeholder, resolved against the pool
                n_query_fraction = n_query_fraction or 0.05
            query = QueryConfig(seed=raw.get("seed", 0), **query_raw)

        schedule_raw = raw.get("schedule", {})
        return cls(
            name=raw.get("name", "experiment"),
            modalities=modalities,
            manifest=manifest,
            synthetic=synthetic,
            synthetic_seed=int(dataset.get("seed", 0)),
            data_dir=_resolve(dataset.get("out_dir")),
            model=model,
            train=train,
            query=query,
            seed_fraction=float(schedule_raw.get("seed_fraction", 0.05)),
            n_query_fraction=n_query_fraction,
            epochs_per_iteration=int(schedule_raw.get("epochs_per_iteration", 5)),
            max_iterations=schedule_raw.get("max_iterations"),
            target_budget=schedule_raw.get("target_budget"),
            train_fraction=float(raw.get("split", {}).get("train_fraction", 0.8)),
            split_seed=int(raw.get("split", {}).get("seed", 0)),
            output_dir=_resolve(raw.get("output_dir", "runs")) or Path("runs"),
        )

    @classmethod
    def from_json(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        raw = json.loads(path.read_text(encoding="utf-8"))
        config = cls.from_dict(raw, base_dir=path.parent)
        config.validate_paths()
        return config

    def validate_paths(self) -> None:
        if self.manifest is not None and not Path(self.manifest).exists():
            raise ConfigurationError(f"manifest does not exist: {self.manifest}")

    def to_dict(self) -> dict:
        dataset: dict[str, Any]
        if self.manifest is not None:
            dataset = {"manifest": str(self.manifest)}
        else:
            dataset = {
                "synthetic": spec_to_dict(self.synthetic),
                "seed": self.synthetic_seed,
                "out_dir": str(self.data_dir),
            }
        payload: dict[str, Any] = {
            "name": self.name,
            "modalities": [m.value for m in self.modalities],
            "dataset": dataset,
            "model": {**self.model.to_dict(), "normalization": _norm_to_json(self.model.normalization)},
            "train": {
                "learning_rate": self.train.learning_rate,
                "epochs": self.train.epochs,
                "batch_size": self.train.batch_size,
                "weight_decay": self.train.weight_decay,
                "freeze_backbone": self.train.freeze_backbone,
            },
            "schedule": {
                "seed_fraction": self.seed_fraction,
                "epochs_per_iteration": self.epochs_per_iteration,
                "max_iterations": self.max_iterations,
                "target_budget": self.target_budget,
            },
            "split": {"train_fraction": self.train_fraction, "seed": self.split_seed},
            "output_dir": str(self.output_dir),
        }
        payload["model"].pop("modalities", None)
        if self.query is not None:
            payload["query"] = {
                "strategy": self.query.strategy,
                "n_query": self.query.n_query,
                "n_query_fraction": self.n_query_fraction,
                "n_mc": self.query.n_mc,
            }
            payload["seed"] = self.query.seed
        else:
            payload["query"] = None
        return payload


@dataclass
class RunReport:
    """Echoed config, final metrics and environment fingerprint for one run."""

    name: str
    config: dict
    final: EvalReport
    history: Optional[ALHistory]
    test_patient_ids: list[str]
    environment: dict
    wall_time_s: float
    incomplete: bool = False
    error: Optional[str] = None

    @property
    def best_auc_formatted(self) -> str:
        """The table convention: best AUC with the budget that reached it."""
        if self.history is not None and self.history.records:
            best = self.history.best_point()
            return f"{format_percent(best.macro_auc)} ({100.0 * best.d:.1f}%)"
        return format_percent(self.final.macro_auc)

    def to_dict(self) -> dict:
        best = None
        if self.history is not None and self.history.records:
            record = self.history.best_point()
            best = {"macro_auc": record.macro_auc, "d": record.d, "formatted": self.best_auc_formatted}
        return {
            "name": self.name,
            "config": self.config,
            "final": self.final.to_dict() if self.final else None,
            "best": best,
            "test_patient_ids": self.test_patient_ids,
            "environment": self.environment,
            "wall_time_s": self.wall_time_s,
            "incomplete": self.incomplete,
            "error": self.error,
        }


def _environment_fingerprint(config: ExperimentConfig) -> dict:
    import numpy
    import torch

    return {
        "python": platform.python_version(),
        "torch": torch.__version__,
        "numpy": numpy.__version__,
        "resize_interpolation": RESIZE_MODE,
        "split_seed": config.split_seed,
        "query_seed": config.query.seed if config.query else None,
        "synthetic_seed": config.synthetic_seed if config.synthetic else None,
    }


def _load_dataset(config: ExperimentConfig) -> DatasetIndex:
    if config.manifest is not None:
        return load_manifest(config.manifest)

    data_dir = Path(config.data_dir)
    manifest_path = data_dir / "manifest.jsonl"
    fingerprint_path = data_dir / "synthetic_spec.json"
    fingerprint = json.dumps(
        {"spec": spec_to_dict(config.synthetic), "seed": config.synthetic_seed},
        sort_keys=True,
    )
    if manifest_path.exists() and fingerprint_path.exists():
        if fingerprint_path.read_text(encoding="utf-8") == fingerprint:
            return load_manifest(manifest_path)
        # the tree belongs to an older spec: drop it and regenerate
        import shutil

        shutil.rmtree(data_dir / "images", ignore_errors=True)
        manifest_path.unlink(missing_ok=True)
    elif manifest_path.exists():
        raise ConfigurationError(
            f"{data_dir} holds a manifest that this config did not generate; "
            "point 'manifest' at it directly or choose an empty out_dir"
        )

    index = generate_synthetic(config.synthetic, config.synthetic_seed, config.data_dir)
    fingerprint_path.write_text(fingerprint, encoding="utf-8")
    return index


def run_experiment(config: ExperimentConfig) -> RunReport:
    """Execute one experiment and write its artifacts under ``output_dir``.

    Without a query config this is plain supervised training on the full
    training pool; with one, the AL loop runs. A failure mid-loop still
    leaves the latest loop checkpoint plus a partial report flagged
    incomplete.
    """
    started = time.perf_counter()
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)

    index = _load_dataset(config)
    train_ids, test_ids = stratified_patient_split(index, config.train_fraction, config.split_seed)
    train_tuples = build_tuples(index, config.modalities, train_ids)
    test_tuples = build_tuples(index, config.modalities, test_ids)
    if not train_tuples or not test_tuples:
        raise ConfigurationError("split produced an empty train or test tuple list")

    size = (config.model.input_size, config.model.input_size)
    cache = TensorCache(size, config.model.normalization)

    history: Optional[ALHistory] = None
    report: EvalReport

    if config.query is None:
        import torch

        model = build_model(config.model, seed=config.split_seed)
        fit(model, train_tuples, cache, config.train,
            generator=torch.Generator().manual_seed(config.split_seed))
        probs = predict_tuples(model, test_tuples, cache)
        report = evaluate(list(zip(test_tuples, probs)), d=1.0)
    else:
        pool_size = len(train_tuples)
        seed_size = max(1, round(config.seed_fraction * pool_size))
        n_query = config.query.n_query
        if config.n_query_fraction is not None:
            n_query = max(1, round(config.n_query_fraction * pool_size))
        query = QueryConfig(
            strategy=config.query.strategy,
            n_query=n_query,
            n_mc=config.query.n_mc,
            seed=config.query.seed,
        )
        schedule = LoopSchedule(
            seed_size=seed_size,
            epochs_per_iteration=config.epochs_per_iteration,
            initial_epochs=config.train.epochs,
            max_iterations=config.max_iterations,
            target_budget=config.target_budget,
        )
        try:
            history, model, report = run_al_loop(
                train_tuples, test_tuples, config.model, config.train, query, schedule,
                cache, checkpoint_path=out / "loop.ckpt",
            )
        except Exception as exc:
            partial = RunReport(
                name=config.name,
                config=config.to_dict(),
                final=None,  # type: ignore[arg-type]
                history=None,
                test_patient_ids=test_ids,
                environment=_environment_fingerprint(config),
                wall_time_s=time.perf_counter() - started,
                incomplete=True,
                error=f"{type(exc).__name__}: {exc}",
            )
            (out / "report.json").write_text(
                json.dumps(partial.to_dict(), indent=2) + "\n", encoding="utf-8"
            )
            raise

    run_report = RunReport(
        name=config.name,
        config=config.to_dict(),
        final=report,
        history=history,
        test_patient_ids=test_ids,
        environment=_environment_fingerprint(config),
        wall_time_s=time.perf_counter() - started,
    )

    save_checkpoint(model, out / "model.ckpt")
    (out / "report.json").write_text(
        json.dumps(run_report.to_dict(), indent=2) + "\n", encoding="utf-8"
    )
    if history is not None:
        history.to_csv(out / "history.csv")
        history.write_sidecar(
            out / "history_meta.json",
            extra={"config": config.to_dict(), "environment": run_report.environment},
        )
        plot_learning_curve(history, out / "curve.png", title=config.name)
    return run_report


def plot_learning_curve(history: ALHistory, path: str | Path, title: str = "") -> None:
    """AUC and accuracy against the labeled fraction, best AUC point annotated."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    ds = [100.0 * r.d for r in history.records]
    aucs = [100.0 * r.macro_auc for r in history.records]
    accs = [100.0 * r.accuracy for r in history.records]
    best = history.best_point()

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(ds, aucs, marker="o", label="macro AUC")
    ax.plot(ds, accs, marker="s", label="accuracy")
    ax.annotate(
        f"{format_percent(best.macro_auc)} ({100.0 * best.d:.1f}%)",
        xy=(100.0 * best.d, 100.0 * best.macro_auc),
        xytext=(5, 8),
        textcoords="offset points",
        fontsize=9,
    )
    ax.set_xlabel("labeled fraction d (%)")
    ax.set_ylabel("score (%)")
    ax.set_title(title)
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


@dataclass
class ComparisonTable:
    columns: tuple[str, ...]
    rows: list[tuple[str, ...]]

    def to_markdown(self) -> str:
        if not self.rows:
            return ""
        header = "| " + " | ".join(self.columns) + " |"
        rule = "|" + "|".join(["---"] * len(self.columns)) + "|"
        body = ["| " + " | ".join(row) + " |" for row in self.rows]
        return "\n".join([header, rule, *body]) + "\n"

    def to_csv(self) -> str:
        if not self.rows:
            return ""
        lines = [",".join(self.columns)]
        lines += [",".join(row) for row in self.rows]
        return "\n".join(lines) + "\n"


def compare_runs(reports: Sequence[RunReport]) -> ComparisonTable:
    """Side-by-side Acc / macro AUC / best AUC (d) for runs on one test split."""
    columns = ("name", "modalities", "strategy", "acc", "macro_auc", "best_auc_d")
    if not reports:
        return ComparisonTable(columns=columns, rows=[])

    reference = reports[0].test_patient_ids
    for report in reports[1:]:
        if report.test_patient_ids != reference:
            raise ConfigurationError(
                f"comparison refused: run {report.name!r} used a different test split"
            )

    rows = []
    for report in reports:
        strategy = "none"
        if report.config.get("query"):
            strategy = report.config["query"]["strategy"]
        rows.append(
            (
                report.name,
                "+".join(report.config["modalities"]),
                strategy,
                format_percent(report.final.accuracy),
                format_percent(report.final.macro_auc),
                report.best_auc_formatted,
            )
        )
    return ComparisonTable(columns=columns, rows=rows)


MONO_GRID = ((ModalityKind.LSTE,), (ModalityKind.LUS,), (ModalityKind.LSTQ,))
BI_GRID = (
    (ModalityKind.LSTE, ModalityKind.LUS),
    (ModalityKind.LSTE, ModalityKind.LSTQ),
    (ModalityKind.LSTE, ModalityKind.SSTE),
)
GRID_STRATEGIES = (None, "RAND", "ESD")


def default_grid(base: ExperimentConfig) -> list[ExperimentConfig]:
    """Expand one base config into the standard mono/bi x strategy grid.

    Mono runs cover LSTE, LUS and LSTQ (never SSTE alone: it images a
    different organ); bi runs pair LSTE with each other modality. Every
    combination runs without AL and with the RAND and ESD strategies, all
    sharing the base split so the reports stay comparable.
    """
    from dataclasses import replace

    configs = []
    for modalities in MONO_GRID + BI_GRID:
        for strategy in GRID_STRATEGIES:
            tag = strategy.lower() if strategy else "full"
            name = f"{base.name}-{'+'.join(m.value.lower() for m in modalities)}-{tag}"
            query = None
            if strategy is not None:
                seed = base.query.seed if base.query else 0
                n_mc = base.query.n_mc if base.query else 5
                query = QueryConfig(strategy=strategy, n_query=1, n_mc=n_mc, seed=seed)
            configs.append(
                replace(
                    base,
                    name=name,
                    modalities=modalities,
                    model=replace(base.model, modalities=modalities),
                    query=query,
                    n_query_fraction=base.n_query_fraction or 0.05,
                    output_dir=Path(base.output_dir) / name,
                )
            )
    return configs


def load_report(path: str | Path) -> RunReport:
    """Rehydrate a RunReport (including its history CSV when present)."""
    path = Path(path)
    raw = json.loads(path.read_text(encoding="utf-8"))
    from .metrics import EvalReport as _ER
    from .types import FibrosisStage

    final = None
    if raw.get("final"):
        f = raw["final"]
        final = _ER(
            accuracy=f["accuracy"],
            per_stage_auc={
                s: f[f"auc_{s.name.lower()}"] for s in FibrosisStage if f.get(f"auc_{s.name.lower()}") is not None
            },
            macro_auc=f["macro_auc"],
            stage_counts={FibrosisStage.parse(k): v for k, v in f.get("stage_counts", {}).items()},
            n_test_patients=f["n_test_patients"],
            d=f.get("d"),
        )

    history = None
    csv_path = path.parent / "history.csv"
    if csv_path.exists():
        from .active_learning import IterationRecord

        records = []
        lines = csv_path.read_text(encoding="utf-8").strip().splitlines()[1:]
        for line in lines:
            t, d, n_labeled, strategy, acc, auc, _ = line.split(",")
            records.append(
                IterationRecord(
                    t=int(t),
                    d=float(d),
                    n_labeled=int(n_labeled),
                    strategy=strategy,
                    selected_ids=(),
                    accuracy=float(acc),
                    macro_auc=float(auc),
                )
            )
        history = ALHistory(records=records)

    return RunReport(
        name=raw["name"],
        config=raw["config"],
        final=final,
        history=history,
        test_patient_ids=raw["test_patient_ids"],
        environment=raw["environment"],
        wall_time_s=raw["wall_time_s"],
        incomplete=raw.get("incomplete", False),
        error=raw.get("error"),
    )
