"""Experiment runner: scenarios OT/RT/SD, noise, records, comparisons.

One experiment = one dataset, one scenario, R repetitions with seeds
``seed + rep``. Each repetition produces a RunRecord persisted as a CSV
whose content is a pure function of the config (wall time lives in a
sidecar .meta.json so records from identical configs are byte-identical).

Run CSV layout::

    # colonylearn run v1
    # key=value            (effective config, sorted keys)
    epoch,positive_loss,opposite_loss,composite_loss,
        normalized_composite_loss,train_accuracy,test_accuracy

Normalized loss is the per-run min-max rescaling of the epoch-mean
composite loss; a constant-loss run cannot be rescaled, so it emits zeros
and sets the zero_range flag instead of dividing by zero.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import datasets as ds_mod
from .datasets import Dataset, NoiseManifest, standardize_features
from .losses import CompositeLossConfig
from .network import (
    MLP3_HIDDEN,
    OT,
    SCENARIOS,
    SolverConfig,
    TrainingLog,
    init_mlp,
    train,
)
from .sampler import SeededRng
from .taxonomy import BUILTIN_TAXONOMIES, SemanticPrior, builtin_prior, load_prior

# Published full-scale reference accuracies for the MLP-3/adam
# configuration family (not a desk-scale target).
FASHION_MNIST_REFERENCE = {"OT": 91.5, "RT": 91.77, "SD": 91.78}

_RUN_HEADER = "# colonylearn run v1"
_RUN_COLUMNS = (
    "epoch,positive_loss,opposite_loss,composite_loss,"
    "normalized_composite_loss,train_accuracy,test_accuracy"
)

_DEFAULT_TAXONOMY = {
    "fashion-mnist": "fashion-mnist",
    "cifar10": "cifar10",
    "cifar100": "cifar100-sd-v1",
}

FASHION_MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str = "blobs"
    data_dir: str | None = None
    scenario: str = "SD"
    taxonomy: str | None = None  # builtin key or file path; None = default
    alpha1: float = 1.0
    alpha2: float = 0.5
    prob_clamp: float = 1e-7
    solver: SolverConfig = field(default_factory=SolverConfig)
    seed: int = 0
    noise_ratio: float = 0.0
    repetitions: int = 3
    out_dir: str | None = None
    hidden_sizes: tuple[int, ...] = MLP3_HIDDEN
    loss_reduction: str = "mean"
    # synthetic-blobs shape (dataset == "blobs")
    blob_classes: int = 4
    blob_colony_sizes: tuple[int, ...] = (2, 2)
    blob_per_class: int = 200
    blob_test_per_class: int = 100
    blob_dim: int = 16
    blob_separation: float = 8.0

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"scenario must be one of {SCENARIOS}, got {self.scenario!r}")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if not 0 <= self.noise_ratio < 1:
            raise ValueError("noise_ratio must lie in [0, 1)")
        self.loss_config()  # validates alphas and clamp

    def loss_config(self) -> CompositeLossConfig:
        # OT ignores alpha2 entirely; keep the recorded config honest.
        alpha2 = 0.0 if self.scenario == OT else self.alpha2
        if self.scenario == OT and self.alpha1 == 0:
            raise ValueError("OT training needs alpha1 > 0")
        return CompositeLossConfig(
            alpha1=self.alpha1, alpha2=alpha2, prob_clamp=self.prob_clamp
        )

    def snapshot(self, rep: int, run_seed: int) -> dict[str, str]:
        """Effective config as flat strings, embedded in every run CSV."""
        items = {
            "dataset": self.dataset,
            "scenario": self.scenario,
            "taxonomy": self.taxonomy or "",
            "alpha1": repr(self.alpha1),
            "alpha2": repr(self.alpha2),
            "prob_clamp": repr(self.prob_clamp),
            "solver": self.solver.kind,
            "learning_rate": repr(self.solver.learning_rate),
            "momentum": repr(self.solver.momentum),
            "beta1": repr(self.solver.beta1),
            "beta2": repr(self.solver.beta2),
            "eps": repr(self.solver.eps),
            "batch_size": str(self.solver.batch_size),
            "epochs": str(self.solver.epochs),
            "hidden_sizes": ",".join(map(str, self.hidden_sizes)),
            "loss_reduction": self.loss_reduction,
            "noise_ratio": repr(self.noise_ratio),
            "seed": str(self.seed),
            "rep": str(rep),
            "run_seed": str(run_seed),
            "repetitions": str(self.repetitions),
        }
        if self.dataset == "blobs":
            items.update(
                blob_classes=str(self.blob_classes),
                blob_colony_sizes=",".join(map(str, self.blob_colony_sizes)),
                blob_per_class=str(self.blob_per_class),
                blob_test_per_class=str(self.blob_test_per_class),
                blob_dim=str(self.blob_dim),
                blob_separation=repr(self.blob_separation),
            )
        return items


@dataclass
class RunRecord:
    """Everything one training repetition produced."""

    rows: list[dict]  # per-epoch dicts keyed like the CSV columns
    final_accuracy: float
    wall_time_s: float
    config: dict[str, str]
    seed: int
    sampler_draws: int
    zero_loss_range: bool


class MissingDataError(FileNotFoundError):
    """Dataset files were not found under the configured data directory."""


def fashion_mnist_paths(data_dir) -> dict[str, Path] | None:
    """Locate the four IDX files (optionally .gz); None when absent."""
    if data_dir is None:
        return None
    base = Path(data_dir)
    for sub in (base, base / "fashion-mnist", base / "FashionMNIST" / "raw"):
        found = {}
        for key, name in FASHION_MNIST_FILES.items():
            for cand in (sub / name, sub / (name + ".gz")):
                if cand.is_file():
                    found[key] = cand
                    break
        if len(found) == len(FASHION_MNIST_FILES):
            return found
    return None


def cifar10_paths(data_dir) -> list[Path] | None:
    if data_dir is None:
        return None
    for sub in (Path(data_dir), Path(data_dir) / "cifar-10-batches-bin"):
        train = [sub / f"data_batch_{i}.bin" for i in range(1, 6)]
        test = sub / "test_batch.bin"
        if all(p.is_file() for p in train) and test.is_file():
            return [*train, test]
    return None


def cifar100_paths(data_dir) -> list[Path] | None:
    if data_dir is None:
        return None
    for sub in (Path(data_dir), Path(data_dir) / "cifar-100-binary"):
        train, test = sub / "train.bin", sub / "test.bin"
        if train.is_file() and test.is_file():
            return [train, test]
    return None


def resolve_prior(cfg: ExperimentConfig) -> SemanticPrior | None:
    """The prior named by the config; None for blobs (generated with data)."""
    if cfg.taxonomy:
        if cfg.taxonomy in BUILTIN_TAXONOMIES:
            return builtin_prior(cfg.taxonomy)
        path = Path(cfg.taxonomy)
        if not path.is_file():
            raise FileNotFoundError(f"taxonomy file not found: {path}")
        return load_prior(path.read_text(encoding="utf-8"))
    if cfg.dataset == "blobs":
        return None
    if cfg.dataset in _DEFAULT_TAXONOMY:
        return builtin_prior(_DEFAULT_TAXONOMY[cfg.dataset])
    synth_dir = Path(cfg.dataset)
    tax = synth_dir / "taxonomy.txt"
    if tax.is_file():
        return load_prior(tax.read_text(encoding="utf-8"))
    raise ValueError(
        f"no taxonomy available for dataset {cfg.dataset!r}; pass --taxonomy"
    )


def load_experiment_data(
    cfg: ExperimentConfig, rng: SeededRng
) -> tuple[Dataset, Dataset, SemanticPrior]:
    """Materialize (train, test, prior) for the configured dataset."""
    if cfg.dataset == "blobs":
        train_ds, prior = ds_mod.synth_blobs(
            cfg.blob_classes, cfg.blob_colony_sizes, cfg.blob_per_class,
            cfg.blob_dim, cfg.blob_separation, rng, split="train",
        )
        test_ds, _ = ds_mod.synth_blobs(
            cfg.blob_classes, cfg.blob_colony_sizes, cfg.blob_test_per_class,
            cfg.blob_dim, cfg.blob_separation, rng, split="test",
        )
        if cfg.taxonomy:
            prior = resolve_prior(cfg) or prior
        return train_ds, test_ds, prior
    prior = resolve_prior(cfg)
    if cfg.dataset == "fashion-mnist":
        paths = fashion_mnist_paths(cfg.data_dir)
        if paths is None:
            raise MissingDataError(
                f"Fashion-MNIST IDX files not found under {cfg.data_dir!r}"
            )
        train_ds = ds_mod.load_idx(
            paths["train_images"].read_bytes(), paths["train_labels"].read_bytes(),
            split="train", provenance="fashion-mnist train",
        )
        test_ds = ds_mod.load_idx(
            paths["test_images"].read_bytes(), paths["test_labels"].read_bytes(),
            split="test", provenance="fashion-mnist test",
        )
    elif cfg.dataset == "cifar10":
        paths = cifar10_paths(cfg.data_dir)
        if paths is None:
            raise MissingDataError(f"CIFAR-10 .bin files not found under {cfg.data_dir!r}")
        train_ds = ds_mod.load_cifar(
            [p.read_bytes() for p in paths[:5]], "cifar10", split="train"
        )
        test_ds = ds_mod.load_cifar(paths[5].read_bytes(), "cifar10", split="test")
    elif cfg.dataset == "cifar100":
        paths = cifar100_paths(cfg.data_dir)
        if paths is None:
            raise MissingDataError(f"CIFAR-100 .bin files not found under {cfg.data_dir!r}")
        train_ds = ds_mod.load_cifar(paths[0].read_bytes(), "cifar100", split="train")
        test_ds = ds_mod.load_cifar(paths[1].read_bytes(), "cifar100", split="test")
    else:
        synth_dir = Path(cfg.dataset)
        train_npz, test_npz = synth_dir / "train.npz", synth_dir / "test.npz"
        if not (train_npz.is_file() and test_npz.is_file()):
            raise ValueError(
                f"dataset {cfg.dataset!r} is neither a known name nor a "
                "directory holding train.npz/test.npz"
            )
        train_ds, test_ds = ds_mod.load_npz(train_npz), ds_mod.load_npz(test_npz)
    assert prior is not None
    return train_ds, test_ds, prior


def _normalized_losses(comp: np.ndarray) -> tuple[np.ndarray, bool]:
    lo, hi = float(comp.min()), float(comp.max())
    if hi - lo <= 0.0:
        return np.zeros_like(comp), True
    return (comp - lo) / (hi - lo), False


def _record_from_log(
    log: TrainingLog, cfg: ExperimentConfig, rep: int, run_seed: int,
    wall_time: float,
) -> RunRecord:
    comp = np.array([e.composite_loss for e in log.epochs])
    norm, degenerate = _normalized_losses(comp)
    rows = [
        {
            "epoch": e.epoch,
            "positive_loss": e.positive_loss,
            "opposite_loss": e.opposite_loss,
            "composite_loss": e.composite_loss,
            "normalized_composite_loss": float(norm[i]),
            "train_accuracy": e.train_accuracy,
            "test_accuracy": e.test_accuracy,
        }
        for i, e in enumerate(log.epochs)
    ]
    return RunRecord(
        rows=rows,
        final_accuracy=rows[-1]["test_accuracy"],
        wall_time_s=wall_time,
        config=cfg.snapshot(rep, run_seed),
        seed=run_seed,
        sampler_draws=log.sampler_draws,
        zero_loss_range=degenerate,
    )


def run_repetition(cfg: ExperimentConfig, rep: int) -> tuple[RunRecord, NoiseManifest | None]:
    """One seeded end-to-end run: data, optional noise, train, record."""
    run_seed = cfg.seed + rep
    rng = SeededRng(run_seed)
    started = time.perf_counter()
    train_ds, test_ds, prior = load_experiment_data(cfg, rng)
    manifest = None
    if cfg.noise_ratio > 0:
        train_ds, manifest = ds_mod.inject_colony_noise(
            train_ds, prior, cfg.noise_ratio, rng
        )
    train_std, test_std = standardize_features(train_ds, test_ds)
    model = init_mlp(
        train_ds.input_dim, cfg.hidden_sizes, prior.class_count, rng
    )
    log = train(
        model, train_std, prior, cfg.scenario, cfg.solver, cfg.loss_config(),
        rng, test_ds=test_std, loss_reduction=cfg.loss_reduction,
    )
    record = _record_from_log(
        log, cfg, rep, run_seed, time.perf_counter() - started
    )
    return record, manifest


def run_experiment(cfg: ExperimentConfig) -> list[RunRecord]:
    """All repetitions; persists records (and manifests) under out_dir."""
    out = Path(cfg.out_dir) if cfg.out_dir else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    records = []
    for rep in range(cfg.repetitions):
        record, manifest = run_repetition(cfg, rep)
        records.append(record)
        if out is not None:
            stem = f"{_dataset_stem(cfg.dataset)}_{cfg.scenario}_rep{rep}"
            (out / f"{stem}.csv").write_text(format_run_record(record), encoding="utf-8")
            (out / f"{stem}.meta.json").write_text(
                json.dumps(
                    {
                        "final_accuracy": record.final_accuracy,
                        "wall_time_s": record.wall_time_s,
                        "seed": record.seed,
                        "sampler_draws": record.sampler_draws,
                        "zero_loss_range": record.zero_loss_range,
                        "config": record.config,
                    },
                    indent=2,
                    sort_keys=True,
                )
                + "\n",
                encoding="utf-8",
            )
            if manifest is not None:
                (out / f"{stem}.noise.csv").write_text(manifest.to_csv(), encoding="utf-8")
    return records


def _dataset_stem(dataset: str) -> str:
    return Path(dataset).name.replace("/", "_") or "dataset"


def format_run_record(record: RunRecord) -> str:
    lines = [_RUN_HEADER]
    for key in sorted(record.config):
        lines.append(f"# {key}={record.config[key]}")
    lines.append(f"# zero_loss_range={int(record.zero_loss_range)}")
    lines.append(_RUN_COLUMNS)
    for row in record.rows:
        lines.append(
            f"{row['epoch']},{row['positive_loss']!r},{row['opposite_loss']!r},"
            f"{row['composite_loss']!r},{row['normalized_composite_loss']!r},"
            f"{row['train_accuracy']!r},{row['test_accuracy']!r}"
        )
    return "\n".join(lines) + "\n"


def parse_run_record(text: str) -> RunRecord:
    """Rebuild a RunRecord from its CSV form (wall time is not stored)."""
    lines = text.strip().splitlines()
    if not lines or lines[0] != _RUN_HEADER:
        raise ValueError("not a colonylearn run record")
    config: dict[str, str] = {}
    zero_range = False
    body_start = None
    for i, line in enumerate(lines[1:], start=1):
        if line.startswith("# "):
            key, _, value = line[2:].partition("=")
            if key == "zero_loss_range":
                zero_range = value == "1"
            else:
                config[key] = value
        else:
            body_start = i
            break
    if body_start is None or lines[body_start] != _RUN_COLUMNS:
        raise ValueError("run record is missing its column header")
    rows = []
    cols = _RUN_COLUMNS.split(",")
    for line in lines[body_start + 1 :]:
        vals = line.split(",")
        row = {"epoch": int(vals[0])}
        row.update({c: float(v) for c, v in zip(cols[1:], vals[1:])})
        rows.append(row)
    if not rows:
        raise ValueError("run record has no epoch rows")
    return RunRecord(
        rows=rows,
        final_accuracy=rows[-1]["test_accuracy"],
        wall_time_s=float("nan"),
        config=config,
        seed=int(config.get("run_seed", -1)),
        sampler_draws=-1,
        zero_loss_range=zero_range,
    )


_COMPARE_KEYS = (
    "dataset", "solver", "learning_rate", "epochs", "batch_size",
    "hidden_sizes", "noise_ratio",
)


def compare_scenarios(records_by_scenario: dict[str, list[RunRecord]]) -> str:
    """Single comparison CSV: summary rows plus epoch-aligned mean curves.

    Columns: kind,scenario,epoch,mean_normalized_loss,
    mean_final_accuracy,std_final_accuracy. Summary rows carry the
    accuracies; curve rows carry one epoch of the scenario-mean normalized
    loss. All runs must share the dataset/solver configuration and epoch
    count.
    """
    if not records_by_scenario:
        raise ValueError("no records to compare")
    reference = None
    epochs = None
    for scenario, records in records_by_scenario.items():
        if not records:
            raise ValueError(f"scenario {scenario!r} has no records")
        for rec in records:
            key = {k: rec.config.get(k) for k in _COMPARE_KEYS}
            if reference is None:
                reference = key
            elif key != reference:
                raise ValueError(
                    f"mismatched configs across scenarios: {key} != {reference}"
                )
            n_epochs = len(rec.rows)
            if epochs is None:
                epochs = n_epochs
            elif n_epochs != epochs:
                raise ValueError(
                    f"epoch counts differ ({n_epochs} vs {epochs}); "
                    "curves cannot be aligned"
                )
    lines = ["# colonylearn comparison v1"]
    assert reference is not None
    if reference.get("dataset") == "fashion-mnist":
        ref = ", ".join(f"{k}={v}" for k, v in FASHION_MNIST_REFERENCE.items())
        lines.append(f"# full-scale reference accuracies (MLP-3/adam, percent): {ref}")
    lines.append(
        "kind,scenario,epoch,mean_normalized_loss,mean_final_accuracy,std_final_accuracy"
    )
    for scenario in sorted(records_by_scenario):
        finals = np.array(
            [r.final_accuracy for r in records_by_scenario[scenario]]
        )
        lines.append(
            f"summary,{scenario},,,{float(finals.mean())!r},{float(finals.std())!r}"
        )
    assert epochs is not None
    for scenario in sorted(records_by_scenario):
        curves = np.array(
            [
                [row["normalized_composite_loss"] for row in rec.rows]
                for rec in records_by_scenario[scenario]
            ]
        )
        mean_curve = curves.mean(axis=0)
        for e in range(epochs):
            lines.append(f"curve,{scenario},{e + 1},{float(mean_curve[e])!r},,")
    return "\n".join(lines) + "\n"


def emit_curves(record: RunRecord) -> str:
    """Per-epoch normalized-loss curve CSV for one run.

    zero_range is 1 on every row when the run's loss had no spread and the
    normalization emitted zeros.
    """
    flag = int(record.zero_loss_range)
    lines = ["epoch,normalized_composite_loss,zero_range"]
    for row in record.rows:
        lines.append(f"{row['epoch']},{row['normalized_composite_loss']!r},{flag}")
    return "\n".join(lines) + "\n"
