"""Hyper-parameter sweep: grid generation, resumable parallel runs, ranking
and the augmented second round."""
from __future__ import annotations

import csv
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .evaluation import LEVELS, PredictionTable, evaluate_levels, reduce_inference_set, summary_scores, write_metrics
from .sampler import derive_seed
from .taxonomy import BARE_SOIL, OTHER
from .trainer import LabeledSet, ModelConfig, SoftmaxModel, TrainingDiverged, predict_proba, train

logger = logging.getLogger(__name__)

RUN_FILE = "run.json"
SUMMARY_COLUMNS = (
    "model_number", "optimizer", "batch_size", "learning_rate", "momentum", "epochs", "augmentations",
    "failed", "n_other", "n_bare_soil", "train_acc", "val_acc",
    "mf1_picture_bbch", "mf1_parcel_bbch", "mf1_picture_crop", "mf1_parcel_crop",
)


@dataclass(frozen=True)
class SweepSpec:
    batch_sizes: tuple[int, ...] = (512, 1024)
    optimizers: tuple[str, ...] = ("GD", "Adam")
    n_random_pairs: int = 40
    lr_range: tuple[float, float] = (1e-4, 1e-1)
    momentum_range: tuple[float, float] = (0.0, 0.99)
    seed: int = 0
    epochs: int = 3000
    top_k: int = 3
    second_round_augmentations: tuple[str, ...] = ("flip_lr",)

    @property
    def n_configs(self) -> int:
        return len(self.batch_sizes) * len(self.optimizers) * self.n_random_pairs

    @classmethod
    def from_dict(cls, d: dict) -> "SweepSpec":
        d = dict(d)
        for k in ("batch_sizes", "optimizers", "lr_range", "momentum_range", "second_round_augmentations"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


@dataclass(frozen=True)
class GridEntry:
    model_number: int
    config: ModelConfig


def generate_grid(spec: SweepSpec) -> list[GridEntry]:
    """batch sizes x optimizers, each crossed with one shared set of
    log-uniform learning rates and uniform momenta; numbered from 1."""
    rng = np.random.default_rng(spec.seed)
    lo, hi = np.log10(spec.lr_range[0]), np.log10(spec.lr_range[1])
    lrs = 10.0 ** rng.uniform(lo, hi, spec.n_random_pairs)
    moms = rng.uniform(spec.momentum_range[0], spec.momentum_range[1], spec.n_random_pairs)
    grid = []
    n = 0
    for bs in spec.batch_sizes:
        for opt in spec.optimizers:
            for lr, mom in zip(lrs, moms):
                n += 1
                grid.append(GridEntry(n, ModelConfig(
                    optimizer=opt, learning_rate=float(lr), momentum=float(mom), batch_size=int(bs),
                    epochs=spec.epochs, seed=derive_seed(spec.seed, "model", n),
                )))
    return grid


@dataclass
class SweepData:
    """Everything a sweep job needs; shipped once to each worker."""

    train: LabeledSet
    validation: LabeledSet
    inference: LabeledSet
    parcel_of: dict[str, str]
    class_order: list[str]
    train_flipped: LabeledSet | None = None

    @property
    def truth(self) -> dict[str, str]:
        return dict(zip(self.inference.image_ids, self.inference.labels))


@dataclass
class SweepResult:
    model_number: int
    config: ModelConfig
    failed: bool = False
    n_other: int = 0
    n_bare_soil: int = 0
    train_acc: float = float("nan")
    val_acc: float = float("nan")
    scores: dict[str, float] = field(default_factory=dict)

    def rank_key(self):
        s = self.scores
        return (-s["parcel_crop"], -s["parcel_bbch"], -s["picture_crop"], -s["picture_bbch"], self.model_number)

    def summary_row(self) -> list:
        c = self.config
        def f(x):
            return "" if x is None or (isinstance(x, float) and np.isnan(x)) else repr(float(x))
        return [
            self.model_number, c.optimizer, c.batch_size, repr(c.learning_rate), repr(c.momentum), c.epochs,
            "+".join(c.augmentations) or "none", int(self.failed), self.n_other, self.n_bare_soil,
            f(self.train_acc), f(self.val_acc), *[f(self.scores.get(k)) for k in LEVELS],
        ]


_DATA: SweepData | None = None


def _init_worker(data: SweepData) -> None:
    global _DATA
    _DATA = data


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def run_one(entry: GridEntry, out_dir: str | Path, data: SweepData | None = None) -> int:
    """Train, save and predict one configuration; ``run.json`` is written last
    and marks the run complete."""
    data = data or _DATA
    d = Path(out_dir) / str(entry.model_number)
    d.mkdir(parents=True, exist_ok=True)
    cfg = entry.config
    train_set = data.train
    if "flip_lr" in cfg.augmentations:
        if data.train_flipped is None:
            raise ValueError("flip_lr requested but no flipped training embeddings supplied")
        train_set = train_set.concat(data.train_flipped)
    record = {"model_number": entry.model_number, "config": cfg.to_dict(), "failed": False}
    try:
        model, hist = train(cfg, train_set, data.validation, data.class_order, record_every=max(cfg.epochs, 1))
    except TrainingDiverged as exc:
        logger.warning("model %d diverged: %s", entry.model_number, exc)
        record.update(failed=True, error=str(exc))
        _atomic_write(d / RUN_FILE, json.dumps(record, indent=1, sort_keys=True) + "\n")
        return entry.model_number
    model_path = d / "model.bin"
    model.save(model_path.with_name("model.bin.tmp"))
    os.replace(model_path.with_name("model.bin.tmp"), model_path)
    model = SoftmaxModel.load(model_path)
    probs = predict_proba(model, data.inference.X)
    table = PredictionTable(data.inference.image_ids, probs, model.class_order)
    table.write(d / "predictions.csv.tmp")
    os.replace(d / "predictions.csv.tmp", d / "predictions.csv")
    labels = table.argmax_labels
    record.update(
        train_acc=hist.train_acc[-1] if hist.train_acc else None,
        val_acc=hist.val_acc[-1] if hist.val_acc and not np.isnan(hist.val_acc[-1]) else None,
        n_other=labels.count(OTHER),
        n_bare_soil=labels.count(BARE_SOIL),
    )
    _atomic_write(d / RUN_FILE, json.dumps(record, indent=1, sort_keys=True) + "\n")
    return entry.model_number


def is_complete(out_dir: str | Path, model_number: int) -> bool:
    return (Path(out_dir) / str(model_number) / RUN_FILE).exists()


@dataclass
class SweepRun:
    results: list[SweepResult]
    trained: list[int]
    reloaded: list[int]
    retained: set[str]


def run_sweep(grid: Sequence[GridEntry], data: SweepData, out_dir: str | Path, jobs: int = 1,
              extra_removed: set[str] | None = None) -> SweepRun:
    """Train every configuration not yet completed under ``out_dir``, then
    score all of them on the shared reduced inference set.

    Scores are always recomputed from the persisted prediction files, so an
    interrupted and resumed sweep summarises identically to an
    uninterrupted one.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    todo = [e for e in grid if not is_complete(out, e.model_number)]
    reloaded = [e.model_number for e in grid if is_complete(out, e.model_number)]
    if jobs > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker, initargs=(data,)) as pool:
            list(pool.map(run_one, todo, [out] * len(todo)))
    else:
        for e in todo:
            run_one(e, out, data)
    results, retained = collect(grid, data, out, extra_removed)
    return SweepRun(results, [e.model_number for e in todo], reloaded, retained)


def collect(grid: Sequence[GridEntry], data: SweepData, out_dir: str | Path,
            extra_removed: set[str] | None = None) -> tuple[list[SweepResult], set[str]]:
    out = Path(out_dir)
    results = []
    tables = {}
    for e in grid:
        rec = json.loads((out / str(e.model_number) / RUN_FILE).read_text())
        r = SweepResult(e.model_number, e.config, failed=rec["failed"])
        if not r.failed:
            r.n_other, r.n_bare_soil = rec["n_other"], rec["n_bare_soil"]
            r.train_acc = rec["train_acc"] if rec["train_acc"] is not None else float("nan")
            r.val_acc = rec["val_acc"] if rec["val_acc"] is not None else float("nan")
            tables[e.model_number] = PredictionTable.read(out / str(e.model_number) / "predictions.csv")
        results.append(r)
    retained = reduce_inference_set(tables)
    if extra_removed:
        retained -= extra_removed
    truth = data.truth
    for r in results:
        if r.failed:
            continue
        levels = evaluate_levels(tables[r.model_number], truth, data.parcel_of, retained)
        r.scores = summary_scores(levels)
        write_metrics(out / str(r.model_number) / "metrics.json", levels)
    write_summary(out / "summary.csv", results)
    return results, retained


def write_summary(path: str | Path, results: Sequence[SweepResult]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for r in sorted(results, key=lambda r: r.model_number):
            w.writerow(r.summary_row())


def read_summary(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def select_top(results: Sequence[SweepResult], k: int = 3) -> list[SweepResult]:
    """Rank by parcel-crop, parcel-BBCH, picture-crop, picture-BBCH Macro-F1,
    then lowest model number; failed runs are excluded."""
    ok = [r for r in results if not r.failed]
    return sorted(ok, key=SweepResult.rank_key)[:max(k, 0)]


@dataclass
class SecondRound:
    results: list[SweepResult]
    best: SweepResult | None
    run: SweepRun


def second_round(top: Sequence[SweepResult], data: SweepData, out_dir: str | Path,
                 augmentations: Sequence[str] = ("flip_lr",), jobs: int = 1,
                 base_removed: set[str] | None = None) -> SecondRound:
    """Retrain the top configurations with augmented training data and pick
    the best by the same ranking.

    ``base_removed`` carries the first round's excluded images so both rounds
    are scored on a common image set.
    """
    grid = [
        GridEntry(r.model_number, ModelConfig.from_dict({**r.config.to_dict(), "augmentations": list(augmentations)}))
        for r in top
    ]
    run = run_sweep(grid, data, out_dir, jobs, extra_removed=base_removed)
    ranked = select_top(run.results, len(run.results))
    return SecondRound(run.results, ranked[0] if ranked else None, run)
