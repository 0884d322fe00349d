import itertools
import random

import numpy as np
import pytest

from streetcrop import sweep as sw
from streetcrop.embedder import flip_embedding
from streetcrop.evaluation import PredictionTable, evaluate_levels, summary_scores
from streetcrop.sweep import (
    GridEntry, SweepData, SweepResult, SweepSpec, collect, generate_grid, run_sweep, second_round, select_top,
)
from streetcrop.trainer import LabeledSet, ModelConfig

CLASSES = ["BSO0", "GRA1", "SBT39", "WWH7"]


def make_set(rng, means, n_per_parcel, parcels, prefix, noise=0.6):
    ids, X, labels, parcel_of = [], [], [], {}
    for p in range(parcels):
        label = CLASSES[p % len(CLASSES)]
        for j in range(n_per_parcel):
            iid = f"{prefix}{p:02d}_{j:03d}"
            ids.append(iid)
            X.append(means[label] + rng.normal(0, noise, means[label].shape))
            labels.append(label)
            parcel_of[iid] = f"P{p:02d}"
    return LabeledSet(ids, np.array(X), labels), parcel_of


@pytest.fixture(scope="module")
def data():
    rng = np.random.default_rng(0)
    means = {c: rng.normal(0, 1, 192) * 0.15 for c in CLASSES}
    tr, _ = make_set(rng, means, 10, 8, "t")
    va, _ = make_set(rng, means, 3, 8, "v")
    inf, parcel_of = make_set(rng, means, 6, 12, "i")
    flipped = LabeledSet(tr.image_ids, flip_embedding(tr.X), tr.labels, ["flip_lr"] * len(tr))
    return SweepData(tr, va, inf, parcel_of, CLASSES, flipped)


def tiny_spec(**kw):
    base = dict(batch_sizes=(16,), optimizers=("GD", "Adam"), n_random_pairs=2, epochs=15, seed=4,
                lr_range=(1e-3, 1e-1), top_k=3)
    base.update(kw)
    return SweepSpec(**base)


def test_default_grid_has_160_configs():
    grid = generate_grid(SweepSpec())
    assert len(grid) == SweepSpec().n_configs == 160
    assert [g.model_number for g in grid] == list(range(1, 161))
    lrs = {g.config.learning_rate for g in grid}
    assert len(lrs) == 40 and all(1e-4 <= lr <= 1e-1 for lr in lrs)
    assert {(g.config.batch_size, g.config.optimizer) for g in grid} == set(itertools.product((512, 1024), ("GD", "Adam")))


def test_small_grid_and_determinism():
    spec = SweepSpec(batch_sizes=(512,), optimizers=("GD",), n_random_pairs=3)
    assert len(generate_grid(spec)) == 3
    assert generate_grid(spec) == generate_grid(spec)
    seeds = {g.config.seed for g in generate_grid(SweepSpec())}
    assert len(seeds) == 160


def test_run_sweep_shape_and_determinism(tmp_path, data):
    grid = generate_grid(tiny_spec())
    a = run_sweep(grid, data, tmp_path / "a")
    b = run_sweep(grid, data, tmp_path / "b")
    assert len(a.results) == 4 and a.trained == [1, 2, 3, 4]
    assert (tmp_path / "a" / "summary.csv").read_bytes() == (tmp_path / "b" / "summary.csv").read_bytes()


def test_parallel_matches_serial(tmp_path, data):
    grid = generate_grid(tiny_spec())
    run_sweep(grid, data, tmp_path / "serial", jobs=1)
    run_sweep(grid, data, tmp_path / "pool", jobs=2)
    for f in ["summary.csv", "1/predictions.csv", "4/model.bin"]:
        assert (tmp_path / "serial" / f).read_bytes() == (tmp_path / "pool" / f).read_bytes()


def test_kill_and_resume(tmp_path, data, monkeypatch):
    grid = generate_grid(tiny_spec())
    run_sweep(grid, data, tmp_path / "clean")

    real = sw.run_one

    def dying(entry, out_dir, d=None):
        if entry.model_number == 3:
            raise KeyboardInterrupt("simulated kill")
        return real(entry, out_dir, d)

    monkeypatch.setattr(sw, "run_one", dying)
    with pytest.raises(KeyboardInterrupt):
        run_sweep(grid, data, tmp_path / "killed")
    monkeypatch.setattr(sw, "run_one", real)
    assert sorted(p.name for p in (tmp_path / "killed").iterdir() if (p / "run.json").exists()) == ["1", "2"]

    resumed = run_sweep(grid, data, tmp_path / "killed")
    assert resumed.trained == [3, 4] and resumed.reloaded == [1, 2]
    assert (tmp_path / "killed" / "summary.csv").read_bytes() == (tmp_path / "clean" / "summary.csv").read_bytes()


def test_scores_recomputable_from_files(tmp_path, data):
    grid = generate_grid(tiny_spec())
    run = run_sweep(grid, data, tmp_path)
    for r in run.results:
        t = PredictionTable.read(tmp_path / str(r.model_number) / "predictions.csv")
        assert summary_scores(evaluate_levels(t, data.truth, data.parcel_of, run.retained)) == r.scores


def result(n, scores):
    keys = ("parcel_crop", "parcel_bbch", "picture_crop", "picture_bbch")
    return SweepResult(n, ModelConfig(), scores=dict(zip(keys, scores)))


def test_select_top_order_and_ties():
    rs = [result(1, (0.5, 0, 0, 0)), result(2, (0.9, 0, 0, 0)), result(3, (0.7, 0, 0, 0))]
    assert [r.model_number for r in select_top(rs, 2)] == [2, 3]
    tie = [result(5, (0.8, 0.8, 0.8, 0.8)), result(4, (0.8, 0.8, 0.8, 0.8))]
    assert [r.model_number for r in select_top(tie, 1)] == [4]
    assert len(select_top(rs, 10)) == 3


def test_select_top_secondary_keys():
    rs = [result(1, (0.9, 0.5, 0.1, 0.1)), result(2, (0.9, 0.6, 0.0, 0.0)), result(3, (0.9, 0.6, 0.2, 0.0))]
    assert [r.model_number for r in select_top(rs, 3)] == [3, 2, 1]


def test_select_top_is_permutation_invariant():
    rng = random.Random(0)
    rs = [result(n, tuple(rng.choice([0.1, 0.5, 0.9]) for _ in range(4))) for n in range(1, 30)]
    ref = [r.model_number for r in select_top(rs, 5)]
    for _ in range(20):
        rng.shuffle(rs)
        assert [r.model_number for r in select_top(rs, 5)] == ref


def test_failed_runs_excluded(tmp_path, data):
    X = data.train.X * 1e200
    bad = SweepData(LabeledSet(data.train.image_ids, X, data.train.labels), data.validation,
                    data.inference, data.parcel_of, data.class_order)
    grid = [GridEntry(1, ModelConfig(learning_rate=1e6, epochs=3, batch_size=8)),
            GridEntry(2, ModelConfig(learning_rate=1e-2, epochs=3, batch_size=8))]
    run = run_sweep(grid, data, tmp_path / "ok")
    assert not any(r.failed for r in run.results)
    with np.errstate(all="ignore"):
        run = run_sweep(grid, bad, tmp_path / "bad")
    assert run.results[0].failed
    assert all(r.model_number != 1 for r in select_top(run.results, 3))


def test_second_round_protocol(tmp_path, data):
    grid = generate_grid(tiny_spec())
    r1 = run_sweep(grid, data, tmp_path / "r1")
    top = select_top(r1.results, 3)
    removed = set(data.inference.image_ids) - r1.retained
    r2 = second_round(top, data, tmp_path / "r2", ("flip_lr",), base_removed=removed)
    assert len(r2.results) == 3 and r2.best is not None
    assert all(r.config.augmentations == ("flip_lr",) for r in r2.results)
    assert r2.best.model_number == select_top(r2.results, 1)[0].model_number


def test_second_round_without_augmentation_reproduces_round_one(tmp_path, data):
    grid = generate_grid(tiny_spec())
    r1 = run_sweep(grid, data, tmp_path / "r1")
    top = select_top(r1.results, 3)
    removed = set(data.inference.image_ids) - r1.retained
    r2 = second_round(top, data, tmp_path / "r2", (), base_removed=removed)
    by_number = {r.model_number: r for r in r1.results}
    for r in r2.results:
        assert r.scores == by_number[r.model_number].scores
        assert (tmp_path / "r2" / str(r.model_number) / "predictions.csv").read_bytes() == \
            (tmp_path / "r1" / str(r.model_number) / "predictions.csv").read_bytes()
