"""Pipeline stages.  Each stage reads the files of earlier stages from the
output directory, writes its own, and can be re-run on its own."""
from __future__ import annotations

import csv
import json
import logging
import shutil
from pathlib import Path


from . import embedder, geolink, sampler, synth
from .config import PipelineConfig
from .evaluation import (
    LEVELS, PredictionTable, evaluate_levels, ppp_analysis, read_verdicts, reduce_inference_set,
    write_metrics, write_verdicts,
)
from .sampler import DatasetManifest
from .sweep import SweepData, generate_grid, read_summary, run_sweep, second_round, select_top
from .taxonomy import OTHER, GeneralizationTable, generalize
from .trainer import LabeledSet, SoftmaxModel, predict_proba, train

logger = logging.getLogger(__name__)


class StageError(RuntimeError):
    """A stage could not complete for reasons other than malformed input."""


def _dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _input(cfg: PipelineConfig, out: Path, name: str) -> Path:
    p = Path(getattr(cfg.paths, name))
    return p if p.is_absolute() else out / p


def _table(cfg: PipelineConfig, out: Path) -> GeneralizationTable | None:
    if cfg.paths.generalizations:
        return GeneralizationTable.from_csv(_input(cfg, out, "generalizations"))
    return None


def _other_ids(cfg: PipelineConfig, out: Path) -> list[str]:
    p = _input(cfg, out, "other")
    return sampler.read_other_ids(p) if p.exists() else []


# ------------------------------------------------------------------ synth

def stage_synth(cfg: PipelineConfig, out: Path) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    sc = cfg.synth
    _dump_json(out / "scenario.json", sc.to_dict())
    if sc.mode == "votes":
        table, truth, parcel_of = synth.noisy_predictions(
            sc.vote_units, sc.vote_images_per_unit, sc.vote_accuracy, sc.n_classes, sc.seed)
        table.write(out / "predictions.csv")
        write_truth(out / "truth.csv", truth, parcel_of)
        return {"images": len(table), "units": sc.vote_units}
    if sc.mode != "survey":
        raise ValueError(f"unknown synth mode {sc.mode!r}")
    survey = synth.generate_survey(sc)
    geolink.write_parcels(_input(cfg, out, "parcels"), survey.parcels, cfg.crs)
    geolink.write_images(_input(cfg, out, "images"), survey.images)
    geolink.write_observations(_input(cfg, out, "observations"), survey.observations)
    embedder.save_embeddings(_input(cfg, out, "embeddings"), survey.embeddings)
    with open(_input(cfg, out, "other"), "w", newline="") as fh:
        fh.write("image_id\n")
        fh.writelines(f"{i}\n" for i in survey.other_ids)
    return {"parcels": len(survey.parcels), "images": len(survey.images), "observations": len(survey.observations)}


def stage_embed(cfg: PipelineConfig, out: Path) -> dict:
    """Reference embeddings for every picture of the image manifest."""
    images = geolink.read_images(_input(cfg, out, "images"))
    root = _input(cfg, out, "image_root")
    table = embedder.embed_images({im.image_id: im.file_path for im in images}, root)
    embedder.save_embeddings(_input(cfg, out, "embeddings"), table)
    return {"embedded": len(table)}


# ------------------------------------------------------------------- link

def stage_link(cfg: PipelineConfig, out: Path) -> dict:
    parcels = geolink.read_parcels(_input(cfg, out, "parcels"))
    images = geolink.read_images(_input(cfg, out, "images"))
    obs_path = _input(cfg, out, "observations")
    observations = geolink.read_observations(obs_path)
    if not observations:
        logger.warning("%s holds no observations; every picture stays unlabeled", obs_path)
    res = geolink.link_survey(
        parcels, images, observations, cfg.offset, cfg.stationary_eps, cfg.join_window, cfg.ratio_normalization)
    geolink.write_linked(out / "linked.csv", res.linked)
    with open(out / "link_census.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["parcel_id", "labeled", "unlabeled"], lineterminator="\n")
        w.writeheader()
        w.writerows(res.census)
    report = {
        "crs": cfg.crs,
        "images": res.n_images,
        "unlinked_images": res.n_unlinked,
        "stationary_duplicates": res.n_duplicates,
        "images_in_parcels_without_observation": res.n_without_observation_parcel,
        "linked_images": len(res.linked),
        "labeled_images": sum(li.labeled for li in res.linked),
        "unlinked_observations": res.n_observations_unlinked,
    }
    _dump_json(out / "link_report.json", report)
    return report


# ----------------------------------------------------------------- sample

def stage_sample(cfg: PipelineConfig, out: Path) -> dict:
    linked = geolink.read_linked(out / "linked.csv")
    rep = sampler.build_dataset(
        linked, _other_ids(cfg, out), cfg.quota, cfg.min_images, cfg.edge_threshold, cfg.fractions,
        cfg.exclude_classes, cfg.seed, _table(cfg, out), cfg.ratio_normalization,
    )
    rep.manifest.write(out / "manifest.csv")
    sampler.write_census(out / "census.csv", rep.census)
    report = {
        "class_counts": dict(sorted(rep.class_counts.items())),
        "viable_classes": rep.viable,
        "excluded_classes": rep.excluded,
        "shortfall_classes": rep.shortfall,
        "parcels_lost_to_edge_filter": rep.edge_dropped_parcels,
        "split_sizes": {s: len(rep.manifest.split_entries(s)) for s in sampler.SPLITS},
    }
    _dump_json(out / "sample_report.json", report)
    return report


# -------------------------------------------------------- training inputs

def _labeled(entries, table: embedder.EmbeddingTable) -> LabeledSet:
    ids = [e.image_id for e in entries]
    return LabeledSet(ids, table.get(ids), [e.label for e in entries])


def inference_truth(cfg: PipelineConfig, out: Path, manifest: DatasetManifest):
    """Labelled pictures not used for training, with their generalized labels."""
    linked = geolink.read_linked(out / "linked.csv")
    other = set(_other_ids(cfg, out))
    used = {e.image_id for e in manifest.entries}
    table = _table(cfg, out)
    truth, parcel_of = {}, {}
    for li in linked:
        if not li.labeled or li.image_id in used:
            continue
        truth[li.image_id] = OTHER if li.image_id in other else str(generalize(li.label, table))
        parcel_of[li.image_id] = li.parcel_id
    return truth, parcel_of


def load_sweep_data(cfg: PipelineConfig, out: Path) -> SweepData:
    manifest = DatasetManifest.read(out / "manifest.csv")
    emb = embedder.load_embeddings(_input(cfg, out, "embeddings"))
    train_entries = manifest.split_entries("train")
    tr = _labeled(train_entries, emb)
    va = _labeled(manifest.split_entries("validation"), emb)
    truth, parcel_of = inference_truth(cfg, out, manifest)
    ids = sorted(truth)
    inf = LabeledSet(ids, emb.get(ids), [truth[i] for i in ids])
    flipped = None
    try:
        ids_tr = [e.image_id for e in train_entries]
        flipped = LabeledSet(ids_tr, emb.flipped(ids_tr), [e.label for e in train_entries], ["flip_lr"] * len(ids_tr))
    except embedder.EmbeddingError as exc:
        logger.warning("flip augmentation unavailable: %s", exc)
    return SweepData(tr, va, inf, parcel_of, manifest.classes, flipped)


def write_truth(path: Path, truth: dict[str, str], parcel_of: dict[str, str]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["image_id", "parcel_id", "label"])
        for iid in sorted(truth):
            w.writerow([iid, parcel_of[iid], truth[iid]])


def read_truth(path: Path) -> tuple[dict[str, str], dict[str, str]]:
    truth, parcel_of = {}, {}
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            truth[r["image_id"]] = r["label"]
            parcel_of[r["image_id"]] = r["parcel_id"]
    return truth, parcel_of


# ------------------------------------------------------------------ train

def stage_train(cfg: PipelineConfig, out: Path) -> dict:
    data = load_sweep_data(cfg, out)
    train_set = data.train
    if "flip_lr" in cfg.train.augmentations:
        if data.train_flipped is None:
            raise StageError("flip_lr requested but no flipped embeddings are available")
        train_set = train_set.concat(data.train_flipped)
    model, hist = train(cfg.train, train_set, data.validation, data.class_order)
    model.save(out / "model.bin")
    hist.write(out / "history.csv")
    return {"train_acc": hist.train_acc[-1] if hist.train_acc else None,
            "val_acc": hist.val_acc[-1] if hist.val_acc else None}


# ------------------------------------------------------------------ sweep

def stage_sweep(cfg: PipelineConfig, out: Path, jobs: int | None = None) -> dict:
    jobs = cfg.jobs if jobs is None else jobs
    data = load_sweep_data(cfg, out)
    spec = cfg.sweep
    grid = generate_grid(spec)
    sweep_dir = out / "sweep"
    r1 = run_sweep(grid, data, sweep_dir / "round1", jobs)
    top = select_top(r1.results, spec.top_k)
    if not top:
        raise StageError("every sweep configuration diverged")
    removed = set(data.inference.image_ids) - r1.retained
    r2 = second_round(top, data, sweep_dir / "round2", spec.second_round_augmentations, jobs, removed)
    if r2.best is None:
        raise StageError("every second-round configuration diverged")
    best = r2.best
    shutil.copyfile(sweep_dir / "round2" / str(best.model_number) / "model.bin", out / "best_model.bin")
    doc = {
        "model_number": best.model_number,
        "config": best.config.to_dict(),
        "scores": best.scores,
        "round1_top": [r.model_number for r in top],
        "round1_trained": r1.trained,
        "round1_reloaded": r1.reloaded,
    }
    _dump_json(sweep_dir / "best.json", {k: v for k, v in doc.items() if k not in ("round1_trained", "round1_reloaded")})
    return doc


# ------------------------------------------------------------------ infer

def stage_infer(cfg: PipelineConfig, out: Path, model_path: Path | None = None) -> dict:
    if model_path is None:
        model_path = out / "best_model.bin" if (out / "best_model.bin").exists() else out / "model.bin"
    model = SoftmaxModel.load(model_path)
    manifest = DatasetManifest.read(out / "manifest.csv")
    emb = embedder.load_embeddings(_input(cfg, out, "embeddings"))
    truth, parcel_of = inference_truth(cfg, out, manifest)
    ids = sorted(truth)
    table = PredictionTable(ids, predict_proba(model, emb.get(ids)), model.class_order)
    table.write(out / "predictions.csv")
    write_truth(out / "truth.csv", truth, parcel_of)
    return {"model": str(model_path.name), "images": len(ids)}


# -------------------------------------------------------------- aggregate

def stage_aggregate(cfg: PipelineConfig, out: Path) -> dict:
    table = PredictionTable.read(out / "predictions.csv")
    truth, parcel_of = read_truth(out / "truth.csv")
    missing = set(table.image_ids) - set(truth)
    if missing:
        raise geolink.InputFormatError(f"truth.csv lacks {len(missing)} predicted images, e.g. {sorted(missing)[0]}")
    retained = reduce_inference_set({"model": table})
    levels = evaluate_levels(table, truth, parcel_of, retained, cfg.crop_method)
    ev = out / "eval"
    ev.mkdir(exist_ok=True)
    write_metrics(ev / "metrics.json", levels)
    for name in LEVELS:
        levels[name].matrix.write(ev / f"confusion_{name}.csv")
    write_verdicts(ev / "verdicts_bbch.csv", levels["parcel_bbch"].verdicts)
    write_verdicts(ev / "verdicts_crop.csv", levels["parcel_crop"].verdicts)
    return {k: levels[k].macro_f1 for k in LEVELS} | {"removed_images": len(table) - len(retained)}


# ----------------------------------------------------------------- report

COMPARISON_ROWS = (
    ("Model #", "model_number"),
    ("Learning Rate", "learning_rate"),
    ("Batch Size", "batch_size"),
    ("Momentum", "momentum"),
    ("Optimizer", "optimizer"),
    ("Other #", "n_other"),
    ("Bare soil #", "n_bare_soil"),
    ("Validation Accuracy", "val_acc"),
    ("Training Accuracy", "train_acc"),
    ("M-F1 picture-BBCH", "mf1_picture_bbch"),
    ("M-F1 parcel-BBCH", "mf1_parcel_bbch"),
    ("M-F1 picture-CROP", "mf1_picture_crop"),
    ("M-F1 parcel-CROP", "mf1_parcel_crop"),
)


def _sci(v) -> str:
    v = float(v)
    return "0e+00" if v == 0 else f"{v:.2e}"


def _pct(v) -> str:
    return "" if v in ("", None) else f"{100 * float(v):.1f}"


def comparison_table(records: list[dict]) -> list[list[str]]:
    """Top-model comparison table: one column per ranked model."""
    fmt = {
        "learning_rate": _sci, "momentum": _sci,
        "val_acc": _pct, "train_acc": _pct,
        "mf1_picture_bbch": _pct, "mf1_parcel_bbch": _pct, "mf1_picture_crop": _pct, "mf1_parcel_crop": _pct,
    }
    rows = [["Ranking"] + [str(k + 1) for k in range(len(records))]]
    for title, key in COMPARISON_ROWS:
        f = fmt.get(key, str)
        rows.append([title] + [f(r[key]) for r in records])
    return rows


def rank_records(records: list[dict]) -> list[dict]:
    ok = [r for r in records if str(r.get("failed", "0")) in ("0", "False", "")]
    return sorted(ok, key=lambda r: (
        -float(r["mf1_parcel_crop"]), -float(r["mf1_parcel_bbch"]),
        -float(r["mf1_picture_crop"]), -float(r["mf1_picture_bbch"]), int(r["model_number"]),
    ))


def stage_report(cfg: PipelineConfig, out: Path) -> dict:
    rep = out / "report"
    rep.mkdir(exist_ok=True)
    written = []
    summary = out / "sweep" / "round2" / "summary.csv"
    if summary.exists():
        ranked = rank_records(read_summary(summary))
        with open(rep / "comparison.csv", "w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerows(comparison_table(ranked))
        written.append("comparison.csv")
    round1 = out / "sweep" / "round1" / "summary.csv"
    if round1.exists():
        ranked = rank_records(read_summary(round1))
        with open(rep / "round1_ranking.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["rank"] + list(ranked[0].keys()) if ranked else ["rank"])
            for k, r in enumerate(ranked, start=1):
                w.writerow([k] + list(r.values()))
        written.append("round1_ranking.csv")
    ev = out / "eval"
    if (ev / "metrics.json").exists():
        for name in LEVELS:
            shutil.copyfile(ev / f"confusion_{name}.csv", rep / f"confusion_{name}.csv")
            written.append(f"confusion_{name}.csv")
        metrics = json.loads((ev / "metrics.json").read_text())
        with open(rep / "macro_f1.tsv", "w", newline="") as fh:
            w = csv.writer(fh, delimiter="\t", lineterminator="\n")
            w.writerow(["level", "macro_f1_pct", "n_units"])
            for name in LEVELS:
                w.writerow([name, _pct(metrics["macro_f1"][name]), metrics["levels"][name]["n_units"]])
        written.append("macro_f1.tsv")
        for level in ("bbch", "crop"):
            ppp_analysis(read_verdicts(ev / f"verdicts_{level}.csv")).write(rep, prefix=f"ppp_{level}")
            written.append(f"ppp_{level}_*.tsv")
    if not written:
        raise StageError("nothing to report: run sweep and/or aggregate first")
    return {"written": written}


STAGES = {
    "synth": stage_synth,
    "embed": stage_embed,
    "link": stage_link,
    "sample": stage_sample,
    "train": stage_train,
    "sweep": stage_sweep,
    "infer": stage_infer,
    "aggregate": stage_aggregate,
    "report": stage_report,
}


def file_digest(root: Path) -> dict[str, str]:
    """sha256 of every file under ``root``; used to check stage determinism."""
    import hashlib

    return {
        str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(root.rglob("*")) if p.is_file()
    }


__all__ = ["STAGES", "StageError", "comparison_table", "rank_records", "file_digest"]
