"""Confusion matrices, UA/PA/F1, Macro-F1 and parcel-level majority voting.

Confusion matrices are oriented rows = predicted, columns = reference.
Four performance levels are scored: picture and parcel, each at the
crop/BBCH class level and at the crop level.
"""
from __future__ import annotations

import csv
import json
import math
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .geolink import InputFormatError
from .taxonomy import NON_CROP_LABELS, crop_of, evaluation_classes, evaluation_crops

ORIENTATION = "rows=predicted,columns=reference"
LEVELS = ("picture_bbch", "parcel_bbch", "picture_crop", "parcel_crop")
PPP_BINS = (0, 25, 50)


@dataclass
class PredictionTable:
    """Per-image class probabilities from one model."""

    image_ids: list[str]
    probs: np.ndarray
    class_order: list[str]

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64).reshape(len(self.image_ids), len(self.class_order))
        self._row = {i: k for k, i in enumerate(self.image_ids)}
        if len(self._row) != len(self.image_ids):
            raise ValueError("duplicate image_id in predictions")

    def __len__(self) -> int:
        return len(self.image_ids)

    @property
    def argmax_labels(self) -> list[str]:
        top = np.argmax(self.probs, axis=1)
        return [self.class_order[k] for k in top]

    def subset(self, image_ids: Iterable[str]) -> "PredictionTable":
        ids = sorted(image_ids)
        return PredictionTable(ids, self.probs[[self._row[i] for i in ids]], self.class_order)

    def write(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["image_id"] + self.class_order)
            for iid, p in zip(self.image_ids, self.probs):
                w.writerow([iid] + [repr(float(v)) for v in p])

    @classmethod
    def read(cls, path: str | Path) -> "PredictionTable":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header[0] != "image_id" or len(header) < 3:
                raise InputFormatError(f"{path}: expected image_id followed by class columns")
            ids, rows = [], []
            for line, row in enumerate(reader, start=2):
                if len(row) != len(header):
                    raise InputFormatError(f"{path}: row {line}: wrong column count")
                ids.append(row[0])
                rows.append([float(v) for v in row[1:]])
        return cls(ids, np.array(rows).reshape(len(ids), len(header) - 1), header[1:])


def reduce_inference_set(
    predictions: Mapping[object, PredictionTable], removed_labels: Iterable[str] = NON_CROP_LABELS,
) -> set[str]:
    """Images kept after removing every image any model labelled bare soil or 'other'."""
    removed_labels = set(removed_labels)
    image_sets = [set(t.image_ids) for t in predictions.values()]
    if not image_sets:
        return set()
    if any(s != image_sets[0] for s in image_sets[1:]):
        raise ValueError("models predicted different image sets")
    removed = set()
    for table in predictions.values():
        removed.update(i for i, lab in zip(table.image_ids, table.argmax_labels) if lab in removed_labels)
    return image_sets[0] - removed


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # counts[predicted, reference]
    class_order: list[str]
    orientation: str = ORIENTATION

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def write(self, path: str | Path) -> None:
        """CSV with user's accuracy as last column and producer's accuracy as last row."""
        metrics = class_metrics(self)
        with open(path, "w", newline="") as fh:
            fh.write(f"# orientation: {self.orientation}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["predicted\\reference"] + self.class_order + ["UA"])
            for k, c in enumerate(self.class_order):
                w.writerow([c] + [int(v) for v in self.counts[k]] + [f"{metrics[k].precision:.6f}"])
            w.writerow(["PA"] + [f"{m.recall:.6f}" for m in metrics] + [""])


def confusion(predicted: Sequence[str], reference: Sequence[str], class_order: Sequence[str]) -> ConfusionMatrix:
    if len(predicted) != len(reference):
        raise ValueError("predicted and reference lengths differ")
    index = {c: k for k, c in enumerate(class_order)}
    counts = np.zeros((len(class_order), len(class_order)), dtype=np.int64)
    for p, t in zip(predicted, reference):
        if p not in index or t not in index:
            raise ValueError(f"label outside the evaluation class set: {p if p not in index else t}")
        counts[index[p], index[t]] += 1
    return ConfusionMatrix(counts, list(class_order))


@dataclass(frozen=True)
class ClassMetric:
    label: str
    precision: float
    recall: float
    f1: float
    support: int
    # ok | degenerate (P+R = 0) | undefined (never predicted, never true)
    status: str = "ok"


def _class_counts(cm: ConfusionMatrix):
    c = cm.counts
    tp = np.diag(c).astype(int)
    pred_tot = c.sum(axis=1).astype(int)
    ref_tot = c.sum(axis=0).astype(int)
    return tp, pred_tot, ref_tot


def class_metrics(cm: ConfusionMatrix) -> list[ClassMetric]:
    tp, pred_tot, ref_tot = _class_counts(cm)
    out = []
    for k, label in enumerate(cm.class_order):
        if pred_tot[k] == 0 and ref_tot[k] == 0:
            out.append(ClassMetric(label, 0.0, 0.0, 0.0, 0, "undefined"))
            continue
        p = tp[k] / pred_tot[k] if pred_tot[k] else 0.0
        r = tp[k] / ref_tot[k] if ref_tot[k] else 0.0
        if tp[k] == 0:
            out.append(ClassMetric(label, p, r, 0.0, int(ref_tot[k]), "degenerate"))
            continue
        # 2PR/(P+R) written over integer counts: one rounding only
        f1 = 2 * tp[k] / (pred_tot[k] + ref_tot[k])
        out.append(ClassMetric(label, float(p), float(r), float(f1), int(ref_tot[k])))
    return out


def macro_f1(cm: ConfusionMatrix) -> float:
    """Unweighted mean F1 over classes that were predicted or present.

    Evaluated in exact rational arithmetic, so the result is the correctly
    rounded value of the true mean.
    """
    tp, pred_tot, ref_tot = _class_counts(cm)
    total = Fraction(0)
    n = 0
    for k in range(len(cm.class_order)):
        denom = int(pred_tot[k] + ref_tot[k])
        if denom == 0:
            continue
        n += 1
        total += Fraction(2 * int(tp[k]), denom)
    if n == 0:
        return 0.0
    return float(total / n)


def crop_probabilities(probs: np.ndarray, class_order: Sequence[str]) -> tuple[np.ndarray, list[str]]:
    """Sum class probabilities per crop; columns ordered by crop code."""
    crops = sorted({crop_of(c) for c in class_order})
    cidx = {c: k for k, c in enumerate(crops)}
    M = np.zeros((len(class_order), len(crops)))
    for k, c in enumerate(class_order):
        M[k, cidx[crop_of(c)]] = 1.0
    return np.asarray(probs, dtype=np.float64) @ M, crops


def crop_level(probs: Mapping[str, float] | np.ndarray, class_order: Sequence[str] | None = None,
               allowed: Iterable[str] | None = None, method: str = "sum") -> str:
    """Most likely crop of one picture.

    ``sum`` adds the probabilities of all stages of a crop before taking the
    maximum; ``argmax`` maps the most likely class to its crop.  ``allowed``
    restricts the candidates (ties go to the lowest crop code).
    """
    if isinstance(probs, Mapping):
        class_order = list(probs)
        p = np.array([probs[c] for c in class_order])
    else:
        p = np.asarray(probs, dtype=np.float64)
    if method == "argmax":
        order = np.argsort(-p, kind="stable")
        for k in order:
            crop = crop_of(class_order[k])
            if allowed is None or crop in set(allowed):
                return crop
        raise ValueError("no allowed crop")
    if method != "sum":
        raise ValueError(f"unknown crop method {method!r}")
    sums, crops = crop_probabilities(p[None, :], class_order)
    sums = sums[0]
    allowed_set = None if allowed is None else set(allowed)
    best, best_v = None, -math.inf
    for c, v in zip(crops, sums):
        if allowed_set is not None and c not in allowed_set:
            continue
        if v > best_v:
            best, best_v = c, v
    if best is None:
        raise ValueError("no allowed crop")
    return best


def recode_units(images: Iterable[tuple[str, str, str]]) -> dict[str, tuple[str, str]]:
    """``(image_id, parcel_id, true_label)`` -> ``{image_id: (bbch_unit, crop_unit)}``."""
    return {
        iid: (f"{pid}|{label}", f"{pid}|{crop_of(label)}")
        for iid, pid, label in images
    }


@dataclass
class ParcelVerdict:
    unit_id: str
    true_label: str
    predicted_label: str
    n_pictures: int
    vote_counts: dict[str, int]
    tiebreak_used: str = "none"  # none | prob_sum | class_order
    correct: bool = field(init=False)

    def __post_init__(self):
        self.correct = self.predicted_label == self.true_label


def aggregate_parcel(unit_id: str, true_label: str, labels: Sequence[str], probs: np.ndarray,
                     class_order: Sequence[str]) -> ParcelVerdict:
    """Majority vote over per-picture labels.

    Several modes are resolved by the largest summed probability among the
    tied classes, and any remaining tie by the lowest ``class_order`` index.
    ``probs`` holds one row per picture with columns in ``class_order``.
    """
    if not labels:
        raise ValueError(f"unit {unit_id} has no pictures")
    votes = Counter(labels)
    top = max(votes.values())
    modes = [c for c in class_order if votes.get(c, 0) == top]
    tiebreak = "none"
    if len(modes) > 1:
        sums = np.asarray(probs, dtype=np.float64).reshape(len(labels), len(class_order)).sum(axis=0)
        col = {c: k for k, c in enumerate(class_order)}
        best = max(sums[col[c]] for c in modes)
        leaders = [c for c in modes if sums[col[c]] == best]
        tiebreak = "prob_sum" if len(leaders) == 1 else "class_order"
        modes = leaders
    return ParcelVerdict(unit_id, true_label, modes[0], len(labels), dict(sorted(votes.items())), tiebreak)


@dataclass
class LevelResult:
    matrix: ConfusionMatrix
    metrics: list[ClassMetric]
    macro_f1: float
    verdicts: list[ParcelVerdict] | None = None


def evaluate_levels(
    table: PredictionTable,
    truth: Mapping[str, str],
    parcel_of: Mapping[str, str],
    retained: Iterable[str] | None = None,
    crop_method: str = "sum",
) -> dict[str, LevelResult]:
    """Score one model at the four performance levels.

    Images outside ``retained`` (the reduced inference set) and images whose
    true class is not an evaluation class of the model are skipped.
    """
    eval_classes = evaluation_classes(table.class_order)
    eval_crops = evaluation_crops(table.class_order)
    eval_set = set(eval_classes)
    keep = set(table.image_ids) if retained is None else set(retained)
    ids = [i for i in table.image_ids if i in keep and truth.get(i) in eval_set]
    sub = table.subset(ids)
    labels = sub.argmax_labels
    leaked = sorted({l for l in labels if l not in eval_set})
    if leaked:
        raise ValueError(f"predictions {leaked} survive the inference-set reduction")
    true = [truth[i] for i in sub.image_ids]
    crop_probs, crops = crop_probabilities(sub.probs, sub.class_order)
    if crop_method == "sum":
        # masked argmax; the first maximum is the lowest crop code, as in crop_level
        masked = np.where(np.isin(crops, eval_crops)[None, :], crop_probs, -np.inf)
        crop_pred = [crops[k] for k in np.argmax(masked, axis=1)] if len(sub) else []
    else:
        crop_pred = [crop_level(sub.probs[k], sub.class_order, eval_crops, crop_method) for k in range(len(sub))]
    true_crop = [crop_of(t) for t in true]

    out = {}
    cm = confusion(labels, true, eval_classes)
    out["picture_bbch"] = LevelResult(cm, class_metrics(cm), macro_f1(cm))
    cm = confusion(crop_pred, true_crop, eval_crops)
    out["picture_crop"] = LevelResult(cm, class_metrics(cm), macro_f1(cm))

    units = recode_units((i, parcel_of[i], t) for i, t in zip(sub.image_ids, true))
    for level, slot in (("parcel_bbch", 0), ("parcel_crop", 1)):
        members: dict[str, list[int]] = defaultdict(list)
        for k, i in enumerate(sub.image_ids):
            members[units[i][slot]].append(k)
        verdicts = []
        for unit in sorted(members):
            rows = members[unit]
            if slot == 0:
                v = aggregate_parcel(unit, true[rows[0]], [labels[k] for k in rows], sub.probs[rows], sub.class_order)
            else:
                v = aggregate_parcel(unit, true_crop[rows[0]], [crop_pred[k] for k in rows], crop_probs[rows], crops)
            verdicts.append(v)
        classes = eval_classes if slot == 0 else eval_crops
        cm = confusion([v.predicted_label for v in verdicts], [v.true_label for v in verdicts], classes)
        out[level] = LevelResult(cm, class_metrics(cm), macro_f1(cm), verdicts)
    return out


def summary_scores(levels: Mapping[str, LevelResult]) -> dict[str, float]:
    return {k: levels[k].macro_f1 for k in LEVELS}


# ------------------------------------------------------------ PPP analysis

@dataclass
class PPPReport:
    histogram: list[tuple[int, int, int]]  # (ppp, n_correct, n_incorrect)
    curve: list[tuple[int, int, float]]  # (ppp, n_units, P(correct))
    bins: list[dict]
    class_means: list[dict]

    def write(self, out_dir: str | Path, prefix: str = "ppp") -> None:
        out = Path(out_dir)
        _write_tsv(out / f"{prefix}_histogram.tsv", ["ppp", "n_correct", "n_incorrect"], self.histogram)
        _write_tsv(out / f"{prefix}_probability.tsv", ["ppp", "n_units", "p_correct"],
                   [(n, u, f"{p:.6f}") for n, u, p in self.curve])
        cols = ["bin", "lower", "upper", "n_units", "n_correct", "n_incorrect", "pct_correct", "pct_incorrect"]
        _write_tsv(out / f"{prefix}_bins.tsv", cols, [[b[c] for c in cols] for b in self.bins])
        cols = ["label", "n_correct", "n_incorrect", "mean_ppp_correct", "mean_ppp_incorrect"]
        _write_tsv(out / f"{prefix}_class_means.tsv", cols, [[r[c] for c in cols] for r in self.class_means])


def _write_tsv(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt_mean(values: list[int]) -> str:
    return f"{sum(values) / len(values):.3f}" if values else ""


def ppp_analysis(verdicts: Sequence[ParcelVerdict], edges: Sequence[int] = PPP_BINS) -> PPPReport:
    """Pictures-per-parcel statistics: histogram, P(correct | PPP = n),
    summary bins [e0, e1), [e1, e2), ..., [e_last, inf) and per-class means."""
    by_n: dict[int, list[int]] = defaultdict(lambda: [0, 0])
    for v in verdicts:
        by_n[v.n_pictures][0 if v.correct else 1] += 1
    histogram = [(n, c[0], c[1]) for n, c in sorted(by_n.items())]
    curve = [(n, c + i, c / (c + i)) for n, c, i in histogram]

    bins = []
    bounds = list(edges) + [math.inf]
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        sel = [v for v in verdicts if lo <= v.n_pictures < hi]
        nc = sum(v.correct for v in sel)
        ni = len(sel) - nc
        label = f"[{lo},{hi})" if hi != math.inf else f"[{lo},inf)"
        bins.append({
            "bin": label, "lower": lo, "upper": "inf" if hi == math.inf else hi,
            "n_units": len(sel), "n_correct": nc, "n_incorrect": ni,
            "pct_correct": f"{100 * nc / len(sel):.1f}" if sel else "",
            "pct_incorrect": f"{100 * ni / len(sel):.1f}" if sel else "",
        })

    per_class: dict[str, list[list[int]]] = defaultdict(lambda: [[], []])
    for v in verdicts:
        per_class[v.true_label][0 if v.correct else 1].append(v.n_pictures)
    class_means = [
        {"label": lab, "n_correct": len(c), "n_incorrect": len(i),
         "mean_ppp_correct": _fmt_mean(c), "mean_ppp_incorrect": _fmt_mean(i)}
        for lab, (c, i) in sorted(per_class.items())
    ]
    return PPPReport(histogram, curve, bins, class_means)


def binned_curve(verdicts: Sequence[ParcelVerdict], width: int) -> list[tuple[int, float]]:
    """P(correct) over consecutive PPP bins of ``width`` pictures (empty bins omitted)."""
    agg: dict[int, list[int]] = defaultdict(lambda: [0, 0])
    for v in verdicts:
        agg[v.n_pictures // width][0] += v.correct
        agg[v.n_pictures // width][1] += 1
    return [(k * width, c / n) for k, (c, n) in sorted(agg.items())]


# ------------------------------------------------------------ file output

def write_verdicts(path: str | Path, verdicts: Sequence[ParcelVerdict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["unit_id", "true_label", "predicted_label", "n_pictures", "vote_counts", "tiebreak_used", "correct"])
        for v in verdicts:
            votes = ";".join(f"{k}:{n}" for k, n in v.vote_counts.items())
            w.writerow([v.unit_id, v.true_label, v.predicted_label, v.n_pictures, votes, v.tiebreak_used, int(v.correct)])


def read_verdicts(path: str | Path) -> list[ParcelVerdict]:
    out = []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            votes = dict((kv.split(":")[0], int(kv.split(":")[1])) for kv in r["vote_counts"].split(";") if kv)
            out.append(ParcelVerdict(r["unit_id"], r["true_label"], r["predicted_label"],
                                     int(r["n_pictures"]), votes, r["tiebreak_used"]))
    return out


def metrics_document(levels: Mapping[str, LevelResult]) -> dict:
    doc = {"orientation": ORIENTATION, "macro_f1": summary_scores(levels), "levels": {}}
    for name in LEVELS:
        lr = levels[name]
        doc["levels"][name] = {
            "n_units": lr.matrix.total,
            "macro_f1": lr.macro_f1,
            "classes": [asdict(m) for m in lr.metrics],
        }
    return doc


def write_metrics(path: str | Path, levels: Mapping[str, LevelResult]) -> None:
    Path(path).write_text(json.dumps(metrics_document(levels), indent=1, sort_keys=True) + "\n")
