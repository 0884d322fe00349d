"""Balanced training-set construction.

Pictures near parcel edges are dropped, classes below the viability
threshold are discarded, every remaining class is filled to its quota by
taking one picture per parcel per pass, and the sample is split per class
into train/test/validation.
"""
from __future__ import annotations

import csv
import hashlib
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .geolink import InputFormatError, LinkedImage
from .taxonomy import OTHER, GeneralizationTable, generalize, sort_labels

logger = logging.getLogger(__name__)

DEFAULT_EDGE_THRESHOLD = 0.95
DEFAULT_QUOTA = 400
DEFAULT_MIN_IMAGES = 400
DEFAULT_FRACTIONS = (0.8, 0.1, 0.1)
SPLITS = ("train", "test", "validation")


def derive_seed(seed: int, *keys) -> int:
    """Stable sub-seed; independent of PYTHONHASHSEED."""
    h = hashlib.sha256(repr((int(seed),) + tuple(str(k) for k in keys)).encode())
    return int.from_bytes(h.digest()[:8], "little")


def filter_edges(
    images: Iterable[LinkedImage], threshold: float = DEFAULT_EDGE_THRESHOLD,
    normalization: str = "fraction_of_max",
) -> list[LinkedImage]:
    if normalization == "fraction_of_max":
        return [im for im in images if im.centroid_ratio < threshold]
    if normalization == "max_over_distance":
        return [im for im in images if im.centroid_ratio > 1.0 / threshold]
    raise ValueError(f"unknown normalization {normalization!r}")


@dataclass
class RoundRobinSample:
    image_ids: list[str]
    per_parcel: dict[str, int]
    shortfall: bool


def round_robin_sample(groups: Mapping[str, Sequence[str]], quota: int, seed: int) -> RoundRobinSample:
    """Draw one unused picture per parcel per pass until ``quota`` is reached.

    ``groups`` maps parcel_id -> image ids of one class.  Parcel order and
    picture order within parcels are shuffled deterministically from ``seed``.
    """
    if quota <= 0:
        raise ValueError("quota must be positive")
    rng = np.random.default_rng(seed)
    parcels = sorted(groups)
    parcels = [parcels[i] for i in rng.permutation(len(parcels))]
    queues = {}
    for pid in parcels:
        ids = sorted(groups[pid])
        queues[pid] = [ids[i] for i in rng.permutation(len(ids))]
    taken: list[str] = []
    counts = {pid: 0 for pid in parcels}
    depth = 0
    while len(taken) < quota:
        progressed = False
        for pid in parcels:
            if depth < len(queues[pid]):
                taken.append(queues[pid][depth])
                counts[pid] += 1
                progressed = True
                if len(taken) == quota:
                    break
        if not progressed:
            break
        depth += 1
    return RoundRobinSample(taken, counts, shortfall=len(taken) < quota)


def viable_classes(census: Mapping[str, int], min_images: int = DEFAULT_MIN_IMAGES) -> set[str]:
    return {c for c, n in census.items() if n >= min_images}


@dataclass(frozen=True)
class ManifestEntry:
    image_id: str
    label: str
    parcel_id: str
    split: str


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    seed: int
    quota: int

    def __post_init__(self):
        ids = [e.image_id for e in self.entries]
        if len(ids) != len(set(ids)):
            raise ValueError("duplicate image_id in manifest")

    def split_entries(self, split: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == split]

    @property
    def classes(self) -> list[str]:
        return sort_labels(e.label for e in self.entries)

    def write(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(f"# seed={self.seed} quota={self.quota}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["image_id", "label", "parcel_id", "split"])
            for e in self.entries:
                w.writerow([e.image_id, e.label, e.parcel_id, e.split])

    @classmethod
    def read(cls, path: str | Path) -> "DatasetManifest":
        with open(path, newline="") as fh:
            first = fh.readline()
            meta = dict(kv.split("=") for kv in first.lstrip("# ").split())
            try:
                seed, quota = int(meta["seed"]), int(meta["quota"])
            except (KeyError, ValueError):
                raise InputFormatError(f"{path}: missing '# seed=.. quota=..' header") from None
            reader = csv.DictReader(fh)
            entries = [ManifestEntry(r["image_id"], r["label"], r["parcel_id"], r["split"]) for r in reader]
        return cls(entries, seed, quota)


def split(
    sample: Sequence[tuple[str, str, str]],
    fractions: Sequence[float] = DEFAULT_FRACTIONS,
    seed: int = 0,
    quota: int = DEFAULT_QUOTA,
) -> DatasetManifest:
    """Per-class split of ``(image_id, label, parcel_id)`` rows.

    Test and validation sizes are floored; the remainder goes to train.
    """
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9 or min(fractions) < 0:
        raise ValueError("fractions must be three non-negative values summing to 1")
    by_class: dict[str, list[tuple[str, str, str]]] = defaultdict(list)
    for row in sample:
        by_class[row[1]].append(row)
    entries = []
    for label in sort_labels(by_class):
        rows = sorted(by_class[label])
        rng = np.random.default_rng(derive_seed(seed, "split", label))
        rows = [rows[i] for i in rng.permutation(len(rows))]
        n = len(rows)
        n_test = int(np.floor(n * fractions[1] + 1e-9))
        n_val = int(np.floor(n * fractions[2] + 1e-9))
        n_train = n - n_test - n_val
        names = ["train"] * n_train + ["test"] * n_test + ["validation"] * n_val
        entries.extend(ManifestEntry(iid, lab, pid, s) for (iid, lab, pid), s in zip(rows, names))
    entries.sort(key=lambda e: (e.label, e.image_id))
    return DatasetManifest(entries, seed, quota)


@dataclass
class SampleReport:
    manifest: DatasetManifest
    census: list[dict]
    class_counts: dict[str, int]
    viable: list[str]
    excluded: list[str]
    shortfall: list[str]
    edge_dropped_parcels: list[str] = field(default_factory=list)


def build_dataset(
    linked: Iterable[LinkedImage],
    other_ids: Iterable[str] = (),
    quota: int = DEFAULT_QUOTA,
    min_images: int = DEFAULT_MIN_IMAGES,
    threshold: float = DEFAULT_EDGE_THRESHOLD,
    fractions: Sequence[float] = DEFAULT_FRACTIONS,
    exclude_classes: Iterable[str] = (),
    seed: int = 0,
    table: GeneralizationTable | None = None,
    normalization: str = "fraction_of_max",
) -> SampleReport:
    """Generalize labels, relabel curated obstructed pictures as 'other',
    drop edge pictures, keep viable classes and sample each to quota."""
    other_ids = set(other_ids)
    labeled = [im for im in linked if im.labeled]
    relabeled = {
        im.image_id: OTHER if im.image_id in other_ids else str(generalize(im.label, table))
        for im in labeled
    }
    kept = filter_edges(labeled, threshold, normalization)
    kept_parcels = {im.parcel_id for im in kept}
    edge_dropped = sorted({im.parcel_id for im in labeled} - kept_parcels)
    if edge_dropped:
        logger.info("%d parcels lost every picture to the edge filter", len(edge_dropped))

    per_class: dict[str, dict[str, list[str]]] = defaultdict(lambda: defaultdict(list))
    for im in kept:
        per_class[relabeled[im.image_id]][im.parcel_id].append(im.image_id)
    class_counts = {c: sum(len(v) for v in g.values()) for c, g in per_class.items()}
    census = [
        {"label": c, "parcel_id": pid, "images": len(per_class[c][pid])}
        for c in sort_labels(per_class) for pid in sorted(per_class[c])
    ]
    exclude = set(exclude_classes)
    viable = sort_labels(viable_classes(class_counts, min_images) - exclude)
    excluded = sort_labels(set(class_counts) - set(viable))

    sample_rows = []
    shortfall = []
    for label in viable:
        rr = round_robin_sample(per_class[label], quota, derive_seed(seed, "sample", label))
        if rr.shortfall:
            shortfall.append(label)
        parcel_of = {iid: pid for pid, ids in per_class[label].items() for iid in ids}
        sample_rows.extend((iid, label, parcel_of[iid]) for iid in rr.image_ids)
    manifest = split(sample_rows, fractions, seed, quota)
    return SampleReport(manifest, census, class_counts, viable, excluded, shortfall, edge_dropped)


def write_census(path: str | Path, census: Sequence[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["label", "parcel_id", "images"], lineterminator="\n")
        w.writeheader()
        w.writerows(census)


def read_other_ids(path: str | Path) -> list[str]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if "image_id" not in (reader.fieldnames or []):
            raise InputFormatError(f"{path}: missing image_id column")
        return [r["image_id"] for r in reader]
