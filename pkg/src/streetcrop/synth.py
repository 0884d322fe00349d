"""Synthetic survey scenarios for end-to-end runs and tests.

A straight road runs west-east with rectangular parcels on both sides.  The
vehicle drives it once per campaign (eastbound on odd campaigns, westbound on
even ones) at one picture per second per camera, stopping at every parcel
for a field observation.  Embeddings are drawn per class from Gaussians whose
means are left-right symmetric in the reference block layout.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .embedder import GRID, REFERENCE_DIM, EmbeddingTable
from .evaluation import PredictionTable
from .geolink import FieldObservation, GeoPoint, Parcel, SurveyImage, transpose_point
from .taxonomy import BARE_SOIL, OTHER

# Visually distinct crop/stage classes; raw field variants fold into them
# through the generalization table.
CLASS_POOL = (
    "WWH2", "SBT39", "GRA1", "POT6", "MAI5", "ONI48", "CAR1", "TLP48",
    "SCR2", "GMA2", "WWH7", "SBT14", "POT8", "CAR4", "GRS7", "VEG2",
)
RAW_VARIANTS = {
    "GRA1": ("GRA1", "GRA2", "GRA3"),
    "ONI48": ("ONI48", "ONI45"),
    "GMA2": ("GMA2", "BSO2"),
    "BSO0": ("BSO0", "BSO1", "BSO3", "BSO5", "POT0", "SBT0"),
}
CAMPAIGN_START = datetime(2018, 3, 15, 8, 0, tzinfo=timezone.utc).timestamp()
DAY = 86400.0


@dataclass(frozen=True)
class SynthScenario:
    n_parcels: int = 24
    n_classes: int = 5
    campaigns: int = 3
    bare_soil: bool = True
    parcel_length: float = 200.0
    parcel_depth: float = 200.0
    road_gap: float = 5.0
    lead: float = 150.0
    speed: float = 10.0
    stop_seconds: int = 12
    gps_jitter: float = 0.2
    separability: float = 6.0
    noise: float = 0.05
    parcel_effect: float = 0.3
    other_fraction: float = 0.05
    seed: int = 0
    # "survey": geometry + embeddings; "votes": noisy per-picture predictions
    mode: str = "survey"
    vote_units: int = 10000
    vote_images_per_unit: int = 10
    vote_accuracy: float = 0.6

    @classmethod
    def from_dict(cls, d: dict) -> "SynthScenario":
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def classes(self) -> list[str]:
        if self.n_classes > len(CLASS_POOL):
            raise ValueError(f"at most {len(CLASS_POOL)} crop classes available")
        return list(CLASS_POOL[:self.n_classes]) + ([BARE_SOIL] if self.bare_soil else [])


@dataclass
class Survey:
    parcels: list[Parcel]
    images: list[SurveyImage]
    observations: list[FieldObservation]
    embeddings: EmbeddingTable
    other_ids: list[str]
    truth: dict[str, str]  # generalized class of every picture taken in front of a parcel


def symmetric_means(n: int, dim: int, scale: float, rng: np.random.Generator) -> np.ndarray:
    """``n`` class means in the reference layout, invariant under left-right flip."""
    if dim != REFERENCE_DIM:
        raise ValueError("synthetic embeddings use the reference layout")
    half = rng.standard_normal((n, GRID, GRID // 2, 3))
    full = np.concatenate([half, half[:, :, ::-1, :]], axis=2).reshape(n, dim)
    full /= np.linalg.norm(full, axis=1, keepdims=True)
    return 0.5 + scale * full


def parcel_layout(sc: SynthScenario) -> list[Parcel]:
    parcels = []
    for k in range(sc.n_parcels):
        col = k // 2
        x0, x1 = col * sc.parcel_length, (col + 1) * sc.parcel_length
        if k % 2 == 0:
            y0, y1 = sc.road_gap, sc.road_gap + sc.parcel_depth
        else:
            y0, y1 = -sc.road_gap - sc.parcel_depth, -sc.road_gap
        ring = ((x0, y0), (x1, y0), (x1, y1), (x0, y1))
        parcels.append(Parcel(f"P{k:04d}", ring, declared_crop=None))
    return parcels


def parcel_label(sc: SynthScenario, k: int, campaign: int) -> str:
    classes = sc.classes
    return classes[(k + campaign) % len(classes)]


def generate_survey(sc: SynthScenario) -> Survey:
    rng = np.random.default_rng(sc.seed)
    parcels = parcel_layout(sc)
    classes = sc.classes
    n_cols = (sc.n_parcels + 1) // 2
    road_end = n_cols * sc.parcel_length
    sigma = sc.noise
    means = symmetric_means(len(classes) + 1, REFERENCE_DIM, sc.separability * sigma, rng)
    class_mean = dict(zip(classes + [OTHER], means))
    parcel_shift = {p.parcel_id: rng.standard_normal(REFERENCE_DIM) * sc.parcel_effect * sigma for p in parcels}

    images: list[SurveyImage] = []
    observations: list[FieldObservation] = []
    truth: dict[str, str] = {}
    vectors: dict[str, np.ndarray] = {}
    other_ids: list[str] = []

    for c in range(1, sc.campaigns + 1):
        eastbound = c % 2 == 1
        start = CAMPAIGN_START + (c - 1) * 30 * DAY
        heading = 90.0 if eastbound else 270.0
        x_from, x_to = (-sc.lead, road_end + sc.lead) if eastbound else (road_end + sc.lead, -sc.lead)
        step = sc.speed if eastbound else -sc.speed
        # stops at parcel-column centres in driving order
        stop_xs = [(j + 0.5) * sc.parcel_length for j in range(n_cols)]
        if not eastbound:
            stop_xs = stop_xs[::-1]
        positions: list[float] = []
        stop_at: dict[int, float] = {}  # index of first stationary fix -> stop x
        x = x_from
        pending = list(stop_xs)
        while (x <= x_to) if eastbound else (x >= x_to):
            if pending and ((x >= pending[0]) if eastbound else (x <= pending[0])):
                sx = pending.pop(0)
                stop_at[len(positions)] = sx
                positions.extend([sx] * sc.stop_seconds)
            positions.append(x)
            x += step
        for t, xpos in enumerate(positions):
            ts = start + t
            jitter = rng.uniform(-sc.gps_jitter, sc.gps_jitter, 2) if sc.gps_jitter else (0.0, 0.0)
            pos = GeoPoint(xpos + jitter[0], jitter[1])
            for side in ("left", "right"):
                iid = f"c{c}_{side[0]}_{t:05d}"
                images.append(SurveyImage(iid, pos, ts, side, c, f"images/{iid}.png"))
                # ground truth from the parcel actually in view
                seen = transpose_point(GeoPoint(xpos, 0.0), heading, side, 30.0)
                k = _parcel_at(sc, seen)
                if k is None:
                    vec = 0.5 + rng.standard_normal(REFERENCE_DIM) * sigma
                else:
                    label = parcel_label(sc, k, c)
                    truth[iid] = label
                    if rng.random() < sc.other_fraction:
                        other_ids.append(iid)
                        base = class_mean[OTHER]
                    else:
                        base = class_mean[label] + parcel_shift[parcels[k].parcel_id]
                    vec = base + rng.standard_normal(REFERENCE_DIM) * sigma
                vectors[iid] = vec
        for idx, sx in stop_at.items():
            ts = start + idx + sc.stop_seconds // 2
            for side in ("left", "right"):
                seen = transpose_point(GeoPoint(sx, 0.0), heading, side, 30.0)
                k = _parcel_at(sc, seen)
                if k is None:
                    continue
                raw = RAW_VARIANTS.get(parcel_label(sc, k, c), (parcel_label(sc, k, c),))
                raw_label = raw[int(rng.integers(len(raw)))]
                observations.append(FieldObservation(
                    obs_id=f"o{c}_{k:04d}", position=GeoPoint(sx, 0.0), timestamp=ts,
                    crop=raw_label[:3], bbch=raw_label[3:], campaign=c, side=side,
                ))
    ids = sorted(vectors)
    table = EmbeddingTable(ids, ["none"] * len(ids), np.array([vectors[i] for i in ids]).reshape(len(ids), REFERENCE_DIM), "synthetic")
    return Survey(parcels, images, observations, table, sorted(other_ids), truth)


def _parcel_at(sc: SynthScenario, p: GeoPoint) -> int | None:
    col = int(np.floor(p.x / sc.parcel_length))
    n_cols = (sc.n_parcels + 1) // 2
    if not 0 <= col < n_cols:
        return None
    if sc.road_gap <= p.y <= sc.road_gap + sc.parcel_depth:
        k = 2 * col
    elif -sc.road_gap - sc.parcel_depth <= p.y <= -sc.road_gap:
        k = 2 * col + 1
    else:
        return None
    return k if k < sc.n_parcels else None


def render_block_image(vec: np.ndarray, size: int = 224) -> np.ndarray:
    """A raster whose reference embedding reproduces ``vec`` to 8-bit precision."""
    blocks = np.clip(np.rint(np.asarray(vec).reshape(GRID, GRID, 3) * 255), 0, 255).astype(np.uint8)
    rep = size // GRID
    return np.repeat(np.repeat(blocks, rep, axis=0), rep, axis=1)


def noisy_predictions(n_units: int, images_per_unit: int, accuracy: float, n_classes: int = 5,
                      seed: int = 0) -> tuple[PredictionTable, dict[str, str], dict[str, str]]:
    """Prediction table with i.i.d. per-picture errors.

    Each picture's most likely class is its true class with probability
    ``accuracy`` and otherwise uniform over the remaining classes.  Returns
    ``(table, truth, parcel_of)``; units are parcels with one class each.
    """
    rng = np.random.default_rng(seed)
    classes = sorted(CLASS_POOL[:n_classes], key=lambda s: (s[:3], int(s[3:])))
    K = len(classes)
    n = n_units * images_per_unit
    unit_class = rng.integers(K, size=n_units)
    true = np.repeat(unit_class, images_per_unit)
    hit = rng.random(n) < accuracy
    wrong = (true + rng.integers(1, K, size=n)) % K
    top = np.where(hit, true, wrong)
    w = rng.random((n, K))
    w[np.arange(n), top] = w.max(axis=1) + rng.uniform(0.1, 1.0, n)
    probs = w / w.sum(axis=1, keepdims=True)
    ids = [f"u{u:06d}_{j:03d}" for u in range(n_units) for j in range(images_per_unit)]
    truth = {i: classes[t] for i, t in zip(ids, true)}
    parcel_of = {i: i.split("_")[0] for i in ids}
    return PredictionTable(ids, probs, classes), truth, parcel_of
