"""Linking roadside pictures and field observations to parcels.

All coordinates are planar metres in a single projected CRS (the pipeline
config declares it; nothing here reprojects).  The four linking steps are:

1. shift each picture location sideways off the road towards the camera side
   and intersect with the parcel polygons,
2. do the same for the field observations,
3. keep parcels that carry observations and drop duplicate pictures taken
   while the vehicle was standing still,
4. attach the nearest-in-time observation of the same parcel to each picture.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

from .taxonomy import ClassLabel, LabelError, parse_label

logger = logging.getLogger(__name__)

DEFAULT_OFFSET_M = 30.0
DEFAULT_STATIONARY_EPS_M = 1.0
SIDES = ("left", "right")


class GeoError(ValueError):
    pass


class InputFormatError(ValueError):
    """Malformed input file; message carries the file and row number."""


@dataclass(frozen=True)
class GeoPoint:
    x: float
    y: float

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise GeoError(f"non-finite coordinate ({self.x}, {self.y})")

    def dist(self, other: "GeoPoint") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)


@dataclass(frozen=True)
class SurveyImage:
    image_id: str
    position: GeoPoint
    timestamp: float
    camera_side: str
    campaign: int
    file_path: str = ""


@dataclass(frozen=True)
class FieldObservation:
    obs_id: str
    position: GeoPoint
    timestamp: float
    crop: str
    bbch: str
    campaign: int
    side: str | None = None

    @property
    def label(self) -> ClassLabel:
        return parse_label(f"{self.crop}{self.bbch}")


Ring = Sequence[tuple[float, float]]


@dataclass(frozen=True)
class Parcel:
    parcel_id: str
    exterior: tuple[tuple[float, float], ...]
    holes: tuple[tuple[tuple[float, float], ...], ...] = ()
    declared_crop: str | None = None
    area: float = field(init=False)
    centroid: GeoPoint = field(init=False)
    bbox: tuple[float, float, float, float] = field(init=False)

    def __post_init__(self):
        ext = _open_ring(self.exterior)
        holes = tuple(_open_ring(h) for h in self.holes)
        object.__setattr__(self, "exterior", ext)
        object.__setattr__(self, "holes", holes)
        for ring in (ext, *holes):
            if len(ring) < 3:
                raise GeoError(f"parcel {self.parcel_id}: ring with fewer than 3 vertices")
            if _self_intersects(ring):
                raise GeoError(f"parcel {self.parcel_id}: self-intersecting ring")
        a_ext, cx_ext, cy_ext = _ring_moments(ext)
        area = abs(a_ext)
        mx, my = cx_ext * abs(a_ext), cy_ext * abs(a_ext)
        for h in holes:
            a_h, cx_h, cy_h = _ring_moments(h)
            area -= abs(a_h)
            mx -= cx_h * abs(a_h)
            my -= cy_h * abs(a_h)
        if not area > 0:
            raise GeoError(f"parcel {self.parcel_id}: non-positive area")
        xs = [p[0] for p in ext]
        ys = [p[1] for p in ext]
        object.__setattr__(self, "area", area)
        object.__setattr__(self, "centroid", GeoPoint(mx / area, my / area))
        object.__setattr__(self, "bbox", (min(xs), min(ys), max(xs), max(ys)))

    def contains(self, p: GeoPoint) -> bool:
        """Closed containment: boundary points (including hole edges) are inside."""
        if not (self.bbox[0] <= p.x <= self.bbox[2] and self.bbox[1] <= p.y <= self.bbox[3]):
            return False
        if _on_ring(p.x, p.y, self.exterior):
            return True
        if not _ray_inside(p.x, p.y, self.exterior):
            return False
        for h in self.holes:
            if _on_ring(p.x, p.y, h):
                return True
            if _ray_inside(p.x, p.y, h):
                return False
        return True


def _open_ring(ring: Ring) -> tuple[tuple[float, float], ...]:
    pts = tuple((float(x), float(y)) for x, y in ring)
    if len(pts) > 1 and pts[0] == pts[-1]:
        pts = pts[:-1]
    return pts


def _ring_moments(ring) -> tuple[float, float, float]:
    """Signed area and centroid of a simple ring (shoelace)."""
    a = cx = cy = 0.0
    n = len(ring)
    for i in range(n):
        x0, y0 = ring[i]
        x1, y1 = ring[(i + 1) % n]
        c = x0 * y1 - x1 * y0
        a += c
        cx += (x0 + x1) * c
        cy += (y0 + y1) * c
    a *= 0.5
    if a == 0:
        return 0.0, ring[0][0], ring[0][1]
    return a, cx / (6 * a), cy / (6 * a)


def _segments_cross(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        return (v > 0) - (v < 0)

    o1, o2 = orient(p1, p2, q1), orient(p1, p2, q2)
    o3, o4 = orient(q1, q2, p1), orient(q1, q2, p2)
    if o1 != o2 and o3 != o4:
        return True
    # collinear overlap
    def within(a, b, c):
        return min(a[0], b[0]) <= c[0] <= max(a[0], b[0]) and min(a[1], b[1]) <= c[1] <= max(a[1], b[1])

    return (
        (o1 == 0 and within(p1, p2, q1))
        or (o2 == 0 and within(p1, p2, q2))
        or (o3 == 0 and within(q1, q2, p1))
        or (o4 == 0 and within(q1, q2, p2))
    )


def _self_intersects(ring) -> bool:
    n = len(ring)
    if n > 200:
        # quadratic check is too slow for dense rings; trust the source
        return False
    edges = [(ring[i], ring[(i + 1) % n]) for i in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            if j == i + 1 or (i == 0 and j == n - 1):
                continue
            if _segments_cross(*edges[i], *edges[j]):
                return True
    return False


def _on_ring(x: float, y: float, ring, tol: float = 1e-9) -> bool:
    n = len(ring)
    for i in range(n):
        x0, y0 = ring[i]
        x1, y1 = ring[(i + 1) % n]
        if not (min(x0, x1) - tol <= x <= max(x0, x1) + tol and min(y0, y1) - tol <= y <= max(y0, y1) + tol):
            continue
        cross = (x1 - x0) * (y - y0) - (y1 - y0) * (x - x0)
        scale = max(abs(x1 - x0), abs(y1 - y0), 1.0)
        if abs(cross) <= tol * scale:
            return True
    return False


def _ray_inside(x: float, y: float, ring) -> bool:
    inside = False
    n = len(ring)
    x0, y0 = ring[-1]
    for i in range(n):
        x1, y1 = ring[i]
        if (y1 > y) != (y0 > y):
            xi = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
            if x < xi:
                inside = not inside
        x0, y0 = x1, y1
    return inside


def bearing(prev: GeoPoint, nxt: GeoPoint) -> float:
    """Direction of travel in degrees clockwise from grid north, in [0, 360)."""
    dx = nxt.x - prev.x
    dy = nxt.y - prev.y
    if dx == 0 and dy == 0:
        raise GeoError("zero-length segment")
    deg = math.degrees(math.atan2(dx, dy)) % 360.0
    return 0.0 if deg == 360.0 else deg


def transpose_point(p: GeoPoint, heading: float, side: str, offset: float = DEFAULT_OFFSET_M) -> GeoPoint:
    """Move ``p`` by ``offset`` metres perpendicular to ``heading`` towards ``side``."""
    if side not in SIDES:
        raise GeoError(f"camera side must be left or right, got {side!r}")
    if not offset > 0:
        raise GeoError("offset must be positive")
    direction = math.radians(heading + (90.0 if side == "right" else -90.0))
    return GeoPoint(p.x + offset * math.sin(direction), p.y + offset * math.cos(direction))


def track_headings(points: Sequence[GeoPoint]) -> list[float | None]:
    """Per-fix heading from the previous to the next fix of one time-ordered track.

    End points use their single neighbour.  Where the neighbours coincide the
    previous valid heading is reused (the first valid one for a leading run).
    """
    n = len(points)
    out: list[float | None] = [None] * n
    for i in range(n):
        a = points[max(i - 1, 0)]
        b = points[min(i + 1, n - 1)]
        try:
            out[i] = bearing(a, b)
        except GeoError:
            out[i] = None
    last = None
    for i in range(n):
        if out[i] is None:
            out[i] = last
        else:
            last = out[i]
    first = next((h for h in out if h is not None), None)
    return [first if h is None else h for h in out]


class ParcelIndex:
    """Uniform-grid index over parcel bounding boxes; read-only after build."""

    def __init__(self, parcels: Iterable[Parcel], cell_size: float | None = None):
        self.parcels = list(parcels)
        ids = [p.parcel_id for p in self.parcels]
        if len(set(ids)) != len(ids):
            raise GeoError("duplicate parcel_id")
        self.by_id = {p.parcel_id: p for p in self.parcels}
        if cell_size is None:
            if self.parcels:
                sizes = sorted(max(p.bbox[2] - p.bbox[0], p.bbox[3] - p.bbox[1]) for p in self.parcels)
                cell_size = max(sizes[len(sizes) // 2], 1e-6)
            else:
                cell_size = 1.0
        self.cell = float(cell_size)
        self._grid: dict[tuple[int, int], list[int]] = defaultdict(list)
        for k, p in enumerate(self.parcels):
            x0, y0, x1, y1 = p.bbox
            for i in range(self._key(x0), self._key(x1) + 1):
                for j in range(self._key(y0), self._key(y1) + 1):
                    self._grid[(i, j)].append(k)

    def _key(self, v: float) -> int:
        return math.floor(v / self.cell)

    def candidates(self, p: GeoPoint) -> list[Parcel]:
        return [self.parcels[k] for k in self._grid.get((self._key(p.x), self._key(p.y)), ())]

    def link(self, p: GeoPoint) -> str | None:
        hits = [q for q in self.candidates(p) if q.contains(p)]
        if not hits:
            return None
        if len(hits) > 1:
            hits.sort(key=lambda q: (q.area, q.parcel_id))
            logger.warning(
                "point (%.3f, %.3f) lies in %d overlapping parcels; using smallest %s",
                p.x, p.y, len(hits), hits[0].parcel_id,
            )
        return hits[0].parcel_id


def link_to_parcel(p: GeoPoint, index: ParcelIndex) -> str | None:
    return index.link(p)


def stationary_anchors(points: Sequence[GeoPoint], eps: float = DEFAULT_STATIONARY_EPS_M) -> list[int]:
    """Index of the run start for every fix; a run lasts while fixes stay
    within ``eps`` of its first fix."""
    out = []
    anchor = -1
    for i, p in enumerate(points):
        if anchor < 0 or p.dist(points[anchor]) >= eps:
            anchor = i
        out.append(anchor)
    return out


def dedup_stationary(images: Sequence[SurveyImage], eps: float = DEFAULT_STATIONARY_EPS_M) -> list[SurveyImage]:
    """Keep only the first picture of every run that stays within ``eps`` of its start.

    ``images`` must be one camera track in timestamp order.
    """
    anchors = stationary_anchors([im.position for im in images], eps)
    return [im for i, im in enumerate(images) if anchors[i] == i]


def robust_headings(points: Sequence[GeoPoint], eps: float = DEFAULT_STATIONARY_EPS_M) -> list[float | None]:
    """Headings from the de-duplicated track; fixes inside a stop inherit the
    heading of the stop's first fix, so GPS jitter while standing still does
    not turn the vehicle."""
    anchors = stationary_anchors(points, eps)
    kept = sorted(set(anchors))
    hk = dict(zip(kept, track_headings([points[i] for i in kept])))
    return [hk[a] for a in anchors]


def _utc_day(ts: float):
    return datetime.fromtimestamp(ts, tz=timezone.utc).date()


@dataclass(frozen=True)
class Attachment:
    label: ClassLabel
    obs_id: str
    obs_time_delta: float


def attach_observation(
    image: SurveyImage,
    parcel_id: str,
    observations: Sequence[tuple[str, FieldObservation]],
    max_delta: float | None = None,
) -> Attachment | None:
    """Pick the same-parcel observation closest in time to ``image``.

    ``observations`` are ``(parcel_id, observation)`` pairs.  With
    ``max_delta=None`` the window is the picture's UTC calendar day; otherwise
    ``|dt| <= max_delta`` seconds.  Ties in ``|dt|`` go to the lower obs_id.
    """
    best = None
    for pid, obs in observations:
        if pid != parcel_id:
            continue
        delta = obs.timestamp - image.timestamp
        if max_delta is None:
            if _utc_day(obs.timestamp) != _utc_day(image.timestamp):
                continue
        elif abs(delta) > max_delta:
            continue
        key = (abs(delta), obs.obs_id)
        if best is None or key < best[0]:
            best = (key, obs, delta)
    if best is None:
        return None
    _, obs, delta = best
    return Attachment(obs.label, obs.obs_id, delta)


def centroid_ratio(distances: Sequence[float], normalization: str = "fraction_of_max") -> list[float]:
    """Edge ratio for the pictures of one (parcel, campaign) group.

    ``fraction_of_max``: d_i / max(d); 1.0 marks the picture farthest from the
    centroid.  ``max_over_distance``: the inverse reading, max(d) / d_i >= 1.
    """
    if not distances:
        return []
    dmax = max(distances)
    if normalization == "fraction_of_max":
        if dmax == 0:
            return [1.0] * len(distances)
        return [d / dmax for d in distances]
    if normalization == "max_over_distance":
        return [math.inf if d == 0 else (1.0 if dmax == 0 else dmax / d) for d in distances]
    raise ValueError(f"unknown normalization {normalization!r}")


@dataclass(frozen=True)
class LinkedImage:
    image_id: str
    parcel_id: str
    campaign: int
    camera_side: str
    timestamp: float
    label: str  # empty when no observation fell inside the join window
    distance_to_centroid: float
    centroid_ratio: float
    obs_time_delta: float | None
    obs_id: str = ""
    file_path: str = ""

    @property
    def labeled(self) -> bool:
        return bool(self.label)


@dataclass
class LinkResult:
    linked: list[LinkedImage]
    census: list[dict]
    n_images: int
    n_unlinked: int
    n_duplicates: int
    n_without_observation_parcel: int
    n_observations_unlinked: int


def _tracks(images: Iterable[SurveyImage]) -> dict[tuple[int, str], list[SurveyImage]]:
    tracks: dict[tuple[int, str], list[SurveyImage]] = defaultdict(list)
    for img in images:
        tracks[(img.campaign, img.camera_side)].append(img)
    for key, imgs in tracks.items():
        imgs.sort(key=lambda im: (im.timestamp, im.image_id))
    return tracks


def link_observation(
    obs: FieldObservation,
    index: ParcelIndex,
    tracks: dict[tuple[int, str], list[SurveyImage]],
    headings: dict[tuple[int, str], list[float | None]],
    offset: float,
) -> str | None:
    """Observation stops carry an optional side; the heading is that of the
    survey vehicle at the nearest fix in time of the same campaign."""
    if obs.side is None:
        return index.link(obs.position)
    track = tracks.get((obs.campaign, obs.side)) or next(
        (t for (c, _), t in sorted(tracks.items()) if c == obs.campaign), None
    )
    if not track:
        return index.link(obs.position)
    key = (track[0].campaign, track[0].camera_side)
    k = min(range(len(track)), key=lambda i: (abs(track[i].timestamp - obs.timestamp), i))
    heading = headings[key][k]
    if heading is None:
        return index.link(obs.position)
    return index.link(transpose_point(obs.position, heading, obs.side, offset))


def link_survey(
    parcels: Sequence[Parcel],
    images: Sequence[SurveyImage],
    observations: Sequence[FieldObservation],
    offset: float = DEFAULT_OFFSET_M,
    eps: float = DEFAULT_STATIONARY_EPS_M,
    max_delta: float | None = None,
    normalization: str = "fraction_of_max",
) -> LinkResult:
    """Run the four linking steps; output ordered by image_id."""
    index = ParcelIndex(parcels)
    tracks = _tracks(images)
    headings = {k: robust_headings([im.position for im in t], eps) for k, t in tracks.items()}

    # step 1: pictures -> parcels, using the shifted location
    image_parcel: dict[str, tuple[str, GeoPoint]] = {}
    for key, track in tracks.items():
        for img, h in zip(track, headings[key]):
            if h is None:
                continue
            q = transpose_point(img.position, h, img.camera_side, offset)
            pid = index.link(q)
            if pid is not None:
                image_parcel[img.image_id] = (pid, q)

    # step 2: observations -> parcels
    linked_obs: list[tuple[str, FieldObservation]] = []
    n_obs_unlinked = 0
    for obs in sorted(observations, key=lambda o: o.obs_id):
        pid = link_observation(obs, index, tracks, headings, offset)
        if pid is None:
            n_obs_unlinked += 1
            logger.warning("observation %s does not fall in any parcel", obs.obs_id)
        else:
            linked_obs.append((pid, obs))
    obs_parcels = {pid for pid, _ in linked_obs}
    obs_by_parcel: dict[str, list[tuple[str, FieldObservation]]] = defaultdict(list)
    for pid, obs in linked_obs:
        obs_by_parcel[pid].append((pid, obs))

    # step 3: drop stop duplicates.  Pictures of parcels without an
    # observation stay in the table as unlabeled rows (training reads
    # labeled rows only), so an empty observation file still links.
    kept: list[SurveyImage] = []
    n_dup = 0
    for key in sorted(tracks):
        track = tracks[key]
        deduped = dedup_stationary(track, eps)
        n_dup += len(track) - len(deduped)
        kept.extend(deduped)
    n_no_obs = sum(1 for img in kept if img.image_id in image_parcel and image_parcel[img.image_id][0] not in obs_parcels)
    kept = [img for img in kept if img.image_id in image_parcel]

    # step 4: attach observation labels
    rows = []
    for img in kept:
        pid, q = image_parcel[img.image_id]
        att = attach_observation(img, pid, obs_by_parcel[pid], max_delta)
        d = q.dist(index.by_id[pid].centroid)
        rows.append((img, pid, att, d))

    groups: dict[tuple[str, int], list[int]] = defaultdict(list)
    for k, (img, pid, _, _) in enumerate(rows):
        groups[(pid, img.campaign)].append(k)
    ratios = [0.0] * len(rows)
    for members in groups.values():
        for k, r in zip(members, centroid_ratio([rows[k][3] for k in members], normalization)):
            ratios[k] = r

    linked = [
        LinkedImage(
            image_id=img.image_id,
            parcel_id=pid,
            campaign=img.campaign,
            camera_side=img.camera_side,
            timestamp=img.timestamp,
            label=str(att.label) if att else "",
            distance_to_centroid=d,
            centroid_ratio=ratios[k],
            obs_time_delta=att.obs_time_delta if att else None,
            obs_id=att.obs_id if att else "",
            file_path=img.file_path,
        )
        for k, (img, pid, att, d) in enumerate(rows)
    ]
    linked.sort(key=lambda li: li.image_id)
    n_unlabeled = sum(1 for li in linked if not li.labeled)
    if linked and n_unlabeled == len(linked):
        logger.warning("no picture received an observation label")

    census_counts: dict[str, list[int]] = defaultdict(lambda: [0, 0])
    for li in linked:
        census_counts[li.parcel_id][0 if li.labeled else 1] += 1
    census = [
        {"parcel_id": pid, "labeled": c[0], "unlabeled": c[1]}
        for pid, c in sorted(census_counts.items())
    ]
    return LinkResult(
        linked=linked,
        census=census,
        n_images=len(images),
        n_unlinked=len(images) - len(image_parcel),
        n_duplicates=n_dup,
        n_without_observation_parcel=n_no_obs,
        n_observations_unlinked=n_obs_unlinked,
    )


# ---------------------------------------------------------------- file I/O

def read_parcels(path: str | Path) -> list[Parcel]:
    """Read a GeoJSON FeatureCollection of Polygon features."""
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InputFormatError(f"{path}: not valid JSON ({exc})") from exc
    parcels = []
    for k, feat in enumerate(doc.get("features", []), start=1):
        geom = feat.get("geometry") or {}
        props = feat.get("properties") or {}
        if geom.get("type") != "Polygon":
            raise InputFormatError(f"{path}: feature {k}: geometry must be a Polygon")
        if "parcel_id" not in props:
            raise InputFormatError(f"{path}: feature {k}: missing parcel_id property")
        rings = geom["coordinates"]
        try:
            parcels.append(Parcel(
                parcel_id=str(props["parcel_id"]),
                exterior=tuple(tuple(c[:2]) for c in rings[0]),
                holes=tuple(tuple(tuple(c[:2]) for c in r) for r in rings[1:]),
                declared_crop=props.get("crop") or None,
            ))
        except GeoError as exc:
            raise InputFormatError(f"{path}: feature {k}: {exc}") from exc
    return parcels


def write_parcels(path: str | Path, parcels: Sequence[Parcel], crs: str = "EPSG:28992") -> None:
    features = []
    for p in parcels:
        rings = [list(map(list, p.exterior)) + [list(p.exterior[0])]]
        rings += [list(map(list, h)) + [list(h[0])] for h in p.holes]
        features.append({
            "type": "Feature",
            "properties": {"parcel_id": p.parcel_id, "crop": p.declared_crop},
            "geometry": {"type": "Polygon", "coordinates": rings},
        })
    doc = {
        "type": "FeatureCollection",
        "crs": {"type": "name", "properties": {"name": crs}},
        "features": features,
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def _read_rows(path: str | Path, required: Sequence[str]) -> list[tuple[int, dict]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in required if c not in (reader.fieldnames or [])]
        if missing:
            raise InputFormatError(f"{path}: missing columns {missing}")
        # header is line 1
        return [(k, row) for k, row in enumerate(reader, start=2)]


def _num(path, line, row, col, cast=float):
    try:
        v = cast(row[col])
    except (TypeError, ValueError):
        raise InputFormatError(f"{path}: row {line}: bad {col} value {row.get(col)!r}") from None
    if isinstance(v, float) and not math.isfinite(v):
        raise InputFormatError(f"{path}: row {line}: non-finite {col}")
    return v


IMAGE_COLUMNS = ("image_id", "path", "x", "y", "timestamp", "side", "campaign")
OBSERVATION_COLUMNS = ("obs_id", "x", "y", "timestamp", "crop", "bbch", "campaign")


def read_images(path: str | Path) -> list[SurveyImage]:
    out = []
    seen = set()
    for line, row in _read_rows(path, IMAGE_COLUMNS):
        side = (row["side"] or "").strip().lower()
        if side not in SIDES:
            raise InputFormatError(f"{path}: row {line}: side must be left or right")
        iid = row["image_id"]
        if not iid or iid in seen:
            raise InputFormatError(f"{path}: row {line}: empty or duplicate image_id {iid!r}")
        seen.add(iid)
        out.append(SurveyImage(
            image_id=iid,
            position=GeoPoint(_num(path, line, row, "x"), _num(path, line, row, "y")),
            timestamp=_num(path, line, row, "timestamp"),
            camera_side=side,
            campaign=_num(path, line, row, "campaign", int),
            file_path=row["path"],
        ))
    return out


def write_images(path: str | Path, images: Sequence[SurveyImage]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(IMAGE_COLUMNS)
        for im in images:
            w.writerow([im.image_id, im.file_path, repr(float(im.position.x)), repr(float(im.position.y)),
                        repr(float(im.timestamp)), im.camera_side, im.campaign])


def read_observations(path: str | Path) -> list[FieldObservation]:
    out = []
    for line, row in _read_rows(path, OBSERVATION_COLUMNS):
        side = (row.get("side") or "").strip().lower() or None
        if side is not None and side not in SIDES:
            raise InputFormatError(f"{path}: row {line}: side must be left or right")
        obs = FieldObservation(
            obs_id=row["obs_id"],
            position=GeoPoint(_num(path, line, row, "x"), _num(path, line, row, "y")),
            timestamp=_num(path, line, row, "timestamp"),
            crop=row["crop"].strip(),
            bbch=row["bbch"].strip(),
            campaign=_num(path, line, row, "campaign", int),
            side=side,
        )
        try:
            obs.label
        except LabelError as exc:
            raise InputFormatError(f"{path}: row {line}: {exc}") from exc
        out.append(obs)
    return out


def write_observations(path: str | Path, observations: Sequence[FieldObservation]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(OBSERVATION_COLUMNS + ("side",))
        for o in observations:
            w.writerow([o.obs_id, repr(float(o.position.x)), repr(float(o.position.y)), repr(float(o.timestamp)),
                        o.crop, o.bbch, o.campaign, o.side or ""])


LINKED_COLUMNS = (
    "image_id", "parcel_id", "campaign", "side", "timestamp", "label",
    "distance_to_centroid", "centroid_ratio", "obs_time_delta", "obs_id", "path",
)


def write_linked(path: str | Path, linked: Sequence[LinkedImage]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LINKED_COLUMNS)
        for li in linked:
            w.writerow([
                li.image_id, li.parcel_id, li.campaign, li.camera_side, repr(float(li.timestamp)), li.label,
                repr(float(li.distance_to_centroid)), repr(float(li.centroid_ratio)),
                "" if li.obs_time_delta is None else repr(float(li.obs_time_delta)),
                li.obs_id, li.file_path,
            ])


def read_linked(path: str | Path) -> list[LinkedImage]:
    out = []
    for line, row in _read_rows(path, LINKED_COLUMNS):
        out.append(LinkedImage(
            image_id=row["image_id"],
            parcel_id=row["parcel_id"],
            campaign=_num(path, line, row, "campaign", int),
            camera_side=row["side"],
            timestamp=_num(path, line, row, "timestamp"),
            label=row["label"],
            distance_to_centroid=_num(path, line, row, "distance_to_centroid"),
            centroid_ratio=float(row["centroid_ratio"]),
            obs_time_delta=float(row["obs_time_delta"]) if row["obs_time_delta"] else None,
            obs_id=row["obs_id"],
            file_path=row["path"],
        ))
    return out
