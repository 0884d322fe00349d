"""Image embeddings: external feature files and a built-in reference embedder.

Real CNN bottleneck features are produced outside this package and cross
the boundary as files.  The reference embedder (bilinear resize to 224x224,
per-channel means over an 8x8 block grid) keeps the pipeline runnable
without a neural network.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

TARGET_SIZE = 224
GRID = 8
REFERENCE_DIM = GRID * GRID * 3
AUGMENTATIONS = ("none", "flip_lr")


class EmbeddingError(ValueError):
    pass


def check_raster(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.dtype != np.uint8 or img.ndim != 3 or img.shape[2] != 3:
        raise EmbeddingError("raster must be an HxWx3 uint8 array")
    if img.shape[0] == 0 or img.shape[1] == 0:
        raise EmbeddingError("raster must be non-empty")
    return img


def _axis_weights(n_in: int, n_out: int):
    # pixel-centre alignment; samples outside the image clamp to the border
    pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    pos = np.clip(pos, 0.0, n_in - 1)
    lo = np.floor(pos).astype(np.intp)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = pos - lo
    return lo, hi, frac


def resize(img: np.ndarray, width: int = TARGET_SIZE, height: int = TARGET_SIZE) -> np.ndarray:
    """Bilinear resampling to exactly ``width`` x ``height``."""
    img = check_raster(img)
    h, w = img.shape[:2]
    if (w, h) == (width, height):
        return img.copy()
    y0, y1, fy = _axis_weights(h, height)
    x0, x1, fx = _axis_weights(w, width)
    src = img.astype(np.float64)
    top = src[y0][:, x0] * (1 - fx)[None, :, None] + src[y0][:, x1] * fx[None, :, None]
    bot = src[y1][:, x0] * (1 - fx)[None, :, None] + src[y1][:, x1] * fx[None, :, None]
    out = top * (1 - fy)[:, None, None] + bot * fy[:, None, None]
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def flip_lr(img: np.ndarray) -> np.ndarray:
    return check_raster(img)[:, ::-1].copy()


def reference_embed(img: np.ndarray, grid: int = GRID) -> np.ndarray:
    """Per-channel block means on a ``grid`` x ``grid`` layout, scaled to [0, 1].

    Layout is (block_row, block_col, channel) flattened, so D = grid*grid*3.
    """
    img = check_raster(img)
    h, w = img.shape[:2]
    if h % grid or w % grid:
        raise EmbeddingError(f"raster {w}x{h} does not tile into a {grid}x{grid} grid")
    bh, bw = h // grid, w // grid
    # integer sums keep the result independent of summation order
    sums = img.reshape(grid, bh, grid, bw, 3).astype(np.int64).sum(axis=(1, 3))
    return (sums / (bh * bw * 255.0)).reshape(-1)


def flip_embedding(vec: np.ndarray, grid: int = GRID) -> np.ndarray:
    """Reference-layout vector of the left-right flipped image."""
    v = np.asarray(vec)
    if v.shape[-1] != grid * grid * 3:
        raise EmbeddingError("flip_embedding needs reference-layout vectors")
    return v.reshape(v.shape[:-1] + (grid, grid, 3))[..., :, ::-1, :].reshape(v.shape)


def read_image(path: str | Path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        if im.format not in ("PNG", "JPEG"):
            raise EmbeddingError(f"{path}: unsupported image format {im.format}")
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def embed_file(path: str | Path) -> np.ndarray:
    return reference_embed(resize(read_image(path)))


@dataclass(frozen=True)
class EmbeddedSample:
    image_id: str
    vector: np.ndarray
    augmentation_tag: str = "none"
    label: str = ""


@dataclass
class EmbeddingTable:
    """Embedding rows keyed by (image_id, augmentation tag)."""

    image_ids: list[str]
    tags: list[str]
    vectors: np.ndarray
    backend: str = "reference"

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2 or self.vectors.shape[0] != len(self.image_ids):
            raise EmbeddingError("vectors must be N x D with one row per image_id")
        if len(self.tags) != len(self.image_ids):
            raise EmbeddingError("one augmentation tag per row required")
        self._row = {}
        for k, key in enumerate(zip(self.image_ids, self.tags)):
            if key in self._row:
                raise EmbeddingError(f"duplicate embedding row {key}")
            self._row[key] = k

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return len(self.image_ids)

    def has(self, image_id: str, tag: str = "none") -> bool:
        return (image_id, tag) in self._row

    def get(self, image_ids: Sequence[str], tag: str = "none") -> np.ndarray:
        try:
            rows = [self._row[(i, tag)] for i in image_ids]
        except KeyError as exc:
            raise EmbeddingError(f"no {tag} embedding for image {exc.args[0][0]!r}") from None
        return self.vectors[rows] if rows else np.zeros((0, self.dim))

    def flipped(self, image_ids: Sequence[str]) -> np.ndarray:
        """Flip-augmented vectors: stored flip_lr rows, else derived from the
        reference layout."""
        if all(self.has(i, "flip_lr") for i in image_ids):
            return self.get(image_ids, "flip_lr")
        if self.dim != REFERENCE_DIM:
            raise EmbeddingError("no flip_lr rows and vectors are not in the reference layout")
        return flip_embedding(self.get(image_ids))

    def samples(self, labels: dict[str, str] | None = None) -> list[EmbeddedSample]:
        labels = labels or {}
        return [
            EmbeddedSample(i, self.vectors[k], t, labels.get(i, ""))
            for k, (i, t) in enumerate(zip(self.image_ids, self.tags))
        ]


def load_embeddings(path: str | Path, known_ids: Iterable[str] | None = None) -> EmbeddingTable:
    """Read an embedding table from CSV or from a ``.bin`` + ``.json`` sidecar pair."""
    path = Path(path)
    table = _load_binary(path) if path.suffix == ".bin" else _load_csv(path)
    if known_ids is not None:
        known = set(known_ids)
        for k, iid in enumerate(table.image_ids):
            if iid not in known:
                raise EmbeddingError(f"{path}: row {k + 1}: unknown image_id {iid!r}")
    return table


def _load_csv(path: Path) -> EmbeddingTable:
    ids, tags, rows = [], [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "image_id":
            raise EmbeddingError(f"{path}: first column must be image_id")
        has_tag = len(header) > 1 and header[1] == "augmentation"
        start = 2 if has_tag else 1
        dim = len(header) - start
        if dim <= 0:
            raise EmbeddingError(f"{path}: no feature columns")
        for line, row in enumerate(reader, start=2):
            if len(row) - start != dim:
                raise EmbeddingError(f"{path}: row {line}: expected {dim} values, got {len(row) - start}")
            try:
                vec = [float(v) for v in row[start:]]
            except ValueError:
                raise EmbeddingError(f"{path}: row {line}: non-numeric value") from None
            if not all(math.isfinite(v) for v in vec):
                raise EmbeddingError(f"{path}: row {line}: non-finite value")
            tag = row[1] if has_tag else "none"
            if tag not in AUGMENTATIONS:
                raise EmbeddingError(f"{path}: row {line}: unknown augmentation {tag!r}")
            ids.append(row[0])
            tags.append(tag)
            rows.append(vec)
    vectors = np.array(rows, dtype=np.float64).reshape(len(rows), dim)
    return EmbeddingTable(ids, tags, vectors, backend="csv")


def _load_binary(path: Path) -> EmbeddingTable:
    meta = json.loads(path.with_suffix(".json").read_text())
    raw = path.read_bytes()
    if hashlib.sha256(raw).hexdigest() != meta["checksum"]:
        raise EmbeddingError(f"{path}: checksum mismatch")
    dim = int(meta["dimension"])
    n = len(meta["image_ids"])
    if len(raw) != n * dim * 4:
        raise EmbeddingError(f"{path}: size does not match {n} rows of dimension {dim}")
    vectors = np.frombuffer(raw, dtype="<f4").reshape(n, dim).astype(np.float64)
    bad = np.flatnonzero(~np.isfinite(vectors).all(axis=1))
    if bad.size:
        raise EmbeddingError(f"{path}: row {bad[0] + 1}: non-finite value")
    tags = meta.get("augmentations") or ["none"] * n
    return EmbeddingTable(list(meta["image_ids"]), list(tags), vectors, backend=meta.get("backend", "external"))


def save_embeddings(path: str | Path, table: EmbeddingTable) -> None:
    path = Path(path)
    if path.suffix == ".bin":
        raw = table.vectors.astype("<f4").tobytes()
        path.write_bytes(raw)
        meta = {
            "dimension": table.dim,
            "backend": table.backend,
            "checksum": hashlib.sha256(raw).hexdigest(),
            "image_ids": table.image_ids,
            "augmentations": table.tags,
        }
        path.with_suffix(".json").write_text(json.dumps(meta, indent=1) + "\n")
        return
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["image_id", "augmentation"] + [f"f{k}" for k in range(table.dim)])
        for iid, tag, vec in zip(table.image_ids, table.tags, table.vectors):
            w.writerow([iid, tag] + [repr(float(v)) for v in vec])


def embed_images(paths: dict[str, str], base_dir: str | Path = ".") -> EmbeddingTable:
    """Reference embeddings for ``image_id -> file path``, ordered by image_id."""
    base = Path(base_dir)
    ids = sorted(paths)
    vecs = [embed_file(base / paths[i]) for i in ids]
    return EmbeddingTable(ids, ["none"] * len(ids), np.array(vecs).reshape(len(ids), REFERENCE_DIM))
