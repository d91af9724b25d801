"""Synthetic glyph-face dataset with ground-truth identity and attribute
factors, plus labeled-image-directory ingestion and train/val/test splits.

Identity-defining geometry (face aspect, eye spacing, nose length) is drawn
from a per-identity sub-seed; the five per-sample factors (hue, background,
smile, rotation, scale) vary freely. Rasterization is 2x supersampled so
factor changes are smooth in pixel space. Everything is counter-seeded:
regenerating from (seed, n_id, samples_per_id) is byte-identical.
"""

from __future__ import annotations

import csv
import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

logger = logging.getLogger(__name__)

ATTRIBUTES = ("hue", "background", "smile", "rotation", "scale")

TEST_FRACTION = 0.2
VAL_FRACTION = 0.1  # of the remainder, i.e. a 9:1 train/val split


@dataclass
class DatasetManifest:
    seed: int
    n_id: int
    samples_per_id: int
    size: int
    splits: list = field(default_factory=list)  # "train"/"val"/"test" per sample

    def to_dict(self) -> dict:
        return {"seed": self.seed, "n_id": self.n_id,
                "samples_per_id": self.samples_per_id, "size": self.size,
                "splits": list(self.splits)}

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetManifest":
        return cls(seed=d["seed"], n_id=d["n_id"],
                   samples_per_id=d["samples_per_id"], size=d["size"],
                   splits=list(d["splits"]))


@dataclass
class Dataset:
    manifest: DatasetManifest
    images: np.ndarray      # (n, 3, S, S) float32 in [0, 1]
    identities: np.ndarray  # (n,) int
    factors: np.ndarray     # (n, 5) float32 in [-1, 1]; empty (n, 0) if unknown

    def __len__(self) -> int:
        return len(self.images)

    def split_indices(self, split: str) -> np.ndarray:
        return np.flatnonzero(np.asarray(self.manifest.splits) == split)

    def subset(self, split: str):
        idx = self.split_indices(split)
        return self.images[idx], self.identities[idx], self.factors[idx]

    @property
    def has_factors(self) -> bool:
        return self.factors.size > 0


# ----------------------------------------------------------------- generation

def _identity_geometry(seed: int, n_id: int) -> np.ndarray:
    """Per-identity (aspect, eye_spacing, nose_length, eye_height,
    nose_width), stratified so no two identities collide in any geometry
    dimension."""
    # wide ranges: between-identity geometry differences must exceed the
    # within-identity rotation/scale jitter or identities blur together;
    # five independent dimensions keep even 16 identities far apart
    ranges = [(0.55, 1.05), (0.22, 0.55), (0.08, 0.34),
              (0.08, 0.24), (0.012, 0.040)]
    geom = np.zeros((n_id, len(ranges)))
    for d, (lo, hi) in enumerate(ranges):
        r = np.random.default_rng([seed, 77, d])
        perm = r.permutation(n_id)
        jitter = r.uniform(0.25, 0.75, size=n_id)
        geom[:, d] = lo + (hi - lo) * (perm + jitter) / n_id
    return geom


def _rasterize(geom, factors, size: int) -> np.ndarray:
    """Render one glyph face. geom = (aspect, eye_spacing, nose_len,
    eye_height, nose_width); factors = dict over ATTRIBUTES, each in
    [-1, 1]."""
    aspect, eye_spacing, nose_len, eye_height, nose_width = geom
    ss = size * 2
    c = (np.arange(ss) + 0.5) / ss - 0.5
    gx, gy = np.meshgrid(c, c)  # gx: column coord, gy: row coord (down)

    theta = factors["rotation"] * (np.pi / 18.0)
    s = 1.0 + 0.10 * factors["scale"]
    ct, st = np.cos(theta), np.sin(theta)
    u = (ct * gx + st * gy) / s
    v = (-st * gx + ct * gy) / s

    img = np.empty((3, ss, ss))
    img[:] = 0.5 + 0.35 * factors["background"]

    phi = factors["hue"] * np.pi
    face_rgb = (0.55 + 0.35 * np.cos(phi),
                0.55 + 0.35 * np.cos(phi - 2.0944),
                0.55 + 0.35 * np.cos(phi + 2.0944))
    a, b = 0.42 * aspect, 0.42
    face = (u / a) ** 2 + (v / b) ** 2 <= 1.0
    for ch in range(3):
        img[ch][face] = face_rgb[ch]

    for sx in (-1.0, 1.0):
        eye = (u - sx * eye_spacing * a) ** 2 + (v + eye_height) ** 2 <= 0.05 ** 2
        img[:, eye] = 0.1

    nose = (np.abs(u) < nose_width) & (v > -0.02) & (v < nose_len - 0.02)
    img[:, nose] = 0.25

    # the mouth must stay legible at small rasters: at 32 px a stroke only a
    # couple of hundredths wide quantizes away and the smile factor becomes
    # unlearnable, so the stroke is thick and the curvature swing large
    half_w = 0.30
    curve = -0.34 * factors["smile"]
    vm = 0.24 + curve * ((u / half_w) ** 2 - 0.5)
    mouth = (np.abs(u) <= half_w) & (np.abs(v - vm) < 0.08)
    img[0][mouth] = 0.55
    img[1][mouth] = 0.15
    img[2][mouth] = 0.15

    out = img.reshape(3, size, 2, size, 2).mean(axis=(2, 4))
    return out.astype(np.float32)


def _assign_splits(n_id: int, samples_per_id: int) -> list:
    n_test = max(2, int(round(samples_per_id * TEST_FRACTION)))
    rest = samples_per_id - n_test
    n_val = max(1, int(round(rest * VAL_FRACTION)))
    n_train = rest - n_val
    per_id = ["train"] * n_train + ["val"] * n_val + ["test"] * n_test
    return per_id * n_id


def generate(seed: int, n_id: int, samples_per_id: int, size: int = 32) -> Dataset:
    """Deterministic synthetic dataset; all identities appear in every split."""
    if n_id < 2:
        raise ValueError("n_id must be >= 2")
    if samples_per_id < 4:
        raise ValueError("samples_per_id must be >= 4")
    if size < 16:
        raise ValueError("size must be >= 16 (features unrasterizable below)")
    geom = _identity_geometry(seed, n_id)
    n = n_id * samples_per_id
    images = np.zeros((n, 3, size, size), dtype=np.float32)
    identities = np.zeros(n, dtype=np.int64)
    factors = np.zeros((n, len(ATTRIBUTES)), dtype=np.float32)
    k = 0
    for ident in range(n_id):
        for index in range(samples_per_id):
            rng = np.random.default_rng([seed, ident, index])
            draw = rng.uniform(-1.0, 1.0, size=len(ATTRIBUTES))
            fdict = dict(zip(ATTRIBUTES, draw))
            images[k] = _rasterize(geom[ident], fdict, size)
            identities[k] = ident
            factors[k] = draw
            k += 1
    manifest = DatasetManifest(seed=seed, n_id=n_id, samples_per_id=samples_per_id,
                               size=size, splits=_assign_splits(n_id, samples_per_id))
    return Dataset(manifest, images, identities, factors)


# -------------------------------------------------------------- verification

def make_pairs(dataset: Dataset, n_pairs: int, seed: int = 0) -> list:
    """Balanced same/different identity pairs over the test split.

    Returns [(i, j, is_same), ...] with global sample indices; no pair uses
    one sample twice, pairs are unique where possible.
    """
    test_idx = dataset.split_indices("test")
    ids = dataset.identities[test_idx]
    by_id: dict[int, list] = {}
    for gi, ident in zip(test_idx, ids):
        by_id.setdefault(int(ident), []).append(int(gi))
    usable = [k for k, v in by_id.items() if len(v) >= 2]
    if len(usable) < 2:
        raise ValueError("need >=2 test samples for >=2 identities")
    rng = np.random.default_rng(seed)
    n_same = n_pairs // 2
    n_diff = n_pairs - n_same
    pairs: list = []
    seen = set()

    def add(i, j, same, budget=10000):
        key = (min(i, j), max(i, j))
        if i == j or key in seen:
            return False
        seen.add(key)
        pairs.append((i, j, same))
        return True

    attempts = 0
    while sum(1 for p in pairs if p[2]) < n_same and attempts < 100 * n_same:
        ident = usable[rng.integers(len(usable))]
        i, j = rng.choice(by_id[ident], size=2, replace=False)
        add(int(i), int(j), True)
        attempts += 1
    attempts = 0
    id_list = list(by_id.keys())
    while sum(1 for p in pairs if not p[2]) < n_diff and attempts < 100 * n_diff:
        ia, ib = rng.choice(len(id_list), size=2, replace=False)
        i = by_id[id_list[ia]][rng.integers(len(by_id[id_list[ia]]))]
        j = by_id[id_list[ib]][rng.integers(len(by_id[id_list[ib]]))]
        add(int(i), int(j), False)
        attempts += 1
    if len(pairs) < n_pairs:
        raise ValueError("insufficient samples to build the requested pairs")
    return pairs


def binarize_factors(dataset: Dataset) -> np.ndarray:
    """Per-attribute binary labels: 1 where the factor is positive."""
    if not dataset.has_factors:
        raise ValueError("dataset has no ground-truth factors")
    return (dataset.factors > 0).astype(np.int64)


# ---------------------------------------------------------------------- disk

def save_dataset(dataset: Dataset, out_dir) -> None:
    """manifest.json + images/<id>/<index>.png + factors.csv."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.json").write_text(json.dumps(dataset.manifest.to_dict(), indent=1))
    counters: dict[int, int] = {}
    with open(out / "factors.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["identity", "index"] + list(ATTRIBUTES))
        for k in range(len(dataset)):
            ident = int(dataset.identities[k])
            index = counters.get(ident, 0)
            counters[ident] = index + 1
            img_dir = out / "images" / f"{ident:04d}"
            img_dir.mkdir(parents=True, exist_ok=True)
            arr = np.clip(dataset.images[k] * 255.0 + 0.5, 0, 255).astype(np.uint8)
            Image.fromarray(arr.transpose(1, 2, 0)).save(img_dir / f"{index:04d}.png")
            row = [ident, index] + (list(map(float, dataset.factors[k]))
                                    if dataset.has_factors else [])
            wr.writerow(row)


def load_dataset(path) -> Dataset:
    """Reload a directory written by save_dataset (8-bit quantized pixels)."""
    root = Path(path)
    manifest = DatasetManifest.from_dict(json.loads((root / "manifest.json").read_text()))
    factor_rows = {}
    with open(root / "factors.csv") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        has_factors = len(header) > 2
        for row in rd:
            factor_rows[(int(row[0]), int(row[1]))] = [float(x) for x in row[2:]]
    images, identities, factors = [], [], []
    for (ident, index) in sorted(factor_rows):
        p = root / "images" / f"{ident:04d}" / f"{index:04d}.png"
        arr = np.asarray(Image.open(p), dtype=np.float32) / 255.0
        images.append(arr.transpose(2, 0, 1))
        identities.append(ident)
        factors.append(factor_rows[(ident, index)])
    f = np.asarray(factors, dtype=np.float32) if has_factors \
        else np.zeros((len(images), 0), dtype=np.float32)
    return Dataset(manifest, np.asarray(images), np.asarray(identities, dtype=np.int64), f)


def ingest_directory(path, size: int = 32) -> Dataset:
    """Generic root/<identity-name>/<files>.png ingestion.

    Identity names map to integer labels in lexicographic order; images are
    bilinearly resized; the factors table is empty.
    """
    root = Path(path)
    id_dirs = sorted(d for d in root.iterdir() if d.is_dir())
    images, identities = [], []
    for label, d in enumerate(id_dirs):
        files = sorted(d.glob("*.png"))
        if len(files) < 2:
            warnings.warn(f"identity {d.name!r} has fewer than 2 images")
        for f in files:
            try:
                img = Image.open(f).convert("RGB")
            except Exception as exc:  # unreadable file: skip with warning
                warnings.warn(f"skipping unreadable file {f}: {exc}")
                continue
            img = img.resize((size, size), Image.BILINEAR)
            arr = np.asarray(img, dtype=np.float32) / 255.0
            images.append(arr.transpose(2, 0, 1))
            identities.append(label)
    if not images:
        raise ValueError(f"no readable PNG images under {root}")
    identities = np.asarray(identities, dtype=np.int64)
    # same per-identity split policy as the generator
    splits = [""] * len(images)
    for label in np.unique(identities):
        idx = np.flatnonzero(identities == label)
        n_test = max(1, int(round(len(idx) * TEST_FRACTION))) if len(idx) > 1 else 0
        rest = len(idx) - n_test
        n_val = int(round(rest * VAL_FRACTION))
        for pos, gi in enumerate(idx):
            if pos < rest - n_val:
                splits[gi] = "train"
            elif pos < rest:
                splits[gi] = "val"
            else:
                splits[gi] = "test"
    manifest = DatasetManifest(seed=-1, n_id=len(id_dirs),
                               samples_per_id=-1, size=size, splits=splits)
    return Dataset(manifest, np.asarray(images), identities,
                   np.zeros((len(images), 0), dtype=np.float32))
