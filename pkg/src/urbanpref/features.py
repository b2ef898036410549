"""Fixed-length image descriptors and the FVEC container.

The descriptor is deliberately simple and fully deterministic: the image
is cut into a 4x4 grid of blocks and each block contributes three 8-bin
color histograms plus an 8-bin gradient-orientation histogram, giving
4 * 4 * (3 * 8 + 8) = 512 dimensions. Anything downstream reads the
dimension from the FVEC header, so a different extractor can be swapped
in without touching the rest of the pipeline.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .corpus import PlaceManifest

FVEC_MAGIC = b"FVEC"
BLOCKS = 4
COLOR_BINS = 8
ORIENT_BINS = 8
DESCRIPTOR_DIM = BLOCKS * BLOCKS * (3 * COLOR_BINS + ORIENT_BINS)
IMAGE_PX = 224

KINDS = ("satellite", "streetview")


class ExtractionError(Exception):
    def __init__(self, image_ids: list[str], cause: str = ""):
        self.image_ids = image_ids
        detail = f": {cause}" if cause else ""
        super().__init__(f"feature extraction failed for {image_ids}{detail}")


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    image_id: str


@dataclass
class FeatureMatrix:
    X: np.ndarray
    ids: list[str]

    def __post_init__(self):
        if self.X.ndim != 2:
            raise ValueError(f"expected 2-D matrix, got shape {self.X.shape}")
        if self.X.shape[0] != len(self.ids):
            raise ValueError(f"{len(self.ids)} ids for {self.X.shape[0]} rows")

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def __len__(self) -> int:
        return self.X.shape[0]


def _l1(hist: np.ndarray) -> np.ndarray:
    s = hist.sum()
    if s <= 0.0:
        return np.zeros_like(hist)
    return hist / s


def describe_pixels(pixels: np.ndarray) -> np.ndarray:
    """512-dim descriptor of an RGB uint8 array; pure function of the bytes."""
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) RGB array, got {pixels.shape}")
    if pixels.shape[:2] != (IMAGE_PX, IMAGE_PX):
        im = Image.fromarray(np.asarray(pixels, dtype=np.uint8), mode="RGB")
        pixels = np.asarray(im.resize((IMAGE_PX, IMAGE_PX), Image.BILINEAR))
    img = pixels.astype(np.float64)
    gray = img @ np.array([0.299, 0.587, 0.114])

    # central-difference gradients; borders stay zero
    gx = np.zeros_like(gray)
    gy = np.zeros_like(gray)
    gx[:, 1:-1] = (gray[:, 2:] - gray[:, :-2]) / 2.0
    gy[1:-1, :] = (gray[2:, :] - gray[:-2, :]) / 2.0
    mag = np.hypot(gx, gy)
    orient = np.arctan2(gy, gx)  # [-pi, pi]
    obin = np.minimum((orient + np.pi) / (2 * np.pi) * ORIENT_BINS, ORIENT_BINS - 1).astype(int)

    edges = np.linspace(0, IMAGE_PX, BLOCKS + 1).astype(int)
    parts = []
    for bi in range(BLOCKS):
        for bj in range(BLOCKS):
            r0, r1 = edges[bi], edges[bi + 1]
            c0, c1 = edges[bj], edges[bj + 1]
            block = img[r0:r1, c0:c1]
            for ch in range(3):
                hist, _ = np.histogram(block[:, :, ch], bins=COLOR_BINS, range=(0, 256))
                parts.append(_l1(hist.astype(np.float64)))
            ohist = np.bincount(
                obin[r0:r1, c0:c1].ravel(),
                weights=mag[r0:r1, c0:c1].ravel(),
                minlength=ORIENT_BINS,
            )
            parts.append(_l1(ohist))
    vec = np.concatenate(parts)
    if not np.all(np.isfinite(vec)):
        raise ValueError("non-finite descriptor values")
    return vec


def extract(image, image_id: str = "") -> FeatureVector:
    """Descriptor for one image, given as an RGB array or a file path."""
    if isinstance(image, (str, Path)):
        image_id = image_id or str(image)
        try:
            with Image.open(image) as im:
                pixels = np.asarray(im.convert("RGB"), dtype=np.uint8)
        except Exception as e:
            raise ExtractionError([image_id], cause=str(e)) from e
    else:
        pixels = np.asarray(image)
    return FeatureVector(values=describe_pixels(pixels), image_id=image_id)


def extract_corpus(
    manifest: PlaceManifest,
    root: Path,
    kind: str = "satellite",
    subsample: float | None = None,
    seed: int = 0,
) -> FeatureMatrix:
    """Descriptors for all (or a seeded uniform fraction of) images of one
    kind, rows in manifest order. Any per-image failure aborts with the
    list of failing ids."""
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}, got {kind!r}")
    root = Path(root)
    sat = kind == "satellite"
    eligible = [r for r in manifest.records if sat or r.sv_path is not None]
    if subsample is not None:
        n = round(subsample * len(eligible))
        if n <= 0:
            raise ValueError(f"subsample {subsample} selects no images")
        if n < len(eligible):
            rng = np.random.default_rng(seed)
            keep = np.sort(rng.choice(len(eligible), size=n, replace=False))
            eligible = [eligible[i] for i in keep]
    if not eligible:
        raise ValueError(f"no {kind} images in manifest")

    rows = np.empty((len(eligible), DESCRIPTOR_DIM), dtype=np.float64)
    ids = []
    failed = []
    for i, r in enumerate(eligible):
        rel = r.sat_path if sat else r.sv_path
        image_id = r.sat_id if sat else r.sv_id
        try:
            rows[i] = extract(root / rel, image_id=image_id).values
        except (ExtractionError, ValueError, OSError):
            failed.append(image_id)
        ids.append(image_id)
    if failed:
        raise ExtractionError(failed)
    return FeatureMatrix(X=rows, ids=ids)


def normalize(matrix: FeatureMatrix, mode: str = "l2_rows") -> FeatureMatrix:
    """Row L2 or column z-score normalization with zero-variance guards."""
    X = np.asarray(matrix.X, dtype=np.float64)
    if X.shape[0] == 0:
        raise ValueError("empty matrix")
    if mode == "l2_rows":
        norms = np.linalg.norm(X, axis=1, keepdims=True)
        norms[norms == 0.0] = 1.0
        out = X / norms
    elif mode == "zscore_cols":
        mu = X.mean(axis=0, keepdims=True)
        sd = X.std(axis=0, keepdims=True)
        zero = sd == 0.0
        sd[zero] = 1.0
        out = (X - mu) / sd
        out[:, zero[0]] = 0.0
    else:
        raise ValueError(f"unknown normalization mode {mode!r}")
    return FeatureMatrix(X=out, ids=list(matrix.ids))


def write_fvec(path: Path, matrix: FeatureMatrix) -> None:
    """FVEC: magic, u32 count, u32 dim, f32 little-endian row-major data,
    then one u32-length-prefixed UTF-8 id per row."""
    X = np.asarray(matrix.X, dtype=np.float32)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(FVEC_MAGIC)
        f.write(struct.pack("<II", X.shape[0], X.shape[1]))
        f.write(np.ascontiguousarray(X, dtype="<f4").tobytes())
        for s in matrix.ids:
            b = s.encode("utf-8")
            f.write(struct.pack("<I", len(b)))
            f.write(b)


def read_fvec(path: Path) -> FeatureMatrix:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != FVEC_MAGIC:
            raise ValueError(f"bad magic {magic!r} in {path}")
        n, d = struct.unpack("<II", f.read(8))
        data = np.frombuffer(f.read(4 * n * d), dtype="<f4").reshape(n, d)
        ids = []
        for _ in range(n):
            (ln,) = struct.unpack("<I", f.read(4))
            ids.append(f.read(ln).decode("utf-8"))
        trailing = f.read()
    if trailing:
        raise ValueError(f"{len(trailing)} trailing bytes in {path}")
    return FeatureMatrix(X=data.astype(np.float32), ids=ids)
