"""Self-Organizing Maps (Kohonen) and the two-level clustering on top.

Online training: one seeded sample per iteration, BMU by squared
Euclidean distance, full-lattice Gaussian neighborhood update with
exponentially decaying learning rate and radius. Linear (1 x cells)
grids double as contextual-number encoders: the normalized BMU index
is a scalar cipher for a high-dimensional vector.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .colors import grid_color, ramp_color

ALPHA_START = 0.5
ALPHA_END = 0.01
SIGMA_END = 1.0
MAX_LLOYD_ITERS = 300
_BMU_CHUNK = 4_000_000  # elements per brute-force distance block

SOM_MAGIC = b"SOM0"


@dataclass
class SomGrid:
    rows: int
    cols: int
    dim: int
    weights: np.ndarray = field(repr=False)
    seed: int = 0
    iters: int = 0
    qe_history: list = field(default_factory=list)

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError(f"degenerate lattice {self.rows}x{self.cols}")
        if self.weights.shape != (self.rows * self.cols, self.dim):
            raise ValueError(
                f"weights shape {self.weights.shape} != ({self.rows * self.cols}, {self.dim})"
            )
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("non-finite weights")

    @property
    def n_cells(self) -> int:
        return self.rows * self.cols

    def cell_rc(self, index: int) -> tuple[int, int]:
        return divmod(index, self.cols)


@dataclass
class BmuAssignment:
    """Best matching unit per image id, on a rows x cols lattice."""

    rows: int
    cols: int
    cells: dict  # image_id -> cell index

    def __post_init__(self):
        n = self.rows * self.cols
        bad = {i: c for i, c in self.cells.items() if not 0 <= c < n}
        if bad:
            raise ValueError(f"cell indices outside lattice of {n}: {bad}")

    def rc(self, image_id: str) -> tuple[int, int]:
        return divmod(self.cells[image_id], self.cols)


@dataclass
class AlphabetMap:
    rows: int
    cols: int
    colors: np.ndarray  # n_cells x 3 uint8
    mode: str
    preference: Optional[np.ndarray] = None  # per-cell value in specific mode

    def color_of(self, cell: int) -> tuple[int, int, int]:
        r, g, b = self.colors[cell]
        return int(r), int(g), int(b)


def _lattice_coords(rows: int, cols: int) -> np.ndarray:
    rr, cc = np.divmod(np.arange(rows * cols), cols)
    return np.stack([rr, cc], axis=1).astype(np.float64)


def train_som(X: np.ndarray, rows: int, cols: int, iters: int, seed: int = 0) -> SomGrid:
    """Online Kohonen training, deterministic per seed.

    Quantization error is recorded at iteration 0, iters//10, and iters;
    the final value is expected at or below the iters//10 checkpoint.
    """
    X = np.asarray(getattr(X, "X", X), dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 1:
        raise ValueError(f"need a non-empty 2-D sample matrix, got shape {X.shape}")
    if iters < 1:
        raise ValueError("iters must be >= 1")
    n, dim = X.shape
    n_cells = rows * cols

    rng = np.random.default_rng(seed)
    lo = X.min(axis=0)
    hi = X.max(axis=0)
    # collapsed start: seeded uniform jitter in the central 10% of the
    # per-dimension data range, so the lattice unfolds during training
    # and quantization error falls well below its initial value
    mid = (lo + hi) / 2.0
    span = hi - lo
    if np.all(span == 0.0):
        span = np.ones_like(span) * max(float(np.abs(mid).max()), 1.0) * 2e-3
    W = mid + rng.uniform(-0.05, 0.05, size=(n_cells, dim)) * span
    coords = _lattice_coords(rows, cols)

    sigma0 = max(rows, cols) / 2.0
    sigma_ratio = SIGMA_END / sigma0 if sigma0 > 0 else 1.0
    alpha_ratio = ALPHA_END / ALPHA_START

    grid = SomGrid(rows, cols, dim, W, seed=seed, iters=iters)
    checkpoints = {0, iters // 10, iters}
    qe_history = [(0, quantization_error(grid, X))]

    sample_idx = rng.integers(0, n, size=iters)
    for t in range(iters):
        x = X[sample_idx[t]]
        frac = t / iters
        alpha = ALPHA_START * alpha_ratio**frac
        sigma = sigma0 * sigma_ratio**frac if sigma0 > 0 else SIGMA_END

        diff = x - W
        b = int(np.argmin(np.einsum("ij,ij->i", diff, diff)))
        d2 = np.sum((coords - coords[b]) ** 2, axis=1)
        h = np.exp(-d2 / (2.0 * sigma * sigma))
        W += (alpha * h)[:, None] * diff

        if (t + 1) in checkpoints:
            qe_history.append((t + 1, quantization_error(grid, X)))

    grid.qe_history = qe_history
    return grid


def bmu(grid: SomGrid, x: np.ndarray) -> int:
    """Nearest cell by squared Euclidean distance; ties go to the lowest index."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (grid.dim,):
        raise ValueError(f"query shape {x.shape} != ({grid.dim},)")
    diff = x - grid.weights
    return int(np.argmin(np.einsum("ij,ij->i", diff, diff)))


def bmu_batch(grid: SomGrid, X: np.ndarray) -> np.ndarray:
    """BMU per row, identical to calling bmu() row by row but chunked."""
    X = np.asarray(getattr(X, "X", X), dtype=np.float64)
    if X.shape[1] != grid.dim:
        raise ValueError(f"dim {X.shape[1]} != grid dim {grid.dim}")
    out = np.empty(X.shape[0], dtype=np.int64)
    step = max(1, _BMU_CHUNK // max(grid.n_cells * grid.dim, 1))
    for s in range(0, X.shape[0], step):
        block = X[s : s + step]
        d2 = np.sum((block[:, None, :] - grid.weights[None, :, :]) ** 2, axis=2)
        out[s : s + step] = np.argmin(d2, axis=1)
    return out


def assign_bmus(grid: SomGrid, X: np.ndarray, ids: list[str]) -> BmuAssignment:
    if len(ids) != np.asarray(getattr(X, "X", X)).shape[0]:
        raise ValueError("one id per row required")
    idx = bmu_batch(grid, X)
    return BmuAssignment(
        rows=grid.rows,
        cols=grid.cols,
        cells={i: int(c) for i, c in zip(ids, idx)},
    )


def quantization_error(grid: SomGrid, X: np.ndarray) -> float:
    """Mean Euclidean distance from each sample to its BMU weight."""
    X = np.asarray(getattr(X, "X", X), dtype=np.float64)
    idx = bmu_batch(grid, X)
    return float(np.mean(np.linalg.norm(X - grid.weights[idx], axis=1)))


def topographic_error(grid: SomGrid, X: np.ndarray) -> float:
    """Fraction of samples whose first and second BMUs are not lattice
    neighbors (8-neighborhood)."""
    X = np.asarray(getattr(X, "X", X), dtype=np.float64)
    frac_bad = 0
    for s in range(0, X.shape[0], 1024):
        block = X[s : s + 1024]
        d2 = np.sum((block[:, None, :] - grid.weights[None, :, :]) ** 2, axis=2)
        order = np.argsort(d2, axis=1, kind="stable")
        first, second = order[:, 0], order[:, 1]
        r1, c1 = np.divmod(first, grid.cols)
        r2, c2 = np.divmod(second, grid.cols)
        adjacent = (np.abs(r1 - r2) <= 1) & (np.abs(c1 - c2) <= 1)
        frac_bad += int(np.count_nonzero(~adjacent))
    return frac_bad / X.shape[0]


def contextual_numbers(
    X: np.ndarray, cells: int = 10000, iters: int = 10000, seed: int = 0
) -> np.ndarray:
    """Scalar cipher per row: BMU index on a 1 x cells SOM over (cells-1)."""
    X = np.asarray(getattr(X, "X", X), dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] < 2:
        raise ValueError("need at least 2 rows")
    if cells < 2:
        raise ValueError("need at least 2 cells")
    grid = train_som(X, 1, cells, iters, seed)
    return bmu_batch(grid, X).astype(np.float64) / (cells - 1)


def _kmeans_pp_init(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centroids = np.empty((k, X.shape[1]))
    centroids[0] = X[rng.integers(0, X.shape[0])]
    d2 = np.sum((X - centroids[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            centroids[j] = X[rng.integers(0, X.shape[0])]
            continue
        probs = d2 / total
        centroids[j] = X[rng.choice(X.shape[0], p=probs)]
        d2 = np.minimum(d2, np.sum((X - centroids[j]) ** 2, axis=1))
    return centroids


def two_level_cluster(grid: SomGrid, k: int, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """K-means over the SOM weight vectors: returns (cell -> cluster map,
    k centroids). Empty clusters are repaired by splitting the largest
    cluster at its farthest member."""
    X = grid.weights.copy()
    distinct = np.unique(X, axis=0).shape[0]
    if k > distinct:
        raise ValueError(f"k={k} exceeds {distinct} distinct weight vectors")
    if k < 1:
        raise ValueError("k must be >= 1")

    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp_init(X, k, rng)
    assign = np.full(X.shape[0], -1, dtype=np.int64)

    for _ in range(MAX_LLOYD_ITERS):
        d2 = np.sum((X[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
        new_assign = np.argmin(d2, axis=1)

        # repair empties before accepting the assignment
        counts = np.bincount(new_assign, minlength=k)
        while np.any(counts == 0):
            empty = int(np.argmin(counts))
            biggest = int(np.argmax(counts))
            members = np.where(new_assign == biggest)[0]
            far = members[np.argmax(np.sum((X[members] - centroids[biggest]) ** 2, axis=1))]
            centroids[empty] = X[far]
            new_assign[far] = empty
            counts = np.bincount(new_assign, minlength=k)

        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for j in range(k):
            centroids[j] = X[assign == j].mean(axis=0)

    return assign, centroids


def representative_images(
    cell_clusters: np.ndarray,
    centroids: np.ndarray,
    image_cells: np.ndarray,
    X: np.ndarray,
    ids: list[str],
) -> list[str]:
    """One image id per cluster: the member image nearest the centroid in
    the SOM's input space; image-less clusters take the globally nearest
    image not yet chosen."""
    X = np.asarray(getattr(X, "X", X), dtype=np.float64)
    k = centroids.shape[0]
    if len(ids) < k:
        raise ValueError(f"{len(ids)} images for {k} clusters")
    image_clusters = cell_clusters[image_cells]

    chosen: list[str] = []
    taken = np.zeros(len(ids), dtype=bool)
    for j in range(k):
        members = np.where((image_clusters == j) & ~taken)[0]
        pool = members if members.size else np.where(~taken)[0]
        d2 = np.sum((X[pool] - centroids[j]) ** 2, axis=1)
        pick = pool[int(np.argmin(d2))]
        taken[pick] = True
        chosen.append(ids[pick])
    return chosen


def alphabet(
    grid: SomGrid, mode: str = "generic", preference: Optional[np.ndarray] = None
) -> AlphabetMap:
    """Per-cell colors: generic = hue/lightness from lattice position,
    preference_ordered = warm-to-cold ramp on the given per-cell values."""
    if mode == "generic":
        colors = np.array(
            [grid_color(r, c, grid.rows, grid.cols) for r in range(grid.rows) for c in range(grid.cols)],
            dtype=np.uint8,
        )
        return AlphabetMap(grid.rows, grid.cols, colors, mode)
    if mode == "preference_ordered":
        if preference is None:
            raise ValueError("preference_ordered alphabet needs per-cell values")
        preference = np.asarray(preference, dtype=np.float64)
        if preference.shape != (grid.n_cells,):
            raise ValueError(f"preference shape {preference.shape} != ({grid.n_cells},)")
        colors = np.array([ramp_color(float(v)) for v in preference], dtype=np.uint8)
        return AlphabetMap(grid.rows, grid.cols, colors, mode, preference=preference)
    raise ValueError(f"unknown alphabet mode {mode!r}")


def save_som(path: Path, grid: SomGrid) -> None:
    """SOM0 container: u32 rows/cols/dim, f32 LE weights row-major, then
    u64 seed and u32 iters."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(SOM_MAGIC)
        f.write(struct.pack("<III", grid.rows, grid.cols, grid.dim))
        f.write(np.ascontiguousarray(grid.weights, dtype="<f4").tobytes())
        f.write(struct.pack("<QI", grid.seed & 0xFFFFFFFFFFFFFFFF, grid.iters))


def load_som(path: Path) -> SomGrid:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != SOM_MAGIC:
            raise ValueError(f"bad magic {magic!r} in {path}")
        rows, cols, dim = struct.unpack("<III", f.read(12))
        W = np.frombuffer(f.read(4 * rows * cols * dim), dtype="<f4")
        W = W.reshape(rows * cols, dim).astype(np.float64)
        seed, iters = struct.unpack("<QI", f.read(12))
        trailing = f.read()
    if trailing:
        raise ValueError(f"{len(trailing)} trailing bytes in {path}")
    return SomGrid(rows, cols, dim, W, seed=seed, iters=iters)
