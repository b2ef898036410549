"""City-level products: pixel maps, the joint structure-and-preference
embedding, and t-SNE layouts of whole cities.

Generic maps color each ground cell by its overhead image's place in the
structure alphabet; specific maps re-encode every image as a (structure,
preference) pair, train a second lattice on those, and color by a
warm-to-cold ramp where cold means liked.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image

from .features import FeatureMatrix, describe_pixels
from .mlp import Prediction
from .noise import hash_str
from .som import (
    AlphabetMap,
    BmuAssignment,
    SomGrid,
    alphabet,
    contextual_numbers,
    train_som,
)
from .tsne import tsne

MAP_MODES = ("generic", "specific")
DEFAULT_BLOCK_PX = 8
LINEAR_CELLS = 1000
SPECIFIC_ROWS = 80
SPECIFIC_COLS = 80


class MissingAssignmentError(ValueError):
    def __init__(self, geokeys: list[str]):
        self.geokeys = list(geokeys)
        shown = ", ".join(self.geokeys[:20])
        super().__init__(f"{len(self.geokeys)} cells without a BMU: {shown}")


class MisalignedIdsError(ValueError):
    pass


@dataclass
class PixelMap:
    city_id: str
    mode: str
    chars: np.ndarray  # rows x cols int64 character codes
    colors: np.ndarray  # rows x cols x 3 uint8
    values: Optional[np.ndarray] = None  # rows x cols, specific mode only

    def __post_init__(self):
        if self.mode not in MAP_MODES:
            raise ValueError(f"mode {self.mode!r} not in {MAP_MODES}")
        if self.chars.ndim != 2:
            raise ValueError(f"chars must be 2-D, got {self.chars.shape}")
        if self.colors.shape != (*self.chars.shape, 3):
            raise ValueError(f"colors shape {self.colors.shape} != {(*self.chars.shape, 3)}")
        if self.values is not None and self.values.shape != self.chars.shape:
            raise ValueError(f"values shape {self.values.shape} != {self.chars.shape}")

    @property
    def rows(self) -> int:
        return self.chars.shape[0]

    @property
    def cols(self) -> int:
        return self.chars.shape[1]


@dataclass(frozen=True)
class JointVector:
    structure_cn: float
    preference_cn: float

    def __post_init__(self):
        for name in ("structure_cn", "preference_cn"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")


@dataclass
class CityLayout:
    coords: dict  # city_id -> (x, y)
    neighbors: dict  # city_id -> other city_ids, nearest first
    seed: int
    perplexity: float

    def __post_init__(self):
        for cid, xy in self.coords.items():
            if not np.all(np.isfinite(xy)):
                raise ValueError(f"non-finite layout coordinate for {cid}")
        for cid, ranked in self.neighbors.items():
            if cid in ranked:
                raise ValueError(f"{cid} lists itself as a neighbor")


def _city_grid(manifest, city_id: str):
    recs = [r for r in manifest.records if r.cell.city_id == city_id]
    if not recs:
        raise ValueError(f"no cells for city {city_id!r}")
    rows = max(r.cell.row for r in recs) + 1
    cols = max(r.cell.col for r in recs) + 1
    return recs, rows, cols


def _pixel_map(city_id, manifest, assignment: BmuAssignment, amap: AlphabetMap, mode: str) -> PixelMap:
    recs, rows, cols = _city_grid(manifest, city_id)
    missing = [r.geokey for r in recs if r.sat_id not in assignment.cells]
    if missing:
        raise MissingAssignmentError(sorted(missing))
    chars = np.zeros((rows, cols), dtype=np.int64)
    colors = np.zeros((rows, cols, 3), dtype=np.uint8)
    values = np.zeros((rows, cols)) if amap.preference is not None else None
    for r in recs:
        cell = assignment.cells[r.sat_id]
        chars[r.cell.row, r.cell.col] = cell
        colors[r.cell.row, r.cell.col] = amap.color_of(cell)
        if values is not None:
            values[r.cell.row, r.cell.col] = amap.preference[cell]
    return PixelMap(city_id=city_id, mode=mode, chars=chars, colors=colors, values=values)


def generic_pixel_map(city_id, manifest, assignment: BmuAssignment, amap: AlphabetMap) -> PixelMap:
    """One colored cell per ground cell, at the cell's own (row, col)."""
    return _pixel_map(city_id, manifest, assignment, amap, "generic")


def specific_pixel_map(city_id, manifest, assignment: BmuAssignment, amap: AlphabetMap) -> PixelMap:
    if amap.preference is None:
        raise ValueError("specific maps need a preference-ordered alphabet")
    return _pixel_map(city_id, manifest, assignment, amap, "specific")


def joint_contextual_embedding(
    sat_features: FeatureMatrix,
    sat_predictions: Sequence[Prediction],
    cells: int = LINEAR_CELLS,
    iters: int = 10000,
    seed: int = 0,
) -> list[JointVector]:
    """Two linear SOMs, one over the descriptors and one over the liked
    probabilities, paired element-wise per image.

    The preference cipher is flipped, if needed, so it grows with p_like:
    downstream ramp colors read high preference as cold, and a raw 1-D SOM
    fixes ordering only up to reversal.
    """
    p_of = {p.image_id: p.p_like for p in sat_predictions}
    missing = [i for i in sat_features.ids if i not in p_of]
    extra = [i for i in p_of if i not in set(sat_features.ids)]
    if missing or extra:
        raise MisalignedIdsError(
            f"{len(missing)} features without predictions, {len(extra)} predictions without features"
        )
    structure = contextual_numbers(
        sat_features.X, cells=cells, iters=iters, seed=hash_str(seed, "cn/structure")
    )
    p_like = np.array([p_of[i] for i in sat_features.ids])
    preference = contextual_numbers(
        p_like[:, None], cells=cells, iters=iters, seed=hash_str(seed, "cn/preference")
    )
    if np.ptp(p_like) > 0 and np.ptp(preference) > 0:
        if np.corrcoef(preference, p_like)[0, 1] < 0:
            preference = 1.0 - preference
    return [JointVector(float(s), float(p)) for s, p in zip(structure, preference)]


def joint_matrix(joint: Sequence[JointVector]) -> np.ndarray:
    return np.array([[v.structure_cn, v.preference_cn] for v in joint], dtype=np.float64)


def specific_alphabet(
    joint: Sequence[JointVector],
    seed: int = 0,
    rows: int = SPECIFIC_ROWS,
    cols: int = SPECIFIC_COLS,
    iters: int = 20000,
) -> tuple[SomGrid, AlphabetMap]:
    """Train the joint lattice and color it by the preference weight of
    every cell, cold end for liked."""
    if len(joint) < 2:
        raise ValueError(f"need at least 2 joint vectors, got {len(joint)}")
    grid = train_som(joint_matrix(joint), rows, cols, iters=iters, seed=seed)
    pref = np.clip(grid.weights[:, 1], 0.0, 1.0)
    return grid, alphabet(grid, "preference_ordered", pref)


def map_raster(pixel_map: PixelMap, block: int = DEFAULT_BLOCK_PX) -> np.ndarray:
    if block < 1:
        raise ValueError(f"block {block} < 1")
    return np.repeat(np.repeat(pixel_map.colors, block, axis=0), block, axis=1)


def alphabet_raster(amap: AlphabetMap, block: int = DEFAULT_BLOCK_PX) -> np.ndarray:
    sheet = amap.colors.reshape(amap.rows, amap.cols, 3)
    return np.repeat(np.repeat(sheet, block, axis=0), block, axis=1)


def render(obj, path: Path, block: int = DEFAULT_BLOCK_PX) -> Path:
    """Rasterize a PixelMap or an AlphabetMap swatch sheet to a PNG file."""
    if isinstance(obj, PixelMap):
        raster = map_raster(obj, block)
    elif isinstance(obj, AlphabetMap):
        raster = alphabet_raster(obj, block)
    else:
        raise TypeError(f"cannot render {type(obj).__name__}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(raster, mode="RGB").save(path, format="PNG")
    return path


def city_similarity(
    maps: Sequence[PixelMap],
    seed: int = 0,
    block: int = DEFAULT_BLOCK_PX,
    iters: int = 1000,
) -> CityLayout:
    """Embed whole cities by the descriptors of their rendered maps."""
    if len(maps) < 3:
        raise ValueError(f"need at least 3 cities, got {len(maps)}")
    ids = [m.city_id for m in maps]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate city ids")
    X = np.stack([describe_pixels(map_raster(m, block)) for m in maps])
    perplexity = min(5.0, len(maps) - 1.0)
    emb = tsne(X, dims=2, perplexity=perplexity, iters=iters, seed=seed, ids=ids)
    coords = {cid: (float(x), float(y)) for cid, (x, y) in zip(ids, emb.coords)}
    neighbors = {}
    for i, cid in enumerate(ids):
        d = np.linalg.norm(emb.coords - emb.coords[i], axis=1)
        order = [ids[j] for j in np.argsort(d, kind="stable") if j != i]
        neighbors[cid] = order
    return CityLayout(coords=coords, neighbors=neighbors, seed=seed, perplexity=perplexity)


def save_map(pixel_map: PixelMap, maps_dir: Path, block: int = DEFAULT_BLOCK_PX) -> tuple[Path, Path]:
    """maps/<city>.<mode>.png plus a cell-level JSON dump."""
    maps_dir = Path(maps_dir)
    maps_dir.mkdir(parents=True, exist_ok=True)
    png = maps_dir / f"{pixel_map.city_id}.{pixel_map.mode}.png"
    render(pixel_map, png, block)
    cells = []
    for r in range(pixel_map.rows):
        for c in range(pixel_map.cols):
            cell = {
                "row": r,
                "col": c,
                "char": int(pixel_map.chars[r, c]),
                "color": [int(v) for v in pixel_map.colors[r, c]],
            }
            if pixel_map.values is not None:
                cell["value"] = float(pixel_map.values[r, c])
            cells.append(cell)
    doc = {
        "city_id": pixel_map.city_id,
        "mode": pixel_map.mode,
        "rows": pixel_map.rows,
        "cols": pixel_map.cols,
        "cells": cells,
    }
    js = maps_dir / f"{pixel_map.city_id}.{pixel_map.mode}.json"
    js.write_text(json.dumps(doc, sort_keys=True) + "\n", encoding="utf-8")
    return png, js


def load_map(path: Path) -> PixelMap:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    rows, cols = int(doc["rows"]), int(doc["cols"])
    chars = np.zeros((rows, cols), dtype=np.int64)
    colors = np.zeros((rows, cols, 3), dtype=np.uint8)
    values = np.zeros((rows, cols)) if any("value" in c for c in doc["cells"]) else None
    for c in doc["cells"]:
        r, k = int(c["row"]), int(c["col"])
        chars[r, k] = c["char"]
        colors[r, k] = c["color"]
        if values is not None:
            values[r, k] = c["value"]
    return PixelMap(city_id=doc["city_id"], mode=doc["mode"], chars=chars, colors=colors, values=values)


def save_layout(layout: CityLayout, path: Path) -> None:
    doc = {
        "seed": layout.seed,
        "perplexity": layout.perplexity,
        "cities": {
            cid: {"xy": list(layout.coords[cid]), "neighbors": layout.neighbors[cid]}
            for cid in layout.coords
        },
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def load_layout(path: Path) -> CityLayout:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    coords = {cid: tuple(v["xy"]) for cid, v in doc["cities"].items()}
    neighbors = {cid: list(v["neighbors"]) for cid, v in doc["cities"].items()}
    return CityLayout(
        coords=coords, neighbors=neighbors, seed=int(doc["seed"]), perplexity=float(doc["perplexity"])
    )
