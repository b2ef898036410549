"""Place manifests and image acquisition.

Two acquisition paths share one data model: a synthetic generator that
paints procedural land-use textures with known ground truth, and an
importer for externally supplied tiles named by geokey. Both yield a
PlaceManifest whose records join satellite and street-level imagery
through the geokey.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image
from scipy.special import ndtr

from .geo import GeoPoint, PlaceCell, TileSpec, cell_pixel_extent, partition_city
from .noise import fractal_noise, hash_str, hash_u64

log = logging.getLogger(__name__)

LAND_CLASSES = ("green", "built_low", "built_high", "water", "road")

_CLASS_COLORS = np.array(
    [
        [72, 128, 58],   # green: vegetation
        [172, 160, 142], # built_low: low-rise fabric
        [98, 97, 104],   # built_high: dense/high-rise
        [52, 94, 156],   # water
        [126, 124, 120], # road/asphalt
    ],
    dtype=np.float64,
)

# coarsest land-use octave: wavelength 2 cells, so patches span cells
# without saturating whole districts
_LANDUSE_FREQ = 0.5
_DETAIL_STREAM = 13

# marginal moments of the 4-octave field, measured once on 2e6 samples;
# used to quantile-calibrate fields before the class race
_NOISE_MEAN = 0.5
_NOISE_STD = 0.1184


@dataclass(frozen=True)
class GroundTruth:
    green_fraction: float
    built_fraction: float
    water_fraction: float

    def __post_init__(self):
        for name in ("green_fraction", "built_fraction", "water_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")
        total = self.green_fraction + self.built_fraction + self.water_fraction
        if total > 1.0 + 1e-9:
            raise ValueError(f"ground-truth fractions sum to {total} > 1")


@dataclass(frozen=True)
class CitySpec:
    city_id: str
    center: GeoPoint
    extent_m: float = 4000.0
    cell_m: float = 200.0
    texture_seed: int = 0
    landuse_mix: dict = field(default_factory=lambda: {"green": 1.0})

    def __post_init__(self):
        for k, w in self.landuse_mix.items():
            if k not in LAND_CLASSES:
                raise ValueError(f"unknown land-use class {k!r}")
            if w < 0:
                raise ValueError(f"negative land-use weight {k}={w}")
        total = sum(self.landuse_mix.values())
        if abs(total - 1.0) > 1e-6:
            raise ValueError(f"land-use weights sum to {total}, expected 1")

    @property
    def grid_side(self) -> int:
        return round(self.extent_m / self.cell_m)


@dataclass
class PlaceRecord:
    cell: PlaceCell
    sat_path: str
    sv_path: Optional[str] = None
    truth: Optional[GroundTruth] = None

    @property
    def geokey(self) -> str:
        return self.cell.geokey

    @property
    def sat_id(self) -> str:
        return f"{self.geokey}#sat"

    @property
    def sv_id(self) -> Optional[str]:
        return f"{self.geokey}#sv" if self.sv_path is not None else None


@dataclass
class PlaceManifest:
    records: list[PlaceRecord]
    seed: int = 0
    fingerprint: str = ""

    def __post_init__(self):
        keys = [r.geokey for r in self.records]
        if len(set(keys)) != len(keys):
            raise ValueError("duplicate geokeys in manifest")

    def by_geokey(self) -> dict[str, PlaceRecord]:
        return {r.geokey: r for r in self.records}

    def cities(self) -> list[str]:
        seen = dict.fromkeys(r.cell.city_id for r in self.records)
        return list(seen)


def _tile_name(cell: PlaceCell, kind: str) -> str:
    return f"{cell.city_id}/{cell.row:03d}_{cell.col:03d}.{kind}.png"


def save_image(path: Path, pixels: np.ndarray) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(pixels, mode="RGB").save(path, format="PNG")


def load_image(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def _class_map(spec: CitySpec, us: np.ndarray, vs: np.ndarray, seed: int) -> np.ndarray:
    """Land-use class index per pixel.

    One smooth field per class, quantile-calibrated to uniform, then an
    exponential race log(u_k)/w_k decides the class, so expected area
    fractions match the mix weights while level sets keep patches
    spatially coherent. Coordinates are in cell units across the whole
    city, so fields are continuous between neighboring cells and
    generation stays schedule-independent.
    """
    lattice_seed = hash_u64(seed, spec.texture_seed)
    shape = np.broadcast_shapes(us.shape, vs.shape)
    score = np.full(shape, -np.inf)
    classes = np.zeros(shape, dtype=np.int64)
    for i, cls in enumerate(LAND_CLASSES):
        w = spec.landuse_mix.get(cls, 0.0)
        if w <= 0.0:
            continue
        n = fractal_noise(us, vs, lattice_seed, stream=i, frequency=_LANDUSE_FREQ)
        u = np.clip(ndtr((n - _NOISE_MEAN) / _NOISE_STD), 1e-12, 1.0 - 1e-12)
        s = np.log(u) / w
        take = s > score
        score[take] = s[take]
        classes[take] = i
    return classes


def _cell_grid_coords(cell: PlaceCell, px: int) -> tuple[np.ndarray, np.ndarray]:
    frac = (np.arange(px) + 0.5) / px
    us = cell.col + frac[None, :]
    vs = cell.row + frac[:, None]
    return us, vs


def render_sat(spec: CitySpec, cell: PlaceCell, seed: int, px: int = 224) -> tuple[np.ndarray, GroundTruth]:
    """Top-down procedural texture for one cell plus its measured ground truth."""
    us, vs = _cell_grid_coords(cell, px)
    classes = _class_map(spec, us, vs, seed)

    img = _CLASS_COLORS[classes]
    lattice_seed = hash_u64(seed, spec.texture_seed)
    detail = fractal_noise(us, vs, lattice_seed, stream=_DETAIL_STREAM, frequency=8.0)
    img *= (0.82 + 0.36 * detail)[..., None]

    rng = np.random.default_rng(hash_str(seed, cell.geokey + "#sat"))
    img += rng.uniform(-6.0, 6.0, size=img.shape)

    truth = GroundTruth(
        green_fraction=float(np.mean(classes == 0)),
        built_fraction=float(np.mean((classes == 1) | (classes == 2))),
        water_fraction=float(np.mean(classes == 3)),
    )
    return np.clip(img, 0, 255).astype(np.uint8), truth


def render_sv(spec: CitySpec, cell: PlaceCell, seed: int, px: int = 224) -> np.ndarray:
    """Perspective-styled eye-level view derived from the same latent field."""
    horizon = int(px * 0.42)
    img = np.zeros((px, px, 3), dtype=np.float64)

    # sky: vertical gradient, lightly perturbed
    sky_t = (np.arange(horizon) / max(horizon - 1, 1))[:, None]
    sky = (1 - sky_t) * np.array([132.0, 172.0, 222.0]) + sky_t * np.array([205.0, 221.0, 237.0])
    img[:horizon] = sky[:, None, :]

    # ground: sample the land-use field along a perspective sweep of the cell
    rows = np.arange(horizon, px)
    t = (rows - horizon + 1.0) / (px - horizon)  # 0+ at horizon, 1 at bottom
    xs = (np.arange(px) + 0.5) / px
    us = cell.col + 0.5 + (xs[None, :] - 0.5) * (1.3 - t[:, None])
    vs = cell.row + 0.08 + 0.88 * t[:, None]
    classes = _class_map(spec, us, vs, seed)
    ground = _CLASS_COLORS[classes] * (0.72 + 0.38 * t[:, None])[..., None]
    img[horizon:] = ground

    rng = np.random.default_rng(hash_str(seed, cell.geokey + "#sv"))
    img += rng.uniform(-7.0, 7.0, size=img.shape)
    return np.clip(img, 0, 255).astype(np.uint8)


def synth_city(
    spec: CitySpec,
    seed: int,
    out_dir: Path,
    image_px: int = 224,
    sv_fraction: float = 0.64,
) -> list[PlaceRecord]:
    """Generate satellite (and a fraction of street-level) images for every
    cell of the city grid. Deterministic per (spec, seed)."""
    if not 0.0 <= sv_fraction <= 1.0:
        raise ValueError(f"sv_fraction={sv_fraction} outside [0, 1]")
    cells = partition_city(spec.city_id, spec.center, spec.extent_m, spec.cell_m)

    n_sv = math.ceil(sv_fraction * len(cells))
    rng = np.random.default_rng(hash_str(seed, spec.city_id + "#svpick"))
    sv_cells = set(rng.choice(len(cells), size=n_sv, replace=False)) if n_sv else set()

    out_dir = Path(out_dir)
    records = []
    for i, cell in enumerate(cells):
        sat, truth = render_sat(spec, cell, seed, px=image_px)
        sat_rel = _tile_name(cell, "sat")
        save_image(out_dir / sat_rel, sat)
        sv_rel = None
        if i in sv_cells:
            sv = render_sv(spec, cell, seed, px=image_px)
            sv_rel = _tile_name(cell, "sv")
            save_image(out_dir / sv_rel, sv)
        records.append(PlaceRecord(cell=cell, sat_path=sat_rel, sv_path=sv_rel, truth=truth))
    return records


def import_tiles(
    directory: Path,
    cells: list[PlaceCell],
    zoom: int = 18,
    tile_px: int = 256,
    image_px: int = 224,
    out_dir: Optional[Path] = None,
) -> tuple[PlaceManifest, list[dict]]:
    """Validate and normalize externally supplied tiles named by geokey.

    Each tile is assumed to cover its cell's ground extent. Tiles whose
    pixel size differs from the latitude-corrected target are resampled
    (bilinear) to that target before the final crop to image_px. Missing
    street-level tiles are allowed; missing satellite tiles abort.
    """
    directory = Path(directory)
    out_dir = Path(out_dir) if out_dir is not None else None
    tiles = TileSpec(zoom=zoom, tile_px=tile_px)

    missing = [c.geokey for c in cells if not (directory / _tile_name(c, "sat")).exists()]
    if missing:
        raise FileNotFoundError(
            f"{len(missing)} satellite tiles missing from {directory}: "
            + ", ".join(missing[:20])
            + ("..." if len(missing) > 20 else "")
        )

    records = []
    report = []
    for cell in cells:
        entry = {"geokey": cell.geokey}
        target_px = round(cell_pixel_extent(cell.center, tiles, cell.cell_m))
        for kind in ("sat", "sv"):
            rel = _tile_name(cell, kind)
            src = directory / rel
            if not src.exists():
                continue
            with Image.open(src) as im:
                im = im.convert("RGB")
                delivered = im.size[0]
                resampled = delivered != target_px
                if resampled:
                    log.warning(
                        "tile %s delivered at %d px, expected %d px; resampling",
                        rel, delivered, target_px,
                    )
                    im = im.resize((target_px, target_px), Image.BILINEAR)
                final = im.resize((image_px, image_px), Image.BILINEAR)
            entry[kind] = {
                "delivered_px": delivered,
                "normalized_px": target_px,
                "resampled": resampled,
            }
            if out_dir is not None:
                save_image(out_dir / rel, np.asarray(final, dtype=np.uint8))
        report.append(entry)
        records.append(
            PlaceRecord(
                cell=cell,
                sat_path=_tile_name(cell, "sat"),
                sv_path=_tile_name(cell, "sv") if "sv" in entry else None,
                truth=None,
            )
        )
    return PlaceManifest(records=records), report


def build_dataset_counts(manifest: PlaceManifest) -> dict:
    """Per-city and total satellite / street-level image counts."""
    per_city: dict[str, dict[str, int]] = {}
    for r in manifest.records:
        c = per_city.setdefault(r.cell.city_id, {"sat": 0, "sv": 0})
        c["sat"] += 1
        if r.sv_path is not None:
            c["sv"] += 1
    total = {
        "sat": sum(c["sat"] for c in per_city.values()),
        "sv": sum(c["sv"] for c in per_city.values()),
    }
    return {"total": total, "per_city": per_city}


def save_manifest(manifest: PlaceManifest, path: Path) -> None:
    """Write places.jsonl: one UTF-8 JSON record per line, paths relative
    to the manifest's directory."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for r in manifest.records:
            rec = {
                "city": r.cell.city_id,
                "row": r.cell.row,
                "col": r.cell.col,
                "lat": r.cell.center.lat_deg,
                "lon": r.cell.center.lon_deg,
                "geokey": r.geokey,
                "sat_path": r.sat_path,
            }
            if r.sv_path is not None:
                rec["sv_path"] = r.sv_path
            if r.truth is not None:
                rec["truth"] = {
                    "green_fraction": r.truth.green_fraction,
                    "built_fraction": r.truth.built_fraction,
                    "water_fraction": r.truth.water_fraction,
                }
            f.write(json.dumps(rec, sort_keys=True) + "\n")


def load_manifest(path: Path, cell_m: float = 200.0) -> PlaceManifest:
    records = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            cell = PlaceCell(
                city_id=rec["city"],
                row=rec["row"],
                col=rec["col"],
                center=GeoPoint(rec["lat"], rec["lon"]),
                cell_m=cell_m,
            )
            truth = None
            if "truth" in rec:
                truth = GroundTruth(**rec["truth"])
            records.append(
                PlaceRecord(
                    cell=cell,
                    sat_path=rec["sat_path"],
                    sv_path=rec.get("sv_path"),
                    truth=truth,
                )
            )
    return PlaceManifest(records=records)
