"""Stage functions behind the command line.

Each stage reads its inputs from the artifact tree under config.out and
writes its outputs back there, so a human can interleave the live survey
between `clusters` and `labels`. Missing inputs raise DependencyError
naming the file and the stage that produces it. All stages are
deterministic per config, so re-running one with unchanged inputs
rewrites byte-identical artifacts.
"""

from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .atlas import (
    city_similarity,
    generic_pixel_map,
    joint_contextual_embedding,
    joint_matrix,
    load_map,
    render,
    save_layout,
    save_map,
    specific_alphabet,
    specific_pixel_map,
)
from .config import ConfigError, PipelineConfig
from .corpus import PlaceManifest, load_image, load_manifest, save_manifest, synth_city
from .features import extract_corpus, read_fvec, write_fvec
from .mlp import (
    build_training_set,
    adapt_domain,
    init_model,
    label_bmus,
    load_model,
    load_predictions,
    predict,
    predict_proba,
    save_model,
    save_predictions,
    train,
)
from .noise import hash_str
from .report import embed_figure, layout_figure, training_figure, write_tsv
from .som import alphabet, assign_bmus, load_som, representative_images, save_som, train_som, two_level_cluster
from .survey import (
    PreferenceLabel,
    SyntheticRater,
    VoteLog,
    derive_labels,
    load_schedule,
    save_schedule,
    schedule_pairs,
)
from .tsne import tsne

STAGES = (
    "synth",
    "grid",
    "extract",
    "embed",
    "som",
    "clusters",
    "labels",
    "train",
    "adapt",
    "atlas",
    "similarity",
)

# which stage writes which artifact, for dependency errors
_PRODUCERS = {
    "data/places.jsonl": "synth",
    "grid.json": "grid",
    "features.sat.fvec": "extract",
    "features.sv.fvec": "extract",
    "embed.sv.json": "embed",
    "som.structure.som0": "som",
    "clusters.json": "clusters",
    "schedule.json": "labels",
    "votes.jsonl": "survey-serve",
    "labels.json": "labels",
    "model.sv.mlp0": "train",
    "predictions.sv.jsonl": "train",
    "model.sat.mlp0": "adapt",
    "predictions.sat.jsonl": "adapt",
    "som.specific.som0": "atlas",
    "layout.json": "similarity",
}


class DependencyError(RuntimeError):
    def __init__(self, path: Path, stage: str):
        self.path = Path(path)
        self.stage = stage
        super().__init__(f"missing {path}: run `urbanpref {stage}` first")


def _require(cfg: PipelineConfig, rel: str) -> Path:
    path = cfg.out / rel
    if not path.exists():
        raise DependencyError(path, _PRODUCERS.get(rel, "an earlier stage"))
    return path


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _stamp(cfg: PipelineConfig, paths) -> None:
    """Record fresh hashes in provenance.json under the config fingerprint."""
    prov_path = cfg.out / "provenance.json"
    fingerprint = cfg.fingerprint()
    doc = {"fingerprint": fingerprint, "files": {}}
    if prov_path.exists():
        doc = json.loads(prov_path.read_text(encoding="utf-8"))
        if doc.get("fingerprint") != fingerprint:
            raise ConfigError(
                f"artifact tree {cfg.out} was built with a different config "
                f"(fingerprint {doc.get('fingerprint', '?')[:12]}.. vs {fingerprint[:12]}..); "
                "use a fresh --out directory"
            )
    for p in paths:
        doc["files"][str(Path(p).relative_to(cfg.out))] = _sha256(p)
    prov_path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def verify_tree(cfg: PipelineConfig) -> list[str]:
    """Re-hash every recorded artifact; returns human-readable problems."""
    prov_path = cfg.out / "provenance.json"
    if not prov_path.exists():
        raise DependencyError(prov_path, "any")
    doc = json.loads(prov_path.read_text(encoding="utf-8"))
    problems = []
    if doc.get("fingerprint") != cfg.fingerprint():
        problems.append(
            f"config fingerprint mismatch: tree has {doc.get('fingerprint', '?')[:12]}.., "
            f"config gives {cfg.fingerprint()[:12]}.."
        )
    for rel, digest in sorted(doc.get("files", {}).items()):
        path = cfg.out / rel
        if not path.exists():
            problems.append(f"{rel}: recorded but missing")
        elif _sha256(path) != digest:
            problems.append(f"{rel}: content changed since it was stamped")
    return problems


def _manifest(cfg: PipelineConfig) -> PlaceManifest:
    return load_manifest(_require(cfg, "data/places.jsonl"), cell_m=cfg.cell_m)


def stage_synth(cfg: PipelineConfig) -> Path:
    if not cfg.cities:
        raise ConfigError("no [city:NAME] sections in config")
    records = []
    for spec in cfg.cities:
        records.extend(
            synth_city(spec, cfg.seed, cfg.out / "data", image_px=cfg.image_px, sv_fraction=cfg.sv_fraction)
        )
    manifest = PlaceManifest(records=records, seed=cfg.seed)
    path = cfg.out / "data" / "places.jsonl"
    save_manifest(manifest, path)
    _stamp(cfg, [path])
    return path


def stage_grid(cfg: PipelineConfig) -> Path:
    manifest = _manifest(cfg)
    cities = {}
    for cid in manifest.cities():
        recs = [r for r in manifest.records if r.cell.city_id == cid]
        rows = max(r.cell.row for r in recs) + 1
        cols = max(r.cell.col for r in recs) + 1
        if len(recs) != rows * cols:
            raise ValueError(f"{cid}: {len(recs)} cells do not fill a {rows}x{cols} grid")
        cities[cid] = {
            "rows": rows,
            "cols": cols,
            "cells": len(recs),
            "sv_images": sum(1 for r in recs if r.sv_path is not None),
        }
    doc = {
        "cities": cities,
        "total_cells": sum(c["cells"] for c in cities.values()),
        "total_sv_images": sum(c["sv_images"] for c in cities.values()),
    }
    path = cfg.out / "grid.json"
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    _stamp(cfg, [path])
    return path


def stage_extract(cfg: PipelineConfig) -> tuple[Path, Path]:
    manifest = _manifest(cfg)
    root = cfg.out / "data"
    sat = extract_corpus(manifest, root, kind="satellite")
    sv = extract_corpus(manifest, root, kind="streetview")
    sat_path = cfg.out / "features.sat.fvec"
    sv_path = cfg.out / "features.sv.fvec"
    write_fvec(sat_path, sat)
    write_fvec(sv_path, sv)
    _stamp(cfg, [sat_path, sv_path])
    return sat_path, sv_path


def stage_embed(cfg: PipelineConfig) -> Path:
    fm = read_fvec(_require(cfg, "features.sv.fvec"))
    perplexity = min(cfg.tsne_perplexity, (fm.X.shape[0] - 1) / 3.0)
    emb = tsne(
        fm.X,
        dims=2,
        perplexity=perplexity,
        iters=cfg.tsne_iters,
        seed=hash_str(cfg.seed, "embed/sv"),
        ids=fm.ids,
    )
    doc = {
        "ids": emb.ids,
        "coords": [[float(x), float(y)] for x, y in emb.coords],
        "kl": emb.kl,
        "params": emb.params,
    }
    path = cfg.out / "embed.sv.json"
    path.write_text(json.dumps(doc, sort_keys=True) + "\n", encoding="utf-8")
    fig = embed_figure(emb.coords, emb.ids, cfg.out / "embed.sv.png", title="street-level image embedding")
    _stamp(cfg, [path, fig])
    return path


def stage_som(cfg: PipelineConfig) -> Path:
    fm = read_fvec(_require(cfg, "features.sv.fvec"))
    grid = train_som(fm.X, cfg.som_rows, cfg.som_cols, iters=cfg.som_iters, seed=hash_str(cfg.seed, "som"))
    path = cfg.out / "som.structure.som0"
    save_som(path, grid)
    _stamp(cfg, [path])
    return path


def stage_clusters(cfg: PipelineConfig) -> Path:
    grid = load_som(_require(cfg, "som.structure.som0"))
    fm = read_fvec(_require(cfg, "features.sv.fvec"))
    assign, centroids = two_level_cluster(grid, cfg.k_clusters, seed=hash_str(cfg.seed, "clusters"))
    bmus = assign_bmus(grid, fm.X, fm.ids)
    image_cells = np.array([bmus.cells[i] for i in fm.ids], dtype=np.int64)
    reps = representative_images(assign, centroids, image_cells, fm.X, fm.ids)
    doc = {
        "k": cfg.k_clusters,
        "cell_clusters": [int(c) for c in assign],
        "representatives": reps,
    }
    path = cfg.out / "clusters.json"
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    _stamp(cfg, [path])
    return path


def ensure_schedule(cfg: PipelineConfig):
    """Create schedule.json from the cluster representatives if absent."""
    path = cfg.out / "schedule.json"
    if path.exists():
        return load_schedule(path)
    doc = json.loads(_require(cfg, "clusters.json").read_text(encoding="utf-8"))
    schedule = schedule_pairs(
        doc["representatives"], cfg.n_pairs, cfg.min_appearances, seed=hash_str(cfg.seed, "schedule")
    )
    save_schedule(schedule, path)
    _stamp(cfg, [path])
    return schedule


def run_synthetic_rater(cfg: PipelineConfig) -> Path:
    """Vote every still-undecided pair with the configured synthetic rater.

    The log clock is a plain counter so unattended runs are reproducible
    byte for byte.
    """
    schedule = ensure_schedule(cfg)
    manifest = _manifest(cfg)
    by_geokey = manifest.by_geokey()
    rater = SyntheticRater(policy=cfg.rater_policy, noise=cfg.rater_noise, seed=hash_str(cfg.seed, "rater"))
    votes_path = cfg.out / "votes.jsonl"
    counter = itertools.count()
    with VoteLog(votes_path, schedule, clock=lambda: float(next(counter))) as log:
        done = log.decided_pair_ids("synthetic")
        for pair in schedule.pairs:
            if pair.pair_id in done:
                continue
            left = by_geokey[pair.left_id.rsplit("#", 1)[0]].truth
            right = by_geokey[pair.right_id.rsplit("#", 1)[0]].truth
            log.record_vote(pair.pair_id, rater.rate(pair, left, right), rater_id="synthetic")
    _stamp(cfg, [votes_path])
    return votes_path


def stage_labels(cfg: PipelineConfig, synthetic_rater: bool = False) -> Path:
    if synthetic_rater:
        run_synthetic_rater(cfg)
    schedule = ensure_schedule(cfg)
    votes_path = _require(cfg, "votes.jsonl")
    with VoteLog(votes_path, schedule) as log:
        labels = derive_labels(schedule, log.records)
    doc = [asdict(l) for l in labels]
    path = cfg.out / "labels.json"
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    _stamp(cfg, [path])
    return path


def _load_labels(path: Path) -> list[PreferenceLabel]:
    return [PreferenceLabel(**row) for row in json.loads(Path(path).read_text(encoding="utf-8"))]


def stage_train(cfg: PipelineConfig) -> Path:
    labels = _load_labels(_require(cfg, "labels.json"))
    reps = json.loads(_require(cfg, "clusters.json").read_text(encoding="utf-8"))["representatives"]
    manifest = _manifest(cfg)
    by_geokey = manifest.by_geokey()
    root = cfg.out / "data"
    images = {rid: load_image(root / by_geokey[rid.rsplit("#", 1)[0]].sv_path) for rid in reps}

    aug = build_training_set(
        labels, images, target=cfg.augment_target, split=cfg.augment_split, seed=hash_str(cfg.seed, "augment")
    )
    X_tr, y_tr, _ = aug.arrays("train")
    X_va, y_va, _ = aug.arrays("val")
    X_te, y_te, _ = aug.arrays("test")

    model = init_model(X_tr.shape[1], seed=hash_str(cfg.seed, "init/sv"))
    model = train(model, (X_tr, y_tr), (X_va, y_va), schedule=cfg.schedule, seed=hash_str(cfg.seed, "train/sv"))

    fm = read_fvec(_require(cfg, "features.sv.fvec"))
    preds = predict(model, fm)

    model_path = cfg.out / "model.sv.mlp0"
    save_model(model_path, model)
    pred_path = cfg.out / "predictions.sv.jsonl"
    save_predictions(pred_path, preds)
    fig = training_figure(model.history, cfg.out / "train.curves.png")

    tp = fp = fn = 0
    if X_te.shape[0]:
        te_pred = (predict_proba(model, X_te)[:, 1] >= 0.5).astype(int)
        tp = int(np.sum((te_pred == 1) & (y_te == 1)))
        fp = int(np.sum((te_pred == 1) & (y_te == 0)))
        fn = int(np.sum((te_pred == 0) & (y_te == 1)))
    counts = aug.split_counts()
    summary = write_tsv(
        cfg.out / "train.summary.tsv",
        ("split", "samples", "liked", "metric", "value"),
        [
            ("train", counts["train"], int(np.sum(y_tr)), "", ""),
            ("val", counts["val"], int(np.sum(y_va)), "best_val_accuracy", _best_val(model)),
            (
                "test",
                counts["test"],
                int(np.sum(y_te)),
                "precision/recall",
                f"{_safe_div(tp, tp + fp):.4f}/{_safe_div(tp, tp + fn):.4f}",
            ),
        ],
    )
    _stamp(cfg, [model_path, pred_path, fig, summary])
    return model_path


def _best_val(model) -> str:
    vals = [h["val_accuracy"] for h in model.history]
    return f"{max(vals):.4f}" if vals else "n/a"


def _safe_div(a: int, b: int) -> float:
    return a / b if b else 0.0


def stage_adapt(cfg: PipelineConfig) -> Path:
    grid = load_som(_require(cfg, "som.structure.som0"))
    fm_sv = read_fvec(_require(cfg, "features.sv.fvec"))
    fm_sat = read_fvec(_require(cfg, "features.sat.fvec"))
    model_sv = load_model(_require(cfg, "model.sv.mlp0"))
    preds_sv = load_predictions(_require(cfg, "predictions.sv.jsonl"))
    manifest = _manifest(cfg)

    assignment = assign_bmus(grid, fm_sv.X, fm_sv.ids)
    cell_values = label_bmus(preds_sv, assignment, grid=grid, model=model_sv)
    model_sat, preds_sat = adapt_domain(
        cell_values, assignment, manifest, fm_sat, schedule=cfg.schedule, seed=hash_str(cfg.seed, "adapt")
    )

    model_path = cfg.out / "model.sat.mlp0"
    save_model(model_path, model_sat)
    pred_path = cfg.out / "predictions.sat.jsonl"
    save_predictions(pred_path, preds_sat)
    n_tr = sum(1 for p in preds_sat if p.source == "transferred")
    summary = write_tsv(
        cfg.out / "adapt.summary.tsv",
        ("source", "count"),
        [("transferred", n_tr), ("predicted", len(preds_sat) - n_tr), ("total", len(preds_sat))],
    )
    _stamp(cfg, [model_path, pred_path, summary])
    return model_path


def stage_atlas(cfg: PipelineConfig) -> Path:
    manifest = _manifest(cfg)
    grid = load_som(_require(cfg, "som.structure.som0"))
    fm_sat = read_fvec(_require(cfg, "features.sat.fvec"))
    preds_sat = load_predictions(_require(cfg, "predictions.sat.jsonl"))
    maps_dir = cfg.out / "maps"
    written = []

    gen_amap = alphabet(grid, "generic")
    sat_assign = assign_bmus(grid, fm_sat.X, fm_sat.ids)
    for cid in manifest.cities():
        written.extend(save_map(generic_pixel_map(cid, manifest, sat_assign, gen_amap), maps_dir, cfg.map_block))

    joint = joint_contextual_embedding(
        fm_sat, preds_sat, cells=cfg.linear_cells, iters=cfg.linear_iters, seed=hash_str(cfg.seed, "joint")
    )
    jgrid, spec_amap = specific_alphabet(
        joint,
        seed=hash_str(cfg.seed, "specific"),
        rows=cfg.specific_rows,
        cols=cfg.specific_cols,
        iters=cfg.specific_iters,
    )
    joint_assign = assign_bmus(jgrid, joint_matrix(joint), fm_sat.ids)
    for cid in manifest.cities():
        written.extend(save_map(specific_pixel_map(cid, manifest, joint_assign, spec_amap), maps_dir, cfg.map_block))

    jpath = cfg.out / "som.specific.som0"
    save_som(jpath, jgrid)
    written.append(jpath)
    written.append(render(gen_amap, cfg.out / "spectrum.generic.png", block=max(1, 320 // max(grid.rows, grid.cols))))
    written.append(render(spec_amap, cfg.out / "spectrum.specific.png", block=max(1, 320 // cfg.specific_rows)))
    _stamp(cfg, written)
    return maps_dir


def stage_similarity(cfg: PipelineConfig) -> Path:
    manifest = _manifest(cfg)
    maps = []
    for cid in manifest.cities():
        maps.append(load_map(_require(cfg, f"maps/{cid}.generic.json")))
    layout = city_similarity(maps, seed=hash_str(cfg.seed, "layout"), block=cfg.map_block)
    path = cfg.out / "layout.json"
    save_layout(layout, path)
    fig = layout_figure(layout, cfg.out / "layout.png")
    rows = [
        (cid, f"{layout.coords[cid][0]:.6f}", f"{layout.coords[cid][1]:.6f}", layout.neighbors[cid][0])
        for cid in sorted(layout.coords)
    ]
    tsv = write_tsv(cfg.out / "layout.tsv", ("city", "x", "y", "nearest"), rows)
    _stamp(cfg, [path, fig, tsv])
    return path


def run_all(cfg: PipelineConfig, synthetic_rater: bool = False) -> None:
    stage_synth(cfg)
    stage_grid(cfg)
    stage_extract(cfg)
    stage_embed(cfg)
    stage_som(cfg)
    stage_clusters(cfg)
    if not synthetic_rater and not (cfg.out / "votes.jsonl").exists():
        raise DependencyError(cfg.out / "votes.jsonl", "survey-serve")
    stage_labels(cfg, synthetic_rater=synthetic_rater)
    stage_train(cfg)
    stage_adapt(cfg)
    stage_atlas(cfg)
    stage_similarity(cfg)
