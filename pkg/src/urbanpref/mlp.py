"""Preference classifier: a fully connected softmax head over image
descriptors, plus the augmentation/split machinery around it and the
transfer of eye-level labels onto overhead imagery.

The head is fixed at widths [D, 1000, 10, 2] with ReLU between layers,
trained by single-sample SGD at lr(e) = 0.1 * 2^(-floor(e / 10)).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence, Union

import numpy as np
from scipy import ndimage

from .features import FeatureMatrix, describe_pixels
from .noise import hash_str
from .som import BmuAssignment, SomGrid

HIDDEN_WIDTHS = (1000, 10)
N_CLASSES = 2
MLP_MAGIC = b"MLP0"
SPLIT_NAMES = ("train", "val", "test")
_REL_FLOOR = 1e-8


class TrainingDivergedError(RuntimeError):
    pass


class UnlabeledRepresentativeError(ValueError):
    def __init__(self, ids: list[str]):
        self.ids = list(ids)
        shown = ", ".join(self.ids[:20])
        more = "" if len(self.ids) <= 20 else f" (+{len(self.ids) - 20} more)"
        super().__init__(f"{len(self.ids)} representatives without labels: {shown}{more}")


class GeokeyJoinError(ValueError):
    def __init__(self, keys: list[str]):
        self.keys = list(keys)
        shown = ", ".join(self.keys[:20])
        super().__init__(f"{len(self.keys)} geokeys failed to join: {shown}")


@dataclass(frozen=True)
class TrainSchedule:
    lr0: float = 0.1
    halve_every: int = 10
    max_epochs: int = 100
    samples_per_epoch: int = 100  # taken verbatim from the source procedure
    patience: int = 10

    def lr(self, epoch: int) -> float:
        return self.lr0 * 2.0 ** (-(epoch // self.halve_every))


@dataclass(frozen=True)
class Prediction:
    image_id: str
    p_like: float
    source: str = "predicted"

    def __post_init__(self):
        if not 0.0 <= self.p_like <= 1.0:
            raise ValueError(f"p_like {self.p_like} outside [0, 1]")

    @property
    def label(self) -> bool:
        return self.p_like >= 0.5


@dataclass
class MlpModel:
    widths: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    seed: int = 0
    history: list[dict] = field(default_factory=list)

    def __post_init__(self):
        if len(self.widths) < 2:
            raise ValueError("need at least input and output widths")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            want = (self.widths[i], self.widths[i + 1])
            if w.shape != want or b.shape != (self.widths[i + 1],):
                raise ValueError(f"layer {i} shapes {w.shape}/{b.shape} != {want}")

    def copy_weights(self) -> tuple[list[np.ndarray], list[np.ndarray]]:
        return [w.copy() for w in self.weights], [b.copy() for b in self.biases]


def init_model(dim: int, seed: int = 0) -> MlpModel:
    """Seeded uniform init in +-sqrt(6 / (fan_in + fan_out)), zero biases."""
    widths = [int(dim), *HIDDEN_WIDTHS, N_CLASSES]
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpModel(widths=widths, weights=weights, biases=biases, seed=seed)


def _forward(model: MlpModel, X: np.ndarray):
    acts = [X]
    pre = []
    h = X
    last = len(model.weights) - 1
    for i, (W, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ W + b
        if i < last:
            pre.append(z)
        h = z if i == last else np.maximum(z, 0.0)
        acts.append(h)
    z = acts[-1]
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    probs = e / e.sum(axis=1, keepdims=True)
    return probs, acts, pre


def predict_proba(model: MlpModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(getattr(X, "X", X), dtype=np.float64)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.shape[1] != model.widths[0]:
        raise ValueError(f"feature dim {X.shape[1]} != model input {model.widths[0]}")
    probs, _, _ = _forward(model, X)
    return probs[0] if single else probs


def predict(
    model: MlpModel,
    features: np.ndarray,
    ids: Union[str, Sequence[str], None] = None,
) -> Union[Prediction, list[Prediction]]:
    X = features
    if isinstance(features, FeatureMatrix):
        X = features.X
        if ids is None:
            ids = features.ids
    probs = predict_proba(model, X)
    if probs.ndim == 1:
        return Prediction(image_id=ids or "", p_like=float(probs[1]))
    if ids is None:
        ids = [str(i) for i in range(len(probs))]
    return [Prediction(image_id=i, p_like=float(p[1])) for i, p in zip(ids, probs)]


def _loss_and_grads(model: MlpModel, X: np.ndarray, y: np.ndarray):
    """Summed cross-entropy over the batch and its exact gradients.

    Sum (not mean) so each sample contributes additively; single-sample
    SGD steps divide by nothing.
    """
    probs, acts, _ = _forward(model, X)
    n = X.shape[0]
    p_true = np.clip(probs[np.arange(n), y], 1e-300, None)
    loss = float(-np.log(p_true).sum())
    delta = probs.copy()
    delta[np.arange(n), y] -= 1.0
    grads_w, grads_b = [None] * len(model.weights), [None] * len(model.biases)
    for i in range(len(model.weights) - 1, -1, -1):
        grads_w[i] = acts[i].T @ delta
        grads_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ model.weights[i].T) * (acts[i] > 0)
    return loss, grads_w, grads_b


def train(
    model: MlpModel,
    trainset: tuple[np.ndarray, np.ndarray],
    valset: tuple[np.ndarray, np.ndarray],
    schedule: TrainSchedule = TrainSchedule(),
    seed: int = 0,
) -> MlpModel:
    """Single-sample SGD under the halving schedule, early-stopped on
    validation accuracy; returns the model restored to its best-val weights."""
    X_tr = np.asarray(trainset[0], dtype=np.float64)
    y_tr = np.asarray(trainset[1], dtype=np.int64)
    X_va = np.asarray(valset[0], dtype=np.float64)
    y_va = np.asarray(valset[1], dtype=np.int64)
    if len(X_tr) == 0 or len(X_va) == 0:
        raise ValueError("empty train or validation set")
    if X_tr.shape[1] != model.widths[0]:
        raise ValueError(f"feature dim {X_tr.shape[1]} != model input {model.widths[0]}")

    rng = np.random.default_rng(seed)
    best_acc = -1.0
    best = model.copy_weights()
    stale = 0
    model.history = []
    for epoch in range(schedule.max_epochs):
        lr = schedule.lr(epoch)
        picks = rng.integers(0, len(X_tr), size=schedule.samples_per_epoch)
        total = 0.0
        for j in picks:
            loss, gw, gb = _loss_and_grads(model, X_tr[j : j + 1], y_tr[j : j + 1])
            if not np.isfinite(loss):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}, lr {lr}")
            total += loss
            for i in range(len(model.weights)):
                model.weights[i] -= lr * gw[i]
                model.biases[i] -= lr * gb[i]
        probs, _, _ = _forward(model, X_va)
        acc = float(np.mean(probs.argmax(axis=1) == y_va))
        model.history.append(
            {
                "epoch": epoch,
                "lr": lr,
                "loss": total / schedule.samples_per_epoch,
                "val_accuracy": acc,
            }
        )
        if acc > best_acc:
            best_acc = acc
            best = model.copy_weights()
            stale = 0
        else:
            stale += 1
            if stale > schedule.patience:
                break
    model.weights, model.biases = best
    return model


def gradient_check(
    model: MlpModel,
    batch: tuple[np.ndarray, np.ndarray],
    eps: float = 1e-4,
    samples_per_tensor: int = 40,
    seed: int = 0,
) -> float:
    """Max relative error between analytic and central-difference gradients
    over a seeded sample of coordinates in every weight and bias tensor.

    Coordinates whose perturbation flips a hidden pre-activation's sign are
    skipped: the central difference straddles the ReLU kink there, so the
    numeric value says nothing about the analytic gradient.
    """
    X = np.asarray(batch[0], dtype=np.float64)
    y = np.asarray(batch[1], dtype=np.int64)
    if X.ndim != 2 or len(X) == 0:
        raise ValueError("gradient check needs a non-empty 2-D batch")
    _, gw, gb = _loss_and_grads(model, X, y)
    n = len(X)
    rng = np.random.default_rng(seed)
    worst = 0.0

    def loss_and_signs():
        probs, _, pre = _forward(model, X)
        p_true = np.clip(probs[np.arange(n), y], 1e-300, None)
        signs = [z > 0 for z in pre]
        return float(-np.log(p_true).sum()), signs

    for tensor, grad in [*zip(model.weights, gw), *zip(model.biases, gb)]:
        flat, gflat = tensor.ravel(), grad.ravel()
        k = min(samples_per_tensor, flat.size)
        for idx in rng.choice(flat.size, size=k, replace=False):
            keep = flat[idx]
            flat[idx] = keep + eps
            up, s_up = loss_and_signs()
            flat[idx] = keep - eps
            dn, s_dn = loss_and_signs()
            flat[idx] = keep
            if any(np.any(a != b) for a, b in zip(s_up, s_dn)):
                continue
            numeric = (up - dn) / (2.0 * eps)
            rel = abs(gflat[idx] - numeric) / max(abs(gflat[idx]), abs(numeric), _REL_FLOOR)
            worst = max(worst, rel)
    return worst


# ---------------------------------------------------------------------------
# augmentation and the labelled training set

@dataclass(frozen=True)
class AugmentedSample:
    features: np.ndarray
    label: int
    source_image_id: str
    augmentation: str
    split: str


@dataclass
class AugmentedSet:
    samples: list[AugmentedSample]
    target: int
    seed: int

    def __post_init__(self):
        if len(self.samples) != self.target:
            raise ValueError(f"{len(self.samples)} samples != target {self.target}")
        by_source: dict[str, str] = {}
        for s in self.samples:
            prior = by_source.setdefault(s.source_image_id, s.split)
            if prior != s.split:
                raise ValueError(f"source {s.source_image_id} leaks across splits")

    def split_counts(self) -> dict[str, int]:
        out = dict.fromkeys(SPLIT_NAMES, 0)
        for s in self.samples:
            out[s.split] += 1
        return out

    def arrays(self, split: str) -> tuple[np.ndarray, np.ndarray, list[str]]:
        rows = [s for s in self.samples if s.split == split]
        X = np.stack([s.features for s in rows]) if rows else np.zeros((0, 0))
        y = np.array([s.label for s in rows], dtype=np.int64)
        return X, y, [s.source_image_id for s in rows]


def _affine(image: np.ndarray, fwd: np.ndarray) -> np.ndarray:
    c = (np.asarray(image.shape[:2], dtype=np.float64) - 1.0) / 2.0
    inv = np.linalg.inv(fwd)
    offset = c - inv @ c
    out = np.empty_like(image)
    for ch in range(image.shape[2]):
        out[..., ch] = ndimage.affine_transform(
            image[..., ch].astype(np.float64),
            inv,
            offset=offset,
            order=1,
            mode="reflect",
        ).round()
    return out


def augment(image: np.ndarray, n_variants: int, seed: int = 0) -> list[tuple[np.ndarray, str]]:
    """Original plus n seeded variants, each a composed flip / shear /
    scale / rotation with bilinear resampling over reflect padding.
    Returns (pixels, descriptor) pairs; the original is tagged "orig"."""
    if n_variants < 0:
        raise ValueError(f"n_variants {n_variants} < 0")
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected HxWx3 pixels, got {image.shape}")
    rng = np.random.default_rng(seed)
    out = [(image.copy(), "orig")]
    for _ in range(n_variants):
        hflip = rng.random() < 0.5
        vflip = rng.random() < 0.5
        shear = rng.uniform(-10.0, 10.0)
        scale = rng.uniform(0.9, 1.1)
        rot = rng.uniform(-15.0, 15.0)
        th, sh = np.deg2rad(rot), np.deg2rad(shear)
        m = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
        m = m @ np.array([[1.0, np.tan(sh)], [0.0, 1.0]])
        m = m * scale
        if hflip:
            m = m @ np.array([[1.0, 0.0], [0.0, -1.0]])
        if vflip:
            m = m @ np.array([[-1.0, 0.0], [0.0, 1.0]])
        desc = (
            f"{'h' if hflip else ''}{'v' if vflip else ''}flip"
            f"+shear({shear:.2f})+scale({scale:.3f})+rot({rot:.2f})"
        )
        out.append((_affine(image, m), desc))
    return out


def _split_of_source(order: list[str], per_source: dict[str, int], target: int, split) -> dict[str, str]:
    frac = np.asarray(split, dtype=np.float64)
    frac = frac / frac.sum()
    bounds = np.cumsum(frac) * target
    tags, cum, tier = {}, 0, 0
    for sid in order:
        while tier < 2 and cum >= round(bounds[tier]):
            tier += 1
        tags[sid] = SPLIT_NAMES[tier]
        cum += per_source[sid]
    return tags


def build_training_set(
    labels,
    images: Union[Mapping[str, np.ndarray], Callable[[str], np.ndarray]],
    target: int = 3600,
    split: tuple = (60, 5, 35),
    seed: int = 0,
) -> AugmentedSet:
    """Augment each labelled representative to hit `target` samples exactly,
    extract descriptors, and assign whole sources to train/val/test."""
    by_id = {l.image_id: l for l in labels}
    if isinstance(images, Mapping):
        universe = list(images.keys())
        loader = images.__getitem__
        missing = [i for i in universe if i not in by_id]
        if missing:
            raise UnlabeledRepresentativeError(sorted(missing))
    else:
        universe = [l.image_id for l in labels]
        loader = images
    sources = [i for i in universe if i in by_id]
    n = len(sources)
    if n == 0:
        raise ValueError("no labelled sources")
    if target < n:
        raise ValueError(f"target {target} < {n} sources")

    base = target // n  # 1 original + (base - 1) variants each
    extra = target - base * n
    rng = np.random.default_rng(seed)
    bonus = set(rng.choice(n, size=extra, replace=False).tolist())

    per_source: dict[str, int] = {}
    staged = []
    for j, sid in enumerate(sources):
        n_variants = base - 1 + (1 if j in bonus else 0)
        pixels = np.asarray(loader(sid))
        variants = augment(pixels, n_variants, seed=hash_str(seed, f"aug/{sid}") % 2**63)
        per_source[sid] = len(variants)
        label = int(by_id[sid].liked)
        for img, desc in variants:
            staged.append((sid, img, desc, label))

    order = list(sources)
    rng.shuffle(order)
    tags = _split_of_source(order, per_source, target, split)

    samples = [
        AugmentedSample(
            features=describe_pixels(img),
            label=label,
            source_image_id=sid,
            augmentation=desc,
            split=tags[sid],
        )
        for sid, img, desc, label in staged
    ]
    return AugmentedSet(samples=samples, target=target, seed=seed)


# ---------------------------------------------------------------------------
# from per-image predictions to lattice labels and the overhead domain

def label_bmus(
    predictions: Sequence[Prediction],
    assignment: BmuAssignment,
    grid: Optional[SomGrid] = None,
    model: Optional[MlpModel] = None,
) -> np.ndarray:
    """Per-cell preference: mean p_like of the images mapped there. Empty
    cells take their weight vector pushed through the classifier when the
    lattice lives in feature space, else the nearest non-empty cell."""
    p_of = {p.image_id: p.p_like for p in predictions}
    missing = [i for i in assignment.cells if i not in p_of]
    if missing:
        raise ValueError(f"{len(missing)} assigned images lack predictions: {missing[:10]}")
    n = assignment.rows * assignment.cols
    total = np.zeros(n)
    count = np.zeros(n)
    for image_id, cell in assignment.cells.items():
        total[cell] += p_of[image_id]
        count[cell] += 1
    values = np.full(n, 0.5)
    filled = count > 0
    values[filled] = total[filled] / count[filled]
    empty = ~filled
    if not empty.any():
        return values
    if grid is not None and model is not None and grid.dim == model.widths[0]:
        values[empty] = predict_proba(model, grid.weights[empty])[:, 1]
    elif grid is not None and filled.any():
        rr, cc = np.divmod(np.arange(n), grid.cols)
        pos = np.stack([rr, cc], axis=1).astype(np.float64)
        d2 = np.sum((pos[empty][:, None, :] - pos[filled][None, :, :]) ** 2, axis=2)
        values[empty] = values[filled][np.argmin(d2, axis=1)]
    return values


def adapt_domain(
    bmu_labels: np.ndarray,
    assignment: BmuAssignment,
    manifest,
    sat_features: FeatureMatrix,
    schedule: TrainSchedule = TrainSchedule(),
    seed: int = 0,
) -> tuple[MlpModel, list[Prediction]]:
    """Transfer lattice labels to same-place overhead images, train a fresh
    head of identical shape on them, and predict every uncovered image."""
    feat_of = {i: r for r, i in enumerate(sat_features.ids)}
    by_sv = {rec.sv_id: rec for rec in manifest.records if rec.sv_id is not None}

    transferred: dict[str, float] = {}
    bad = []
    for sv_id, cell in assignment.cells.items():
        rec = by_sv.get(sv_id)
        if rec is None or rec.sat_id not in feat_of:
            bad.append(sv_id.rsplit("#", 1)[0])
            continue
        transferred[rec.sat_id] = float(bmu_labels[cell])
    if bad:
        raise GeokeyJoinError(sorted(bad))

    sat_ids = list(transferred.keys())
    X = np.stack([sat_features.X[feat_of[i]] for i in sat_ids])
    y = np.array([1 if transferred[i] >= 0.5 else 0 for i in sat_ids], dtype=np.int64)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(sat_ids))
    n_val = max(1, len(sat_ids) // 10)
    val_idx, tr_idx = perm[:n_val], perm[n_val:]
    model = init_model(sat_features.dim, seed=seed)
    model = train(model, (X[tr_idx], y[tr_idx]), (X[val_idx], y[val_idx]), schedule, seed=seed)

    predictions = [
        Prediction(image_id=i, p_like=transferred[i], source="transferred") for i in sat_ids
    ]
    rest = [i for i in sat_features.ids if i not in transferred]
    if rest:
        rows = np.stack([sat_features.X[feat_of[i]] for i in rest])
        probs = predict_proba(model, rows)
        predictions.extend(
            Prediction(image_id=i, p_like=float(p[1]), source="predicted")
            for i, p in zip(rest, probs)
        )
    return model, predictions


def save_predictions(path: Path, predictions: Sequence[Prediction]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for p in predictions:
            f.write(
                json.dumps(
                    {"image_id": p.image_id, "p_like": p.p_like, "source": p.source},
                    sort_keys=True,
                )
                + "\n"
            )


def load_predictions(path: Path) -> list[Prediction]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            d = json.loads(line)
            out.append(Prediction(d["image_id"], float(d["p_like"]), d["source"]))
    return out


def save_model(path: Path, model: MlpModel) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MLP_MAGIC)
        f.write(struct.pack("<I", len(model.widths)))
        f.write(struct.pack(f"<{len(model.widths)}I", *model.widths))
        for W, b in zip(model.weights, model.biases):
            f.write(W.astype("<f4").tobytes(order="C"))
            f.write(b.astype("<f4").tobytes())
        f.write(struct.pack("<Q", model.seed))
        for row in model.history:
            f.write((json.dumps(row, sort_keys=True) + "\n").encode("utf-8"))


def load_model(path: Path) -> MlpModel:
    raw = Path(path).read_bytes()
    if raw[:4] != MLP_MAGIC:
        raise ValueError(f"bad magic {raw[:4]!r}")
    off = 4
    (n_widths,) = struct.unpack_from("<I", raw, off)
    off += 4
    widths = list(struct.unpack_from(f"<{n_widths}I", raw, off))
    off += 4 * n_widths
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        w = np.frombuffer(raw, dtype="<f4", count=fan_in * fan_out, offset=off)
        off += 4 * fan_in * fan_out
        weights.append(w.reshape(fan_in, fan_out).astype(np.float64))
        b = np.frombuffer(raw, dtype="<f4", count=fan_out, offset=off)
        off += 4 * fan_out
        biases.append(b.astype(np.float64))
    (seed,) = struct.unpack_from("<Q", raw, off)
    off += 8
    history = [json.loads(l) for l in raw[off:].decode("utf-8").splitlines() if l.strip()]
    return MlpModel(widths=widths, weights=weights, biases=biases, seed=seed, history=history)
