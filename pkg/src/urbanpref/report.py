"""Figures and delimited summaries written next to the data artifacts.

Every figure goes through the Agg backend with fixed metadata so repeated
runs produce byte-identical files.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

_PNG_META = {"Software": "urbanpref"}
_CYCLE = ("#2a7fc1", "#d1652e", "#3f9b57", "#8e5fa8", "#c14f6e", "#7a7a32", "#4fa6a6", "#9e6b44")


def write_tsv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["\t".join(header)]
    for row in rows:
        lines.append("\t".join(str(v) for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def _save(fig, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="png", dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return path


def embed_figure(coords, ids: Sequence[str], path: Path, title: str = "image embedding") -> Path:
    """Scatter of a 2-D embedding, one color per city prefix of the id."""
    cities = sorted({i.split("/", 1)[0] for i in ids})
    color_of = {c: _CYCLE[k % len(_CYCLE)] for k, c in enumerate(cities)}
    fig, ax = plt.subplots(figsize=(6, 6))
    for city in cities:
        keep = [k for k, i in enumerate(ids) if i.split("/", 1)[0] == city]
        ax.scatter(coords[keep, 0], coords[keep, 1], s=8, color=color_of[city], label=city, linewidths=0)
    ax.legend(loc="best", fontsize=8)
    ax.set_title(title)
    ax.set_xticks([])
    ax.set_yticks([])
    return _save(fig, path)


def training_figure(history: Sequence[dict], path: Path) -> Path:
    """Loss and validation accuracy per epoch on twinned axes."""
    epochs = [h["epoch"] for h in history]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(epochs, [h["loss"] for h in history], color=_CYCLE[0], label="loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean loss")
    ax2 = ax.twinx()
    ax2.plot(epochs, [h["val_accuracy"] for h in history], color=_CYCLE[1], label="val accuracy")
    ax2.set_ylabel("val accuracy")
    ax2.set_ylim(0.0, 1.05)
    lines = ax.get_lines() + ax2.get_lines()
    ax.legend(lines, [l.get_label() for l in lines], loc="center right", fontsize=8)
    fig.tight_layout()
    return _save(fig, path)


def layout_figure(layout, path: Path) -> Path:
    """Labelled scatter of the city layout."""
    fig, ax = plt.subplots(figsize=(6, 6))
    for k, (cid, (x, y)) in enumerate(sorted(layout.coords.items())):
        ax.scatter([x], [y], s=60, color=_CYCLE[k % len(_CYCLE)])
        ax.annotate(cid, (x, y), textcoords="offset points", xytext=(6, 4), fontsize=9)
    ax.set_title("city similarity layout")
    ax.set_xticks([])
    ax.set_yticks([])
    return _save(fig, path)
