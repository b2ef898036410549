"""HTTP survey service over an artifact tree.

State lives on disk: the pair schedule, the append-only vote log, the
manifest for image lookups, and rendered maps. No database; restarting
the process loses nothing that was acknowledged with a 201.
"""

from __future__ import annotations

import threading
from pathlib import Path
from typing import Literal, Optional
from urllib.parse import quote

from fastapi import FastAPI, HTTPException
from fastapi.responses import FileResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .atlas import MAP_MODES
from .corpus import load_manifest
from .survey import DuplicateVoteError, UnknownPairError, VoteLog, derive_labels, load_schedule

DEFAULT_PORT = 8787


class VoteIn(BaseModel):
    pair_id: int
    winner: Literal["left", "right", "skip"]
    rater: str = "rater"


class _State:
    def __init__(self, out_dir: Path):
        self.out = Path(out_dir)
        self.lock = threading.Lock()
        self.schedule = None
        self.log: Optional[VoteLog] = None
        self._records = None

    def ensure(self):
        """Load the schedule and vote log once their files exist."""
        if self.log is not None:
            return
        sched_path = self.out / "schedule.json"
        if not sched_path.exists():
            raise HTTPException(status_code=409, detail="no schedule: run `urbanpref survey-serve` or `labels`")
        self.schedule = load_schedule(sched_path)
        self.log = VoteLog(self.out / "votes.jsonl", self.schedule)

    def answered(self, rater: str) -> set:
        return {r.pair_id for r in self.log.records if r.rater_id == rater}

    def manifest(self):
        if self._records is None:
            path = self.out / "data" / "places.jsonl"
            if not path.exists():
                raise HTTPException(status_code=404, detail="no image corpus")
            m = load_manifest(path)
            ids = {}
            for rec in m.records:
                ids[rec.sat_id] = rec.sat_path
                if rec.sv_id is not None:
                    ids[rec.sv_id] = rec.sv_path
            self._records = ids
        return self._records


def _image_url(image_id: str) -> str:
    return "/api/images/" + quote(image_id, safe="/")


def create_app(out_dir: Path, static_dir: Optional[Path] = None) -> FastAPI:
    app = FastAPI(title="urbanpref survey")
    state = _State(out_dir)
    app.state.artifacts = state

    @app.get("/api/pairs/next")
    def next_pair(rater: str = "rater"):
        with state.lock:
            state.ensure()
            answered = state.answered(rater)
            for pair in state.schedule.pairs:
                if pair.pair_id not in answered:
                    return {
                        "pair_id": pair.pair_id,
                        "left": {"id": pair.left_id, "image_url": _image_url(pair.left_id)},
                        "right": {"id": pair.right_id, "image_url": _image_url(pair.right_id)},
                    }
            return {"done": True}

    @app.post("/api/votes", status_code=201)
    def post_vote(vote: VoteIn):
        with state.lock:
            state.ensure()
            if vote.pair_id in state.answered(vote.rater):
                raise HTTPException(status_code=409, detail=f"pair {vote.pair_id} already voted by {vote.rater!r}")
            try:
                rec = state.log.record_vote(vote.pair_id, vote.winner, rater_id=vote.rater)
            except UnknownPairError as e:
                raise HTTPException(status_code=404, detail=str(e)) from None
            except DuplicateVoteError as e:
                raise HTTPException(status_code=409, detail=str(e)) from None
            return {
                "ts": rec.ts,
                "pair_id": rec.pair_id,
                "left": rec.left_id,
                "right": rec.right_id,
                "winner": rec.winner,
                "rater": rec.rater_id,
            }

    @app.get("/api/progress")
    def progress(rater: str = "rater"):
        with state.lock:
            state.ensure()
            # count only this rater's votes: answered and liked must agree
            mine = [r for r in state.log.records if r.rater_id == rater]
            labels = derive_labels(state.schedule, mine)
            return {
                "answered": len(state.answered(rater)),
                "total": len(state.schedule.pairs),
                "liked_so_far": sum(1 for l in labels if l.liked),
            }

    @app.get("/api/maps/{city}/{mode}")
    def get_map(city: str, mode: str):
        if mode not in MAP_MODES:
            raise HTTPException(status_code=404, detail=f"mode must be one of {MAP_MODES}")
        path = state.out / "maps" / f"{city}.{mode}.png"
        if not path.exists():
            raise HTTPException(status_code=404, detail=f"map {city}.{mode} not yet computed")
        return FileResponse(path, media_type="image/png")

    @app.get("/api/spectrum/{mode}")
    def get_spectrum(mode: str):
        if mode not in MAP_MODES:
            raise HTTPException(status_code=404, detail=f"mode must be one of {MAP_MODES}")
        path = state.out / f"spectrum.{mode}.png"
        if not path.exists():
            raise HTTPException(status_code=404, detail=f"spectrum.{mode} not yet computed")
        return FileResponse(path, media_type="image/png")

    @app.get("/api/images/{image_id:path}")
    def get_image(image_id: str):
        rel = state.manifest().get(image_id)
        if rel is None:
            raise HTTPException(status_code=404, detail=f"unknown image {image_id!r}")
        return FileResponse(state.out / "data" / rel, media_type="image/png")

    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")

    return app
