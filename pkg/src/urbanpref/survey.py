"""Pairwise preference elicitation.

A schedule guarantees every representative image is shown at least
min_appearances times; votes go to an append-only JSONL log that is
flushed before the caller sees the record; labels derive purely from
the (schedule, log) pair, so replaying the log reproduces them.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .corpus import GroundTruth
from .noise import hash_str

WINNERS = ("left", "right", "skip")
LIKED_MIN_WINS = 2
_MAX_COVERAGE_ROUNDS_SLACK = 100


class InfeasibleScheduleError(ValueError):
    pass


class DuplicateVoteError(ValueError):
    def __init__(self, earlier: "VoteRecord"):
        self.earlier = earlier
        super().__init__(
            f"pair {earlier.pair_id} already voted "
            f"{earlier.winner!r} by {earlier.rater_id!r} at ts={earlier.ts}"
        )


class UnknownPairError(KeyError):
    pass


@dataclass(frozen=True)
class Pair:
    pair_id: int
    left_id: str
    right_id: str

    def __post_init__(self):
        if self.left_id == self.right_id:
            raise ValueError(f"pair {self.pair_id} is a self-pair ({self.left_id})")


@dataclass
class PairSchedule:
    ids: list[str]
    pairs: list[Pair]
    seed: int
    min_appearances: int

    def __post_init__(self):
        for i, p in enumerate(self.pairs):
            if p.pair_id != i:
                raise ValueError(f"pair_ids not dense: position {i} holds {p.pair_id}")

    def appearance_counts(self) -> dict[str, int]:
        counts = dict.fromkeys(self.ids, 0)
        for p in self.pairs:
            counts[p.left_id] += 1
            counts[p.right_id] += 1
        return counts


@dataclass(frozen=True)
class VoteRecord:
    pair_id: int
    left_id: str
    right_id: str
    winner: str
    rater_id: str
    ts: float


@dataclass(frozen=True)
class PreferenceLabel:
    image_id: str
    wins: int
    appearances: int
    liked: bool


def schedule_pairs(
    ids: list[str], n_pairs: int, min_appearances: int, seed: int = 0
) -> PairSchedule:
    """Count-prioritized shuffled rounds until coverage, then uniform fill.

    Duplicate unordered pairs are rejected while coverage is being built
    and other pairings remain possible; once the pool (or a member's
    partner pool) is exhausted, or coverage is met, repeats are allowed.
    """
    n = len(ids)
    if n < 2:
        raise InfeasibleScheduleError(f"need at least 2 ids, got {n}")
    if len(set(ids)) != n:
        raise InfeasibleScheduleError("duplicate ids")
    if 2 * n_pairs < n * min_appearances:
        raise InfeasibleScheduleError(
            f"coverage impossible: 2*{n_pairs} pair slots < {n} ids * "
            f"{min_appearances} appearances = {n * min_appearances}"
        )

    rng = np.random.default_rng(seed)
    counts = dict.fromkeys(ids, 0)
    used: set[tuple[str, str]] = set()
    partners: dict[str, set[str]] = {i: set() for i in ids}
    pairs: list[Pair] = []

    def accept(a: str, b: str) -> None:
        if rng.random() < 0.5:
            a, b = b, a
        pairs.append(Pair(len(pairs), a, b))
        counts[a] += 1
        counts[b] += 1
        used.add((min(a, b), max(a, b)))
        partners[a].add(b)
        partners[b].add(a)

    max_rounds = min_appearances + _MAX_COVERAGE_ROUNDS_SLACK
    rounds = 0
    while len(pairs) < n_pairs and any(c < min_appearances for c in counts.values()):
        rounds += 1
        if rounds > max_rounds:
            raise InfeasibleScheduleError(
                f"coverage not reached after {rounds} rounds: counts={counts}"
            )
        order = list(ids)
        rng.shuffle(order)
        order.sort(key=lambda i: counts[i])  # stable: shuffled within ties
        remaining = list(order)
        while remaining and len(pairs) < n_pairs:
            a = remaining.pop(0)
            if counts[a] >= min_appearances:
                continue
            # coverage beats novelty on tight budgets: needy partners first,
            # fresh pairs within each tier, repeats only when forced
            tiers = (
                (b for b in remaining if counts[b] < min_appearances and b not in partners[a]),
                (b for b in remaining if counts[b] < min_appearances),
                (b for b in remaining if b not in partners[a]),
                (b for b in order if b != a and b not in partners[a]),
                iter(remaining),
                (b for b in order if b != a),
            )
            partner = next((b for tier in tiers for b in tier), None)
            if partner in remaining:
                remaining.remove(partner)
            accept(a, partner)

    if any(c < min_appearances for c in counts.values()):
        short = {i: c for i, c in counts.items() if c < min_appearances}
        raise InfeasibleScheduleError(
            f"pair budget {n_pairs} spent before coverage: short ids {short}"
        )

    while len(pairs) < n_pairs:
        a, b = (ids[j] for j in rng.choice(n, size=2, replace=False))
        accept(a, b)

    return PairSchedule(ids=list(ids), pairs=pairs, seed=seed, min_appearances=min_appearances)


def save_schedule(schedule: PairSchedule, path: Path) -> None:
    counts = schedule.appearance_counts()
    doc = {
        "seed": schedule.seed,
        "min_appearances": schedule.min_appearances,
        "ids": schedule.ids,
        "pairs": [[p.pair_id, p.left_id, p.right_id] for p in schedule.pairs],
        "constraints": {
            "n_pairs": len(schedule.pairs),
            "min_appearance_seen": min(counts.values()),
            "mean_appearances": sum(counts.values()) / len(counts),
        },
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def load_schedule(path: Path) -> PairSchedule:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    pairs = [Pair(int(p[0]), p[1], p[2]) for p in doc["pairs"]]
    return PairSchedule(
        ids=list(doc["ids"]),
        pairs=pairs,
        seed=int(doc["seed"]),
        min_appearances=int(doc["min_appearances"]),
    )


class VoteLog:
    """Append-only vote store over a JSONL file.

    Records are written and flushed to disk before being returned, so a
    crash after record_vote() cannot lose an acknowledged vote. One
    non-skip vote per (pair, rater); skips may be superseded.
    """

    def __init__(self, path: Path, schedule: PairSchedule, clock: Optional[Callable[[], float]] = None):
        self.path = Path(path)
        self.schedule = schedule
        self._clock = clock or time.time
        self._by_pair = {p.pair_id: p for p in schedule.pairs}
        self.records: list[VoteRecord] = []
        self._decided: dict[tuple[int, str], VoteRecord] = {}
        if self.path.exists():
            for line in self.path.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    self._index(self._parse(line))
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "a", encoding="utf-8")

    @staticmethod
    def _parse(line: str) -> VoteRecord:
        d = json.loads(line)
        return VoteRecord(
            pair_id=int(d["pair_id"]),
            left_id=d["left"],
            right_id=d["right"],
            winner=d["winner"],
            rater_id=d["rater"],
            ts=float(d["ts"]),
        )

    def _index(self, rec: VoteRecord) -> None:
        self.records.append(rec)
        if rec.winner != "skip":
            self._decided[(rec.pair_id, rec.rater_id)] = rec

    def record_vote(self, pair_id: int, winner: str, rater_id: str = "rater") -> VoteRecord:
        if pair_id not in self._by_pair:
            raise UnknownPairError(pair_id)
        if winner not in WINNERS:
            raise ValueError(f"winner must be one of {WINNERS}, got {winner!r}")
        earlier = self._decided.get((pair_id, rater_id))
        if earlier is not None:
            raise DuplicateVoteError(earlier)
        pair = self._by_pair[pair_id]
        rec = VoteRecord(
            pair_id=pair_id,
            left_id=pair.left_id,
            right_id=pair.right_id,
            winner=winner,
            rater_id=rater_id,
            ts=float(self._clock()),
        )
        line = json.dumps(
            {
                "ts": rec.ts,
                "pair_id": rec.pair_id,
                "left": rec.left_id,
                "right": rec.right_id,
                "winner": rec.winner,
                "rater": rec.rater_id,
            },
            sort_keys=True,
        )
        self._fh.write(line + "\n")
        self._fh.flush()
        os.fsync(self._fh.fileno())
        self._index(rec)
        return rec

    def decided_pair_ids(self, rater_id: str = "rater") -> set[int]:
        return {pid for (pid, rid) in self._decided if rid == rater_id}

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def derive_labels(schedule: PairSchedule, votes: list[VoteRecord]) -> list[PreferenceLabel]:
    """Pure function of (schedule, votes): wins from non-skip records,
    appearances from all records; liked means at least 2 wins."""
    wins = dict.fromkeys(schedule.ids, 0)
    appearances = dict.fromkeys(schedule.ids, 0)
    for rec in votes:
        for side in (rec.left_id, rec.right_id):
            if side in appearances:
                appearances[side] += 1
        if rec.winner == "left" and rec.left_id in wins:
            wins[rec.left_id] += 1
        elif rec.winner == "right" and rec.right_id in wins:
            wins[rec.right_id] += 1
    return [
        PreferenceLabel(
            image_id=i,
            wins=wins[i],
            appearances=appearances[i],
            liked=wins[i] >= LIKED_MIN_WINS,
        )
        for i in schedule.ids
    ]


class SyntheticRater:
    """Deterministic stand-in rater: prefers greener (or, inverted, less
    green) ground truth, with a seeded per-pair flip probability."""

    def __init__(self, policy: str = "green", noise: float = 0.05, seed: int = 0):
        if policy not in ("green", "inverse_green"):
            raise ValueError(f"unknown policy {policy!r}")
        if not 0.0 <= noise <= 1.0:
            raise ValueError(f"noise {noise} outside [0, 1]")
        self.policy = policy
        self.noise = noise
        self.seed = seed

    def rate(self, pair: Pair, left: GroundTruth, right: GroundTruth) -> str:
        if left is None or right is None:
            raise ValueError(f"pair {pair.pair_id} lacks ground truth")
        rng = np.random.default_rng(hash_str(self.seed, f"vote/{pair.pair_id}"))
        lg, rg = left.green_fraction, right.green_fraction
        if lg == rg:
            winner = "left" if rng.random() < 0.5 else "right"
        else:
            prefer_left = lg > rg if self.policy == "green" else lg < rg
            winner = "left" if prefer_left else "right"
        if self.noise > 0 and rng.random() < self.noise:
            winner = "right" if winner == "left" else "left"
        return winner
