"""Pairwise human-evaluation protocol: task construction, vote aggregation
by majority, significance testing, and the annotation HTTP service.

Raters compare the top-1 retrievals of two models (the "subject" model under
evaluation and a "baseline") for the same caption, choosing one of four
options; three votes per task are aggregated by majority into
better / worse / both_good / both_bad for the subject side.
"""

# no `from __future__ import annotations` here: FastAPI must resolve the
# function-local pydantic model annotation in create_app at runtime

import json
import math
import os
import threading
import time
from dataclasses import asdict, dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy import stats

CHOICES = ("prefer_A", "prefer_B", "same", "neither")
CATEGORIES = ("better", "worse", "both_good", "both_bad")


@dataclass(frozen=True)
class PairwiseTask:
    """One side-by-side comparison; the subject side is hidden from raters."""

    task_id: str
    caption: str
    image_left: str
    image_right: str
    subject_side: str  # "left" | "right"; recoverable only server-side
    relation_tag: str | None = None

    def __post_init__(self):
        if self.subject_side not in ("left", "right"):
            raise ValueError("subject_side must be 'left' or 'right'")

    def public_view(self) -> dict:
        """Rater-facing payload; never exposes which side is which model."""
        return {
            "task_id": self.task_id,
            "caption": self.caption,
            "image_left": self.image_left,
            "image_right": self.image_right,
        }


@dataclass(frozen=True)
class VoteRecord:
    task_id: str
    rater_id: str
    choice: str
    timestamp: float

    def __post_init__(self):
        if self.choice not in CHOICES:
            raise ValueError(f"choice must be one of {CHOICES}, got {self.choice!r}")


@dataclass
class AggregateResult:
    counts: dict[str, int]
    percentages: dict[str, float]  # over consensus items
    n_items: int
    n_no_consensus: int
    n_incomplete: int

    def to_dict(self) -> dict:
        return asdict(self)


def make_pairwise_tasks(
    subject_top1: Mapping[str, str],
    baseline_top1: Mapping[str, str],
    captions: Mapping[str, str],
    relation_tags: Mapping[str, Sequence[str]] | None = None,
    relation_filter: str | None = None,
    seed: int = 0,
) -> list[PairwiseTask]:
    """One task per query, with seeded-random left/right assignment.

    Both models must have been evaluated on the same query set. Queries whose
    ground-truth relations miss ``relation_filter`` are skipped. Identical
    images on both sides still produce a task.
    """
    if set(subject_top1) != set(baseline_top1) or set(subject_top1) != set(captions):
        raise ValueError("query sets misaligned between the two models")
    if relation_filter is not None and relation_tags is None:
        raise ValueError("relation_filter needs relation_tags")
    rng = np.random.default_rng(seed)
    tasks = []
    for qid in sorted(subject_top1):
        if relation_filter is not None and relation_filter not in relation_tags.get(qid, ()):
            continue
        subject_left = bool(rng.random() < 0.5)
        left, right = (
            (subject_top1[qid], baseline_top1[qid])
            if subject_left
            else (baseline_top1[qid], subject_top1[qid])
        )
        tag = None
        if relation_tags is not None:
            tags = list(relation_tags.get(qid, ()))
            tag = relation_filter if relation_filter is not None else (tags[0] if tags else None)
        tasks.append(
            PairwiseTask(
                task_id=qid,
                caption=captions[qid],
                image_left=left,
                image_right=right,
                subject_side="left" if subject_left else "right",
                relation_tag=tag,
            )
        )
    return tasks


def _majority(choices: list[str]) -> str | None:
    counts = {c: choices.count(c) for c in set(choices)}
    top = max(counts.values())
    if top * 2 <= len(choices):
        return None
    return max(counts, key=lambda c: counts[c])


def _category(choice: str, task: PairwiseTask) -> str:
    if choice == "same":
        return "both_good"
    if choice == "neither":
        return "both_bad"
    picked_left = choice == "prefer_A"
    picked_subject = picked_left == (task.subject_side == "left")
    return "better" if picked_subject else "worse"


def aggregate_votes(
    votes: Sequence[VoteRecord],
    tasks: Sequence[PairwiseTask],
    raters_per_item: int = 3,
) -> AggregateResult:
    """Majority-vote aggregation into subject-side categories.

    Tasks with fewer than ``raters_per_item`` votes are excluded as
    incomplete; surplus votes beyond ``raters_per_item`` are dropped in
    (timestamp, rater) order. Ties with no majority count as no-consensus
    and are excluded from the percentages.
    """
    by_id = {t.task_id: t for t in tasks}
    seen: set[tuple[str, str]] = set()
    grouped: dict[str, list[VoteRecord]] = {t.task_id: [] for t in tasks}
    for v in votes:
        if v.task_id not in by_id:
            raise ValueError(f"vote references unknown task {v.task_id!r}")
        key = (v.task_id, v.rater_id)
        if key in seen:
            raise ValueError(f"duplicate vote for task {v.task_id!r} by rater {v.rater_id!r}")
        seen.add(key)
        grouped[v.task_id].append(v)

    counts = {c: 0 for c in CATEGORIES}
    n_no_consensus = 0
    n_incomplete = 0
    for task in tasks:
        task_votes = sorted(grouped[task.task_id], key=lambda v: (v.timestamp, v.rater_id))
        if len(task_votes) < raters_per_item:
            n_incomplete += 1
            continue
        majority = _majority([v.choice for v in task_votes[:raters_per_item]])
        if majority is None:
            n_no_consensus += 1
            continue
        counts[_category(majority, task)] += 1

    n_consensus = sum(counts.values())
    percentages = {
        c: (100.0 * counts[c] / n_consensus if n_consensus else 0.0) for c in CATEGORIES
    }
    return AggregateResult(
        counts=counts,
        percentages=percentages,
        n_items=len(tasks),
        n_no_consensus=n_no_consensus,
        n_incomplete=n_incomplete,
    )


def preference_indicators(counts: Mapping[str, int]) -> list[int]:
    """Signed per-item indicators: +1 better, -1 worse, 0 otherwise."""
    return (
        [1] * counts.get("better", 0)
        + [-1] * counts.get("worse", 0)
        + [0] * (counts.get("both_good", 0) + counts.get("both_bad", 0))
    )


def preference_significance(indicators: Sequence[int]) -> tuple[float, float]:
    """One-sample two-sided t-test of the signed indicators against mean 0.

    Zero-variance inputs (every item the same non-zero sign) return a signed
    infinity sentinel with p = 0.0.
    """
    arr = np.asarray(indicators, dtype=np.float64)
    if np.count_nonzero(arr) < 2:
        raise ValueError("need at least 2 items with a better-or-worse outcome")
    n = arr.size
    mean = float(arr.mean())
    sd = float(arr.std(ddof=1))
    if sd == 0.0:
        return (math.inf if mean > 0 else -math.inf), 0.0
    t = mean / (sd / math.sqrt(n))
    p = 2.0 * float(stats.t.sf(abs(t), df=n - 1))
    return t, p


# -- persistence ---------------------------------------------------------------


def save_tasks(tasks: Sequence[PairwiseTask], path: str) -> None:
    with open(path, "w") as fh:
        for t in tasks:
            fh.write(json.dumps(asdict(t)) + "\n")


def load_tasks(path: str) -> list[PairwiseTask]:
    tasks = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                tasks.append(PairwiseTask(**json.loads(line)))
    return tasks


def load_votes(path: str) -> list[VoteRecord]:
    votes = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                votes.append(VoteRecord(**json.loads(line)))
    return votes


class VoteStore:
    """Append-only JSONL vote log with atomic per-(task, rater) uniqueness."""

    def __init__(self, path: str):
        self.path = path
        self._lock = threading.Lock()
        self._seen: set[tuple[str, str]] = set()
        if os.path.exists(path):
            for vote in load_votes(path):
                self._seen.add((vote.task_id, vote.rater_id))

    def has_vote(self, task_id: str, rater_id: str) -> bool:
        return (task_id, rater_id) in self._seen

    def votes_for_task(self, task_id: str) -> int:
        return sum(1 for t, _ in self._seen if t == task_id)

    def add(self, task_id: str, rater_id: str, choice: str) -> VoteRecord:
        vote = VoteRecord(task_id, rater_id, choice, timestamp=time.time())
        with self._lock:
            key = (task_id, rater_id)
            if key in self._seen:
                raise KeyError(f"rater {rater_id!r} already voted on task {task_id!r}")
            with open(self.path, "a") as fh:
                fh.write(json.dumps(asdict(vote)) + "\n")
            self._seen.add(key)
        return vote

    def all_votes(self) -> list[VoteRecord]:
        if not os.path.exists(self.path):
            return []
        return load_votes(self.path)


def create_app(tasks: Sequence[PairwiseTask], vote_store: VoteStore, raters_per_item: int = 3):
    """FastAPI service for the annotation protocol.

    GET /tasks/next?rater=ID   -> next unrated, unfilled task (no provenance)
    POST /votes                -> record one vote; 409 on duplicate
    GET /export                -> JSON Lines of all votes
    """
    from fastapi import FastAPI, HTTPException, Query
    from fastapi.responses import PlainTextResponse
    from pydantic import BaseModel

    by_id = {t.task_id: t for t in tasks}

    class VoteIn(BaseModel):
        task_id: str
        rater_id: str
        choice: str

    app = FastAPI(title="pairwise-annotation")

    @app.get("/tasks/next")
    def next_task(rater: str = Query(..., min_length=1)):
        done = 0
        pending = None
        for task in tasks:
            if vote_store.has_vote(task.task_id, rater):
                done += 1
                continue
            if pending is None and vote_store.votes_for_task(task.task_id) < raters_per_item:
                pending = task
        progress = {"completed": done, "total": len(tasks)}
        if pending is None:
            return {"done": True, "task": None, "progress": progress}
        return {"done": False, "task": pending.public_view(), "progress": progress}

    @app.post("/votes", status_code=201)
    def post_vote(vote: VoteIn):
        if vote.task_id not in by_id:
            raise HTTPException(status_code=404, detail=f"unknown task {vote.task_id!r}")
        if vote.choice not in CHOICES:
            raise HTTPException(
                status_code=422, detail=f"choice must be one of {list(CHOICES)}"
            )
        try:
            vote_store.add(vote.task_id, vote.rater_id, vote.choice)
        except KeyError:
            raise HTTPException(status_code=409, detail="already voted") from None
        return {"status": "recorded"}

    @app.get("/export", response_class=PlainTextResponse)
    def export():
        return "".join(json.dumps(asdict(v)) + "\n" for v in vote_store.all_votes())

    return app
