"""Exact brute-force top-k retrieval and a per-query latency benchmark.

Scoring the whole catalog costs O(n d) for the dot head and O(n d^2) for the
MLP head; the benchmark makes that gap measurable.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ValidationError
from .models import (
    DotParams,
    MlpSimParams,
    ModelParams,
    default_hidden_dims,
    num_items_of,
    score_items,
)
from .training import init_params


@dataclass(frozen=True)
class TopK:
    """Items sorted by descending score, ties by ascending item index."""

    items: np.ndarray
    scores: np.ndarray


def topk_select(scores, k: int) -> TopK:
    """The k largest scores; equals full-sort-then-truncate."""
    if k < 1:
        raise ValidationError("k must be >= 1")
    scores = np.asarray(scores, dtype=np.float64)
    order = np.argsort(-scores, kind="stable")[:k]
    return TopK(order.astype(np.int64), scores[order])


def retrieve(
    model: ModelParams, user: int, k: int, exclude_items: Iterable[int] | None = None
) -> TopK:
    """Score every catalog item for the user and keep the top k.

    ``exclude_items`` (e.g. the user's training positives) are dropped from
    the candidate set before selection.
    """
    n = num_items_of(model)
    candidates = np.arange(n, dtype=np.int64)
    if exclude_items is not None:
        candidates = np.setdiff1d(candidates, np.asarray(list(exclude_items), dtype=np.int64))
    scores = score_items(model, user, candidates)
    top = topk_select(scores, k)
    return TopK(candidates[top.items], top.scores)


def bench_retrieval(
    d_grid: Sequence[int], n: int, k: int, trials: int, seed: int = 0
) -> list[dict]:
    """Median wall time per query for the dot and MLP heads over random models.

    One warm-up query per (head, d) precedes timing; the loop is
    single-threaded for stable numbers.
    """
    if trials < 3:
        raise ValidationError("trials must be >= 3")
    rows = []
    for d in d_grid:
        dot = init_params("mf", 1, n, d, 0.1, seed, use_bias=False)
        mlp = init_params("mlp", 1, n, d, 0.1, seed + 1)
        for head, params in (("dot", dot), ("mlp", mlp)):
            retrieve(params, 0, k)  # warm-up (JIT + caches)
            times = []
            for _ in range(trials):
                t0 = time.perf_counter()
                retrieve(params, 0, k)
                times.append(time.perf_counter() - t0)
            rows.append(
                {
                    "head": head,
                    "d": d,
                    "n": n,
                    "k": k,
                    "median_us_per_query": float(np.median(times) * 1e6),
                }
            )
    return rows
