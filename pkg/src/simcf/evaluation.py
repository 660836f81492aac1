"""Sampled leave-one-out ranking metrics: HR@K and NDCG@K.

Each case ranks the withheld positive against its sampled negatives. Ranks
are 1-based, cutoffs inclusive, and exact score ties resolve in the
positive item's favor; a warning fires when ties are frequent enough to
matter (> 1% of cases).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .data import EvalSet, RatingCorpus
from .errors import ValidationError
from .models import BatchScorer, ModelParams


@dataclass(frozen=True)
class EvalResult:
    hr: float
    ndcg: float
    per_user: list[tuple[int, int]] | None = None


def rank_of(positive_score: float, negative_scores) -> int:
    """1 + the number of negatives scoring strictly higher than the positive."""
    negs = np.asarray(negative_scores, dtype=np.float64)
    if not np.isfinite(positive_score) or not np.all(np.isfinite(negs)):
        raise ValidationError("scores must be finite")
    return 1 + int(np.count_nonzero(negs > positive_score))


def hr_at_k(rank: int, k: int) -> int:
    if rank < 1 or k < 1:
        raise ValidationError("rank and k must be >= 1")
    return 1 if rank <= k else 0


def ndcg_at_k(rank: int, k: int) -> float:
    if rank < 1 or k < 1:
        raise ValidationError("rank and k must be >= 1")
    if rank > k:
        return 0.0
    return 1.0 / math.log2(rank + 1)


def evaluate(
    model: ModelParams, eval_set: EvalSet, k: int = 10, collect_ranks: bool = False
) -> EvalResult:
    """Mean HR@k / NDCG@k over all cases.

    Cases are processed in user order so the aggregate is independent of the
    eval set's case ordering.
    """
    if len(eval_set) == 0:
        raise ValidationError("evaluation set is empty")
    scorer = BatchScorer(model)
    cases = sorted(eval_set.cases, key=lambda c: c.user)
    hr_sum = 0.0
    ndcg_sum = 0.0
    ties = 0
    ranks: list[tuple[int, int]] = []
    for case in cases:
        items = np.concatenate([[case.positive], case.negatives])
        scores = scorer.score(case.user, items)
        pos_score = float(scores[0])
        rank = rank_of(pos_score, scores[1:])
        if np.any(scores[1:] == pos_score):
            ties += 1
        hr_sum += hr_at_k(rank, k)
        ndcg_sum += ndcg_at_k(rank, k)
        if collect_ranks:
            ranks.append((case.user, rank))
    n = len(cases)
    if ties > 0.01 * n:
        warnings.warn(
            f"{ties}/{n} cases had exact score ties; ties favor the positive item, "
            "so the metrics may be optimistic (constant scores rank perfectly)",
            stacklevel=2,
        )
    return EvalResult(hr_sum / n, ndcg_sum / n, ranks if collect_ranks else None)


def popularity_scores(corpus: RatingCorpus) -> np.ndarray:
    """Score every item by its training interaction count."""
    return corpus.item_counts()
