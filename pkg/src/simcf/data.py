"""Interaction corpora: file parsing, leave-one-out splits, evaluation negatives.

File formats follow the published implicit-feedback layout:

* ``*.rating``   -- ``user<TAB>item<TAB>rating<TAB>timestamp`` per line,
  0-based integer indices. The rating column is ignored (implicit feedback).
* ``*.negative`` -- ``(user,positive)<TAB>neg1<TAB>neg2...`` per line.

Everything here is pure and deterministic; corpora are immutable once built
and safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple, Sequence, TextIO

import numpy as np

from .errors import ParseError, ValidationError


class Interaction(NamedTuple):
    user: int
    item: int
    timestamp: int | None = None


@dataclass(frozen=True)
class RatingCorpus:
    """Per-user positive interactions, ordered by ascending timestamp.

    Stored CSR-style: user ``u``'s interactions occupy positions
    ``indptr[u]:indptr[u+1]`` of the parallel ``users/items/timestamps``
    arrays. Timestamp ties keep input order.
    """

    num_users: int
    num_items: int
    users: np.ndarray  # int32, grouped by user
    items: np.ndarray  # int32
    timestamps: np.ndarray  # int64
    indptr: np.ndarray  # int64, length num_users + 1

    @property
    def num_interactions(self) -> int:
        return int(self.items.shape[0])

    def items_of(self, user: int) -> np.ndarray:
        return self.items[self.indptr[user] : self.indptr[user + 1]]

    def interactions_of(self, user: int) -> list[Interaction]:
        lo, hi = self.indptr[user], self.indptr[user + 1]
        return [
            Interaction(int(self.users[n]), int(self.items[n]), int(self.timestamps[n]))
            for n in range(lo, hi)
        ]

    def iter_interactions(self) -> Iterator[Interaction]:
        for u in range(self.num_users):
            yield from self.interactions_of(u)

    def item_counts(self) -> np.ndarray:
        """Number of users that interacted with each item."""
        return np.bincount(self.items, minlength=self.num_items).astype(np.float64)


@dataclass(frozen=True)
class EvalCase:
    user: int
    positive: int
    negatives: np.ndarray  # int64

    def __post_init__(self):
        negs = np.asarray(self.negatives, dtype=np.int64)
        object.__setattr__(self, "negatives", negs)
        if self.positive in negs:
            raise ValidationError(
                f"user {self.user}: positive item {self.positive} appears in its negatives"
            )
        if np.unique(negs).shape[0] != negs.shape[0]:
            raise ValidationError(f"user {self.user}: duplicate negative items")


@dataclass(frozen=True)
class EvalSet:
    """One ranking case per user: the withheld positive plus sampled negatives."""

    cases: list[EvalCase] = field(default_factory=list)

    def __post_init__(self):
        users = [c.user for c in self.cases]
        if len(set(users)) != len(users):
            dup = next(u for u in users if users.count(u) > 1)
            raise ValidationError(f"user {dup} appears in more than one evaluation case")

    def __len__(self) -> int:
        return len(self.cases)


def build_corpus(
    interactions: Iterable[Interaction],
    num_users: int | None = None,
    num_items: int | None = None,
) -> RatingCorpus:
    """Group interactions by user and sort each user's list by timestamp.

    Dimensions default to max index + 1. Missing timestamps sort as 0.
    Raises on out-of-range indices and duplicate (user, item) pairs.
    """
    recs = list(interactions)
    if not recs:
        nu = 0 if num_users is None else num_users
        ni = 0 if num_items is None else num_items
        empty32 = np.empty(0, dtype=np.int32)
        return RatingCorpus(
            nu, ni, empty32, empty32.copy(), np.empty(0, dtype=np.int64),
            np.zeros(nu + 1, dtype=np.int64),
        )

    users = np.array([r.user for r in recs], dtype=np.int64)
    items = np.array([r.item for r in recs], dtype=np.int64)
    ts = np.array([0 if r.timestamp is None else r.timestamp for r in recs], dtype=np.int64)

    if users.min() < 0 or items.min() < 0:
        raise ValidationError("negative user or item index")
    nu = int(users.max()) + 1 if num_users is None else num_users
    ni = int(items.max()) + 1 if num_items is None else num_items
    if users.max() >= nu:
        raise ValidationError(f"user index {int(users.max())} >= num_users {nu}")
    if items.max() >= ni:
        raise ValidationError(f"item index {int(items.max())} >= num_items {ni}")

    # stable lexsort: primary user, secondary timestamp, ties keep input order
    order = np.lexsort((ts, users))
    users, items, ts = users[order], items[order], ts[order]

    codes = users * ni + items
    if np.unique(codes).shape[0] != codes.shape[0]:
        sort_codes = np.sort(codes)
        dup = int(sort_codes[np.nonzero(sort_codes[1:] == sort_codes[:-1])[0][0]])
        raise ValidationError(f"duplicate interaction (user={dup // ni}, item={dup % ni})")

    counts = np.bincount(users, minlength=nu)
    indptr = np.zeros(nu + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    return RatingCorpus(nu, ni, users.astype(np.int32), items.astype(np.int32), ts, indptr)


def parse_ratings(
    stream: TextIO | Iterable[str],
    num_users: int | None = None,
    num_items: int | None = None,
) -> RatingCorpus:
    """Parse a ``*.rating`` stream. Empty lines are skipped."""
    recs = []
    for line_no, raw in enumerate(stream, start=1):
        line = raw.rstrip("\n").rstrip("\r")
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 4:
            raise ParseError(line_no, f"expected 4 tab-separated fields, got {len(fields)}")
        try:
            user = int(fields[0])
            item = int(fields[1])
            timestamp = int(fields[3])
        except ValueError as exc:
            raise ParseError(line_no, f"non-integer field: {exc}") from None
        if user < 0 or item < 0:
            raise ParseError(line_no, "negative user or item index")
        if num_users is not None and user >= num_users:
            raise ParseError(line_no, f"user index {user} >= num_users {num_users}")
        if num_items is not None and item >= num_items:
            raise ParseError(line_no, f"item index {item} >= num_items {num_items}")
        recs.append(Interaction(user, item, timestamp))
    return build_corpus(recs, num_users, num_items)


def write_ratings(corpus: RatingCorpus, stream: TextIO) -> None:
    """Serialize in the ``*.rating`` format (rating column written as 1)."""
    for rec in corpus.iter_interactions():
        ts = 0 if rec.timestamp is None else rec.timestamp
        stream.write(f"{rec.user}\t{rec.item}\t1\t{ts}\n")


def parse_negatives(stream: TextIO | Iterable[str]) -> EvalSet:
    """Parse a ``*.negative`` stream; per-line negative counts are kept as-is."""
    cases = []
    seen: set[int] = set()
    for line_no, raw in enumerate(stream, start=1):
        line = raw.rstrip("\n").rstrip("\r")
        if not line.strip():
            continue
        fields = line.split("\t")
        head = fields[0].strip()
        if not (head.startswith("(") and head.endswith(")")):
            raise ParseError(line_no, f"malformed (user,positive) tuple: {head!r}")
        parts = head[1:-1].split(",")
        if len(parts) != 2:
            raise ParseError(line_no, f"malformed (user,positive) tuple: {head!r}")
        try:
            user = int(parts[0])
            positive = int(parts[1])
            negatives = np.array([int(tok) for tok in fields[1:]], dtype=np.int64)
        except ValueError as exc:
            raise ParseError(line_no, f"non-integer field: {exc}") from None
        if user in seen:
            raise ValidationError(f"user {user} appears in more than one evaluation case")
        seen.add(user)
        cases.append(EvalCase(user, positive, negatives))
    return EvalSet(cases)


def write_negatives(eval_set: EvalSet, stream: TextIO) -> None:
    for case in eval_set.cases:
        negs = "\t".join(str(int(n)) for n in case.negatives)
        stream.write(f"({case.user},{case.positive})\t{negs}\n")


def load_ratings(path: str | Path, num_users=None, num_items=None) -> RatingCorpus:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_ratings(fh, num_users, num_items)


def load_negatives(path: str | Path) -> EvalSet:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_negatives(fh)


def make_tuning_split(corpus: RatingCorpus) -> tuple[RatingCorpus, list[tuple[int, int]]]:
    """Withhold each user's latest interaction for tuning.

    Users with a single interaction keep it in the training part and get no
    held-out case. Total interaction count is preserved across the split.
    """
    if corpus.num_interactions == 0:
        raise ValidationError("cannot split an empty corpus")
    keep = np.ones(corpus.num_interactions, dtype=bool)
    heldout: list[tuple[int, int]] = []
    for u in range(corpus.num_users):
        lo, hi = corpus.indptr[u], corpus.indptr[u + 1]
        if hi - lo >= 2:
            keep[hi - 1] = False
            heldout.append((u, int(corpus.items[hi - 1])))
    train = build_corpus(
        (
            Interaction(int(u), int(i), int(t))
            for u, i, t in zip(corpus.users[keep], corpus.items[keep], corpus.timestamps[keep])
        ),
        corpus.num_users,
        corpus.num_items,
    )
    return train, heldout


def sample_eval_negatives(
    corpus: RatingCorpus,
    heldout: Sequence[tuple[int, int]],
    n_neg: int,
    seed: int,
) -> EvalSet:
    """Draw ``n_neg`` distinct negatives per held-out pair.

    Candidates exclude the held-out positive and all of the user's training
    positives. The result is a pure function of (inputs, seed).
    """
    if n_neg < 1:
        raise ValidationError("n_neg must be >= 1")
    rng = np.random.default_rng(seed)
    all_items = np.arange(corpus.num_items, dtype=np.int64)
    cases = []
    for user, positive in heldout:
        forbidden = np.union1d(corpus.items_of(user).astype(np.int64), [positive])
        pool = np.setdiff1d(all_items, forbidden, assume_unique=True)
        if pool.shape[0] < n_neg:
            raise ValidationError(
                f"user {user}: only {pool.shape[0]} candidate negatives, need {n_neg}"
            )
        negs = rng.choice(pool, size=n_neg, replace=False)
        cases.append(EvalCase(int(user), int(positive), negs))
    return EvalSet(cases)
