"""Similarity heads over embedding tables: dot, biased dot, GMF, MLP, NeuMF.

All scores are pre-sigmoid logits; the sigmoid lives exclusively in the
training loss. Scoring is deterministic and side-effect free, and batch
scoring is bitwise identical to repeated single-pair calls (both run the
same compiled scalar kernels).
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from . import _kernels as _k
from .errors import ValidationError

CHECKPOINT_VERSION = 1


def _as_f64(a) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(a, dtype=np.float64))


@dataclass
class DotParams:
    """Plain or biased dot product over user/item embedding rows.

    With ``use_bias``, coordinate 0 of each embedding is the bias slot and
    the remaining coordinates form the latent part.
    """

    P: np.ndarray
    Q: np.ndarray
    use_bias: bool = False
    b: float = 0.0

    def __post_init__(self):
        self.P = _as_f64(self.P)
        self.Q = _as_f64(self.Q)
        if self.P.ndim != 2 or self.Q.ndim != 2 or self.P.shape[1] != self.Q.shape[1]:
            raise ValidationError("P and Q must be 2-D with a common embedding dimension")
        if self.d < 1 or (self.use_bias and self.d < 2):
            raise ValidationError("embedding dimension too small for this head")

    @property
    def d(self) -> int:
        return self.P.shape[1]


@dataclass
class GmfParams:
    """Dot product with a learned per-coordinate weight vector."""

    P: np.ndarray
    Q: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        self.P = _as_f64(self.P)
        self.Q = _as_f64(self.Q)
        self.w = _as_f64(self.w)
        if self.P.shape[1] != self.Q.shape[1]:
            raise ValidationError("P and Q must share an embedding dimension")
        if self.w.ndim != 1 or self.w.shape[0] != self.P.shape[1]:
            raise ValidationError("w must match the embedding dimension")

    @property
    def d(self) -> int:
        return self.P.shape[1]


@dataclass
class MlpTower:
    """Affine-ReLU stack with a scalar affine output.

    ``weights[l]`` has shape (out, in); consecutive layers must chain and the
    final output width is 1.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        self.weights = [_as_f64(w) for w in self.weights]
        self.biases = [_as_f64(b) for b in self.biases]
        if not self.weights or len(self.weights) != len(self.biases):
            raise ValidationError("weights and biases must be non-empty and parallel")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.ndim != 1 or b.shape[0] != w.shape[0]:
                raise ValidationError(f"layer {l}: bias width must match weight rows")
            if l > 0 and w.shape[1] != self.weights[l - 1].shape[0]:
                raise ValidationError(f"layer {l}: input width does not chain")
        if self.weights[-1].shape[0] != 1:
            raise ValidationError("output layer must have width 1")

    @property
    def layer_dims(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    def packed(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Flattened (dims, weights, biases) for the compiled kernels."""
        dims = np.array(self.layer_dims, dtype=np.int64)
        w_flat = np.concatenate([w.ravel() for w in self.weights])
        b_flat = np.concatenate(self.biases)
        return dims, w_flat, b_flat


@dataclass
class MlpSimParams:
    """MLP applied to the concatenation of the two embeddings."""

    P: np.ndarray
    Q: np.ndarray
    tower: MlpTower

    def __post_init__(self):
        self.P = _as_f64(self.P)
        self.Q = _as_f64(self.Q)
        if self.P.shape[1] != self.Q.shape[1]:
            raise ValidationError("P and Q must share an embedding dimension")
        if self.tower.input_dim != 2 * self.d:
            raise ValidationError(
                f"tower input {self.tower.input_dim} != 2*d = {2 * self.d}"
            )

    @property
    def d(self) -> int:
        return self.P.shape[1]


@dataclass
class NeuMfParams:
    """Sum of an MLP branch on the leading j coordinates and a weighted dot
    on the trailing d-j coordinates of a single shared embedding table."""

    P: np.ndarray
    Q: np.ndarray
    j: int
    tower: MlpTower
    gmf_w: np.ndarray

    def __post_init__(self):
        self.P = _as_f64(self.P)
        self.Q = _as_f64(self.Q)
        self.gmf_w = _as_f64(self.gmf_w)
        if self.P.shape[1] != self.Q.shape[1]:
            raise ValidationError("P and Q must share an embedding dimension")
        if not 1 <= self.j < self.d:
            raise ValidationError(f"split j={self.j} must satisfy 1 <= j < d={self.d}")
        if self.tower.input_dim != 2 * self.j:
            raise ValidationError(f"tower input {self.tower.input_dim} != 2*j = {2 * self.j}")
        if self.gmf_w.shape[0] != self.d - self.j:
            raise ValidationError("gmf_w length must equal d - j")

    @property
    def d(self) -> int:
        return self.P.shape[1]


@dataclass
class StaticScores:
    """Fixed per-item scores (e.g. training popularity); users are ignored."""

    scores: np.ndarray

    def __post_init__(self):
        self.scores = _as_f64(self.scores)
        if self.scores.ndim != 1:
            raise ValidationError("scores must be 1-D")


ModelParams = Union[DotParams, GmfParams, MlpSimParams, NeuMfParams, StaticScores]

EmbeddingParams = (DotParams, GmfParams, MlpSimParams, NeuMfParams)


def num_items_of(params: ModelParams) -> int:
    if isinstance(params, StaticScores):
        return params.scores.shape[0]
    return params.Q.shape[0]


def num_users_of(params: ModelParams) -> int | None:
    if isinstance(params, StaticScores):
        return None
    return params.P.shape[0]


def _check_vec_pair(p, q):
    p = _as_f64(p)
    q = _as_f64(q)
    if p.ndim != 1 or q.ndim != 1 or p.shape[0] != q.shape[0]:
        raise ValidationError("embeddings must be 1-D with equal length")
    return p, q


def score_dot(p, q, use_bias: bool = False, b: float = 0.0) -> float:
    """<p, q>, or b + p[0] + q[0] + <p[1:], q[1:]> in the biased form."""
    p, q = _check_vec_pair(p, q)
    if use_bias and p.shape[0] < 2:
        raise ValidationError("biased dot needs d >= 2")
    return float(_k.dot_score(p, q, use_bias, float(b)))


def score_gmf_logit(p, q, w) -> float:
    """sum_f w[f] * p[f] * q[f]."""
    p, q = _check_vec_pair(p, q)
    w = _as_f64(w)
    if w.shape != p.shape:
        raise ValidationError("w must match the embedding length")
    return float(_k.gmf_score(p, q, w))


def mlp_forward(tower: MlpTower, x) -> tuple[float, list[np.ndarray]]:
    """Score an input vector; also return every layer's post-activation output."""
    x = _as_f64(x)
    if x.ndim != 1 or x.shape[0] != tower.input_dim:
        raise ValidationError(f"input length {x.shape} != tower input {tower.input_dim}")
    dims, w_flat, b_flat = tower.packed()
    acts_flat = np.empty(int(_k.acts_size(dims)))
    score = float(_k.tower_forward(dims, w_flat, b_flat, x, acts_flat))
    acts = []
    ofs = 0
    for width in tower.layer_dims[1:]:
        acts.append(acts_flat[ofs : ofs + width].copy())
        ofs += width
    return score, acts


class BatchScorer:
    """Packs a model's parameters once for repeated batch scoring."""

    def __init__(self, params: ModelParams):
        self.params = params
        if isinstance(params, (MlpSimParams, NeuMfParams)):
            self._packed = params.tower.packed()

    def score(self, user: int, items) -> np.ndarray:
        params = self.params
        items = np.asarray(items, dtype=np.int64)
        if items.ndim != 1:
            raise ValidationError("items must be a 1-D index list")
        if items.shape[0] and (items.min() < 0 or items.max() >= num_items_of(params)):
            raise ValidationError("item index out of bounds")
        out = np.empty(items.shape[0])
        if isinstance(params, StaticScores):
            out[:] = params.scores[items]
            return out
        if not 0 <= user < params.P.shape[0]:
            raise ValidationError(f"user index {user} out of bounds")
        p = params.P[user]
        if isinstance(params, DotParams):
            _k.dot_scores_batch(p, params.Q, items, params.use_bias, float(params.b), out)
        elif isinstance(params, GmfParams):
            _k.gmf_scores_batch(p, params.Q, items, params.w, out)
        elif isinstance(params, MlpSimParams):
            dims, w_flat, b_flat = self._packed
            _k.mlp_scores_batch(dims, w_flat, b_flat, p, params.Q, items, out)
        elif isinstance(params, NeuMfParams):
            dims, w_flat, b_flat = self._packed
            _k.neumf_scores_batch(
                dims, w_flat, b_flat, params.gmf_w, params.j, p, params.Q, items, out
            )
        else:
            raise ValidationError(f"unknown model kind {type(params).__name__}")
        return out


def score_items(params: ModelParams, user: int, items) -> np.ndarray:
    """Score one user against a list of items; element i equals the
    corresponding single-pair score exactly."""
    return BatchScorer(params).score(user, items)


def score_mlp(params: MlpSimParams, user: int, item: int) -> float:
    return float(score_items(params, user, np.array([item]))[0])


def score_neumf(params: NeuMfParams, user: int, item: int) -> float:
    return float(score_items(params, user, np.array([item]))[0])


def score_pair(params: ModelParams, user: int, item: int) -> float:
    """Single-pair score under any head."""
    return float(score_items(params, user, np.array([item]))[0])


def predictive_factor_to_dims(k: int, model_kind: str) -> int:
    """Map the last-hidden-layer sizing convention to an embedding dimension."""
    if k < 1:
        raise ValidationError("predictive factor must be >= 1")
    kind = model_kind.lower()
    if kind in ("mf", "dot", "gmf"):
        return k
    if kind == "mlp":
        return 2 * k
    if kind == "neumf":
        return 3 * k
    raise ValidationError(f"unknown model kind {model_kind!r}")


def neumf_split(d: int) -> int:
    """Leading-coordinate count routed to the MLP branch: round(2d/3)."""
    j = int(round(2 * d / 3))
    return min(max(j, 1), d - 1)


def default_hidden_dims(input_dim: int) -> list[int]:
    """Pyramid [4k, 2k, k] with k = input_dim / 4 (the 3-hidden-layer layout
    whose first width equals the concatenated embedding size)."""
    k = max(1, input_dim // 4)
    return [4 * k, 2 * k, k]


def _array_blocks(params: ModelParams) -> list[tuple[str, np.ndarray]]:
    if isinstance(params, DotParams):
        return [("P", params.P), ("Q", params.Q)]
    if isinstance(params, GmfParams):
        return [("P", params.P), ("Q", params.Q), ("w", params.w)]
    if isinstance(params, MlpSimParams):
        blocks = [("P", params.P), ("Q", params.Q)]
    elif isinstance(params, NeuMfParams):
        blocks = [("P", params.P), ("Q", params.Q), ("w", params.gmf_w)]
    elif isinstance(params, StaticScores):
        return [("scores", params.scores)]
    else:
        raise ValidationError(f"unknown model kind {type(params).__name__}")
    for l, (w, b) in enumerate(zip(params.tower.weights, params.tower.biases)):
        blocks.append((f"W{l}", w))
        blocks.append((f"b{l}", b))
    return blocks


def save_params(params: ModelParams, path: str | Path) -> None:
    """Write a self-describing checkpoint; arrays round-trip bit-exactly."""
    meta: dict = {"version": CHECKPOINT_VERSION}
    if isinstance(params, DotParams):
        meta.update(kind="dot", use_bias=params.use_bias, b=params.b)
    elif isinstance(params, GmfParams):
        meta.update(kind="gmf")
    elif isinstance(params, MlpSimParams):
        meta.update(kind="mlp", layer_dims=params.tower.layer_dims)
    elif isinstance(params, NeuMfParams):
        meta.update(kind="neumf", j=params.j, layer_dims=params.tower.layer_dims)
    elif isinstance(params, StaticScores):
        meta.update(kind="static")
    else:
        raise ValidationError(f"unknown model kind {type(params).__name__}")
    arrays = dict(_array_blocks(params))
    arrays["__meta__"] = np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_params(path: str | Path) -> ModelParams:
    with np.load(path, allow_pickle=False) as blob:
        if "__meta__" not in blob:
            raise ValidationError(f"{path}: not a simcf checkpoint")
        meta = json.loads(bytes(blob["__meta__"]).decode("utf-8"))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValidationError(f"{path}: unsupported checkpoint version {meta.get('version')}")
        kind = meta["kind"]
        if kind == "static":
            return StaticScores(blob["scores"])
        if kind == "dot":
            return DotParams(blob["P"], blob["Q"], use_bias=meta["use_bias"], b=meta["b"])
        if kind == "gmf":
            return GmfParams(blob["P"], blob["Q"], blob["w"])
        n_layers = len(meta["layer_dims"]) - 1
        tower = MlpTower(
            [blob[f"W{l}"] for l in range(n_layers)],
            [blob[f"b{l}"] for l in range(n_layers)],
        )
        if kind == "mlp":
            return MlpSimParams(blob["P"], blob["Q"], tower)
        if kind == "neumf":
            return NeuMfParams(blob["P"], blob["Q"], meta["j"], tower, blob["w"])
    raise ValidationError(f"{path}: unknown model kind {kind!r}")
