"""Training: logistic loss, uniform negative sampling, per-example SGD for the
biased-dot model, and manual backpropagation + Adam for the learned heads.

The per-example regularized loss for (u, i, y) is

    logloss(phi, y) + lam/2 (|p_u|^2 + |q_i|^2) + head_lam/2 |head weights|^2

whose gradient reproduces the additive ``lam * theta`` terms of the coupled
update rules exactly. Head weights are the GMF weight vector and the tower
weight matrices; tower biases are never regularized.

Everything is deterministic given (corpus, config, seed): identical inputs
reproduce bitwise-identical parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterator, NamedTuple, Sequence

import numpy as np

from . import _kernels as _k
from .errors import ValidationError
from .models import (
    DotParams,
    GmfParams,
    MlpSimParams,
    MlpTower,
    ModelParams,
    NeuMfParams,
    default_hidden_dims,
    mlp_forward,
    neumf_split,
)


@dataclass(frozen=True)
class SgdConfig:
    """Settings shared by every recommender training run."""

    eta: float
    lam: float
    m: int
    epochs: int
    init_std: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.eta <= 0:
            raise ValidationError("eta must be > 0")
        if self.lam < 0:
            raise ValidationError("lam must be >= 0")
        if self.m < 1:
            raise ValidationError("m must be >= 1")
        if self.epochs < 0:
            raise ValidationError("epochs must be >= 0")
        if self.init_std <= 0:
            raise ValidationError("init_std must be > 0")
        if self.seed < 0:
            raise ValidationError("seed must be >= 0")


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.lr <= 0 or self.epsilon <= 0:
            raise ValidationError("lr and epsilon must be > 0")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValidationError("beta coefficients must lie in (0, 1)")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros_like(cls, theta: np.ndarray) -> "AdamState":
        return cls(np.zeros_like(theta), np.zeros_like(theta))


class TrainExample(NamedTuple):
    user: int
    item: int
    y: int


@dataclass(frozen=True)
class EpochStream:
    """One epoch's shuffled (user, item, label) examples as parallel arrays."""

    users: np.ndarray  # int32
    items: np.ndarray  # int32
    labels: np.ndarray  # int8

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def examples(self) -> Iterator[TrainExample]:
        for n in range(len(self)):
            yield TrainExample(int(self.users[n]), int(self.items[n]), int(self.labels[n]))


def sigmoid(x):
    """Numerically stable logistic function; scalar in, scalar out."""
    arr = np.asarray(x, dtype=np.float64)
    z = np.exp(-np.abs(arr))
    out = np.where(arr >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
    return float(out) if np.isscalar(x) or arr.ndim == 0 else out

def logistic_loss(score, y):
    """Binary cross-entropy of sigmoid(score) against y, overflow-free."""
    x = np.asarray(score, dtype=np.float64)
    yv = np.asarray(y, dtype=np.float64)
    softplus = np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0.0)
    out = yv * (softplus - x) + (1.0 - yv) * softplus
    return float(out) if x.ndim == 0 else out


def sample_negatives(corpus, m: int, seed: int, epoch: int) -> EpochStream:
    """Pair every positive with m uniform negatives and shuffle the epoch.

    Negative draws are uniform over all items and may collide with a user's
    positives. Streams for different epochs are independent; the whole
    stream is a pure function of (corpus, m, seed, epoch).
    """
    if m < 1:
        raise ValidationError("m must be >= 1")
    n_pos = corpus.num_interactions
    if n_pos == 0:
        empty32 = np.empty(0, dtype=np.int32)
        return EpochStream(empty32, empty32.copy(), np.empty(0, dtype=np.int8))
    rng = np.random.default_rng(np.random.SeedSequence([seed, epoch]))
    pos_u = corpus.users
    pos_i = corpus.items
    neg_i = rng.integers(0, corpus.num_items, size=n_pos * m, dtype=np.int32)
    users = np.concatenate([pos_u, np.repeat(pos_u, m)])
    items = np.concatenate([pos_i, neg_i])
    labels = np.concatenate(
        [np.ones(n_pos, dtype=np.int8), np.zeros(n_pos * m, dtype=np.int8)]
    )
    perm = rng.permutation(users.shape[0])
    return EpochStream(
        np.ascontiguousarray(users[perm]),
        np.ascontiguousarray(items[perm]),
        np.ascontiguousarray(labels[perm]),
    )


# ---------------------------------------------------------------------------
# parameter initialization


def init_params(
    kind: str,
    num_users: int,
    num_items: int,
    d: int,
    init_std: float,
    seed: int,
    hidden_dims: Sequence[int] | None = None,
    use_bias: bool = True,
) -> ModelParams:
    """Gaussian init for embeddings and head weights; tower biases start at 0.

    Draw order is fixed (P, Q, then head blocks) so results are reproducible.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    kind = kind.lower()
    P = rng.normal(0.0, init_std, size=(num_users, d))
    Q = rng.normal(0.0, init_std, size=(num_items, d))
    if kind in ("mf", "dot"):
        return DotParams(P, Q, use_bias=use_bias, b=0.0)
    if kind == "gmf":
        return GmfParams(P, Q, rng.normal(0.0, init_std, size=d))
    if kind == "mlp":
        dims = [2 * d] + list(hidden_dims or default_hidden_dims(2 * d)) + [1]
        return MlpSimParams(P, Q, _init_tower(dims, init_std, rng))
    if kind == "neumf":
        j = neumf_split(d)
        dims = [2 * j] + list(hidden_dims or default_hidden_dims(2 * j)) + [1]
        tower = _init_tower(dims, init_std, rng)
        return NeuMfParams(P, Q, j, tower, rng.normal(0.0, init_std, size=d - j))
    raise ValidationError(f"unknown model kind {kind!r}")


def _init_tower(dims: Sequence[int], std: float, rng) -> MlpTower:
    weights = []
    biases = []
    for din, dout in zip(dims[:-1], dims[1:]):
        weights.append(rng.normal(0.0, std, size=(dout, din)))
        biases.append(np.zeros(dout))
    return MlpTower(weights, biases)


# ---------------------------------------------------------------------------
# biased-dot SGD (coupled update rules)


def sgd_step_mf(params: DotParams, ex: TrainExample, eta: float, lam: float) -> DotParams:
    """Apply one per-example update in place; both row updates use the other
    side's pre-update values."""
    if not 0 <= ex.user < params.P.shape[0]:
        raise ValidationError(f"user index {ex.user} out of bounds")
    if not 0 <= ex.item < params.Q.shape[0]:
        raise ValidationError(f"item index {ex.item} out of bounds")
    _k.mf_step(params.P, params.Q, ex.user, ex.item, float(ex.y), eta, lam, params.use_bias)
    return params


def train_mf(
    corpus,
    cfg: SgdConfig,
    d: int,
    use_bias: bool = True,
    on_epoch: Callable[[int, float], None] | None = None,
) -> DotParams:
    """SGD training of the (biased) dot model over sampled epoch streams."""
    if use_bias and d < 2:
        raise ValidationError("biased dot training needs d >= 2")
    params = init_params("mf", corpus.num_users, corpus.num_items, d, cfg.init_std,
                         cfg.seed, use_bias=use_bias)
    for epoch in range(cfg.epochs):
        stream = sample_negatives(corpus, cfg.m, cfg.seed, epoch)
        total = _k.mf_epoch(
            params.P, params.Q, stream.users, stream.items, stream.labels,
            cfg.eta, cfg.lam, use_bias,
        )
        if on_epoch is not None:
            on_epoch(epoch, total / max(1, len(stream)))
    return params


# ---------------------------------------------------------------------------
# manual backpropagation for the learned heads


@dataclass
class Grads:
    """Per-example gradients, restricted to the touched embedding rows."""

    p: np.ndarray
    q: np.ndarray
    w: np.ndarray | None = None
    weights: list[np.ndarray] = field(default_factory=list)
    biases: list[np.ndarray] = field(default_factory=list)


def example_loss(
    params: ModelParams, ex: TrainExample, lam: float, head_lam: float | None = None
) -> float:
    """The per-example regularized objective that backprop differentiates."""
    head_lam = lam if head_lam is None else head_lam
    loss, _ = _forward_example(params, ex)
    p = params.P[ex.user]
    q = params.Q[ex.item]
    loss += 0.5 * lam * (float(p @ p) + float(q @ q))
    if isinstance(params, GmfParams):
        loss += 0.5 * head_lam * float(params.w @ params.w)
    elif isinstance(params, MlpSimParams):
        loss += 0.5 * head_lam * sum(float(np.sum(w * w)) for w in params.tower.weights)
    elif isinstance(params, NeuMfParams):
        loss += 0.5 * head_lam * sum(float(np.sum(w * w)) for w in params.tower.weights)
        loss += 0.5 * head_lam * float(params.gmf_w @ params.gmf_w)
    return loss


def _forward_example(params: ModelParams, ex: TrainExample):
    """Unregularized loss plus whatever the backward pass needs."""
    u, i, y = ex.user, ex.item, float(ex.y)
    p = params.P[u]
    q = params.Q[i]
    if isinstance(params, GmfParams):
        phi = float(_k.gmf_score(p, q, params.w))
        ctx = None
    elif isinstance(params, MlpSimParams):
        x = np.concatenate([p, q])
        phi, acts = mlp_forward(params.tower, x)
        ctx = (x, acts)
    elif isinstance(params, NeuMfParams):
        j = params.j
        x = np.concatenate([p[:j], q[:j]])
        mlp_part, acts = mlp_forward(params.tower, x)
        phi = mlp_part + float(_k.gmf_score(p[j:], q[j:], params.gmf_w))
        ctx = (x, acts)
    elif isinstance(params, DotParams):
        phi = float(_k.dot_score(p, q, params.use_bias, params.b))
        ctx = None
    else:
        raise ValidationError(f"unsupported model kind {type(params).__name__}")
    return float(_k.logloss_scalar(phi, y)), (phi, ctx)


def _tower_backward(tower: MlpTower, x: np.ndarray, acts: list[np.ndarray], delta_out: float):
    """Reverse pass through an affine-ReLU stack.

    Post-activation outputs determine the ReLU subgradient (0 at the kink).
    Returns (weight grads, bias grads, gradient w.r.t. x).
    """
    n = len(tower.weights)
    g_w: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    g_b: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    delta = np.array([delta_out])
    for l in range(n - 1, -1, -1):
        a_prev = x if l == 0 else acts[l - 1]
        g_w[l] = np.outer(delta, a_prev)
        g_b[l] = delta.copy()
        delta = tower.weights[l].T @ delta
        if l > 0:
            delta = delta * (acts[l - 1] > 0)
    return g_w, g_b, delta


def backprop(
    params: GmfParams | MlpSimParams | NeuMfParams,
    ex: TrainExample,
    lam: float,
    head_lam: float | None = None,
) -> Grads:
    """Exact gradients of the per-example regularized loss."""
    grads, _ = _backprop_impl(params, ex, lam, head_lam)
    return grads


def _backprop_impl(params, ex, lam, head_lam=None):
    head_lam = lam if head_lam is None else head_lam
    if not 0 <= ex.user < params.P.shape[0]:
        raise ValidationError(f"user index {ex.user} out of bounds")
    if not 0 <= ex.item < params.Q.shape[0]:
        raise ValidationError(f"item index {ex.item} out of bounds")
    loss, (phi, ctx) = _forward_example(params, ex)
    u, i, y = ex.user, ex.item, float(ex.y)
    p = params.P[u]
    q = params.Q[i]
    r = float(_k.sigmoid_scalar(phi)) - y

    if isinstance(params, GmfParams):
        grads = Grads(
            p=r * (params.w * q) + lam * p,
            q=r * (params.w * p) + lam * q,
            w=r * (p * q) + head_lam * params.w,
        )
    elif isinstance(params, MlpSimParams):
        x, acts = ctx
        g_w, g_b, g_x = _tower_backward(params.tower, x, acts, r)
        d = params.d
        grads = Grads(
            p=g_x[:d] + lam * p,
            q=g_x[d:] + lam * q,
            weights=[gw + head_lam * w for gw, w in zip(g_w, params.tower.weights)],
            biases=g_b,
        )
    elif isinstance(params, NeuMfParams):
        x, acts = ctx
        j = params.j
        g_w, g_b, g_x = _tower_backward(params.tower, x, acts, r)
        gp = np.concatenate([g_x[:j], r * (params.gmf_w * q[j:])]) + lam * p
        gq = np.concatenate([g_x[j:], r * (params.gmf_w * p[j:])]) + lam * q
        grads = Grads(
            p=gp,
            q=gq,
            w=r * (p[j:] * q[j:]) + head_lam * params.gmf_w,
            weights=[gw + head_lam * w for gw, w in zip(g_w, params.tower.weights)],
            biases=g_b,
        )
    else:
        raise ValidationError(f"backprop does not cover {type(params).__name__}")
    reg = 0.5 * lam * (float(p @ p) + float(q @ q))
    if isinstance(params, GmfParams):
        reg += 0.5 * head_lam * float(params.w @ params.w)
    else:
        reg += 0.5 * head_lam * sum(float(np.sum(w * w)) for w in params.tower.weights)
        if isinstance(params, NeuMfParams):
            reg += 0.5 * head_lam * float(params.gmf_w @ params.gmf_w)
    return grads, loss + reg


# ---------------------------------------------------------------------------
# Adam


def adam_step(theta: np.ndarray, g: np.ndarray, state: AdamState, cfg: AdamConfig):
    """Standard bias-corrected Adam update, in place."""
    if theta.shape != g.shape or theta.shape != state.m.shape:
        raise ValidationError("theta, gradient and state shapes must agree")
    state.t += 1
    state.m *= cfg.beta1
    state.m += (1.0 - cfg.beta1) * g
    state.v *= cfg.beta2
    state.v += (1.0 - cfg.beta2) * (g * g)
    m_hat = state.m / (1.0 - cfg.beta1**state.t)
    v_hat = state.v / (1.0 - cfg.beta2**state.t)
    theta -= cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.epsilon)
    return theta, state


class _TableAdam:
    """Row-sparse Adam for an embedding table.

    Moments are tracked per row but decayed only when the row is touched;
    bias correction uses the caller's global step count.
    """

    def __init__(self, table: np.ndarray):
        self.m = np.zeros_like(table)
        self.v = np.zeros_like(table)

    def update(self, table: np.ndarray, row: int, g: np.ndarray, t: int, cfg: AdamConfig):
        m = self.m[row]
        v = self.v[row]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        m_hat = m / (1.0 - cfg.beta1**t)
        v_hat = v / (1.0 - cfg.beta2**t)
        table[row] -= cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.epsilon)


# ---------------------------------------------------------------------------
# trainers for the learned heads


def _head_arrays(params) -> list[np.ndarray]:
    if isinstance(params, GmfParams):
        return [params.w]
    arrays = list(params.tower.weights) + list(params.tower.biases)
    if isinstance(params, NeuMfParams):
        arrays.append(params.gmf_w)
    return arrays


def _head_grad_arrays(params, grads: Grads) -> list[np.ndarray]:
    if isinstance(params, GmfParams):
        return [grads.w]
    arrays = list(grads.weights) + list(grads.biases)
    if isinstance(params, NeuMfParams):
        arrays.append(grads.w)
    return arrays


def train_learned(
    corpus,
    kind: str,
    cfg: SgdConfig,
    adam: AdamConfig | None = None,
    d: int | None = None,
    *,
    params: ModelParams | None = None,
    hidden_dims: Sequence[int] | None = None,
    head_lambda: float | None = None,
    optimizer: str = "adam",
    freeze_head: bool = False,
    on_epoch: Callable[[int, float], None] | None = None,
) -> ModelParams:
    """Per-example training of GMF / MLP / NeuMF via backprop.

    Same sampling and epoch structure as ``train_mf``; updates go through
    Adam by default (``optimizer="sgd"`` applies plain eta-scaled steps).
    Pass ``params`` to continue training an existing model (fine-tuning).
    """
    if optimizer not in ("adam", "sgd"):
        raise ValidationError(f"unknown optimizer {optimizer!r}")
    adam = adam or AdamConfig()
    if params is None:
        if d is None:
            raise ValidationError("either d or params must be given")
        params = init_params(kind, corpus.num_users, corpus.num_items, d, cfg.init_std,
                             cfg.seed, hidden_dims=hidden_dims)
    if isinstance(params, DotParams):
        raise ValidationError("use train_mf for the dot model")

    p_opt = _TableAdam(params.P)
    q_opt = _TableAdam(params.Q)
    head = _head_arrays(params)
    head_states = [AdamState.zeros_like(a) for a in head]
    t = 0
    for epoch in range(cfg.epochs):
        stream = sample_negatives(corpus, cfg.m, cfg.seed, epoch)
        total = 0.0
        for n in range(len(stream)):
            ex = TrainExample(int(stream.users[n]), int(stream.items[n]), int(stream.labels[n]))
            grads, loss = _backprop_impl(params, ex, cfg.lam, head_lambda)
            total += loss
            t += 1
            if optimizer == "adam":
                p_opt.update(params.P, ex.user, grads.p, t, adam)
                q_opt.update(params.Q, ex.item, grads.q, t, adam)
                if not freeze_head:
                    for arr, g, st in zip(head, _head_grad_arrays(params, grads), head_states):
                        adam_step(arr, g, st, adam)
            else:
                params.P[ex.user] -= cfg.eta * grads.p
                params.Q[ex.item] -= cfg.eta * grads.q
                if not freeze_head:
                    for arr, g in zip(head, _head_grad_arrays(params, grads)):
                        arr -= cfg.eta * g
        if on_epoch is not None:
            on_epoch(epoch, total / max(1, len(stream)))
    return params


def pretrain_neumf(
    corpus,
    cfg_mlp: SgdConfig,
    cfg_gmf: SgdConfig,
    cfg_finetune: SgdConfig,
    k: int,
    adam: AdamConfig | None = None,
    head_lambda: float | None = None,
    finetune_optimizer: str = "adam",
    on_epoch: Callable[[int, float], None] | None = None,
) -> NeuMfParams:
    """Train MLP (d=2k) and GMF (d=k) separately, concatenate their embedding
    tables into a combined layout (j=2k, d=3k), then fine-tune."""
    if k < 1:
        raise ValidationError("predictive factor must be >= 1")
    adam = adam or AdamConfig()
    mlp = train_learned(corpus, "mlp", cfg_mlp, adam, d=2 * k, head_lambda=head_lambda)
    gmf = train_learned(corpus, "gmf", cfg_gmf, adam, d=k, head_lambda=head_lambda)
    combined = NeuMfParams(
        P=np.hstack([mlp.P, gmf.P]),
        Q=np.hstack([mlp.Q, gmf.Q]),
        j=2 * k,
        tower=MlpTower([w.copy() for w in mlp.tower.weights],
                       [b.copy() for b in mlp.tower.biases]),
        gmf_w=gmf.w.copy(),
    )
    return train_learned(
        corpus, "neumf", cfg_finetune, adam, params=combined,
        head_lambda=head_lambda, optimizer=finetune_optimizer, on_epoch=on_epoch,
    )


# ---------------------------------------------------------------------------
# gradient-check oracle


def finite_diff_grad(
    loss_fn: Callable[[], float], arrays: Sequence[np.ndarray], h: float = 1e-4
) -> list[np.ndarray]:
    """Central differences of ``loss_fn`` w.r.t. every coordinate of the given
    arrays, which are perturbed in place and restored."""
    if h <= 0:
        raise ValidationError("h must be > 0")
    out = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        g_flat = g.reshape(-1)
        for idx in range(flat.shape[0]):
            orig = flat[idx]
            flat[idx] = orig + h
            hi = loss_fn()
            flat[idx] = orig - h
            lo = loss_fn()
            flat[idx] = orig
            g_flat[idx] = (hi - lo) / (2.0 * h)
        out.append(g)
    return out
