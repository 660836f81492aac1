"""Shared test scaffolding.

``planted_corpus`` builds an implicit-feedback corpus with genuine low-rank
taste structure plus a popularity skew, so ranking quality responds to model
capacity the way real data does. ``dataset_paths`` locates the published
dataset files (env SIMCF_DATA or ./data); tests that need them skip when
absent.
"""

import os
from pathlib import Path

import numpy as np

from simcf import Interaction, RatingCorpus, build_corpus

RUN_SLOW = os.environ.get("SIMCF_RUN_SLOW") == "1"


def data_dir() -> Path:
    return Path(os.environ.get("SIMCF_DATA", Path(__file__).resolve().parent.parent / "data"))


def dataset_paths(name: str) -> dict[str, Path]:
    base = data_dir()
    return {
        "train": base / f"{name}.train.rating",
        "test_rating": base / f"{name}.test.rating",
        "negatives": base / f"{name}.test.negative",
    }


def have_dataset(name: str) -> bool:
    paths = dataset_paths(name)
    return paths["train"].exists() and paths["negatives"].exists()


def planted_corpus(
    num_users: int = 480,
    num_items: int = 420,
    per_user: int = 18,
    rank: int = 32,
    pop_scale: float = 0.9,
    taste_scale: float = 1.6,
    seed: int = 7,
) -> RatingCorpus:
    """Sample each user's positives from softmax(taste + popularity) without
    replacement; timestamps follow the draw order."""
    rng = np.random.default_rng(seed)
    U = rng.normal(0.0, 1.0, (num_users, rank)) / np.sqrt(rank)
    V = rng.normal(0.0, taste_scale, (num_items, rank))
    pop = rng.normal(0.0, pop_scale, num_items)
    recs = []
    for u in range(num_users):
        logits = U[u] @ V.T + pop
        probs = np.exp(logits - logits.max())
        probs /= probs.sum()
        chosen = rng.choice(num_items, size=per_user, replace=False, p=probs)
        recs.extend(Interaction(u, int(i), ts) for ts, i in enumerate(chosen))
    return build_corpus(recs, num_users, num_items)


def tower_preactivations(tower, x):
    """Hidden-layer pre-activation values (for ReLU kink exclusion)."""
    z_list = []
    a = np.asarray(x, dtype=np.float64)
    last = len(tower.weights) - 1
    for l, (W, b) in enumerate(zip(tower.weights, tower.biases)):
        z = W @ a + b
        if l < last:
            z_list.append(z)
            a = np.maximum(z, 0.0)
        else:
            a = z
    return z_list


def grad_check_instance(kind: str, seed: int, lam=0.07, head_lam=0.03, h=1e-4,
                        kink_margin=1e-3):
    """Compare backprop against central differences on one random instance.

    Returns the worst per-array relative error, or None when the instance
    lands too close to a ReLU kink to probe reliably.
    """
    from simcf import TrainExample, backprop, finite_diff_grad, init_params
    from simcf.training import example_loss

    rng = np.random.default_rng(seed)
    num_users, num_items = 3, 4
    d = {"gmf": 6, "mlp": 4, "neumf": 6}[kind]
    params = init_params(kind, num_users, num_items, d, 0.6, seed)
    # random tower biases; zeros would park every pre-activation at a kink
    if kind in ("mlp", "neumf"):
        for b in params.tower.biases:
            b += rng.normal(0.0, 0.3, size=b.shape)
    ex = TrainExample(int(rng.integers(num_users)), int(rng.integers(num_items)),
                      int(rng.integers(2)))

    if kind in ("mlp", "neumf"):
        p = params.P[ex.user]
        q = params.Q[ex.item]
        x = np.concatenate([p, q]) if kind == "mlp" else np.concatenate(
            [p[: params.j], q[: params.j]]
        )
        for z in tower_preactivations(params.tower, x):
            if np.min(np.abs(z)) < kink_margin:
                return None

    arrays = [params.P[ex.user], params.Q[ex.item]]
    if kind == "gmf":
        arrays.append(params.w)
    else:
        arrays.extend(params.tower.weights)
        arrays.extend(params.tower.biases)
        if kind == "neumf":
            arrays.append(params.gmf_w)

    fd = finite_diff_grad(lambda: example_loss(params, ex, lam, head_lam), arrays, h)
    grads = backprop(params, ex, lam, head_lam)
    bp = [grads.p, grads.q]
    if kind == "gmf":
        bp.append(grads.w)
    else:
        bp.extend(grads.weights)
        bp.extend(grads.biases)
        if kind == "neumf":
            bp.append(grads.w)

    worst = 0.0
    for a, b in zip(fd, bp):
        denom = max(float(np.linalg.norm(a)), float(np.linalg.norm(b)), 1e-8)
        worst = max(worst, float(np.linalg.norm(a - b)) / denom)
    return worst


def random_corpus(num_users=25, num_items=40, seed=0, max_per_user=8) -> RatingCorpus:
    """Unstructured corpus for plumbing tests."""
    rng = np.random.default_rng(seed)
    recs = []
    for u in range(num_users):
        n = rng.integers(1, max_per_user + 1)
        items = rng.choice(num_items, size=n, replace=False)
        ts = rng.integers(0, 10_000, size=n)
        recs.extend(Interaction(u, int(i), int(t)) for i, t in zip(items, ts))
    return build_corpus(recs, num_users, num_items)
