"""Compiled inner loops shared by scoring, training, and retrieval.

Every scoring path (single pair, evaluation batch, retrieval sweep) funnels
through the scalar routines below, so batch results are bitwise identical to
repeated single-pair calls. The per-example SGD sweep lives here too; it is
the only way full-size training finishes in reasonable time.
"""

import math

import numpy as np
from numba import njit


@njit(cache=True)
def sigmoid_scalar(x):
    # branch keeps exp() argument non-positive: no overflow for any x
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


@njit(cache=True)
def logloss_scalar(x, y):
    # y*softplus(-x) + (1-y)*softplus(x), with softplus(x) = log1p(e^-|x|) + max(x, 0)
    sp = math.log1p(math.exp(-abs(x)))
    if x > 0.0:
        sp += x
    return y * (sp - x) + (1.0 - y) * sp


@njit(cache=True)
def dot_score(p, q, use_bias, b):
    d = p.shape[0]
    if use_bias:
        acc = b + p[0] + q[0]
        for f in range(1, d):
            acc += p[f] * q[f]
        return acc
    acc = 0.0
    for f in range(d):
        acc += p[f] * q[f]
    return acc


@njit(cache=True)
def gmf_score(p, q, w):
    acc = 0.0
    for f in range(p.shape[0]):
        acc += w[f] * (p[f] * q[f])
    return acc


@njit(cache=True)
def tower_forward(dims, w_flat, b_flat, x, acts):
    """Affine-ReLU stack; the final layer is affine only.

    dims lists every layer width, input first, scalar output last. Weights
    are packed row-major layer after layer, biases likewise. Post-activation
    outputs of every layer are written into `acts` (concatenated); the
    return value is the last entry written.
    """
    n_aff = dims.shape[0] - 1
    wofs = 0
    bofs = 0
    aofs = 0
    prev = 0
    for l in range(n_aff):
        din = dims[l]
        dout = dims[l + 1]
        for o in range(dout):
            acc = b_flat[bofs + o]
            base = wofs + o * din
            if l == 0:
                for k in range(din):
                    acc += w_flat[base + k] * x[k]
            else:
                for k in range(din):
                    acc += w_flat[base + k] * acts[prev + k]
            if l < n_aff - 1 and acc < 0.0:
                acc = 0.0
            acts[aofs + o] = acc
        wofs += dout * din
        bofs += dout
        prev = aofs
        aofs += dout
    return acts[aofs - 1]


@njit(cache=True)
def acts_size(dims):
    total = 0
    for l in range(1, dims.shape[0]):
        total += dims[l]
    return total


@njit(cache=True)
def dot_scores_batch(p, Q, items, use_bias, b, out):
    for t in range(items.shape[0]):
        out[t] = dot_score(p, Q[items[t]], use_bias, b)


@njit(cache=True)
def gmf_scores_batch(p, Q, items, w, out):
    for t in range(items.shape[0]):
        out[t] = gmf_score(p, Q[items[t]], w)


@njit(cache=True)
def mlp_scores_batch(dims, w_flat, b_flat, p, Q, items, out):
    d = p.shape[0]
    x = np.empty(2 * d)
    acts = np.empty(acts_size(dims))
    for t in range(items.shape[0]):
        i = items[t]
        for f in range(d):
            x[f] = p[f]
            x[d + f] = Q[i, f]
        out[t] = tower_forward(dims, w_flat, b_flat, x, acts)


@njit(cache=True)
def neumf_scores_batch(dims, w_flat, b_flat, gmf_w, j, p, Q, items, out):
    d = p.shape[0]
    x = np.empty(2 * j)
    acts = np.empty(acts_size(dims))
    for t in range(items.shape[0]):
        i = items[t]
        for f in range(j):
            x[f] = p[f]
            x[j + f] = Q[i, f]
        mlp_part = tower_forward(dims, w_flat, b_flat, x, acts)
        acc = 0.0
        for f in range(j, d):
            acc += gmf_w[f - j] * (p[f] * Q[i, f])
        out[t] = mlp_part + acc


@njit(cache=True)
def mf_step(P, Q, u, i, y, eta, lam, use_bias):
    """One SGD update on rows u of P and i of Q; returns the pre-update loss.

    The residual and both cross terms use pre-update values of the other
    side, exactly as in the coupled update-rule form.
    """
    d = P.shape[1]
    phi = dot_score(P[u], Q[i], use_bias, 0.0)
    loss = logloss_scalar(phi, y)
    r = sigmoid_scalar(phi) - y
    if use_bias:
        p0 = P[u, 0]
        q0 = Q[i, 0]
        P[u, 0] = p0 - eta * (r + lam * p0)
        Q[i, 0] = q0 - eta * (r + lam * q0)
        for f in range(1, d):
            pf = P[u, f]
            qf = Q[i, f]
            P[u, f] = pf - eta * (r * qf + lam * pf)
            Q[i, f] = qf - eta * (r * pf + lam * qf)
    else:
        for f in range(d):
            pf = P[u, f]
            qf = Q[i, f]
            P[u, f] = pf - eta * (r * qf + lam * pf)
            Q[i, f] = qf - eta * (r * pf + lam * qf)
    return loss


@njit(cache=True)
def mf_epoch(P, Q, users, items, labels, eta, lam, use_bias):
    """Sequential per-example sweep; returns the summed pre-update loss."""
    total = 0.0
    for n in range(users.shape[0]):
        total += mf_step(P, Q, users[n], items[n], float(labels[n]), eta, lam, use_bias)
    return total
