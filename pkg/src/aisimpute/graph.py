"""Two-stage propagation over the multi-scale attribute graph.

Stage 1 smooths the ``N_k`` nodes of each scale bucket with an adjacency
computed per timestep from the higher-scale states. Stage 2 mixes each
attribute's own states across the scales it reaches, using a static learned
adjacency. Both use the symmetric normalization ``D^-1/2 A D^-1/2``.

Raw adjacencies are symmetrized before the softplus map. With a symmetric
nonnegative ``A`` the normalized matrix is symmetric with spectral radius
at most 1, hence non-expansive in the Frobenius norm. A nonsymmetric ``A``
keeps the radius bound but can stretch some inputs.
"""

from __future__ import annotations

import numpy as np

from .core import N_SCALES, SCALE, TAXONOMY, attrs_at_scale, feature_count, layer_count
from .numeric import ops
from .numeric.tensor import Tensor, as_tensor

EPS_LOOP = 1e-3


class ConvergenceError(RuntimeError):
    pass


def nonneg_adjacency(raw, eps_loop: float = EPS_LOOP) -> Tensor:
    """``softplus((R + R^T)/2) + eps_loop I`` over the last two axes."""
    raw = as_tensor(raw)
    n = raw.shape[-1]
    sym = (raw + ops.swapaxes(raw, -1, -2)) * 0.5
    return ops.softplus(sym) + eps_loop * np.eye(n)


def normalized(A) -> Tensor:
    """``D^-1/2 A D^-1/2`` with ``D`` the row-sum degrees."""
    A = as_tensor(A)
    deg = ops.sum(A, axis=-1, keepdims=True)
    if np.any(deg.data <= 0) or not np.all(np.isfinite(deg.data)):
        raise ValueError("adjacency must have positive finite degrees")
    dinv = ops.power(deg, -0.5)
    return A * dinv * ops.swapaxes(dinv, -1, -2)


def propagate(H, A) -> Tensor:
    """``D^-1/2 A D^-1/2 H``; ``A`` is ``(..., N, N)`` and ``H`` is ``(..., N, d)``."""
    P = normalized(A)
    if not np.all(np.isfinite(P.data)):
        raise ValueError("non-finite propagation matrix")
    return ops.matmul(P, H)


def context_size(k: int, d: int) -> int:
    return d * sum(feature_count(l) for l in range(k + 1, N_SCALES + 1))


def dynamic_adjacency(k: int, higher: list, p: dict, eps_loop: float = EPS_LOOP) -> Tensor:
    """Adjacency of scale ``k`` from the higher-scale states ``[H^{k+1}, ..., H^5]``.

    ``higher`` holds tensors of shape ``(..., N_l, d)``. For ``k = 5`` it
    must be empty and only the learned bias ``A^5`` is used.
    """
    n = feature_count(k)
    A_bias = as_tensor(p[f"graph.A{k}"])
    if k == N_SCALES:
        if higher:
            raise ValueError("scale 5 has no higher-scale context")
        return nonneg_adjacency(A_bias, eps_loop)
    W1 = as_tensor(p[f"graph.edge{k}.W1"])
    flat = [ops.reshape(h, h.shape[:-2] + (h.shape[-2] * h.shape[-1],)) for h in higher]
    ctx = ops.concat(flat, axis=-1)
    if ctx.shape[-1] != W1.shape[1]:
        raise ValueError(f"edge function of scale {k} expects context width {W1.shape[1]}, got {ctx.shape[-1]}")
    lead = ctx.shape[:-1]
    c2 = ops.reshape(ctx, (-1, ctx.shape[-1]))
    hid = ops.tanh(ops.matmul(c2, W1.T) + p[f"graph.edge{k}.b1"])
    out = ops.matmul(hid, as_tensor(p[f"graph.edge{k}.W2"]).T) + p[f"graph.edge{k}.b2"]
    raw = ops.reshape(out, lead + (n, n)) + A_bias
    return nonneg_adjacency(raw, eps_loop)


def intra_scale(states: list, p: dict, eps_loop: float = EPS_LOOP) -> list:
    """Stage 1 for all five buckets; returns ``[H~^1, ..., H~^5]``."""
    out = []
    for k in range(1, N_SCALES + 1):
        A = dynamic_adjacency(k, states[k:], p, eps_loop)
        out.append(propagate(states[k - 1], A))
    return out


def attribute_stack(buckets: list, attr: int) -> Tensor:
    """Stack one attribute's vectors across the scales it reaches: ``(..., 6-k, d)``."""
    k = int(SCALE[attr])
    return ops.stack([buckets[l - 1][..., attr, :] for l in range(k, N_SCALES + 1)], axis=-2)


def cross_scale(tilde: list, p: dict, eps_loop: float = EPS_LOOP) -> list:
    """Stage 2. Returns buckets ``[H^^1, ..., H^^5]`` laid out like the input.

    Attributes of the same scale share the graph size, so each scale group is
    propagated in one batched product.
    """
    per_attr = {}
    for k in range(1, N_SCALES + 1):
        group = attrs_at_scale(k)
        m = N_SCALES + 1 - k
        X = ops.stack([attribute_stack(tilde, a) for a in group], axis=-3)  # (..., g, m, d)
        A = ops.stack([as_tensor(p[f"graph.cross.{TAXONOMY[a].name}"]) for a in group], axis=0)
        Y = propagate(X, nonneg_adjacency(A, eps_loop))
        for j, a in enumerate(group):
            for i in range(m):
                per_attr[(int(a), k + i)] = Y[..., j, i, :]
    out = []
    for l in range(1, N_SCALES + 1):
        out.append(ops.stack([per_attr[(a, l)] for a in range(feature_count(l))], axis=-2))
    return out


def residual_concat(h, h_tilde, h_hat) -> Tensor:
    return ops.concat([h, h_tilde, h_hat], axis=-1)


def propagate_all(states: list, p: dict, eps_loop: float = EPS_LOOP) -> list:
    """Both stages plus the residual concatenation; buckets of width ``3d``."""
    tilde = intra_scale(states, p, eps_loop)
    hat = cross_scale(tilde, p, eps_loop)
    return [residual_concat(h, ht, hh) for h, ht, hh in zip(states, tilde, hat)]


def spectral_radius(P: np.ndarray, tol: float = 1e-10, max_iter: int = 10_000, seed: int = 0) -> float:
    """Dominant ``|eigenvalue|`` by power iteration.

    Iterates ``v <- P v / |P v|`` and stops once the Rayleigh-style estimate
    ``|P v|`` changes by less than ``tol``. Suited to matrices with a real
    dominant eigenvalue, such as the symmetric propagation matrices here.
    """
    P = np.asarray(P, dtype=np.float64)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ValueError(f"square matrix required, got {P.shape}")
    v = np.random.default_rng(seed).uniform(0.5, 1.5, P.shape[0])
    v /= np.linalg.norm(v)
    prev = None
    last = []
    for _ in range(max_iter):
        w = P @ v
        est = float(np.linalg.norm(w))
        if est == 0.0:
            return 0.0
        last = [prev, est]
        if prev is not None and abs(est - prev) < tol:
            return est
        prev = est
        v = w / est
    raise ConvergenceError(f"power iteration did not converge; last iterates {last}")


def init_graph_params(init, d: int, hidden: int = 64) -> dict:
    p = {}
    for k in range(1, N_SCALES + 1):
        n = feature_count(k)
        p[f"graph.A{k}"] = np.zeros((n, n))
        if k < N_SCALES:
            c = context_size(k, d)
            p[f"graph.edge{k}.W1"] = init(f"graph.edge{k}.W1", (hidden, c), c)
            p[f"graph.edge{k}.b1"] = np.zeros(hidden)
            p[f"graph.edge{k}.W2"] = init(f"graph.edge{k}.W2", (n * n, hidden), hidden)
            p[f"graph.edge{k}.b2"] = np.zeros(n * n)
    for s in TAXONOMY:
        m = layer_count(s.id)
        p[f"graph.cross.{s.name}"] = np.zeros((m, m))
    return p


def adjacency_rows(k: int, A: np.ndarray) -> list[tuple[int, int, int, float]]:
    """``(scale, i, j, weight)`` rows for exporting one adjacency snapshot."""
    A = np.asarray(A)
    return [(k, i, j, float(A[i, j])) for i in range(A.shape[0]) for j in range(A.shape[1])]
