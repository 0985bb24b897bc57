"""Fixed-weight hierarchical leaky reservoir (deep echo state network).

Layer ``l`` receives the layer ``l-1`` states of every attribute that
already entered the stack plus the embeddings of the attributes whose own
time scale is ``l``. All attribute streams in a layer share that layer's
weights, so the number of streams at layer ``l`` is ``feature_count(l)``.

Per step and stream::

    hbar_t = tanh(W_in x_t + W_rec h_{t-1} + b)
    h_t    = (1 - leak) h_{t-1} + leak hbar_t

Weights never receive gradients, but gradients do flow through the states
back to the embeddings, via the fused :func:`leaky_scan` operation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import N_SCALES, SCALE, attrs_at_scale, feature_count
from .numeric import ops
from .numeric.rng import rng_stream
from .numeric.tensor import Tensor, as_tensor, make_node

DEFAULT_LEAKS = (1.0, 0.5, 0.25, 0.125, 0.0625)


@dataclass
class ReservoirLayer:
    W_in: np.ndarray
    W_rec: np.ndarray
    b: np.ndarray
    leak: float
    feasible: bool = True


@dataclass
class ReservoirStack:
    layers: list[ReservoirLayer]
    rho: float
    seed: int
    tag: str = "fwd"

    @property
    def d(self) -> int:
        return self.layers[0].W_rec.shape[0]

    def arrays(self, prefix: str) -> dict[str, np.ndarray]:
        out = {}
        for i, L in enumerate(self.layers, start=1):
            out[f"{prefix}{self.tag}.{i}.W_in"] = L.W_in
            out[f"{prefix}{self.tag}.{i}.W_rec"] = L.W_rec
            out[f"{prefix}{self.tag}.{i}.b"] = L.b
        return out


def effective_map(W_rec: np.ndarray, leak: float) -> np.ndarray:
    return (1.0 - leak) * np.eye(W_rec.shape[0]) + leak * W_rec


def effective_radius(W_rec: np.ndarray, leak: float) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(effective_map(W_rec, leak)))))


def scale_to_radius(W: np.ndarray, leak: float, rho: float, tol: float = 1e-13) -> tuple[np.ndarray, bool]:
    """Rescale ``W`` so that ``(1-leak) I + leak c W`` has spectral radius ``rho``.

    The radius of the leaky map never drops below ``1 - leak`` for a generic
    random ``W``, so when ``1 - leak >= rho`` the target is out of reach; in
    that case ``W`` itself is scaled to radius ``rho`` and ``False`` is
    returned. Otherwise ``c`` is found by bisection on exact eigenvalues.
    """
    mu = np.linalg.eigvals(W)
    if leak >= 1.0 or 1.0 - leak >= rho:
        return W * (rho / np.max(np.abs(mu))), leak >= 1.0

    def radius(c):
        return np.max(np.abs((1.0 - leak) + leak * c * mu))

    lo, hi = 0.0, 1.0
    while radius(hi) < rho:
        hi *= 2.0
    while hi - lo > tol * hi:
        mid = 0.5 * (lo + hi)
        if radius(mid) < rho:
            lo = mid
        else:
            hi = mid
    return W * (0.5 * (lo + hi)), True


def init_reservoir(seed: int, d: int, rho: float = 0.9, leaks=DEFAULT_LEAKS,
                   input_scale: float | None = None, bias_scale: float = 0.1,
                   tag: str = "fwd") -> ReservoirStack:
    """Draw uniform(-1, 1) weights from seeded streams and fix the spectral radius.

    Weights are rounded to float32 precision so that a checkpoint (which
    stores float32) reproduces them exactly.
    """
    if not 0.0 < rho < 1.0:
        raise ValueError(f"spectral target must lie in (0,1), got {rho}")
    if len(leaks) != N_SCALES or any(not 0.0 < g <= 1.0 for g in leaks):
        raise ValueError(f"need {N_SCALES} leak rates in (0,1], got {leaks}")
    if input_scale is None:
        input_scale = 1.0 / np.sqrt(d)
    layers = []
    for l, leak in enumerate(leaks, start=1):
        def u(name, shape):
            return 2.0 * rng_stream(seed, ("reservoir", tag, l, name)).uniform(shape) - 1.0

        W_rec, ok = scale_to_radius(u("W_rec", (d, d)), leak, rho)
        f32 = lambda a: a.astype(np.float32).astype(np.float64)  # noqa: E731
        layers.append(ReservoirLayer(f32(input_scale * u("W_in", (d, d))), f32(W_rec),
                                     f32(bias_scale * u("b", (d,))), float(leak), ok))
    return ReservoirStack(layers, rho, seed, tag)


def step(layer: ReservoirLayer, h_prev: np.ndarray, x: np.ndarray) -> np.ndarray:
    hbar = np.tanh(layer.W_in @ x + layer.W_rec @ h_prev + layer.b)
    return (1.0 - layer.leak) * h_prev + layer.leak * hbar


def leaky_scan(U, W_rec: np.ndarray, leak: float, h0: np.ndarray | None = None) -> Tensor:
    """Run the leaky recurrence along axis 1 of a precomputed drive ``U``.

    ``U`` has shape ``(B, T, ..., d)`` and already includes ``W_in x + b``.
    Returns all states with the same shape. The backward rule is
    back-propagation through time over the stored ``tanh`` outputs.
    """
    U = as_tensor(U)
    u = U.data
    T = u.shape[1]
    h = np.zeros(u.shape[:1] + u.shape[2:]) if h0 is None else np.broadcast_to(h0, u.shape[:1] + u.shape[2:]).copy()
    H = np.empty_like(u)
    S = np.empty_like(u)
    Wt = W_rec.T
    for t in range(T):
        s = np.tanh(u[:, t] + h @ Wt)
        h = (1.0 - leak) * h + leak * s
        S[:, t] = s
        H[:, t] = h

    def backward(G):
        gU = np.empty_like(G)
        gh = np.zeros_like(G[:, 0])
        for t in range(T - 1, -1, -1):
            gh = gh + G[:, t]
            ga = leak * gh * (1.0 - S[:, t] ** 2)
            gU[:, t] = ga
            gh = (1.0 - leak) * gh + ga @ W_rec
        return (gU,)

    return make_node(H, (U,), backward)


def _drive(X, layer: ReservoirLayer) -> Tensor:
    X = as_tensor(X)
    return ops.matmul(X, Tensor(layer.W_in.T)) + layer.b


def run_stack(E, stack: ReservoirStack, h0: list | None = None) -> list[Tensor]:
    """Feed embeddings ``E`` of shape ``(B, T, 12, d)`` through the stack.

    Returns the per-layer states ``H^l`` with shapes ``(B, T, N_l, d)``,
    streams in taxonomy order.
    """
    E = as_tensor(E)
    states = []
    prev = None
    for l, layer in enumerate(stack.layers, start=1):
        lo, hi = (feature_count(l - 1) if l > 1 else 0), feature_count(l)
        new = ops.slice_axis(E, lo, hi, axis=2)
        X = new if prev is None else ops.concat([prev, new], axis=2)
        prev = leaky_scan(_drive(X, layer), layer.W_rec, layer.leak, None if h0 is None else h0[l - 1])
        states.append(prev)
    return states


def reverse_index(lengths, T: int) -> tuple[np.ndarray, np.ndarray]:
    """Index arrays that reverse each sequence within its own length (padding stays put)."""
    lengths = np.asarray(lengths)
    t = np.arange(T)[None, :]
    idx = np.where(t < lengths[:, None], lengths[:, None] - 1 - t, t)
    b = np.broadcast_to(np.arange(len(lengths))[:, None], idx.shape)
    return b, idx


def run_bidirectional(E, fwd: ReservoirStack, rev: ReservoirStack | None, lengths=None) -> list[Tensor]:
    """Average the forward states with those of ``rev`` run on time-reversed input.

    With ``rev`` None this is exactly :func:`run_stack`.
    """
    states = run_stack(E, fwd)
    if rev is None:
        return states
    E = as_tensor(E)
    B, T = E.shape[:2]
    lengths = np.full(B, T) if lengths is None else np.asarray(lengths)
    bi, ti = reverse_index(lengths, T)
    back = run_stack(ops.getitem(E, (bi, ti)), rev)
    return [(hf + ops.getitem(hb, (bi, ti))) * 0.5 for hf, hb in zip(states, back)]


def run_attribute(embeddings: np.ndarray, scale: int, stack: ReservoirStack,
                  h0: dict | None = None) -> dict[int, np.ndarray]:
    """States of a single attribute stream of time scale ``scale``.

    ``embeddings`` is ``(T, d)``; the result maps each layer ``l`` in
    ``scale..5`` to its ``(T, d)`` states.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    out = {}
    for l in range(scale, N_SCALES + 1):
        layer = stack.layers[l - 1]
        h = np.zeros(stack.d) if h0 is None else np.array(h0[l])
        hs = np.empty_like(x)
        for t in range(x.shape[0]):
            h = step(layer, h, x[t])
            hs[t] = h
        out[l] = hs
        x = hs
    return out


@dataclass
class MultiScaleState:
    """Per-timestep multi-scale node features ``H = [H^1, ..., H^5]``."""

    buckets: list
    sizes: tuple[int, ...] = field(init=False)

    def __post_init__(self):
        self.sizes = tuple(int(b.shape[-2]) for b in self.buckets)
        expect = tuple(feature_count(l) for l in range(1, N_SCALES + 1))
        if self.sizes != expect:
            raise ValueError(f"scale buckets {self.sizes} do not match feature counts {expect}")

    @property
    def n_nodes(self) -> int:
        return sum(self.sizes)

    def flat(self):
        return ops.concat(self.buckets, axis=-2)


def consolidate(states: list) -> MultiScaleState:
    if len(states) != N_SCALES:
        raise ValueError(f"expected {N_SCALES} layer outputs, got {len(states)}")
    return MultiScaleState(list(states))


def attribute_layers(attr) -> tuple[int, ...]:
    """Layers an attribute traverses: its own scale up to the top."""
    return tuple(range(int(SCALE[attr]), N_SCALES + 1))


__all__ = [
    "DEFAULT_LEAKS", "MultiScaleState", "ReservoirLayer", "ReservoirStack", "attribute_layers",
    "attrs_at_scale", "consolidate", "effective_map", "effective_radius", "init_reservoir",
    "leaky_scan", "reverse_index", "run_attribute", "run_bidirectional", "run_stack",
    "scale_to_radius", "step",
]
