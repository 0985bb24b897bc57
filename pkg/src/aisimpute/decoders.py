"""Gated multi-scale fusion, type-specific decoders and the loss terms."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import CONTINUOUS, CYCLICAL, DISCRETE, N_ATTRS, N_SCALES, TAXONOMY, Attr, feature_count
from .numeric import ops
from .numeric.tensor import Tensor, as_tensor, make_node

E_INV = float(np.exp(-1.0))


# ---------------------------------------------------------------- fusion

def _pad_nodes(x, n_total: int = N_ATTRS):
    x = as_tensor(x)
    n = x.shape[-2]
    if n == n_total:
        return x
    zeros = np.zeros(x.shape[:-2] + (n_total - n, x.shape[-1]))
    return ops.concat([x, zeros], axis=-2)


def gated_fusion(hstar: list, p: dict) -> Tensor:
    """Fuse the five ``3d``-wide buckets into one ``d`` vector per attribute.

    ``hstar[l-1]`` has shape ``(..., N_l, 3d)``. Attributes missing from a
    bucket (scale above ``l``) contribute zero vectors. Returns
    ``(..., 12, d)`` with ``e~_x = sum_l g_l * (W_e^l h*^l_x)`` and
    ``g = sigmoid(W_g,x [h*^1; ...; h*^5] + b_g,x)``.
    """
    proj = [_pad_nodes(ops.matmul(h, as_tensor(p[f"fuse.We{l}"]).T)) for l, h in enumerate(hstar, start=1)]
    P = ops.stack(proj, axis=-2)                                   # (..., 12, 5, d)
    X = ops.stack([_pad_nodes(h) for h in hstar], axis=-2)        # (..., 12, 5, 3d)
    lead = X.shape[:-3]
    width = X.shape[-1] * N_SCALES
    Xf = ops.swapaxes(ops.reshape(X, (-1, N_ATTRS, width)), 0, 1)  # (12, M, 15d)
    G = ops.matmul(Xf, ops.swapaxes(as_tensor(p["fuse.Wg"]), -1, -2))  # (12, M, 5)
    G = ops.reshape(ops.swapaxes(G, 0, 1), lead + (N_ATTRS, N_SCALES)) + p["fuse.bg"]
    g = ops.sigmoid(G)
    return ops.sum(ops.reshape(g, g.shape + (1,)) * P, axis=-2)


def fuse_attribute(hstar_x: list, Wg, bg, We: list) -> Tensor:
    """Single-attribute form of :func:`gated_fusion`; ``None`` entries are zero blocks."""
    width = next(h for h in hstar_x if h is not None).shape[-1]
    blocks = [as_tensor(np.zeros(width)) if h is None else as_tensor(h) for h in hstar_x]
    g = ops.sigmoid(ops.reshape(ops.matmul(as_tensor(Wg), ops.reshape(ops.concat(blocks, axis=0), (-1, 1))),
                                (N_SCALES,)) + bg)
    out = None
    for l in range(N_SCALES):
        term = g[l] * ops.reshape(ops.matmul(as_tensor(We[l]), ops.reshape(blocks[l], (-1, 1))), (-1,))
        out = term if out is None else out + term
    return out


# ---------------------------------------------------------------- decoders

def _affine(x, W, b):
    x, W = as_tensor(x), as_tensor(W)
    lead = x.shape[:-1]
    flat = ops.reshape(x, (-1, x.shape[-1]))
    return ops.reshape(ops.matmul(flat, W.T), lead + (W.shape[0],)) + b


def coordinate_offsets(e_lon, e_lat, p: dict) -> tuple[Tensor, Tensor]:
    """``delta = tanh(W [e_lon; e_lat] + b) * step`` per channel, in degrees."""
    c = ops.concat([e_lon, e_lat], axis=-1)
    out = []
    for n in ("lon", "lat"):
        z = _affine(c, p[f"dec.{n}.W"], p[f"dec.{n}.b"])
        out.append(ops.tanh(ops.reshape(z, z.shape[:-1])) * p[f"dec.{n}.step"])
    return out[0], out[1]


def wrap_lon(x):
    return (np.asarray(x) + 180.0) % 360.0 - 180.0


def finish_coordinates(lon, lat) -> tuple[np.ndarray, np.ndarray]:
    """Wrap longitude into ``[-180, 180)`` and clamp latitude to ``[-90, 90]``."""
    lon = wrap_lon(lon)
    lon = np.where(lon >= 180.0, -180.0, lon)
    return lon, np.clip(lat, -90.0, 90.0)


def neighbor_base(lon: np.ndarray, lat: np.ndarray, vis_pair: np.ndarray, window: int = 5,
                  valid: np.ndarray | None = None) -> np.ndarray:
    """Local coordinate anchor for every step of ``(B, T)`` grids.

    Mean of the visible pairs within ``window`` steps, or the mean over the
    whole sequence when the window holds none. Rows with no visible pair at
    all get NaN (callers raise if they need an anchor there).
    """
    lon = np.where(vis_pair, lon, 0.0)
    lat = np.where(vis_pair, lat, 0.0)
    w = vis_pair.astype(np.float64)
    B, T = w.shape

    def window_sum(a):
        c = np.concatenate([np.zeros((B, 1)), np.cumsum(a, axis=1)], axis=1)
        t = np.arange(T)
        hi = np.minimum(t + window + 1, T)
        lo = np.maximum(t - window, 0)
        return c[:, hi] - c[:, lo]

    n = window_sum(w)
    out = np.empty((B, T, 2))
    with np.errstate(invalid="ignore", divide="ignore"):
        local = np.stack([window_sum(lon) / n, window_sum(lat) / n], axis=-1)
        tot = w.sum(axis=1, keepdims=True)
        glob = np.stack([lon.sum(axis=1, keepdims=True) / tot, lat.sum(axis=1, keepdims=True) / tot], axis=-1)
    glob = np.broadcast_to(glob, (B, T, 2))
    out = np.where((n > 0)[..., None], local, glob)
    return out


def decode_coordinates(base, e_lon, e_lat, p: dict) -> tuple[np.ndarray, np.ndarray]:
    """Base estimate plus learned offsets, wrapped and clamped."""
    base = np.asarray(base, dtype=np.float64)
    if np.any(~np.isfinite(base)):
        raise ValueError("no coordinate anchor")
    dl, dp = coordinate_offsets(e_lon, e_lat, p)
    return finish_coordinates(base[..., 0] + dl.data, base[..., 1] + dp.data)


def intensity(e_tau, p: dict) -> Tensor:
    """``eta = softplus(eta0) + mean(softplus(W2 silu(W1 e + b1) + b2))``."""
    h = ops.silu(_affine(e_tau, p["dec.time.W1"], p["dec.time.b1"]))
    f = ops.mean(ops.softplus(_affine(h, p["dec.time.W2"], p["dec.time.b2"])), axis=-1)
    return ops.softplus(as_tensor(p["dec.time.eta0"])) + f


def interval(eta, u=E_INV):
    """``-log(u) / eta``; with the default ``u = e^-1`` this is the mean ``1/eta``."""
    return ops.div(-np.log(u), eta)


def decode_timestamp(tau_prev: float, eta: float, mode: str = "expected", rng=None, unit: float = 1.0) -> float:
    if mode == "expected":
        u = E_INV
    elif mode == "sample":
        if rng is None:
            raise ValueError("sample mode needs a random stream")
        u = rng.uniform()
    else:
        raise ValueError(f"unknown timestamp mode {mode!r}")
    if not (np.isfinite(eta) and eta > 0):
        raise FloatingPointError(f"invalid intensity {eta}")
    return float(tau_prev + unit * (-np.log(u)) / eta)


def cyclical_direction(e_c, attr: Attr, p: dict) -> Tensor:
    """Two-layer map to ``R^2`` followed by normalization to the unit circle."""
    n = TAXONOMY[attr].name
    h = _affine(ops.tanh(_affine(e_c, p[f"dec.{n}.W1"], p[f"dec.{n}.b1"])), p[f"dec.{n}.W2"], p[f"dec.{n}.b2"])
    norm = ops.l2norm(h, axis=-1, keepdims=True)
    return h / ops.clip(norm, 1e-12, np.inf)


def direction_to_angle(e_hat) -> np.ndarray:
    e = np.asarray(e_hat.data if isinstance(e_hat, Tensor) else e_hat, dtype=np.float64)
    ang = np.degrees(np.arctan2(e[..., 0], e[..., 1])) % 360.0
    return np.where(ang >= 360.0, 0.0, ang)


def decode_cyclical(h_c) -> tuple[float, np.ndarray]:
    """Angle in ``[0, 360)`` and unit vector from a raw 2-vector ``(sin, cos)``."""
    h = np.asarray(h_c, dtype=np.float64)
    nrm = float(np.linalg.norm(h))
    if nrm < 1e-12:
        raise ValueError("degenerate direction")
    e = h / max(nrm, 1e-12)
    return float(direction_to_angle(e)), e


def continuous_output(e_n, attr: Attr, p: dict) -> Tensor:
    """Normalized-space prediction ``(relu(W e + b) - beta_norm) / alpha``."""
    n = TAXONOMY[attr].name
    h = ops.relu(_affine(e_n, p[f"dec.{n}.W"], p[f"dec.{n}.b"]))
    h = ops.reshape(h, h.shape[:-1])
    return (h - p[f"enc.{n}.beta"]) / as_tensor(p[f"enc.{n}.alpha"])


def decode_continuous(h_n, mu, sigma, alpha, beta_norm):
    return mu + sigma * (np.asarray(h_n) - beta_norm) / alpha


def discrete_logits(e_d, attr: Attr, p: dict) -> Tensor:
    n = TAXONOMY[attr].name
    return _affine(e_d, p[f"dec.{n}.W"], p[f"dec.{n}.b"])


def decode_discrete(logits) -> tuple[np.ndarray, np.ndarray]:
    """Softmax probabilities and the lowest-index argmax."""
    probs = ops.softmax(as_tensor(logits), axis=-1).data
    return probs, np.argmax(probs, axis=-1)


@dataclass
class Decoded:
    d_lon: Tensor
    d_lat: Tensor
    eta: Tensor
    cyc: dict
    cont: dict
    logits: dict


def decode_all(e, p: dict) -> Decoded:
    """Run every decoder head on fused embeddings ``(..., 12, d)``."""
    e = as_tensor(e)

    def col(a):
        return e[..., int(a), :]

    d_lon, d_lat = coordinate_offsets(col(Attr.LON), col(Attr.LAT), p)
    return Decoded(d_lon, d_lat, intensity(col(Attr.TIME), p),
                   {a: cyclical_direction(col(a), a, p) for a in CYCLICAL},
                   {a: continuous_output(col(a), a, p) for a in CONTINUOUS},
                   {a: discrete_logits(col(a), a, p) for a in DISCRETE})


def init_decoder_params(init, d: int, specs=TAXONOMY, step_init: float = 0.01,
                        cont_shift: float = 3.0) -> dict:
    p = {}
    for l in range(1, N_SCALES + 1):
        p[f"fuse.We{l}"] = init(f"fuse.We{l}", (d, 3 * d), 3 * d)
    p["fuse.Wg"] = init("fuse.Wg", (N_ATTRS, N_SCALES, 15 * d), 15 * d)
    p["fuse.bg"] = np.zeros((N_ATTRS, N_SCALES))
    for n in ("lon", "lat"):
        p[f"dec.{n}.W"] = init(f"dec.{n}.W", (1, 2 * d), 2 * d)
        p[f"dec.{n}.b"] = np.zeros(1)
        p[f"dec.{n}.step"] = np.array(step_init)
    p["dec.time.eta0"] = np.array(0.0)
    p["dec.time.W1"] = init("dec.time.W1", (d, d), d)
    p["dec.time.b1"] = np.zeros(d)
    p["dec.time.W2"] = init("dec.time.W2", (d, d), d)
    p["dec.time.b2"] = np.zeros(d)
    for a in CYCLICAL:
        n = TAXONOMY[a].name
        p[f"dec.{n}.W1"] = init(f"dec.{n}.W1", (d, d), d)
        p[f"dec.{n}.b1"] = np.zeros(d)
        p[f"dec.{n}.W2"] = init(f"dec.{n}.W2", (2, d), d)
        p[f"dec.{n}.b2"] = np.zeros(2)
    for a in CONTINUOUS:
        n = TAXONOMY[a].name
        p[f"dec.{n}.W"] = init(f"dec.{n}.W", (1, d), d) * 0.1
        p[f"dec.{n}.b"] = np.array([cont_shift])
    for a in DISCRETE:
        n = TAXONOMY[a].name
        p[f"dec.{n}.W"] = init(f"dec.{n}.W", (specs[a].category_count, d), d)
        p[f"dec.{n}.b"] = np.zeros(specs[a].category_count)
    return p


# ---------------------------------------------------------------- losses

def safe_sqrt(x) -> Tensor:
    """Square root whose gradient at 0 is taken as 0 instead of infinity."""
    x = as_tensor(x)
    out = np.sqrt(np.maximum(x.data, 0.0))

    def backward(g):
        safe = np.where(out > 0, out, 1.0)
        return (np.where(out > 0, 0.5 * g / safe, 0.0),)

    return make_node(out, (x,), backward)


def haversine(lon1, lat1, lon2, lat2) -> Tensor:
    """Central angle in radians between points given in degrees."""
    r = np.pi / 180.0
    l1, p1 = as_tensor(lon1) * r, as_tensor(lat1) * r
    l2, p2 = as_tensor(lon2) * r, as_tensor(lat2) * r
    a = ops.sin((p2 - p1) * 0.5) ** 2 + ops.cos(p1) * ops.cos(p2) * ops.sin((l2 - l1) * 0.5) ** 2
    return 2.0 * _asin_clamped(safe_sqrt(a))


def _asin_clamped(x) -> Tensor:
    """``asin(clip(x, 0, 1))`` with the derivative capped near 1."""
    x = as_tensor(x)
    c = np.clip(x.data, 0.0, 1.0)
    out = np.arcsin(c)

    def backward(g):
        inside = (x.data >= 0.0) & (x.data < 1.0)
        return (np.where(inside, g / np.sqrt(np.maximum(1.0 - c * c, 1e-300)), 0.0),)

    return make_node(out, (x,), backward)


def _masked_mean(values, mask) -> Tensor:
    mask = np.asarray(mask, dtype=bool)
    n = int(mask.sum())
    if n == 0:
        return Tensor(0.0)
    return ops.sum(ops.where(mask, values, 0.0)) / n


def loss_coordinates(lon_hat, lat_hat, lon, lat, mask=None) -> Tensor:
    d = haversine(lon_hat, lat_hat, lon, lat)
    return _masked_mean(d, np.ones(d.shape, bool) if mask is None else mask)


def loss_timestamp(interval_hat, interval_true, mask=None) -> Tensor:
    """Mean squared interval error; feed either intervals or ``tau_hat - tau_prev``."""
    err = as_tensor(interval_hat) - np.asarray(interval_true, dtype=np.float64)
    return _masked_mean(err * err, np.ones(err.shape, bool) if mask is None else mask)


def loss_cyclical(x_deg, e_hat, mask=None) -> Tensor:
    diff = as_tensor(e_hat) - angle_basis_np(x_deg)
    d = ops.l2norm(diff, axis=-1)
    return _masked_mean(d, np.ones(d.shape, bool) if mask is None else mask)


def angle_basis_np(x_deg) -> np.ndarray:
    r = np.radians(np.nan_to_num(np.asarray(x_deg, dtype=np.float64)))
    return np.stack([np.sin(r), np.cos(r)], axis=-1)


def loss_continuous(pred, truth, mask=None) -> Tensor:
    err = as_tensor(pred) - np.nan_to_num(np.asarray(truth, dtype=np.float64))
    return _masked_mean(err * err, np.ones(err.shape, bool) if mask is None else mask)


def loss_discrete(probs, labels, mask=None) -> Tensor:
    """Cross-entropy ``-log(p_y + 1e-12)`` averaged over targets."""
    probs = as_tensor(probs)
    lab = np.nan_to_num(np.asarray(labels, dtype=np.float64)).astype(np.int64)
    onehot = np.zeros(probs.shape)
    np.put_along_axis(onehot, lab[..., None], 1.0, axis=-1)
    ce = -ops.sum(ops.log(probs + 1e-12) * onehot, axis=-1)
    return _masked_mean(ce, np.ones(ce.shape, bool) if mask is None else mask)


def feature_counts() -> tuple[int, ...]:
    return tuple(feature_count(l) for l in range(1, N_SCALES + 1))
