"""Type-specific attribute encoders.

All functions accept plain arrays or :class:`~aisimpute.numeric.Tensor` and
broadcast over leading axes, so the same code encodes one value or a whole
``(B, T)`` batch. Parameters are looked up by name in a flat dict (see
:func:`init_encoder_params`).
"""

from __future__ import annotations

import numpy as np

from .core import CONTINUOUS, CYCLICAL, DISCRETE, N_ATTRS, TAXONOMY, Attr
from .numeric import ops
from .numeric.tensor import Tensor

HOUR = 3600.0
PERIODS = (24 * HOUR, 168 * HOUR, 720 * HOUR, 8760 * HOUR)


def harmonic_features(lon_deg, lat_deg) -> np.ndarray:
    """``[sin l cos p, cos l cos p, sin p, sin 2l cos p, cos 2l cos p]`` along a new last axis."""
    lam = np.radians(np.asarray(lon_deg, dtype=np.float64))
    phi = np.radians(np.asarray(lat_deg, dtype=np.float64))
    if not (np.all(np.isfinite(lam)) and np.all(np.isfinite(phi))):
        raise ValueError("coordinates must be finite")
    cp = np.cos(phi)
    return np.stack([np.sin(lam) * cp, np.cos(lam) * cp, np.sin(phi),
                     np.sin(2 * lam) * cp, np.cos(2 * lam) * cp], axis=-1)


def time_features(tau) -> np.ndarray:
    """Interleaved ``(sin, cos)`` at daily, weekly, monthly and yearly periods.

    The phase is reduced modulo each period before scaling by 2*pi so large
    epoch values keep full precision.
    """
    tau = np.asarray(tau, dtype=np.float64)
    if not np.all(np.isfinite(tau)):
        raise ValueError("timestamps must be finite")
    cols = []
    for p in PERIODS:
        ang = 2.0 * np.pi * (np.mod(tau, p) / p)
        cols += [np.sin(ang), np.cos(ang)]
    return np.stack(cols, axis=-1)


def angle_basis(x_deg) -> np.ndarray:
    x = np.asarray(x_deg, dtype=np.float64)
    r = np.pi * x / 180.0
    return np.stack([np.sin(r), np.cos(r)], axis=-1)


def _affine(x, W, b):
    """``x @ W.T + b`` for ``x`` with arbitrary leading axes."""
    W = ops.as_tensor(W)
    lead = x.shape[:-1]
    flat = ops.reshape(ops.as_tensor(x), (-1, x.shape[-1]))
    return ops.reshape(ops.matmul(flat, W.T), lead + (W.shape[0],)) + b


def encode_coordinates(lon_deg, lat_deg, p: dict):
    f = harmonic_features(lon_deg, lat_deg)
    return (ops.tanh(_affine(f, p["enc.lon.W"], p["enc.lon.b"])),
            ops.tanh(_affine(f, p["enc.lat.W"], p["enc.lat.b"])))


def encode_timestamp(tau, p: dict):
    return ops.tanh(_affine(time_features(tau), p["enc.time.W"], p["enc.time.b"]))


def encode_cyclical(x_deg, attr: Attr, p: dict):
    x = np.asarray(x_deg, dtype=np.float64)
    if np.any((x < 0) | (x >= 360)):
        raise ValueError("cyclical value out of [0,360)")
    n = TAXONOMY[attr].name
    return ops.tanh(_affine(angle_basis(x), p[f"enc.{n}.W"], p[f"enc.{n}.b"]))


def normalize_continuous(x, attr: Attr, stats, p: dict):
    """``((x - mu) / sigma) * alpha + beta_norm``."""
    mu, sigma = stats.mean.get(attr), stats.std.get(attr)
    if mu is None or sigma is None or not np.isfinite(sigma):
        raise ValueError(f"no normalization stats for {TAXONOMY[attr].name}")
    n = TAXONOMY[attr].name
    z = (np.asarray(x, dtype=np.float64) - mu) / sigma
    return z * ops.as_tensor(p[f"enc.{n}.alpha"]) + p[f"enc.{n}.beta"]


def encode_continuous(x, attr: Attr, stats, p: dict):
    n = TAXONOMY[attr].name
    xh = normalize_continuous(x, attr, stats, p)
    W = ops.as_tensor(p[f"enc.{n}.W"])
    return ops.relu(ops.reshape(xh, xh.shape + (1,)) * ops.reshape(W, (W.shape[0],)) + p[f"enc.{n}.b"])


def encode_discrete(x, attr: Attr, p: dict, n_categories: int):
    idx = np.asarray(x)
    if np.any((idx < 0) | (idx >= n_categories)) or np.any(idx != np.floor(idx)):
        raise ValueError(f"category index out of range 0..{n_categories - 1}")
    n = TAXONOMY[attr].name
    Wt = ops.as_tensor(p[f"enc.{n}.W"]).T  # |C| x d, row c = column c of W
    return ops.tanh(ops.getitem(Wt, idx.astype(np.int64)) + p[f"enc.{n}.b"])


def encode_batch(x: np.ndarray, vis: np.ndarray, p: dict, stats, specs=TAXONOMY,
                 coord_fill: np.ndarray | None = None) -> Tensor:
    """Embed a ``(B, T, 12)`` grid into ``(B, T, 12, d)``.

    Cells with ``vis`` false take the learned placeholder row of their
    attribute. When only one coordinate of a pair is visible, the other one
    is taken from ``coord_fill`` (a local mean supplied by the caller) so the
    harmonic map can still be evaluated.
    """
    B, T, _ = x.shape
    ph = ops.as_tensor(p["enc.placeholder"])
    d = ph.shape[1]
    cols = []

    def safe(a, fill=0.0):
        return np.where(vis[..., a], x[..., a], fill)

    lon_fill = coord_fill[..., 0] if coord_fill is not None else 0.0
    lat_fill = coord_fill[..., 1] if coord_fill is not None else 0.0
    lon = np.where(vis[..., Attr.LON], x[..., Attr.LON], np.nan_to_num(lon_fill))
    lat = np.where(vis[..., Attr.LAT], x[..., Attr.LAT], np.nan_to_num(lat_fill))
    e_lon, e_lat = encode_coordinates(lon, lat, p)
    for a in range(N_ATTRS):
        if a == Attr.LON:
            e = e_lon
        elif a == Attr.LAT:
            e = e_lat
        elif a == Attr.TIME:
            e = encode_timestamp(safe(a), p)
        elif a in CYCLICAL:
            e = encode_cyclical(safe(a), Attr(a), p)
        elif a in CONTINUOUS:
            e = encode_continuous(safe(a, stats.mean[a]), Attr(a), stats, p)
        else:
            e = encode_discrete(safe(a), Attr(a), p, specs[a].category_count)
        cols.append(ops.where(vis[..., a, None], e, ops.reshape(ph[a], (1, 1, d))))
    return ops.stack(cols, axis=2)


def init_encoder_params(init, d: int, specs=TAXONOMY, cont_shift: float = 3.0) -> dict:
    """``init(name, shape, fan_in)`` returns a seeded weight array."""
    p = {}
    for a in (Attr.LON, Attr.LAT):
        n = TAXONOMY[a].name
        p[f"enc.{n}.W"] = init(f"enc.{n}.W", (d, 5), 5)
        p[f"enc.{n}.b"] = np.zeros(d)
    p["enc.time.W"] = init("enc.time.W", (d, 8), 8)
    p["enc.time.b"] = np.zeros(d)
    for a in CYCLICAL:
        n = TAXONOMY[a].name
        p[f"enc.{n}.W"] = init(f"enc.{n}.W", (d, 2), 2)
        p[f"enc.{n}.b"] = np.zeros(d)
    for a in CONTINUOUS:
        n = TAXONOMY[a].name
        p[f"enc.{n}.alpha"] = np.array(1.0)
        p[f"enc.{n}.beta"] = np.array(cont_shift)
        p[f"enc.{n}.W"] = init(f"enc.{n}.W", (d, 1), 1 + cont_shift ** 2)
        p[f"enc.{n}.b"] = np.zeros(d)
    for a in DISCRETE:
        n = TAXONOMY[a].name
        c = specs[a].category_count
        p[f"enc.{n}.W"] = init(f"enc.{n}.W", (d, c), 1)
        p[f"enc.{n}.b"] = np.zeros(d)
    p["enc.placeholder"] = init("enc.placeholder", (N_ATTRS, d), 1) * 0.5
    return p
