"""Scale-aware target masking and intensity-controlled input noise.

Every random decision is drawn from a stream keyed by
``(seed, kind, sequence-or-vessel, attribute)``, so results do not depend on
processing order and a given cell always sees the same draws. In particular
the noise draws do not depend on the intensity, which makes corruption at
a larger intensity a strict amplification of a smaller one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (CONTINUOUS, CYCLICAL, DISCRETE, TAXONOMY, Attr, RecordSequence,
                   attrs_at_scale, segment_voyages, taxonomy)
from .ingest import Dataset, NormStats
from .numeric.rng import rng_stream

POINT_ATTRS = attrs_at_scale(1) + attrs_at_scale(2)
BLOCK_ATTRS = attrs_at_scale(3) + attrs_at_scale(4)
ENTIRE_ATTRS = attrs_at_scale(5)


@dataclass(frozen=True)
class MaskConfig:
    ratio: float = 0.3
    seed: int = 0
    point: bool = True
    block: bool = True
    entire: bool = True

    def __post_init__(self):
        if not 0.0 <= self.ratio <= 1.0:
            raise ValueError(f"mask ratio must be in [0,1], got {self.ratio}")


@dataclass(frozen=True)
class NoiseConfig:
    gamma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError(f"noise intensity must be >= 0, got {self.gamma}")


def point_mask(seq: RecordSequence, r: float, seed: int) -> np.ndarray:
    """Target each observed scale-1/2 cell independently with probability ``r``."""
    tgt = seq.target_mask.copy()
    for a in POINT_ATTRS:
        u = rng_stream(seed, ("point", seq.key, int(a))).uniform(seq.T)
        tgt[:, a] |= seq.obs_mask[:, a] & (u < r)
    return tgt


def block_mask(seq: RecordSequence, r: float, seed: int) -> np.ndarray:
    """Per scale-3/4 attribute and voyage segment, target the whole segment with probability ``r``."""
    tgt = seq.target_mask.copy()
    segs = segment_voyages(seq).segments
    for a in BLOCK_ATTRS:
        u = rng_stream(seed, ("block", seq.key, int(a))).uniform(len(segs))
        for (lo, hi), ui in zip(segs, u):
            if ui < r:
                tgt[lo:hi, a] |= seq.obs_mask[lo:hi, a]
    return tgt


def entire_mask(seq: RecordSequence, r: float, seed: int) -> np.ndarray:
    """Per vessel and scale-5 attribute, target the full column with probability ``r``.

    Keyed by vessel id, so all sequences of one vessel agree.
    """
    tgt = seq.target_mask.copy()
    for a in ENTIRE_ATTRS:
        if rng_stream(seed, ("entire", seq.vessel_id, int(a))).uniform() < r:
            tgt[:, a] |= seq.obs_mask[:, a]
    return tgt


def apply_masks(seq: RecordSequence, cfg: MaskConfig) -> RecordSequence:
    out = seq
    if cfg.point:
        out = out.with_targets(point_mask(out, cfg.ratio, cfg.seed))
    if cfg.block:
        out = out.with_targets(block_mask(out, cfg.ratio, cfg.seed))
    if cfg.entire:
        out = out.with_targets(entire_mask(out, cfg.ratio, cfg.seed))
    return out


def _wrap_lon(x):
    return (x + 180.0) % 360.0 - 180.0


def _mod360(x):
    y = np.mod(x, 360.0)
    # tiny negatives round up to exactly 360.0
    return np.where(y >= 360.0, 0.0, y)


def inject_noise(seq: RecordSequence, stats: NormStats, gamma: float, seed: int,
                 category_counts=None) -> np.ndarray:
    """Model-visible input grid with noise of intensity ``gamma``.

    Only visible cells (observed, not targeted) are perturbed; everything
    else is NaN. Timestamps are rebuilt from the first visible one using
    noisy intervals clamped at zero, so they never go backwards.
    """
    if gamma < 0:
        raise ValueError(f"noise intensity must be >= 0, got {gamma}")
    x = seq.visible_values()
    if gamma == 0:
        return x
    vis = seq.visible_mask
    specs = TAXONOMY if category_counts is None else taxonomy(category_counts)
    T = seq.T

    def stream(a):
        return rng_stream(seed, ("noise", seq.key, int(a)))

    for a in CONTINUOUS:
        z = stream(a).normal(T)
        m = vis[:, a]
        x[m, a] = np.maximum(0.0, x[m, a] + gamma * x[m, a] * z[m])
    for a in (Attr.LON, Attr.LAT):
        z = stream(a).normal(T)
        m = vis[:, a]
        x[m, a] = x[m, a] + gamma * stats.delta_std[a] * z[m]
    x[:, Attr.LON] = np.where(vis[:, Attr.LON], _wrap_lon(x[:, Attr.LON]), np.nan)
    x[:, Attr.LAT] = np.where(vis[:, Attr.LAT], np.clip(x[:, Attr.LAT], -90.0, 90.0), np.nan)
    for a in CYCLICAL:
        z = stream(a).normal(T)
        m = vis[:, a]
        x[m, a] = _mod360(x[m, a] + gamma * stats.delta_std[a] * z[m])
    ti = np.flatnonzero(vis[:, Attr.TIME])
    if ti.size > 1:
        z = stream(Attr.TIME).normal(T)
        tau = x[ti, Attr.TIME]
        d = np.maximum(0.0, np.diff(tau) + gamma * stats.delta_std[Attr.TIME] * z[ti[1:]])
        x[ti, Attr.TIME] = tau[0] + np.concatenate([[0.0], np.cumsum(d)])
    for a in DISCRETE:
        c = specs[a].category_count
        st = stream(a)
        u1, u2 = st.uniform(T), st.uniform(T)
        m = vis[:, a] & (u1 < gamma)
        if c > 1:
            shift = 1 + np.floor(u2[m] * (c - 1))
            x[m, a] = np.mod(x[m, a] + shift, c)
    return x


def corrupt_dataset(ds: Dataset, mask: MaskConfig, noise: NoiseConfig) -> Dataset:
    """Apply masking then noise to every sequence; ground truth stays clean."""
    seqs = [apply_masks(s, mask) for s in ds.sequences]
    if noise.gamma == 0:
        inputs = [None] * len(seqs)
    else:
        if ds.stats is None:
            raise ValueError("noise injection needs normalization stats")
        inputs = [inject_noise(s, ds.stats, noise.gamma, noise.seed, ds.category_counts) for s in seqs]
    return ds.replace(sequences=seqs, inputs=inputs)
