import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_array_equal

from aisimpute.core import DISCRETE, Attr, RecordSequence
from aisimpute.corruption import (BLOCK_ATTRS, ENTIRE_ATTRS, POINT_ATTRS, MaskConfig, NoiseConfig,
                                  apply_masks, block_mask, corrupt_dataset, entire_mask,
                                  inject_noise, point_mask)
from aisimpute.ingest import compute_norm_stats
from aisimpute.numeric.rng import rng_stream
from aisimpute.synthetic import synthetic_dataset, synthetic_fleet
from conftest import make_grid, make_seq


def _seq_with_holes(T=40, seed=0):
    g = make_grid(T)
    rng = np.random.default_rng(seed)
    g[rng.random(g.shape) < 0.1] = np.nan
    g[:, Attr.TIME] = 1.7e9 + 60.0 * np.arange(T)
    return RecordSequence("v1", g, key="v1-0")


def test_config_bounds():
    with pytest.raises(ValueError):
        MaskConfig(1.5)
    with pytest.raises(ValueError):
        NoiseConfig(-0.1)
    with pytest.raises(ValueError):
        inject_noise(make_seq(), compute_norm_stats([make_seq()]), -1.0, 0)


def test_point_mask_extremes():
    s = _seq_with_holes()
    assert not point_mask(s, 0.0, 1).any()
    tgt = point_mask(s, 1.0, 1)
    for a in POINT_ATTRS:
        assert_array_equal(tgt[:, a], s.obs_mask[:, a])
    assert not tgt[:, list(BLOCK_ATTRS + ENTIRE_ATTRS)].any()


def test_point_mask_rate_within_binomial_bounds():
    n_cells = 0
    hits = 0
    for i in range(200):
        s = make_seq(T=84, vessel=str(i))
        s = RecordSequence(s.vessel_id, s.values, key=f"k{i}")
        tgt = point_mask(s, 0.3, seed=11)
        n_cells += s.T * len(POINT_ATTRS)
        hits += int(tgt[:, list(POINT_ATTRS)].sum())
    assert n_cells == 100800
    sigma = np.sqrt(n_cells * 0.3 * 0.7)
    assert abs(hits - 0.3 * n_cells) < 3 * sigma


def test_block_mask_extremes():
    s = make_seq(12)
    tgt = block_mask(s, 1.0, 0)
    for a in BLOCK_ATTRS:
        assert tgt[:, a].all()
    assert not tgt[:, list(POINT_ATTRS + ENTIRE_ATTRS)].any()
    assert not block_mask(s, 0.0, 0).any()


def test_block_mask_replay_oracle():
    d = np.where(np.arange(12) < 5, 5.0, 7.0)
    s = RecordSequence("v", make_grid(12, draught=d), key="v-0")
    segs = [(0, 5), (5, 12)]
    for seed in range(10):
        tgt = block_mask(s, 0.5, seed)
        for a in BLOCK_ATTRS:
            u = rng_stream(seed, ("block", "v-0", int(a))).uniform(2)
            for (lo, hi), ui in zip(segs, u):
                col = tgt[lo:hi, a]
                assert col.all() == (ui < 0.5)
                assert col.all() or not col.any()  # all-or-nothing per segment


def test_entire_mask_extremes_and_vessel_keying():
    a = RecordSequence("v", make_grid(8), key="v-0")
    b = RecordSequence("v", make_grid(6), key="v-1")
    tgt = entire_mask(a, 1.0, 0)
    assert tgt[:, list(ENTIRE_ATTRS)].all()
    assert not tgt[:, list(POINT_ATTRS + BLOCK_ATTRS)].any()
    assert not entire_mask(a, 0.0, 0).any()
    for seed in range(20):
        ta, tb = entire_mask(a, 0.5, seed), entire_mask(b, 0.5, seed)
        for attr in ENTIRE_ATTRS:
            assert ta[0, attr] == tb[0, attr]


def test_entire_mask_vessel_rate():
    hits = 0
    for i in range(1000):
        s = RecordSequence(f"ves{i}", make_grid(3), key=f"ves{i}-0")
        hits += int(entire_mask(s, 0.3, 5)[0, Attr.LENGTH])
    assert abs(hits - 300) < 3 * np.sqrt(1000 * 0.3 * 0.7)


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 1), st.integers(0, 2**32), st.integers(0, 5))
def test_masks_never_target_unobserved(r, seed, holes_seed):
    s = _seq_with_holes(seed=holes_seed)
    out = apply_masks(s, MaskConfig(r, seed))
    assert not (out.target_mask & ~s.obs_mask).any()
    assert_array_equal(out.values, s.values)


def test_masking_deterministic_and_order_independent():
    seqs = synthetic_fleet(4, 30, seed=1)
    cfg = MaskConfig(0.4, 9)
    fwd = [apply_masks(s, cfg).target_mask for s in seqs]
    rev = [apply_masks(s, cfg).target_mask for s in reversed(seqs)][::-1]
    for x, y in zip(fwd, rev):
        assert_array_equal(x, y)


def test_noise_zero_is_identity():
    s = apply_masks(_seq_with_holes(), MaskConfig(0.3, 2))
    stats = compute_norm_stats([s])
    x = inject_noise(s, stats, 0.0, 3)
    assert_array_equal(x, s.visible_values())


def test_noise_forced_flip_and_visibility():
    s = apply_masks(synthetic_fleet(1, 60, seed=3)[0], MaskConfig(0.3, 1))
    stats = compute_norm_stats([s])
    x = inject_noise(s, stats, 1.0, 4)
    vis = s.visible_mask
    for a in DISCRETE:
        m = vis[:, a]
        assert (x[m, a] != s.values[m, a]).all()
    assert np.isnan(x[~vis]).all()
    assert not np.isnan(x[vis]).any()


def test_noise_cyclical_wrap():
    s = make_seq(4, heading=359.0)
    stats = compute_norm_stats([s])
    stats.delta_std[Attr.HEADING] = 1.0
    seed = next(k for k in range(1000) if rng_stream(k, ("noise", s.key, int(Attr.HEADING))).normal(4)[0] > 1.0)
    z0 = rng_stream(seed, ("noise", s.key, int(Attr.HEADING))).normal(4)[0]
    gamma = 2.0 / z0  # the first draw becomes exactly +2 degrees
    x = inject_noise(s, stats, gamma, seed)
    assert np.isclose(x[0, Attr.HEADING], 1.0)
    assert ((0 <= x[:, Attr.HEADING]) & (x[:, Attr.HEADING] < 360)).all()


def test_noise_formula_replay():
    s = apply_masks(synthetic_fleet(1, 50, seed=8)[0], MaskConfig(0.2, 0))
    stats = compute_norm_stats([s])
    g = 0.05
    x = inject_noise(s, stats, g, 6)
    vis = s.visible_mask
    z = rng_stream(6, ("noise", s.key, int(Attr.SPEED))).normal(s.T)
    m = vis[:, Attr.SPEED]
    v = s.values[m, Attr.SPEED]
    assert_array_equal(x[m, Attr.SPEED], np.maximum(0, v + g * v * z[m]))
    z = rng_stream(6, ("noise", s.key, int(Attr.LAT))).normal(s.T)
    m = vis[:, Attr.LAT]
    np.testing.assert_allclose(x[m, Attr.LAT], np.clip(s.values[m, Attr.LAT] + g * stats.delta_std[Attr.LAT] * z[m], -90, 90))
    ti = np.flatnonzero(vis[:, Attr.TIME])
    z = rng_stream(6, ("noise", s.key, int(Attr.TIME))).normal(s.T)
    tau = s.values[ti, Attr.TIME]
    d = np.maximum(0, np.diff(tau) + g * stats.delta_std[Attr.TIME] * z[ti[1:]])
    np.testing.assert_allclose(x[ti, Attr.TIME], tau[0] + np.r_[0, np.cumsum(d)], rtol=0, atol=1e-6)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.0, 5.0))
def test_noisy_timestamps_nondecreasing(seed, gamma):
    s = apply_masks(synthetic_fleet(1, 40, seed=seed % 97)[0], MaskConfig(0.3, seed))
    stats = compute_norm_stats([s])
    x = inject_noise(s, stats, gamma, seed)
    tau = x[s.visible_mask[:, Attr.TIME], Attr.TIME]
    assert (np.diff(tau) >= 0).all()
    assert tau[0] == s.values[s.visible_mask[:, Attr.TIME], Attr.TIME][0]


def test_corrupt_dataset_pure_and_clean_truth():
    ds = synthetic_dataset(6, 30, seed=0)
    a = corrupt_dataset(ds, MaskConfig(0.3, 1), NoiseConfig(0.02, 1))
    b = corrupt_dataset(ds, MaskConfig(0.3, 1), NoiseConfig(0.02, 1))
    for sa, sb, s0, xa, xb in zip(a.sequences, b.sequences, ds.sequences, a.inputs, b.inputs):
        assert_array_equal(sa.target_mask, sb.target_mask)
        assert_array_equal(xa, xb)
        assert_array_equal(sa.values, s0.values)
    z = corrupt_dataset(ds, MaskConfig(0.0, 1), NoiseConfig(0.0, 1))
    assert all(x is None for x in z.inputs)
    assert not any(s.target_mask.any() for s in z.sequences)
    no_stats = type(ds)(ds.sequences, ds.split)
    with pytest.raises(ValueError, match="stats"):
        corrupt_dataset(no_stats, MaskConfig(0.3), NoiseConfig(0.1))
