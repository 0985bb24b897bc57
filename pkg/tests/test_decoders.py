import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from aisimpute import decoders as dec
from aisimpute.core import CYCLICAL, N_ATTRS, Attr, RecordSequence, feature_count
from aisimpute.ingest import compute_norm_stats
from aisimpute.model import Model, ModelConfig, impute_sequences, make_init
from aisimpute.numeric import Tensor, grad_check, rng_stream
from aisimpute.synthetic import synthetic_fleet
from conftest import make_grid

D = 4


def _hstar(rng, lead=(2,)):
    return [rng.normal(size=lead + (feature_count(l), 3 * D)) for l in range(1, 6)]


@pytest.fixture(scope="module")
def fuse_params():
    return {k: v for k, v in dec.init_decoder_params(make_init(1), D).items() if k.startswith("fuse.")}


def test_fusion_zero_in_zero_out(fuse_params):
    hs = [np.zeros((1, feature_count(l), 3 * D)) for l in range(1, 6)]
    assert_array_equal(dec.gated_fusion(hs, fuse_params).data, np.zeros((1, N_ATTRS, D)))


def test_fusion_matches_single_attribute_form(fuse_params):
    rng = np.random.default_rng(0)
    hs = _hstar(rng)
    out = dec.gated_fusion(hs, fuse_params).data
    We = [fuse_params[f"fuse.We{l}"] for l in range(1, 6)]
    for a in Attr:
        blocks = [hs[l][0, int(a)] if int(a) < feature_count(l + 1) else None for l in range(5)]
        ref = dec.fuse_attribute(blocks, fuse_params["fuse.Wg"][int(a)], fuse_params["fuse.bg"][int(a)], We).data
        assert_allclose(out[0, int(a)], ref, rtol=1e-12, atol=1e-14)


def test_fusion_scale5_only_top_term(fuse_params):
    rng = np.random.default_rng(1)
    h5 = rng.normal(size=3 * D)
    We = [fuse_params[f"fuse.We{l}"] for l in range(1, 6)]
    Wg, bg = fuse_params["fuse.Wg"][int(Attr.VTYPE)], fuse_params["fuse.bg"][int(Attr.VTYPE)]
    out = dec.fuse_attribute([None, None, None, None, h5], Wg, bg, We).data
    g = 1 / (1 + np.exp(-(Wg[:, 12 * D:] @ h5 + bg)))
    assert_allclose(out, g[4] * (We[4] @ h5), rtol=1e-13)


def test_fusion_identity_projection_direct_evaluation():
    rng = np.random.default_rng(2)
    d = 3
    h = rng.normal(size=3 * d)
    We = [np.zeros((d, 3 * d)) for _ in range(5)]
    We[2] = np.hstack([np.eye(d), np.zeros((d, 2 * d))])
    Wg, bg = rng.normal(size=(5, 15 * d)), rng.normal(size=5)
    blocks = [None, None, h, None, None]
    out = dec.fuse_attribute(blocks, Wg, bg, We).data
    g = 1 / (1 + np.exp(-(Wg[:, 6 * d:9 * d] @ h + bg)))
    assert_allclose(out, g[2] * h[:d], rtol=1e-13)


def test_fusion_gradient_reaches_every_present_scale(fuse_params):
    rng = np.random.default_rng(3)
    We = [fuse_params[f"fuse.We{l}"] for l in range(1, 6)]
    a = Attr.NAVSTATUS  # scale 3: blocks 3..5 present
    Wg, bg = fuse_params["fuse.Wg"][int(a)], fuse_params["fuse.bg"][int(a)]
    hs = {f"h{l}": rng.normal(size=3 * D) for l in (3, 4, 5)}
    w = rng.normal(size=D)

    def f(p):
        return dec.fuse_attribute([None, None, p["h3"], p["h4"], p["h5"]], Wg, bg, We) * w

    res = grad_check(f, hs, eps=1e-6)
    assert res.max_rel_error < 1e-6
    for k in hs:
        assert np.abs(res.tape_grads[k]).max() > 1e-6


def _coord_params(W_zero=True, step=0.1):
    p = dec.init_decoder_params(make_init(0), D, step_init=step)
    if W_zero:
        for n in ("lon", "lat"):
            p[f"dec.{n}.W"] = np.zeros_like(p[f"dec.{n}.W"])
    return p


def test_coordinates_examples():
    p = _coord_params()
    e = np.zeros((1, 3, D))
    base = np.broadcast_to([10.0, 55.0], (1, 3, 2))
    lon, lat = dec.decode_coordinates(base, e, e, p)
    assert_array_equal(lon, 10.0)
    assert_array_equal(lat, 55.0)
    b = dec.neighbor_base(np.array([[0.0, np.nan, 2.0]]), np.array([[0.0, np.nan, 2.0]]),
                          np.array([[True, False, True]]), window=5)
    assert_array_equal(b[0, 1], [1.0, 1.0])


def test_coordinate_offset_bounded_by_step():
    p = _coord_params(W_zero=False, step=0.1)
    rng = np.random.default_rng(4)
    e1, e2 = rng.normal(0, 10, (2, 50, D))
    dl, dp = dec.coordinate_offsets(e1, e2, p)
    assert np.abs(dl.data).max() <= 0.1 and np.abs(dp.data).max() <= 0.1


def test_neighbor_base_window_and_fallback():
    T = 20
    lon = np.arange(T, dtype=float)[None]
    lat = -np.arange(T, dtype=float)[None]
    vis = np.zeros((1, T), bool)
    vis[0, [0, 1, 15]] = True
    b = dec.neighbor_base(lon, lat, vis, window=3)
    assert_array_equal(b[0, 2], [0.5, -0.5])          # neighbours 0 and 1
    assert_array_equal(b[0, 14], [15.0, -15.0])
    assert_allclose(b[0, 8], [16 / 3, -16 / 3])       # no neighbour: sequence-wide mean
    none = dec.neighbor_base(lon, lat, np.zeros((1, T), bool), window=3)
    assert np.isnan(none).all()
    with pytest.raises(ValueError, match="no coordinate anchor"):
        dec.decode_coordinates(none, np.zeros((1, T, D)), np.zeros((1, T, D)), _coord_params())


def test_finish_coordinates_ranges():
    lon, lat = dec.finish_coordinates(np.array([179.95 + 0.1, -181.0, 180.0]), np.array([90.5, -91.0, 0.0]))
    assert_allclose(lon, [-179.95, 179.0, -180.0])
    assert_array_equal(lat, [90.0, -90.0, 0.0])


def test_timestamp_examples():
    assert dec.decode_timestamp(0.0, 0.01) == pytest.approx(100.0, rel=1e-14)
    assert_allclose(dec.interval(Tensor(1.0), np.exp(-2)).data, 2.0, rtol=1e-15)
    assert dec.decode_timestamp(1000.0, 0.5, unit=60.0) == pytest.approx(1120.0)
    with pytest.raises(ValueError):
        dec.decode_timestamp(0.0, 1.0, mode="sample")
    with pytest.raises(FloatingPointError):
        dec.decode_timestamp(0.0, 0.0)


def test_sampled_interval_mean():
    rng = rng_stream(0, "intervals")
    eta = 0.2
    gaps = [dec.decode_timestamp(0.0, eta, "sample", rng) for _ in range(10**4)]
    assert min(gaps) > 0
    assert abs(np.mean(gaps) - 1 / eta) < 0.05 / eta


def test_intensity_positive():
    p = dec.init_decoder_params(make_init(2), D)
    p["dec.time.eta0"] = np.array(-30.0)
    eta = dec.intensity(np.random.default_rng(5).normal(0, 5, (100, D)), p).data
    assert (eta > 0).all()


def test_cyclical_examples():
    assert dec.decode_cyclical([0.0, 1.0])[0] == 0.0
    assert dec.decode_cyclical([1.0, 0.0])[0] == 90.0
    ang, e = dec.decode_cyclical([-1e-3, -1e-3])
    assert ang == pytest.approx(225.0, abs=1e-12)
    assert np.linalg.norm(e) == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(ValueError, match="degenerate direction"):
        dec.decode_cyclical([0.0, 1e-13])


def test_cyclical_direction_unit_and_range():
    p = dec.init_decoder_params(make_init(3), D)
    e = np.random.default_rng(6).normal(size=(200, D))
    for a in CYCLICAL:
        u = dec.cyclical_direction(e, a, p).data
        assert_allclose(np.linalg.norm(u, axis=-1), 1.0, atol=1e-9)
        ang = dec.direction_to_angle(u)
        assert ((ang >= 0) & (ang < 360)).all()
    assert dec.direction_to_angle(np.array([-1e-20, 1.0])) == 0.0  # never 360


def test_continuous_examples():
    assert dec.decode_continuous(0.0, 5.0, 2.5, 1.0, 0.0) == 5.0
    assert dec.decode_continuous(3.0, 5.0, 2.5, 1.0, 3.0) == 5.0
    assert dec.decode_continuous(3.0 + 2.0, 5.0, 2.5, 2.0, 3.0) == 7.5
    assert dec.decode_continuous(1.0, 5.0, 2.5, 1.0, 0.0) == 7.5


def test_discrete_examples():
    probs, pred = dec.decode_discrete(np.zeros(4))
    assert_allclose(probs, 0.25) and pred == 0
    probs, _ = dec.decode_discrete(np.array([10.0, 0.0, 0.0]))
    assert probs[0] > 0.999
    probs, pred = dec.decode_discrete(np.random.default_rng(7).normal(0, 5, (100, 20)))
    assert np.abs(probs.sum(-1) - 1).max() < 1e-12
    _, pred = dec.decode_discrete(np.array([1.0, 3.0, 3.0]))
    assert pred == 1


def _small_model(seqs):
    cfg = ModelConfig(d=8, edge_hidden=8)
    return Model(cfg, compute_norm_stats(seqs))


def test_impute_pass_through():
    seqs = synthetic_fleet(2, 12, seed=0)
    seqs = [RecordSequence(s.vessel_id, np.where(np.isnan(s.values), 1.0, s.values), key=s.key) for s in seqs]
    model = _small_model(seqs)
    for (grid, hole), s in zip(impute_sequences(model, seqs), seqs):
        assert not hole.any()
        assert_array_equal(grid, s.values)


def test_impute_single_masked_angle():
    g = make_grid(8)
    tgt = np.zeros_like(g, bool)
    tgt[3, Attr.HEADING] = True
    s = RecordSequence("a", g, target_mask=tgt, key="a-0")
    grid, hole = impute_sequences(_small_model([s]), [s])[0]
    assert_array_equal(hole, tgt)
    diff = grid != g
    assert diff.sum() <= 1 and not diff[~tgt].any()
    assert 0 <= grid[3, Attr.HEADING] < 360


@pytest.mark.parametrize("mode", ["expected", "sample"])
def test_impute_masked_time_run_increasing(mode):
    g = make_grid(10)
    tgt = np.zeros_like(g, bool)
    tgt[4:7, Attr.TIME] = True
    tgt[0:2, Attr.TIME] = True
    s = RecordSequence("a", g, target_mask=tgt, key="a-0")
    grid, _ = impute_sequences(_small_model([s]), [s], mode=mode, seed=3)[0]
    assert (np.diff(grid[:, Attr.TIME][:7]) > 0).all()
    assert_array_equal(grid[~tgt], g[~tgt])


def test_impute_coordinates_in_range():
    g = make_grid(6, lon=179.999, lat=89.999)
    tgt = np.zeros_like(g, bool)
    tgt[2, [Attr.LON, Attr.LAT]] = True
    s = RecordSequence("a", g, target_mask=tgt, key="a-0")
    grid, _ = impute_sequences(_small_model([s]), [s])[0]
    assert -180 <= grid[2, Attr.LON] < 180 and -90 <= grid[2, Attr.LAT] <= 90


def test_loss_functions_standalone():
    assert dec.loss_coordinates(0.0, 0.0, 0.0, 0.0).item() == 0.0
    assert dec.loss_coordinates(0.0, 0.0, 180.0, 0.0).item() == pytest.approx(np.pi)
    assert dec.loss_coordinates(0.0, 0.0, 0.0, 90.0).item() == pytest.approx(np.pi / 2)
    assert dec.loss_timestamp(np.array([70.0]), np.array([60.0])).item() == 100.0
    assert dec.loss_timestamp(np.array([63.0, 64.0]), np.array([60.0, 60.0])).item() == 12.5
    assert dec.loss_cyclical(np.array([90.0]), np.array([[1.0, 0.0]])).item() == pytest.approx(0.0, abs=1e-15)
    assert dec.loss_cyclical(np.array([0.0]), np.array([[0.0, -1.0]])).item() == pytest.approx(2.0)
    assert dec.loss_continuous(np.array([1.0, 3.0]), np.array([1.0, 1.0])).item() == 2.0
    assert dec.loss_discrete(np.array([[0.5, 0.5]]), np.array([0])).item() == pytest.approx(np.log(2))
    assert dec.loss_continuous(np.array([9.0]), np.array([0.0]), mask=np.array([False])).item() == 0.0


def test_haversine_gradient_near_zero_distance():
    rng = np.random.default_rng(8)
    pts = {"lon": rng.uniform(-170, 170, 6), "lat": rng.uniform(-80, 80, 6)}
    ref_lon, ref_lat = pts["lon"] + rng.normal(0, 1, 6), pts["lat"] + rng.normal(0, 1, 6)
    res = grad_check(lambda p: dec.haversine(p["lon"], p["lat"], ref_lon, ref_lat), pts, eps=1e-6)
    assert res.max_rel_error < 1e-6
    tape_g = grad_check(lambda p: dec.haversine(p["lon"], p["lat"], pts["lon"], pts["lat"]), pts).tape_grads
    assert all(np.isfinite(g).all() for g in tape_g.values())
