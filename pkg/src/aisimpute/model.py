"""End-to-end model: encode, reservoir, graph propagation, fusion, decode, loss."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import decoders as dec
from .core import (CONTINUOUS, CYCLICAL, DEFAULT_CATEGORY_COUNTS, DISCRETE, N_ATTRS, Attr,
                   RecordSequence, taxonomy)
from .encoders import encode_batch, init_encoder_params
from .graph import EPS_LOOP, init_graph_params, propagate_all
from .ingest import NormStats
from .numeric import ops
from .numeric.gradcheck import NonFiniteError
from .numeric.rng import rng_stream
from .numeric.tensor import Tape, Tensor
from .reservoir import DEFAULT_LEAKS, consolidate, init_reservoir, run_bidirectional


@dataclass
class ModelConfig:
    d: int = 32
    edge_hidden: int = 64
    rho: float = 0.9
    leaks: tuple = DEFAULT_LEAKS
    bidirectional: bool = True
    input_scale: float | None = None
    bias_scale: float = 0.1
    eps_loop: float = EPS_LOOP
    window: int = 5
    step_init: float = 0.01
    cont_shift: float = 3.0
    seed: int = 0
    reservoir_seed: int = 0
    navstatus_classes: int = DEFAULT_CATEGORY_COUNTS[Attr.NAVSTATUS]
    cargo_classes: int = DEFAULT_CATEGORY_COUNTS[Attr.CARGO]
    vtype_classes: int = DEFAULT_CATEGORY_COUNTS[Attr.VTYPE]

    @property
    def category_counts(self) -> dict:
        return {Attr.NAVSTATUS: self.navstatus_classes, Attr.CARGO: self.cargo_classes,
                Attr.VTYPE: self.vtype_classes}

    def to_dict(self) -> dict:
        d = asdict(self)
        d["leaks"] = list(self.leaks)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        if "leaks" in d:
            d["leaks"] = tuple(float(x) for x in d["leaks"])
        return cls(**d)


def make_init(seed: int):
    """Seeded ``normal * sqrt(1 / fan_in)`` initializer, one stream per tensor name."""
    def init(name, shape, fan_in):
        return rng_stream(seed, ("param", name)).normal(shape) * np.sqrt(1.0 / fan_in)
    return init


class Model:
    def __init__(self, config: ModelConfig, stats: NormStats, params: dict | None = None,
                 reservoir: dict | None = None):
        self.config = config
        self.stats = stats
        self.specs = taxonomy(config.category_counts)
        self.fwd = init_reservoir(config.reservoir_seed, config.d, config.rho, config.leaks,
                                  config.input_scale, config.bias_scale, tag="fwd")
        self.rev = (init_reservoir(config.reservoir_seed, config.d, config.rho, config.leaks,
                                   config.input_scale, config.bias_scale, tag="rev")
                    if config.bidirectional else None)
        if reservoir is not None:
            self.load_reservoir(reservoir)
        if params is None:
            init = make_init(config.seed)
            params = {}
            params.update(init_encoder_params(init, config.d, self.specs, config.cont_shift))
            params.update(init_graph_params(init, config.d, config.edge_hidden))
            params.update(init_decoder_params(init, config.d, self.specs, config.step_init, config.cont_shift))
        self.params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}

    # reservoir weights are stored alongside the learnable ones
    def reservoir_arrays(self) -> dict[str, np.ndarray]:
        out = self.fwd.arrays("")
        if self.rev is not None:
            out.update(self.rev.arrays(""))
        return out

    def load_reservoir(self, arrays: dict) -> None:
        for stack in (self.fwd, self.rev):
            if stack is None:
                continue
            for i, L in enumerate(stack.layers, start=1):
                for attr in ("W_in", "W_rec", "b"):
                    key = f"{stack.tag}.{i}.{attr}"
                    if key not in arrays:
                        raise KeyError(f"missing reservoir tensor {key!r}")
                    setattr(L, attr, np.array(arrays[key], dtype=np.float64))

    def forward(self, p: dict, batch: "Batch", with_states: bool = False):
        """Decoded heads for a batch; ``p`` maps names to arrays or tensors."""
        E = encode_batch(batch.x, batch.vis, p, self.stats, self.specs, coord_fill=batch.base_filled)
        states = run_bidirectional(E, self.fwd, self.rev, batch.lengths)
        hstar = propagate_all(consolidate(states).buckets, p, self.config.eps_loop)
        e = dec.gated_fusion(hstar, p)
        out = dec.decode_all(e, p)
        return (out, states) if with_states else out


def init_decoder_params(init, d, specs, step_init, cont_shift):
    return dec.init_decoder_params(init, d, specs, step_init, cont_shift)


# ---------------------------------------------------------------- batches

@dataclass
class Batch:
    x: np.ndarray          # model-visible inputs, NaN where hidden
    vis: np.ndarray
    truth: np.ndarray      # clean values, NaN where unobserved
    obs: np.ndarray
    tgt: np.ndarray
    lengths: np.ndarray
    base: np.ndarray       # local coordinate anchor, NaN where none exists
    keys: list = field(default_factory=list)

    @property
    def valid(self) -> np.ndarray:
        return np.arange(self.x.shape[1])[None, :] < self.lengths[:, None]

    @property
    def base_filled(self) -> np.ndarray:
        return np.nan_to_num(self.base)


def make_batch(seqs: list[RecordSequence], inputs: list[np.ndarray | None] | None = None,
               window: int = 5) -> Batch:
    """Pad sequences to a common length. Padded steps are invisible and never targeted."""
    inputs = inputs or [None] * len(seqs)
    B = len(seqs)
    T = max(s.T for s in seqs)
    x = np.full((B, T, N_ATTRS), np.nan)
    truth = np.full((B, T, N_ATTRS), np.nan)
    vis = np.zeros((B, T, N_ATTRS), bool)
    obs = np.zeros_like(vis)
    tgt = np.zeros_like(vis)
    for i, (s, inp) in enumerate(zip(seqs, inputs)):
        v = s.visible_mask
        x[i, :s.T] = np.where(v, s.values if inp is None else inp, np.nan)
        vis[i, :s.T] = v & ~np.isnan(x[i, :s.T])
        truth[i, :s.T] = s.values
        obs[i, :s.T] = s.obs_mask
        tgt[i, :s.T] = s.target_mask
    pair = vis[..., Attr.LON] & vis[..., Attr.LAT]
    base = dec.neighbor_base(x[..., Attr.LON], x[..., Attr.LAT], pair, window)
    return Batch(x, vis, truth, obs, tgt, np.array([s.T for s in seqs]), base, [s.key for s in seqs])


# ---------------------------------------------------------------- loss

TERMS = ("coord", "time", "cyc", "cont", "disc")


@dataclass
class LossWeights:
    coord: float = 1.0
    time: float = 1.0
    cyc: float = 1.0
    cont: float = 1.0
    disc: float = 1.0

    def __post_init__(self):
        for k in TERMS:
            if getattr(self, k) < 0:
                raise ValueError(f"loss weight {k} must be >= 0")


def _pooled_mean(values: list, masks: list) -> Tensor:
    m = np.stack(masks, axis=-1)
    n = int(m.sum())
    if n == 0:
        return Tensor(0.0)
    v = ops.stack(values, axis=-1)
    return ops.sum(ops.where(m, v, 0.0)) / n


def loss_terms(out: dec.Decoded, batch: Batch, stats: NormStats) -> dict[str, Tensor]:
    """The five loss terms, each averaged over its own target cells."""
    tgt, obs, truth = batch.tgt, batch.obs, np.nan_to_num(batch.truth)
    terms = {}

    # coordinates: predicted where targeted, truth elsewhere
    tl, tp = tgt[..., Attr.LON], tgt[..., Attr.LAT]
    m = (tl | tp) & obs[..., Attr.LON] & obs[..., Attr.LAT]
    if m.any():
        if np.any(np.isnan(batch.base[m])):
            raise ValueError("no coordinate anchor")
        base = batch.base_filled
        lon_hat = ops.where(tl, out.d_lon + base[..., 0], truth[..., Attr.LON])
        lat_hat = ops.where(tp, out.d_lat + base[..., 1], truth[..., Attr.LAT])
        d = dec.haversine(lon_hat, lat_hat, truth[..., Attr.LON], truth[..., Attr.LAT])
        terms["coord"] = _pooled_mean([d], [m])
    else:
        terms["coord"] = Tensor(0.0)

    # timestamp intervals in units of the mean training interval
    tau = truth[..., Attr.TIME]
    prev_obs = np.zeros_like(obs[..., Attr.TIME])
    prev_obs[:, 1:] = obs[:, :-1, Attr.TIME]
    m = tgt[..., Attr.TIME] & prev_obs
    true_int = np.zeros_like(tau)
    true_int[:, 1:] = (tau[:, 1:] - tau[:, :-1]) / stats.mean_dt
    err = dec.interval(out.eta) - np.where(m, true_int, 0.0)
    terms["time"] = _pooled_mean([err * err], [m])

    vals, masks = [], []
    for a in CYCLICAL:
        basis = dec.angle_basis_np(truth[..., a])
        vals.append(ops.l2norm(out.cyc[a] - basis, axis=-1))
        masks.append(tgt[..., a])
    terms["cyc"] = _pooled_mean(vals, masks)

    vals, masks = [], []
    for a in CONTINUOUS:
        z = (truth[..., a] - stats.mean[a]) / stats.std[a]
        e = out.cont[a] - np.where(tgt[..., a], z, 0.0)
        vals.append(e * e)
        masks.append(tgt[..., a])
    terms["cont"] = _pooled_mean(vals, masks)

    vals, masks = [], []
    for a in DISCRETE:
        logits = out.logits[a]
        labels = np.where(tgt[..., a], truth[..., a], 0).astype(np.int64)
        onehot = np.zeros(logits.shape)
        np.put_along_axis(onehot, labels[..., None], 1.0, axis=-1)
        probs = ops.softmax(logits, axis=-1)
        vals.append(-ops.sum(ops.log(probs + 1e-12) * onehot, axis=-1))
        masks.append(tgt[..., a])
    terms["disc"] = _pooled_mean(vals, masks)
    return terms


def total_loss(out: dec.Decoded, batch: Batch, stats: NormStats, weights: LossWeights | None = None):
    weights = weights or LossWeights()
    terms = loss_terms(out, batch, stats)
    total = None
    for k in TERMS:
        t = terms[k] * getattr(weights, k)
        total = t if total is None else total + t
    return total, terms


def loss_and_grads(model: Model, params: dict, batch: Batch, weights: LossWeights | None = None):
    """Total loss, per-term values and gradients of every learnable tensor."""
    tape = Tape()
    p = tape.watch_all(params)
    out = model.forward(p, batch)
    total, terms = total_loss(out, batch, model.stats, weights)
    if not np.isfinite(total.data):
        bad = [k for k, v in terms.items() if not np.isfinite(v.data)]
        raise NonFiniteError(f"non-finite loss (terms {bad})")
    grads = tape.backward(total)
    return float(total.data), {k: float(v.data) for k, v in terms.items()}, grads


def evaluate_loss(model: Model, params: dict, batch: Batch, weights: LossWeights | None = None):
    out = model.forward(params, batch)
    total, terms = total_loss(out, batch, model.stats, weights)
    return float(total.data), {k: float(v.data) for k, v in terms.items()}


# ---------------------------------------------------------------- imputation

def impute_batch(model: Model, batch: Batch, mode: str = "expected", seed: int = 0,
                 params: dict | None = None) -> list[tuple[np.ndarray, np.ndarray]]:
    """Completed grids and imputed-cell masks for every sequence of a batch.

    Visible cells pass through unchanged; every other cell is decoded.
    Timestamps run left to right from the previous available value; a hidden
    leading run is filled backwards from the first visible timestamp.
    """
    p = model.params if params is None else params
    out = model.forward(p, batch)
    stats = model.stats
    results = []
    eta = out.eta.data
    for b in range(batch.x.shape[0]):
        T = int(batch.lengths[b])
        vis = batch.vis[b, :T]
        grid = np.where(vis, batch.x[b, :T], np.nan)
        hole = ~vis
        need = hole[:, Attr.LON] | hole[:, Attr.LAT]
        if need.any():
            base = batch.base[b, :T]
            if np.any(np.isnan(base[need])):
                raise ValueError(f"no coordinate anchor in sequence {batch.keys[b] if batch.keys else b}")
            lon, lat = dec.finish_coordinates(np.nan_to_num(base[:, 0]) + out.d_lon.data[b, :T],
                                              np.nan_to_num(base[:, 1]) + out.d_lat.data[b, :T])
            grid[:, Attr.LON] = np.where(hole[:, Attr.LON], lon, grid[:, Attr.LON])
            grid[:, Attr.LAT] = np.where(hole[:, Attr.LAT], lat, grid[:, Attr.LAT])
        if hole[:, Attr.TIME].any():
            grid[:, Attr.TIME] = _fill_times(grid[:, Attr.TIME], eta[b, :T], stats.mean_dt, mode,
                                             rng_stream(seed, ("impute-time", batch.keys[b] if batch.keys else b)))
        for a in CYCLICAL:
            ang = dec.direction_to_angle(out.cyc[a].data[b, :T])
            grid[:, a] = np.where(hole[:, a], ang, grid[:, a])
        for a in CONTINUOUS:
            v = np.maximum(0.0, stats.mean[a] + stats.std[a] * out.cont[a].data[b, :T])
            grid[:, a] = np.where(hole[:, a], v, grid[:, a])
        for a in DISCRETE:
            _, pred = dec.decode_discrete(out.logits[a].data[b, :T])
            grid[:, a] = np.where(hole[:, a], pred, grid[:, a])
        results.append((grid, hole))
    return results


def _fill_times(tau: np.ndarray, eta: np.ndarray, unit: float, mode: str, rng) -> np.ndarray:
    tau = tau.copy()
    known = np.flatnonzero(~np.isnan(tau))
    if known.size == 0:
        raise ValueError("no time anchor: every timestamp is hidden")
    for i in range(known[0] + 1, len(tau)):
        if np.isnan(tau[i]):
            tau[i] = dec.decode_timestamp(tau[i - 1], eta[i], mode, rng, unit)
    for i in range(known[0] - 1, -1, -1):
        step = dec.decode_timestamp(0.0, eta[i + 1], mode, rng, unit)
        tau[i] = tau[i + 1] - step
    return tau


def impute_sequences(model: Model, seqs: list[RecordSequence], inputs=None, mode: str = "expected",
                     seed: int = 0, batch_size: int = 64):
    inputs = inputs or [None] * len(seqs)
    out = []
    for i in range(0, len(seqs), batch_size):
        b = make_batch(seqs[i:i + batch_size], inputs[i:i + batch_size], model.config.window)
        out.extend(impute_batch(model, b, mode, seed))
    return out
