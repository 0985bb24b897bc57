"""Metrics over target cells, statistical baselines and the evaluation report."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .core import CONTINUOUS, CYCLICAL, DISCRETE, N_ATTRS, TAXONOMY, Attr, RecordSequence

# ---------------------------------------------------------------- metrics


class EmptyTargets(ValueError):
    pass


def _select(pred, truth, mask):
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    m = np.ones(truth.shape, bool) if mask is None else np.asarray(mask, dtype=bool)
    if not m.any():
        raise EmptyTargets("no target cells")
    return pred[m], truth[m]


def angular_error(a, b):
    d = np.abs(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)) % 360.0
    return np.minimum(d, 360.0 - d)


def mae(pred, truth, mask=None, cyclical: bool = False) -> float:
    p, t = _select(pred, truth, mask)
    err = angular_error(p, t) if cyclical else np.abs(p - t)
    return float(err.mean())


def smape(pred, truth, mask=None, cyclical: bool = False) -> float:
    """Mean of ``|x - x^| / ((|x| + |x^|) / 2)``, zero where both are below 1e-12.

    With ``cyclical`` the numerator is the wrapped angular error.
    """
    p, t = _select(pred, truth, mask)
    num = angular_error(p, t) if cyclical else np.abs(p - t)
    den = (np.abs(p) + np.abs(t)) / 2.0
    both_zero = (np.abs(p) < 1e-12) & (np.abs(t) < 1e-12)
    with np.errstate(invalid="ignore", divide="ignore"):
        term = np.where(both_zero, 0.0, num / np.where(both_zero, 1.0, den))
    return float(np.clip(term, 0.0, 2.0).mean())


def acc(pred, truth, mask=None) -> float:
    p, t = _select(pred, truth, mask)
    return float(np.mean(p == t))


def haversine_np(lon1, lat1, lon2, lat2) -> np.ndarray:
    """Central angle (radians) between points in degrees."""
    l1, p1, l2, p2 = (np.radians(np.asarray(x, dtype=np.float64)) for x in (lon1, lat1, lon2, lat2))
    a = np.sin((p2 - p1) / 2) ** 2 + np.cos(p1) * np.cos(p2) * np.sin((l2 - l1) / 2) ** 2
    return 2.0 * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


def coord_dist(pred_lon, pred_lat, true_lon, true_lat, mask=None) -> float:
    d = haversine_np(pred_lon, pred_lat, true_lon, true_lat)
    m = np.ones(d.shape, bool) if mask is None else np.asarray(mask, dtype=bool)
    if not m.any():
        raise EmptyTargets("no target cells")
    return float(d[m].mean())


# ---------------------------------------------------------------- report

ROWS = ("coordinates", "time") + tuple(TAXONOMY[a].name for a in CYCLICAL + CONTINUOUS + DISCRETE)
METRICS = {"coordinates": ("dist",), "time": ("mae", "smape")}
for _a in CYCLICAL + CONTINUOUS:
    METRICS[TAXONOMY[_a].name] = ("mae", "smape")
for _a in DISCRETE:
    METRICS[TAXONOMY[_a].name] = ("acc",)


@dataclass
class EvalReport:
    """Per-row metric values and target counts.

    ``declined`` counts targets a method left empty; metrics are computed
    over the remaining ones and are NaN when nothing remains.
    """

    metrics: dict[str, dict[str, float]] = field(default_factory=dict)
    counts: dict[str, int] = field(default_factory=dict)
    declined: dict[str, int] = field(default_factory=dict)
    method: str = ""

    def value(self, row: str, metric: str) -> float:
        return self.metrics.get(row, {}).get(metric, float("nan"))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["method", "attribute", "metric", "value", "targets", "declined"])
        for row in ROWS:
            for m in METRICS[row]:
                if row not in self.counts:
                    continue
                v = self.metrics.get(row, {}).get(m, float("nan"))
                w.writerow([self.method, row, m, "" if math.isnan(v) else repr(v),
                            self.counts[row], self.declined.get(row, 0)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "EvalReport":
        rep = cls()
        for r in csv.DictReader(io.StringIO(text)):
            rep.method = r["method"]
            row = r["attribute"]
            rep.counts[row] = int(r["targets"])
            rep.declined[row] = int(r["declined"])
            rep.metrics.setdefault(row, {})[r["metric"]] = float(r["value"]) if r["value"] else float("nan")
        return rep

    def to_text(self) -> str:
        lines = [f"method: {self.method or '-'}",
                 f"{'attribute':<12} {'metric':<6} {'value':>14} {'targets':>8}"]
        for row in ROWS:
            if row not in self.counts:
                continue
            for m in METRICS[row]:
                v = self.value(row, m)
                shown = "-" if math.isnan(v) else f"{v:.6g}"
                lines.append(f"{row:<12} {m:<6} {shown:>14} {self.counts[row]:>8}")
        if not self.counts:
            lines.append("(no targets)")
        return "\n".join(lines) + "\n"


def _target_cells(seq: RecordSequence):
    """Per report row, the boolean mask of scored cells for one sequence."""
    tgt, obs = seq.target_mask, seq.obs_mask
    out = {"coordinates": (tgt[:, Attr.LON] | tgt[:, Attr.LAT]) & obs[:, Attr.LON] & obs[:, Attr.LAT]}
    prev = np.zeros(seq.T, bool)
    prev[1:] = obs[:-1, Attr.TIME]
    out["time"] = tgt[:, Attr.TIME] & prev
    for a in CYCLICAL + CONTINUOUS + DISCRETE:
        out[TAXONOMY[a].name] = tgt[:, a].copy()
    return out


def evaluate(completed: list[np.ndarray], seqs: list[RecordSequence], method: str = "") -> EvalReport:
    """Score completed grids against the clean values of ``seqs`` at target cells.

    Timestamps are scored as intervals ``x[t] - x[t-1]`` of the completed
    grid against the true intervals.
    """
    pools: dict[str, list] = {r: [] for r in ROWS}
    for grid, seq in zip(completed, seqs):
        cells = _target_cells(seq)
        v = seq.values
        g = np.asarray(grid, dtype=np.float64)
        m = cells["coordinates"]
        pools["coordinates"].append((np.stack([g[m, Attr.LON], g[m, Attr.LAT]], -1),
                                     np.stack([v[m, Attr.LON], v[m, Attr.LAT]], -1)))
        m = cells["time"]
        gi = np.full(seq.T, np.nan)
        vi = np.full(seq.T, np.nan)
        gi[1:] = g[1:, Attr.TIME] - g[:-1, Attr.TIME]
        vi[1:] = v[1:, Attr.TIME] - v[:-1, Attr.TIME]
        pools["time"].append((gi[m], vi[m]))
        for a in CYCLICAL + CONTINUOUS + DISCRETE:
            m = cells[TAXONOMY[a].name]
            pools[TAXONOMY[a].name].append((g[m, a], v[m, a]))
    rep = EvalReport(method=method)
    for row in ROWS:
        pred = np.concatenate([p for p, _ in pools[row]]) if pools[row] else np.zeros(0)
        true = np.concatenate([t for _, t in pools[row]]) if pools[row] else np.zeros(0)
        n = len(true)
        if n == 0:
            continue
        rep.counts[row] = n
        ok = np.all(np.isfinite(pred.reshape(n, -1)), axis=1)
        rep.declined[row] = int(n - ok.sum())
        res = {}
        if ok.any():
            p, t = pred[ok], true[ok]
            if row == "coordinates":
                res["dist"] = coord_dist(p[:, 0], p[:, 1], t[:, 0], t[:, 1])
            elif row in (TAXONOMY[a].name for a in DISCRETE):
                res["acc"] = acc(p, t)
            else:
                cyc = row in (TAXONOMY[a].name for a in CYCLICAL)
                res["mae"] = mae(p, t, cyclical=cyc)
                res["smape"] = smape(p, t, cyclical=cyc)
        else:
            res = {m: float("nan") for m in METRICS[row]}
        rep.metrics[row] = res
    return rep


# ---------------------------------------------------------------- baselines

def _circular_mean(deg: np.ndarray) -> float:
    r = np.radians(deg)
    ang = np.degrees(np.arctan2(np.sin(r).mean(), np.cos(r).mean())) % 360.0
    return 0.0 if ang >= 360.0 else float(ang)


def _mode(x: np.ndarray) -> float:
    vals, counts = np.unique(x, return_counts=True)
    return float(vals[np.argmax(counts)])  # np.unique sorts, so ties go to the lowest


def _fill_time_steps(tau: np.ndarray, vis: np.ndarray, step: np.ndarray) -> np.ndarray:
    """Chain hidden timestamps from visible ones with per-step intervals ``step[t]``."""
    out = np.where(vis, tau, np.nan)
    known = np.flatnonzero(vis)
    if known.size == 0:
        return out
    for t in range(known[0] + 1, len(out)):
        if not vis[t]:
            out[t] = out[t - 1] + step[t]
    for t in range(known[0] - 1, -1, -1):
        out[t] = out[t + 1] - step[t + 1]
    return out


def _mean_interval(tau: np.ndarray, vis: np.ndarray) -> float:
    idx = np.flatnonzero(vis)
    if idx.size < 2:
        return float("nan")
    return float((tau[idx[-1]] - tau[idx[0]]) / (idx[-1] - idx[0]))


def baseline_mean(x: np.ndarray, vis: np.ndarray) -> np.ndarray:
    """Per-sequence visible mean (circular mean for angles, mode for categories)."""
    out = np.where(vis, x, np.nan)
    for a in range(N_ATTRS):
        m = vis[:, a]
        hole = ~m
        if not hole.any() or not m.any():
            continue
        col = x[m, a]
        if a == Attr.TIME:
            step = np.full(len(x), _mean_interval(x[:, a], m))
            out[:, a] = _fill_time_steps(x[:, a], m, step)
            continue
        if a in CYCLICAL:
            fill = _circular_mean(col)
        elif a in DISCRETE:
            fill = _mode(col)
        else:
            fill = float(col.mean())
        out[hole, a] = fill
    return out


def _unwrap_deg(x: np.ndarray) -> np.ndarray:
    return np.degrees(np.unwrap(np.radians(x)))


def baseline_linitp(x: np.ndarray, vis: np.ndarray) -> np.ndarray:
    """Linear interpolation in the step index between visible neighbours.

    Angles and longitude follow the shorter arc; ends are held constant.
    Categories copy the nearest visible step (earlier one on ties).
    Timestamps beyond the visible range continue at the mean visible interval.
    """
    out = np.where(vis, x, np.nan)
    t = np.arange(len(x))
    for a in range(N_ATTRS):
        m = vis[:, a]
        if m.all() or not m.any():
            continue
        idx = np.flatnonzero(m)
        col = x[idx, a]
        if a in DISCRETE:
            pos = np.searchsorted(idx, t)
            left = idx[np.clip(pos - 1, 0, len(idx) - 1)]
            right = idx[np.clip(pos, 0, len(idx) - 1)]
            near = np.where(np.abs(t - left) <= np.abs(right - t), left, right)
            out[~m, a] = x[near[~m], a]
        elif a == Attr.TIME:
            fill = np.interp(t, idx, col)
            step = _mean_interval(x[:, a], m)
            if idx.size >= 2:
                fill = np.where(t < idx[0], col[0] - (idx[0] - t) * step, fill)
                fill = np.where(t > idx[-1], col[-1] + (t - idx[-1]) * step, fill)
            out[~m, a] = fill[~m]
        elif a in CYCLICAL or a == Attr.LON:
            fill = np.interp(t, idx, _unwrap_deg(col))
            if a == Attr.LON:
                fill = (fill + 180.0) % 360.0 - 180.0
            else:
                fill = np.mod(fill, 360.0)
                fill = np.where(fill >= 360.0, 0.0, fill)
            out[~m, a] = fill[~m]
        else:
            out[~m, a] = np.interp(t, idx, col)[~m]
    return out


KNN_FEATURES = (Attr.LON, Attr.LAT, Attr.HEADING, Attr.COURSE, Attr.SPEED, Attr.DRAUGHT,
                Attr.LENGTH, Attr.WIDTH)


def _knn_features(x: np.ndarray, vis: np.ndarray) -> np.ndarray:
    """Z-normalized feature matrix with NaN for hidden inputs; angles as (sin, cos)."""
    cols = []
    for a in KNN_FEATURES:
        v = np.where(vis[:, a], x[:, a], np.nan)
        if a in CYCLICAL:
            r = np.radians(v)
            cols += [np.sin(r), np.cos(r)]
        else:
            cols.append(v)
    F = np.stack(cols, axis=1)
    mu = np.zeros(F.shape[1])
    sd = np.ones(F.shape[1])
    for j in range(F.shape[1]):
        col = F[~np.isnan(F[:, j]), j]
        if col.size:
            mu[j] = col.mean()
            if col.std() > 1e-12:
                sd[j] = col.std()
    return (F - mu) / sd


def nan_euclidean(F: np.ndarray) -> np.ndarray:
    """Pairwise distances over jointly present coordinates, rescaled by
    ``sqrt(n_features / n_present)``; infinite when nothing is shared."""
    n, f = F.shape
    sq = np.zeros((n, n))
    shared = np.zeros((n, n))
    for c in range(f):
        col = F[:, c]
        both = ~np.isnan(col)[:, None] & ~np.isnan(col)[None, :]
        diff = np.nan_to_num(col[:, None] - col[None, :])
        sq += np.where(both, diff * diff, 0.0)
        shared += both
    with np.errstate(invalid="ignore", divide="ignore"):
        d = np.sqrt(sq * f / shared)
    return np.where(shared > 0, d, np.inf)


def baseline_knn(x: np.ndarray, vis: np.ndarray, k: int = 20) -> np.ndarray:
    """Average over the ``k`` nearest records (within the sequence) that show the attribute.

    Distances use :func:`nan_euclidean` on z-normalized coordinates, angle
    sines/cosines and continuous values. Angles average on the circle and
    categories take a majority vote. Timestamps are filled by chaining the
    neighbours' mean interval. Cells without any usable neighbour fall back
    to :func:`baseline_mean`.
    """
    out = np.where(vis, x, np.nan)
    fallback = baseline_mean(x, vis)
    D = nan_euclidean(_knn_features(x, vis))
    np.fill_diagonal(D, np.inf)
    T = len(x)
    interval = np.full(T, np.nan)
    iv = np.zeros(T, bool)
    interval[1:] = x[1:, Attr.TIME] - x[:-1, Attr.TIME]
    iv[1:] = vis[1:, Attr.TIME] & vis[:-1, Attr.TIME]
    for a in range(N_ATTRS):
        m = vis[:, a]
        if m.all() or not m.any():
            continue
        donors = iv if a == Attr.TIME else m
        src = interval if a == Attr.TIME else x[:, a]
        step = np.full(T, np.nan)
        for i in np.flatnonzero(~m) if a != Attr.TIME else range(T):
            cand = np.flatnonzero(donors & np.isfinite(D[i]))
            if a == Attr.TIME and m[i] and (i == 0 or m[i - 1]):
                continue
            if cand.size == 0:
                continue
            near = cand[np.argsort(D[i, cand], kind="stable")[:k]]
            vals = src[near]
            if a == Attr.TIME:
                step[i] = vals.mean()
            elif a in CYCLICAL:
                out[i, a] = _circular_mean(vals)
            elif a in DISCRETE:
                out[i, a] = _mode(vals)
            else:
                out[i, a] = vals.mean()
        if a == Attr.TIME:
            mean_step = _mean_interval(x[:, a], m)
            step = np.where(np.isnan(step), mean_step, step)
            out[:, a] = _fill_time_steps(x[:, a], m, step)
        else:
            miss = ~m & np.isnan(out[:, a])
            out[miss, a] = fallback[miss, a]
    return out


BASELINES = {"mean": baseline_mean, "knn": baseline_knn, "linitp": baseline_linitp}


def run_baseline(method: str, seqs: list[RecordSequence], inputs=None, k: int = 20) -> list[np.ndarray]:
    if method not in BASELINES:
        raise ValueError(f"unknown baseline {method!r}; choose from {sorted(BASELINES)}")
    inputs = inputs or [None] * len(seqs)
    out = []
    for s, inp in zip(seqs, inputs):
        vis = s.visible_mask
        x = np.where(vis, s.values if inp is None else inp, np.nan)
        vis = vis & ~np.isnan(x)
        out.append(baseline_knn(x, vis, k) if method == "knn" else BASELINES[method](x, vis))
    return out
