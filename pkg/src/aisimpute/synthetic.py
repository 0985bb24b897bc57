"""Scripted synthetic fleet with realistic cross-attribute structure.

Each vessel has a type (one of ``n_types`` categories) that fixes its
length, width, design draught and service speed. A voyage alternates
between sailing (navstatus 0), anchoring (1) and mooring (5). Reporting
intervals depend on the status, heading tracks course, and cargo and
draught change only at port calls.
"""

from __future__ import annotations

import numpy as np

from .core import N_ATTRS, Attr, RecordSequence
from .ingest import Dataset, split_dataset
from .numeric.rng import rng_stream

UNDER_WAY, ANCHORED, MOORED = 0, 1, 5
INTERVAL = {UNDER_WAY: 120.0, ANCHORED: 300.0, MOORED: 600.0}
NM_DEG = 1.0 / 60.0


def _phases(rng, T: int) -> np.ndarray:
    """Status per step: alternating sailing and port stays."""
    status = np.empty(T, dtype=int)
    t = 0
    state = UNDER_WAY if rng.uniform() < 0.7 else MOORED
    while t < T:
        if state == UNDER_WAY:
            n = 25 + int(rng.uniform() * 35)
            nxt = ANCHORED if rng.uniform() < 0.4 else MOORED
        elif state == ANCHORED:
            n = 6 + int(rng.uniform() * 8)
            nxt = MOORED
        else:
            n = 10 + int(rng.uniform() * 15)
            nxt = UNDER_WAY
        status[t:t + n] = state
        t += n
        state = nxt
    return status


def vessel_track(seed: int, vessel: int, T: int = 120, n_types: int = 15,
                 cargo_classes: int = 5, heading_missing: float = 0.03) -> np.ndarray:
    """``T x 12`` value grid for one scripted vessel (NaN for raw-missing cells)."""
    rng = rng_stream(seed, ("fleet", vessel))
    vtype = int(rng.uniform() * n_types)
    length = 40.0 + 18.0 * vtype + 4.0 * (rng.uniform() - 0.5)
    width = length / 6.5 + 0.5 * (rng.uniform() - 0.5)
    design_draught = 2.5 + 0.7 * vtype
    service = 9.0 + 0.5 * vtype + rng.uniform()

    status = _phases(rng, T)
    noise = rng.normal((T, 6))
    jit = rng.uniform(T)

    g = np.full((T, N_ATTRS), np.nan)
    lon = 8.0 + 6.0 * rng.uniform()
    lat = 54.0 + 3.0 * rng.uniform()
    course = 360.0 * rng.uniform()
    tau = 1.7e9 + 86400.0 * int(rng.uniform() * 30)
    cargo = 1 + int(rng.uniform() * (cargo_classes - 1))
    prev = None
    for t in range(T):
        s = status[t]
        if prev is not None and prev != UNDER_WAY and s == UNDER_WAY:
            # leaving port: new cargo (0 means sailing in ballast)
            cargo = int(rng.uniform() * cargo_classes)
        dt = INTERVAL[s] * (1.0 + 0.1 * (jit[t] - 0.5))
        if t > 0:
            tau += dt
        if s == UNDER_WAY:
            course = (course + 3.0 * noise[t, 0]) % 360.0
            speed = max(0.0, service + 0.4 * noise[t, 1])
        else:
            course = (course + 40.0 * noise[t, 0]) % 360.0
            speed = abs(0.1 * noise[t, 1]) if s == MOORED else abs(0.3 + 0.2 * noise[t, 1])
        dist = speed * dt / 3600.0 * NM_DEG
        lat = float(np.clip(lat + dist * np.cos(np.radians(course)), -89.0, 89.0))
        lon = lon + dist * np.sin(np.radians(course)) / max(np.cos(np.radians(lat)), 0.1)
        heading = (course + 2.0 * noise[t, 2]) % 360.0
        draught = design_draught * (0.6 if cargo == 0 else 0.95)
        g[t, Attr.LON] = (lon + 180.0) % 360.0 - 180.0
        g[t, Attr.LAT] = lat
        g[t, Attr.TIME] = round(tau)
        g[t, Attr.HEADING] = heading if heading < 360.0 else 0.0
        g[t, Attr.COURSE] = course if course < 360.0 else 0.0
        g[t, Attr.SPEED] = speed
        g[t, Attr.NAVSTATUS] = s
        g[t, Attr.CARGO] = cargo
        g[t, Attr.DRAUGHT] = round(draught, 1)
        g[t, Attr.LENGTH] = round(length, 1)
        g[t, Attr.WIDTH] = round(width, 1)
        g[t, Attr.VTYPE] = vtype
        prev = s
    miss = rng.uniform(T) < heading_missing
    g[miss, Attr.HEADING] = np.nan
    return g


def synthetic_fleet(n_vessels: int = 30, T: int = 120, seed: int = 0, n_types: int = 15,
                    cargo_classes: int = 5) -> list[RecordSequence]:
    out = []
    for v in range(n_vessels):
        mmsi = str(219000000 + v)
        out.append(RecordSequence(mmsi, vessel_track(seed, v, T, n_types, cargo_classes), key=f"{mmsi}-0"))
    return out


def synthetic_dataset(n_vessels: int = 30, T: int = 120, seed: int = 0, **kw) -> Dataset:
    return split_dataset(synthetic_fleet(n_vessels, T, seed, **kw), seed)
