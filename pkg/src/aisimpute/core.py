"""Attribute taxonomy, record sequences, masks and validation.

Attributes are indexed in taxonomy order, which groups them by time scale::

    scale 1: lon, lat, time          spatio-temporal
    scale 2: heading, course, speed  cyclical, cyclical, continuous
    scale 3: navstatus               discrete
    scale 4: cargo, draught          discrete, continuous
    scale 5: length, width, vtype    continuous, continuous, discrete

Because of this ordering the attributes reaching scale ``l`` (those whose own
scale is ``<= l``) are always the first ``feature_count(l)`` columns.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum, IntEnum

import numpy as np


class Attr(IntEnum):
    LON = 0
    LAT = 1
    TIME = 2
    HEADING = 3
    COURSE = 4
    SPEED = 5
    NAVSTATUS = 6
    CARGO = 7
    DRAUGHT = 8
    LENGTH = 9
    WIDTH = 10
    VTYPE = 11


class TypeClass(str, Enum):
    SPATIOTEMPORAL = "spatiotemporal"
    CYCLICAL = "cyclical"
    CONTINUOUS = "continuous"
    DISCRETE = "discrete"


N_ATTRS = 12
N_SCALES = 5
DEFAULT_CATEGORY_COUNTS = {Attr.NAVSTATUS: 15, Attr.CARGO: 5, Attr.VTYPE: 20}


@dataclass(frozen=True)
class AttributeSpec:
    id: Attr
    type_class: TypeClass
    time_scale: int
    category_count: int
    unit: str
    column: str

    @property
    def name(self) -> str:
        return self.id.name.lower()


_TABLE = [
    # id, type, scale, unit, csv column
    (Attr.LON, TypeClass.SPATIOTEMPORAL, 1, "deg", "lon"),
    (Attr.LAT, TypeClass.SPATIOTEMPORAL, 1, "deg", "lat"),
    (Attr.TIME, TypeClass.SPATIOTEMPORAL, 1, "s", "timestamp"),
    (Attr.HEADING, TypeClass.CYCLICAL, 2, "deg", "heading"),
    (Attr.COURSE, TypeClass.CYCLICAL, 2, "deg", "cog"),
    (Attr.SPEED, TypeClass.CONTINUOUS, 2, "kn", "sog"),
    (Attr.NAVSTATUS, TypeClass.DISCRETE, 3, "code", "navstatus"),
    (Attr.CARGO, TypeClass.DISCRETE, 4, "code", "cargo"),
    (Attr.DRAUGHT, TypeClass.CONTINUOUS, 4, "m", "draught"),
    (Attr.LENGTH, TypeClass.CONTINUOUS, 5, "m", "length"),
    (Attr.WIDTH, TypeClass.CONTINUOUS, 5, "m", "width"),
    (Attr.VTYPE, TypeClass.DISCRETE, 5, "code", "vtype"),
]


def taxonomy(category_counts: dict | None = None) -> tuple[AttributeSpec, ...]:
    """The 12 attribute specs in taxonomy order (indexable by :class:`Attr`)."""
    counts = dict(DEFAULT_CATEGORY_COUNTS)
    if category_counts:
        counts.update({Attr(k) if not isinstance(k, Attr) else k: int(v) for k, v in category_counts.items()})
    specs = []
    for aid, tc, scale, unit, col in _TABLE:
        c = counts.get(aid, 0) if tc is TypeClass.DISCRETE else 0
        if tc is TypeClass.DISCRETE and c <= 0:
            raise ValueError(f"discrete attribute {aid.name} needs a positive category count")
        specs.append(AttributeSpec(aid, tc, scale, c, unit, col))
    return tuple(specs)


TAXONOMY = taxonomy()
SCALE = np.array([s.time_scale for s in TAXONOMY])

CYCLICAL = (Attr.HEADING, Attr.COURSE)
CONTINUOUS = (Attr.SPEED, Attr.DRAUGHT, Attr.LENGTH, Attr.WIDTH)
DISCRETE = (Attr.NAVSTATUS, Attr.CARGO, Attr.VTYPE)
COORDS = (Attr.LON, Attr.LAT)


def attrs_at_scale(k: int) -> tuple[Attr, ...]:
    return tuple(s.id for s in TAXONOMY if s.time_scale == k)


def feature_count(level: int) -> int:
    """Number of attributes whose own time scale is at most ``level``."""
    if not 1 <= level <= N_SCALES:
        raise ValueError(f"time scale must be in 1..{N_SCALES}, got {level}")
    return int(np.sum(SCALE <= level))


def layer_count(attr: Attr) -> int:
    """Reservoir layers (and multi-scale features) an attribute produces."""
    return N_SCALES + 1 - int(SCALE[attr])


def attr_by_name(name: str) -> Attr:
    key = name.strip().lower()
    for s in TAXONOMY:
        if key in (s.name, s.column):
            return s.id
    raise KeyError(f"unknown attribute {name!r}")


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class RecordSequence:
    """One vessel's ``T x 12`` value grid with observation and target masks.

    ``values`` holds NaN where nothing was observed. ``target_mask`` marks
    observed cells withheld from the model for training or evaluation; the
    model sees :attr:`visible_mask` only.
    """

    vessel_id: str
    values: np.ndarray
    obs_mask: np.ndarray | None = None
    target_mask: np.ndarray | None = None
    key: str = ""

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[1] != N_ATTRS:
            raise ValueError(f"values must be T x {N_ATTRS}, got {values.shape}")
        obs = ~np.isnan(values) if self.obs_mask is None else np.asarray(self.obs_mask, dtype=bool)
        tgt = np.zeros_like(obs) if self.target_mask is None else np.asarray(self.target_mask, dtype=bool)
        if obs.shape != values.shape or tgt.shape != values.shape:
            raise ValueError("mask shapes must match values")
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "obs_mask", _frozen(obs))
        object.__setattr__(self, "target_mask", _frozen(tgt))
        if not self.key:
            object.__setattr__(self, "key", str(self.vessel_id))

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def visible_mask(self) -> np.ndarray:
        return self.obs_mask & ~self.target_mask

    def with_targets(self, target_mask: np.ndarray) -> "RecordSequence":
        return RecordSequence(self.vessel_id, self.values, self.obs_mask, target_mask, self.key)

    def visible_values(self) -> np.ndarray:
        return np.where(self.visible_mask, self.values, np.nan)


@dataclass(frozen=True)
class VoyageSegmentation:
    segments: tuple[tuple[int, int], ...]

    def __len__(self) -> int:
        return len(self.segments)

    def __iter__(self):
        return iter(self.segments)


def segment_voyages(seq: RecordSequence) -> VoyageSegmentation:
    """Split a sequence where an observed draught or cargo value changes.

    Boundaries sit at the index of the new value; unobserved stretches stay
    with the segment that precedes them.
    """
    cuts = {0, seq.T}
    for a in (Attr.DRAUGHT, Attr.CARGO):
        idx = np.flatnonzero(seq.obs_mask[:, a])
        vals = seq.values[idx, a]
        changed = idx[1:][vals[1:] != vals[:-1]]
        cuts.update(int(t) for t in changed)
    cuts = sorted(cuts)
    return VoyageSegmentation(tuple(zip(cuts[:-1], cuts[1:])))


@dataclass(frozen=True)
class Violation:
    t: int
    attribute: str
    rule: str


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok

    def rules(self) -> set[str]:
        return {v.rule for v in self.violations}


def validate(seq: RecordSequence, specs=TAXONOMY) -> ValidationReport:
    """Check every sequence invariant and report each breach."""
    out: list[Violation] = []
    v, obs, tgt = seq.values, seq.obs_mask, seq.target_mask
    if seq.T < 2:
        out.append(Violation(-1, "*", "sequence shorter than 2"))
    present = ~np.isnan(v)
    for t, a in zip(*np.nonzero(present != obs)):
        rule = "observed cell has no value" if obs[t, a] else "value present but not marked observed"
        out.append(Violation(int(t), specs[a].name, rule))
    for t, a in zip(*np.nonzero(tgt & ~obs)):
        out.append(Violation(int(t), specs[a].name, "target not observed"))

    def check(a, bad, rule):
        m = present[:, a]
        for t in np.flatnonzero(m & bad(np.where(m, v[:, a], 0.0))):
            out.append(Violation(int(t), specs[a].name, rule))

    with np.errstate(invalid="ignore"):
        check(Attr.LAT, lambda x: (x < -90) | (x > 90), "lat out of [-90,90]")
        check(Attr.LON, lambda x: (x < -180) | (x >= 180), "lon out of [-180,180)")
        for a in CYCLICAL:
            check(a, lambda x: (x < 0) | (x >= 360), "cyclical out of [0,360)")
        for a in CONTINUOUS:
            check(a, lambda x: x < 0, "continuous negative")
        for a in DISCRETE:
            c = specs[a].category_count
            check(a, lambda x, c=c: (x != np.floor(x)) | (x < 0) | (x >= c), "category out of range")
    ti = np.flatnonzero(present[:, Attr.TIME])
    tv = v[ti, Attr.TIME]
    for j in np.flatnonzero(np.diff(tv) <= 0):
        out.append(Violation(int(ti[j + 1]), "time", "time not strictly increasing"))
    return ValidationReport(out)
