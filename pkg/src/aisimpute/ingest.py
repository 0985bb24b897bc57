"""CSV parsing, per-vessel sequence building, dataset splits and normalization stats."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import (CONTINUOUS, CYCLICAL, DISCRETE, N_ATTRS, TAXONOMY, Attr, RecordSequence,
                   taxonomy)
from .numeric.rng import rng_stream

ID_COLUMN = "mmsi"
CSV_COLUMNS = [ID_COLUMN, "timestamp", "lat", "lon", "sog", "cog", "heading", "navstatus",
               "cargo", "draught", "length", "width", "vtype"]
DELTA_CHANNELS = (Attr.LON, Attr.LAT, Attr.TIME, Attr.HEADING, Attr.COURSE)
STD_FLOOR = 1e-8


class IngestError(ValueError):
    """Unrecoverable input problem (bad header, unreadable file, bad rows when strict)."""


class RowValidationError(IngestError):
    """Rows that parse as CSV but break a value rule, raised when not dropping them."""

    def __init__(self, message: str, errors: list):
        super().__init__(message)
        self.errors = errors


@dataclass(frozen=True)
class RowError:
    path: str
    line: int
    column: str
    message: str

    def __str__(self) -> str:
        return f"{self.path}:{self.line}: {self.column}: {self.message}"


@dataclass
class SchemaConfig:
    """Column remapping and row-error policy for :func:`parse_csv`.

    ``columns`` maps canonical names (``lat``, ``sog`` ...) to the header
    names used in the file. ``sentinels`` lists raw values that mean
    "not available" for a column (AIS uses heading 511 and course 360).
    """

    columns: dict[str, str] = field(default_factory=dict)
    drop_bad_rows: bool = False
    sentinels: dict[str, tuple[float, ...]] = field(
        default_factory=lambda: {"heading": (511.0,), "cog": (360.0,)})
    category_counts: dict | None = None

    def header_name(self, canonical: str) -> str:
        return self.columns.get(canonical, canonical)


@dataclass
class RawRecord:
    vessel_id: str
    values: np.ndarray
    line: int


@dataclass
class ParseResult:
    records: list[RawRecord]
    errors: list[RowError]


def _cell_error(col: str, x: float, specs) -> str | None:
    a = _COLUMN_TO_ATTR[col]
    if not math.isfinite(x):
        return "not finite"
    if a == Attr.LAT and not -90.0 <= x <= 90.0:
        return "lat out of range"
    if a == Attr.LON and not -180.0 <= x < 180.0:
        return "lon out of range"
    if a in CYCLICAL and not 0.0 <= x < 360.0:
        return "angle out of [0,360)"
    if a in CONTINUOUS and x < 0.0:
        return "negative value"
    if a in DISCRETE and (x != int(x) or not 0 <= x < specs[a].category_count):
        return f"category out of range 0..{specs[a].category_count - 1}"
    return None


_COLUMN_TO_ATTR = {s.column: s.id for s in TAXONOMY}


def parse_csv(path, schema: SchemaConfig | None = None) -> ParseResult:
    """Read one AIS CSV file into raw records.

    Every bad cell is reported with its line number. With
    ``schema.drop_bad_rows`` the offending rows are skipped; otherwise any
    error raises :class:`IngestError` listing all of them.
    """
    schema = schema or SchemaConfig()
    specs = taxonomy(schema.category_counts)
    path = Path(path)
    try:
        fh = path.open(newline="", encoding="utf-8")
    except OSError as e:
        raise IngestError(f"{path}: cannot open: {e.strerror}") from e
    records, errors = [], []
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise IngestError(f"{path}:1: empty file, expected a header row") from None
        pos = {}
        missing = []
        for canon in CSV_COLUMNS:
            name = schema.header_name(canon)
            if name not in header:
                missing.append(name)
            else:
                pos[canon] = header.index(name)
        if missing:
            raise IngestError(f"{path}:1: header is missing column(s) {', '.join(missing)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                errors.append(RowError(str(path), lineno, "*", f"expected {len(header)} fields, got {len(row)}"))
                continue
            vid = row[pos[ID_COLUMN]].strip()
            row_errors = []
            if not vid:
                row_errors.append(RowError(str(path), lineno, ID_COLUMN, "empty vessel id"))
            vals = np.full(N_ATTRS, np.nan)
            for canon in CSV_COLUMNS[1:]:
                cell = row[pos[canon]].strip()
                if not cell:
                    continue
                try:
                    x = float(cell)
                except ValueError:
                    row_errors.append(RowError(str(path), lineno, canon, f"not a number: {cell!r}"))
                    continue
                if x in schema.sentinels.get(canon, ()):
                    continue
                msg = _cell_error(canon, x, specs)
                if msg:
                    row_errors.append(RowError(str(path), lineno, canon, msg))
                    continue
                vals[_COLUMN_TO_ATTR[canon]] = x
            if row_errors:
                errors.extend(row_errors)
            else:
                records.append(RawRecord(vid, vals, lineno))
    if errors and not schema.drop_bad_rows:
        shown = "\n".join(str(e) for e in errors[:20])
        more = f"\n... and {len(errors) - 20} more" if len(errors) > 20 else ""
        raise RowValidationError(f"{len(errors)} malformed cell(s):\n{shown}{more}", errors)
    return ParseResult(records, errors)


@dataclass
class BuildReport:
    duplicates: list[tuple[str, float]] = field(default_factory=list)
    missing_time: list[tuple[str, int]] = field(default_factory=list)
    dropped_short: int = 0


def build_sequences(records: list[RawRecord], gap_seconds: float = 86400.0,
                    report: BuildReport | None = None) -> list[RecordSequence]:
    """Group records by vessel, sort by time and cut at large gaps.

    Duplicate ``(vessel, time)`` rows keep the first occurrence. Records
    without a timestamp cannot be placed and are skipped. Both are noted in
    ``report`` when one is given.
    """
    report = report if report is not None else BuildReport()
    by_vessel: dict[str, list[RawRecord]] = {}
    for r in records:
        if np.isnan(r.values[Attr.TIME]):
            report.missing_time.append((r.vessel_id, r.line))
            continue
        by_vessel.setdefault(r.vessel_id, []).append(r)
    out = []
    for vid in sorted(by_vessel):
        rows = by_vessel[vid]
        # stable sort keeps file order among equal timestamps, so "first" is well defined
        rows = sorted(rows, key=lambda r: r.values[Attr.TIME])
        kept, seen = [], set()
        for r in rows:
            t = float(r.values[Attr.TIME])
            if t in seen:
                report.duplicates.append((vid, t))
                continue
            seen.add(t)
            kept.append(r.values)
        grid = np.array(kept)
        cuts = np.flatnonzero(np.diff(grid[:, Attr.TIME]) > gap_seconds) + 1
        for k, part in enumerate(np.split(grid, cuts)):
            if len(part) < 2:
                report.dropped_short += 1
                continue
            out.append(RecordSequence(vid, part, key=f"{vid}-{k}"))
    return out


SPLITS = ("train", "val", "test")


@dataclass
class NormStats:
    """Training-split statistics used for normalization and noise scaling."""

    mean: dict[Attr, float]
    std: dict[Attr, float]
    delta_std: dict[Attr, float]
    mean_dt: float
    flagged: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "mean": {Attr(k).name.lower(): v for k, v in self.mean.items()},
            "std": {Attr(k).name.lower(): v for k, v in self.std.items()},
            "delta_std": {Attr(k).name.lower(): v for k, v in self.delta_std.items()},
            "mean_dt": self.mean_dt,
            "flagged": list(self.flagged),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        conv = lambda m: {Attr[k.upper()]: float(v) for k, v in m.items()}  # noqa: E731
        return cls(conv(d["mean"]), conv(d["std"]), conv(d["delta_std"]), float(d["mean_dt"]),
                   list(d.get("flagged", [])))


def _wrap180(x):
    return (np.asarray(x) + 180.0) % 360.0 - 180.0


def compute_norm_stats(train: list[RecordSequence]) -> NormStats:
    """Population mean/std per continuous attribute and per-channel delta stds.

    Only observed cells are used. Deltas are taken between consecutive
    observed values of a channel; longitude and angle deltas are wrapped to
    the shorter arc. Stds are floored at 1e-8. An attribute never observed
    gets NaN statistics and is listed in ``flagged``.
    """
    if not train:
        raise ValueError("training split is empty")
    mean, std, dstd, flagged = {}, {}, {}, []
    for a in CONTINUOUS:
        vals = np.concatenate([s.values[s.obs_mask[:, a], a] for s in train])
        if vals.size == 0:
            mean[a], std[a] = float("nan"), float("nan")
            flagged.append(Attr(a).name.lower())
            continue
        mean[a] = float(vals.mean())
        std[a] = max(float(vals.std()), STD_FLOOR)
    dt_all = None
    for a in DELTA_CHANNELS:
        ds = [np.diff(s.values[s.obs_mask[:, a], a]) for s in train]
        d = np.concatenate(ds) if ds else np.zeros(0)
        if a in (Attr.LON,) + CYCLICAL:
            d = _wrap180(d)
        if a == Attr.TIME:
            dt_all = d
        if d.size == 0:
            dstd[a] = float("nan")
            flagged.append(f"delta_{Attr(a).name.lower()}")
            continue
        dstd[a] = max(float(d.std()), STD_FLOOR)
    mean_dt = float(dt_all.mean()) if dt_all is not None and dt_all.size else 1.0
    return NormStats(mean, std, dstd, max(mean_dt, STD_FLOOR), flagged)


@dataclass
class Dataset:
    """Sequences with their split assignment and (optionally) corrupted inputs.

    ``inputs[i]``, when not None, is the ``T x 12`` grid the model sees for
    sequence ``i`` (noisy visible values, NaN elsewhere). Without it the
    model sees the clean visible values.
    """

    sequences: list[RecordSequence]
    split: list[str]
    stats: NormStats | None = None
    inputs: list[np.ndarray | None] = field(default_factory=list)
    category_counts: dict | None = None

    def __post_init__(self):
        if len(self.split) != len(self.sequences):
            raise ValueError("split assignment length must match sequences")
        if not self.inputs:
            self.inputs = [None] * len(self.sequences)

    def indices(self, part: str) -> list[int]:
        return [i for i, s in enumerate(self.split) if s == part]

    def part(self, name: str) -> list[RecordSequence]:
        return [self.sequences[i] for i in self.indices(name)]

    @property
    def train(self) -> list[RecordSequence]:
        return self.part("train")

    @property
    def val(self) -> list[RecordSequence]:
        return self.part("val")

    @property
    def test(self) -> list[RecordSequence]:
        return self.part("test")

    def model_input(self, i: int) -> np.ndarray:
        x = self.inputs[i]
        return self.sequences[i].visible_values() if x is None else x

    def replace(self, sequences=None, inputs=None) -> "Dataset":
        return Dataset(list(self.sequences if sequences is None else sequences), list(self.split),
                       self.stats, list(self.inputs if inputs is None else inputs), self.category_counts)


def split_dataset(seqs: list[RecordSequence], seed: int, fractions=(0.8, 0.1, 0.1)) -> Dataset:
    """Deterministic shuffle then 80/10/10 assignment (every part gets at least one)."""
    n = len(seqs)
    if n < 3:
        raise ValueError(f"need at least 3 sequences to split, got {n}")
    n_val = max(1, int(round(fractions[1] * n)))
    n_test = max(1, int(round(fractions[2] * n)))
    n_train = n - n_val - n_test
    order = rng_stream(seed, "split").permutation(n)
    split = [""] * n
    for rank, i in enumerate(order):
        split[i] = "train" if rank < n_train else ("val" if rank < n_train + n_val else "test")
    ds = Dataset(list(seqs), split)
    ds.stats = compute_norm_stats(ds.train)
    return ds


# ---------------------------------------------------------------- dataset directory

def format_value(x: float) -> str:
    if np.isnan(x):
        return ""
    if float(x).is_integer() and abs(x) < 2 ** 53:
        return str(int(x))
    return repr(float(x))


def write_grid(path: Path, ds: Dataset, grids) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sequence", "split"] + CSV_COLUMNS)
        for seq, part, grid in zip(ds.sequences, ds.split, grids):
            if grid is None:
                continue
            for row in grid:
                w.writerow([seq.key, part, seq.vessel_id] + [format_value(row[_COLUMN_TO_ATTR[c]]) for c in CSV_COLUMNS[1:]])


def read_grid(path: Path) -> dict[str, tuple[str, str, np.ndarray]]:
    out: dict[str, list] = {}
    meta: dict[str, tuple[str, str]] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        need = ["sequence", "split"] + CSV_COLUMNS
        if reader.fieldnames is None or [c for c in need if c not in reader.fieldnames]:
            raise IngestError(f"{path}:1: header must contain {','.join(need)}")
        for lineno, row in enumerate(reader, start=2):
            vals = np.full(N_ATTRS, np.nan)
            for c in CSV_COLUMNS[1:]:
                cell = row[c].strip()
                if cell:
                    try:
                        vals[_COLUMN_TO_ATTR[c]] = float(cell)
                    except ValueError:
                        raise IngestError(f"{path}:{lineno}: {c}: not a number: {cell!r}") from None
            key = row["sequence"]
            out.setdefault(key, []).append(vals)
            meta[key] = (row[ID_COLUMN], row["split"])
    return {k: (meta[k][0], meta[k][1], np.array(v)) for k, v in out.items()}


def save_dataset(ds: Dataset, out_dir, extra_manifest: dict | None = None) -> None:
    """Write ``records.csv``, ``targets.csv``, ``stats.json``, ``manifest.json``
    and, if any sequence has corrupted inputs, ``inputs.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_grid(out / "records.csv", ds, [s.values for s in ds.sequences])
    with (out / "targets.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sequence", "t", "attribute", "flag"])
        for s in ds.sequences:
            for t, a in zip(*np.nonzero(s.target_mask)):
                w.writerow([s.key, int(t), TAXONOMY[a].name, 1])
    if any(x is not None for x in ds.inputs):
        write_grid(out / "inputs.csv", ds, ds.inputs)
    elif (out / "inputs.csv").exists():
        (out / "inputs.csv").unlink()
    if ds.stats is not None:
        (out / "stats.json").write_text(json.dumps(ds.stats.to_dict(), indent=2, sort_keys=True) + "\n")
    manifest = {"sequences": [s.key for s in ds.sequences],
                "category_counts": {Attr(k).name.lower(): int(v) for k, v in (ds.category_counts or {}).items()}}
    manifest.update(extra_manifest or {})
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_dataset(path) -> Dataset:
    d = Path(path)
    if not (d / "records.csv").exists():
        raise IngestError(f"{d}: not a dataset directory (records.csv missing)")
    manifest = json.loads((d / "manifest.json").read_text()) if (d / "manifest.json").exists() else {}
    grids = read_grid(d / "records.csv")
    order = manifest.get("sequences") or list(grids)
    targets = {k: np.zeros_like(grids[k][2], dtype=bool) for k in order}
    tpath = d / "targets.csv"
    if tpath.exists():
        with tpath.open(newline="", encoding="utf-8") as fh:
            for lineno, row in enumerate(csv.DictReader(fh), start=2):
                key = row["sequence"]
                if key not in targets:
                    raise IngestError(f"{tpath}:{lineno}: unknown sequence {key!r}")
                try:
                    a = Attr[row["attribute"].strip().upper()]
                    t = int(row["t"])
                except (KeyError, ValueError):
                    raise IngestError(f"{tpath}:{lineno}: bad target row {row}") from None
                if not 0 <= t < len(targets[key]):
                    raise IngestError(f"{tpath}:{lineno}: t={t} outside sequence {key!r}")
                targets[key][t, a] = row.get("flag", "1").strip() not in ("0", "")
    inputs_grid = read_grid(d / "inputs.csv") if (d / "inputs.csv").exists() else {}
    seqs, split, inputs = [], [], []
    for k in order:
        vid, part, grid = grids[k]
        seqs.append(RecordSequence(vid, grid, target_mask=targets[k], key=k))
        split.append(part)
        inputs.append(inputs_grid[k][2] if k in inputs_grid else None)
    stats = NormStats.from_dict(json.loads((d / "stats.json").read_text())) if (d / "stats.json").exists() else None
    cc = {Attr[k.upper()]: v for k, v in manifest.get("category_counts", {}).items()} or None
    return Dataset(seqs, split, stats, inputs, cc)


def ingest_files(paths, schema: SchemaConfig | None = None, gap_seconds: float = 86400.0,
                 seed: int = 0) -> tuple[Dataset, list[RowError], BuildReport]:
    schema = schema or SchemaConfig()
    records, errors = [], []
    for p in paths:
        res = parse_csv(p, schema)
        records.extend(res.records)
        errors.extend(res.errors)
    report = BuildReport()
    seqs = build_sequences(records, gap_seconds, report)
    ds = split_dataset(seqs, seed)
    ds.category_counts = schema.category_counts
    return ds, errors, report
