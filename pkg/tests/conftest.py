import numpy as np
import pytest
from threadpoolctl import threadpool_limits

from aisimpute.core import N_ATTRS, Attr, RecordSequence


@pytest.fixture(autouse=True, scope="session")
def single_thread():
    with threadpool_limits(1):
        yield


def make_grid(T=10, **cols):
    """A valid ``T x 12`` grid; keyword columns (by attribute name) override defaults."""
    g = np.empty((T, N_ATTRS))
    g[:, Attr.LON] = 10.0 + 0.01 * np.arange(T)
    g[:, Attr.LAT] = 55.0 + 0.01 * np.arange(T)
    g[:, Attr.TIME] = 1.7e9 + 60.0 * np.arange(T)
    g[:, Attr.HEADING] = 90.0
    g[:, Attr.COURSE] = 92.0
    g[:, Attr.SPEED] = 10.0
    g[:, Attr.NAVSTATUS] = 0
    g[:, Attr.CARGO] = 1
    g[:, Attr.DRAUGHT] = 6.0
    g[:, Attr.LENGTH] = 120.0
    g[:, Attr.WIDTH] = 20.0
    g[:, Attr.VTYPE] = 3
    for name, v in cols.items():
        g[:, Attr[name.upper()]] = v
    return g


def make_seq(T=10, vessel="219000001", targets=None, **cols):
    return RecordSequence(vessel, make_grid(T, **cols), target_mask=targets)


def write_ais_csv(path, seqs):
    """Write sequences as a raw AIS CSV (one row per record)."""
    import csv

    from aisimpute.core import TAXONOMY
    from aisimpute.ingest import CSV_COLUMNS, format_value

    col = {s.column: s.id for s in TAXONOMY}
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for s in seqs:
            for row in s.values:
                w.writerow([s.vessel_id] + [format_value(row[col[c]]) for c in CSV_COLUMNS[1:]])
    return path


ACCEPTANCE_LINES: list[str] = []


def report(criterion: str, ok: bool, detail: str) -> bool:
    """Record one acceptance verdict; all verdicts are printed after the run."""
    line = f"{criterion}: {'PASS' if ok else 'FAIL'} ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
