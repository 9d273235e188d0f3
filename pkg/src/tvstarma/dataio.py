"""File formats and ingestion.

All numeric text is written with ``repr`` (shortest round-trip form), LF line
endings, and sorted JSON keys, so identical inputs produce byte-identical
files.  CSV files may carry ``# key: value`` comment lines before the header;
they hold provenance (config hash, seed) and are skipped on read.

Formats are documented in docs/formats.md.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import dataclass
from datetime import date, timedelta
from pathlib import Path

import numpy as np

from .model import FitResult, ModelSpec, PanelSeries
from .spatial import StationGeometry

__all__ = [
    "sha256_file",
    "config_hash",
    "write_panel_csv",
    "read_panel_csv",
    "write_geometry_csv",
    "read_geometry_csv",
    "write_matrix_csv",
    "read_matrix_csv",
    "fit_result_to_dict",
    "write_fit_json",
    "read_fit_json",
    "IngestResult",
    "ingest_panel",
    "log10_transform",
    "write_json",
    "validate_keys",
]

PANEL_FORMAT = "tvstarma.panel.v1"
GEOMETRY_FORMAT = "tvstarma.geometry.v1"
MATRIX_FORMAT = "tvstarma.matrix.v1"
FIT_FORMAT = "tvstarma.fit.v1"


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def config_hash(config: dict) -> str:
    """Hash of the canonical JSON rendering of a config mapping."""
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def validate_keys(obj: dict, allowed, required, what: str) -> None:
    """Reject unknown keys and report missing required ones."""
    unknown = sorted(set(obj) - set(allowed))
    if unknown:
        raise ValueError(f"{what}: unknown keys {unknown}; allowed: {sorted(allowed)}")
    missing = sorted(set(required) - set(obj))
    if missing:
        raise ValueError(f"{what}: missing required keys {missing}")


def _meta_lines(fmt: str, meta: dict | None) -> list[str]:
    lines = [f"# format: {fmt}"]
    for k, v in (meta or {}).items():
        lines.append(f"# {k}: {v}")
    return lines


def _read_csv_skip_comments(path):
    """Yield (line_number, row) pairs, collecting leading comment metadata."""
    meta = {}
    rows = []
    with open(path, newline="") as f:
        for lineno, line in enumerate(f, start=1):
            stripped = line.strip()
            if not stripped:
                continue
            if stripped.startswith("#"):
                body = stripped.lstrip("#").strip()
                if ":" in body:
                    k, v = body.split(":", 1)
                    meta[k.strip()] = v.strip()
                continue
            rows.append((lineno, next(csv.reader([line]))))
    return meta, rows


def write_panel_csv(path, panel: PanelSeries, meta: dict | None = None) -> None:
    """Panel as CSV: first column t = 1..T, one column per station id."""
    buf = io.StringIO()
    for line in _meta_lines(PANEL_FORMAT, meta):
        buf.write(line + "\n")
    buf.write("t," + ",".join(panel.ids) + "\n")
    for t in range(panel.T):
        buf.write(str(t + 1) + "," + ",".join(repr(v) for v in panel.values[t]) + "\n")
    Path(path).write_text(buf.getvalue())


def read_panel_csv(path) -> tuple[PanelSeries, dict]:
    meta, rows = _read_csv_skip_comments(path)
    if not rows:
        raise ValueError(f"{path}: empty panel file")
    header = rows[0][1]
    if not header or header[0] != "t":
        raise ValueError(f"{path}: expected header starting with 't', got {header[:3]}")
    ids = tuple(header[1:])
    values = []
    for expected_t, (lineno, row) in enumerate(rows[1:], start=1):
        if len(row) != len(ids) + 1:
            raise ValueError(
                f"{path}:{lineno}: expected {len(ids) + 1} fields, got {len(row)}"
            )
        if int(row[0]) != expected_t:
            raise ValueError(
                f"{path}:{lineno}: time index {row[0]} out of order (expected {expected_t})"
            )
        values.append([float(v) for v in row[1:]])
    return PanelSeries(values=np.array(values), ids=ids), meta


def write_geometry_csv(path, geom: StationGeometry, meta: dict | None = None) -> None:
    buf = io.StringIO()
    for line in _meta_lines(GEOMETRY_FORMAT, meta):
        buf.write(line + "\n")
    buf.write("id,lat,lon\n")
    for i, sid in enumerate(geom.ids):
        buf.write(f"{sid},{geom.latitudes[i]!r},{geom.longitudes[i]!r}\n")
    Path(path).write_text(buf.getvalue())


def read_geometry_csv(path) -> StationGeometry:
    _, rows = _read_csv_skip_comments(path)
    if not rows:
        raise ValueError(f"{path}: empty geometry file")
    lineno, header = rows[0]
    if [h.strip() for h in header] != ["id", "lat", "lon"]:
        raise ValueError(f"{path}:{lineno}: expected header 'id,lat,lon', got {header}")
    records = []
    for lineno, row in rows[1:]:
        if len(row) != 3:
            raise ValueError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
        try:
            records.append((row[0], float(row[1]), float(row[2])))
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from None
    return StationGeometry.from_records(records)


def write_matrix_csv(path, matrix: np.ndarray, ids, meta: dict | None = None) -> None:
    """Square labelled matrix (weight matrices, dictionary dumps)."""
    ids = list(ids)
    buf = io.StringIO()
    for line in _meta_lines(MATRIX_FORMAT, meta):
        buf.write(line + "\n")
    buf.write("id," + ",".join(ids) + "\n")
    for i, sid in enumerate(ids):
        buf.write(sid + "," + ",".join(repr(v) for v in matrix[i]) + "\n")
    Path(path).write_text(buf.getvalue())


def read_matrix_csv(path) -> tuple[np.ndarray, tuple[str, ...]]:
    _, rows = _read_csv_skip_comments(path)
    ids = tuple(rows[0][1][1:])
    values = [[float(v) for v in row[1:]] for _, row in rows[1:]]
    return np.array(values), ids


def _curve_key(pair: tuple[int, int]) -> str:
    return f"{pair[0]},{pair[1]}"


def fit_result_to_dict(fit: FitResult, provenance: dict | None = None) -> dict:
    spec = fit.spec
    doc = {
        "format": FIT_FORMAT,
        "method": fit.method,
        "model": {
            "p": spec.p,
            "lambda": list(spec.lam),
            "q": spec.q,
            "m": list(spec.m),
            "J": spec.J,
            "wavelet": spec.family,
        },
        "t0": fit.t0,
        "coefficient_layout": "per-lag-pair blocks (AR pairs then MA pairs), "
        "dictionary order within each block",
        "beta_hat": [float(v) for v in fit.beta_hat],
        "phi_curves": {
            _curve_key(k): [float(x) for x in v] for k, v in fit.phi_curves.items()
        },
        "theta_curves": {
            _curve_key(k): [float(x) for x in v] for k, v in fit.theta_curves.items()
        },
        "sigma2_hat": float(fit.sigma2_hat),
        "mse": float(fit.mse),
        "provenance": provenance or {},
    }
    if fit.sigma_hat is not None:
        doc["sigma_hat"] = [[float(x) for x in row] for row in fit.sigma_hat]
    diag = {
        k: v
        for k, v in fit.diagnostics.items()
        if isinstance(v, (int, float, str, bool))
    }
    if diag:
        doc["diagnostics"] = diag
    return doc


def write_json(path, doc: dict) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def write_fit_json(path, fit: FitResult, provenance: dict | None = None) -> None:
    write_json(path, fit_result_to_dict(fit, provenance))


def read_fit_json(path) -> dict:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != FIT_FORMAT:
        raise ValueError(f"{path}: not a {FIT_FORMAT} document")
    return doc


@dataclass(frozen=True)
class IngestResult:
    """Cleaned panel plus the bookkeeping of what was dropped and why."""

    panel: PanelSeries
    geometry: StationGeometry
    dropped: dict[str, str]
    unknown_station_records: int
    records_read: int
    start: date
    end: date

    def report(self) -> str:
        lines = [
            f"window {self.start.isoformat()} .. {self.end.isoformat()} "
            f"({self.panel.T} days)",
            f"records read: {self.records_read}",
            f"stations kept: {self.panel.n}",
        ]
        if self.unknown_station_records:
            lines.append(
                f"records for stations not in the geometry: "
                f"{self.unknown_station_records} (ignored)"
            )
        if self.dropped:
            lines.append(f"stations dropped: {len(self.dropped)}")
            for sid, reason in sorted(self.dropped.items()):
                lines.append(f"  {sid}: {reason}")
        else:
            lines.append("stations dropped: 0")
        return "\n".join(lines)


def ingest_panel(records_path, geometry_path, start: date, end: date) -> IngestResult:
    """Build an aligned daily panel from long-format records.

    The records file has header ``station_id,date,value_tenths_mm`` with ISO
    dates.  Only stations with a value for every calendar day in the
    inclusive window survive; the rest are dropped and reported.  Malformed
    rows, negative values, and duplicate (station, day) entries are errors
    with the offending line number.
    """
    if start > end:
        raise ValueError(f"window start {start} is after end {end}")
    geom = read_geometry_csv(geometry_path)
    n_days = (end - start).days + 1
    day_index = {start + timedelta(days=k): k for k in range(n_days)}

    station_set = set(geom.ids)
    data = {sid: np.full(n_days, np.nan) for sid in geom.ids}
    seen_anywhere = set()
    unknown = 0
    records_read = 0

    _, rows = _read_csv_skip_comments(records_path)
    if not rows:
        raise ValueError(f"{records_path}: empty records file")
    lineno, header = rows[0]
    if [h.strip() for h in header] != ["station_id", "date", "value_tenths_mm"]:
        raise ValueError(
            f"{records_path}:{lineno}: expected header "
            f"'station_id,date,value_tenths_mm', got {header}"
        )
    for lineno, row in rows[1:]:
        if len(row) != 3:
            raise ValueError(
                f"{records_path}:{lineno}: expected 3 fields, got {len(row)}"
            )
        sid, datestr, valstr = row
        records_read += 1
        try:
            day = date.fromisoformat(datestr.strip())
        except ValueError:
            raise ValueError(
                f"{records_path}:{lineno}: bad date {datestr!r} (expected ISO-8601)"
            ) from None
        try:
            val = float(valstr)
        except ValueError:
            raise ValueError(
                f"{records_path}:{lineno}: bad value {valstr!r}"
            ) from None
        if val < 0:
            raise ValueError(
                f"{records_path}:{lineno}: negative precipitation {val} "
                f"for station {sid!r}"
            )
        if sid not in station_set:
            unknown += 1
            continue
        seen_anywhere.add(sid)
        k = day_index.get(day)
        if k is None:
            continue  # outside the window
        if not np.isnan(data[sid][k]):
            raise ValueError(
                f"{records_path}:{lineno}: duplicate record for station {sid!r} "
                f"on {day.isoformat()}"
            )
        data[sid][k] = val

    absent = sorted(station_set - seen_anywhere)
    if absent:
        raise ValueError(
            f"geometry stations with no records at all: {absent}"
        )

    dropped = {}
    kept = []
    for sid in geom.ids:
        n_missing = int(np.isnan(data[sid]).sum())
        if n_missing:
            dropped[sid] = f"missing {n_missing} of {n_days} days in window"
        else:
            kept.append(sid)
    if len(kept) < 2:
        raise ValueError(
            f"cleaning left {len(kept)} station(s) with complete data; "
            "need at least 2 for a spatial panel"
        )
    values = np.column_stack([data[sid] for sid in kept])
    panel = PanelSeries(values=values, ids=tuple(kept))
    return IngestResult(
        panel=panel,
        geometry=geom.subset(kept),
        dropped=dropped,
        unknown_station_records=unknown,
        records_read=records_read,
        start=start,
        end=end,
    )


def log10_transform(panel: PanelSeries) -> PanelSeries:
    """Elementwise log10(y + 1); rejects negative inputs with cell location."""
    v = panel.values
    if np.any(v < 0):
        t, i = np.argwhere(v < 0)[0]
        raise ValueError(
            f"negative value {v[t, i]} at t={t + 1}, station {panel.ids[i]!r}; "
            "log10(y+1) requires y >= 0"
        )
    return PanelSeries(values=np.log10(v + 1.0), ids=panel.ids)
