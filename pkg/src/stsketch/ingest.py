"""Rasterise point events (CSV) into a (time, latitude, longitude) count tensor."""

from __future__ import annotations

import csv
import logging
import math
import re
from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np

from .tensor import DenseTensor

log = logging.getLogger(__name__)

_UNITS = {"s": 1, "m": 60, "h": 3600, "d": 86400, "w": 604800}


class InputError(ValueError):
    pass


@dataclass(frozen=True)
class Grid:
    """Half-open cells ``[lo + n*cell, lo + (n+1)*cell)`` on each axis."""

    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float
    cell: float

    def __post_init__(self):
        if self.cell <= 0 or self.lat_max <= self.lat_min or self.lon_max <= self.lon_min:
            raise ValueError(f"empty grid {self}")

    @classmethod
    def parse(cls, text: str) -> Grid:
        """``lat_min,lat_max,lon_min,lon_max,cell``"""
        vals = [float(x) for x in text.split(",")]
        if len(vals) != 5:
            raise ValueError("grid needs lat_min,lat_max,lon_min,lon_max,cell")
        return cls(*vals)

    @property
    def n_lat(self) -> int:
        return int(round((self.lat_max - self.lat_min) / self.cell))

    @property
    def n_lon(self) -> int:
        return int(round((self.lon_max - self.lon_min) / self.cell))

    def cell_index(self, value, lo: float, n: int) -> np.ndarray:
        # rounding absorbs representation error so exact boundaries land in the upper cell
        idx = np.floor(np.round((np.asarray(value, dtype=float) - lo) / self.cell, 9)).astype(np.int64)
        return np.where((idx >= 0) & (idx < n), idx, -1)


NYC_GRID = Grid(40.66, 40.86, -74.03, -73.91, 0.001)


def parse_bin_width(text) -> float:
    """Seconds in a bin spec such as ``1d``, ``6h``, ``15m``, ``30s`` or ``3600``."""
    text = str(text).strip()
    m = re.fullmatch(r"(\d+(?:\.\d+)?)\s*([smhdw]?)", text)
    if not m:
        raise ValueError(f"bad bin width {text!r}")
    width = float(m.group(1)) * _UNITS.get(m.group(2) or "s")
    if width <= 0:
        raise ValueError("bin width must be positive")
    return width


def parse_timestamp(text: str) -> float:
    """Epoch seconds from a number or an ISO-8601 string (naive means UTC)."""
    text = text.strip()
    try:
        return float(text)
    except ValueError:
        pass
    dt = datetime.fromisoformat(text.replace("Z", "+00:00"))
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


@dataclass(frozen=True)
class IngestResult:
    tensor: DenseTensor
    accepted: float  # total count placed in the tensor
    accepted_rows: int
    outside_grid: int
    skipped_rows: int
    origin: float  # epoch seconds of the start of bin 0


def ingest_csv(path, grid: Grid, bin_width, axis_order: str = "lat_lon", origin: float | None = None) -> IngestResult:
    """Count events per (time bin, lat cell, lon cell).

    ``axis_order="lon_lat"`` swaps the two spatial modes.  Rows that do not
    parse are skipped and counted; events outside the grid are dropped and
    counted.
    """
    if axis_order not in ("lat_lon", "lon_lat"):
        raise ValueError("axis_order must be 'lat_lon' or 'lon_lat'")
    width = parse_bin_width(bin_width)
    ts, lat, lon, cnt = [], [], [], []
    skipped = 0
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        fields = {f.strip().lower(): f for f in (reader.fieldnames or [])}
        missing = {"timestamp", "lat", "lon"} - set(fields)
        if missing:
            raise InputError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            try:
                t = parse_timestamp(row[fields["timestamp"]])
                la = float(row[fields["lat"]])
                lo = float(row[fields["lon"]])
                c = float(row[fields["count"]]) if "count" in fields and row[fields["count"]] not in (None, "") else 1.0
                if not all(math.isfinite(v) for v in (t, la, lo, c)):
                    raise ValueError("non-finite field")
            except (ValueError, TypeError, KeyError):
                skipped += 1
                continue
            ts.append(t)
            lat.append(la)
            lon.append(lo)
            cnt.append(c)
    if skipped:
        log.warning("%s: skipped %d unparseable rows", path, skipped)
    if not ts:
        raise InputError(f"{path}: no parseable rows")
    ts = np.array(ts)
    if origin is None:
        origin = math.floor(ts.min() / width) * width
    tbin = np.floor((ts - origin) / width).astype(np.int64)
    ilat = grid.cell_index(lat, grid.lat_min, grid.n_lat)
    ilon = grid.cell_index(lon, grid.lon_min, grid.n_lon)
    ok = (ilat >= 0) & (ilon >= 0) & (tbin >= 0)
    cnt = np.array(cnt)
    n_bins = int(tbin[ok].max()) + 1 if ok.any() else 1
    if axis_order == "lat_lon":
        shape, j, k = (n_bins, grid.n_lat, grid.n_lon), ilat, ilon
    else:
        shape, j, k = (n_bins, grid.n_lon, grid.n_lat), ilon, ilat
    X = np.zeros(shape)
    np.add.at(X, (tbin[ok], j[ok], k[ok]), cnt[ok])
    return IngestResult(DenseTensor(X), float(cnt[ok].sum()), int(ok.sum()), int((~ok).sum()), skipped, float(origin))
