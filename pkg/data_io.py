"""
data_io.py — Reading and writing measurement files
---------------------------------------------------
Formats:

- correlation histograms: CSV ``tau_s,counts`` (optional leading
  ``# normalization: <value>`` line)
- PLE scans: CSV ``scan_id,freq_hz,counts``, one row per point
- power series: CSV ``power_w,rabi_hz,rabi_sigma_hz,gamma_perp_hz,gamma_perp_sigma_hz``
- generic x/y data: CSV with two or three columns (x, y, optional sigma)
- time tags: binary (8-byte magic ``TLSTAG01`` then little-endian float64
  seconds) or CSV with header ``time_s``

Validation errors carry the 1-based file line number.
"""

import io
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from emitter_types import CorrelationCurve, DataFormatError, InvalidParameterError, PleScan, to_angular
from photon_simulator import PhotonStream
from regime_classifier import PowerEntry, PowerSeries

logger = logging.getLogger("coherence.io")

PathLike = Union[str, Path]

CORRELATION_COLUMNS = ("tau_s", "counts")
PLE_COLUMNS = ("scan_id", "freq_hz", "counts")
POWER_COLUMNS = ("power_w", "rabi_hz", "rabi_sigma_hz", "gamma_perp_hz", "gamma_perp_sigma_hz")
TIME_TAG_MAGIC = b"TLSTAG01"
TIME_TAG_DTYPE = np.dtype("<f8")
TIME_TAG_HEADER = "time_s"

BIN_UNIFORMITY_RTOL = 1e-6
NORMALIZATION_PREFIX = "# normalization:"


@dataclass(frozen=True)
class XYData:
    x: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)
    sigma: Optional[np.ndarray] = field(default=None, repr=False)
    x_name: str = "x"
    y_name: str = "y"


# ============================================================
# CSV HELPERS
# ============================================================

def _read_lines(path: PathLike) -> Tuple[List[str], List[str]]:
    """Split a CSV file into leading comment lines and the rest."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise InvalidParameterError(f"file not found: {path}") from None
    lines = text.splitlines()
    comments = []
    while lines and lines[0].startswith("#"):
        comments.append(lines.pop(0))
    return comments, lines


def _read_table(path: PathLike, required: Sequence[str], exact: bool = False) -> Tuple[pd.DataFrame, int, List[str]]:
    """Load a CSV as strings. Returns the frame, the line number of its header and the comments."""
    comments, lines = _read_lines(path)
    header_line = len(comments) + 1
    if not lines:
        raise DataFormatError(f"{path}: file has no header", header_line)
    try:
        frame = pd.read_csv(io.StringIO("\n".join(lines)), dtype=str, keep_default_na=False,
                            skip_blank_lines=False, skipinitialspace=True)
    except pd.errors.ParserError as exc:
        match = re.search(r"line (\d+)", str(exc))
        line = int(match.group(1)) + len(comments) if match else None
        raise DataFormatError(f"{path}: malformed row ({exc})", line) from None
    frame.columns = [c.strip() for c in frame.columns]

    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise DataFormatError(f"{path}: missing column(s): {', '.join(missing)}", header_line)
    if exact and tuple(frame.columns) != tuple(required):
        raise DataFormatError(f"{path}: header must be '{','.join(required)}'", header_line)
    # drop trailing or interior blank lines but keep numbering
    blank = (frame == "").all(axis=1)
    return frame[~blank], header_line, comments


def _numeric_column(frame: pd.DataFrame, column: str, path: PathLike, header_line: int) -> np.ndarray:
    values = pd.to_numeric(frame[column].str.strip(), errors="coerce")
    bad = values.isna() | ~np.isfinite(values.to_numpy(dtype=float, na_value=np.nan))
    if bad.any():
        index = int(np.flatnonzero(bad.to_numpy())[0])
        line = header_line + 1 + int(frame.index[index])
        raise DataFormatError(f"{path}: non-numeric or non-finite {column} value {frame[column].iloc[index]!r}", line)
    return values.to_numpy(dtype=float)


def _line_of(frame: pd.DataFrame, position: int, header_line: int) -> int:
    return header_line + 1 + int(frame.index[position])


# ============================================================
# CORRELATION HISTOGRAMS
# ============================================================

def load_correlation_csv(path: PathLike) -> CorrelationCurve:
    """
    Load a correlation histogram.

    Raises:
        DataFormatError: malformed rows, non-uniform bins or negative counts,
            naming the first offending line
    """
    frame, header_line, comments = _read_table(path, CORRELATION_COLUMNS, exact=True)
    if len(frame) < 2:
        raise DataFormatError(f"{path}: need at least two bins", header_line)
    tau = _numeric_column(frame, "tau_s", path, header_line)
    counts = _numeric_column(frame, "counts", path, header_line)

    negative = np.flatnonzero(counts < 0)
    if negative.size:
        raise DataFormatError(f"{path}: negative counts", _line_of(frame, int(negative[0]), header_line))
    steps = np.diff(tau)
    bin_width = float(steps[0])
    if not bin_width > 0:
        raise DataFormatError(f"{path}: tau_s must be strictly increasing", _line_of(frame, 1, header_line))
    off = np.flatnonzero(np.abs(steps - bin_width) > BIN_UNIFORMITY_RTOL * bin_width)
    if off.size:
        raise DataFormatError(f"{path}: non-uniform bins", _line_of(frame, int(off[0]) + 1, header_line))

    normalization = None
    for comment in comments:
        if comment.startswith(NORMALIZATION_PREFIX):
            try:
                normalization = float(comment[len(NORMALIZATION_PREFIX):])
            except ValueError:
                raise DataFormatError(f"{path}: unreadable normalization comment", comments.index(comment) + 1) from None
    if normalization is None:
        return CorrelationCurve.from_counts(tau, counts, bin_width)
    return CorrelationCurve(tau_bins=tau, counts=counts, bin_width=bin_width, normalization=normalization)


def write_correlation_csv(curve: CorrelationCurve, path: PathLike) -> Path:
    rows = [f"{NORMALIZATION_PREFIX} {curve.normalization!r}", ",".join(CORRELATION_COLUMNS)]
    rows.extend(f"{t!r},{c!r}" for t, c in zip(curve.tau_bins.tolist(), curve.counts.tolist()))
    target = Path(path)
    target.write_text("\n".join(rows) + "\n", encoding="utf-8")
    return target


# ============================================================
# PLE SCANS
# ============================================================

def _scan_sort_key(scan_id: str):
    return (0, int(scan_id), scan_id) if scan_id.lstrip("-").isdigit() else (1, 0, scan_id)


def load_ple_scans(path: PathLike) -> List[PleScan]:
    """Group PLE rows by scan id; scans come back ordered by id, points by frequency."""
    frame, header_line, _ = _read_table(path, PLE_COLUMNS)
    if frame.empty:
        raise DataFormatError(f"{path}: no scan rows", header_line)
    frequency = _numeric_column(frame, "freq_hz", path, header_line)
    counts = _numeric_column(frame, "counts", path, header_line)
    ids = frame["scan_id"].str.strip().to_numpy()

    empty = np.flatnonzero(ids == "")
    if empty.size:
        raise DataFormatError(f"{path}: empty scan_id", _line_of(frame, int(empty[0]), header_line))
    negative = np.flatnonzero(counts < 0)
    if negative.size:
        raise DataFormatError(f"{path}: negative counts", _line_of(frame, int(negative[0]), header_line))

    scans = []
    for scan_id in sorted(set(ids), key=_scan_sort_key):
        rows = ids == scan_id
        scans.append(PleScan(scan_id=str(scan_id), frequency_hz=frequency[rows], counts=counts[rows]))
    dark = sum(s.is_dark for s in scans)
    logger.info("loaded %d PLE scan(s) from %s (%d dark)", len(scans), path, dark)
    return scans


# ============================================================
# GENERIC X/Y DATA
# ============================================================

def load_xy_csv(path: PathLike) -> XYData:
    """Two or three numeric columns: x, y and optionally the y uncertainty."""
    frame, header_line, _ = _read_table(path, ())
    if frame.shape[1] not in (2, 3):
        raise DataFormatError(f"{path}: expected 2 or 3 columns, found {frame.shape[1]}", header_line)
    names = list(frame.columns)
    x = _numeric_column(frame, names[0], path, header_line)
    y = _numeric_column(frame, names[1], path, header_line)
    sigma = None
    if len(names) == 3:
        sigma = _numeric_column(frame, names[2], path, header_line)
        bad = np.flatnonzero(sigma <= 0)
        if bad.size:
            raise DataFormatError(f"{path}: uncertainties must be > 0", _line_of(frame, int(bad[0]), header_line))
    return XYData(x=x, y=y, sigma=sigma, x_name=names[0], y_name=names[1])


# ============================================================
# POWER SERIES
# ============================================================

def load_power_series(path: PathLike, temperature: float) -> PowerSeries:
    """Per-power fit results in Hz, converted to angular units."""
    frame, header_line, _ = _read_table(path, POWER_COLUMNS)
    columns: Dict[str, np.ndarray] = {c: _numeric_column(frame, c, path, header_line) for c in POWER_COLUMNS}
    order = np.argsort(columns["power_w"], kind="stable")
    entries = []
    for i in order:
        try:
            entries.append(PowerEntry(
                power=float(columns["power_w"][i]),
                omega=to_angular(float(columns["rabi_hz"][i])),
                omega_sigma=to_angular(float(columns["rabi_sigma_hz"][i])),
                gamma_perp=to_angular(float(columns["gamma_perp_hz"][i])),
                gamma_perp_sigma=to_angular(float(columns["gamma_perp_sigma_hz"][i])),
            ))
        except InvalidParameterError as exc:
            raise DataFormatError(f"{path}: {exc}", _line_of(frame, int(i), header_line)) from None
    return PowerSeries(temperature=temperature, entries=entries)


# ============================================================
# TIME TAGS
# ============================================================

def write_time_tags(stream: PhotonStream, path: PathLike, format: str = "binary") -> Path:
    target = Path(path)
    if format == "binary":
        target.write_bytes(TIME_TAG_MAGIC + stream.arrival_times.astype(TIME_TAG_DTYPE).tobytes())
    elif format == "csv":
        rows = [TIME_TAG_HEADER] + [repr(t) for t in stream.arrival_times.tolist()]
        target.write_text("\n".join(rows) + "\n", encoding="utf-8")
    else:
        raise InvalidParameterError(f"Unsupported time-tag format: {format}. Choose from: binary, csv")
    logger.info("wrote %d time tags to %s", len(stream), target)
    return target


def read_time_tags(path: PathLike, total_duration: Optional[float] = None, seed: int = 0) -> PhotonStream:
    """Read a binary or CSV time-tag file; the format is detected from the magic header."""
    source = Path(path)
    try:
        raw = source.read_bytes()
    except FileNotFoundError:
        raise InvalidParameterError(f"file not found: {path}") from None

    if raw.startswith(TIME_TAG_MAGIC):
        payload = raw[len(TIME_TAG_MAGIC):]
        if len(payload) % TIME_TAG_DTYPE.itemsize:
            raise DataFormatError(f"{path}: truncated binary record", None)
        times = np.frombuffer(payload, dtype=TIME_TAG_DTYPE).astype(float)
    else:
        frame, header_line, _ = _read_table(source, (TIME_TAG_HEADER,), exact=True)
        times = _numeric_column(frame, TIME_TAG_HEADER, source, header_line)

    if times.size and np.any(np.diff(times) <= 0):
        index = int(np.flatnonzero(np.diff(times) <= 0)[0]) + 1
        raise DataFormatError(f"{path}: time tags must be strictly increasing (record {index + 1})", None)
    duration = total_duration if total_duration is not None else (float(times[-1]) if times.size else 0.0)
    if not duration > 0:
        raise DataFormatError(f"{path}: cannot infer a positive stream duration", None)
    return PhotonStream(arrival_times=times, total_duration=duration, seed=seed)
