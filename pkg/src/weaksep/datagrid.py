"""
Grid representation of multi-way functional samples.

A sample of ``n`` surfaces ``X_i(s, t)`` is held as a dense ``n x |S| x |T|``
array together with two quadrature axes.  Multi-dimensional spatial domains
(up to three factor axes) are flattened row-major into a single ``s`` axis
whose weights are the products of the factor weights.

Two on-disk formats are supported:

``MWFD1`` (binary, default)
    One UTF-8 JSON header line terminated by ``\\n`` followed by
    ``n*|S|*|T|`` little-endian float64 values in ``[subject][s][t]`` order.

``csv-long``
    Header ``i,s_index,t_index,value``; 0-based indices; every cell present
    exactly once.
"""
from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "DataFormatError",
    "GridAxis",
    "MultiwayDataset",
    "CenteredDataset",
    "trapezoid_weights",
    "uniform_axis",
    "center",
    "vectorize_spatial",
    "devectorize_spatial",
    "load_dataset",
    "save_dataset",
]

MAGIC = "MWFD1"
_DTYPE = np.dtype("<f8")


class DataFormatError(ValueError):
    """Raised when a dataset file cannot be parsed."""


def trapezoid_weights(points):
    """Trapezoidal quadrature weights, endpoints half-weighted."""
    x = np.asarray(points, dtype=float)
    if x.ndim != 1 or x.size < 2:
        raise ValueError("need at least two grid points")
    d = np.diff(x)
    w = np.empty_like(x)
    w[0] = d[0] / 2
    w[-1] = d[-1] / 2
    w[1:-1] = (x[2:] - x[:-2]) / 2
    return w


@dataclass(frozen=True, eq=False)
class GridAxis:
    """Sorted grid points with positive quadrature weights."""

    points: np.ndarray
    weights: np.ndarray = None

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim != 1 or pts.size < 2:
            raise ValueError("grid axis needs at least two points")
        if not np.all(np.isfinite(pts)) or np.any(np.diff(pts) <= 0):
            raise ValueError("grid points must be finite and strictly increasing")
        if self.weights is None:
            w = trapezoid_weights(pts)
        else:
            w = np.array(self.weights, dtype=float)
            if w.shape != pts.shape:
                raise ValueError("weights and points differ in length")
        if not np.all(w > 0):
            raise ValueError("quadrature weights must be positive")
        pts.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    def __len__(self):
        return self.points.size

    def inner(self, f, g):
        """Quadrature inner product along this axis."""
        return float(np.dot(self.weights, np.asarray(f) * np.asarray(g)))

    def __eq__(self, other):
        if not isinstance(other, GridAxis):
            return NotImplemented
        return (np.array_equal(self.points, other.points)
                and np.array_equal(self.weights, other.weights))

    __hash__ = None


def uniform_axis(size, start=0.0, stop=1.0):
    """Evenly spaced axis on ``[start, stop]`` including both endpoints."""
    return GridAxis(np.linspace(start, stop, size))


def _product_weights(factors):
    w = np.ones(1)
    for ax in factors:
        w = np.multiply.outer(w, ax.weights).ravel()
    return w


def _row_major_index(shape):
    return tuple(itertools.product(*(range(m) for m in shape)))


@dataclass(frozen=True, eq=False)
class MultiwayDataset:
    """``n`` surfaces on an ``s x t`` grid.

    Parameters
    ----------
    values : array, shape (n, |S|, |T|)
    s_axis, t_axis : GridAxis
    s_factors : tuple of GridAxis, optional
        Factor axes when ``s`` is a flattened product domain.  The flattened
        order is row-major over the factors.
    """

    values: np.ndarray
    s_axis: GridAxis
    t_axis: GridAxis
    s_factors: tuple = None

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 3:
            raise ValueError("values must have shape (n, |S|, |T|)")
        if v.shape[1] != len(self.s_axis) or v.shape[2] != len(self.t_axis):
            raise ValueError(
                f"dimension mismatch: values {v.shape[1:]} vs axes "
                f"({len(self.s_axis)}, {len(self.t_axis)})")
        if not np.all(np.isfinite(v)):
            raise ValueError("values must be finite")
        if self.s_factors is not None:
            factors = tuple(self.s_factors)
            if not 1 <= len(factors) <= 3:
                raise ValueError("spatial domain may have at most 3 factor axes")
            if math.prod(len(a) for a in factors) != len(self.s_axis):
                raise ValueError("s_factors do not multiply to |S|")
            object.__setattr__(self, "s_factors", factors)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def shape(self):
        return self.values.shape

    @property
    def index_map(self):
        """Multi-index of each flattened ``s`` position, or None."""
        if self.s_factors is None:
            return None
        return _row_major_index([len(a) for a in self.s_factors])

    def scaled(self, c):
        return MultiwayDataset(c * self.values, self.s_axis, self.t_axis, self.s_factors)

    def subset(self, idx):
        """Dataset made of subjects ``idx`` (repeats allowed)."""
        return MultiwayDataset(self.values[np.asarray(idx)], self.s_axis,
                               self.t_axis, self.s_factors)

    def __eq__(self, other):
        if not isinstance(other, MultiwayDataset):
            return NotImplemented
        return (np.array_equal(self.values, other.values)
                and self.s_axis == other.s_axis and self.t_axis == other.t_axis
                and (self.s_factors is None) == (other.s_factors is None)
                and (self.s_factors is None
                     or all(a == b for a, b in zip(self.s_factors, other.s_factors))))

    __hash__ = None


@dataclass(frozen=True, eq=False)
class CenteredDataset:
    """Pointwise mean surface and residuals ``X_i - Xbar``."""

    mean_surface: np.ndarray
    residuals: np.ndarray
    s_axis: GridAxis
    t_axis: GridAxis

    @property
    def n(self):
        return self.residuals.shape[0]


def center(data):
    """Subtract the pointwise sample mean.

    Accepts a :class:`MultiwayDataset` or a :class:`CenteredDataset`; in the
    latter case the residuals are re-centered, which is a no-op up to
    rounding.
    """
    if isinstance(data, CenteredDataset):
        values = data.residuals
    else:
        values = data.values
    if values.shape[0] < 2:
        raise ValueError("need at least two subjects")
    mean = values.mean(axis=0)
    resid = values - mean
    mean.setflags(write=False)
    resid.setflags(write=False)
    return CenteredDataset(mean, resid, data.s_axis, data.t_axis)


def vectorize_spatial(values, s_factors, t_axis):
    """Flatten a multi-dimensional spatial domain row-major.

    Parameters
    ----------
    values : array, shape (n, s_1, ..., s_d, |T|)
    s_factors : sequence of GridAxis, length d (1 to 3)
    t_axis : GridAxis

    Returns
    -------
    MultiwayDataset
        ``|S| = s_1 * ... * s_d``; weights are the outer product of factor
        weights.  The flattened axis uses ``0, 1, ..., |S|-1`` as points.
    """
    factors = tuple(s_factors)
    v = np.asarray(values, dtype=float)
    dims = tuple(len(a) for a in factors)
    if v.ndim != len(dims) + 2 or v.shape[1:-1] != dims:
        raise ValueError(f"values shape {v.shape} does not match factor axes {dims}")
    size = math.prod(dims)
    s_axis = GridAxis(np.arange(size, dtype=float), _product_weights(factors))
    return MultiwayDataset(v.reshape(v.shape[0], size, v.shape[-1]), s_axis,
                           t_axis, factors)


def devectorize_spatial(data):
    """Inverse of :func:`vectorize_spatial`: values as ``(n, s_1, ..., s_d, |T|)``."""
    if data.s_factors is None:
        raise ValueError("dataset has no spatial factor axes")
    dims = tuple(len(a) for a in data.s_factors)
    return data.values.reshape((data.n,) + dims + (len(data.t_axis),))


# -- file I/O ---------------------------------------------------------------

def _header_dict(data, extra=None):
    hdr = {
        "magic": MAGIC,
        "n": int(data.n),
        "s_points": data.s_axis.points.tolist(),
        "t_points": data.t_axis.points.tolist(),
        "s_weights": data.s_axis.weights.tolist(),
        "t_weights": data.t_axis.weights.tolist(),
    }
    if data.s_factors is not None:
        hdr["s_factors"] = [a.points.tolist() for a in data.s_factors]
        hdr["s_factor_weights"] = [a.weights.tolist() for a in data.s_factors]
    if extra:
        hdr.update(extra)
    return hdr


def write_mwfd(path, header, values):
    """Write a header dict and a float64 array in MWFD1 layout."""
    line = json.dumps(header, separators=(",", ":")) + "\n"
    with open(path, "wb") as fh:
        fh.write(line.encode("utf-8"))
        fh.write(np.ascontiguousarray(values, dtype=_DTYPE).tobytes())


def read_mwfd(path):
    """Read an MWFD1 file; returns ``(header, flat float64 array, data_offset)``."""
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise DataFormatError(f"{path}: malformed header (no newline terminator)")
    try:
        header = json.loads(raw[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"{path}: malformed header ({exc})") from None
    if not isinstance(header, dict) or header.get("magic") != MAGIC:
        raise DataFormatError(f"{path}: malformed header (magic is not {MAGIC!r})")
    for key in ("n", "s_points", "t_points"):
        if key not in header:
            raise DataFormatError(f"{path}: malformed header (missing {key!r})")
    offset = nl + 1
    body = raw[offset:]
    if len(body) % _DTYPE.itemsize:
        raise DataFormatError(f"{path}: dimension mismatch (payload of {len(body)} "
                              "bytes is not a whole number of float64 values)")
    flat = np.frombuffer(body, dtype=_DTYPE)
    bad = np.flatnonzero(~np.isfinite(flat))
    if bad.size:
        pos = offset + int(bad[0]) * _DTYPE.itemsize
        raise DataFormatError(f"{path}: non-finite value at byte {pos}")
    return header, flat, offset


def _axes_from_header(header, path):
    try:
        s_axis = GridAxis(header["s_points"], header.get("s_weights"))
        t_axis = GridAxis(header["t_points"], header.get("t_weights"))
        factors = None
        if header.get("s_factors") is not None:
            fw = header.get("s_factor_weights") or [None] * len(header["s_factors"])
            factors = tuple(GridAxis(p, w) for p, w in zip(header["s_factors"], fw))
            if header.get("s_weights") is None:
                s_axis = GridAxis(s_axis.points, _product_weights(factors))
    except (TypeError, ValueError) as exc:
        raise DataFormatError(f"{path}: malformed header ({exc})") from None
    return s_axis, t_axis, factors


def _load_binary(path):
    header, flat, _ = read_mwfd(path)
    s_axis, t_axis, factors = _axes_from_header(header, path)
    n = header["n"]
    if not isinstance(n, int) or n < 1:
        raise DataFormatError(f"{path}: malformed header (n must be a positive integer)")
    expected = n * len(s_axis) * len(t_axis)
    if flat.size != expected:
        raise DataFormatError(f"{path}: dimension mismatch (header declares {expected} "
                              f"values, payload has {flat.size})")
    values = flat.reshape(n, len(s_axis), len(t_axis))
    try:
        return MultiwayDataset(values, s_axis, t_axis, factors)
    except ValueError as exc:
        raise DataFormatError(f"{path}: dimension mismatch ({exc})") from None


def _load_csv(path, s_points=None, t_points=None):
    cells = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["i", "s_index", "t_index", "value"]:
            raise DataFormatError(f"{path}: malformed header (expected i,s_index,t_index,value)")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise DataFormatError(f"{path}: line {lineno}: expected 4 fields")
            try:
                i, s, t = (int(x) for x in row[:3])
                val = float(row[3])
            except ValueError:
                raise DataFormatError(f"{path}: line {lineno}: cannot parse {row!r}") from None
            if min(i, s, t) < 0:
                raise DataFormatError(f"{path}: line {lineno}: negative index")
            if not math.isfinite(val):
                raise DataFormatError(f"{path}: line {lineno}: non-finite value")
            if (i, s, t) in cells:
                raise DataFormatError(f"{path}: line {lineno}: duplicate cell {(i, s, t)}")
            cells[(i, s, t)] = val
    if not cells:
        raise DataFormatError(f"{path}: incomplete tensor (no data rows)")
    keys = np.array(list(cells))
    n, ns, nt = (keys.max(axis=0) + 1).tolist()
    if s_points is not None and len(s_points) != ns or t_points is not None and len(t_points) != nt:
        raise DataFormatError(f"{path}: dimension mismatch with supplied grid points")
    if len(cells) != n * ns * nt:
        raise DataFormatError(f"{path}: incomplete tensor ({len(cells)} of "
                              f"{n * ns * nt} cells present)")
    values = np.empty((n, ns, nt))
    values[tuple(keys.T)] = list(cells.values())
    s_axis = GridAxis(np.linspace(0, 1, ns) if s_points is None else s_points)
    t_axis = GridAxis(np.linspace(0, 1, nt) if t_points is None else t_points)
    return MultiwayDataset(values, s_axis, t_axis)


def load_dataset(path, format="binary", s_points=None, t_points=None):
    """Load a dataset written in MWFD1 (``"binary"``) or ``"csv-long"`` format.

    CSV files carry no grid coordinates; ``s_points``/``t_points`` supply
    them, otherwise an evenly spaced grid on ``[0, 1]`` is used.
    """
    if format == "binary":
        return _load_binary(path)
    if format == "csv-long":
        return _load_csv(path, s_points, t_points)
    raise ValueError(f"unknown format {format!r}")


def save_dataset(data, path, format="binary"):
    if format == "binary":
        write_mwfd(path, _header_dict(data), data.values)
    elif format == "csv-long":
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["i", "s_index", "t_index", "value"])
            for (i, s, t), v in np.ndenumerate(data.values):
                w.writerow([i, s, t, repr(float(v))])
    else:
        raise ValueError(f"unknown format {format!r}")
