"""Test-matrix generators, MatrixMarket files and CSV output.

The named generators follow the classical test-matrix definitions
(Hadamard, Golub, Rohess, Wilkinson) plus two random families. Anything
else can be supplied as a MatrixMarket file.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
import scipy.linalg

from .errors import (
    ConfigError,
    IOFailure,
    MalformedHeaderError,
    MatrixDimensionError,
    MatrixNotFoundError,
)

GENERATORS = ("hadamard", "golub", "rohess", "wilkinson", "rand_illcond", "rand_dense")


@dataclass(frozen=True)
class GeneratorKind:
    kind: str
    n: int
    cond: Optional[float] = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in GENERATORS:
            raise ConfigError(f"unknown generator {self.kind!r}; expected one of {GENERATORS}")
        if int(self.n) != self.n or self.n < 1:
            raise ConfigError(f"generator size must be a positive integer, got {self.n}")
        if self.kind == "hadamard" and self.n & (self.n - 1):
            raise ConfigError(f"hadamard needs a power-of-two size, got {self.n}")
        if self.cond is not None and not self.cond >= 1:
            raise ConfigError(f"condition target must be >= 1, got {self.cond}")


def generate(kind: GeneratorKind | str, n: Optional[int] = None, **kw) -> np.ndarray:
    if isinstance(kind, str):
        kind = GeneratorKind(kind, n, **kw)
    n, rng = kind.n, np.random.default_rng(kind.seed)
    if kind.kind == "hadamard":
        return scipy.linalg.hadamard(n).astype(float)
    if kind.kind == "golub":
        # unit triangular factors with rounded N(0, 100) entries; the product is badly conditioned
        L = np.tril(np.round(10.0 * rng.standard_normal((n, n))), -1) + np.eye(n)
        U = np.triu(np.round(10.0 * rng.standard_normal((n, n))), 1) + np.eye(n)
        return L @ U
    if kind.kind == "rohess":
        return _rohess(n, rng)
    if kind.kind == "wilkinson":
        d = np.abs(np.arange(n) - (n - 1) / 2.0)
        return np.diag(d) + np.diag(np.ones(n - 1), 1) + np.diag(np.ones(n - 1), -1)
    if kind.kind == "rand_illcond":
        cond = 1e6 if kind.cond is None else kind.cond
        Q1, _ = np.linalg.qr(rng.standard_normal((n, n)))
        Q2, _ = np.linalg.qr(rng.standard_normal((n, n)))
        sigma = np.logspace(0.0, -math.log10(cond), n)
        return (Q1 * sigma) @ Q2.T
    return rng.standard_normal((n, n))


def _rohess(n: int, rng: np.random.Generator) -> np.ndarray:
    """Random orthogonal upper Hessenberg matrix as a product of n-1 Givens rotations."""
    theta = rng.uniform(0.0, 2.0 * math.pi, n - 1)
    H = np.eye(n)
    H[n - 1, n - 1] = 1.0 if rng.standard_normal() >= 0 else -1.0
    for i in range(n - 1, 0, -1):
        c, s = math.cos(theta[i - 1]), math.sin(theta[i - 1])
        top, bot = H[i - 1].copy(), H[i].copy()
        H[i - 1] = c * top + s * bot
        H[i] = -s * top + c * bot
    return H


def rectangularize(M: np.ndarray, m: int, n: int, seed: int = 0) -> np.ndarray:
    """Embed a generator output into an m x n matrix.

    Columns are truncated, or extended with seeded Gaussian columns, to n.
    Rows past the generator block come from a seeded Gaussian block scaled
    to the RMS entry of M, which keeps the result full column rank.
    """
    if m < n:
        raise ConfigError(f"need m >= n, got m={m}, n={n}")
    M = np.asarray(M, dtype=float)
    rng = np.random.default_rng(seed)
    rms = float(np.sqrt(np.mean(M**2))) or 1.0
    k = M.shape[1]
    if k >= n:
        top = M[:, :n]
    else:
        top = np.hstack([M, rms * rng.standard_normal((M.shape[0], n - k))])
    top = top[:m]
    extra = m - top.shape[0]
    if extra == 0:
        return top.copy()
    return np.vstack([top, rms * rng.standard_normal((extra, n))])


def suite_matrix(kind: str, m: int, n: int, seed: int = 0, cond: Optional[float] = None) -> np.ndarray:
    """Generator of size n (next power of two for hadamard), rectangularized to m x n."""
    size = 1 << max(0, (n - 1).bit_length()) if kind == "hadamard" else n
    return rectangularize(generate(GeneratorKind(kind, size, cond, seed)), m, n, seed + 1)


# ---------------------------------------------------------------- MatrixMarket

_FIELDS = ("real", "integer", "double")
_SYMMETRY = ("general", "symmetric", "skew-symmetric")


def load_matrix_market(path: str | os.PathLike) -> np.ndarray:
    """Read a real MatrixMarket file (array or coordinate) into a dense array.

    A single-column array file is returned as a 1-D vector. Duplicate
    coordinate entries are summed.
    """
    path = Path(path)
    try:
        fh = path.open("r")
    except FileNotFoundError as exc:
        raise MatrixNotFoundError(f"{path}: no such file") from exc
    except OSError as exc:
        raise IOFailure(f"{path}: {exc}") from exc
    with fh:
        header = fh.readline().split()
        if (len(header) != 5 or header[0].lower() != "%%matrixmarket" or header[1].lower() != "matrix"):
            raise MalformedHeaderError(f"{path}: not a MatrixMarket matrix header")
        fmt, fld, sym = (h.lower() for h in header[2:])
        if fmt not in ("array", "coordinate") or fld not in _FIELDS or sym not in _SYMMETRY:
            raise MalformedHeaderError(f"{path}: unsupported header {' '.join(header)}")
        line = fh.readline()
        while line and (line.startswith("%") or not line.strip()):
            line = fh.readline()
        try:
            size = [int(t) for t in line.split()]
        except ValueError as exc:
            raise MalformedHeaderError(f"{path}: bad size line {line!r}") from exc
        body = fh.read().split()
    try:
        if fmt == "array":
            if len(size) != 2:
                raise MalformedHeaderError(f"{path}: array size line needs 2 integers")
            rows, cols = size
            vals = np.array([float(t) for t in body])
            return _unpack_array(path, vals, rows, cols, sym)
        if len(size) != 3:
            raise MalformedHeaderError(f"{path}: coordinate size line needs 3 integers")
        rows, cols, nnz = size
        if len(body) != 3 * nnz:
            raise MatrixDimensionError(f"{path}: expected {nnz} entries, found {len(body) / 3:g}")
        trip = np.array(body, dtype=float).reshape(nnz, 3) if nnz else np.zeros((0, 3))
    except ValueError as exc:
        raise MatrixDimensionError(f"{path}: non-numeric entry") from exc
    i = trip[:, 0].astype(int) - 1
    j = trip[:, 1].astype(int) - 1
    if nnz and (i.min() < 0 or j.min() < 0 or i.max() >= rows or j.max() >= cols):
        raise MatrixDimensionError(f"{path}: entry index outside {rows} x {cols}")
    out = np.zeros((rows, cols))
    np.add.at(out, (i, j), trip[:, 2])
    if sym != "general":
        sign = 1.0 if sym == "symmetric" else -1.0
        off = i != j
        np.add.at(out, (j[off], i[off]), sign * trip[off, 2])
    return out


def _unpack_array(path, vals, rows, cols, sym):
    if sym == "general":
        if vals.size != rows * cols:
            raise MatrixDimensionError(f"{path}: expected {rows * cols} values, found {vals.size}")
        out = vals.reshape(cols, rows).T  # column-major
        return out[:, 0].copy() if cols == 1 else out.copy()
    if rows != cols:
        raise MatrixDimensionError(f"{path}: symmetric array must be square")
    strict = sym == "skew-symmetric"
    need = rows * (rows - 1) // 2 if strict else rows * (rows + 1) // 2
    if vals.size != need:
        raise MatrixDimensionError(f"{path}: expected {need} values, found {vals.size}")
    out = np.zeros((rows, cols))
    it = iter(vals)
    for j in range(cols):
        for i in range(j + 1 if strict else j, rows):
            out[i, j] = next(it)
    return out - out.T if strict else out + np.tril(out, -1).T


def store_matrix_market(path: str | os.PathLike, M: np.ndarray, comment: str = "") -> None:
    """Write a dense real array file with round-trip (17 digit) precision."""
    M = np.asarray(M, dtype=float)
    if M.ndim == 1:
        M = M[:, None]
    if M.ndim != 2:
        raise ConfigError("only vectors and matrices can be written")
    try:
        with Path(path).open("w") as fh:
            fh.write("%%MatrixMarket matrix array real general\n")
            for line in comment.splitlines():
                fh.write(f"% {line}\n")
            fh.write(f"{M.shape[0]} {M.shape[1]}\n")
            for v in M.T.reshape(-1):
                fh.write(f"{v:.17g}\n")
    except OSError as exc:
        raise IOFailure(f"{path}: {exc}") from exc


# ------------------------------------------------------------------------- CSV

def fmt_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


class CsvWriter:
    """Append-per-row CSV writer; the header is always written first."""

    def __init__(self, path: str | os.PathLike, fields: Sequence[str]):
        self.fields = list(fields)
        try:
            self._fh = Path(path).open("w", newline="")
        except OSError as exc:
            raise IOFailure(f"{path}: {exc}") from exc
        self._w = csv.writer(self._fh)
        self._w.writerow(self.fields)

    def write(self, record: Mapping) -> None:
        self._w.writerow([fmt_value(record.get(f, "")) for f in self.fields])
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def store_csv(records: Iterable[Mapping], path: str | os.PathLike, fields: Optional[Sequence[str]] = None) -> None:
    records = list(records)
    if fields is None:
        fields = list(records[0].keys()) if records else []
    with CsvWriter(path, fields) as w:
        for r in records:
            w.write(r)


def load_csv(path: str | os.PathLike) -> list[dict]:
    try:
        with Path(path).open(newline="") as fh:
            return list(csv.DictReader(fh))
    except FileNotFoundError as exc:
        raise MatrixNotFoundError(f"{path}: no such file") from exc
    except OSError as exc:
        raise IOFailure(f"{path}: {exc}") from exc


def store_trajectory_csv(states, path: str | os.PathLike) -> None:
    """One row per time point: t, phi_0..phi_{n-1}, u_0..u_{n-1}."""
    nc = states[0].nc
    fields = ["t"] + [f"phi_{i}" for i in range(nc)] + [f"u_{i}" for i in range(nc)]
    rows = []
    for t, st in enumerate(states):
        rows.append(dict(zip(fields, [t, *st.phi, *st.u])))
    store_csv(rows, path, fields)


def store_observations_csv(y: np.ndarray, path: str | os.PathLike) -> None:
    y = np.atleast_2d(y)
    fields = ["t"] + [f"y_{i}" for i in range(y.shape[1])]
    store_csv([dict(zip(fields, [t + 1, *row])) for t, row in enumerate(y)], path, fields)
