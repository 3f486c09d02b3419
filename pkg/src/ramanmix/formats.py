"""On-disk formats: csv (interchange) and bin (performance), plus ground truth.

csv layout: UTF-8, comma separated, first row holds the b axis values, each
subsequent row one spectrum. An optional sidecar ``<name>.meta.json`` carries
``{"shape": [H, W]}`` or ``[H, W, Z]``.

bin layout: magic ``RMX1``, little-endian u64 N, u64 b, u8 shape-rank,
rank x u64 dims, b x f64 axis, N*b x f64 intensities.

Ground truth (``.gt.bin``): magic ``RMG1``, u8 mixture-model code, u8 asc
flag, u64 b, u64 n, u64 N, then b x f64 axis, b*n x f64 endmember signatures
(row-major, band-fastest per column order: stored as b rows of n), and
N*n x f64 abundances.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .core import (
    AbundanceMatrix,
    EndmemberMatrix,
    GroundTruth,
    MixtureModel,
    SpectralAxis,
    SpectralDataset,
)

MAGIC_DATASET = b"RMX1"
MAGIC_GROUND_TRUTH = b"RMG1"

_MODEL_CODES = {MixtureModel.LINEAR: 0, MixtureModel.BILINEAR_FAN: 1}
_MODEL_FROM_CODE = {v: k for k, v in _MODEL_CODES.items()}


class FormatError(Exception):
    """Malformed file content (distinct from OS-level I/O failures)."""


def _meta_path(path: Path) -> Path:
    return path.with_name(path.stem + ".meta.json")


def save_dataset(d: SpectralDataset, path, format: str = None) -> None:
    path = Path(path)
    fmt = format or _infer_format(path)
    if fmt == "csv":
        _save_csv(d, path)
    elif fmt == "bin":
        _save_bin(d, path)
    else:
        raise ValueError(f"unknown format {fmt!r} (expected 'csv' or 'bin')")


def load_dataset(path, format: str = None) -> SpectralDataset:
    path = Path(path)
    fmt = format or _infer_format(path)
    if fmt == "csv":
        return _load_csv(path)
    if fmt == "bin":
        return _load_bin(path)
    raise ValueError(f"unknown format {fmt!r} (expected 'csv' or 'bin')")


def _infer_format(path: Path) -> str:
    suffix = path.suffix.lower().lstrip(".")
    if suffix in ("csv", "bin"):
        return suffix
    raise ValueError(f"cannot infer format from {path.name!r}; pass format=")


def _save_csv(d: SpectralDataset, path: Path) -> None:
    # %.17g round-trips float64 exactly, comfortably within the 1e-12 contract
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(f"{v:.17g}" for v in d.axis.values) + "\n")
        for row in d.intensities:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
    if d.shape is not None:
        with open(_meta_path(path), "w", encoding="utf-8") as fh:
            json.dump({"shape": list(d.shape)}, fh)
            fh.write("\n")


def _parse_row(line: str, lineno: int) -> np.ndarray:
    cells = line.split(",")
    out = np.empty(len(cells))
    for i, cell in enumerate(cells):
        try:
            out[i] = float(cell)
        except ValueError:
            raise FormatError(
                f"line {lineno}, column {i + 1}: non-numeric cell {cell.strip()!r}"
            ) from None
    return out


def _load_csv(path: Path) -> SpectralDataset:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln for ln in (raw.rstrip("\n\r") for raw in fh) if ln.strip()]
    if len(lines) < 2:
        raise FormatError("csv must contain a header row and at least one spectrum")
    axis_vals = _parse_row(lines[0], 1)
    if axis_vals.size < 2:
        raise FormatError("header row must contain at least 2 axis values")
    if not np.all(np.diff(axis_vals) > 0):
        raise FormatError("axis not strictly increasing in header row")
    b = axis_vals.size
    rows = np.empty((len(lines) - 1, b))
    for i, line in enumerate(lines[1:], start=2):
        row = _parse_row(line, i)
        if row.size != b:
            raise FormatError(
                f"row {i} has {row.size} cells, expected {b} (ragged row)"
            )
        rows[i - 2] = row
    shape = None
    meta = _meta_path(path)
    if meta.exists():
        with open(meta, "r", encoding="utf-8") as fh:
            shape = tuple(json.load(fh)["shape"])
    return SpectralDataset(axis=SpectralAxis(axis_vals), intensities=rows, shape=shape)


def _save_bin(d: SpectralDataset, path: Path) -> None:
    n, b = d.intensities.shape
    shape = d.shape or ()
    with open(path, "wb") as fh:
        fh.write(MAGIC_DATASET)
        fh.write(struct.pack("<QQB", n, b, len(shape)))
        for dim in shape:
            fh.write(struct.pack("<Q", dim))
        fh.write(np.ascontiguousarray(d.axis.values, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(d.intensities, dtype="<f8").tobytes())


def _read_exact(fh, count: int, what: str) -> bytes:
    buf = fh.read(count)
    if len(buf) != count:
        raise FormatError(f"truncated file while reading {what} (offset {fh.tell()})")
    return buf


def _load_bin(path: Path) -> SpectralDataset:
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "magic")
        if magic != MAGIC_DATASET:
            raise FormatError(f"bad magic {magic!r}, expected {MAGIC_DATASET!r}")
        n, b, rank = struct.unpack("<QQB", _read_exact(fh, 17, "header"))
        shape = None
        if rank:
            dims = struct.unpack(f"<{rank}Q", _read_exact(fh, 8 * rank, "shape dims"))
            shape = tuple(dims)
        axis = np.frombuffer(_read_exact(fh, 8 * b, "axis"), dtype="<f8").copy()
        data = np.frombuffer(
            _read_exact(fh, 8 * n * b, "intensities"), dtype="<f8"
        ).reshape(n, b).copy()
    if not np.all(np.diff(axis) > 0):
        raise FormatError("axis not strictly increasing")
    return SpectralDataset(axis=SpectralAxis(axis), intensities=data, shape=shape)


def save_ground_truth(gt: GroundTruth, path) -> None:
    M = gt.endmembers.signatures
    A = gt.abundances.values
    b, n = M.shape
    n_pix = A.shape[0]
    with open(path, "wb") as fh:
        fh.write(MAGIC_GROUND_TRUTH)
        fh.write(
            struct.pack(
                "<BBQQQ",
                _MODEL_CODES[gt.mixture_model],
                1 if gt.abundances.asc_enforced else 0,
                b,
                n,
                n_pix,
            )
        )
        fh.write(np.ascontiguousarray(gt.endmembers.axis.values, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(M, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(A, dtype="<f8").tobytes())


def load_ground_truth(path) -> GroundTruth:
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "magic")
        if magic != MAGIC_GROUND_TRUTH:
            raise FormatError(f"bad magic {magic!r}, expected {MAGIC_GROUND_TRUTH!r}")
        code, asc, b, n, n_pix = struct.unpack("<BBQQQ", _read_exact(fh, 26, "header"))
        if code not in _MODEL_FROM_CODE:
            raise FormatError(f"unknown mixture-model code {code}")
        axis = np.frombuffer(_read_exact(fh, 8 * b, "axis"), dtype="<f8").copy()
        M = np.frombuffer(
            _read_exact(fh, 8 * b * n, "endmembers"), dtype="<f8"
        ).reshape(b, n).copy()
        A = np.frombuffer(
            _read_exact(fh, 8 * n_pix * n, "abundances"), dtype="<f8"
        ).reshape(n_pix, n).copy()
    return GroundTruth(
        endmembers=EndmemberMatrix(M, SpectralAxis(axis)),
        abundances=AbundanceMatrix(A, asc_enforced=bool(asc)),
        mixture_model=_MODEL_FROM_CODE[code],
    )


def save_endmembers_csv(M: EndmemberMatrix, path) -> None:
    """One endmember signature per row, header row = axis values."""
    ds = SpectralDataset(axis=M.axis, intensities=M.signatures.T)
    _save_csv(ds, Path(path))


def load_endmembers_csv(path, clip_negative: bool = False) -> EndmemberMatrix:
    ds = _load_csv(Path(path))
    sig = ds.intensities.T
    if clip_negative:
        sig = np.maximum(sig, 0.0)
    return EndmemberMatrix(sig, ds.axis)


def save_abundances_csv(A, path, asc_enforced: bool = False) -> None:
    values = A.values if isinstance(A, AbundanceMatrix) else np.asarray(A, dtype=float)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(f"endmember_{j}" for j in range(values.shape[1])))
        fh.write(f"\n# asc_enforced={asc_enforced}\n")
        for row in values:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def load_abundances_csv(path) -> np.ndarray:
    """Abundance values as a plain array (may be non-physical, e.g. scores)."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln for ln in (raw.rstrip("\n\r") for raw in fh) if ln.strip()]
    body = [ln for ln in lines[1:] if not ln.startswith("#")]
    if not body:
        raise FormatError("abundance csv contains no data rows")
    rows = [_parse_row(ln, i + 2) for i, ln in enumerate(body)]
    width = rows[0].size
    for i, row in enumerate(rows):
        if row.size != width:
            raise FormatError(f"row {i + 2} has {row.size} cells, expected {width}")
    return np.vstack(rows)
