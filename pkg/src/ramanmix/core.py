"""Core data model for spectral datasets, endmembers and abundances.

All intensity payloads are float64 row-major arrays: one row per spectrum,
one column per band. Spatial layout (when present) is metadata only and is
stored row-major with z outermost.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

ASC_TOL = 1e-6
ANC_TOL = 1e-9


class MixtureModel(Enum):
    LINEAR = "linear"
    BILINEAR_FAN = "bilinear_fan"


def _as_float64(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise ValueError(f"{name} must not be empty")
    return arr


@dataclass(frozen=True)
class SpectralAxis:
    """Wavenumber axis (cm^-1), strictly increasing, length >= 2."""

    values: np.ndarray

    def __post_init__(self):
        arr = _as_float64(self.values, "axis")
        if arr.ndim != 1 or arr.size < 2:
            raise ValueError("axis must be 1-D with at least 2 bands")
        if not np.all(np.isfinite(arr)):
            raise ValueError("axis values must all be finite")
        if not np.all(np.diff(arr) > 0):
            raise ValueError("axis must be strictly increasing")
        object.__setattr__(self, "values", arr)

    def __len__(self) -> int:
        return int(self.values.size)

    def __eq__(self, other) -> bool:
        return isinstance(other, SpectralAxis) and np.array_equal(self.values, other.values)


@dataclass(frozen=True)
class SpectralDataset:
    """N spectra over b bands with an optional spatial shape.

    The constructor enforces structural consistency (row length matches the
    axis); content-level invariants (finite entries, shape product) are
    reported by :func:`validate_dataset` so malformed data can be diagnosed
    instead of rejected outright.
    """

    axis: SpectralAxis
    intensities: np.ndarray
    shape: Optional[tuple[int, ...]] = None

    def __post_init__(self):
        arr = np.asarray(self.intensities, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr[np.newaxis, :]
        if arr.ndim != 2:
            raise ValueError("intensities must be a 2-D array (N spectra x b bands)")
        if arr.shape[0] < 1:
            raise ValueError("dataset must contain at least one spectrum")
        if arr.shape[1] != len(self.axis):
            raise ValueError(
                f"row length {arr.shape[1]} does not match axis length {len(self.axis)}"
            )
        object.__setattr__(self, "intensities", arr)
        if self.shape is not None:
            shp = tuple(int(s) for s in self.shape)
            if len(shp) not in (2, 3):
                raise ValueError("spatial shape must be (H, W) or (H, W, Z)")
            object.__setattr__(self, "shape", shp)

    @property
    def n_spectra(self) -> int:
        return int(self.intensities.shape[0])

    @property
    def n_bands(self) -> int:
        return int(self.intensities.shape[1])


@dataclass(frozen=True)
class EndmemberMatrix:
    """b x n non-negative matrix of pure-component signatures (columns)."""

    signatures: np.ndarray
    axis: SpectralAxis

    def __post_init__(self):
        arr = np.asarray(self.signatures, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr[:, np.newaxis]
        if arr.ndim != 2:
            raise ValueError("signatures must be a 2-D array (b bands x n endmembers)")
        if arr.shape[0] != len(self.axis):
            raise ValueError(
                f"signature length {arr.shape[0]} does not match axis length {len(self.axis)}"
            )
        if not np.all(np.isfinite(arr)):
            raise ValueError("endmember signatures must be finite")
        if np.any(arr < 0):
            raise ValueError("endmember signatures must be non-negative")
        if np.any(np.all(arr == 0, axis=0)):
            raise ValueError("endmember matrix contains an all-zero column")
        object.__setattr__(self, "signatures", arr)

    @property
    def n_endmembers(self) -> int:
        return int(self.signatures.shape[1])

    @property
    def n_bands(self) -> int:
        return int(self.signatures.shape[0])


@dataclass(frozen=True)
class AbundanceMatrix:
    """N x n fractional abundances; non-negative always, sum-to-one optional."""

    values: np.ndarray
    asc_enforced: bool = False

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr[np.newaxis, :]
        if arr.ndim != 2:
            raise ValueError("abundances must be a 2-D array (N pixels x n endmembers)")
        if not np.all(np.isfinite(arr)):
            raise ValueError("abundances must be finite")
        if np.any(arr < -ANC_TOL):
            raise ValueError("abundances violate the non-negativity constraint")
        if self.asc_enforced:
            if np.any(arr > 1 + ANC_TOL):
                raise ValueError("sum-to-one abundances must lie in [0, 1]")
            sums = arr.sum(axis=1)
            worst = np.max(np.abs(sums - 1.0))
            if worst > ASC_TOL:
                raise ValueError(
                    f"abundance rows must sum to 1 within {ASC_TOL} (worst deviation {worst:.3g})"
                )
        object.__setattr__(self, "values", arr)

    @property
    def n_pixels(self) -> int:
        return int(self.values.shape[0])

    @property
    def n_endmembers(self) -> int:
        return int(self.values.shape[1])


@dataclass(frozen=True)
class GroundTruth:
    """Reference endmembers and abundances for one generated dataset."""

    endmembers: EndmemberMatrix
    abundances: AbundanceMatrix
    mixture_model: MixtureModel

    def __post_init__(self):
        if self.endmembers.n_endmembers != self.abundances.n_endmembers:
            raise ValueError(
                "endmember count does not match abundance column count "
                f"({self.endmembers.n_endmembers} vs {self.abundances.n_endmembers})"
            )


def validate_dataset(d: SpectralDataset) -> list[str]:
    """Check every dataset invariant and return a list of violations.

    Returns an empty list iff the dataset is well formed. Each entry names
    the violated invariant and the offending index; this is a diagnostic,
    not an exception path.
    """
    violations: list[str] = []
    arr = d.intensities
    bad = ~np.isfinite(arr)
    if bad.any():
        rows, cols = np.nonzero(bad)
        for r, c in zip(rows[:20], cols[:20]):
            violations.append(f"non-finite intensity at spectrum {r}, band {c}")
        if rows.size > 20:
            violations.append(f"... and {rows.size - 20} more non-finite entries")
    if d.shape is not None:
        prod = int(np.prod(d.shape))
        if prod != d.n_spectra:
            violations.append(
                f"shape product != N: prod{d.shape} = {prod}, N = {d.n_spectra}"
            )
    return violations


def crop(d: SpectralDataset, lo: float, hi: float) -> SpectralDataset:
    """Keep exactly the bands with lo <= wavenumber <= hi."""
    if not lo < hi:
        raise ValueError(f"crop bounds must satisfy lo < hi (got {lo}, {hi})")
    mask = (d.axis.values >= lo) & (d.axis.values <= hi)
    if not mask.any():
        raise ValueError(f"no band lies within [{lo}, {hi}]")
    return SpectralDataset(
        axis=SpectralAxis(d.axis.values[mask]),
        intensities=d.intensities[:, mask],
        shape=d.shape,
    )
