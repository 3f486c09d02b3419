"""Spectral preprocessing: baseline correction, smoothing, despiking, scaling.

The penalized least-squares baselines exploit the banded structure of
D^T D (D = order-d difference matrix), so each inner solve is O(b) via
banded Cholesky / LU. Per-spectrum operations are pure functions of their
input spectrum; dataset-level helpers map them over rows.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import solve_banded, solveh_banded
from scipy.signal import savgol_filter

from .core import SpectralDataset, crop

MAD_CONSISTENCY = 0.6745  # modified z-score constant for normal data


@dataclass(frozen=True)
class BaselineParams:
    lam: float
    p: float = 0.01           # asymmetry weight, AsLS only
    diff_order: int = 2
    max_iter: int = 50
    tol: float = 1e-3

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError("smoothness weight must be positive")
        if not 0 < self.p < 1:
            raise ValueError("asymmetry weight must lie in (0, 1)")
        if self.diff_order not in (1, 2, 3):
            raise ValueError("difference order must be 1, 2 or 3")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.tol <= 0:
            raise ValueError("tolerance must be positive")


@dataclass(frozen=True)
class DespikeParams:
    kernel: int = 3
    z_threshold: float = 8.0

    def __post_init__(self):
        if self.kernel < 3 or self.kernel % 2 == 0:
            raise ValueError("kernel must be odd and >= 3")
        if self.z_threshold <= 0:
            raise ValueError("z threshold must be positive")


@lru_cache(maxsize=32)
def _penalty_bands(b: int, order: int) -> tuple[tuple[int, ...], tuple[bytes, ...]]:
    """Upper-banded representation of D^T D (cached per length/order)."""
    D = np.diff(np.eye(b), n=order, axis=0)
    DTD = D.T @ D
    offsets = tuple(range(order, -1, -1))
    rows = tuple(
        np.concatenate([np.zeros(k), np.diagonal(DTD, offset=k)]).tobytes()
        for k in offsets
    )
    return offsets, rows


def _penalty_upper(b: int, order: int) -> np.ndarray:
    offsets, rows = _penalty_bands(b, order)
    return np.vstack([np.frombuffer(r) for r in rows]).copy()


def asls_baseline(s: np.ndarray, params: BaselineParams
                  ) -> tuple[np.ndarray, np.ndarray]:
    """Asymmetric least squares baseline; returns (baseline, corrected).

    Minimizes sum_i w_i (s_i - z_i)^2 + lam * ||D^order z||^2 with
    w_i = p where s_i > z_i and 1 - p elsewhere, iterating until the
    relative L2 change of the weight vector drops below tol (for two-valued
    weights this means no band flips side) or max_iter is reached.
    """
    s = np.asarray(s, dtype=float)
    b = s.size
    if b < params.diff_order + 2:
        raise ValueError(f"spectrum too short for order-{params.diff_order} penalty")
    upper = params.lam * _penalty_upper(b, params.diff_order)
    w = np.ones(b)
    z = s
    for _ in range(params.max_iter):
        ab = upper.copy()
        ab[-1] += w
        z = solveh_banded(ab, w * s)
        w_new = np.where(s > z, params.p, 1.0 - params.p)
        if np.linalg.norm(w_new - w) / np.linalg.norm(w) < params.tol:
            break
        w = w_new
    return z, s - z


def aspls_baseline(s: np.ndarray, params: BaselineParams
                   ) -> tuple[np.ndarray, np.ndarray]:
    """Adaptive-smoothness penalized least squares baseline.

    Variant implemented (pinned by regression tests, not claimed bit-equal to
    any external tool): logistic weights w_i = 1 / (1 + exp(2 (d_i - sigma) /
    sigma)) with d = s - z and sigma the standard deviation of the negative
    residuals, plus a per-band smoothness modulation alpha_i = |d_i| / max|d|
    multiplying the penalty. Iterated with the same stopping rule as AsLS.
    """
    s = np.asarray(s, dtype=float)
    b = s.size
    if b < params.diff_order + 2:
        raise ValueError(f"spectrum too short for order-{params.diff_order} penalty")
    order = params.diff_order
    w = np.ones(b)
    alpha = np.ones(b)
    z = s
    for _ in range(params.max_iter):
        z = _solve_row_scaled(b, order, params.lam, alpha, w, s)
        d = s - z
        neg = d[d < 0]
        if neg.size < 2:
            break
        sigma = float(neg.std())
        if sigma == 0.0:
            break
        w_new = 1.0 / (1.0 + np.exp(np.clip(2.0 * (d - sigma) / sigma, -50.0, 50.0)))
        alpha = np.abs(d) / np.max(np.abs(d))
        if np.linalg.norm(w_new - w) / np.linalg.norm(w) < params.tol:
            w = w_new
            break
        w = w_new
    return z, s - z


def _solve_row_scaled(b: int, order: int, lam: float, alpha: np.ndarray,
                      w: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Solve (diag(w) + lam * diag(alpha) D^T D) z = w s (general banded)."""
    offsets, rows = _penalty_bands(b, order)
    ab = np.zeros((2 * order + 1, b))
    penalty = {k: np.frombuffer(r) for k, r in zip(offsets, rows)}
    for k in range(-order, order + 1):
        # entry a[i, j] for j - i = k lives at ab[order - k, j]
        row = np.zeros(b)
        diag = penalty[abs(k)]
        if k >= 0:
            # a[i, i+k] = lam * alpha_i * DTD[i, i+k]; stored value at column j=i+k
            vals = diag[k:] if k > 0 else diag
            row[k:] = lam * alpha[: b - k] * vals[: b - k] if k > 0 else lam * alpha * diag
        else:
            kk = -k
            vals = diag[kk:]
            row[: b - kk] = lam * alpha[kk:] * vals[: b - kk]
        ab[order - k] = row
    ab[order] += w
    return solve_banded((order, order), ab, w * s)


def savgol(s: np.ndarray, window: int, degree: int) -> np.ndarray:
    """Savitzky-Golay smoothing; edges refit on the truncated window."""
    s = np.asarray(s, dtype=float)
    if window % 2 == 0:
        raise ValueError("window must be odd")
    if degree >= window:
        raise ValueError("polynomial degree must be smaller than the window")
    if window > s.shape[-1]:
        raise ValueError(f"window {window} exceeds spectrum length {s.shape[-1]}")
    return savgol_filter(s, window, degree, axis=-1, mode="interp")


def despike(s: np.ndarray, params: DespikeParams) -> np.ndarray:
    """Cosmic-spike removal via the modified z-score of first differences.

    Band i (i >= 1) is flagged when |0.6745 (d_i - median d) / MAD(d)| with
    d = diff(s) exceeds the threshold; flagged bands are replaced by the mean
    of the unflagged bands inside the kernel window, widening the window as
    needed when a whole neighborhood is flagged.
    """
    s = np.asarray(s, dtype=float)
    b = s.size
    diffs = np.diff(s)
    med = np.median(diffs)
    mad = np.median(np.abs(diffs - med))
    if mad == 0.0:
        z = np.where(diffs != med, np.inf, 0.0)
    else:
        z = MAD_CONSISTENCY * (diffs - med) / mad
    flagged = np.zeros(b, dtype=bool)
    flagged[1:] = np.abs(z) > params.z_threshold
    if not flagged.any():
        return s.copy()
    if flagged.all():
        raise ValueError("every band flagged as a spike; input is degenerate")
    out = s.copy()
    half = params.kernel // 2
    for i in np.nonzero(flagged)[0]:
        reach = half
        while True:
            lo, hi = max(0, i - reach), min(b, i + reach + 1)
            window = np.arange(lo, hi)
            good = window[~flagged[window]]
            if good.size:
                out[i] = s[good].mean()
                break
            reach += 1
    return out


def normalize(d: SpectralDataset, mode: str) -> SpectralDataset:
    """Dataset-global scaling: 'global_vector' or 'global_minmax'."""
    X = d.intensities
    if mode == "global_vector":
        peak = float(np.max(np.abs(X)))
        if peak == 0.0:
            raise ValueError("cannot vector-normalize an all-zero dataset")
        scaled = X / peak
    elif mode == "global_minmax":
        lo, hi = float(X.min()), float(X.max())
        if hi == lo:
            raise ValueError("cannot min-max normalize a constant dataset")
        scaled = (X - lo) / (hi - lo)
    else:
        raise ValueError("mode must be 'global_vector' or 'global_minmax'")
    return SpectralDataset(axis=d.axis, intensities=scaled, shape=d.shape)


# ---------------------------------------------------------------------------
# pipelines

PRESETS: dict[str, list[dict]] = {
    # sugar-solution protocol: fingerprint crop, adaptive baseline, vector norm
    "sugar": [
        {"op": "crop", "lo": 400.0, "hi": 1800.0},
        {"op": "aspls", "lam": 1e5, "diff_order": 2, "max_iter": 100, "tol": 1e-3},
        {"op": "normalize", "mode": "global_vector"},
    ],
    # volumetric cell-scan protocol: crop, despike, smooth, AsLS, minmax
    "thp1": [
        {"op": "crop", "lo": 700.0, "hi": 1800.0},
        {"op": "despike", "kernel": 3, "z_threshold": 8.0},
        {"op": "savgol", "window": 7, "degree": 3},
        {"op": "asls", "lam": 1e6, "p": 0.01, "diff_order": 2,
         "max_iter": 50, "tol": 1e-3},
        {"op": "normalize", "mode": "global_minmax"},
    ],
}


def preset_steps(name: str) -> list[dict]:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; available: {sorted(PRESETS)}")
    return [dict(step) for step in PRESETS[name]]


def _apply_rows(d: SpectralDataset, fn) -> SpectralDataset:
    out = np.empty_like(d.intensities)
    for i, row in enumerate(d.intensities):
        out[i] = fn(row)
    return SpectralDataset(axis=d.axis, intensities=out, shape=d.shape)


def _run_step(d: SpectralDataset, step: dict) -> SpectralDataset:
    op = step.get("op")
    if op == "crop":
        return crop(d, step["lo"], step["hi"])
    if op == "despike":
        params = DespikeParams(kernel=int(step.get("kernel", 3)),
                               z_threshold=float(step.get("z_threshold", 8.0)))
        return _apply_rows(d, lambda row: despike(row, params))
    if op == "savgol":
        window, degree = int(step["window"]), int(step["degree"])
        return SpectralDataset(axis=d.axis,
                               intensities=savgol(d.intensities, window, degree),
                               shape=d.shape)
    if op in ("asls", "aspls"):
        params = BaselineParams(
            lam=float(step["lam"]),
            p=float(step.get("p", 0.01)),
            diff_order=int(step.get("diff_order", 2)),
            max_iter=int(step.get("max_iter", 50 if op == "asls" else 100)),
            tol=float(step.get("tol", 1e-3)),
        )
        fn = asls_baseline if op == "asls" else aspls_baseline
        return _apply_rows(d, lambda row: fn(row, params)[1])
    if op == "normalize":
        return normalize(d, step["mode"])
    raise ValueError(f"unknown pipeline op {op!r}")


def run_pipeline(d: SpectralDataset, steps) -> SpectralDataset:
    """Apply an ordered list of step configs (or a preset name) to a dataset."""
    if isinstance(steps, str):
        steps = preset_steps(steps)
    out = d
    for i, step in enumerate(steps):
        try:
            out = _run_step(out, step)
        except (KeyError, ValueError, TypeError) as exc:
            raise ValueError(f"pipeline step {i} ({step.get('op')!r}) failed: {exc}") from exc
    return out
