"""Conventional endmember extraction and constrained abundance estimation.

N-FINDR and vertex component analysis select candidate pure pixels from the
data; non-negative least squares (Lawson-Hanson active set) and its
fully-constrained variant estimate per-spectrum abundances against a given
endmember matrix. PCA is included as the non-physical baseline.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import AbundanceMatrix, EndmemberMatrix, SpectralDataset
from .nnet import NumericalError

KKT_TOL = 1e-8
_ANTICYCLE_TOL = 1e-12


@dataclass
class ExtractionResult:
    endmembers: EndmemberMatrix
    indices: Optional[np.ndarray] = None  # pixel index backing each column
    meta: dict = field(default_factory=dict)


def _pca_axes(X: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Top-k principal axes of the rows of X; returns (mean, axes b x k, svals)."""
    mu = X.mean(axis=0)
    Xc = X - mu
    if X.shape[0] >= X.shape[1]:
        cov = Xc.T @ Xc
        evals, evecs = np.linalg.eigh(cov)
        order = np.argsort(evals)[::-1]
        svals = np.sqrt(np.maximum(evals[order], 0.0))
        axes = evecs[:, order]
    else:
        _, s, Vt = np.linalg.svd(Xc, full_matrices=False)
        svals = s
        axes = Vt.T
    return mu, axes[:, :k], svals


def _effective_rank(svals: np.ndarray) -> int:
    if svals.size == 0 or svals[0] == 0:
        return 0
    return int(np.sum(svals > svals[0] * 1e-10))


def _clip_rows_to_endmembers(d: SpectralDataset, idx: np.ndarray) -> EndmemberMatrix:
    # artifact noise can undershoot zero; selected rows are clipped so the
    # signature matrix stays physically valid
    return EndmemberMatrix(np.maximum(d.intensities[idx].T, 0.0), d.axis)


def nfindr(d: SpectralDataset, n: int, rng: np.random.Generator,
           max_sweeps: int = 3) -> ExtractionResult:
    """Simplex-volume maximization over pixels in (n-1)-dim principal space.

    Iterative per-vertex replacement: the determinant is linear in each
    column, so each position scans all pixels with one cofactor product.
    Stops after a full sweep without volume increase, or max_sweeps sweeps.
    """
    X = d.intensities
    N = X.shape[0]
    if not N >= n >= 2:
        raise ValueError(f"need N >= n >= 2 (got N={N}, n={n})")
    _, axes, svals = _pca_axes(X, n - 1)
    if _effective_rank(svals) < n - 1:
        raise NumericalError(
            f"data rank {_effective_rank(svals)} < n-1 = {n - 1}: degenerate simplex")
    Y = (X - X.mean(axis=0)) @ axes                      # (N, n-1)
    U = np.concatenate([np.ones((N, 1)), Y], axis=1)     # homogeneous coords

    idx = rng.choice(N, size=n, replace=False)
    volume = abs(np.linalg.det(U[idx].T))
    initial_volume = volume
    init_mode = "random"
    if volume == 0.0:
        # duplicate pixel values can make the random simplex flat, and a
        # single-vertex swap cannot leave det = 0; reseed greedily by
        # orthogonal-residual maximization (deterministic)
        idx = _greedy_vertices(U, n)
        volume = abs(np.linalg.det(U[idx].T))
        init_mode = "greedy_reseed"
    E = U[idx].T.copy()                                  # (n, n), columns = vertices

    sweeps = 0
    improved = True
    while improved and sweeps < max_sweeps:
        improved = False
        sweeps += 1
        for k in range(n):
            cof = np.empty(n)
            for j in range(n):
                minor = np.delete(np.delete(E, j, axis=0), k, axis=1)
                cof[j] = (-1.0) ** (j + k) * np.linalg.det(minor)
            cand = U @ cof                               # candidate determinants
            best = int(np.argmax(np.abs(cand)))
            if abs(cand[best]) > volume * (1 + 1e-12) and best not in idx[:k + 1]:
                idx[k] = best
                E[:, k] = U[best]
                volume = abs(cand[best])
                improved = True

    return ExtractionResult(
        endmembers=_clip_rows_to_endmembers(d, idx),
        indices=idx.copy(),
        meta={"sweeps": sweeps, "volume": float(volume),
              "initial_volume": float(initial_volume), "init": init_mode},
    )


def _greedy_vertices(U: np.ndarray, n: int) -> np.ndarray:
    """n pixel rows of U with linearly independent homogeneous coordinates."""
    idx = np.empty(n, dtype=int)
    idx[0] = int(np.argmax(np.linalg.norm(U, axis=1)))
    basis = np.zeros((U.shape[1], n))
    basis[:, 0] = U[idx[0]] / np.linalg.norm(U[idx[0]])
    for k in range(1, n):
        Q = basis[:, :k]
        resid = U - (U @ Q) @ Q.T
        norms = np.linalg.norm(resid, axis=1)
        idx[k] = int(np.argmax(norms))
        if norms[idx[k]] == 0:
            raise NumericalError("could not find n independent pixels")
        basis[:, k] = resid[idx[k]] / norms[idx[k]]
    return idx


def vca(d: SpectralDataset, n: int, rng: np.random.Generator) -> ExtractionResult:
    """Vertex component analysis with SNR-based subspace choice.

    High estimated SNR uses the projective projection onto the top-n
    subspace of the uncentered second-moment matrix; low SNR uses the
    (n-1)-dim affine PCA subspace lifted with a constant coordinate. Each
    round projects onto a random direction orthogonal to the span of the
    endmembers found so far and takes the extreme pixel. As in the original
    algorithm, the reported signatures are the subspace projections of the
    selected pixels (which suppresses out-of-subspace artifacts such as
    cosmic spikes); `indices` records which pixels were selected.
    """
    X = d.intensities
    N, b = X.shape
    if not N >= n >= 2:
        raise ValueError(f"need N >= n >= 2 (got N={N}, n={n})")
    mu, axes, svals = _pca_axes(X, n)

    x_p = (X - mu) @ axes[:, :n]                         # (N, n) centered scores
    P_y = float(np.sum(X * X)) / N
    P_x = float(np.sum(x_p * x_p)) / N + float(mu @ mu)
    noise_power = P_y - P_x
    if noise_power <= 0:
        snr = np.inf
    else:
        snr = 10.0 * np.log10(max(P_x - (n / b) * P_y, 1e-300) / noise_power)
    snr_threshold = 15.0 + 10.0 * np.log10(n)

    if snr > snr_threshold:
        # projective projection on the top-n subspace of E[x x^T]
        if X.shape[0] >= X.shape[1]:
            moment = X.T @ X
            evals, evecs = np.linalg.eigh(moment)
            order = np.argsort(evals)[::-1]
            Ud = evecs[:, order[:n]]
            mom_svals = np.sqrt(np.maximum(evals[order], 0.0))
        else:
            _, s, Vt = np.linalg.svd(X, full_matrices=False)
            Ud = Vt.T[:, :n]
            mom_svals = s
        if _effective_rank(mom_svals) < n:
            raise NumericalError(f"data rank below {n}: cannot span the subspace")
        x = X @ Ud                                       # (N, n)
        u = x.mean(axis=0) * n
        denom = x @ u
        y = np.zeros_like(x)
        ok = np.abs(denom) > 1e-12 * np.max(np.abs(denom))
        y[ok] = x[ok] / denom[ok, None]
        mode = "projective"

        def signature_of(i):
            return Ud @ x[i]
    else:
        if _effective_rank(svals) < n - 1:
            raise NumericalError(f"data rank below {n - 1}: degenerate subspace")
        xa = x_p[:, : n - 1]
        c = float(np.max(np.linalg.norm(xa, axis=1)))
        y = np.concatenate([xa, np.full((N, 1), c)], axis=1)
        mode = "affine"

        def signature_of(i):
            return axes[:, : n - 1] @ xa[i] + mu

    indices = np.empty(n, dtype=int)
    A = np.zeros((n, n))
    A[-1, 0] = 1.0
    for i in range(n):
        w = rng.standard_normal(n)
        f = w - A @ (np.linalg.pinv(A) @ w)
        norm = np.linalg.norm(f)
        if norm == 0:
            raise NumericalError("degenerate projection direction in VCA")
        f /= norm
        v = y @ f
        indices[i] = int(np.argmax(np.abs(v)))
        A[:, i] = y[indices[i]]

    signatures = np.stack([signature_of(i) for i in indices], axis=1)
    return ExtractionResult(
        endmembers=EndmemberMatrix(np.maximum(signatures, 0.0), d.axis),
        indices=indices.copy(),
        meta={"snr_db": float(snr), "snr_threshold_db": float(snr_threshold),
              "mode": mode},
    )


def pca_unmix(d: SpectralDataset, n: int) -> tuple[EndmemberMatrix, np.ndarray]:
    """PCA baseline: clipped mean-shifted axes and raw least-squares scores.

    The scores are signed projections, deliberately left unconstrained: this
    is the non-physical reference method, and its abundance estimates do not
    satisfy the non-negativity constraint.
    """
    X = d.intensities
    if X.shape[0] < n:
        raise ValueError(f"need at least n={n} spectra")
    mu, axes, svals = _pca_axes(X, n)
    if _effective_rank(svals) < n:
        raise NumericalError(f"data rank below n={n}")
    scores = (X - mu) @ axes
    signatures = np.maximum(mu[:, None] + axes, 0.0)
    return EndmemberMatrix(signatures, d.axis), scores


# ---------------------------------------------------------------------------
# abundance solvers

def _nnls_gram(G: np.ndarray, f: np.ndarray, max_iter: int) -> np.ndarray:
    """Lawson-Hanson active set on the normal equations G a = f."""
    n = G.shape[0]
    alpha = np.zeros(n)
    passive = np.zeros(n, dtype=bool)
    # gradient tolerance scales with the data so float round-off in large
    # systems cannot masquerade as an ascent direction
    grad_tol = _ANTICYCLE_TOL * max(1.0, float(np.max(np.abs(f))))
    for _ in range(max_iter):
        w = f - G @ alpha                       # negative gradient
        if passive.all() or np.max(w[~passive]) <= grad_tol:
            return alpha
        free = np.nonzero(~passive)[0]
        passive[free[np.argmax(w[free])]] = True
        while True:
            z = np.zeros(n)
            sel = np.nonzero(passive)[0]
            try:
                z[sel] = np.linalg.solve(G[np.ix_(sel, sel)], f[sel])
            except np.linalg.LinAlgError:
                z[sel] = np.linalg.lstsq(G[np.ix_(sel, sel)], f[sel], rcond=None)[0]
            if z[sel].min() > _ANTICYCLE_TOL:
                alpha = z
                break
            bad = passive & (z <= _ANTICYCLE_TOL)
            denom = alpha[bad] - z[bad]
            # denom == 0 only when alpha == z == 0 (degenerate passive solve);
            # a zero step then prunes those coordinates instead of taking 0/0
            ratios = np.zeros(denom.size)
            ok = denom > _ANTICYCLE_TOL
            ratios[ok] = alpha[bad][ok] / denom[ok]
            theta = np.min(ratios)
            alpha = alpha + theta * (z - alpha)
            passive &= alpha > _ANTICYCLE_TOL
            alpha[~passive] = 0.0
    raise NumericalError(f"non-negative least squares failed to converge in {max_iter} iterations")


def nnls(M, x: np.ndarray) -> np.ndarray:
    """min ||M a - x||^2 subject to a >= 0 (abundance non-negativity)."""
    A = M.signatures if isinstance(M, EndmemberMatrix) else np.asarray(M, dtype=float)
    x = np.asarray(x, dtype=float)
    if A.shape[0] != x.shape[0]:
        raise ValueError(f"matrix has {A.shape[0]} rows, spectrum has {x.shape[0]}")
    n = A.shape[1]
    return _nnls_gram(A.T @ A, A.T @ x, max_iter=max(3 * n, 30))


def fcls(M, x: np.ndarray, delta: float = 1e3) -> np.ndarray:
    """min ||M a - x||^2 subject to a >= 0 and sum(a) = 1.

    Realized as NNLS on the system augmented with a delta-weighted
    sum-to-one row; the remaining sum deviation (order 1/delta^2) is folded
    back by exact renormalization, and a gross deviation raises.
    """
    A = M.signatures if isinstance(M, EndmemberMatrix) else np.asarray(M, dtype=float)
    x = np.asarray(x, dtype=float)
    if A.shape[0] != x.shape[0]:
        raise ValueError(f"matrix has {A.shape[0]} rows, spectrum has {x.shape[0]}")
    n = A.shape[1]
    G = A.T @ A + delta**2
    f = A.T @ x + delta**2
    alpha = _nnls_gram(G, f, max_iter=max(3 * n, 30))
    s = alpha.sum()
    if not np.isfinite(s) or abs(s - 1.0) > 1e-2:
        raise NumericalError(f"sum-to-one violation too large to renormalize ({s})")
    return alpha / s


def estimate_abundances(M: EndmemberMatrix, d: SpectralDataset, method: str
                        ) -> AbundanceMatrix:
    """Per-spectrum NNLS or FCLS abundances against a fixed endmember matrix."""
    if method not in ("nnls", "fcls"):
        raise ValueError("method must be 'nnls' or 'fcls'")
    A = M.signatures
    if A.shape[0] != d.n_bands:
        raise ValueError(
            f"endmember matrix has {A.shape[0]} bands, dataset has {d.n_bands}")
    n = A.shape[1]
    max_iter = max(3 * n, 30)
    X = d.intensities
    if method == "fcls":
        delta = 1e3
        G = A.T @ A + delta**2
        F = X @ A + delta**2                    # rows: A^T x + delta^2 * 1
    else:
        G = A.T @ A
        F = X @ A
    out = np.empty((X.shape[0], n))
    for i in range(X.shape[0]):
        try:
            alpha = _nnls_gram(G, F[i], max_iter)
            if method == "fcls":
                s = alpha.sum()
                if not np.isfinite(s) or abs(s - 1.0) > 1e-2:
                    raise NumericalError(f"sum-to-one violation ({s})")
                alpha = alpha / s
        except NumericalError as exc:
            raise NumericalError(f"abundance solve failed at pixel {i}: {exc}") from exc
        out[i] = alpha
    return AbundanceMatrix(out, asc_enforced=(method == "fcls"))
