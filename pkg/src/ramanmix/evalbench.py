"""Metrics, ground-truth matching, benchmark grid, and wall-time profiling.

Estimated endmembers are assigned to ground-truth endmembers by minimizing
total spectral angle with the Hungarian algorithm; surplus estimates stay
unmatched and are excluded from all metrics. Benchmark cells are independent
and a failure in one cell is recorded without aborting the run.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import ae as ae_mod
from . import classic
from .core import AbundanceMatrix, EndmemberMatrix, GroundTruth, MixtureModel
from .core import SpectralDataset
from .nnet import NumericalError
from .synth import DatasetSpec, generate_dataset


# ---------------------------------------------------------------------------
# metrics

def sad(a: np.ndarray, b: np.ndarray) -> float:
    """Spectral angle distance in radians; scale-invariant."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.shape != b.shape:
        raise ValueError("spectra must have equal length")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("spectral angle undefined for zero-norm input")
    return float(np.arccos(np.clip(a @ b / (na * nb), -1.0, 1.0)))


def pcc_dist(a: np.ndarray, b: np.ndarray) -> float:
    """1 - Pearson correlation; 0 for any positive affine relation."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.shape != b.shape:
        raise ValueError("spectra must have equal length")
    da, db = a - a.mean(), b - b.mean()
    na, nb = np.linalg.norm(da), np.linalg.norm(db)
    if na == 0 or nb == 0:
        raise ValueError("correlation undefined for constant input")
    return float(1.0 - np.clip(da @ db / (na * nb), -1.0, 1.0))


def abundance_mse(A: np.ndarray, A_hat: np.ndarray, literal_norm: bool = False
                  ) -> float:
    """Mean squared abundance error over all matched entries.

    With literal_norm=True, returns instead the mean over pixels of
    ||row difference||_2 / n (the unsquared variant; kept for comparison).
    """
    A = np.asarray(A, dtype=float)
    A_hat = np.asarray(A_hat, dtype=float)
    if A.shape != A_hat.shape:
        raise ValueError(f"abundance shapes differ: {A.shape} vs {A_hat.shape}")
    diff = A - A_hat
    if literal_norm:
        n = A.shape[1]
        return float(np.mean(np.linalg.norm(diff, axis=1) / n))
    return float(np.mean(diff * diff))


# ---------------------------------------------------------------------------
# Hungarian assignment

def _hungarian_square(cost: np.ndarray) -> np.ndarray:
    """Minimum-cost perfect assignment of a square matrix.

    Potential-based shortest augmenting path (O(n^3)); returns the column
    assigned to each row.
    """
    n = cost.shape[0]
    row_of_col = np.full(n + 1, -1, dtype=int)  # column n is the virtual root
    pot_row = np.zeros(n)
    pot_col = np.zeros(n + 1)
    for r in range(n):
        w_cur = n
        row_of_col[n] = r
        min_to = np.full(n + 1, np.inf)
        prev = np.full(n + 1, -1, dtype=int)
        in_tree = np.zeros(n + 1, dtype=bool)
        while row_of_col[w_cur] != -1:
            in_tree[w_cur] = True
            j = row_of_col[w_cur]
            free = ~in_tree[:n]
            rcost = cost[j] - pot_row[j] - pot_col[:n]
            better = free & (rcost < min_to[:n])
            min_main = min_to[:n]
            min_main[better] = rcost[better]
            prev_main = prev[:n]
            prev_main[better] = w_cur
            masked = np.where(free, min_main, np.inf)
            w_next = int(np.argmin(masked))
            delta = masked[w_next]
            tree_cols = np.nonzero(in_tree)[0]
            pot_row[row_of_col[tree_cols]] += delta
            pot_col[tree_cols] -= delta
            min_to[~in_tree] -= delta
            w_cur = w_next
        while w_cur != n:
            row_of_col[w_cur] = row_of_col[prev[w_cur]]
            w_cur = prev[w_cur]
    assignment = np.empty(n, dtype=int)
    for w in range(n):
        assignment[row_of_col[w]] = w
    return assignment


@dataclass(frozen=True)
class MatchAssignment:
    pairs: tuple[tuple[int, int], ...]          # (truth index, estimate index)
    unmatched_estimates: tuple[int, ...]
    total_cost: float


def match(truth: EndmemberMatrix, est) -> MatchAssignment:
    """Injective truth-to-estimate assignment minimizing total spectral angle.

    The rectangular cost matrix is padded to square with a sentinel well
    above any real angle, which forces surplus rows or columns onto padding.
    """
    T = truth.signatures if isinstance(truth, EndmemberMatrix) else np.asarray(truth, float)
    E = est.signatures if isinstance(est, EndmemberMatrix) else np.asarray(est, float)
    n_true, n_est = T.shape[1], E.shape[1]
    cost = np.empty((n_true, n_est))
    for i in range(n_true):
        for j in range(n_est):
            cost[i, j] = sad(T[:, i], E[:, j])
    size = max(n_true, n_est)
    sentinel = 10.0 * max(float(cost.max()), math.pi)
    padded = np.full((size, size), sentinel)
    padded[:n_true, :n_est] = cost
    assignment = _hungarian_square(padded)
    pairs = tuple(
        (i, int(assignment[i])) for i in range(n_true) if assignment[i] < n_est
    )
    matched_est = {j for _, j in pairs}
    unmatched = tuple(j for j in range(n_est) if j not in matched_est)
    total = float(sum(cost[i, j] for i, j in pairs))
    return MatchAssignment(pairs=pairs, unmatched_estimates=unmatched,
                           total_cost=total)


@dataclass
class MetricReport:
    endmember_sad: float
    abundance_mse: float
    endmember_pcc: float
    detail: list = field(default_factory=list)
    runtime: float = 0.0

    def to_dict(self) -> dict:
        return {
            "endmember_sad": self.endmember_sad,
            "abundance_mse": self.abundance_mse,
            "endmember_pcc": self.endmember_pcc,
            "detail": self.detail,
            "runtime": self.runtime,
        }


def evaluate(result, gt: GroundTruth, literal_norm: bool = False,
             runtime: float = 0.0) -> MetricReport:
    """Match estimates to ground truth, then average SAD/PCC/MSE over pairs."""
    est_end, est_ab = result
    E = est_end.signatures if isinstance(est_end, EndmemberMatrix) else np.asarray(est_end, float)
    T = gt.endmembers.signatures
    if E.shape[0] != T.shape[0]:
        raise ValueError(f"band counts differ: truth {T.shape[0]}, estimate {E.shape[0]}")
    A_true = gt.abundances.values
    A_est = None
    if est_ab is not None:
        A_est = est_ab.values if isinstance(est_ab, AbundanceMatrix) else np.asarray(est_ab, float)
        if A_est.shape[0] != A_true.shape[0]:
            raise ValueError(
                f"pixel counts differ: truth {A_true.shape[0]}, estimate {A_est.shape[0]}")
    assignment = match(gt.endmembers, E)
    sads, pccs, detail = [], [], []
    for i, j in assignment.pairs:
        s = sad(T[:, i], E[:, j])
        p = pcc_dist(T[:, i], E[:, j])
        sads.append(s)
        pccs.append(p)
        detail.append({"truth": i, "estimate": j, "sad": s, "pcc": p})
    if A_est is not None:
        ti = [i for i, _ in assignment.pairs]
        ei = [j for _, j in assignment.pairs]
        mse = abundance_mse(A_true[:, ti], A_est[:, ei], literal_norm=literal_norm)
    else:
        mse = float("nan")
    return MetricReport(
        endmember_sad=float(np.mean(sads)),
        abundance_mse=mse,
        endmember_pcc=float(np.mean(pccs)),
        detail=detail,
        runtime=runtime,
    )


# ---------------------------------------------------------------------------
# method registry

AE_DEFAULTS = {
    "encoder": "dense",
    "decoder": "linear",
    "asc": True,
    "epochs": 10,
    "lr": 1e-3,
    "batch_size": 64,
    "loss": "sad",
    "mse_weight": 0.0,
}

METHOD_SHORTHANDS = {
    "nfindr+fcls": {"kind": "nfindr", "abundance": "fcls"},
    "nfindr+nnls": {"kind": "nfindr", "abundance": "nnls"},
    "vca+fcls": {"kind": "vca", "abundance": "fcls"},
    "vca+nnls": {"kind": "vca", "abundance": "nnls"},
    "pca": {"kind": "pca"},
    "dense-ae": {"kind": "ae", "encoder": "dense"},
    "deep-dense-ae": {"kind": "ae", "encoder": "deep_dense"},
    "conv-ae": {"kind": "ae", "encoder": "convolutional"},
    "transformer-ae": {"kind": "ae", "encoder": "transformer"},
    "conv-transformer-ae": {"kind": "ae", "encoder": "conv_transformer"},
}


def resolve_method(config) -> dict:
    """Normalize a method shorthand or config dict; returns a full config."""
    if isinstance(config, str):
        if config not in METHOD_SHORTHANDS:
            raise ValueError(
                f"unknown method {config!r}; available: {sorted(METHOD_SHORTHANDS)}")
        config = {"name": config, **METHOD_SHORTHANDS[config]}
    cfg = dict(config)
    kind = cfg.get("kind")
    if kind == "ae":
        merged = {**AE_DEFAULTS, **cfg}
        merged.setdefault("name", f"{merged['encoder']}-ae")
        return merged
    if kind in ("nfindr", "vca"):
        cfg.setdefault("abundance", "fcls")
        cfg.setdefault("name", f"{kind}+{cfg['abundance']}")
        return cfg
    if kind == "pca":
        cfg.setdefault("name", "pca")
        return cfg
    raise ValueError(f"unknown method kind {kind!r}")


def run_method(config, d: SpectralDataset, n_endmembers: int, seed: int,
               latent: Optional[int] = None, info: Optional[dict] = None):
    """Run one unmixing method end to end.

    Returns (endmembers, abundances, seconds). Wall time covers the complete
    method call: extraction plus abundance estimation for the conventional
    methods, model building plus training plus inference for autoencoders.
    A dict passed as `info` is filled with method diagnostics (extraction
    meta, or the per-epoch loss history and latent dimension for AEs).
    """
    cfg = resolve_method(config)
    rng = np.random.Generator(np.random.Philox(key=int(seed) & (2**64 - 1)))
    start = time.perf_counter()
    if cfg["kind"] in ("nfindr", "vca"):
        extract = classic.nfindr if cfg["kind"] == "nfindr" else classic.vca
        res = extract(d, n_endmembers, rng)
        ab = classic.estimate_abundances(res.endmembers, d, cfg["abundance"])
        elapsed = time.perf_counter() - start
        if info is not None:
            info.update(res.meta)
        return res.endmembers, ab, elapsed
    if cfg["kind"] == "pca":
        M, scores = classic.pca_unmix(d, n_endmembers)
        elapsed = time.perf_counter() - start
        if info is not None:
            info["non_physical_abundances"] = True
        return M, scores, elapsed
    m = latent if latent is not None else cfg.get("latent") or n_endmembers
    enc = ae_mod.EncoderSpec(kind=cfg["encoder"], b=d.n_bands, m=m)
    dec = ae_mod.DecoderSpec(kind=cfg["decoder"])
    cons = ae_mod.ConstraintConfig(asc=bool(cfg["asc"]))
    model = ae_mod.build_model(enc, dec, cons,
                               ae_mod._stream(seed, ae_mod.STREAM_INIT))
    train_cfg = ae_mod.TrainConfig(
        epochs=int(cfg["epochs"]), lr=float(cfg["lr"]),
        batch_size=int(cfg["batch_size"]), loss=cfg["loss"],
        mse_weight=float(cfg["mse_weight"]), seed=int(seed))
    history = ae_mod.train(model, d, train_cfg)
    M = ae_mod.extract_endmembers(model)
    ab = ae_mod.predict_abundances(model, d)
    elapsed = time.perf_counter() - start
    if info is not None:
        info.update(latent=m, loss_history=history)
    return M, ab, elapsed


# ---------------------------------------------------------------------------
# benchmark grid

@dataclass
class BenchmarkGrid:
    variants: list                      # (name, DatasetSpec) pairs or dicts
    methods: list                       # shorthand strings or config dicts
    datasets_per_variant: int = 5
    seeds_per_dataset: int = 5
    base_seed: int = 0

    def __post_init__(self):
        if self.datasets_per_variant < 1 or self.seeds_per_dataset < 1:
            raise ValueError("replicate counts must be >= 1")
        norm = []
        for v in self.variants:
            if isinstance(v, dict):
                norm.append((v["name"], v["spec"]))
            else:
                norm.append((v[0], v[1]))
        self.variants = norm

    @property
    def replicates_per_cell(self) -> int:
        return self.datasets_per_variant * self.seeds_per_dataset


def _variant_latent(spec: DatasetSpec) -> int:
    # one extra latent component absorbs baseline/noise when artifacts are on
    return spec.scene.n if spec.artifacts is None else spec.scene.n + 1


def run_benchmark(grid: BenchmarkGrid, out_dir=None, jobs: int = 1,
                  progress=None) -> dict:
    """Run every (variant, method) cell of the grid; returns the result table.

    Dataset seeds and model seeds are shared across variants so scenarios are
    directly comparable. Per-replicate failures are recorded in the output
    and do not abort the run. With out_dir set, writes bench_results.csv
    (aggregates) and bench_results.json (per-replicate detail).
    """
    dataset_seeds = [grid.base_seed + 1 + i for i in range(grid.datasets_per_variant)]
    model_seeds = [grid.base_seed + 101 + j for j in range(grid.seeds_per_dataset)]
    method_cfgs = [resolve_method(m) for m in grid.methods]

    tasks = []
    for vname, vspec in grid.variants:
        for ds_seed in dataset_seeds:
            spec = DatasetSpec(
                endmembers=vspec.endmembers, scene=vspec.scene,
                model=vspec.model, artifacts=vspec.artifacts, seed=ds_seed)
            for cfg in method_cfgs:
                for model_seed in model_seeds:
                    tasks.append((vname, spec, cfg, ds_seed, model_seed))

    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            replicates = list(pool.map(_run_cell, tasks))
    else:
        # generation is deterministic, so reusing the dataset within one
        # (variant, dataset seed) group only saves time
        replicates = []
        cache_key, cache_val = None, None
        for t in tasks:
            key = (t[0], t[1].seed)
            if key != cache_key:
                cache_key = key
                try:
                    cache_val = generate_dataset(t[1])
                except (NumericalError, ValueError):
                    cache_val = None  # let the cell record the failure
            replicates.append(_run_cell(t, preloaded=cache_val))
            if progress is not None:
                progress(t, replicates[-1])

    aggregates = _aggregate(grid, replicates)
    result = {"aggregates": aggregates, "replicates": replicates}
    if out_dir is not None:
        write_benchmark_outputs(result, out_dir)
    return result


def _run_cell(task, preloaded=None) -> dict:
    vname, spec, cfg, ds_seed, model_seed = task
    row = {
        "variant": vname,
        "scene": spec.scene.kind,
        "method": cfg["name"],
        "dataset_seed": ds_seed,
        "model_seed": model_seed,
    }
    try:
        data, gt = preloaded if preloaded is not None else generate_dataset(spec)
        latent = cfg.get("latent") or _variant_latent(spec)
        M, ab, seconds = run_method(cfg, data, spec.scene.n, model_seed,
                                    latent=latent)
        report = evaluate((M, ab), gt, runtime=seconds)
        row.update(sad=report.endmember_sad, mse=report.abundance_mse,
                   pcc=report.endmember_pcc, runtime=seconds)
    except (NumericalError, ValueError) as exc:
        row["error"] = str(exc)
    return row


def _aggregate(grid: BenchmarkGrid, replicates: list[dict]) -> list[dict]:
    rows = []
    for vname, vspec in grid.variants:
        for cfg in (resolve_method(m) for m in grid.methods):
            cell = [r for r in replicates
                    if r["variant"] == vname and r["method"] == cfg["name"]]
            ok = [r for r in cell if "error" not in r]
            for metric in ("sad", "mse"):
                vals = np.array([r[metric] for r in ok], dtype=float)
                rows.append({
                    "variant": vname,
                    "scene": vspec.scene.kind,
                    "method": cfg["name"],
                    "metric": metric,
                    "mean": float(vals.mean()) if vals.size else float("nan"),
                    "std": float(vals.std(ddof=1)) if vals.size > 1 else 0.0,
                    "n": int(vals.size),
                })
    return rows


def write_benchmark_outputs(result: dict, out_dir) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "bench_results.csv", "w", newline="") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["variant", "scene", "method", "metric",
                            "mean", "std", "n"])
        writer.writeheader()
        for row in result["aggregates"]:
            writer.writerow(row)
    with open(out_dir / "bench_results.json", "w", encoding="utf-8") as fh:
        json.dump(result, fh, indent=2)
        fh.write("\n")


# ---------------------------------------------------------------------------
# wall-time scaling

def _square_scene_dims(n_spectra: int) -> tuple[int, int]:
    side = math.isqrt(n_spectra)
    if side * side == n_spectra:
        return side, side
    for h in range(side, 0, -1):
        if n_spectra % h == 0:
            return h, n_spectra // h
    raise ValueError(f"cannot factor {n_spectra} into a scene")


def _patch_for(h: int, w: int) -> int:
    for patch in (20, 10, 5, 2, 1):
        if h % patch == 0 and w % patch == 0:
            return patch
    return 1


def profile_scaling(sizes: list[int], methods: list, n_endmembers: int = 5,
                    bands: int = 1000, runs: int = 3, base_seed: int = 0,
                    cell_timeout: Optional[float] = None, out_path=None,
                    progress=None) -> list[dict]:
    """Wall time per (method, dataset size) on ideal chessboard-style data.

    Each cell is timed `runs` times on the same generated dataset with
    BLAS/OpenMP pools pinned to one thread, so timings reflect serial cost.
    Returns rows (method, N, run, seconds); optionally writes scaling.csv.

    A method whose cell exceeds `cell_timeout` seconds is not aborted
    mid-run (the measurement stays valid) but is skipped at all larger
    sizes, with one `timed_out` row per skipped cell recording the fact.
    """
    from threadpoolctl import threadpool_limits

    if sorted(sizes) != list(sizes):
        raise ValueError("sizes must be sorted ascending")
    from .synth import EndmemberSpec, SceneSpec
    rows = []
    method_cfgs = [resolve_method(m) for m in methods]
    capped: set[str] = set()
    for size_index, n_spec in enumerate(sizes):
        h, w = _square_scene_dims(n_spec)
        spec = DatasetSpec(
            endmembers=EndmemberSpec(n=n_endmembers, b=bands, style="clean"),
            scene=SceneSpec(kind="chessboard", height=h, width=w,
                            n=n_endmembers, patch_size=_patch_for(h, w)),
            model=MixtureModel.LINEAR,
            artifacts=None,
            seed=base_seed + size_index,
        )
        data, _ = generate_dataset(spec)
        for cfg in method_cfgs:
            if cfg["name"] in capped:
                row = {"method": cfg["name"], "N": n_spec, "run": -1,
                       "seconds": float("nan"), "timed_out": True}
                rows.append(row)
                if progress is not None:
                    progress(row)
                continue
            for run in range(runs):
                with threadpool_limits(limits=1):
                    _, _, seconds = run_method(
                        cfg, data, n_endmembers,
                        seed=base_seed + 7919 * (run + 1),
                        latent=n_endmembers)
                row = {"method": cfg["name"], "N": n_spec, "run": run,
                       "seconds": seconds}
                rows.append(row)
                if progress is not None:
                    progress(row)
                if cell_timeout is not None and seconds > cell_timeout:
                    capped.add(cfg["name"])
                    break
    if out_path is not None:
        write_scaling_csv(rows, out_path)
    return rows


def write_scaling_csv(rows: list[dict], out_path) -> None:
    with open(out_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["method", "N", "run", "seconds"],
                                extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            if not row.get("timed_out"):
                writer.writerow(row)
