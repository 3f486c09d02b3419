"""Seedable generator of synthetic Raman-like mixtures with ground truth.

Determinism contract: every stage draws from its own counter-based Philox
stream keyed by ``seed ^ stage_tag``, so toggling artifacts (or changing the
artifact parameters) never perturbs the endmember or scene draws. Within a
stage, draws happen in a fixed, documented order (see the individual
functions), which makes outputs bit-reproducible for a given seed on a given
platform.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import (
    AbundanceMatrix,
    EndmemberMatrix,
    GroundTruth,
    MixtureModel,
    SpectralAxis,
    SpectralDataset,
)

STAGE_ENDMEMBERS = 0x9E3779B97F4A7C15  # distinct 64-bit stage tags
STAGE_SCENE = 0xC2B2AE3D27D4EB4F
STAGE_ARTIFACTS = 0x165667B19E3779F9

ENDMEMBER_STYLES = ("clean", "noisy")
SCENE_KINDS = ("chessboard", "gaussian", "dirichlet")

DEFAULT_PATCH_SIZE = 20  # chessboard patches are 20x20 pixels


def stage_rng(seed: int, tag: int) -> np.random.Generator:
    """Philox stream for one generation stage."""
    return np.random.Generator(np.random.Philox(key=(int(seed) ^ tag) & (2**64 - 1)))


@dataclass(frozen=True)
class EndmemberSpec:
    n: int
    b: int
    style: str = "clean"

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("endmember count must be >= 1")
        if self.b < 20:
            raise ValueError("band count must be >= 20 (peak centers live in [10, b-10])")
        if self.style not in ENDMEMBER_STYLES:
            raise ValueError(f"style must be one of {ENDMEMBER_STYLES}")


@dataclass(frozen=True)
class SceneSpec:
    kind: str
    height: int
    width: int
    n: int
    patch_size: int = DEFAULT_PATCH_SIZE  # chessboard only, pixels per patch side

    def __post_init__(self):
        if self.kind not in SCENE_KINDS:
            raise ValueError(f"scene kind must be one of {SCENE_KINDS}")
        if self.height < 1 or self.width < 1:
            raise ValueError("scene dimensions must be >= 1")
        if self.n < 1:
            raise ValueError("endmember count must be >= 1")
        if self.kind == "chessboard":
            if self.patch_size < 1:
                raise ValueError("patch size must be >= 1")
            if self.height % self.patch_size or self.width % self.patch_size:
                raise ValueError(
                    f"chessboard scene dims ({self.height}x{self.width}) must be "
                    f"divisible by the patch size ({self.patch_size})"
                )

    @property
    def n_pixels(self) -> int:
        return self.height * self.width


@dataclass(frozen=True)
class ArtifactConfig:
    sigma_noise: float = 0.1
    p_baseline: float = 0.25
    h_baseline: float = 2.0
    p_spike: float = 0.1
    h_spike: float = 5.0

    def __post_init__(self):
        if self.sigma_noise < 0:
            raise ValueError("noise std must be >= 0")
        for name, p in (("p_baseline", self.p_baseline), ("p_spike", self.p_spike)):
            if not 0 <= p <= 1:
                raise ValueError(f"{name} must lie in [0, 1]")


@dataclass(frozen=True)
class DatasetSpec:
    endmembers: EndmemberSpec
    scene: SceneSpec
    model: MixtureModel = MixtureModel.LINEAR
    artifacts: Optional[ArtifactConfig] = None
    seed: int = 0

    def __post_init__(self):
        if self.scene.n != self.endmembers.n:
            raise ValueError(
                f"scene.n ({self.scene.n}) must equal endmembers.n ({self.endmembers.n})"
            )

    def to_dict(self) -> dict:
        d = {
            "endmembers": {
                "n": self.endmembers.n,
                "b": self.endmembers.b,
                "style": self.endmembers.style,
            },
            "scene": {
                "kind": self.scene.kind,
                "height": self.scene.height,
                "width": self.scene.width,
                "n": self.scene.n,
            },
            "model": self.model.value,
            "seed": int(self.seed),
        }
        if self.scene.kind == "chessboard":
            d["scene"]["patch_size"] = self.scene.patch_size
        if self.artifacts is not None:
            d["artifacts"] = {
                "sigma_noise": self.artifacts.sigma_noise,
                "p_baseline": self.artifacts.p_baseline,
                "h_baseline": self.artifacts.h_baseline,
                "p_spike": self.artifacts.p_spike,
                "h_spike": self.artifacts.h_spike,
            }
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSpec":
        art = d.get("artifacts")
        scene = d["scene"]
        return cls(
            endmembers=EndmemberSpec(**d["endmembers"]),
            scene=SceneSpec(
                kind=scene["kind"],
                height=scene["height"],
                width=scene["width"],
                n=scene["n"],
                patch_size=scene.get("patch_size", DEFAULT_PATCH_SIZE),
            ),
            model=MixtureModel(d.get("model", "linear")),
            artifacts=ArtifactConfig(**art) if art is not None else None,
            seed=d.get("seed", 0),
        )


def gaussian_peak(b: int, center: float, sigma: float, height: float) -> np.ndarray:
    """Peak evaluated on bands 1..b; its maximum (at the center) equals height.

    The sigma*sqrt(2*pi) prefactor in the peak law cancels the Gaussian
    density normalization, so the band sum approximates height*sigma*sqrt(2*pi).
    """
    j = np.arange(1, b + 1, dtype=float)
    return height * np.exp(-0.5 * ((j - center) / sigma) ** 2)


def _sample_beta_1_3(rng: np.random.Generator, size: int) -> np.ndarray:
    # inverse CDF of Beta(1, 3): F(x) = 1 - (1-x)^3
    u = rng.uniform(size=size)
    return 1.0 - np.cbrt(1.0 - u)


def _sample_peaks(rng, b: int, count: int, h1: np.ndarray, width_factor: float
                  ) -> np.ndarray:
    # draw order per batch of peaks: h2, centers, sigmas
    h2 = rng.uniform(0.1, 1.0, size=count)
    centers = rng.uniform(10.0, b - 10.0, size=count)
    sigmas = width_factor * rng.uniform(0.1, 1.0, size=count)
    spectrum = np.zeros(b)
    for h, c, s in zip(h1 * h2, centers, sigmas):
        spectrum += gaussian_peak(b, c, s, h)
    return spectrum


def _major_component(rng, b: int) -> tuple[np.ndarray, int]:
    """One clean signature: 5..9 major peaks; returns (spectrum, peak count)."""
    n_peaks = int(rng.integers(5, 10))
    h1 = 1.0 + 5.0 * _sample_beta_1_3(rng, n_peaks)
    return _sample_peaks(rng, b, n_peaks, h1, width_factor=1.0), n_peaks


def _minor_component(rng, b: int) -> tuple[np.ndarray, int]:
    """Overlay for the noisy style: 50..99 small wide peaks, fixed h1 = 1/3."""
    n_small = int(rng.integers(50, 100))
    h1 = np.full(n_small, 1.0 / 3.0)
    return _sample_peaks(rng, b, n_small, h1, width_factor=2.0), n_small


def generate_endmembers(spec: EndmemberSpec, rng: np.random.Generator
                        ) -> EndmemberMatrix:
    """Superpose random Gaussian peaks into n endmember signatures.

    Per endmember: 5..9 major peaks with height h1*h2 where h1 = 1 + 5*beta,
    beta ~ Beta(1,3), h2 ~ U(0.1, 1); centers ~ U(10, b-10); width sigma ~
    U(0.1, 1). The "noisy" style then overlays 50..99 minor peaks per
    endmember with fixed h1 = 1/3 and doubled width. Minor peaks are drawn
    after all major peaks so that the clean content for a given stream is
    shared between the two styles.
    """
    b, n = spec.b, spec.n
    signatures = np.zeros((b, n))
    for i in range(n):
        signatures[:, i], _ = _major_component(rng, b)
    if spec.style == "noisy":
        for i in range(n):
            overlay, _ = _minor_component(rng, b)
            signatures[:, i] += overlay
    axis = SpectralAxis(np.arange(1, b + 1, dtype=float))
    return EndmemberMatrix(signatures, axis)


def generate_scene(spec: SceneSpec, rng: np.random.Generator) -> AbundanceMatrix:
    """Abundance scene satisfying ANC and ASC row-wise.

    chessboard: square patches, each a uniformly drawn one-hot endmember.
    gaussian: n isotropic bumps centered on the scene diagonal at
    ((k+0.5)*H/n, (k+0.5)*W/n) with std H/(2n), row-normalized.
    dirichlet: each pixel an independent Dirichlet(1, ..., 1) sample.
    """
    H, W, n = spec.height, spec.width, spec.n
    if spec.kind == "chessboard":
        ps = spec.patch_size
        grid = rng.integers(0, n, size=(H // ps, W // ps))
        labels = np.repeat(np.repeat(grid, ps, axis=0), ps, axis=1)
        values = np.zeros((H * W, n))
        values[np.arange(H * W), labels.ravel()] = 1.0
    elif spec.kind == "gaussian":
        std = H / (2.0 * n)
        rows = np.arange(H, dtype=float)[:, None] + 0.5
        cols = np.arange(W, dtype=float)[None, :] + 0.5
        values = np.empty((H * W, n))
        for k in range(n):
            cy = (k + 0.5) * H / n
            cx = (k + 0.5) * W / n
            bump = np.exp(-((rows - cy) ** 2 + (cols - cx) ** 2) / (2.0 * std**2))
            values[:, k] = bump.ravel()
        values /= values.sum(axis=1, keepdims=True)
    else:  # dirichlet
        values = rng.dirichlet(np.ones(n), size=H * W)
    return AbundanceMatrix(values, asc_enforced=True)


def mix(M: EndmemberMatrix, A: AbundanceMatrix, model: MixtureModel
        ) -> SpectralDataset:
    """Mix abundances with endmembers under the chosen model.

    Linear: x = M alpha. Bilinear Fan adds sum_{k != l} (a_k m_k) ⊙ (a_l m_l),
    computed via the identity  sum_{k != l} = (M alpha)^2 - sum_k a_k^2 m_k^2
    (both orderings of each pair counted).
    """
    if M.n_endmembers != A.n_endmembers:
        raise ValueError(
            f"endmember count mismatch: M has {M.n_endmembers}, A has {A.n_endmembers}"
        )
    sig = M.signatures
    vals = A.values
    linear = vals @ sig.T
    if model is MixtureModel.LINEAR:
        data = linear
    else:
        squares = (vals**2) @ (sig**2).T
        data = linear + linear**2 - squares
    return SpectralDataset(axis=M.axis, intensities=data)


def baseline_signal(b: int, h_baseline: float) -> np.ndarray:
    """Slowly rising background h * arctan(pi * j / b), j = 1..b."""
    j = np.arange(1, b + 1, dtype=float)
    return h_baseline * np.arctan(np.pi * j / b)


def add_artifacts(d: SpectralDataset, cfg: ArtifactConfig, rng: np.random.Generator
                  ) -> SpectralDataset:
    """Add dark noise, probabilistic baselines, and cosmic spikes.

    Draw order (all draws unconditional so the stream layout does not depend
    on outcomes): noise matrix, baseline coins, spike coins, spike bands,
    spike magnitudes. Spike bands are the 1-based indices {2, ..., b-2}; the
    magnitude is h_spike * U(0.75, 1.25). Outputs are not clamped at zero,
    matching real dark-noise undershoot.
    """
    N, b = d.intensities.shape
    if b < 4:
        raise ValueError("artifact injection requires at least 4 bands")
    data = d.intensities + rng.normal(0.0, cfg.sigma_noise, size=(N, b))
    baseline_mask = rng.random(N) < cfg.p_baseline
    spike_mask = rng.random(N) < cfg.p_spike
    spike_bands = rng.integers(1, b - 2, size=N)  # 0-based {1..b-3} = 1-based {2..b-2}
    spike_mags = cfg.h_spike * rng.uniform(0.75, 1.25, size=N)
    if baseline_mask.any():
        data[baseline_mask] += baseline_signal(b, cfg.h_baseline)
    hit = np.nonzero(spike_mask)[0]
    data[hit, spike_bands[hit]] += spike_mags[hit]
    return SpectralDataset(axis=d.axis, intensities=data, shape=d.shape)


def generate_dataset(spec: DatasetSpec) -> tuple[SpectralDataset, GroundTruth]:
    """Run the full generation pipeline for one dataset specification.

    The ground truth holds the pre-artifact endmembers and scene, so two
    specs differing only in their artifact block share it bit-exactly.
    """
    M = generate_endmembers(spec.endmembers, stage_rng(spec.seed, STAGE_ENDMEMBERS))
    A = generate_scene(spec.scene, stage_rng(spec.seed, STAGE_SCENE))
    data = mix(M, A, spec.model)
    data = SpectralDataset(
        axis=data.axis,
        intensities=data.intensities,
        shape=(spec.scene.height, spec.scene.width),
    )
    if spec.artifacts is not None:
        data = add_artifacts(data, spec.artifacts, stage_rng(spec.seed, STAGE_ARTIFACTS))
    gt = GroundTruth(endmembers=M, abundances=A, mixture_model=spec.model)
    return data, gt
