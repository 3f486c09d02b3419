"""Unmixing autoencoders: encoder architectures, constrained decoders, training.

The encoder maps a spectrum (b bands) to a latent abundance vector (m
components); the decoder mirrors a mixing model whose weight matrix W (b x m)
plays the role of the endmember matrix. Abundance constraints are enforced by
the latent activation (softmax for sum-to-one, softly-rectified tanh for
non-negativity only); endmember non-negativity is enforced by clipping W
after every optimizer step.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import AbundanceMatrix, EndmemberMatrix, SpectralAxis, SpectralDataset
from .nnet import (
    Activation,
    Adam,
    Conv1D,
    Dense,
    Dropout,
    Layer,
    LayerNorm,
    MultiHeadAttention,
    NumericalError,
    clip_nonnegative,
)

ENCODER_KINDS = ("dense", "deep_dense", "convolutional", "transformer",
                 "conv_transformer")
DECODER_KINDS = ("linear", "bilinear_fan")

STREAM_INIT = 0x5851F42D4C957F2D
STREAM_SHUFFLE = 0x14057B7EF767814F
STREAM_DROPOUT = 0x2545F4914F6CDD1D

MAGIC_MODEL = b"RMXM"

DEEP_DENSE_WIDTHS = (512, 256, 128, 64, 32)


@dataclass(frozen=True)
class EncoderSpec:
    kind: str
    b: int
    m: int

    def __post_init__(self):
        if self.kind not in ENCODER_KINDS:
            raise ValueError(f"encoder kind must be one of {ENCODER_KINDS}")
        if self.m < 1:
            raise ValueError("latent dimension must be >= 1")
        if self.m > self.b:
            raise ValueError("latent dimension cannot exceed the band count")


@dataclass(frozen=True)
class DecoderSpec:
    kind: str = "linear"
    fixed_endmembers: Optional[EndmemberMatrix] = None  # non-blind mode

    def __post_init__(self):
        if self.kind not in DECODER_KINDS:
            raise ValueError(f"decoder kind must be one of {DECODER_KINDS}")


@dataclass(frozen=True)
class ConstraintConfig:
    asc: bool = True          # sum-to-one via softmax; otherwise soft-rect tanh
    gamma: float = 10.0

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("soft-rectification sharpness must be positive")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    lr: float = 1e-3
    batch_size: int = 64
    loss: str = "sad"         # "sad" or "sad+mse"
    mse_weight: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.loss not in ("sad", "sad+mse"):
            raise ValueError("loss must be 'sad' or 'sad+mse'")
        if self.mse_weight < 0:
            raise ValueError("reconstruction MSE weight must be >= 0")


def _stream(seed: int, tag: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=(int(seed) ^ tag) & (2**64 - 1)))


# ---------------------------------------------------------------------------
# composite encoder blocks

class ConvBlock(Layer):
    """Parallel size-3 and size-5 conv branches merged back to one channel.

    Input and output are flat (B, b); the 16+16 channel maps are concatenated
    and reduced by a per-band shared dense layer so the downstream encoder
    sees a spectrum-shaped vector again.
    """

    def __init__(self, rng: np.random.Generator, n_filters: int = 16):
        self.conv3 = Conv1D(1, n_filters, 3, rng)
        self.conv5 = Conv1D(1, n_filters, 5, rng)
        self.act3 = Activation("relu")
        self.act5 = Activation("relu")
        self.merge = Dense(2 * n_filters, 1, rng)
        self.n_filters = n_filters

    def _sub(self):
        return (self.conv3, self.conv5, self.merge)

    def parameters(self):
        out = []
        for prefix, layer in (("conv3", self.conv3), ("conv5", self.conv5),
                              ("merge", self.merge)):
            out.extend((f"{prefix}.{n}", p) for n, p in layer.parameters())
        return out

    def gradients(self):
        out = []
        for prefix, layer in (("conv3", self.conv3), ("conv5", self.conv5),
                              ("merge", self.merge)):
            out.extend((f"{prefix}.{n}", g) for n, g in layer.gradients())
        return out

    def forward(self, x, train=False, rng=None):
        tokens = x[:, :, None]
        a = self.act3.forward(self.conv3.forward(tokens, train, rng), train, rng)
        b = self.act5.forward(self.conv5.forward(tokens, train, rng), train, rng)
        merged = self.merge.forward(np.concatenate([a, b], axis=-1), train, rng)
        return merged[:, :, 0]

    def backward(self, grad_out):
        g = self.merge.backward(grad_out[:, :, None])
        nf = self.n_filters
        ga = self.conv3.backward(self.act3.backward(g[..., :nf]))
        gb = self.conv5.backward(self.act5.backward(g[..., nf:]))
        return (ga + gb)[:, :, 0]


class TransformerBlock(Layer):
    """Per-band tokens through one post-norm transformer encoder layer.

    Each band is a token; a shared dense layer embeds the scalar intensity
    into 32 features, and the block output is flattened to (B, b*32).
    """

    def __init__(self, n_bands: int, rng: np.random.Generator,
                 n_features: int = 32, n_heads: int = 2, head_dim: int = 32,
                 ff_dim: int = 64, dropout: float = 0.1):
        self.n_bands = n_bands
        self.n_features = n_features
        self.embed = Dense(1, n_features, rng)
        self.attn = MultiHeadAttention(n_features, n_heads, head_dim, rng)
        self.drop_attn = Dropout(dropout)
        self.norm_attn = LayerNorm(n_features)
        self.ff1 = Dense(n_features, ff_dim, rng)
        self.ff_act = Activation("relu")
        self.ff2 = Dense(ff_dim, n_features, rng)
        self.drop_ff = Dropout(dropout)
        self.norm_ff = LayerNorm(n_features)

    @property
    def out_dim(self) -> int:
        return self.n_bands * self.n_features

    def _named(self):
        return (("embed", self.embed), ("attn", self.attn),
                ("norm_attn", self.norm_attn), ("ff1", self.ff1),
                ("ff2", self.ff2), ("norm_ff", self.norm_ff))

    def parameters(self):
        out = []
        for prefix, layer in self._named():
            out.extend((f"{prefix}.{n}", p) for n, p in layer.parameters())
        return out

    def gradients(self):
        out = []
        for prefix, layer in self._named():
            out.extend((f"{prefix}.{n}", g) for n, g in layer.gradients())
        return out

    def forward(self, x, train=False, rng=None):
        B = x.shape[0]
        h0 = self.embed.forward(x[:, :, None], train, rng)
        a = self.drop_attn.forward(self.attn.forward(h0, train, rng), train, rng)
        h1 = self.norm_attn.forward(h0 + a, train, rng)
        f = self.ff2.forward(
            self.ff_act.forward(self.ff1.forward(h1, train, rng), train, rng),
            train, rng)
        f = self.drop_ff.forward(f, train, rng)
        h2 = self.norm_ff.forward(h1 + f, train, rng)
        return h2.reshape(B, self.out_dim)

    def backward(self, grad_out):
        B = grad_out.shape[0]
        g2 = grad_out.reshape(B, self.n_bands, self.n_features)
        gu = self.norm_ff.backward(g2)
        gff = self.ff1.backward(self.ff_act.backward(
            self.ff2.backward(self.drop_ff.backward(gu))))
        gh1 = gu + gff
        gu1 = self.norm_attn.backward(gh1)
        ga = self.attn.backward(self.drop_attn.backward(gu1))
        gh0 = gu1 + ga
        return self.embed.backward(gh0)[:, :, 0]


# ---------------------------------------------------------------------------
# decoders

class LinearDecoder:
    """Single linear layer x_hat = W z, no bias, W kept non-negative."""

    kind = "linear"

    def __init__(self, b: int, m: int, rng: np.random.Generator,
                 fixed: np.ndarray = None):
        if fixed is not None:
            if fixed.shape != (b, m):
                raise ValueError(f"fixed endmembers must be ({b}, {m}), got {fixed.shape}")
            self.W = fixed.astype(float).copy()
            self.trainable = False
        else:
            # non-negative bounded uniform at Glorot scale: O(1)-range inits
            # start the columns nearly parallel (dense, same mean), which
            # stalls symmetry breaking within the short training budget
            limit = np.sqrt(6.0 / (b + m))
            self.W = rng.uniform(0.0, limit, size=(b, m))
            self.trainable = True
        self.gW = np.zeros_like(self.W)
        self._cache = None

    def parameters(self):
        return [("W", self.W)] if self.trainable else []

    def gradients(self):
        return [("W", self.gW)] if self.trainable else []

    def state(self):
        return [("W", self.W)]

    def forward(self, z, train=False, rng=None):
        self._cache = z
        return z @ self.W.T

    def backward(self, grad_out):
        z = self._cache
        if self.trainable:
            self.gW[...] = grad_out.T @ z
        return grad_out @ self.W

    def clip(self):
        if self.trainable:
            np.maximum(self.W, 0.0, out=self.W)


class BilinearFanDecoder(LinearDecoder):
    """Linear decoder plus pairwise interaction terms.

    x_hat = W z + sum_{k != l} z_k w_k ⊙ z_l w_l, computed through the
    identity sum_{k != l} = (W z)^2 - sum_k z_k^2 w_k^2.
    """

    kind = "bilinear_fan"

    def forward(self, z, train=False, rng=None):
        y = z @ self.W.T
        self._cache = (z, y)
        return y + y * y - (z * z) @ (self.W * self.W).T

    def backward(self, grad_out):
        z, y = self._cache
        gy = grad_out * (1.0 + 2.0 * y)
        gz = gy @ self.W - 2.0 * z * (grad_out @ (self.W * self.W))
        if self.trainable:
            self.gW[...] = gy.T @ z - 2.0 * self.W * (grad_out.T @ (z * z))
        return gz


# ---------------------------------------------------------------------------
# model assembly

class AEModel:
    """Encoder stack plus constrained decoder, with flat parameter access."""

    def __init__(self, encoder_spec: EncoderSpec, decoder_spec: DecoderSpec,
                 constraints: ConstraintConfig, encoder_layers: list,
                 decoder, axis: Optional[SpectralAxis] = None):
        self.encoder_spec = encoder_spec
        self.decoder_spec = decoder_spec
        self.constraints = constraints
        self.encoder_layers = encoder_layers
        self.decoder = decoder
        self.axis = axis

    def encode(self, x: np.ndarray, train: bool = False,
               rng: np.random.Generator = None) -> np.ndarray:
        h = x
        for layer in self.encoder_layers:
            h = layer.forward(h, train, rng)
        return h

    def forward(self, x: np.ndarray, train: bool = False,
                rng: np.random.Generator = None) -> tuple[np.ndarray, np.ndarray]:
        z = self.encode(x, train, rng)
        return z, self.decoder.forward(z, train, rng)

    def backward(self, grad_xhat: np.ndarray) -> np.ndarray:
        g = self.decoder.backward(grad_xhat)
        for layer in reversed(self.encoder_layers):
            g = layer.backward(g)
        return g

    def parameters(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for i, layer in enumerate(self.encoder_layers):
            out.extend((f"enc{i}.{n}", p) for n, p in layer.parameters())
        out.extend((f"dec.{n}", p) for n, p in self.decoder.parameters())
        return out

    def gradients(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for i, layer in enumerate(self.encoder_layers):
            out.extend((f"enc{i}.{n}", g) for n, g in layer.gradients())
        out.extend((f"dec.{n}", g) for n, g in self.decoder.gradients())
        return out

    def state_parameters(self) -> list[tuple[str, np.ndarray]]:
        """All arrays needed to restore the model, trainable or not."""
        out = []
        for i, layer in enumerate(self.encoder_layers):
            out.extend((f"enc{i}.{n}", p) for n, p in layer.parameters())
        out.extend((f"dec.{n}", p) for n, p in self.decoder.state())
        return out

    @property
    def parameter_count(self) -> int:
        return sum(p.size for _, p in self.state_parameters())

    def clip_decoder(self) -> None:
        self.decoder.clip()


def _dense_tail(rng, n_in: int, m: int) -> list:
    return [Dense(n_in, 128, rng), Activation("leaky_relu", 0.02),
            Dense(128, m, rng)]


def build_model(enc: EncoderSpec, dec: DecoderSpec, cons: ConstraintConfig,
                rng: np.random.Generator) -> AEModel:
    """Initialize the full autoencoder; deterministic for a given generator."""
    b, m = enc.b, enc.m
    axis = None
    if dec.fixed_endmembers is not None:
        fixed = dec.fixed_endmembers
        if fixed.n_bands != b or fixed.n_endmembers != m:
            raise ValueError(
                f"fixed endmembers are {fixed.n_bands}x{fixed.n_endmembers}, "
                f"model expects {b}x{m}")
        axis = fixed.axis

    layers: list = []
    if enc.kind == "dense":
        layers += _dense_tail(rng, b, m)
    elif enc.kind == "deep_dense":
        widths = (b,) + DEEP_DENSE_WIDTHS
        for w_in, w_out in zip(widths[:-1], widths[1:]):
            layers += [Dense(w_in, w_out, rng), Activation("leaky_relu", 0.02)]
        layers.append(Dense(DEEP_DENSE_WIDTHS[-1], m, rng))
    elif enc.kind == "convolutional":
        layers.append(ConvBlock(rng))
        layers += _dense_tail(rng, b, m)
    elif enc.kind == "transformer":
        block = TransformerBlock(b, rng)
        layers += [block, Dense(block.out_dim, m, rng)]
    else:  # conv_transformer
        layers.append(ConvBlock(rng))
        block = TransformerBlock(b, rng)
        layers += [block, Dense(block.out_dim, m, rng)]

    if cons.asc:
        layers.append(Activation("softmax"))
    else:
        layers.append(Activation("soft_rect_tanh", cons.gamma))

    fixed_W = dec.fixed_endmembers.signatures if dec.fixed_endmembers is not None else None
    decoder_cls = LinearDecoder if dec.kind == "linear" else BilinearFanDecoder
    decoder = decoder_cls(b, m, rng, fixed=fixed_W)
    return AEModel(enc, dec, cons, layers, decoder, axis=axis)


def decode(model: AEModel, z: np.ndarray) -> np.ndarray:
    """Reconstruct a spectrum from one latent abundance vector."""
    z = np.asarray(z, dtype=float)
    if z.ndim != 1 or z.size != model.encoder_spec.m:
        raise ValueError(f"latent vector must have length {model.encoder_spec.m}")
    return model.decoder.forward(z[None, :])[0]


# ---------------------------------------------------------------------------
# losses

_COS_CLAMP = 1.0 - 1e-12  # keeps the arccos gradient finite at parallel pairs


def _sad_terms(x: np.ndarray, xhat: np.ndarray, clamp: float = 1.0):
    nx = np.linalg.norm(x, axis=-1)
    nh = np.linalg.norm(xhat, axis=-1)
    if np.any(nx == 0) or np.any(nh == 0):
        raise NumericalError("spectral angle undefined for zero-norm spectra")
    cos = np.clip((x * xhat).sum(axis=-1) / (nx * nh), -clamp, clamp)
    return cos, nx, nh


def sad_loss(x: np.ndarray, xhat: np.ndarray) -> float:
    """Mean spectral angle (radians) between rows of x and xhat."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    xhat = np.atleast_2d(np.asarray(xhat, dtype=float))
    cos, _, _ = _sad_terms(x, xhat)
    return float(np.mean(np.arccos(cos)))


def combined_loss(x: np.ndarray, xhat: np.ndarray, mse_weight: float) -> float:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    xhat = np.atleast_2d(np.asarray(xhat, dtype=float))
    return sad_loss(x, xhat) + mse_weight * float(np.mean((x - xhat) ** 2))


def _loss_and_grad(x: np.ndarray, xhat: np.ndarray, mse_weight: float
                   ) -> tuple[float, np.ndarray]:
    """Batch-mean loss and its gradient with respect to the reconstruction."""
    B, b = x.shape
    cos, nx, nh = _sad_terms(x, xhat, clamp=_COS_CLAMP)
    theta = np.arccos(cos)
    dtheta_dcos = -1.0 / np.sqrt(1.0 - cos * cos)
    dcos = (x / (nx * nh)[:, None] - (cos / (nh * nh))[:, None] * xhat)
    grad = (dtheta_dcos[:, None] * dcos) / B
    loss = float(theta.mean())
    if mse_weight > 0:
        diff = xhat - x
        loss += mse_weight * float(np.mean(diff * diff))
        grad += (2.0 * mse_weight / (B * b)) * diff
    return loss, grad


# ---------------------------------------------------------------------------
# training and inference

def train(model: AEModel, d: SpectralDataset, cfg: TrainConfig) -> list[float]:
    """Mini-batch Adam training; returns the per-epoch mean training loss.

    The decoder weight matrix is clipped non-negative after every optimizer
    step. Shuffling and dropout draw from dedicated Philox streams derived
    from the config seed, so identical (model, data, config) reruns produce
    identical loss histories.
    """
    X = d.intensities
    if not np.all(np.isfinite(X)):
        raise ValueError("training data must be finite; run preprocessing first")
    if X.shape[1] != model.encoder_spec.b:
        raise ValueError(
            f"dataset has {X.shape[1]} bands, model expects {model.encoder_spec.b}")
    mse_weight = cfg.mse_weight if cfg.loss == "sad+mse" else 0.0
    shuffle_rng = _stream(cfg.seed, STREAM_SHUFFLE)
    dropout_rng = _stream(cfg.seed, STREAM_DROPOUT)
    opt = Adam([p for _, p in model.parameters()], lr=cfg.lr)
    n = X.shape[0]
    history: list[float] = []
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb = X[idx]
            _, xhat = model.forward(xb, train=True, rng=dropout_rng)
            loss, grad = _loss_and_grad(xb, xhat, mse_weight)
            if not np.isfinite(loss):
                raise NumericalError(
                    f"non-finite loss at epoch {epoch}, batch starting {start}")
            model.backward(grad)
            opt.step([g for _, g in model.gradients()])
            model.clip_decoder()
            total += loss * idx.size
        history.append(total / n)
    model.axis = d.axis
    return history


def extract_endmembers(model: AEModel, axis: Optional[SpectralAxis] = None
                       ) -> EndmemberMatrix:
    """Decoder weight columns as the learned endmember signatures.

    For the bilinear decoder the interaction terms are reconstruction
    machinery, not signatures, so only W is reported.
    """
    ax = axis or model.axis
    if ax is None:
        raise ValueError("no spectral axis available; train first or pass axis=")
    return EndmemberMatrix(clip_nonnegative(model.decoder.W.copy()), ax)


def predict_abundances(model: AEModel, d: SpectralDataset,
                       batch_size: int = 2048) -> AbundanceMatrix:
    """Encoder outputs in inference mode, one abundance row per spectrum."""
    X = d.intensities
    rows = [model.encode(X[i:i + batch_size]) for i in range(0, X.shape[0], batch_size)]
    return AbundanceMatrix(np.vstack(rows), asc_enforced=model.constraints.asc)


# ---------------------------------------------------------------------------
# serialization

def save_model(model: AEModel, path) -> None:
    params = model.state_parameters()
    header = {
        "encoder": {"kind": model.encoder_spec.kind, "b": model.encoder_spec.b,
                    "m": model.encoder_spec.m},
        "decoder": {"kind": model.decoder_spec.kind,
                    "fixed": model.decoder_spec.fixed_endmembers is not None,
                    "trainable": model.decoder.trainable},
        "constraints": {"asc": model.constraints.asc,
                        "gamma": model.constraints.gamma},
        "params": [{"name": n, "shape": list(p.shape)} for n, p in params],
        "axis": None if model.axis is None else model.axis.values.tolist(),
    }
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC_MODEL)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for _, p in params:
            fh.write(np.ascontiguousarray(p, dtype="<f8").tobytes())


def load_model(path) -> AEModel:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC_MODEL:
            raise ValueError(f"bad model magic {magic!r}")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        enc = EncoderSpec(**header["encoder"])
        cons = ConstraintConfig(**header["constraints"])
        model = build_model(enc, DecoderSpec(kind=header["decoder"]["kind"]),
                            cons, np.random.Generator(np.random.Philox(key=0)))
        model.decoder.trainable = header["decoder"]["trainable"]
        by_name = dict(model.state_parameters())
        for meta in header["params"]:
            shape = tuple(meta["shape"])
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(shape)
            target = by_name[meta["name"]]
            target[...] = data
        if header["axis"] is not None:
            model.axis = SpectralAxis(np.asarray(header["axis"]))
    return model
