"""Dual-encoder spectrogram transformer for azimuth regression.

Each ear's spectrogram is cut into overlapping patches, linearly projected,
tagged with a fixed 2-D sinusoidal position embedding, and run through its
own encoder stack (optionally parameter-shared across ears). The two
feature maps are merged by concatenation, addition, or subtraction, pass
through a central encoder stack, and are average-pooled over patches into
a linear head that emits unbounded (x, y) coordinates. No classification
token is used anywhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import engine as E
from .checkpoint import load_tensors, save_tensors
from .util import config_hash

__all__ = [
    "ModelConfig",
    "PatchGrid",
    "ConfigError",
    "patch_counts",
    "extract_patches",
    "sincos_position_table",
    "integrate",
    "EncoderStack",
    "BinauralTransformer",
    "AttentionCapture",
]

INTEGRATIONS = ("concat", "add", "sub")


class ConfigError(ValueError):
    """Inconsistent architecture configuration."""


@dataclass(frozen=True)
class ModelConfig:
    """Architecture description; defaults are the full-scale configuration."""

    height: int = 129
    width: int = 61
    patch: int = 16
    stride: int = 6
    dim: int = 1024
    layers: int = 3
    heads: int = 16
    mlp_dim: int = 1024
    dropout: float = 0.2
    integration: str = "sub"
    shared: bool = False

    def __post_init__(self):
        if self.integration not in INTEGRATIONS:
            raise ConfigError(
                f"integration must be one of {INTEGRATIONS}, got {self.integration!r}")
        if self.dim % self.heads != 0:
            raise ConfigError(
                f"dim {self.dim} not divisible by heads {self.heads}")
        if self.dim % 4 != 0:
            raise ConfigError(f"dim must be divisible by 4, got {self.dim}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        for name in ("height", "width", "patch", "stride"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.layers < 0:
            raise ConfigError("layers must be >= 0")

    @property
    def center_dim(self) -> int:
        return 2 * self.dim if self.integration == "concat" else self.dim

    @property
    def grid(self) -> "PatchGrid":
        return patch_counts(self.height, self.width, self.patch, self.stride)

    def key_values(self) -> dict:
        return {
            "height": self.height, "width": self.width, "patch": self.patch,
            "stride": self.stride, "dim": self.dim, "layers": self.layers,
            "heads": self.heads, "mlp_dim": self.mlp_dim, "dropout": self.dropout,
            "integration": self.integration, "shared": self.shared,
        }

    def hash(self) -> str:
        return config_hash(self.key_values())

    @classmethod
    def from_kv(cls, kv: dict[str, str]) -> "ModelConfig":
        def conv(name, cast):
            return cast(kv[name]) if name in kv else getattr(cls, name)

        return cls(
            height=conv("height", int), width=conv("width", int),
            patch=conv("patch", int), stride=conv("stride", int),
            dim=conv("dim", int), layers=conv("layers", int),
            heads=conv("heads", int), mlp_dim=conv("mlp_dim", int),
            dropout=conv("dropout", float),
            integration=kv.get("integration", cls.integration),
            shared=conv("shared", lambda s: str(s).lower() in ("true", "1", "yes")),
        )


@dataclass(frozen=True)
class PatchGrid:
    """Patch counts along frequency/time plus the zero padding they imply."""

    n_h: int
    n_t: int
    pad_top: int
    pad_right: int

    @property
    def n_patches(self) -> int:
        return self.n_h * self.n_t


def patch_counts(height: int, width: int, patch: int, stride: int) -> PatchGrid:
    """Overlapping-patch counts: n = ceil((extent - patch + stride) / stride).

    When stride does not divide extent - patch, the grid is zero-padded at
    the high-frequency and late-time edges so the last window fits.
    """
    if height < 1 or width < 1 or patch < 1 or stride < 1:
        raise ConfigError(
            f"extents/patch/stride must be positive, got "
            f"({height}, {width}, {patch}, {stride})")

    def one(extent):
        n = max(1, math.ceil((extent - patch + stride) / stride))
        pad = (n - 1) * stride + patch - extent
        if pad >= patch:
            raise ConfigError(
                f"patch {patch} cannot tile extent {extent} with stride {stride}")
        return n, pad

    n_h, pad_top = one(height)
    n_t, pad_right = one(width)
    return PatchGrid(n_h, n_t, pad_top, pad_right)


def extract_patches(x: np.ndarray, patch: int, stride: int,
                    grid: PatchGrid) -> np.ndarray:
    """(B, H, T) -> (B, n_patches, patch*patch), row-major within a patch."""
    padded = np.pad(x, ((0, 0), (0, grid.pad_top), (0, grid.pad_right)))
    windows = np.lib.stride_tricks.sliding_window_view(
        padded, (patch, patch), axis=(1, 2))[:, ::stride, ::stride]
    batch = x.shape[0]
    return windows.reshape(batch, grid.n_patches, patch * patch).copy()


def sincos_position_table(grid: PatchGrid, dim: int) -> np.ndarray:
    """Fixed 2-D sinusoidal table (n_patches, dim): row half + column half."""

    def one_axis(n, d):
        freqs = 1.0 / (10000.0 ** (np.arange(d // 2) / (d // 2)))
        angles = np.outer(np.arange(n), freqs)
        return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)

    half = dim // 2
    rows = one_axis(grid.n_h, half)
    cols = one_axis(grid.n_t, half)
    table = np.concatenate([
        np.repeat(rows, grid.n_t, axis=0),
        np.tile(cols, (grid.n_h, 1)),
    ], axis=1)
    return table.astype(np.float32)


def integrate(z_left: E.Tensor, z_right: E.Tensor, mode: str) -> E.Tensor:
    """Merge per-ear feature maps; concat doubles the feature width."""
    if mode == "add":
        return E.add(z_left, z_right)
    if mode == "sub":
        return E.sub(z_right, z_left)  # left subtracted from right
    if mode == "concat":
        return E.concat([z_left, z_right], axis=-1)
    raise ConfigError(f"unknown integration mode {mode!r}")


def _trunc_normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    x = rng.normal(0.0, std, size=shape)
    bad = np.abs(x) > 2 * std
    while bad.any():
        x[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(x) > 2 * std
    return x


class Linear:
    def __init__(self, d_in: int, d_out: int, rng, name: str, dtype,
                 std: float = 0.02):
        self.d_out = d_out
        self.w = E.parameter(_trunc_normal(rng, (d_in, d_out), std),
                             name=f"{name}.w", dtype=dtype)
        self.b = E.parameter(np.zeros(d_out), name=f"{name}.b", dtype=dtype)

    def __call__(self, x: E.Tensor) -> E.Tensor:
        shape = x.shape
        flat = E.reshape(x, (-1, shape[-1]))
        y = E.add(E.matmul(flat, self.w), self.b)
        return E.reshape(y, shape[:-1] + (self.d_out,))

    def params(self):
        return [self.w, self.b]


class LayerNorm:
    def __init__(self, dim: int, name: str, dtype):
        self.gain = E.parameter(np.ones(dim), name=f"{name}.gain", dtype=dtype)
        self.bias = E.parameter(np.zeros(dim), name=f"{name}.bias", dtype=dtype)

    def __call__(self, x: E.Tensor) -> E.Tensor:
        return E.layer_norm(x, self.gain, self.bias, axis=-1)

    def params(self):
        return [self.gain, self.bias]


class SelfAttention:
    def __init__(self, dim: int, heads: int, rng, name: str, dtype):
        self.heads = heads
        self.head_dim = dim // heads
        self.q = Linear(dim, dim, rng, f"{name}.q", dtype)
        self.k = Linear(dim, dim, rng, f"{name}.k", dtype)
        self.v = Linear(dim, dim, rng, f"{name}.v", dtype)
        self.out = Linear(dim, dim, rng, f"{name}.out", dtype)

    def __call__(self, x: E.Tensor, capture: list | None) -> E.Tensor:
        b, n, d = x.shape
        h, dh = self.heads, self.head_dim

        def split(t):
            return E.transpose(E.reshape(t, (b, n, h, dh)), (0, 2, 1, 3))

        q = split(self.q(x))
        k = split(self.k(x))
        v = split(self.v(x))
        logits = E.scale(E.matmul(q, E.transpose(k, (0, 1, 3, 2))),
                         1.0 / math.sqrt(dh))
        weights = E.softmax(logits, axis=-1)
        if capture is not None:
            capture.append(weights.data.copy())
        y = E.transpose(E.matmul(weights, v), (0, 2, 1, 3))
        return self.out(E.reshape(y, (b, n, d)))

    def params(self):
        return self.q.params() + self.k.params() + self.v.params() + self.out.params()


class Mlp:
    def __init__(self, dim: int, hidden: int, dropout: float, rng, name: str, dtype):
        self.fc1 = Linear(dim, hidden, rng, f"{name}.fc1", dtype)
        self.fc2 = Linear(hidden, dim, rng, f"{name}.fc2", dtype)
        self.dropout = dropout

    def __call__(self, x: E.Tensor, training: bool, rng) -> E.Tensor:
        y = E.dropout(E.gelu(self.fc1(x)), self.dropout, training, rng)
        return E.dropout(self.fc2(y), self.dropout, training, rng)

    def params(self):
        return self.fc1.params() + self.fc2.params()


class EncoderBlock:
    """Pre-norm block: x + MSA(LN(x)), then + MLP(LN(.))."""

    def __init__(self, dim: int, heads: int, mlp_dim: int, dropout: float,
                 rng, name: str, dtype):
        self.norm1 = LayerNorm(dim, f"{name}.norm1", dtype)
        self.attn = SelfAttention(dim, heads, rng, f"{name}.attn", dtype)
        self.norm2 = LayerNorm(dim, f"{name}.norm2", dtype)
        self.mlp = Mlp(dim, mlp_dim, dropout, rng, f"{name}.mlp", dtype)

    def __call__(self, x, training, rng, capture):
        x = E.add(x, self.attn(self.norm1(x), capture))
        return E.add(x, self.mlp(self.norm2(x), training, rng))

    def params(self):
        return (self.norm1.params() + self.attn.params()
                + self.norm2.params() + self.mlp.params())


class EncoderStack:
    """K stacked blocks; K = 0 is the identity on the sequence."""

    def __init__(self, dim: int, layers: int, heads: int, mlp_dim: int,
                 dropout: float, rng, name: str, dtype):
        self.blocks = [
            EncoderBlock(dim, heads, mlp_dim, dropout, rng,
                         f"{name}.block{i}", dtype)
            for i in range(layers)
        ]

    def __call__(self, x: E.Tensor, training: bool = False, rng=None,
                 capture: list | None = None) -> E.Tensor:
        for block in self.blocks:
            x = block(x, training, rng, capture)
        return x

    def params(self):
        return [p for block in self.blocks for p in block.params()]


@dataclass
class AttentionCapture:
    """Per-call softmax attention maps, one (B, heads, N, N) array per layer."""

    left: list[np.ndarray]
    right: list[np.ndarray]
    center: list[np.ndarray]

    @classmethod
    def empty(cls) -> "AttentionCapture":
        return cls([], [], [])


class BinauralTransformer:
    """The full two-ear model; see the module docstring for the data flow."""

    def __init__(self, config: ModelConfig, seed: int = 0, dtype=np.float32):
        self.config = config
        self.dtype = dtype
        self.grid = config.grid
        rng = np.random.default_rng(seed)
        patch_dim = config.patch * config.patch

        table = sincos_position_table(self.grid, config.dim)
        self.pos_table = E.Tensor(table, requires_grad=False,
                                  name="pos_table", dtype=dtype)

        if config.shared:
            proj = Linear(patch_dim, config.dim, rng, "ear.proj", dtype)
            self.proj_left = self.proj_right = proj
            stack = EncoderStack(config.dim, config.layers, config.heads,
                                 config.mlp_dim, config.dropout, rng, "ear.enc", dtype)
            self.enc_left = self.enc_right = stack
        else:
            self.proj_left = Linear(patch_dim, config.dim, rng, "left.proj", dtype)
            self.enc_left = EncoderStack(config.dim, config.layers, config.heads,
                                         config.mlp_dim, config.dropout, rng,
                                         "left.enc", dtype)
            self.proj_right = Linear(patch_dim, config.dim, rng, "right.proj", dtype)
            self.enc_right = EncoderStack(config.dim, config.layers, config.heads,
                                          config.mlp_dim, config.dropout, rng,
                                          "right.enc", dtype)

        self.enc_center = EncoderStack(config.center_dim, config.layers,
                                       config.heads, config.mlp_dim, config.dropout,
                                       rng, "center.enc", dtype)
        self.final_norm = LayerNorm(config.center_dim, "final_norm", dtype)
        self.head = Linear(config.center_dim, 2, rng, "head", dtype)

    # -- parameters ---------------------------------------------------------

    def parameters(self) -> list[E.Tensor]:
        """Trainable tensors, deduplicated (shared ears appear once)."""
        seen: dict[int, E.Tensor] = {}
        groups = [self.proj_left.params(), self.enc_left.params(),
                  self.proj_right.params(), self.enc_right.params(),
                  self.enc_center.params(), self.final_norm.params(),
                  self.head.params()]
        for group in groups:
            for p in group:
                seen.setdefault(id(p), p)
        return list(seen.values())

    def named_parameters(self) -> dict[str, E.Tensor]:
        return {p.name: p for p in self.parameters()}

    def count_parameters(self) -> int:
        """Trainable scalar count; the fixed position table is excluded."""
        return sum(p.size for p in self.parameters())

    # -- forward ------------------------------------------------------------

    def _as_batch(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim == 2:
            x = x[None]
        cfg = self.config
        if x.shape[1:] != (cfg.height, cfg.width):
            raise ConfigError(
                f"spectrogram shape {x.shape[1:]} does not match configured "
                f"({cfg.height}, {cfg.width})")
        return x

    def embed(self, x: np.ndarray, proj: Linear, training: bool, rng) -> E.Tensor:
        cfg = self.config
        patches = extract_patches(self._as_batch(x), cfg.patch, cfg.stride, self.grid)
        tokens = E.add(proj(E.Tensor(patches, dtype=self.dtype)), self.pos_table)
        return E.dropout(tokens, cfg.dropout, training, rng)

    def integrated(self, x_left: np.ndarray, x_right: np.ndarray,
                   training: bool = False, rng=None,
                   capture: AttentionCapture | None = None) -> E.Tensor:
        """Per-ear encoders plus interaural integration (input to the center)."""
        cap_l = capture.left if capture is not None else None
        cap_r = capture.right if capture is not None else None
        z_l = self.enc_left(self.embed(x_left, self.proj_left, training, rng),
                            training, rng, cap_l)
        z_r = self.enc_right(self.embed(x_right, self.proj_right, training, rng),
                             training, rng, cap_r)
        return integrate(z_l, z_r, self.config.integration)

    def forward(self, x_left: np.ndarray, x_right: np.ndarray,
                training: bool = False, rng=None,
                capture: AttentionCapture | None = None) -> E.Tensor:
        z = self.integrated(x_left, x_right, training, rng, capture)
        cap_c = capture.center if capture is not None else None
        z = self.enc_center(z, training, rng, cap_c)
        pooled = E.tmean(self.final_norm(z), axis=1)
        return self.head(pooled)

    def predict(self, x_left: np.ndarray, x_right: np.ndarray) -> np.ndarray:
        """Eval-mode coordinates, shape (batch, 2)."""
        return self.forward(x_left, x_right, training=False).data

    def forward_with_attention(self, x_left: np.ndarray, x_right: np.ndarray
                               ) -> tuple[np.ndarray, AttentionCapture]:
        capture = AttentionCapture.empty()
        pred = self.forward(x_left, x_right, training=False, capture=capture)
        return pred.data, capture

    # -- persistence --------------------------------------------------------

    def save(self, path) -> None:
        save_tensors(path, {p.name: p.data for p in self.parameters()},
                     config_hash=self.config.hash())

    def load_state(self, path) -> None:
        """Load a checkpoint saved under an identical configuration."""
        arrays, _ = load_tensors(path, expected_config_hash=self.config.hash())
        params = self.named_parameters()
        missing = set(params) - set(arrays)
        extra = set(arrays) - set(params)
        if missing or extra:
            raise ConfigError(
                f"checkpoint does not match model: missing {sorted(missing)}, "
                f"unexpected {sorted(extra)}")
        for name, p in params.items():
            if tuple(arrays[name].shape) != p.shape:
                raise ConfigError(
                    f"checkpoint tensor {name} has shape {arrays[name].shape}, "
                    f"model expects {p.shape}")
            p.data = arrays[name].astype(self.dtype)

    @classmethod
    def load(cls, path, config: ModelConfig, dtype=np.float32
             ) -> "BinauralTransformer":
        model = cls(config, seed=0, dtype=dtype)
        model.load_state(path)
        return model
