"""The convolutional embedding network and its optimizer.

The default architecture is VGG-flavored: four blocks of two identical 3x3
convolutions (eight convolutional layers total), each followed by ReLU;
stride-2 max pooling after every block except the last; global average
pooling after the last block, so the embedding length equals the final
channel count regardless of the input frame count. Smaller configurations
are available for tests and desk-scale runs.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DataError, ShapeError, StateError


@dataclass(frozen=True)
class NetworkConfig:
    in_channels: int = 1
    blocks: int = 4
    convs_per_block: int = 2
    channels: tuple[int, ...] = (32, 64, 128, 256)
    kernel: int = 3
    dtype: str = "float32"  # float64 for gradient-check builds
    channel_norm: bool = False  # frozen-statistic normalization + learned affine

    def __post_init__(self):
        if self.blocks < 1 or self.convs_per_block < 1:
            raise ConfigError("blocks and convs_per_block must be >= 1")
        if len(self.channels) != self.blocks:
            raise ConfigError(
                f"channel plan {self.channels} must list one width per block "
                f"({self.blocks})"
            )
        if self.kernel % 2 == 0 or self.kernel < 1:
            raise ConfigError("kernel must be odd and positive")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"unsupported dtype {self.dtype!r}")

    @property
    def embedding_dim(self) -> int:
        return self.channels[-1]

    @property
    def n_conv_layers(self) -> int:
        return self.blocks * self.convs_per_block

    @property
    def min_input_size(self) -> int:
        """Smallest spatial extent that survives the stride-2 pools."""
        return 2 ** (self.blocks - 1)

    def to_dict(self) -> dict:
        return {
            "in_channels": self.in_channels,
            "blocks": self.blocks,
            "convs_per_block": self.convs_per_block,
            "channels": list(self.channels),
            "kernel": self.kernel,
            "dtype": self.dtype,
            "channel_norm": self.channel_norm,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        d = dict(d)
        d["channels"] = tuple(d["channels"])
        return cls(**d)

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


class EmbeddingNetwork:
    """Maps a [C, H, W] (or batched [B, C, H, W]) input to an embedding.

    Parameters live in ``params`` keyed by a stable declared order;
    ``buffers`` holds frozen normalization statistics that are never
    trained and carry no gradient slot.
    """

    def __init__(self, config: NetworkConfig, params: dict[str, Tensor],
                 buffers: dict[str, np.ndarray] | None = None):
        self.config = config
        self.params = params
        self.buffers = buffers or {}

    # -- parameter plumbing -------------------------------------------------

    def parameter_names(self) -> tuple[str, ...]:
        return tuple(self.params)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def n_parameters(self) -> int:
        return sum(p.data.size for p in self.params.values())

    # -- forward --------------------------------------------------------------

    def forward(self, x) -> Tensor:
        """Embed one input [C, H, W] -> [D] or a batch [B, C, H, W] -> [B, D]."""
        t = ad.astensor(x)
        single = t.ndim == 3
        if single:
            t = ad.reshape(t, (1,) + t.shape)
        out = ad.global_mean_pool(self.forward_map(t))
        return ad.reshape(out, out.shape[1:]) if single else out

    def forward_map(self, x) -> Tensor:
        """The pre-pool feature map [B, C_last, H', W']; geometry aside,
        per-location values are identical to what feeds the global pool."""
        t = ad.astensor(x)
        if t.ndim != 4:
            raise ShapeError(f"expected input [B,C,H,W], got shape {t.shape}")
        cfg = self.config
        b, c, h, w = t.shape
        if c != cfg.in_channels:
            raise ShapeError(
                f"input has {c} channels at shape {t.shape}; network expects "
                f"{cfg.in_channels} (config {cfg.to_dict()})"
            )
        m = cfg.min_input_size
        if h < m or w < m:
            raise ShapeError(
                f"input {h}x{w} too small for {cfg.blocks} blocks; "
                f"need at least {m}x{m}"
            )
        if t.dtype != np.dtype(cfg.dtype):
            src = t
            t = Tensor(src.data.astype(cfg.dtype), _parents=(src,),
                       _backward=lambda g, d=src.dtype: (g.astype(d),))
        pad = cfg.kernel // 2
        for bi in range(cfg.blocks):
            for ci in range(cfg.convs_per_block):
                name = f"block{bi}.conv{ci}"
                t = ad.conv2d(t, self.params[f"{name}.weight"],
                              self.params[f"{name}.bias"], padding=pad)
                t = ad.relu(t)
            if cfg.channel_norm:
                t = self._channel_norm(t, bi)
            if bi < cfg.blocks - 1:
                t = ad.maxpool2d(t, 2)
        return t

    def _channel_norm(self, t: Tensor, block: int) -> Tensor:
        mean = self.buffers[f"block{block}.norm.mean"]
        std = self.buffers[f"block{block}.norm.std"]
        scale = self.params[f"block{block}.norm.scale"]
        shift = self.params[f"block{block}.norm.shift"]
        centered = ad.mul(
            ad.sub(t, mean[None, :, None, None]),
            (1.0 / std)[None, :, None, None],
        )
        return ad.add(
            ad.mul(centered, ad.reshape(scale, (1, scale.shape[0], 1, 1))),
            ad.reshape(shift, (1, shift.shape[0], 1, 1)),
        )


def init_parameters(config: NetworkConfig, seed: int) -> EmbeddingNetwork:
    """He fan-in initialization for conv weights, zero biases; deterministic
    for a fixed seed."""
    rng = np.random.default_rng(seed)
    dtype = np.dtype(config.dtype)
    params: dict[str, Tensor] = {}
    buffers: dict[str, np.ndarray] = {}
    c_in = config.in_channels
    k = config.kernel
    for bi, c_out in enumerate(config.channels):
        for ci in range(config.convs_per_block):
            fan_in = c_in * k * k
            w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(c_out, c_in, k, k))
            params[f"block{bi}.conv{ci}.weight"] = Tensor(
                w.astype(dtype), requires_grad=True
            )
            params[f"block{bi}.conv{ci}.bias"] = Tensor(
                np.zeros(c_out, dtype=dtype), requires_grad=True
            )
            c_in = c_out
        if config.channel_norm:
            params[f"block{bi}.norm.scale"] = Tensor(
                np.ones(c_out, dtype=dtype), requires_grad=True
            )
            params[f"block{bi}.norm.shift"] = Tensor(
                np.zeros(c_out, dtype=dtype), requires_grad=True
            )
            buffers[f"block{bi}.norm.mean"] = np.zeros(c_out, dtype=dtype)
            buffers[f"block{bi}.norm.std"] = np.ones(c_out, dtype=dtype)
    return EmbeddingNetwork(config, params, buffers)


# -- optimizer ----------------------------------------------------------------


@dataclass
class Optimizer:
    """Plain SGD, SGD with momentum, or Adam over a network's parameters."""

    kind: str = "adam"
    lr: float = 1e-3
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    state: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("sgd", "sgd+momentum", "adam"):
            raise ConfigError(f"unknown optimizer kind {self.kind!r}")
        if self.lr <= 0:
            raise ConfigError("learning rate must be positive")

    def step(self, net: EmbeddingNetwork) -> None:
        """Apply one update from the accumulated gradients, then clear them."""
        missing = [n for n, p in net.params.items() if p.grad is None]
        if missing:
            raise StateError(
                f"optimizer step with missing gradients for: {', '.join(missing)}"
            )
        self.step_count += 1
        for name, p in net.params.items():
            g = p.grad
            if self.kind == "sgd":
                p.data = p.data - self.lr * g
            elif self.kind == "sgd+momentum":
                v = self.state.get(name)
                v = g if v is None else self.momentum * v + g
                self.state[name] = v
                p.data = p.data - self.lr * v
            else:  # adam
                m, v = self.state.get(name, (0.0, 0.0))
                m = self.beta1 * m + (1.0 - self.beta1) * g
                v = self.beta2 * v + (1.0 - self.beta2) * g * g
                self.state[name] = (m, v)
                mhat = m / (1.0 - self.beta1**self.step_count)
                vhat = v / (1.0 - self.beta2**self.step_count)
                p.data = p.data - self.lr * mhat / (np.sqrt(vhat) + self.eps)
        net.zero_grad()


# -- checkpoints ----------------------------------------------------------------

_CKPT_MAGIC = b"EMBNET1 "


def save_checkpoint(path, net: EmbeddingNetwork, seed: int, step: int) -> None:
    """Structured one-line header + flat float32 payload in declared order.

    Round-trips are bit-exact for float32 networks.
    """
    header = json.dumps(
        {
            "architecture": net.config.to_dict(),
            "seed": seed,
            "step": step,
            "param_order": list(net.params),
            "buffer_order": list(net.buffers),
        },
        sort_keys=True,
    )
    chunks = [np.ascontiguousarray(p.data, dtype="<f4").ravel() for p in net.params.values()]
    chunks += [np.ascontiguousarray(b, dtype="<f4").ravel() for b in net.buffers.values()]
    payload = np.concatenate(chunks) if chunks else np.zeros(0, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC + header.encode() + b"\n")
        fh.write(payload.tobytes())


def load_checkpoint(path) -> tuple[EmbeddingNetwork, int, int]:
    """Returns (network, seed, step)."""
    with open(path, "rb") as fh:
        first = fh.readline()
        if not first.startswith(_CKPT_MAGIC):
            raise DataError(f"{path}: not a checkpoint file")
        try:
            header = json.loads(first[len(_CKPT_MAGIC) :].decode())
            config = NetworkConfig.from_dict(header["architecture"])
            param_order = header["param_order"]
            buffer_order = header.get("buffer_order", [])
        except (json.JSONDecodeError, KeyError, TypeError) as e:
            raise DataError(f"{path}: corrupt checkpoint header: {e}") from None
        payload = np.frombuffer(fh.read(), dtype="<f4")

    template = init_parameters(config, seed=0)
    if list(template.params) != param_order or list(template.buffers) != buffer_order:
        raise DataError(
            f"{path}: checkpoint parameter order does not match architecture "
            f"{config.fingerprint()}"
        )
    dtype = np.dtype(config.dtype)
    offset = 0
    params: dict[str, Tensor] = {}
    for name in param_order:
        shape = template.params[name].data.shape
        size = int(np.prod(shape))
        if offset + size > payload.size:
            raise DataError(f"{path}: checkpoint payload truncated at {name!r}")
        params[name] = Tensor(
            payload[offset : offset + size].reshape(shape).astype(dtype),
            requires_grad=True,
        )
        offset += size
    buffers: dict[str, np.ndarray] = {}
    for name in buffer_order:
        shape = template.buffers[name].shape
        size = int(np.prod(shape))
        buffers[name] = payload[offset : offset + size].reshape(shape).astype(dtype)
        offset += size
    if offset != payload.size:
        raise DataError(
            f"{path}: checkpoint payload has {payload.size - offset} stray floats"
        )
    return EmbeddingNetwork(config, params, buffers), int(header["seed"]), int(header["step"])


def checkpoint_fingerprint(path) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()[:16]
