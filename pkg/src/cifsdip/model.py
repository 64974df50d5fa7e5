"""Hourglass network with skip connections and its latent input.

The topology follows the usual deep-image-prior "skip" generator: at every
scale a stride-2 encoder branch goes deeper while a narrow 1x1 skip branch
stays at the current resolution; on the way back the deeper result is
upsampled, concatenated with the skip features and mixed by a conv block.
A final 1x1 conv and sigmoid map to the output image.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np

from .errors import ConfigurationError, ParseError
from .tensor import (
    ParamSet,
    Tensor,
    batch_norm,
    concat,
    conv2d,
    leaky_relu,
    sigmoid,
    upsample_nearest,
)

DEFAULT_LATENT_DEPTH = 32
DEFAULT_PERTURBATION = 1.0 / 30.0


@dataclass
class NetworkConfig:
    input_channels: int = DEFAULT_LATENT_DEPTH
    output_channels: int = 3
    channels_down: list = field(default_factory=lambda: [16, 32, 64])
    channels_up: list = field(default_factory=lambda: [16, 32, 64])
    channels_skip: list = field(default_factory=lambda: [4, 4, 4])
    kernel_down: int = 3
    kernel_up: int = 3
    kernel_skip: int = 1
    need_1x1_up: bool = True
    leaky_slope: float = 0.2

    def __post_init__(self):
        self.channels_down = [int(c) for c in self.channels_down]
        self.channels_up = [int(c) for c in self.channels_up]
        self.channels_skip = [int(c) for c in self.channels_skip]
        self.validate()

    @property
    def depth(self) -> int:
        return len(self.channels_down)

    def validate(self):
        if self.depth < 1:
            raise ConfigurationError("network depth must be >= 1")
        if not (len(self.channels_up) == len(self.channels_skip) == self.depth):
            raise ConfigurationError("channels_down, channels_up and channels_skip need equal lengths")
        if self.output_channels not in (1, 3):
            raise ConfigurationError(f"output_channels must be 1 or 3, got {self.output_channels}")
        if self.input_channels < 1:
            raise ConfigurationError("input_channels must be positive")
        if min(self.channels_down + self.channels_up) < 1 or min(self.channels_skip) < 0:
            raise ConfigurationError("channel counts must be positive (skip widths may be 0)")
        for k in (self.kernel_down, self.kernel_up, self.kernel_skip):
            if k < 1 or k % 2 == 0:
                raise ConfigurationError(f"kernel sizes must be odd and positive, got {k}")

    def check_spatial(self, height: int, width: int):
        div = 2 ** self.depth
        if height % div or width % div:
            raise ConfigurationError(
                f"image size {height}x{width} must be divisible by 2**depth = {div}"
            )

    def to_text(self) -> str:
        lines = []
        for k, v in asdict(self).items():
            if isinstance(v, list):
                v = ",".join(str(x) for x in v)
            lines.append(f"{k}={v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "NetworkConfig":
        types = {f.name: f for f in fields(cls)}
        kwargs = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ParseError("expected key=value", f"line {lineno}")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ParseError(f"unknown network key {key!r}", f"line {lineno}")
            default = getattr(cls(), key)
            try:
                if isinstance(default, list):
                    kwargs[key] = [int(v) for v in value.split(",") if v.strip()]
                elif isinstance(default, bool):
                    if value.lower() not in ("true", "false", "1", "0"):
                        raise ValueError(value)
                    kwargs[key] = value.lower() in ("true", "1")
                elif isinstance(default, int):
                    kwargs[key] = int(value)
                else:
                    kwargs[key] = float(value)
            except ValueError:
                raise ParseError(f"bad value for {key!r}: {value!r}", f"line {lineno}") from None
        return cls(**kwargs)


def _uniform(rng, shape, bound, dtype):
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class SkipNetwork:
    """Forward function plus parameter set for a :class:`NetworkConfig`."""

    def __init__(self, config: NetworkConfig, seed: int = 0, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        self.params = ParamSet()
        self._rng = np.random.default_rng(seed)
        c = config
        in_ch = c.input_channels
        for i in range(c.depth):
            deeper_out = c.channels_up[i + 1] if i < c.depth - 1 else c.channels_down[i]
            if c.channels_skip[i]:
                self._conv(f"s{i}.skip", in_ch, c.channels_skip[i], c.kernel_skip)
                self._bn(f"s{i}.skip_bn", c.channels_skip[i])
            self._conv(f"s{i}.down", in_ch, c.channels_down[i], c.kernel_down)
            self._bn(f"s{i}.down_bn", c.channels_down[i])
            self._conv(f"s{i}.down2", c.channels_down[i], c.channels_down[i], c.kernel_down)
            self._bn(f"s{i}.down2_bn", c.channels_down[i])
            merged = c.channels_skip[i] + deeper_out
            self._bn(f"s{i}.merge_bn", merged)
            self._conv(f"s{i}.up", merged, c.channels_up[i], c.kernel_up)
            self._bn(f"s{i}.up_bn", c.channels_up[i])
            if c.need_1x1_up:
                self._conv(f"s{i}.up1x1", c.channels_up[i], c.channels_up[i], 1)
                self._bn(f"s{i}.up1x1_bn", c.channels_up[i])
            in_ch = c.channels_down[i]
        self._conv("out", c.channels_up[0], c.output_channels, 1)
        del self._rng

    def _conv(self, name, cin, cout, k):
        # PyTorch's default conv init: U(-1/sqrt(fan_in), 1/sqrt(fan_in))
        bound = 1.0 / np.sqrt(cin * k * k)
        self.params[f"{name}.w"] = Tensor(_uniform(self._rng, (cout, cin, k, k), bound, self.dtype),
                                          requires_grad=True, name=f"{name}.w")
        self.params[f"{name}.b"] = Tensor(_uniform(self._rng, (cout,), bound, self.dtype),
                                          requires_grad=True, name=f"{name}.b")

    def _bn(self, name, ch):
        self.params[f"{name}.g"] = Tensor(np.ones(ch, self.dtype), requires_grad=True, name=f"{name}.g")
        self.params[f"{name}.b"] = Tensor(np.zeros(ch, self.dtype), requires_grad=True, name=f"{name}.b")

    def _apply_conv(self, name, x, stride=1):
        w = self.params[f"{name}.w"]
        return conv2d(x, w, self.params[f"{name}.b"], stride=stride, padding=w.shape[-1] // 2)

    def _apply_bn_act(self, name, x, act=True):
        y = batch_norm(x, self.params[f"{name}.g"], self.params[f"{name}.b"])
        return leaky_relu(y, self.config.leaky_slope) if act else y

    def _scale(self, i, x):
        c = self.config
        deeper = self._apply_bn_act(f"s{i}.down_bn", self._apply_conv(f"s{i}.down", x, stride=2))
        deeper = self._apply_bn_act(f"s{i}.down2_bn", self._apply_conv(f"s{i}.down2", deeper))
        if i < c.depth - 1:
            deeper = self._scale(i + 1, deeper)
        deeper = upsample_nearest(deeper, 2)
        if c.channels_skip[i]:
            skip = self._apply_bn_act(f"s{i}.skip_bn", self._apply_conv(f"s{i}.skip", x))
            merged = concat([skip, deeper], axis=1)
        else:
            merged = deeper
        y = self._apply_bn_act(f"s{i}.merge_bn", merged, act=False)
        y = self._apply_bn_act(f"s{i}.up_bn", self._apply_conv(f"s{i}.up", y))
        if c.need_1x1_up:
            y = self._apply_bn_act(f"s{i}.up1x1_bn", self._apply_conv(f"s{i}.up1x1", y))
        return y

    def __call__(self, z: Tensor) -> Tensor:
        if z.data.ndim == 3:
            z = Tensor(z.data[None], dtype=self.dtype)
        if z.shape[1] != self.config.input_channels:
            raise ConfigurationError(
                f"latent has {z.shape[1]} channels, network expects {self.config.input_channels}"
            )
        self.config.check_spatial(z.shape[2], z.shape[3])
        y = self._scale(0, z)
        return sigmoid(self._apply_conv("out", y))


def build_network(config: NetworkConfig, seed: int = 0, dtype=np.float32) -> SkipNetwork:
    return SkipNetwork(config, seed=seed, dtype=dtype)


@dataclass
class LatentInput:
    """Fixed network input ``base`` (D x H x W) and the std of its per-step jitter."""

    base: np.ndarray
    sigma_p: float = DEFAULT_PERTURBATION
    seed: Optional[int] = None

    @property
    def shape(self):
        return self.base.shape


def sample_latent(depth: int, height: int, width: int, seed: int = 0,
                  sigma_p: float = DEFAULT_PERTURBATION, dtype=np.float32) -> LatentInput:
    if min(depth, height, width) < 1:
        raise ConfigurationError(f"latent dims must be positive, got {depth}x{height}x{width}")
    if sigma_p < 0:
        raise ConfigurationError("perturbation std must be >= 0")
    rng = np.random.default_rng(seed)
    base = rng.random((depth, height, width)).astype(dtype)
    base.flags.writeable = False
    return LatentInput(base=base, sigma_p=float(sigma_p), seed=seed)


def perturb_latent(latent: LatentInput, rng: np.random.Generator) -> Tensor:
    """Return ``base + N(0, sigma_p^2)`` as a 1 x D x H x W tensor; ``base`` is untouched."""
    base = latent.base
    if latent.sigma_p == 0:
        return Tensor(base[None].copy())
    noise = rng.standard_normal(base.shape, dtype=base.dtype)
    return Tensor((base + noise * base.dtype.type(latent.sigma_p))[None])
