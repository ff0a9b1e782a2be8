"""Symmetric convolutional autoencoder over spectral patches.

A three-layer stem lifts the raw bands to a working width, the encoder
halves channels at each stage down to a bottleneck, and a mirrored decoder
doubles them back. Spatial size is preserved throughout (3x3 kernels,
stride 1, same padding), so the refined feature map lines up pixel-for-pixel
with the stem output. There is no reconstruction objective; the whole stack
trains from the classification loss downstream.

Convolutions feeding a batch norm carry no bias (the normalization would
cancel it), which also keeps every parameter on the gradient path.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import tensor as T
from .errors import ConfigError
from .nn import BatchNorm2d, Conv2d, ConvTranspose2d
from .rng import Rng
from .tensor import Tensor

LEAKY_SLOPE = 0.01


@dataclass
class DsaeConfig:
    in_channels: int
    stem_channels: int = 64
    depth: int = 2
    kernel_size: int = 3

    def validate(self) -> None:
        if self.in_channels < 1:
            raise ConfigError("in_channels must be >= 1")
        if self.depth < 1:
            raise ConfigError("depth must be >= 1, got %d" % self.depth)
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigError("kernel_size must be odd and positive")
        if self.stem_channels % (1 << self.depth) != 0 or self.stem_channels < (1 << self.depth):
            raise ConfigError(
                "stem_channels %d not divisible by 2^depth=%d"
                % (self.stem_channels, 1 << self.depth)
            )


def channel_schedule(cfg: DsaeConfig) -> list[int]:
    """Widths [C0, C0/2, ..., C0/2^depth] from stem to bottleneck."""
    cfg.validate()
    return [cfg.stem_channels >> i for i in range(cfg.depth + 1)]


@dataclass
class DsaeOutput:
    f: Tensor  # stem features, (N, C0, S, S)
    k: Tensor  # bottleneck, (N, C0/2^depth, S, S)
    f_hat: Tensor  # decoder output, same shape as f


class _ConvUnit:
    """conv -> batch norm -> leaky relu."""

    def __init__(self, rng: Rng, c_in: int, c_out: int, k: int, name: str, transposed: bool = False):
        pad = k // 2
        conv_cls = ConvTranspose2d if transposed else Conv2d
        self.conv = conv_cls(rng, c_in, c_out, k, 1, pad, bias=False, name=name + ".conv")
        self.bn = BatchNorm2d(c_out, name=name + ".bn")

    def __call__(self, x: Tensor, train: bool) -> Tensor:
        return T.leaky_relu(self.bn(self.conv(x), train), LEAKY_SLOPE)

    def parameters(self):
        return self.conv.parameters() + self.bn.parameters()

    def buffers(self):
        return self.bn.buffers()


class Dsae:
    def __init__(self, rng: Rng, cfg: DsaeConfig, name: str = "dsae"):
        cfg.validate()
        self.cfg = cfg
        k = cfg.kernel_size
        widths = channel_schedule(cfg)
        self.stem = [
            _ConvUnit(rng, cfg.in_channels, widths[0], k, name + ".stem0"),
            _ConvUnit(rng, widths[0], widths[0], k, name + ".stem1"),
            _ConvUnit(rng, widths[0], widths[0], k, name + ".stem2"),
        ]
        self.encoder = [
            _ConvUnit(rng, widths[i], widths[i + 1], 3, name + ".enc%d" % i)
            for i in range(cfg.depth)
        ]
        self.decoder = [
            _ConvUnit(rng, widths[i + 1], widths[i], 3, name + ".dec%d" % i, transposed=True)
            for i in reversed(range(cfg.depth))
        ]

    def forward(self, x: Tensor, train: bool) -> DsaeOutput:
        h = x
        for unit in self.stem:
            h = unit(h, train)
        f = h
        for unit in self.encoder:
            h = unit(h, train)
        k = h
        for unit in self.decoder:
            h = unit(h, train)
        return DsaeOutput(f=f, k=k, f_hat=h)

    def _units(self):
        return self.stem + self.encoder + self.decoder

    def parameters(self):
        out = []
        for unit in self._units():
            out.extend(unit.parameters())
        return out

    def buffers(self):
        out = []
        for unit in self._units():
            out.extend(unit.buffers())
        return out

    def batch_norms(self):
        return [unit.bn for unit in self._units()]
