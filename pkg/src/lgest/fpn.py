"""Two-branch cross-attention feature pyramid.

The refined autoencoder map is flattened to a token stack (one token per
pixel, channels last) and fed through `levels` pyramid stages. Each stage
holds two attention blocks:

  parallel branch  keeps the base width C and queries with its own stream;
  down branch      halves width at every level (C/2, C/4, ...), querying
                   with the previous down output against the parallel one.

Level 1 is seeded with the token stack itself: the parallel block runs
self-attention on it, and the first down block queries the stack against
that parallel output. The pyramid's summary vector mean-pools the final
parallel output and every down output over tokens and concatenates them,
giving width C + sum_i C/2^i.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import tensor as T
from .ciem import CiemBlock, CiemConfig
from .errors import ConfigError, DimensionError
from .rng import Rng
from .tensor import Tensor


@dataclass
class FpnConfig:
    base_channels: int
    levels: int = 4
    n_experts: int = 4

    def validate(self) -> None:
        if self.levels < 1:
            raise ConfigError("levels must be >= 1")
        if self.base_channels % (1 << self.levels) != 0 or self.base_channels < (1 << self.levels):
            raise ConfigError(
                "base_channels %d not divisible by 2^levels=%d"
                % (self.base_channels, 1 << self.levels)
            )


def down_widths(cfg: FpnConfig) -> list[int]:
    """Down-branch output widths [C/2, C/4, ..., C/2^levels]."""
    cfg.validate()
    return [cfg.base_channels >> i for i in range(1, cfg.levels + 1)]


def concat_width(cfg: FpnConfig) -> int:
    return cfg.base_channels + sum(down_widths(cfg))


def tokenize(f_map: Tensor) -> Tensor:
    """(N, C, H, W) feature map -> (N, H*W, C) token stack."""
    if f_map.ndim != 4:
        raise DimensionError("tokenize expects an NCHW map")
    n, c, h, w = f_map.shape
    return T.reshape(T.transpose(f_map, (0, 2, 3, 1)), (n, h * w, c))


def detokenize(tokens: Tensor, h: int, w: int) -> Tensor:
    """Inverse of tokenize for an h*w token stack."""
    n, d, c = tokens.shape
    if d != h * w:
        raise DimensionError("token count %d does not match %dx%d" % (d, h, w))
    return T.transpose(T.reshape(tokens, (n, h, w, c)), (0, 3, 1, 2))


@dataclass
class PyramidOutput:
    parallel: list[Tensor]  # per level, width C
    down: list[Tensor]  # per level, width C/2^i
    concat: Tensor  # (N, C + sum C/2^i)


def pool_and_concat(parallel_top: Tensor, down: list[Tensor]) -> Tensor:
    """Mean over tokens, then concatenate along channels."""
    pooled = [T.tmean(parallel_top, axis=1)]
    pooled.extend(T.tmean(d, axis=1) for d in down)
    return T.concat(pooled, axis=-1)


class CiemFpn:
    def __init__(self, rng: Rng, cfg: FpnConfig, name: str = "fpn"):
        cfg.validate()
        self.cfg = cfg
        c = cfg.base_channels
        widths = down_widths(cfg)
        self.parallel_blocks = []
        self.down_blocks = []
        for i in range(1, cfg.levels + 1):
            # Parallel stage i queries the previous parallel stream (width C)
            # against the previous down stream; at i=1 both are the tokens.
            kv_par = c if i == 1 else widths[i - 2]
            self.parallel_blocks.append(
                CiemBlock(
                    rng,
                    CiemConfig(d_q=c, d_kv=kv_par, d_out=c, n_experts=cfg.n_experts),
                    name="%s.m%d" % (name, i),
                )
            )
            # Down stage i queries the previous down stream against the
            # fresh parallel output and narrows to C/2^i.
            q_down = c if i == 1 else widths[i - 2]
            kv_down = c
            self.down_blocks.append(
                CiemBlock(
                    rng,
                    CiemConfig(d_q=q_down, d_kv=kv_down, d_out=widths[i - 1], n_experts=cfg.n_experts),
                    name="%s.d%d" % (name, i),
                )
            )

    def forward(self, tokens: Tensor) -> PyramidOutput:
        if tokens.ndim != 3 or tokens.shape[2] != self.cfg.base_channels:
            raise DimensionError(
                "expected (N, D, %d) tokens, got %s" % (self.cfg.base_channels, (tokens.shape,))
            )
        parallel: list[Tensor] = []
        down: list[Tensor] = []
        for i in range(self.cfg.levels):
            if i == 0:
                p = self.parallel_blocks[0](tokens, tokens, tokens)
                d = self.down_blocks[0](tokens, p, p)
            else:
                p = self.parallel_blocks[i](parallel[i - 1], down[i - 1], down[i - 1])
                d = self.down_blocks[i](down[i - 1], parallel[i - 1], parallel[i - 1])
            parallel.append(p)
            down.append(d)
        return PyramidOutput(
            parallel=parallel, down=down, concat=pool_and_concat(parallel[-1], down)
        )

    __call__ = forward

    def blocks(self):
        out = []
        for i in range(self.cfg.levels):
            out.append(self.parallel_blocks[i])
            out.append(self.down_blocks[i])
        return out

    def parameters(self):
        out = []
        for block in self.blocks():
            out.extend(block.parameters())
        return out
