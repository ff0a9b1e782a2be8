"""Cross-attention block with a sparse residual expert mixture.

The block layer-normalizes its three token streams, projects them to an
attention width, runs scaled dot-product cross-attention (self-attention
when all three streams are the same tensor), adds the raw query stream back
as a residual, and refines the result with a top-2 routed mixture of linear
experts that is itself residual.

Routing is hard top-2: the gate softmax is computed over all experts, the
two largest entries keep their values (no renormalization), the rest are
zeroed. Ties pick the lower expert index. The selection mask is treated as
a constant in the backward pass, so gradients flow only through selected
experts and their gate weights.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import sqrt

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .nn import LayerNorm, Linear, _weight
from .rng import Rng
from .tensor import Tensor


@dataclass
class CiemConfig:
    d_q: int
    d_kv: int
    d_out: int
    n_experts: int
    d_attn: int | None = None  # defaults to d_out

    def validate(self) -> None:
        if min(self.d_q, self.d_kv, self.d_out) < 1:
            raise ConfigError("token widths must be >= 1")
        if self.n_experts < 2:
            raise ConfigError("expert mixture needs n_experts >= 2, got %d" % self.n_experts)
        if self.d_attn is not None and self.d_attn != self.d_out:
            # The attention output joins a residual sum at d_out width.
            raise ConfigError("d_attn must equal d_out, got %d vs %d" % (self.d_attn, self.d_out))

    @property
    def attn_width(self) -> int:
        return self.d_out if self.d_attn is None else self.d_attn


@dataclass
class GateDecision:
    """Detached routing record: masked softmax weights and the selected ids."""

    weights: np.ndarray  # (..., n_experts), exactly two nonzero per row
    indices: np.ndarray  # (..., 2), selected expert ids, larger weight first


def top2_gate(x: Tensor, w_g: Tensor, b_g: Tensor | None = None):
    """Gate logits x @ w_g (+ b_g) -> masked softmax weights.

    Returns (weights tensor for the mixture, GateDecision). The mask is a
    constant multiplier, so unselected experts receive exactly zero weight
    and no gradient.
    """
    if w_g.shape[-1] < 2:
        raise ConfigError("top2_gate needs at least 2 experts")
    logits = T.matmul(x, w_g)
    if b_g is not None:
        logits = T.add(logits, b_g)
    probs = T.softmax(logits, axis=-1)
    # Stable argsort on the negated values: ties resolve to the lower index.
    order = np.argsort(-probs.data, axis=-1, kind="stable")
    top2 = order[..., :2]
    mask = np.zeros_like(probs.data)
    np.put_along_axis(mask, top2, 1.0, axis=-1)
    masked = T.mul(probs, Tensor(mask))
    return masked, GateDecision(weights=masked.data.copy(), indices=top2.copy())


def mix_experts(weights: Tensor, expert_outputs: list[Tensor]) -> Tensor:
    """Sum_i weights[..., i] * expert_outputs[i], accumulated in index order."""
    out = None
    for i, e in enumerate(expert_outputs):
        w_i = T.narrow(weights, -1, i, 1)
        term = T.mul(w_i, e)
        out = term if out is None else T.add(out, term)
    return out


class Rmoe:
    """Residual mixture of square linear experts, gated per token."""

    def __init__(self, rng: Rng, d: int, n_experts: int, name: str = "rmoe"):
        if n_experts < 2:
            raise ConfigError("Rmoe needs n_experts >= 2")
        self.name = name
        self.w_gate = _weight(rng, (d, n_experts), d)
        self.experts = [_weight(rng, (d, d), d) for _ in range(n_experts)]
        self.last_decision: GateDecision | None = None

    def forward(self, x: Tensor) -> Tensor:
        weights, decision = top2_gate(x, self.w_gate)
        self.last_decision = decision
        outs = [T.matmul(x, w) for w in self.experts]
        return T.add(mix_experts(weights, outs), x)

    __call__ = forward

    def parameters(self):
        out = [(self.name + ".gate.w", self.w_gate)]
        out.extend((self.name + ".expert%d.w" % i, w) for i, w in enumerate(self.experts))
        return out


class CiemBlock:
    """LayerNorm -> Q/K/V projection -> cross-attention -> +Q -> Rmoe."""

    def __init__(self, rng: Rng, cfg: CiemConfig, name: str = "ciem"):
        cfg.validate()
        self.cfg = cfg
        self.name = name
        d_attn = cfg.attn_width
        self.ln_q = LayerNorm(cfg.d_q, name=name + ".ln_q")
        self.ln_k = LayerNorm(cfg.d_kv, name=name + ".ln_k")
        self.ln_v = LayerNorm(cfg.d_kv, name=name + ".ln_v")
        self.w_q = _weight(rng, (cfg.d_q, d_attn), cfg.d_q)
        self.w_k = _weight(rng, (cfg.d_kv, d_attn), cfg.d_kv)
        self.w_v = _weight(rng, (cfg.d_kv, d_attn), cfg.d_kv)
        # When the block changes width, the residual is carried through a
        # learned projection; otherwise the raw query stream is added as is.
        self.w_res = (
            _weight(rng, (cfg.d_q, cfg.d_out), cfg.d_q) if cfg.d_out != cfg.d_q else None
        )
        self.rmoe = Rmoe(rng, cfg.d_out, cfg.n_experts, name=name + ".rmoe")
        self.scale = 1.0 / sqrt(float(d_attn))

    def attend(self, q_in: Tensor, k_in: Tensor, v_in: Tensor) -> Tensor:
        """Scaled dot-product cross-attention over (N, D, d) token stacks."""
        fq = T.matmul(self.ln_q(q_in), self.w_q)
        fk = T.matmul(self.ln_k(k_in), self.w_k)
        fv = T.matmul(self.ln_v(v_in), self.w_v)
        scores = T.mul(T.matmul(fq, T.transpose(fk, (0, 2, 1))), self.scale)
        attn = T.softmax(scores, axis=-1)
        return T.matmul(attn, fv)

    def forward(self, q_in: Tensor, k_in: Tensor, v_in: Tensor) -> Tensor:
        ca = self.attend(q_in, k_in, v_in)
        res = q_in if self.w_res is None else T.matmul(q_in, self.w_res)
        return self.rmoe(T.add(ca, res))

    __call__ = forward

    def parameters(self):
        out = []
        out.extend(self.ln_q.parameters())
        out.extend(self.ln_k.parameters())
        out.extend(self.ln_v.parameters())
        out.append((self.name + ".w_q", self.w_q))
        out.append((self.name + ".w_k", self.w_k))
        out.append((self.name + ".w_v", self.w_v))
        if self.w_res is not None:
            out.append((self.name + ".w_res", self.w_res))
        out.extend(self.rmoe.parameters())
        return out
