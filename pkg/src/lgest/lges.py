"""Dual expert-group classifier head.

Two independent groups of linear experts produce the final logits: a local
group reads the spatially pooled stem features, a global group reads the
pyramid summary vector. Each group routes per sample through the same hard
top-2 gate used inside the attention blocks (same softmax-and-mask rule, but
with a gate bias, expert biases, and no residual link). A group configured
with zero or one expert degrades to a plain linear classifier.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .ciem import GateDecision, mix_experts, top2_gate
from .errors import ConfigError
from .nn import Linear
from .rng import Rng
from .tensor import Tensor


@dataclass
class ExpertGroupConfig:
    d_in: int
    n_class: int
    n_experts: int = 4

    def validate(self) -> None:
        if self.d_in < 1 or self.n_class < 2:
            raise ConfigError("need d_in >= 1 and n_class >= 2")
        if self.n_experts < 0:
            raise ConfigError("n_experts must be >= 0")


class ExpertGroup:
    def __init__(self, rng: Rng, cfg: ExpertGroupConfig, name: str = "group"):
        cfg.validate()
        self.cfg = cfg
        self.name = name
        if cfg.n_experts <= 1:
            self.experts = [Linear(rng, cfg.d_in, cfg.n_class, name=name + ".expert0")]
            self.gate = None
        else:
            self.experts = [
                Linear(rng, cfg.d_in, cfg.n_class, name=name + ".expert%d" % i)
                for i in range(cfg.n_experts)
            ]
            self.gate = Linear(rng, cfg.d_in, cfg.n_experts, name=name + ".gate")

    def forward(self, x: Tensor):
        """x (N, d_in) -> (logits (N, n_class), GateDecision)."""
        if self.gate is None:
            n = x.shape[0]
            decision = GateDecision(
                weights=np.ones((n, 1)), indices=np.zeros((n, 1), dtype=np.int64)
            )
            return self.experts[0](x), decision
        weights, decision = top2_gate(x, self.gate.w, self.gate.b)
        outs = [expert(x) for expert in self.experts]
        return mix_experts(weights, outs), decision

    __call__ = forward

    def parameters(self):
        out = []
        for expert in self.experts:
            out.extend(expert.parameters())
        if self.gate is not None:
            out.extend(self.gate.parameters())
        return out


@dataclass
class LgesOutput:
    p_t: Tensor  # local-group logits (N, n_class)
    p_k: Tensor  # global-group logits (N, n_class)
    gate_local: GateDecision
    gate_global: GateDecision


class Lges:
    """local group over pooled stem features, global group over the pyramid vector."""

    def __init__(self, rng: Rng, d_local: int, d_global: int, n_class: int,
                 n_experts: int = 4, name: str = "lges"):
        self.local = ExpertGroup(
            rng, ExpertGroupConfig(d_local, n_class, n_experts), name=name + ".local"
        )
        self.group_global = ExpertGroup(
            rng, ExpertGroupConfig(d_global, n_class, n_experts), name=name + ".global"
        )

    def forward(self, f_pooled: Tensor, p_vec: Tensor) -> LgesOutput:
        p_t, g_local = self.local(f_pooled)
        p_k, g_global = self.group_global(p_vec)
        return LgesOutput(p_t=p_t, p_k=p_k, gate_local=g_local, gate_global=g_global)

    __call__ = forward

    def parameters(self):
        return self.local.parameters() + self.group_global.parameters()
