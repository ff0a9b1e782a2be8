import numpy as np
import pytest

from lgest.errors import ConfigError
from lgest.lges import ExpertGroup, ExpertGroupConfig, Lges
from lgest.nn import Linear
from lgest.rng import Rng
from lgest.tensor import Tensor


def test_single_expert_is_plain_linear():
    for m in (0, 1):
        group = ExpertGroup(Rng(50), ExpertGroupConfig(5, 3, n_experts=m))
        twin = Linear(Rng(50), 5, 3)
        x = Tensor(Rng(51).normal((4, 5)))
        logits, dec = group(x)
        assert logits.data.tobytes() == twin(x).data.tobytes()
        assert np.array_equal(dec.weights, np.ones((4, 1)))
        assert np.array_equal(dec.indices, np.zeros((4, 1)))
        assert group.gate is None


def test_two_experts_with_forced_equal_gate():
    group = ExpertGroup(Rng(52), ExpertGroupConfig(3, 4, n_experts=2))
    group.gate.w.data[:] = 0.0
    group.gate.b.data[:] = 0.0
    x = Tensor(Rng(53).normal((5, 3)))
    logits, dec = group(x)
    e0 = x.data @ group.experts[0].w.data + group.experts[0].b.data
    e1 = x.data @ group.experts[1].w.data + group.experts[1].b.data
    assert np.max(np.abs(logits.data - 0.5 * (e0 + e1))) < 1e-15
    assert np.array_equal(dec.indices, np.tile([0, 1], (5, 1)))


def test_frozen_mixture_oracle():
    # gate logits fixed to [ln 6, ln 3, ln 1]: softmax = [0.6, 0.3, 0.1],
    # top-2 keeps experts 0 and 1 with their raw weights
    group = ExpertGroup(Rng(54), ExpertGroupConfig(2, 2, n_experts=3))
    group.gate.w.data[:] = 0.0
    group.gate.b.data[:] = np.log([6.0, 3.0, 1.0])
    for i, e in enumerate(group.experts):
        e.w.data[:] = 0.0
        e.b.data[:] = float(i + 1)  # expert i emits constant i+1
    logits, dec = group(Tensor(np.zeros((1, 2))))
    assert np.max(np.abs(logits.data - (0.6 * 1.0 + 0.3 * 2.0))) < 1e-12
    assert dec.indices.tolist() == [[0, 1]]
    assert np.max(np.abs(dec.weights - [0.6, 0.3, 0.0])) < 1e-12


def test_selection_sparsity_counts():
    for m in (2, 4, 8):
        group = ExpertGroup(Rng(55), ExpertGroupConfig(6, 3, n_experts=m))
        x = Tensor(Rng(56).normal((32, 6)))
        _, dec = group(x)
        assert dec.weights.shape == (32, m)
        assert np.all((dec.weights != 0).sum(axis=-1) == min(2, m))


def test_head_branches_are_independent():
    head = Lges(Rng(57), d_local=4, d_global=6, n_class=3, n_experts=2)
    rng = Rng(58)
    f, p = Tensor(rng.normal((3, 4))), Tensor(rng.normal((3, 6)))
    base = head(f, p)
    # perturbing the global input must leave the local logits untouched
    p2 = Tensor(p.data + 1.0)
    moved = head(f, p2)
    assert moved.p_t.data.tobytes() == base.p_t.data.tobytes()
    assert not np.array_equal(moved.p_k.data, base.p_k.data)


def test_head_output_shapes_and_decisions():
    head = Lges(Rng(59), d_local=5, d_global=9, n_class=4, n_experts=4)
    out = head(Tensor(Rng(60).normal((7, 5))), Tensor(Rng(61).normal((7, 9))))
    assert out.p_t.shape == (7, 4) and out.p_k.shape == (7, 4)
    assert out.gate_local.indices.shape == (7, 2)
    assert out.gate_global.weights.shape == (7, 4)


def test_config_rejections():
    with pytest.raises(ConfigError):
        ExpertGroupConfig(0, 3).validate()
    with pytest.raises(ConfigError):
        ExpertGroupConfig(4, 1).validate()
    with pytest.raises(ConfigError):
        ExpertGroupConfig(4, 3, n_experts=-1).validate()
