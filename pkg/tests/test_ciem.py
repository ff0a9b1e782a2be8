import numpy as np
import pytest

from lgest import tensor as T
from lgest.ciem import CiemBlock, CiemConfig, Rmoe, mix_experts, top2_gate
from lgest.errors import ConfigError
from lgest.gradcheck import grad_check_params
from lgest.rng import Rng
from lgest.tensor import Tape, Tensor

SIG1 = 0.7310585786300049  # 1 / (1 + e^-1)


def _softmax_np(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def test_gate_two_expert_softmax_oracle():
    x = Tensor(np.array([[1.0]]))
    w = Tensor(np.array([[2.0, 1.0]]))
    weights, dec = top2_gate(x, w)
    assert np.max(np.abs(weights.data - [SIG1, 1.0 - SIG1])) < 1e-15
    assert dec.indices.tolist() == [[0, 1]]


def test_gate_keeps_two_largest_without_renormalizing():
    rng = Rng(11)
    x = rng.normal((16, 5))
    w = rng.normal((5, 8))
    weights, dec = top2_gate(Tensor(x), Tensor(w))
    probs = _softmax_np(x @ w)
    for r in range(16):
        row = weights.data[r]
        nz = np.flatnonzero(row)
        assert nz.size == 2
        top = np.sort(probs[r])[-2:]
        assert np.allclose(np.sort(row[nz]), top, rtol=0, atol=1e-12)
        # masked weights are the raw softmax values, sum strictly below one
        assert row.sum() < 1.0


def test_gate_tie_takes_lower_indices():
    weights, dec = top2_gate(Tensor(np.zeros((3, 4))), Tensor(np.zeros((4, 6))))
    assert np.array_equal(dec.indices, np.tile([0, 1], (3, 1)))
    expect = np.zeros((3, 6))
    expect[:, :2] = 1.0 / 6.0
    assert np.max(np.abs(weights.data - expect)) < 1e-15


def test_gate_orders_larger_weight_first():
    rng = Rng(12)
    weights, dec = top2_gate(Tensor(rng.normal((32, 4))), Tensor(rng.normal((4, 7))))
    first = np.take_along_axis(weights.data, dec.indices[:, :1], axis=-1)
    second = np.take_along_axis(weights.data, dec.indices[:, 1:], axis=-1)
    assert np.all(first >= second)
    assert np.all(second > 0)


def test_gate_needs_two_experts():
    with pytest.raises(ConfigError):
        top2_gate(Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 1))))


def test_mix_experts_matches_manual_sum():
    rng = Rng(13)
    w = Tensor(rng.uniform((4, 5, 3)))
    outs = [Tensor(rng.normal((4, 5, 2))) for _ in range(3)]
    got = mix_experts(w, outs)
    want = sum(w.data[..., i : i + 1] * outs[i].data for i in range(3))
    assert np.max(np.abs(got.data - want)) < 1e-15


def test_rmoe_zero_experts_is_identity():
    rmoe = Rmoe(Rng(14), d=4, n_experts=3)
    for e in rmoe.experts:
        e.data[:] = 0.0
    x = Rng(15).normal((2, 6, 4))
    out = rmoe(Tensor(x))
    assert np.array_equal(out.data, x)


def test_rmoe_unselected_expert_is_bitwise_inert():
    rmoe = Rmoe(Rng(16), d=3, n_experts=6)
    x = Tensor(Rng(17).normal((1, 2, 3)))
    base = rmoe(x).data.tobytes()
    chosen = set(rmoe.last_decision.indices.ravel().tolist())
    idle = next(i for i in range(6) if i not in chosen)
    rmoe.experts[idle].data += 3.5
    assert rmoe(x).data.tobytes() == base


def test_rmoe_gradient_skips_unselected_experts():
    rmoe = Rmoe(Rng(18), d=3, n_experts=6)
    x = Tensor(Rng(19).normal((1, 1, 3)))
    with Tape() as tape:
        out = rmoe(x)
        tape.backward(out.sum())
    chosen = set(rmoe.last_decision.indices.ravel().tolist())
    assert len(chosen) == 2
    for i, e in enumerate(rmoe.experts):
        assert e.grad is not None
        if i in chosen:
            assert np.abs(e.grad).max() > 0
        else:
            assert np.all(e.grad == 0.0)


def test_block_zero_query_projection_averages_values():
    cfg = CiemConfig(d_q=4, d_kv=4, d_out=4, n_experts=2)
    block = CiemBlock(Rng(20), cfg)
    block.w_q.data[:] = 0.0
    rng = Rng(21)
    q, kv = Tensor(rng.normal((2, 5, 4))), Tensor(rng.normal((2, 7, 4)))
    ca = block.attend(q, kv, kv)
    fv = T.matmul(block.ln_v(kv), block.w_v).data
    want = np.broadcast_to(fv.mean(axis=1, keepdims=True), ca.shape)
    assert np.max(np.abs(ca.data - want)) < 1e-12


def test_block_single_kv_token_copies_value():
    cfg = CiemConfig(d_q=3, d_kv=5, d_out=3, n_experts=2)
    block = CiemBlock(Rng(22), cfg)
    rng = Rng(23)
    q, kv = Tensor(rng.normal((2, 4, 3))), Tensor(rng.normal((2, 1, 5)))
    ca = block.attend(q, kv, kv)
    fv = T.matmul(block.ln_v(kv), block.w_v).data
    want = np.broadcast_to(fv, ca.shape)
    assert np.max(np.abs(ca.data - want)) < 1e-12


def test_block_width_change_uses_residual_projection():
    narrow = CiemBlock(Rng(24), CiemConfig(d_q=6, d_kv=4, d_out=3, n_experts=2))
    assert narrow.w_res is not None and narrow.w_res.shape == (6, 3)
    same = CiemBlock(Rng(25), CiemConfig(d_q=4, d_kv=4, d_out=4, n_experts=2))
    assert same.w_res is None
    rng = Rng(26)
    out = narrow(Tensor(rng.normal((2, 5, 6))), Tensor(rng.normal((2, 3, 4))),
                 Tensor(rng.normal((2, 3, 4))))
    assert out.shape == (2, 5, 3)


def test_block_config_validation():
    with pytest.raises(ConfigError):
        CiemConfig(4, 4, 4, n_experts=1).validate()
    with pytest.raises(ConfigError):
        CiemConfig(4, 4, 4, n_experts=2, d_attn=8).validate()
    with pytest.raises(ConfigError):
        CiemConfig(0, 4, 4, n_experts=2).validate()


def test_block_gradients_check_out():
    # two experts means top-2 selects both: the routing surface is smooth
    block = CiemBlock(Rng(27), CiemConfig(d_q=3, d_kv=4, d_out=3, n_experts=2))
    rng = Rng(28)
    q = Tensor(rng.normal((2, 3, 3)))
    kv = Tensor(rng.normal((2, 2, 4)))

    def build_loss():
        return block(q, kv, kv).sum()

    res = grad_check_params(build_loss, block.parameters(), max_entries=6, name="ciem")
    assert res.passed, "max rel err %.3e" % res.max_rel_err


def test_decision_weights_are_detached_copies():
    rmoe = Rmoe(Rng(29), d=3, n_experts=4)
    x = Tensor(Rng(30).normal((2, 2, 3)))
    rmoe(x)
    dec = rmoe.last_decision
    saved = dec.weights.copy()
    dec.weights[:] = -1.0
    assert np.array_equal(rmoe(x).data, rmoe(x).data)  # model state untouched
    assert not np.array_equal(saved, dec.weights)
