import math

import numpy as np
import pytest

from lgest import tensor as T
from lgest.errors import DataError, FormatError, NumericError
from lgest.model import (
    LgestConfig,
    LgestModel,
    fit,
    lgest_loss,
    load_checkpoint,
    predict,
    save_checkpoint,
)
from lgest.rng import Rng
from lgest.tensor import Tape, Tensor


def tiny_cfg(**over):
    base = dict(
        in_channels=3, n_class=3, stem_channels=8, depth=1, fpn_levels=1,
        rmoe_experts=2, lges_experts=2, batch_size=6, epochs=2, lr=1e-3, seed=3,
    )
    base.update(over)
    return LgestConfig(**base)


def spot_data(n_per_class=4, side=5, seed=70):
    """Patches whose band-energy pattern identifies the class."""
    rng = Rng(seed)
    xs, ys = [], []
    for c in range(3):
        for _ in range(n_per_class):
            p = rng.uniform((3, side, side), 0.0, 0.2)
            p[c] += 1.0
            xs.append(p)
            ys.append(c)
    return Tensor(np.stack(xs)), np.array(ys, dtype=np.int64)


def test_loss_is_weighted_sum_of_branch_losses():
    rng = Rng(71)
    for lam, beta in [(1.0, 0.5), (2.0, 0.0), (0.25, 4.0)]:
        for _ in range(10):
            p_t = Tensor(rng.normal((6, 4)))
            p_k = Tensor(rng.normal((6, 4)))
            labels = (rng.u64(6) % 4).astype(np.int64)
            whole = lgest_loss(p_t, p_k, labels, lam, beta).item()
            a = T.cross_entropy(p_t, labels).item()
            b = T.cross_entropy(p_k, labels).item()
            assert whole == lam * a + beta * b  # identical op sequence


def test_uniform_logits_loss_oracle():
    p = Tensor(np.zeros((8, 4)))
    labels = np.arange(8, dtype=np.int64) % 4
    loss = lgest_loss(p, p, labels, 1.0, 0.5).item()
    assert abs(loss - 1.5 * math.log(4.0)) < 1e-12


def test_branch_weight_scales_gradient_exactly():
    rng = Rng(72)
    logits = rng.normal((5, 3))
    labels = np.array([0, 1, 2, 1, 0])
    grads = {}
    for lam in (1.0, 2.0):
        p_t = Tensor(logits.copy(), requires_grad=True)
        p_k = Tensor(rng.normal((5, 3)))
        with Tape() as tape:
            tape.backward(lgest_loss(p_t, p_k, labels, lam, 0.0))
        grads[lam] = p_t.grad
    assert np.array_equal(grads[2.0], grads[1.0] * 2.0)


def test_forward_shapes_and_finite():
    model = LgestModel(tiny_cfg())
    out = model.forward(Tensor(Rng(73).normal((4, 3, 5, 5))), train=True)
    assert out.p_t.shape == (4, 3) and out.p_k.shape == (4, 3)
    assert np.all(np.isfinite(out.p_t.data)) and np.all(np.isfinite(out.p_k.data))


def test_predict_chunking_is_invisible():
    model = LgestModel(tiny_cfg())
    x, _ = spot_data()
    model.forward(x, train=True)  # prime batch-norm running stats
    whole = predict(model, x, batch_size=1024)
    chunked = predict(model, x, batch_size=3)
    assert np.array_equal(whole, chunked)
    assert whole.dtype == np.int64
    assert np.all((whole >= 0) & (whole < 3))


def test_fit_is_deterministic():
    x, y = spot_data()
    runs = []
    for _ in range(2):
        cfg = tiny_cfg()
        model = LgestModel(cfg)
        report = fit(model, x, y, cfg)
        runs.append((report, [p.data.copy() for _, p in model.parameters()]))
    ra, rb = runs
    assert ra[0].losses == rb[0].losses
    assert ra[0].steps == rb[0].steps == 2 * 2  # ceil(12/6) batches x 2 epochs
    for pa, pb in zip(ra[1], rb[1]):
        assert pa.tobytes() == pb.tobytes()


def test_fit_zero_lr_keeps_parameters():
    cfg = tiny_cfg(lr=0.0, epochs=1)
    model = LgestModel(cfg)
    before = [p.data.copy() for _, p in model.parameters()]
    x, y = spot_data()
    fit(model, x, y, cfg)
    for old, (_, p) in zip(before, model.parameters()):
        assert old.tobytes() == p.data.tobytes()


def test_fit_zero_epochs_is_a_no_op():
    cfg = tiny_cfg(epochs=0)
    model = LgestModel(cfg)
    before = [p.data.copy() for _, p in model.parameters()]
    x, y = spot_data()
    report = fit(model, x, y, cfg)
    assert report.steps == 0 and report.losses == []
    for old, (_, p) in zip(before, model.parameters()):
        assert old.tobytes() == p.data.tobytes()


def test_fit_reduces_loss_on_separable_data():
    cfg = tiny_cfg(epochs=8, lr=5e-3)
    model = LgestModel(cfg)
    x, y = spot_data()
    report = fit(model, x, y, cfg)
    assert report.losses[-1] < report.losses[0]
    assert len(report.losses) == 8


def test_fit_input_validation():
    cfg = tiny_cfg()
    model = LgestModel(cfg)
    with pytest.raises(DataError):
        fit(model, Tensor(np.zeros((0, 3, 5, 5))), np.zeros(0, dtype=np.int64), cfg)
    with pytest.raises(DataError):
        bad = tiny_cfg(batch_size=0)
        fit(model, *spot_data(), bad)


def test_fit_flags_non_finite_loss():
    cfg = tiny_cfg(epochs=1)
    model = LgestModel(cfg)
    name, p = model.parameters()[0]
    p.data[0] = np.nan
    with pytest.raises(NumericError):
        fit(model, *spot_data(), cfg)


def test_checkpoint_round_trip_bitwise(tmp_path):
    cfg = tiny_cfg()
    model = LgestModel(cfg)
    # make running stats non-trivial before saving
    model.forward(Tensor(Rng(74).normal((4, 3, 5, 5))), train=True)
    path = str(tmp_path / "model.lgw")
    save_checkpoint(path, model.state_items())
    twin = LgestModel(tiny_cfg(seed=99))
    twin.load_state_items(load_checkpoint(path))
    for (na, a), (nb, b) in zip(model.state_items(), twin.state_items()):
        assert na == nb and a.tobytes() == b.tobytes()
    second = str(tmp_path / "again.lgw")
    save_checkpoint(second, twin.state_items())
    assert open(path, "rb").read() == open(second, "rb").read()


def test_checkpoint_bad_magic(tmp_path):
    path = str(tmp_path / "bad.lgw")
    with open(path, "wb") as fh:
        fh.write(b"NOPE" + b"\x00" * 16)
    with pytest.raises(FormatError):
        load_checkpoint(path)


def test_checkpoint_truncation_reports_offset(tmp_path):
    path = str(tmp_path / "model.lgw")
    save_checkpoint(path, [("w", np.arange(6, dtype=np.float64).reshape(2, 3))])
    blob = open(path, "rb").read()
    for cut in (5, 7, 9, len(blob) - 1):
        short = str(tmp_path / ("cut%d.lgw" % cut))
        with open(short, "wb") as fh:
            fh.write(blob[:cut])
        with pytest.raises(FormatError, match="byte"):
            load_checkpoint(short)


def test_load_rejects_wrong_name_set():
    model = LgestModel(tiny_cfg())
    items = [(n, a.copy()) for n, a in model.state_items()]
    with pytest.raises(FormatError):
        model.load_state_items(items[:-1])
    renamed = [("x." + n if i == 0 else n, a) for i, (n, a) in enumerate(items)]
    with pytest.raises(FormatError):
        model.load_state_items(renamed)


def test_load_rejects_wrong_shape():
    model = LgestModel(tiny_cfg())
    items = [(n, a.copy()) for n, a in model.state_items()]
    items[0] = (items[0][0], np.zeros((1, 1)))
    with pytest.raises(FormatError):
        model.load_state_items(items)


def test_scalar_entry_round_trip(tmp_path):
    path = str(tmp_path / "s.lgw")
    save_checkpoint(path, [("alpha", np.float64(2.5))])
    items = load_checkpoint(path)
    assert items[0][0] == "alpha"
    assert items[0][1].shape == () and items[0][1] == 2.5
