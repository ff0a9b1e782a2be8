"""Central finite-difference verification of every backward rule.

Each check builds a scalar function of one tensor (or of a model's
parameters), compares the tape's analytic gradient against
(f(x + eps) - f(x - eps)) / (2 eps) entry by entry, and reports the largest
relative error |a - n| / max(1, |a|, |n|). The suite covers every
differentiable primitive plus a composed tiny model, and is what the
``gradcheck`` CLI command runs.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import NumericError
from .rng import Rng
from .tensor import Tape, Tensor


@dataclass
class CheckResult:
    name: str
    max_rel_err: float
    tol: float
    passed: bool
    seconds: float


def _strided_indices(n: int, limit) -> range | list:
    if limit is None or n <= limit:
        return range(n)
    return [(j * n) // limit for j in range(limit)]


def _rel_err(a: float, n: float) -> float:
    return abs(a - n) / max(1.0, abs(a), abs(n))


def grad_check(f, x: Tensor, eps: float = 1e-5, tol: float = 1e-5,
               max_entries=None, name: str = "check") -> CheckResult:
    """Verify d f(x) / dx for a scalar-valued f of one tensor."""
    t0 = time.perf_counter()
    probe = Tensor(x.data.copy(), requires_grad=True)
    with Tape() as tape:
        y = f(probe)
        tape.backward(y)
    analytic = probe.grad if probe.grad is not None else np.zeros_like(probe.data)
    analytic = analytic.reshape(-1)

    base = probe.data  # perturbed in place; forward passes below see the edit
    flat = base.reshape(-1)
    worst = 0.0
    for i in _strided_indices(flat.size, max_entries):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(probe).item()
        flat[i] = orig - eps
        fm = f(probe).item()
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError("non-finite evaluation while probing %s" % name)
        worst = max(worst, _rel_err(analytic[i], (fp - fm) / (2.0 * eps)))
    dt = time.perf_counter() - t0
    return CheckResult(name, worst, tol, worst < tol, dt)


def grad_check_params(build_loss, named_params, eps: float = 1e-5, tol: float = 1e-4,
                      max_entries=None, name: str = "composite") -> CheckResult:
    """Verify gradients of a scalar loss with respect to a set of parameters.

    build_loss must rerun the full forward pass on fixed data so that
    perturbing a parameter in place changes the returned loss.
    """
    t0 = time.perf_counter()
    with Tape() as tape:
        loss = build_loss()
        tape.backward(loss)
    analytic = {
        n: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for n, p in named_params
    }
    for _, p in named_params:
        p.grad = None

    worst = 0.0
    for n, p in named_params:
        flat = p.data.reshape(-1)
        a = analytic[n].reshape(-1)
        for i in _strided_indices(flat.size, max_entries):
            orig = flat[i]
            flat[i] = orig + eps
            fp = build_loss().item()
            flat[i] = orig - eps
            fm = build_loss().item()
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NumericError("non-finite evaluation while probing %s[%d]" % (n, i))
            worst = max(worst, _rel_err(a[i], (fp - fm) / (2.0 * eps)))
    dt = time.perf_counter() - t0
    return CheckResult(name, worst, tol, worst < tol, dt)


def _away_from_zero(arr: np.ndarray, margin: float = 0.1) -> np.ndarray:
    """Shift values out of (-margin, margin) so kinked ops stay smooth under probing."""
    return arr + np.where(arr >= 0.0, margin, -margin)


def run_primitive_checks(eps: float = 1e-5, tol: float = 1e-5) -> list[CheckResult]:
    rng = Rng(2024)
    a = rng.normal((3, 4))
    b = rng.normal((3, 4))
    bp = _away_from_zero(rng.normal((3, 4)), 0.3)
    m1 = rng.normal((3, 5))
    m2 = rng.normal((5, 4))
    mb = rng.normal((2, 3, 5))
    relu_in = _away_from_zero(rng.normal((4, 6)))
    pos = rng.uniform((3, 4), 0.5, 2.0)
    sm_in = rng.normal((4, 5))
    sm_w = rng.normal((4, 5))
    ce_logits = rng.normal((6, 4))
    ce_labels = np.array([0, 1, 2, 3, 1, 0])
    cx = rng.normal((2, 3, 6, 6))
    cx7 = rng.normal((2, 3, 7, 7))
    cw = rng.normal((4, 3, 3, 3), sigma=0.5)
    cb = rng.normal((4,))
    dx = rng.normal((2, 3, 4, 4))
    dw = rng.normal((3, 4, 3, 3), sigma=0.5)
    db = rng.normal((4,))
    ln_in = rng.normal((4, 6))
    ln_g = rng.uniform((6,), 0.5, 1.5)
    ln_b = rng.normal((6,))
    bn_in = rng.normal((3, 2, 4, 4))
    bn_g = rng.uniform((2,), 0.5, 1.5)
    bn_b = rng.normal((2,))

    def bn_train(x):
        out, _, _, _ = T.batch_norm(
            x, Tensor(bn_g), Tensor(bn_b), np.zeros(2), np.ones(2), 0, train=True
        )
        return out

    checks = [
        ("add", lambda x: (x + Tensor(b)).sum(), a),
        ("sub", lambda x: (x - Tensor(b)).sum(), a),
        ("mul", lambda x: (x * Tensor(b)).sum(), a),
        ("div", lambda x: (x / Tensor(bp)).sum(), a),
        ("div_denominator", lambda x: (Tensor(a) / x).sum(), bp),
        ("neg", lambda x: (-x).sum(), a),
        ("matmul_lhs", lambda x: (x @ Tensor(m2)).sum(), m1),
        ("matmul_rhs", lambda x: (Tensor(m1) @ x).sum(), m2),
        ("matmul_batched", lambda x: (Tensor(mb) @ x).sum(), m2.copy()),
        ("sum_axis", lambda x: (x.sum(axis=0) * Tensor(b[0])).sum(), a),
        ("mean_axes", lambda x: (x.mean(axis=(0, 1)) * 3.0).sum(), a),
        ("reshape", lambda x: (x.reshape((4, 3)) * 2.0).sum(), a),
        ("transpose", lambda x: (x.transpose((1, 0)) @ Tensor(m1)).sum(), m1.copy()),
        ("concat", lambda x: T.concat([x, Tensor(b)], axis=1).sum(), a),
        ("narrow", lambda x: (T.narrow(x, 1, 1, 2) * 5.0).sum(), a),
        ("sqrt", lambda x: T.sqrt(x).sum(), pos),
        ("leaky_relu", lambda x: T.leaky_relu(x).sum(), relu_in),
        ("softmax", lambda x: (T.softmax(x, axis=-1) * Tensor(sm_w)).sum(), sm_in),
        ("cross_entropy", lambda x: T.cross_entropy(x, ce_labels), ce_logits),
        ("conv2d_input", lambda x: (T.conv2d(x, Tensor(cw), Tensor(cb), 1, 1) * 0.1).sum(), cx),
        ("conv2d_weight", lambda x: (T.conv2d(Tensor(cx), x, Tensor(cb), 1, 1) * 0.1).sum(), cw),
        ("conv2d_bias", lambda x: (T.conv2d(Tensor(cx), Tensor(cw), x, 1, 1) * 0.1).sum(), cb),
        ("conv2d_strided", lambda x: (T.conv2d(x, Tensor(cw), None, 2, 1) * 0.1).sum(), cx7),
        ("deconv2d_input", lambda x: (T.deconv2d(x, Tensor(dw), Tensor(db), 2, 1) * 0.1).sum(), dx),
        ("deconv2d_weight", lambda x: (T.deconv2d(Tensor(dx), x, Tensor(db), 2, 1) * 0.1).sum(), dw),
        ("deconv2d_bias", lambda x: (T.deconv2d(Tensor(dx), Tensor(dw), x, 2, 1) * 0.1).sum(), db),
        ("layer_norm_input", lambda x: (T.layer_norm(x, Tensor(ln_g), Tensor(ln_b)) * 0.5).sum(), ln_in),
        ("layer_norm_gamma", lambda x: (T.layer_norm(Tensor(ln_in), x, Tensor(ln_b)) * 0.5).sum(), ln_g),
        ("batch_norm_input", lambda x: (bn_train(x) * 0.5).sum(), bn_in),
        ("batch_norm_gamma", lambda x: (bn_train(Tensor(bn_in)) * x.reshape((1, 2, 1, 1))).sum(), bn_g.copy()),
    ]

    results = []
    for cname, f, x0 in checks:
        results.append(grad_check(f, Tensor(x0), eps=eps, tol=tol, name=cname))
    return results


def build_tiny_model(seed: int = 11):
    """Tiny assembled model used by the composite check: 5x5 patches, 3 bands,
    8 stem channels, pyramid depth 1, 2 experts everywhere, 3 classes."""
    from .model import LgestConfig, LgestModel

    cfg = LgestConfig(
        in_channels=3,
        n_class=3,
        stem_channels=8,
        depth=1,
        fpn_levels=1,
        rmoe_experts=2,
        lges_experts=2,
        seed=seed,
    )
    return LgestModel(cfg)


def run_composite_check(eps: float = 1e-5, tol: float = 1e-4,
                        max_entries: int = 12) -> CheckResult:
    from .model import lgest_loss

    model = build_tiny_model()
    data_rng = Rng(404)
    x = Tensor(data_rng.normal((3, 3, 5, 5), sigma=0.8))
    labels = np.array([0, 1, 2])

    def build_loss():
        out = model.forward(x, train=True)
        return lgest_loss(out.p_t, out.p_k, labels, 1.0, 0.5)

    return grad_check_params(
        build_loss,
        model.parameters(),
        eps=eps,
        tol=tol,
        max_entries=max_entries,
        name="composite_model",
    )


def run_all(eps: float = 1e-5) -> list[CheckResult]:
    results = run_primitive_checks(eps=eps)
    results.append(run_composite_check(eps=eps))
    return results
