"""Full classifier: autoencoder stem, attention pyramid, dual expert head.

Also home to the weighted two-branch loss, the deterministic training loop,
batched prediction, and the binary checkpoint format.

Checkpoint layout (magic "LGW1", little-endian): per entry a u16 name
length, the UTF-8 name, a u8 rank, rank u32 dims, then float64 values in
row-major order. Entries cover every parameter plus batch-norm running
statistics, so a reloaded model is bit-identical in both train and eval
behavior.
"""

from __future__ import annotations

import struct
import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .dsae import Dsae, DsaeConfig
from .errors import DataError, FormatError, NumericError
from .fpn import CiemFpn, FpnConfig, concat_width, tokenize
from .lges import Lges, LgesOutput
from .nn import Adam
from .rng import Rng
from .tensor import Tape, Tensor

CHECKPOINT_MAGIC = b"LGW1"


@dataclass
class LgestConfig:
    in_channels: int
    n_class: int
    stem_channels: int = 64
    depth: int = 2
    fpn_levels: int = 4
    rmoe_experts: int = 4
    lges_experts: int = 4
    lambda_: float = 1.0
    beta: float = 0.5
    lr: float = 1e-3
    batch_size: int = 100
    epochs: int = 100
    seed: int = 0


class LgestModel:
    def __init__(self, cfg: LgestConfig, rng: Rng | None = None):
        self.cfg = cfg
        rng = rng if rng is not None else Rng(cfg.seed)
        self.dsae = Dsae(
            rng, DsaeConfig(cfg.in_channels, cfg.stem_channels, cfg.depth), name="dsae"
        )
        self.fpn = CiemFpn(
            rng,
            FpnConfig(cfg.stem_channels, cfg.fpn_levels, cfg.rmoe_experts),
            name="fpn",
        )
        self.lges = Lges(
            rng,
            d_local=cfg.stem_channels,
            d_global=concat_width(self.fpn.cfg),
            n_class=cfg.n_class,
            n_experts=cfg.lges_experts,
            name="lges",
        )

    def forward(self, x: Tensor, train: bool) -> LgesOutput:
        ds = self.dsae.forward(x, train)
        pyramid = self.fpn(tokenize(ds.f_hat))
        f_pooled = T.tmean(ds.f, axis=(2, 3))
        return self.lges(f_pooled, pyramid.concat)

    def parameters(self):
        return self.dsae.parameters() + self.fpn.parameters() + self.lges.parameters()

    def state_items(self):
        """Ordered (name, array) pairs: parameters then batch-norm buffers."""
        items = [(name, p.data) for name, p in self.parameters()]
        items.extend(self.dsae.buffers())
        return items

    def load_state_items(self, items: list[tuple[str, np.ndarray]]) -> None:
        values = dict(items)
        if len(values) != len(items):
            raise FormatError("duplicate entry names in checkpoint")
        expected = [name for name, _ in self.state_items()]
        if set(values) != set(expected):
            missing = sorted(set(expected) - set(values))[:3]
            extra = sorted(set(values) - set(expected))[:3]
            raise FormatError(
                "checkpoint does not match model (missing %s, unexpected %s)" % (missing, extra)
            )
        for name, p in self.parameters():
            arr = values[name]
            if arr.shape != p.data.shape:
                raise FormatError(
                    "shape mismatch for %s: %s vs %s" % (name, arr.shape, p.data.shape)
                )
            p.data = arr.astype(np.float64).copy()
        for bn in self.dsae.batch_norms():
            bn.load_buffers(values)


def lgest_loss(p_t: Tensor, p_k: Tensor, labels: np.ndarray,
               lambda_: float = 1.0, beta: float = 0.5) -> Tensor:
    """lambda * CE(local logits) + beta * CE(global logits)."""
    return T.add(
        T.mul(T.cross_entropy(p_t, labels), lambda_),
        T.mul(T.cross_entropy(p_k, labels), beta),
    )


def predict(model: LgestModel, patches: Tensor, batch_size: int = 256) -> np.ndarray:
    """Class ids via argmax over the summed branch logits (ties: lower id)."""
    n = patches.shape[0]
    preds = np.empty(n, dtype=np.int64)
    for lo in range(0, n, batch_size):
        hi = min(lo + batch_size, n)
        out = model.forward(Tensor(patches.data[lo:hi]), train=False)
        preds[lo:hi] = np.argmax(out.p_t.data + out.p_k.data, axis=1)
    return preds


@dataclass
class TrainReport:
    losses: list[float] = field(default_factory=list)  # mean loss per epoch
    seconds: float = 0.0
    seed: int = 0
    steps: int = 0


def fit(model: LgestModel, patches: Tensor, labels: np.ndarray,
        cfg: LgestConfig, rng: Rng | None = None) -> TrainReport:
    """Adam training loop; batch order comes from the run's Rng stream."""
    n = patches.shape[0]
    if n == 0:
        raise DataError("empty training set")
    if cfg.batch_size < 1:
        raise DataError("batch_size must be >= 1")
    rng = rng if rng is not None else Rng(cfg.seed)
    params = [p for _, p in model.parameters()]
    opt = Adam(params, lr=cfg.lr)
    report = TrainReport(seed=cfg.seed)
    t0 = time.perf_counter()
    data = patches.data
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            xb = Tensor(data[idx])
            yb = labels[idx]
            opt.zero_grad()
            with Tape() as tape:
                out = model.forward(xb, train=True)
                loss = lgest_loss(out.p_t, out.p_k, yb, cfg.lambda_, cfg.beta)
            if not np.isfinite(loss.data):
                raise NumericError("training loss became non-finite")
            tape.backward(loss)
            opt.step()
            total += loss.item() * len(idx)
            report.steps += 1
        report.losses.append(total / n)
    report.seconds = time.perf_counter() - t0
    return report


# ---------------------------------------------------------------------------
# checkpoint io


def save_checkpoint(path: str, items: list[tuple[str, np.ndarray]]) -> None:
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        for name, arr in items:
            arr = np.asarray(arr, dtype=np.float64)
            nb = name.encode("utf-8")
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack("<%dI" % arr.ndim, *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path: str) -> list[tuple[str, np.ndarray]]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise FormatError("bad checkpoint magic at byte 0: %r" % blob[:4])
    items = []
    off = 4

    def take(n: int, what: str) -> bytes:
        nonlocal off
        if off + n > len(blob):
            raise FormatError(
                "truncated checkpoint: need %d bytes for %s at byte %d, have %d"
                % (n, what, off, len(blob) - off)
            )
        piece = blob[off : off + n]
        off += n
        return piece

    while off < len(blob):
        (name_len,) = struct.unpack("<H", take(2, "name length"))
        name = take(name_len, "name").decode("utf-8")
        (rank,) = struct.unpack("<B", take(1, "rank"))
        dims = struct.unpack("<%dI" % rank, take(4 * rank, "dims")) if rank else ()
        count = int(np.prod(dims, dtype=np.int64)) if rank else 1
        raw = take(8 * count, "values of %s" % name)
        arr = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(dims)
        items.append((name, arr))
    return items
