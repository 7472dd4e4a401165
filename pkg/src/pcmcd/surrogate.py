"""Neural shape -> filter-bank simulator, the inverse filter -> shape network,
their training loops, and the differentiable shape projection cycle."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .geometry import N_VERTS, HALF_CELL, ShapeParams, presence_chain, soft_tokens
from .materials import N_CHANNELS, N_LEVELS
from .nn import LayerNorm, Linear, Module
from .oracle import Dataset, DatasetError, load_dataset

log = logging.getLogger(__name__)

PRESENCE_FLOOR = 1e-30


class SurrogateError(RuntimeError):
    pass


class Block(Module):
    """Pre-norm transformer block with presence-masked self-attention."""

    def __init__(self, rng, d: int, heads: int):
        self.heads = heads
        self.ln1 = LayerNorm(d)
        self.q = Linear(rng, d, d)
        self.k = Linear(rng, d, d)
        self.v = Linear(rng, d, d)
        self.o = Linear(rng, d, d)
        self.ln2 = LayerNorm(d)
        self.ff1 = Linear(rng, d, 4 * d)
        self.ff2 = Linear(rng, 4 * d, d)

    def _split(self, x):
        B, T, d = x.shape
        h = self.heads
        return ad.transpose(ad.reshape(x, (B, T, h, d // h)), (0, 2, 1, 3))

    def forward(self, x, bias):
        B, T, d = x.shape
        h = self.ln1(x)
        a = ad.attention(self._split(self.q(h)), self._split(self.k(h)), self._split(self.v(h)), bias)
        a = ad.reshape(ad.transpose(a, (0, 2, 1, 3)), (B, T, d))
        x = ad.add(x, self.o(a))
        h = self.ln2(x)
        return ad.add(x, self.ff2(ad.relu(self.ff1(h))))


class SurrogateModel(Module):
    """Vertex tokens (B, 4, 3) -> transmittance (B, M, N) in (0, 1).

    Token features are (presence, x, y).  Absent vertices are removed from
    attention through a log-presence key bias and from pooling through
    presence-weighted averaging.
    """

    def __init__(self, d: int = 64, heads: int = 4, blocks: int = 2, hidden: int = 256,
                 M: int = N_LEVELS, N: int = N_CHANNELS, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.M, self.N = M, N
        self.embed = Linear(rng, 3, d)
        self.pos = ad.parameter(rng.normal(0.0, 0.02, (N_VERTS, d)))
        self.blocks = [Block(rng, d, heads) for _ in range(blocks)]
        self.ln = LayerNorm(d)
        self.pool = Linear(rng, d, hidden)
        self.out = Linear(rng, hidden, M * N)

    def forward(self, tokens):
        tokens = ad.as_tensor(tokens)
        single = tokens.ndim == 2
        if single:
            tokens = ad.reshape(tokens, (1,) + tokens.shape)
        B = tokens.shape[0]
        presence = tokens[:, :, 0]
        # coordinates live in [0, 0.5]; rescale to unit range
        feats = ad.mul(tokens, ad.Tensor(np.array([1.0, 1.0 / HALF_CELL, 1.0 / HALF_CELL])))
        x = ad.add(self.embed(feats), self.pos)
        bias = ad.reshape(ad.log(ad.add(presence, PRESENCE_FLOOR)), (B, 1, 1, N_VERTS))
        for blk in self.blocks:
            x = blk(x, bias)
        w = ad.div(presence, ad.sum_(presence, axis=1, keepdims=True))
        pooled = ad.sum_(ad.mul(x, ad.reshape(w, (B, N_VERTS, 1))), axis=1)
        h = ad.relu(self.pool(self.ln(pooled)))
        y = ad.reshape(ad.sigmoid(self.out(h)), (B, self.M, self.N))
        return ad.reshape(y, y.shape[1:]) if single else y


class Filter2ShapeModel(Module):
    """Filter bank (B, M, N) -> presence logits (B, 3) and vertices (B, 4, 2)."""

    def __init__(self, hidden: int = 256, M: int = N_LEVELS, N: int = N_CHANNELS, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.M, self.N = M, N
        self.l1 = Linear(rng, M * N, hidden)
        self.l2 = Linear(rng, hidden, hidden)
        self.l3 = Linear(rng, hidden, hidden)
        self.head = Linear(rng, hidden, 3 + 2 * N_VERTS)

    def forward(self, bank):
        bank = ad.as_tensor(bank)
        single = bank.ndim == 2
        if single:
            bank = ad.reshape(bank, (1,) + bank.shape)
        B = bank.shape[0]
        x = ad.reshape(ad.sub(bank, 0.5), (B, self.M * self.N))
        x = ad.relu(self.l1(x))
        x = ad.relu(self.l2(x))
        x = ad.relu(self.l3(x))
        y = self.head(x)
        logits = y[:, :3]
        verts = ad.reshape(ad.mul(ad.sigmoid(y[:, 3:]), HALF_CELL), (B, N_VERTS, 2))
        if single:
            return ad.reshape(logits, (3,)), ad.reshape(verts, (N_VERTS, 2))
        return logits, verts


def surrogate_forward(model: SurrogateModel, shape) -> ad.Tensor:
    """Predicted (M, N) bank for a ShapeParams (hard tokens) or a token Tensor."""
    if isinstance(shape, ShapeParams):
        shape = ad.Tensor(shape.tokens())
    return model(shape)


def soft_project(logits: ad.Tensor, vertices: ad.Tensor, inverse: Filter2ShapeModel,
                 surrogate: SurrogateModel) -> tuple[ad.Tensor, ad.Tensor]:
    """Re-map a shape through the spectral domain: F2S(S2F(shape)), differentiably."""
    bank = surrogate(soft_tokens(logits, vertices))
    return inverse(bank)


def project_shape(shape: ShapeParams, inverse: Filter2ShapeModel,
                  surrogate: SurrogateModel) -> ShapeParams:
    with ad.no_grad():
        lg, vt = soft_project(ad.Tensor(shape.logits), ad.Tensor(shape.vertices), inverse, surrogate)
    return ShapeParams(lg.data, vt.data)


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainingReport:
    rows: list = field(default_factory=list)  # (epoch, train, test)
    extra: dict = field(default_factory=dict)

    @property
    def final_train(self) -> float:
        return self.rows[-1][1]

    @property
    def final_test(self) -> float:
        return self.rows[-1][2]

    def to_csv(self, path, header=("epoch", "train_mse", "test_mse")) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in self.rows:
                w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])


def _as_dataset(data) -> Dataset:
    if isinstance(data, Dataset):
        ds = data
    else:
        ds = load_dataset(data)
    if len(ds) == 0:
        raise DatasetError("dataset is empty")
    return ds


def _cosine_lr(base: float, epoch: int, epochs: int, floor: float = 0.05) -> float:
    return base * (floor + (1 - floor) * 0.5 * (1 + math.cos(math.pi * epoch / max(epochs, 1))))


def _batches(rng: np.random.Generator, idx: np.ndarray, batch: int):
    order = rng.permutation(idx)
    for s in range(0, len(order), batch):
        yield order[s:s + batch]


def _eval_in_chunks(fn, idx, chunk=256) -> float:
    if len(idx) == 0:
        return float("nan")
    total = 0.0
    with ad.no_grad():
        for s in range(0, len(idx), chunk):
            part = idx[s:s + chunk]
            total += fn(part) * len(part)
    return total / len(idx)


def train_surrogate(model: SurrogateModel, data, epochs: int = 300, batch: int = 32,
                    lr: float = 2e-3, seed: int = 0, report_path=None) -> TrainingReport:
    """Fit the surrogate by MSE against oracle banks on the 90 % training split."""
    ds = _as_dataset(data)
    tokens = ds.tokens()
    banks = ds.banks
    train_idx, test_idx = ds.split()
    rng = np.random.default_rng(seed)
    opt = ad.Adam(model.parameters(), lr=lr)
    report = TrainingReport()

    def loss_of(part):
        return ad.mse(model(ad.Tensor(tokens[part])), ad.Tensor(banks[part])).item()

    for epoch in range(epochs):
        opt.state.lr = _cosine_lr(lr, epoch, epochs)
        acc, seen = 0.0, 0
        for part in _batches(rng, train_idx, batch):
            loss = ad.mse(model(ad.Tensor(tokens[part])), ad.Tensor(banks[part]))
            ad.backward(loss)
            opt.step()
            acc += loss.item() * len(part)
            seen += len(part)
        test = _eval_in_chunks(loss_of, test_idx)
        report.rows.append((epoch, acc / seen, test))
        log.debug("surrogate epoch %d train %.3g test %.3g", epoch, acc / seen, test)
    if report_path is not None:
        report.to_csv(report_path)
    return report


def shape_targets(ds: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Presence indicators (R, 4) and zero-filled vertices (R, 4, 2)."""
    tok = ds.tokens()
    return tok[:, :, 0], tok[:, :, 1:]


def shape_loss(logits: ad.Tensor, verts: ad.Tensor, presence: np.ndarray,
               coords: np.ndarray) -> ad.Tensor:
    """Presence-chain MSE plus vertex MSE masked to present vertices.

    Both parts are normalised per record by the 3 presence terms + 8
    coordinates, so absent-vertex coordinate targets cannot affect the loss.
    """
    p = presence_chain(logits)
    pres_err = ad.sum_(ad.square(ad.sub(p[:, 1:], presence[:, 1:])))
    mask = presence[:, :, None]
    coord_err = ad.sum_(ad.mul(ad.square(ad.sub(verts, coords * mask)), mask))
    B = presence.shape[0]
    return ad.div(ad.add(pres_err, coord_err), float(B * (3 + 2 * N_VERTS)))


def train_filter2shape(inverse: Filter2ShapeModel, data, epochs: int = 200, batch: int = 32,
                       lr: float = 1e-3, seed: int = 0, surrogate: SurrogateModel | None = None,
                       report_path=None) -> TrainingReport:
    """Fit the inverse model on (bank -> shape) pairs.  With a surrogate, the
    round-trip spectral MSE on the training split is logged per epoch in
    ``report.extra['roundtrip']``."""
    ds = _as_dataset(data)
    banks = ds.banks
    presence, coords = shape_targets(ds)
    train_idx, test_idx = ds.split()
    rng = np.random.default_rng(seed)
    opt = ad.Adam(inverse.parameters(), lr=lr)
    report = TrainingReport()
    roundtrip = []

    def loss_of(part):
        lg, vt = inverse(ad.Tensor(banks[part]))
        return shape_loss(lg, vt, presence[part], coords[part]).item()

    def rt_of(part):
        lg, vt = inverse(ad.Tensor(banks[part]))
        return ad.mse(surrogate(soft_tokens(lg, vt)), ad.Tensor(banks[part])).item()

    for epoch in range(epochs):
        opt.state.lr = _cosine_lr(lr, epoch, epochs)
        acc, seen = 0.0, 0
        for part in _batches(rng, train_idx, batch):
            lg, vt = inverse(ad.Tensor(banks[part]))
            loss = shape_loss(lg, vt, presence[part], coords[part])
            ad.backward(loss)
            opt.step()
            acc += loss.item() * len(part)
            seen += len(part)
        report.rows.append((epoch, acc / seen, _eval_in_chunks(loss_of, test_idx)))
        if surrogate is not None:
            roundtrip.append(_eval_in_chunks(rt_of, train_idx))
    if roundtrip:
        report.extra["roundtrip"] = roundtrip
    if report_path is not None:
        report.to_csv(report_path)
    return report


def tandem_mse(inverse: Filter2ShapeModel, surrogate: SurrogateModel, banks: np.ndarray) -> float:
    def fn(part):
        lg, vt = inverse(ad.Tensor(banks[part]))
        return ad.mse(surrogate(soft_tokens(lg, vt)), ad.Tensor(banks[part])).item()

    return _eval_in_chunks(fn, np.arange(len(banks)))


def _check_frozen(surrogate: SurrogateModel) -> None:
    leaked = [n for n, p in surrogate.named_parameters() if p.requires_grad or p.grad is not None]
    if leaked:
        raise ad.ContractError(f"surrogate is not frozen: gradients reach {leaked[:3]}")


def finetune_tandem(inverse: Filter2ShapeModel, surrogate: SurrogateModel, data,
                    epochs: int = 100, batch: int = 32, lr: float = 5e-4, seed: int = 0,
                    report_path=None) -> TrainingReport:
    """Minimise MSE(S2F(F2S(bank)), bank) with the surrogate held fixed.

    The report's first row (epoch -1) holds the tandem MSE before fine-tuning.
    """
    _check_frozen(surrogate)
    ds = _as_dataset(data)
    banks = ds.banks
    train_idx, test_idx = ds.split()
    rng = np.random.default_rng(seed)
    opt = ad.Adam(inverse.parameters(), lr=lr)
    report = TrainingReport()
    report.rows.append((-1, tandem_mse(inverse, surrogate, banks[train_idx]),
                        tandem_mse(inverse, surrogate, banks[test_idx]) if len(test_idx) else float("nan")))
    for epoch in range(epochs):
        opt.state.lr = _cosine_lr(lr, epoch, epochs)
        acc, seen = 0.0, 0
        for part in _batches(rng, train_idx, batch):
            lg, vt = inverse(ad.Tensor(banks[part]))
            loss = ad.mse(surrogate(soft_tokens(lg, vt)), ad.Tensor(banks[part]))
            ad.backward(loss)
            _check_frozen(surrogate)
            opt.step()
            acc += loss.item() * len(part)
            seen += len(part)
        test = tandem_mse(inverse, surrogate, banks[test_idx]) if len(test_idx) else float("nan")
        report.rows.append((epoch, acc / seen, test))
    if report_path is not None:
        report.to_csv(report_path)
    return report
