"""Joint shape + decoder optimisation, the fixed-filter baseline, the
two-stage oracle re-evaluation, and condition-number tracking."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .config import CodesignConfig
from .decoder import DecoderModel, decoder_forward
from .geometry import HALF_CELL, ShapeParams, sample_dataset_shape, soft_tokens
from .nn import save_checkpoint
from .oracle import DatasetError, shape_to_filterbank
from .sensing import condition_number, encode, metrics, add_noise
from .surrogate import Filter2ShapeModel, SurrogateModel, soft_project, surrogate_forward

log = logging.getLogger(__name__)

METRIC_FIELDS = ("epoch", "loss", "psnr", "sam", "mse", "cond")


class CodesignError(RuntimeError):
    pass


@dataclass(frozen=True)
class EpochRow:
    epoch: int
    loss: float
    psnr: float
    sam: float
    mse: float
    cond: float

    def csv_fields(self) -> list[str]:
        return [str(self.epoch)] + [repr(float(getattr(self, k))) for k in METRIC_FIELDS[1:]]


@dataclass
class CodesignRun:
    seed: int
    config_hash: str = ""
    rows: list = field(default_factory=list)
    shapes: list = field(default_factory=list)  # effective shape after each epoch
    banks: list = field(default_factory=list)  # Phi seen by the decoder after each epoch
    initial_shape: ShapeParams | None = None
    decoder: DecoderModel | None = None
    raw_shape: ShapeParams | None = None  # trainable parameters at the end

    @property
    def final_shape(self) -> ShapeParams:
        return self.shapes[-1]

    @property
    def final(self) -> EpochRow:
        return self.rows[-1]

    def summary(self) -> dict:
        trace = track_condition(self.banks)
        last = self.final
        return {"seed": self.seed, "epochs": len(self.rows), "psnr": last.psnr, "sam": last.sam,
                "mse": last.mse, "cond_min": trace.minimum, "cond_argmin": trace.argmin,
                "config": self.config_hash}

    def write_metrics(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(METRIC_FIELDS)
            for row in self.rows:
                w.writerow(row.csv_fields())

    def write(self, run_dir) -> Path:
        run_dir = Path(run_dir)
        (run_dir / "shapes").mkdir(parents=True, exist_ok=True)
        (run_dir / "checkpoints").mkdir(exist_ok=True)
        self.write_metrics(run_dir / "metrics.csv")
        for row, shape in zip(self.rows, self.shapes):
            (run_dir / "shapes" / f"epoch_{row.epoch}.json").write_text(shape.to_json() + "\n")
        if self.initial_shape is not None:
            (run_dir / "shapes" / "initial.json").write_text(self.initial_shape.to_json() + "\n")
        if self.decoder is not None:
            save_checkpoint(self.decoder.state_dict(), run_dir / "checkpoints" / "decoder.ckpt")
        if self.raw_shape is not None:
            save_checkpoint({"logits": self.raw_shape.logits, "vertices": self.raw_shape.vertices},
                            run_dir / "checkpoints" / "shape.ckpt")
        return run_dir


def initial_shape(seed: int, logits=(2.0, 1.0, 0.0)) -> ShapeParams:
    """Random four-vertex starting geometry with decreasing presence priors."""
    base = sample_dataset_shape(np.random.default_rng(np.random.SeedSequence([seed, 3])), 4)
    return ShapeParams(np.asarray(logits, dtype=float), base.vertices)


# ---------------------------------------------------------------------------
# shared training loop


def evaluate(decoder: DecoderModel, bank: np.ndarray, cubes, snr_db: float, seed: int):
    """Decode every cube at ``snr_db`` with a fixed noise draw; pooled metrics."""
    truth, recon = [], []
    with ad.no_grad():
        for k, cube in enumerate(cubes):
            rng = np.random.default_rng(np.random.SeedSequence([seed, 11, k]))
            meas = add_noise(encode(cube, bank), snr_db, rng)
            recon.append(decoder_forward(decoder, meas, clamp=True).data)
            truth.append(cube)
    return metrics(np.stack(truth), np.stack(recon))


def _batch(rng: np.random.Generator, cubes, batch: int, crop: int) -> np.ndarray:
    H, W = cubes[0].shape[:2]
    crop_h, crop_w = min(crop, H), min(crop, W)
    picks = rng.integers(len(cubes), size=batch)
    rows = rng.integers(0, H - crop_h + 1, size=batch)
    cols = rng.integers(0, W - crop_w + 1, size=batch)
    return np.stack([cubes[c][i:i + crop_h, j:j + crop_w] for c, i, j in zip(picks, rows, cols)])


def objective(decoder: DecoderModel, bank: ad.Tensor, x: np.ndarray, snr_db: float,
              noise: np.ndarray) -> ad.Tensor:
    """MSE between ``x`` and the decoded noisy measurement of ``x`` through ``bank``.

    ``noise`` is a unit normal draw of the measurement shape; it is scaled to
    ``snr_db`` against the noise-free measurement power (the scale is treated
    as a constant for differentiation).
    """
    y = ad.matmul(ad.Tensor(x), ad.transpose(bank, (1, 0)))
    if math.isinf(snr_db):
        noisy = y
    else:
        sigma = math.sqrt(float(np.mean(np.square(y.data))) / 10.0 ** (snr_db / 10.0))
        noisy = ad.add(y, ad.Tensor(sigma * noise))
    return ad.mse(decoder_forward(decoder, noisy), ad.Tensor(x))


def _optimize(decoder: DecoderModel, cubes, val_cubes, cfg: CodesignConfig, seed: int,
              bank_fn, shape_step=None, snapshot=None, run: CodesignRun | None = None) -> CodesignRun:
    """Loop shared by joint optimisation and fixed-filter training.

    ``bank_fn()`` returns the current Phi as a Tensor (in the graph when the
    shape trains).  ``shape_step`` applies the shape update after backward.
    The random stream is consumed identically whatever the mode.
    """
    if not cubes or not val_cubes:
        raise DatasetError("training and validation cube sets must be non-empty")
    run = run or CodesignRun(seed)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7]))
    opt = ad.Adam(decoder.parameters(), lr=cfg.lr_decoder)
    M = decoder.M
    for epoch in range(cfg.epochs):
        total = 0.0
        for step in range(cfg.steps):
            x = _batch(rng, cubes, cfg.batch, cfg.crop)
            u = rng.random()
            snr = cfg.snr_min if cfg.snr_max == cfg.snr_min else cfg.snr_min + u * (cfg.snr_max - cfg.snr_min)
            noise = rng.standard_normal(x.shape[:-1] + (M,))
            loss = objective(decoder, bank_fn(), x, snr, noise)
            value = loss.item()
            if not math.isfinite(value):
                raise CodesignError(
                    f"non-finite loss at epoch {epoch} step {step}; "
                    f"last finite epoch {epoch - 1 if epoch else 'none'}")
            ad.backward(loss)
            opt.step()
            if shape_step is not None:
                shape_step()
            total += value
        with ad.no_grad():
            bank = bank_fn().data.copy()
        m = evaluate(decoder, bank, val_cubes, cfg.val_snr, seed)
        row = EpochRow(epoch, total / cfg.steps, m.psnr, m.sam, m.mse, condition_number(bank))
        run.rows.append(row)
        run.banks.append(bank)
        if snapshot is not None:
            run.shapes.append(snapshot())
        log.info("epoch %d loss %.4g psnr %.2f cond %.3g", epoch, row.loss, row.psnr, row.cond)
    run.decoder = decoder
    return run


def train_decoder(decoder: DecoderModel, bank: np.ndarray, cubes, val_cubes,
                  cfg: CodesignConfig, seed: int = 0, shape: ShapeParams | None = None) -> CodesignRun:
    """Train the decoder against a fixed filter bank."""
    fixed = ad.Tensor(np.asarray(bank, dtype=float))
    snapshot = (lambda: shape.copy()) if shape is not None else None
    run = CodesignRun(seed, initial_shape=shape.copy() if shape is not None else None)
    return _optimize(decoder, cubes, val_cubes, cfg, seed, lambda: fixed, snapshot=snapshot, run=run)


def joint_optimize(shape0: ShapeParams, decoder: DecoderModel, surrogate: SurrogateModel,
                   inverse: Filter2ShapeModel, cubes, val_cubes, cfg: CodesignConfig,
                   seed: int = 0, config_hash: str = "") -> CodesignRun:
    """Co-optimise the meta-atom shape and the decoder.

    Each step maps the trainable shape through the inverse-surrogate cycle
    (when ``cfg.project``), predicts Phi with the frozen surrogate, and
    back-propagates the reconstruction loss into both parameter sets, each
    with its own Adam instance.  ``cfg.freeze_shape`` keeps the shape fixed,
    which reduces the run to ``train_decoder`` on the initial Phi.
    """
    for model in (surrogate, inverse):
        if any(p.requires_grad for p in model.parameters()):
            raise ad.ContractError("surrogate and inverse model must be frozen before co-design")
    logits = ad.parameter(shape0.logits.copy(), name="logits")
    verts = ad.parameter(shape0.vertices.copy(), name="vertices")

    def effective():
        if cfg.project:
            return soft_project(logits, verts, inverse, surrogate)
        return logits, verts

    def bank_fn():
        if cfg.freeze_shape:
            with ad.no_grad():
                return surrogate(soft_tokens(*effective()))
        return surrogate(soft_tokens(*effective()))

    def snapshot():
        with ad.no_grad():
            lg, vt = effective()
        return ShapeParams(lg.data.copy(), vt.data.copy())

    shape_opt = ad.Adam([logits, verts], lr=cfg.lr_shape)

    def shape_step():
        shape_opt.step()
        np.clip(verts.data, 0.0, HALF_CELL, out=verts.data)

    run = CodesignRun(seed, config_hash, initial_shape=snapshot())
    if cfg.freeze_shape:
        logits.requires_grad = verts.requires_grad = False
        step = None
    else:
        step = shape_step
    _optimize(decoder, cubes, val_cubes, cfg, seed, bank_fn, step, snapshot, run)
    run.raw_shape = ShapeParams(logits.data.copy(), verts.data.copy())
    return run


# ---------------------------------------------------------------------------
# two-stage evaluation


@dataclass(frozen=True)
class StageRow:
    case: str
    snr: float
    psnr: float
    sam: float
    mse: float
    surrogate_mse: float


@dataclass
class TwoStageReport:
    rows: list = field(default_factory=list)
    banks: dict = field(default_factory=dict)

    def get(self, case: str, snr: float) -> StageRow:
        for r in self.rows:
            if r.case == case and r.snr == snr:
                return r
        raise KeyError((case, snr))

    def write(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["case", "snr_db", "psnr", "sam", "mse", "surrogate_mse"])
            for r in self.rows:
                w.writerow([r.case, repr(r.snr), repr(r.psnr), repr(r.sam), repr(r.mse),
                            repr(r.surrogate_mse)])


def two_stage_eval(run: CodesignRun, surrogate: SurrogateModel, cubes, test_cubes,
                   cfg: CodesignConfig, decoder_factory, disp=None, stack=None,
                   seed: int = 0) -> TwoStageReport:
    """Re-simulate the initial and final shapes with the oracle and retrain a
    fresh decoder on each fixed bank with the same budget and seed."""
    if run.initial_shape is None or not run.shapes:
        raise CodesignError("run lacks initial or final shape")
    report = TwoStageReport()
    for case, shape in (("initial", run.initial_shape), ("optimized", run.final_shape)):
        bank = shape_to_filterbank(shape, disp, stack)
        with ad.no_grad():
            predicted = surrogate_forward(surrogate, shape).data
        s_mse = float(np.mean((predicted - bank) ** 2))
        trained = train_decoder(decoder_factory(), bank, cubes, test_cubes, cfg, seed)
        report.banks[case] = bank
        for snr in cfg.test_snrs:
            m = evaluate(trained.decoder, bank, test_cubes, snr, seed + 1)
            report.rows.append(StageRow(case, float(snr), m.psnr, m.sam, m.mse, s_mse))
    return report


# ---------------------------------------------------------------------------
# condition tracking


@dataclass(frozen=True)
class ConditionTrace:
    epochs: tuple
    values: tuple

    @property
    def minimum(self) -> float:
        return min(self.values)

    @property
    def argmin(self) -> int:
        return self.epochs[int(np.argmin(self.values))]

    @property
    def dips(self) -> bool:
        return self.minimum < self.values[0]

    def write(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "cond"])
            for e, c in zip(self.epochs, self.values):
                w.writerow([e, repr(c)])


def track_condition(banks) -> ConditionTrace:
    """Condition number of each bank in an epoch-ordered stream."""
    values = tuple(condition_number(b) for b in banks)
    return ConditionTrace(tuple(range(len(values))), values)
