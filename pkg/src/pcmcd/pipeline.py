"""Stage functions shared by the CLI and the acceptance suite.

Every stage reads its inputs from the run directory and writes its outputs
there; a missing input is rebuilt from the configuration, so any stage can be
started on its own.
"""

from __future__ import annotations

import csv
import logging
from pathlib import Path

import numpy as np

from . import config as config_mod
from .codesign import (CodesignRun, EpochRow, TwoStageReport, initial_shape, joint_optimize,
                       two_stage_eval)
from .config import ConfigError, RunConfig
from .decoder import DecoderModel
from .geometry import ShapeParams
from .materials import BAND, N_CHANNELS, N_LEVELS, MaterialDispersion, default_dispersion
from .nn import load_checkpoint, save_checkpoint
from .oracle import Dataset, StackSpec, generate_dataset, load_dataset
from .scenes import SceneSpec, generate_scene, read_cube, write_cube
from .surrogate import (Filter2ShapeModel, SurrogateModel, TrainingReport, finetune_tandem,
                        train_filter2shape, train_surrogate)

log = logging.getLogger(__name__)


def check_grid(cfg: RunConfig) -> None:
    g = cfg.grid
    if (g.wl_min, g.wl_max, g.channels, g.levels) != (BAND[0], BAND[1], N_CHANNELS, N_LEVELS):
        raise ConfigError("only the built-in 1.0-2.5 um, 100-channel, 11-level grid is supported")


def out_dir(cfg: RunConfig) -> Path:
    path = Path(cfg.out_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_snapshot(cfg: RunConfig, run_dir) -> Path:
    path = Path(run_dir) / "config.snapshot"
    path.write_text(cfg.dumps())
    return path


def stack_spec(cfg: RunConfig) -> StackSpec:
    s = cfg.stack
    return StackSpec(s.thickness, s.substrate_n, s.superstrate_n, s.period)


def dispersion(cfg: RunConfig) -> MaterialDispersion:
    if cfg.data.dispersion:
        return MaterialDispersion.from_csv(cfg.data.dispersion)
    return default_dispersion()


def scene_spec(cfg: RunConfig, seed: int) -> SceneSpec:
    s = cfg.scenes
    return SceneSpec(H=s.H, W=s.W, endmembers=s.endmembers, smoothness=s.smoothness, seed=seed)


# ---------------------------------------------------------------------------
# data stages


def ensure_dataset(cfg: RunConfig) -> Path:
    path = out_dir(cfg) / "dataset.txt"
    if not path.exists():
        check_grid(cfg)
        generate_dataset(cfg.data.count, cfg.data.seed, path, stack_spec(cfg), dispersion(cfg))
    return path


def ensure_scenes(cfg: RunConfig) -> tuple[list, list]:
    """Training and held-out cubes, written as HSC1 files on first use."""
    root = out_dir(cfg) / "scenes"
    root.mkdir(exist_ok=True)
    sets = []
    for name, count, seed in (("train", cfg.scenes.count, cfg.scenes.seed),
                              ("val", cfg.scenes.val_count, cfg.scenes.val_seed)):
        cubes = []
        for i in range(count):
            path = root / f"{name}_{i}.hsc"
            if not path.exists():
                write_cube(generate_scene(scene_spec(cfg, seed), i), path)
            cubes.append(read_cube(path))
        sets.append(cubes)
    return sets[0], sets[1]


# ---------------------------------------------------------------------------
# model stages


def new_surrogate(cfg: RunConfig) -> SurrogateModel:
    s = cfg.surrogate
    return SurrogateModel(d=s.d, heads=s.heads, blocks=s.blocks, hidden=s.hidden, seed=s.seed)


def new_inverse(cfg: RunConfig) -> Filter2ShapeModel:
    return Filter2ShapeModel(hidden=cfg.inverse.hidden, seed=cfg.inverse.seed)


def new_decoder(cfg: RunConfig, seed: int) -> DecoderModel:
    d = cfg.decoder
    return DecoderModel(features=d.features, patch=d.patch, blocks=d.blocks, seed=seed)


def stage_train_surrogate(cfg: RunConfig) -> TrainingReport:
    data = load_dataset(ensure_dataset(cfg))
    model = new_surrogate(cfg)
    s = cfg.surrogate
    report = train_surrogate(model, data, s.epochs, s.batch, s.lr, s.seed,
                             report_path=out_dir(cfg) / "surrogate.csv")
    save_checkpoint(model.state_dict(), out_dir(cfg) / "surrogate.ckpt")
    return report


def load_surrogate(cfg: RunConfig) -> SurrogateModel:
    path = out_dir(cfg) / "surrogate.ckpt"
    if not path.exists():
        stage_train_surrogate(cfg)
    model = new_surrogate(cfg)
    model.load_state_dict(load_checkpoint(path))
    return model.freeze()


def stage_train_inverse(cfg: RunConfig) -> TrainingReport:
    data = load_dataset(ensure_dataset(cfg))
    surrogate = load_surrogate(cfg)
    inverse = new_inverse(cfg)
    i = cfg.inverse
    report = train_filter2shape(inverse, data, i.epochs, i.batch, i.lr, i.seed, surrogate,
                                report_path=out_dir(cfg) / "inverse.csv")
    save_checkpoint(inverse.state_dict(), out_dir(cfg) / "inverse.ckpt")
    return report


def stage_finetune_tandem(cfg: RunConfig) -> TrainingReport:
    data = load_dataset(ensure_dataset(cfg))
    surrogate = load_surrogate(cfg)
    path = out_dir(cfg) / "inverse.ckpt"
    if not path.exists():
        stage_train_inverse(cfg)
    inverse = new_inverse(cfg)
    inverse.load_state_dict(load_checkpoint(path))
    i = cfg.inverse
    report = finetune_tandem(inverse, surrogate, data, i.tandem_epochs, i.batch, i.tandem_lr, i.seed,
                             report_path=out_dir(cfg) / "tandem.csv")
    save_checkpoint(inverse.state_dict(), out_dir(cfg) / "inverse_tandem.ckpt")
    return report


def load_inverse(cfg: RunConfig) -> Filter2ShapeModel:
    path = out_dir(cfg) / "inverse_tandem.ckpt"
    if not path.exists():
        stage_finetune_tandem(cfg)
    model = new_inverse(cfg)
    model.load_state_dict(load_checkpoint(path))
    return model.freeze()


# ---------------------------------------------------------------------------
# co-design stages


def run_dir(cfg: RunConfig, name: str) -> Path:
    path = out_dir(cfg) / f"{name}_seed{cfg.seed}"
    path.mkdir(parents=True, exist_ok=True)
    return path


def stage_codesign(cfg: RunConfig, freeze_shape: bool | None = None) -> tuple[CodesignRun, Path]:
    """Joint optimisation (or, with ``freeze_shape``, the frozen-shape baseline)."""
    check_grid(cfg)
    if freeze_shape is not None:
        cfg = cfg.with_overrides({"codesign.freeze_shape": freeze_shape})
    surrogate, inverse = load_surrogate(cfg), load_inverse(cfg)
    train, val = ensure_scenes(cfg)
    shape0 = initial_shape(cfg.seed, cfg.codesign.init_logits)
    run = joint_optimize(shape0, new_decoder(cfg, cfg.seed), surrogate, inverse, train, val,
                         cfg.codesign, cfg.seed, cfg.digest())
    path = run_dir(cfg, "baseline" if cfg.codesign.freeze_shape else "codesign")
    write_snapshot(cfg, path)
    run.write(path)
    return run, path


def load_run(path, seed: int = 0) -> CodesignRun:
    """Rebuild the pieces of a run needed for two-stage evaluation."""
    path = Path(path)
    run = CodesignRun(seed=seed)
    with open(path / "metrics.csv") as fh:
        for rec in csv.DictReader(fh):
            run.rows.append(EpochRow(int(rec["epoch"]), *(float(rec[k]) for k in
                                                          ("loss", "psnr", "sam", "mse", "cond"))))
    run.initial_shape = ShapeParams.from_json((path / "shapes" / "initial.json").read_text())
    for row in run.rows:
        run.shapes.append(ShapeParams.from_json((path / "shapes" / f"epoch_{row.epoch}.json").read_text()))
    return run


def stage_two_stage(cfg: RunConfig, run: CodesignRun | None = None) -> tuple[TwoStageReport, Path]:
    path = run_dir(cfg, "codesign")
    if run is None:
        if not (path / "metrics.csv").exists():
            run, path = stage_codesign(cfg)
        else:
            run = load_run(path, cfg.seed)
    train, val = ensure_scenes(cfg)
    report = two_stage_eval(run, load_surrogate(cfg), train, val, cfg.codesign,
                            lambda: new_decoder(cfg, cfg.seed), dispersion(cfg), stack_spec(cfg),
                            cfg.seed)
    report.write(path / "report.csv")
    return report, path


def load_config(path=None, overrides: dict | None = None, seed: int | None = None) -> RunConfig:
    cfg = config_mod.load(path) if path is not None else RunConfig()
    items = dict(overrides or {})
    if seed is not None:
        items["seed"] = seed
    return cfg.with_overrides(items) if items else cfg


def dataset_summary(ds: Dataset) -> str:
    return f"records={len(ds)}, bank_min={np.min(ds.banks):.4f}, bank_max={np.max(ds.banks):.4f}"
