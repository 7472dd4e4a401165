"""Command-line entry point: ``pcmcd <stage> [--config PATH] [--set key=value] [--seed N]``.

Exit status is 0 on success, 1 on a usage error and 2 when a stage fails.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import autodiff as ad
from . import pipeline
from .codesign import track_condition
from .config import ConfigError, parse_assignment
from .geometry import soft_tokens
from .materials import default_dispersion
from .oracle import load_dataset
from .scenes import read_cube
from .sensing import metrics

STAGES = ("gen-dispersion", "gen-dataset", "gen-scenes", "train-surrogate", "train-inverse",
          "finetune-tandem", "codesign", "two-stage-eval", "eval", "cond-trace", "plot")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", default=None, help="config file, or 'default'")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="pcmcd", description="metasurface filter co-design pipeline")
    sub = parser.add_subparsers(dest="stage", required=True, parser_class=_Parser)
    for name in STAGES:
        p = sub.add_parser(name, parents=[common])
        if name == "gen-dispersion":
            p.add_argument("--out", default=None, help="CSV path (default: <out_dir>/dispersion.csv)")
        elif name == "codesign":
            p.add_argument("--freeze-shape", action="store_true", help="frozen-shape baseline")
        elif name == "eval":
            p.add_argument("--truth", required=True)
            p.add_argument("--recon", required=True)
        elif name == "cond-trace":
            p.add_argument("--run", default=None, help="co-design run directory")
        elif name == "plot":
            p.add_argument("--metrics", required=True)
            p.add_argument("--out", default=None)
    return parser


def _config(args):
    overrides = {}
    for item in args.set:
        try:
            key, value = parse_assignment(item)
        except ConfigError as exc:
            raise UsageError(str(exc)) from None
        overrides[key] = value
    try:
        return pipeline.load_config(args.config, overrides, args.seed)
    except ConfigError as exc:
        raise UsageError(str(exc)) from None


def _run(args) -> str:
    stage = args.stage
    if stage == "eval":
        return metrics(read_cube(args.truth), read_cube(args.recon)).csv()
    if stage == "plot":
        from .plotting import plot_metrics

        written = plot_metrics(args.metrics, args.out)
        return "plots=" + ",".join(str(p) for p in written)

    cfg = _config(args)
    if stage == "gen-dispersion":
        path = Path(args.out) if args.out else pipeline.out_dir(cfg) / "dispersion.csv"
        default_dispersion().to_csv(path)
        return f"dispersion={path}"
    if stage == "gen-dataset":
        target = pipeline.out_dir(cfg) / "dataset.txt"
        target.unlink(missing_ok=True)
        path = pipeline.ensure_dataset(cfg)
        return f"dataset={path}, " + pipeline.dataset_summary(load_dataset(path))
    if stage == "gen-scenes":
        train, val = pipeline.ensure_scenes(cfg)
        return f"scenes={pipeline.out_dir(cfg) / 'scenes'}, train={len(train)}, val={len(val)}"
    if stage == "train-surrogate":
        r = pipeline.stage_train_surrogate(cfg)
        return f"surrogate train_mse={r.final_train:.3g}, test_mse={r.final_test:.3g}"
    if stage == "train-inverse":
        r = pipeline.stage_train_inverse(cfg)
        return f"inverse train_loss={r.final_train:.3g}, test_loss={r.final_test:.3g}"
    if stage == "finetune-tandem":
        r = pipeline.stage_finetune_tandem(cfg)
        return f"tandem before={r.rows[0][1]:.3g}, after={r.final_train:.3g}, test={r.final_test:.3g}"
    if stage == "codesign":
        run, path = pipeline.stage_codesign(cfg, True if args.freeze_shape else None)
        s = run.summary()
        return (f"run={path}, psnr={s['psnr']:.3f}, sam={s['sam']:.4f}, mse={s['mse']:.4g}, "
                f"cond_min={s['cond_min']:.4g}@{s['cond_argmin']}")
    if stage == "two-stage-eval":
        report, path = pipeline.stage_two_stage(cfg)
        parts = [f"{r.case}@{r.snr:g}dB psnr={r.psnr:.3f}" for r in report.rows]
        return f"report={path / 'report.csv'}, " + ", ".join(parts)
    if stage == "cond-trace":
        path = Path(args.run) if args.run else pipeline.run_dir(cfg, "codesign")
        run = pipeline.load_run(path, cfg.seed)
        surrogate = pipeline.load_surrogate(cfg)
        with ad.no_grad():
            banks = [surrogate(soft_tokens(ad.Tensor(s.logits), ad.Tensor(s.vertices))).data
                     for s in run.shapes]
        trace = track_condition(banks)
        trace.write(path / "cond_trace.csv")
        return f"cond_trace={path / 'cond_trace.csv'}, min={trace.minimum:.4g}@{trace.argmin}"
    raise UsageError(f"unknown stage {stage!r}")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        print(_run(args))
        return 0
    except UsageError as exc:
        print(parser.format_usage().rstrip(), file=sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return 0 if exc.code in (0, None) else 1
    except Exception as exc:  # noqa: BLE001 - any stage failure maps to exit 2
        print(f"pcmcd {getattr(args, 'stage', '')}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
