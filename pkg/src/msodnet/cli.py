"""Command-line interface: ``msodnet <command> [options]``.

Exit codes: 0 success, 1 invalid input or failed check, 2 runtime abort.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import checkpoint, config as cfgmod
from .ablation import PRESETS, format_report as format_ablation, run_ablation, write_report as write_ablation
from .datakit import NetpbmError, SceneError, curate, generate_dataset, load_sample, read_image, read_index, write_image
from .datakit.index import DatasetIndex, IndexRecord, write_histogram, write_index
from .datakit.netpbm import from_unit
from .gradcheck import OPS, format_results, run_suite
from .metrics import evaluate_dataset, format_report, write_report
from .model import STRIDE, infer, init_params
from .training import DivergenceError, load_samples, train, write_loss_log

logger = logging.getLogger("msodnet")

EXIT_OK, EXIT_INVALID, EXIT_ABORT = 0, 1, 2


class UsageError(Exception):
    pass


def sidecar(ckpt) -> Path:
    """Config file stored next to a checkpoint."""
    return Path(f"{ckpt}.cfg")


def resolve_config(args, base: cfgmod.RunConfig | None = None) -> cfgmod.RunConfig:
    cfg = base or cfgmod.RunConfig()
    if args.config:
        cfg = cfgmod.load(args.config, cfg)
    cfg = cfg.with_pairs(args.set or [])
    logger.info("resolved config:\n%s", cfg.to_text().rstrip())
    return cfg


def _index(path) -> DatasetIndex:
    try:
        return read_index(path)
    except (OSError, ValueError) as exc:
        raise UsageError(str(exc)) from None


# ---------------------------------------------------------------- commands


def cmd_gen(args) -> int:
    cfg = resolve_config(args)
    size = (cfg.image_size, cfg.image_size)
    try:
        index = generate_dataset(args.out_dir, cfg.n_scenes, cfg.seed, size, cfg.min_objects, cfg.max_objects)
    except OSError as exc:
        raise UsageError(f"cannot write dataset: {exc}") from None
    except SceneError as exc:
        raise UsageError(f"{exc}; lower max_objects or raise image_size") from None
    print(f"wrote {len(index)} scenes to {args.out_dir}")
    return EXIT_OK


def _relocate(index: DatasetIndex, new_root: Path) -> DatasetIndex:
    records = []
    for r in index:
        rel = [os.path.relpath(index.path(p), new_root) for p in (r.image, r.mask, r.edge)]
        records.append(IndexRecord(*rel, r.count))
    return DatasetIndex(records, new_root)


def cmd_curate(args) -> int:
    cfg = resolve_config(args)
    index = _index(args.index)
    result = curate(index, args.min_objects, cfg.connectivity, cfg.min_area)
    out = Path(args.out) if args.out else Path(args.index).parent / "curated.tsv"
    hist = Path(args.histogram) if args.histogram else out.with_name(out.stem + "_histogram.tsv")
    kept = _relocate(result.index, out.parent.resolve()) if out.parent.resolve() != index.root.resolve() else result.index
    write_index(out, kept)
    write_histogram(hist, result.histogram)
    for rel, reason in result.skipped:
        print(f"skipped {rel}: {reason}", file=sys.stderr)
    print(f"kept {len(kept)} of {len(index)} scenes with >= {args.min_objects} objects -> {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    index = _index(args.index)
    if not len(index):
        raise UsageError("training index is empty")
    model_cfg = cfg.model_config()
    params = init_params(model_cfg, cfg.seed)
    log_path = args.log or f"{args.checkpoint}.loss.tsv"

    def report(step, loss, lr):
        if step % 25 == 0 or step == cfg.steps - 1:
            logger.info("step %d loss %.5f lr %.2e", step, loss, lr)

    try:
        result = train(index, model_cfg, cfg.train_config(), params=params, callback=report)
    except DivergenceError as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT
    checkpoint.save(args.checkpoint, result.params)
    sidecar(args.checkpoint).write_text(cfg.to_text(), encoding="utf-8")
    write_loss_log(log_path, result.history)
    print(f"saved {args.checkpoint} ({result.params.n_parameters()} parameters), loss log {log_path}")
    return EXIT_OK


def _load_model(args):
    base = None
    if sidecar(args.checkpoint).is_file():
        base = cfgmod.load(sidecar(args.checkpoint))
    cfg = resolve_config(args, base)
    model_cfg = cfg.model_config()
    try:
        params = checkpoint.load_into(args.checkpoint, init_params(model_cfg, 0))
    except (OSError, checkpoint.CheckpointError) as exc:
        raise UsageError(f"cannot load checkpoint: {exc}") from None
    return model_cfg, params


def cmd_predict(args) -> int:
    model_cfg, params = _load_model(args)
    inputs = sorted(p for p in Path(args.images).iterdir() if p.suffix in (".ppm", ".pgm"))
    if not inputs:
        raise UsageError(f"no .ppm/.pgm images in {args.images}")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    failed = 0
    for path in inputs:
        try:
            img = read_image(path)
            if img.ndim != 3:
                raise ValueError("expected an RGB (P6) image")
            h, w = img.shape[:2]
            if h % STRIDE or w % STRIDE:
                raise ValueError(f"size {w}x{h} is not divisible by {STRIDE}")
        except (OSError, NetpbmError, ValueError) as exc:
            print(f"{path.name}: {exc}", file=sys.stderr)
            failed += 1
            continue
        sal = infer(img.astype(np.float64) / 255.0, params, model_cfg)
        write_image(out_dir / f"{path.stem}.pgm", from_unit(sal))
    print(f"wrote {len(inputs) - failed} saliency maps to {out_dir}; {failed} failed")
    return EXIT_INVALID if failed else EXIT_OK


def cmd_eval(args) -> int:
    resolve_config(args)
    try:
        report = evaluate_dataset(args.preds, args.gts)
    except (OSError, NetpbmError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    if not report.images:
        raise UsageError("no prediction file matches a ground-truth file")
    write_report(report, args.out_dir)
    print(format_report(report), end="")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    cfg = resolve_config(args)
    ops = OPS
    if args.ops:
        unknown = set(args.ops) - OPS.keys()
        if unknown:
            raise UsageError(f"unknown ops {sorted(unknown)}; registered: {sorted(OPS)}")
        ops = {k: OPS[k] for k in args.ops}
    results = run_suite(cfg.seed, end_to_end=not args.ops_only, ops=ops)
    print(format_results(results))
    return EXIT_OK if all(r.passed for r in results) else EXIT_INVALID


def _test_set(index: DatasetIndex) -> list:
    return [(Path(r.image).stem, *load_sample(index, r)[:2]) for r in index]


def cmd_ablate(args) -> int:
    cfg = resolve_config(args)
    train_index, test_index = _index(args.train_index), _index(args.test_index)
    report = run_ablation(args.preset, load_samples(train_index), _test_set(test_index),
                          cfg.model_config(), cfg.train_config(), cfg.seeds,
                          progress=lambda r: logger.info("finished %s seed %d", r.variant, r.seed))
    text = format_ablation(report)
    print(text, end="")
    if args.out:
        write_ablation(report, args.out)
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="FILE", help="key=value config file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key (repeatable)")
    common.add_argument("-q", "--quiet", action="store_true", help="log warnings only")

    fmt = argparse.RawDescriptionHelpFormatter
    parser = argparse.ArgumentParser(prog="msodnet", description="Multi-object salient object detection toolkit.",
                                     epilog=cfgmod.help_text(), formatter_class=fmt)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help):
        p = sub.add_parser(name, parents=[common], help=help, description=help, epilog=cfgmod.help_text(),
                           formatter_class=fmt)
        p.set_defaults(func=func)
        return p

    p = add("gen", cmd_gen, "generate a synthetic multi-object dataset")
    p.add_argument("out_dir")

    p = add("curate", cmd_curate, "keep scenes with enough objects and write their count histogram")
    p.add_argument("index")
    p.add_argument("--min-objects", type=int, default=3)
    p.add_argument("--out", help="curated index path (default: curated.tsv beside the input)")
    p.add_argument("--histogram", help="histogram path (default: <out>_histogram.tsv)")

    p = add("train", cmd_train, "train a model and write a checkpoint")
    p.add_argument("index")
    p.add_argument("checkpoint")
    p.add_argument("--log", help="loss log path (default: <checkpoint>.loss.tsv)")

    p = add("predict", cmd_predict, "write a saliency PGM for every image in a directory")
    p.add_argument("checkpoint")
    p.add_argument("images")
    p.add_argument("out_dir")

    p = add("eval", cmd_eval, "score predicted PGMs against ground-truth masks")
    p.add_argument("preds")
    p.add_argument("gts")
    p.add_argument("out_dir")

    p = add("gradcheck", cmd_gradcheck, "finite-difference check of every differentiable op")
    p.add_argument("--ops", nargs="+", metavar="OP", help="check only these ops")
    p.add_argument("--ops-only", action="store_true", help="skip the end-to-end model check")

    p = add("ablate", cmd_ablate, "train and compare the variants of an ablation preset")
    p.add_argument("preset", choices=sorted(PRESETS))
    p.add_argument("train_index")
    p.add_argument("test_index")
    p.add_argument("--out", help="CSV report path")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr, force=True)
    try:
        return args.func(args)
    except (UsageError, cfgmod.ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except DivergenceError as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT


if __name__ == "__main__":
    sys.exit(main())
