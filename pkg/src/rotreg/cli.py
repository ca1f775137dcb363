"""Command line entry point: dataset generation, training, evaluation, and
report rendering, sharing one config schema with flag overrides."""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

from . import checkpoint as ckpt
from . import data
from . import evaluation as ev
from . import training
from .config import RunConfig, config_hash, load_config, parse_override
from .errors import CheckpointError, ConfigError, DataError, RotregError
from .model import dg_spec, init_model, pn_spec

FORMAT_SUMMARY = " ".join([
    f"dataset={data.DATASET_FORMAT}",
    f"points={data.POINT_FORMAT}",
    f"checkpoint={ckpt.CHECKPOINT_FORMAT}",
    f"report={ev.REPORT_FORMAT}",
])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rotreg",
        description="Rotation regression from partial point cloud segments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="YAML config file")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="output directory")
        p.add_argument(
            "--set", action="append", default=[], metavar="KEY=VALUE",
            dest="overrides",
            help="override any config key; the value is parsed as YAML",
        )

    p = sub.add_parser("generate", help="write a synthetic dataset")
    common(p)
    p.add_argument("--dataset", help="dataset directory to write")

    p = sub.add_parser("train", help="train a model on a dataset's train split")
    common(p)
    p.add_argument("--dataset", help="dataset directory to read")
    p.add_argument("--resume", help="checkpoint to continue from")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    common(p)
    p.add_argument("--dataset", help="dataset directory to read")
    p.add_argument("--checkpoint", help="checkpoint file to evaluate")

    p = sub.add_parser("report", help="print the summary of a saved report")
    common(p)
    p.add_argument("path", nargs="?", help="report file (default: the config's report key)")
    return parser


def _effective_config(args) -> RunConfig:
    overrides = dict(parse_override(s) for s in args.overrides)
    for key in ("seed", "out", "dataset", "resume", "checkpoint"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    return load_config(args.config, overrides)


def _repro_lines(cfg: RunConfig) -> list:
    return [
        f"config_hash: {config_hash(cfg)}",
        f"seed: {cfg.seed}",
        f"formats: {FORMAT_SUMMARY}",
    ]


def _spec_from_config(cfg: RunConfig):
    make = pn_spec if cfg.variant == "PN" else dg_spec
    kwargs = {"num_points": cfg.n, "input_dim": 3 if cfg.channel_mode == "XYZ" else 6}
    if cfg.variant == "DG":
        kwargs["k"] = cfg.k
    return make(**kwargs)


def cmd_generate(cfg: RunConfig) -> int:
    target = cfg.dataset
    if not target:
        raise ConfigError("generate needs a dataset directory (--dataset or dataset=)")
    obj = data.object_model_by_name(cfg.object)
    splits, manifest = data.make_dataset(obj, cfg.counts, cfg.seed, cfg.noise_sigma)
    manifest["config_hash"] = config_hash(cfg)
    data.write_dataset(target, splits, manifest)
    total = sum(len(v) for v in splits.values())
    print(f"wrote {total} samples across {len(splits)} splits to {target}")
    return 0


def cmd_train(cfg: RunConfig) -> int:
    if not cfg.dataset:
        raise ConfigError("train needs a dataset directory (--dataset or dataset=)")
    samples = data.load_split(cfg.dataset, "train")
    x, targets = training.prepare_inputs(
        samples, cfg.n, cfg.channel_mode, cfg.seed, cfg.translation_sigma
    )

    if cfg.resume:
        model, adam, meta = ckpt.load_checkpoint(cfg.resume)
        if adam is None:
            raise CheckpointError(f"{cfg.resume} holds no optimizer state; cannot resume")
        if model.spec.num_points != cfg.n or model.spec.input_dim != x.shape[2]:
            raise ConfigError(
                f"checkpoint expects {model.spec.num_points} points x "
                f"{model.spec.input_dim} channels, config prepares "
                f"{cfg.n} x {x.shape[2]}"
            )
        start, rng_state = meta["iteration"], meta["rng_state"]
    else:
        model = init_model(_spec_from_config(cfg), seed=cfg.seed)
        adam, start, rng_state = None, 0, None

    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "train_log.csv", "a" if cfg.resume else "w") as log:
        if not cfg.resume:
            for line in _repro_lines(cfg):
                log.write(f"# {line}\n")
            log.write("iteration,loss\n")
        result = training.train(
            model, x, targets,
            iterations=cfg.iterations, batch_size=cfg.batch_size, lr=cfg.lr,
            seed=cfg.seed, adam=adam, start_iteration=start,
            rng_state=rng_state, early_stop_deg=cfg.early_stop_deg, log=log,
        )

    extra = {"config_hash": config_hash(cfg), "dataset": str(cfg.dataset)}
    ckpt.save_checkpoint(
        out / "checkpoint_final.npz", model,
        adam=result.adam, iteration=result.iterations_run,
        rng_state=result.rng.bit_generator.state, extra=extra,
    )
    if result.best_state is not None:
        training.restore_state(model, result.best_state)
        ckpt.save_checkpoint(
            out / "checkpoint_best.npz", model,
            iteration=result.best_iteration + 1, extra=extra,
        )
    ran = result.iterations_run - start
    tail = " (stopped early)" if result.stopped_early else ""
    last = result.losses[-1] if result.losses else float("nan")
    print(
        f"trained {ran} iterations{tail}; last mean loss "
        f"{math.degrees(last):.2f} deg, best {math.degrees(result.best_loss):.2f} deg "
        f"at iteration {result.best_iteration}"
    )
    return 0


def cmd_eval(cfg: RunConfig) -> int:
    if not cfg.dataset:
        raise ConfigError("eval needs a dataset directory (--dataset or dataset=)")
    if not cfg.checkpoint:
        raise ConfigError("eval needs a checkpoint file (--checkpoint or checkpoint=)")
    model, _, meta = ckpt.load_checkpoint(cfg.checkpoint)
    manifest = data.load_manifest(cfg.dataset)
    samples = data.load_split(cfg.dataset, cfg.split)
    obj = data.object_model_by_name(manifest["object"])
    records = training.evaluate_samples(
        model, samples, cfg.seed,
        translation_sigma=cfg.translation_sigma, object_model=obj,
        workers=cfg.workers,
    )
    thresholds = [math.radians(d) for d in cfg.thresholds_deg]
    report = ev.make_report(records, thresholds, add_threshold=cfg.add_threshold)

    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    header = _repro_lines(cfg) + [
        f"checkpoint_iteration: {meta['iteration']}",
        f"split: {cfg.split} ({len(records)} samples)",
    ]
    ev.write_report(report, out / "report.txt", header_lines=header)
    ev.write_curve_csv(report, out / "curve.csv", header_lines=header)
    for line in ev.summary_lines(report):
        print(line)
    return 0


def cmd_report(cfg: RunConfig, path) -> int:
    target = path or cfg.report
    if not target:
        raise ConfigError("report needs a report file (positional path or report=)")
    if not Path(target).exists():
        raise DataError(f"no report file at {target}")
    report = ev.read_report(target)
    print(f"{len(report.records)} records")
    for line in ev.summary_lines(report):
        print(line)
    if report.add_accuracy is not None:
        print(f"ADD accuracy: {report.add_accuracy:.4f}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _effective_config(args)
        if args.command == "generate":
            return cmd_generate(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "eval":
            return cmd_eval(cfg)
        return cmd_report(cfg, args.path)
    except RotregError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
