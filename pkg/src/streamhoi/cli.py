"""Command line entry point.

Verbs:
    train    fit every seed of a run config, writing checkpoints and metrics
    eval     re-score an existing checkpoint on its config's validation split
    ablate   cross-product sweep over config axes, with summary figures
    plot     render figures for a finished run or ablation directory
    datagen  export the config's synthetic dataset as CSV files

Exit codes: 0 success, 2 configuration/input problems, 3 numerical failures.
Output location: --out flag, else the config's out_dir, else
$STREAMHOI_OUT_ROOT/<run label>, else ./runs/<run label>. All artifacts are
content-only (no timestamps), so reruns are byte-identical.
"""

import argparse
import os
import sys

from .archive import (
    checkpoint_config_json,
    checkpoint_kind,
    load_generator,
    load_segmenter,
)
from .config import RunConfig, config_from_json, config_to_json
from .exceptions import (
    ConfigurationError,
    InvalidStateError,
    NumericalError,
    ShapeError,
)
from . import data_io, runs

GEN_HEADLINE = ("recon", "fid", "div", "ra")
PCD_HEADLINE = ("acc", "edit", "f1")


def _load_config(args):
    if not getattr(args, "config", None):
        raise ConfigurationError("this verb needs --config")
    cfg = RunConfig.from_yaml(args.config)
    return _apply_overrides(cfg, args)


def _apply_overrides(cfg, args):
    for flag in ("task", "mode", "model", "memory", "fusion"):
        value = getattr(args, flag, None)
        if value is not None:
            cfg = cfg.with_overrides(**{flag: value})
    if getattr(args, "seeds", None):
        try:
            seeds = [int(s) for s in args.seeds.split(",") if s != ""]
        except ValueError as exc:
            raise ConfigurationError(f"bad --seeds value {args.seeds!r}") from exc
        cfg = cfg.with_overrides(seeds=seeds)
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigurationError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        cfg = cfg.set_dotted(key, value)
    return cfg


def _resolve_out(args, cfg):
    if getattr(args, "out", None):
        return args.out
    if cfg.out_dir:
        return cfg.out_dir
    label = f"{cfg.name or cfg.task}-{cfg.config_hash()[:8]}"
    root = os.environ.get("STREAMHOI_OUT_ROOT")
    if root:
        return os.path.join(root, label)
    return os.path.join("runs", label)


def _print_rows(rows, keys, stream):
    for row in rows:
        cells = [f"seed={row['seed']}"]
        for key in keys:
            value = row.get(key)
            if isinstance(value, float):
                cells.append(f"{key}={value:.4f}")
            elif value is not None:
                cells.append(f"{key}={value}")
        print("  " + "  ".join(cells), file=stream)


def cmd_train(args):
    cfg = _load_config(args)
    out_root = _resolve_out(args, cfg)
    if args.resume:
        return _train_resume(args, cfg, out_root)
    result = runs.run_config(cfg, out_root=out_root)
    keys = GEN_HEADLINE if cfg.task == "generation" else PCD_HEADLINE
    print(f"trained {len(result['cells'])} seed(s) -> {out_root}")
    _print_rows(result["cells"], keys + ("loss_final", "causality_ok"), sys.stdout)
    return 0


def _train_resume(args, cfg, out_root):
    if cfg.task != "generation":
        raise ConfigurationError("--resume supports generation checkpoints only")
    if checkpoint_kind(args.resume) != "generator":
        raise ConfigurationError(f"{args.resume} is not a generator checkpoint")
    train_pairs, val_pairs = runs.make_generation_data(cfg)
    gen = load_generator(args.resume, pairs=train_pairs)
    remaining = cfg.train.steps - gen.steps_done_
    if remaining <= 0:
        print(
            f"checkpoint already has {gen.steps_done_} steps "
            f">= configured {cfg.train.steps}; nothing to do"
        )
        return 0
    gen.continue_fit(remaining)
    metrics = runs.evaluate_generation(cfg, gen, train_pairs, val_pairs)
    cell_dir = os.path.join(out_root, cfg.run_name(gen.seed))
    os.makedirs(cell_dir, exist_ok=True)
    from .archive import save_generator

    save_generator(
        os.path.join(cell_dir, "checkpoint.npz"), gen, config_json=config_to_json(cfg)
    )
    runs.write_json(os.path.join(cell_dir, "metrics.json"), metrics)
    print(f"resumed to step {gen.steps_done_} -> {cell_dir}")
    _print_rows([metrics], GEN_HEADLINE + ("loss_final",), sys.stdout)
    return 0


def cmd_eval(args):
    echo = checkpoint_config_json(args.checkpoint)
    if args.config:
        cfg = RunConfig.from_yaml(args.config)
    elif echo:
        cfg = config_from_json(echo)
    else:
        raise ConfigurationError(
            f"{args.checkpoint} stores no config; pass --config"
        )
    cfg = _apply_overrides(cfg, args)
    kind = checkpoint_kind(args.checkpoint)
    if kind == "generator":
        if cfg.task != "generation":
            raise ConfigurationError("generator checkpoint needs a generation config")
        estimator = load_generator(args.checkpoint)
    else:
        if cfg.task != "perception":
            raise ConfigurationError("segmenter checkpoint needs a perception config")
        estimator = load_segmenter(args.checkpoint)
    metrics = runs.evaluate_estimator(cfg, estimator)
    out = args.out or os.path.dirname(os.path.abspath(args.checkpoint))
    path = os.path.join(out, "metrics.json")
    runs.write_json(path, metrics)
    keys = GEN_HEADLINE if cfg.task == "generation" else PCD_HEADLINE
    print(f"evaluated {args.checkpoint} -> {path}")
    _print_rows([metrics], keys + ("causality_ok",), sys.stdout)
    return 0


def _parse_axes(specs):
    axes = []
    for spec in specs:
        if "=" not in spec:
            raise ConfigurationError(
                f"--axis expects field=v1,v2,..., got {spec!r}"
            )
        field, values = spec.split("=", 1)
        values = [v for v in values.split(",") if v != ""]
        if not values:
            raise ConfigurationError(f"--axis {field} has no values")
        axes.append((field, values))
    return axes


def cmd_ablate(args):
    cfg = _load_config(args)
    if not args.axis:
        raise ConfigurationError("ablate needs at least one --axis")
    axes = _parse_axes(args.axis)
    out_root = _resolve_out(args, cfg)
    result = runs.run_ablation(cfg, axes, out_root=out_root)
    headline = GEN_HEADLINE if cfg.task == "generation" else PCD_HEADLINE
    from . import plots

    for metric in headline:
        if any(metric in agg for agg in result["groups"].values()):
            plots.plot_metric_bars(
                result["groups"],
                metric,
                os.path.join(out_root, f"ablation_{metric}.png"),
            )
    print(f"ablation over {dict(axes)} -> {out_root}")
    for combo, agg in result["groups"].items():
        cells = [combo]
        for metric in headline:
            if metric in agg:
                cells.append(f"{metric}={agg[metric]['mean']:.4f}")
        print("  " + "  ".join(cells))
    return 0


def cmd_plot(args):
    from . import plots

    run_dir = args.run
    made = []
    ablation_path = os.path.join(run_dir, "ablation.json")
    checkpoint_path = os.path.join(run_dir, "checkpoint.npz")
    if os.path.exists(ablation_path):
        import json

        with open(ablation_path) as fh:
            result = json.load(fh)
        for metric in GEN_HEADLINE + PCD_HEADLINE:
            if any(metric in agg for agg in result["groups"].values()):
                made.append(
                    plots.plot_metric_bars(
                        result["groups"],
                        metric,
                        os.path.join(run_dir, f"ablation_{metric}.png"),
                    )
                )
    elif os.path.exists(checkpoint_path):
        made.extend(_plot_checkpoint(run_dir, checkpoint_path, plots))
    else:
        raise ConfigurationError(
            f"{run_dir} has neither ablation.json nor checkpoint.npz"
        )
    for path in made:
        print(f"wrote {path}")
    return 0


def _plot_checkpoint(run_dir, checkpoint_path, plots):
    made = []
    kind = checkpoint_kind(checkpoint_path)
    echo = checkpoint_config_json(checkpoint_path)
    if kind == "generator":
        gen = load_generator(checkpoint_path)
        made.append(
            plots.plot_loss(gen.loss_history_, os.path.join(run_dir, "loss.png"))
        )
        if echo:
            cfg = config_from_json(echo)
            _, val_pairs = runs.make_generation_data(cfg)
            sample = gen.sample(val_pairs[:1], seed=cfg.eval.sample_seed)[0]
            made.append(
                plots.plot_trajectory_overlay(
                    val_pairs[0].reactor,
                    sample,
                    os.path.join(run_dir, "overlay.png"),
                )
            )
    else:
        seg = load_segmenter(checkpoint_path)
        made.append(
            plots.plot_loss(seg.loss_history_, os.path.join(run_dir, "loss.png"))
        )
        if echo:
            cfg = config_from_json(echo)
            _, val_clips = runs.make_perception_data(cfg)
            pred = seg.predict(val_clips[:1])[0]
            made.append(
                plots.plot_segmentation(
                    pred,
                    val_clips[0].labels,
                    os.path.join(run_dir, "segmentation.png"),
                )
            )
    return made


def cmd_datagen(args):
    cfg = _load_config(args)
    out_root = _resolve_out(args, cfg)
    extras = {"config_hash": cfg.config_hash()}
    if cfg.task == "generation":
        train, val = runs.make_generation_data(cfg)
        data_io.write_motion_pairs(
            os.path.join(out_root, "train"), train, extra_manifest=extras
        )
        data_io.write_motion_pairs(
            os.path.join(out_root, "val"), val, extra_manifest=extras
        )
    else:
        train, val = runs.make_perception_data(cfg)
        data_io.write_clips(
            os.path.join(out_root, "train"), train, extra_manifest=extras
        )
        data_io.write_clips(
            os.path.join(out_root, "val"), val, extra_manifest=extras
        )
    print(
        f"wrote {len(train)} train / {len(val)} val sequences -> {out_root}"
    )
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="streamhoi",
        description="streaming interaction modeling: train, evaluate, ablate",
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    def add_common(p, needs_config):
        p.add_argument(
            "--config", required=needs_config, help="run config YAML path"
        )
        p.add_argument("--out", help="output directory (overrides config/env)")
        p.add_argument(
            "--set",
            action="append",
            metavar="KEY=VALUE",
            help="override any config key, dotted for sections "
            "(e.g. train.steps=100)",
        )
        p.add_argument("--task", choices=("generation", "perception"))
        p.add_argument("--mode", choices=("online", "offline"))
        p.add_argument("--model", choices=("mamba", "causal_transformer"))
        p.add_argument("--memory", choices=("off", "ms_only", "ml_only", "me"))
        p.add_argument("--fusion", choices=("concat_maxpool", "add", "max"))
        p.add_argument("--seeds", help="comma-separated seed list override")

    p_train = sub.add_parser("train", help="fit all seeds of a config")
    add_common(p_train, needs_config=True)
    p_train.add_argument("--resume", help="generator checkpoint to continue")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="score an existing checkpoint")
    add_common(p_eval, needs_config=False)
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.set_defaults(func=cmd_eval)

    p_ablate = sub.add_parser("ablate", help="axis sweep with shared data")
    add_common(p_ablate, needs_config=True)
    p_ablate.add_argument(
        "--axis",
        action="append",
        metavar="FIELD=V1,V2",
        help="sweep axis, repeatable (e.g. --axis memory=off,me)",
    )
    p_ablate.set_defaults(func=cmd_ablate)

    p_plot = sub.add_parser("plot", help="figures for a run directory")
    p_plot.add_argument("--run", required=True, help="run or ablation directory")
    p_plot.set_defaults(func=cmd_plot)

    p_datagen = sub.add_parser("datagen", help="export synthetic data as CSV")
    add_common(p_datagen, needs_config=True)
    p_datagen.set_defaults(func=cmd_datagen)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (
        ConfigurationError,
        ShapeError,
        InvalidStateError,
        FileNotFoundError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
