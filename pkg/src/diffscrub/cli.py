"""Command line interface.

Subcommands: train, unlearn, sample, eval, psd, toyfig.  Every run takes
--config/--seed/--out plus repeatable --override key=value; outputs land in
the run directory (metrics.csv, checkpoints/, samples/, figures/).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .config import RunConfig, apply_overrides, parse, serialize
from .datasets import make_dataset, write_array
from .diffusion import denoise_from, load_checkpoint, sample, save_checkpoint
from .harness import (RunRecord, eval_suite, run_unlearn, save_record,
                      toyfig_sweep, train_base, write_metrics_csv)
from .metrics import psd_radial


def _load_config(args) -> RunConfig:
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        cfg = parse(path.read_text())
    else:
        cfg = RunConfig()
    if args.override:
        cfg = apply_overrides(cfg, args.override)
    if args.seed is not None:
        cfg = apply_overrides(cfg, [f"seed={args.seed}"])
    return cfg


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_train(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args)
    model, sched, record = train_base(cfg)
    (out / "checkpoints").mkdir(exist_ok=True)
    ckpt = out / "checkpoints" / "base.ckpt"
    save_checkpoint(ckpt, model, sched)
    record.checkpoints["base"] = str(ckpt)
    (out / "config.snapshot").write_text(record.config_text)
    save_record(out / "run_record.json", record)
    print(f"trained {record.notes.get('train_steps', 0)} steps, "
          f"loss {record.notes.get('initial_loss', 0):.4f} -> "
          f"{record.notes.get('final_loss', 0):.4f}")
    print(f"checkpoint: {ckpt}")
    return 0


def _resolve_base(args, cfg) -> tuple:
    if args.base:
        return load_checkpoint(args.base)
    model, sched, _ = train_base(cfg)
    return model, sched


def cmd_unlearn(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args)
    base, sched = _resolve_base(args, cfg)
    record = run_unlearn(cfg, base, out_dir=out)
    final = {name: vals[-1][1] for name, vals in
             (("unlearn_loss", record.metric_series("unlearn_loss")),)
             if vals}
    print(f"unlearned with {cfg.objective.kind}: {len(record.rows)} metric rows")
    for metric in ("forget_hit_rate", "retain_coverage"):
        series = record.metric_series(metric)
        if series:
            print(f"  {metric}: {series[0][1]:.4f} -> {series[-1][1]:.4f}")
    print(f"outputs in {out}")
    return 0


def cmd_sample(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args)
    if not args.checkpoint:
        print("sample: --checkpoint is required", file=sys.stderr)
        return 2
    model, sched = load_checkpoint(args.checkpoint)
    rng = np.random.default_rng(cfg.seed)
    pts = sample(model, sched, args.n, rng)
    (out / "samples").mkdir(exist_ok=True)
    path = out / "samples" / "samples.f64"
    write_array(path, pts)
    print(f"wrote {args.n} samples to {path}")
    ds_shape = make_dataset(cfg.dataset).data_shape
    if len(ds_shape) == 2:
        from .report import render_samples_grid
        grid = render_samples_grid(out / "figures",
                                   pts[:16].reshape((-1,) + ds_shape))
        print(f"figure: {grid}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args)
    if not args.checkpoint or not args.base:
        print("eval: --checkpoint and --base are required", file=sys.stderr)
        return 2
    model, _ = load_checkpoint(args.checkpoint)
    base, _ = load_checkpoint(args.base)
    ds = make_dataset(cfg.dataset)
    rng = np.random.default_rng(cfg.seed)
    record = RunRecord(run_id=cfgmod.run_id(cfg), config_text=serialize(cfg))
    record.add_rows(0, eval_suite(model, base, ds, cfg, rng))
    write_metrics_csv(out / "metrics.csv", record.rows)
    (out / "config.snapshot").write_text(record.config_text)
    print(f"wrote {len(record.rows)} metric rows to {out / 'metrics.csv'}")
    return 0


def cmd_psd(args) -> int:
    """PSD of originals vs their partial-denoising reconstructions."""
    cfg = _load_config(args)
    out = _out_dir(args)
    if not args.checkpoint:
        print("psd: --checkpoint is required", file=sys.stderr)
        return 2
    model, sched = load_checkpoint(args.checkpoint)
    ds = make_dataset(cfg.dataset)
    if len(ds.data_shape) != 2:
        print("psd: dataset is not image-shaped", file=sys.stderr)
        return 2
    rng = np.random.default_rng(cfg.seed)
    t_start = int(round(args.t_frac * sched.T))
    ids = list(ds.forget_indices) or list(range(min(4, len(ds.x))))
    rows = []
    curves = {}
    for sid in ids:
        img0 = ds.x[sid].reshape(ds.data_shape)
        recon = denoise_from(model, ds.x[sid], t_start, sched, rng) \
            .reshape(ds.data_shape)
        for kind, img in (("orig", img0), ("recon", recon)):
            curve = psd_radial(img - img.mean(), cfg.eval.psd_bins)
            curves[f"{kind}:{sid}"] = curve
            for b, p in enumerate(curve.power):
                rows.append((cfgmod.run_id(cfg), 0, str(sid),
                             f"psd.{kind}.bin{b}", p))
    write_metrics_csv(out / "psd.csv", rows)
    from .report import render_psd
    fig = render_psd(out / "figures", curves)
    print(f"wrote {out / 'psd.csv'} and {fig}")
    return 0


def cmd_toyfig(args) -> int:
    if args.config:
        cfg = _load_config(args)
    else:
        # calibrated three-window study; overrides still apply
        from .harness import toy_fig_config
        cfg = toy_fig_config(args.seed if args.seed is not None else 0)
        if args.override:
            cfg = apply_overrides(cfg, args.override)
    out = _out_dir(args)
    summary = toyfig_sweep(cfg, out_dir=out)
    print("window      hit_rate  coverage")
    for name, stats in summary.items():
        print(f"{name:<10}  {stats['hit_rate']:.4f}    {stats['coverage']:.4f}")
    print(f"outputs in {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="diffscrub",
        description="Train small diffusion models and selectively unlearn "
                    "training samples.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="config file path")
        p.add_argument("--seed", type=int, default=None, help="override seed")
        p.add_argument("--out", default="runs/out", help="output directory")
        p.add_argument("--override", action="append", default=[],
                       metavar="KEY=VALUE", help="config override (repeatable)")

    p = sub.add_parser("train", help="train a base model to plateau")
    common(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("unlearn", help="run the configured unlearning phase")
    common(p)
    p.add_argument("--base", default=None,
                   help="base checkpoint (trained fresh when omitted)")
    p.set_defaults(fn=cmd_unlearn)

    p = sub.add_parser("sample", help="draw ancestral samples from a checkpoint")
    common(p)
    p.add_argument("--checkpoint", default=None, required=False)
    p.add_argument("--n", type=int, default=1000)
    p.set_defaults(fn=cmd_sample)

    p = sub.add_parser("eval", help="full metric suite for a model vs its base")
    common(p)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--base", default=None)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("psd", help="power spectra of originals vs reconstructions")
    common(p)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--t-frac", type=float, default=0.25,
                   help="start step for reconstruction, as a fraction of T")
    p.set_defaults(fn=cmd_psd)

    p = sub.add_parser("toyfig", help="three-window toy unlearning sweep")
    common(p)
    p.set_defaults(fn=cmd_toyfig)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.fn(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
