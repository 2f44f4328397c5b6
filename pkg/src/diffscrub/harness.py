"""Experiment orchestration: train a base model, run an unlearning phase,
evaluate, and persist everything needed to reproduce the run byte-for-byte.

Run directories contain config.snapshot, checkpoints/, metrics.csv with the
header run_id,step,sample_id,metric,value, and samples/ as raw float64 arrays.
Wall-clock times live only in run_record.json so metrics.csv stays
deterministic.
"""

from __future__ import annotations

import csv
import functools
import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .config import RunConfig, run_id as make_run_id, serialize
from .datasets import (SplitDataset, make_dataset, moons_reference_points,
                       write_array)
from .diffusion import (Denoiser, NoiseSchedule, denoise_from, epsilon_loss,
                        forward_noise, prediction_error, sample,
                        save_checkpoint, weighted_error_mean)
from .metrics import (SscdNormConfig, forget_hit_rate, freq_decomposed_grad_norm,
                      grad_norm_of, make_embedding, psd_radial, retain_coverage,
                      scaled_rho, sscd_norm, sscd_plain)
from .objectives import (UnlearnRun, dpo_forget_loss, erasediff_loss, ga_loss,
                         kto_forget_loss, siss_loss, unlearn_step)
from .optim import Adam
from .autodiff import add, grad, mul, no_grad
from .selective import (TimeWindowConfig, sample_timesteps, selective_wrap,
                        uniform_window)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class RunRecord:
    run_id: str
    config_text: str
    phase_seconds: dict = field(default_factory=dict)
    checkpoints: dict = field(default_factory=dict)
    rows: list = field(default_factory=list)
    notes: dict = field(default_factory=dict)

    def add_rows(self, step: int, items: list[tuple[str, str, float]]) -> None:
        for sample_id, metric, value in items:
            self.rows.append((self.run_id, step, sample_id, metric, value))

    def metric_series(self, metric: str, sample_id: str = "all"
                      ) -> list[tuple[int, float]]:
        return [(step, value) for rid, step, sid, name, value in self.rows
                if name == metric and sid == sample_id]


def write_metrics_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["run_id", "step", "sample_id", "metric", "value"])
        for rid, step, sid, metric, value in rows:
            writer.writerow([rid, step, sid, metric, repr(float(value))])


def save_record(path, record: RunRecord) -> None:
    notes = {k: v for k, v in record.notes.items()
             if isinstance(v, (int, float, str, bool))}
    payload = {"run_id": record.run_id, "phase_seconds": record.phase_seconds,
               "checkpoints": record.checkpoints, "notes": notes}
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _rng_streams(seed: int, names: tuple[str, ...]) -> dict[str, np.random.Generator]:
    root = np.random.SeedSequence(seed)
    children = root.spawn(len(names))
    return {name: np.random.default_rng(child)
            for name, child in zip(names, children)}


# --- base training ------------------------------------------------------------

def train_base(cfg: RunConfig, dataset: SplitDataset | None = None
               ) -> tuple[Denoiser, NoiseSchedule, RunRecord]:
    """Train the base denoiser to a loss plateau on the full dataset."""
    ds = dataset if dataset is not None else make_dataset(cfg.dataset)
    sched = cfgmod.build_schedule(cfg)
    streams = _rng_streams(cfg.seed, ("init", "train"))
    model = Denoiser(cfgmod.build_arch(cfg, ds.x.shape[1]), streams["init"])
    record = RunRecord(run_id=make_run_id(cfg), config_text=serialize(cfg))
    t0 = time.perf_counter()
    opt = Adam(model.params, lr=cfg.train.lr)
    rng = streams["train"]
    window = cfg.train.plateau_window
    uniform = uniform_window(sched.T)
    losses: list[float] = []
    for step in range(cfg.train.steps):
        idx = rng.integers(0, len(ds.x), cfg.train.batch_size)
        x0 = ds.x[idx]
        t = sample_timesteps(uniform, len(x0), rng)
        eps = rng.standard_normal(x0.shape)
        loss = epsilon_loss(model, x0, t, eps, sched)
        value = float(loss.data)
        if not np.isfinite(value):
            raise TrainingDiverged(f"non-finite loss at step {step}")
        losses.append(value)
        opt.step(grad(loss, model.params))
        if step >= 2 * window and step % window == 0:
            cur = float(np.mean(losses[-window:]))
            prev = float(np.mean(losses[-2 * window:-window]))
            if prev > 0 and (prev - cur) / prev < cfg.train.plateau_tol:
                break
    record.phase_seconds["train"] = time.perf_counter() - t0
    if losses:
        w = min(window, len(losses))
        record.notes["initial_loss"] = losses[0]  # untrained reference
        record.notes["final_loss"] = float(np.mean(losses[-w:]))
        record.notes["train_steps"] = len(losses)
    else:
        record.notes["train_steps"] = 0
    return model, sched, record


# --- objective assembly ---------------------------------------------------------

STABILIZED_KINDS = ("ga", "dpo", "kto")  # objectives without a built-in retain term


def build_step_fn(cfg: RunConfig, reference: Denoiser | None,
                  data_shape: tuple[int, ...],
                  base: Denoiser | None = None,
                  anchors: np.ndarray | None = None):
    """Compose the configured objective, wrapper, and retain stabilizers.

    The selective wrapper owns the forget objective (windowed timesteps plus
    the frequency filter).  Objectives without their own retain handling get
    two additive stabilizers: a retain diffusion term over the pool (t capped
    at retain_t_max_frac) and an optional anchor term on the points flanking
    the forget set (t capped at anchor_t_max_frac), which either preserves the
    base model's outputs there or fits noise like ordinary training.
    """
    o = cfg.objective
    if o.kind == "ga":
        core = ga_loss
    elif o.kind == "erasediff":
        core = functools.partial(erasediff_loss,
                                 beta_retain=o.erasediff_beta_retain)
    elif o.kind == "siss":
        core = functools.partial(siss_loss, cfg=cfgmod.build_siss_config(cfg))
    elif o.kind == "dpo":
        core = functools.partial(dpo_forget_loss,
                                 cfg=cfgmod.build_preference_config(cfg, reference))
    elif o.kind == "kto":
        core = functools.partial(kto_forget_loss,
                                 cfg=cfgmod.build_preference_config(cfg, reference))
    else:
        raise ValueError(f"unknown objective kind {o.kind!r}")
    apply_to = cfg.freq_filter.apply_to if cfg.freq_filter else "forget-only"
    wrapped = selective_wrap(core, cfgmod.build_time_window(cfg),
                             cfgmod.build_freq_filter(cfg),
                             apply_filter_to=apply_to, data_shape=data_shape)
    T = cfg.schedule.T
    use_pool = o.kind in STABILIZED_KINDS and o.retain_weight > 0
    pool_tw = TimeWindowConfig(
        0.0, 0, max(int(round(o.retain_t_max_frac * T)), 1), T)
    use_anchor = o.anchor_weight > 0 and anchors is not None and len(anchors)
    anchor_tw = TimeWindowConfig(
        0.0, 0, max(int(round(o.anchor_t_max_frac * T)), 1), T)
    n_pool = cfg.optimizer.batch_size

    def step_fn(model, forget, retain, sched, rng, n_retain=None,
                fixed_retain=None):
        loss = wrapped(model, forget, retain, sched, rng, n_retain=n_retain)
        if use_pool and len(retain):
            pool = retain[rng.integers(0, len(retain), n_pool)]
            t = sample_timesteps(pool_tw, len(pool), rng)
            eps = rng.standard_normal(pool.shape)
            x_t = forward_noise(pool, t, eps, sched)
            loss = add(loss, mul(weighted_error_mean(
                prediction_error(model, x_t, t, eps), t, sched),
                o.retain_weight))
        if use_anchor:
            t = sample_timesteps(anchor_tw, len(anchors), rng)
            eps = rng.standard_normal(anchors.shape)
            x_t = forward_noise(anchors, t, eps, sched)
            if o.anchor_mode == "preserve" and base is not None:
                with no_grad():
                    target = base(x_t, t).data
            else:
                target = eps
            loss = add(loss, mul(weighted_error_mean(
                prediction_error(model, x_t, t, target), t, sched),
                o.anchor_weight))
        return loss

    step_fn.wrapped = wrapped
    return step_fn


def _paired_objective(kind: str) -> bool:
    return kind in ("siss", "dpo")


def _anchor_rows(ds: SplitDataset, cfg: RunConfig) -> np.ndarray | None:
    """Anchor points included in every retain batch.

    With retain_anchors = K > 0 these are the K retain points closest to the
    forget set while keeping at least retain_anchor_gap distance from it:
    descent on them stabilizes the region around the deleted samples without
    rebuilding density inside the deletion radius itself.
    """
    k = cfg.objective.retain_anchors
    rows = ds.retain
    if not k or k >= len(rows):
        return None
    d = np.linalg.norm(rows[:, None, :] - ds.forget[None, :, :],
                       axis=2).min(axis=1)
    eligible = np.nonzero(d >= cfg.objective.retain_anchor_gap)[0]
    order = eligible[np.argsort(d[eligible])]
    idx = np.sort(order[:k])
    return rows[idx]


# --- evaluation ------------------------------------------------------------------

def _coverage_references(ds: SplitDataset, cfg: RunConfig) -> np.ndarray:
    if cfg.dataset.kind == "two-moons":
        return moons_reference_points(200)
    rows = ds.retain
    return rows[:: max(len(rows) // 200, 1)]


def eval_toy(model: Denoiser, ds: SplitDataset, sched: NoiseSchedule,
             cfg: RunConfig, rng: np.random.Generator
             ) -> list[tuple[str, str, float]]:
    """Sample-based deletion/coverage metrics plus forget/retain losses."""
    pts = sample(model, sched, cfg.eval.n_sample, rng)
    refs = _coverage_references(ds, cfg)
    items = [
        ("all", "forget_hit_rate",
         forget_hit_rate(pts, ds.forget, cfg.eval.hit_radius)),
        ("all", "retain_coverage",
         retain_coverage(pts, refs, cfg.eval.coverage_radius)),
    ]
    items.extend(_loss_items(model, ds, sched, cfg, rng))
    return items


def _loss_items(model, ds, sched, cfg, rng) -> list[tuple[str, str, float]]:
    items = []
    for name, rows in (("forget", ds.forget), ("retain", ds.retain[:64])):
        if len(rows) == 0:
            continue
        t = sample_timesteps(uniform_window(sched.T), len(rows), rng)
        eps = rng.standard_normal(rows.shape)
        with no_grad():
            value = float(epsilon_loss(model, rows, t, eps, sched).data)
        items.append(("all", f"loss_{name}", value))
    return items


GRAD_NORM_STAGES = (("early", 0.0, 0.25), ("middle", 0.25, 0.75),
                    ("late", 0.75, 1.0))


def eval_suite(model: Denoiser, base: Denoiser, ds: SplitDataset,
               cfg: RunConfig, rng: np.random.Generator
               ) -> list[tuple[str, str, float]]:
    """Reconstruction, similarity, PSD, and gradient-norm metrics.

    For every evaluated sample and every configured start step: noise the
    original up to t_start, reverse it with the unlearned model, and compare
    against the original.  Gradient norms are reported for both models, total
    and per stage.  Toy datasets additionally get hit-rate/coverage metrics.
    """
    sched = cfgmod.build_schedule(cfg)
    items: list[tuple[str, str, float]] = []
    is_image = len(ds.data_shape) == 2
    if not is_image:
        items.extend(eval_toy(model, ds, sched, cfg, rng))
    embed = make_embedding(cfg.eval.embedding)
    eval_ids = list(ds.forget_indices) + \
        list(ds.retain_indices[: cfg.eval.n_retain_eval])
    sscd_cfg = SscdNormConfig(rho=scaled_rho(ds.x.shape[1]))
    for sid in eval_ids:
        x0 = ds.x[sid]
        label = f"{'forget' if sid in ds.forget_indices else 'retain'}:{sid}"
        for net, tag in ((base, "base"), (model, "model")):
            items.append((label, f"grad_norm.{tag}",
                          grad_norm_of(net, x0, sched,
                                       cfg.eval.grad_norm_draws, rng)))
            for stage, lo, hi in GRAD_NORM_STAGES:
                win = (int(lo * sched.T), max(int(hi * sched.T), 1))
                items.append((label, f"grad_norm.{stage}.{tag}",
                              grad_norm_of(net, x0, sched,
                                           cfg.eval.grad_norm_draws, rng,
                                           t_window=win)))
            if is_image:
                lo_n, hi_n = freq_decomposed_grad_norm(
                    net, x0, sched, 0.1, rng, ds.data_shape,
                    n_draws=cfg.eval.grad_norm_draws)
                items.append((label, f"freq_grad_norm.low.{tag}", lo_n))
                items.append((label, f"freq_grad_norm.high.{tag}", hi_n))
        for frac in cfg.eval.t_start_fracs:
            t_start = int(round(frac * sched.T))
            recon = denoise_from(model, x0, t_start, sched, rng)
            if is_image:
                img0 = x0.reshape(ds.data_shape)
                img1 = recon.reshape(ds.data_shape)
                items.append((label, f"sscd_plain.t{frac}",
                              sscd_plain(img0, img1, embed)))
                items.append((label, f"sscd_norm.t{frac}",
                              sscd_norm(img0, img1, embed, sscd_cfg)))
                for kind, img in (("orig", img0), ("recon", img1)):
                    curve = psd_radial(img - img.mean(), cfg.eval.psd_bins)
                    for b in range(cfg.eval.psd_bins):
                        items.append((label, f"psd.{kind}.t{frac}.bin{b}",
                                      curve.power[b]))
            else:
                items.append((label, f"sscd_plain.t{frac}",
                              sscd_plain(x0, recon, embed)))
                items.append((label, f"sscd_norm.t{frac}",
                              sscd_norm(x0, recon, embed, sscd_cfg)))
                items.append((label, f"recon_l2.t{frac}",
                              float(np.linalg.norm(recon - x0))))
    return items


# --- the unlearning phase ---------------------------------------------------------

def run_unlearn(cfg: RunConfig, base: Denoiser, out_dir=None,
                dataset: SplitDataset | None = None) -> RunRecord:
    """Execute the configured unlearning phase starting from a base model."""
    ds = dataset if dataset is not None else make_dataset(cfg.dataset)
    if base.arch.data_dim != ds.x.shape[1]:
        raise ValueError(f"base model dimension {base.arch.data_dim} does not "
                         f"match dataset dimension {ds.x.shape[1]}")
    sched = cfgmod.build_schedule(cfg)
    streams = _rng_streams(cfg.seed, ("unlearn", "eval"))
    record = RunRecord(run_id=make_run_id(cfg), config_text=serialize(cfg))
    model = base.copy()
    reference = base.copy() if cfg.objective.kind in ("dpo", "kto") else None
    step_fn = build_step_fn(cfg, reference, ds.data_shape, base=base,
                            anchors=_anchor_rows(ds, cfg))
    n_retain = None if _paired_objective(cfg.objective.kind) \
        else cfg.optimizer.batch_size
    run = UnlearnRun(model=model, sched=sched, step_fn=step_fn,
                     opt=Adam(model.params, lr=cfg.optimizer.lr),
                     forget=ds.forget, retain=ds.retain,
                     n_retain=n_retain,
                     clip_norm=cfg.optimizer.clip_norm)
    rng = streams["unlearn"]
    eval_rng = streams["eval"]
    t0 = time.perf_counter()
    record.add_rows(0, eval_toy(model, ds, sched, cfg, eval_rng)
                    if len(ds.data_shape) == 1
                    else _loss_items(model, ds, sched, cfg, eval_rng))
    for step in range(cfg.optimizer.steps):
        rec = unlearn_step(run, rng)
        record.add_rows(rec["step"] + 1, [("all", "unlearn_loss", rec["loss"]),
                                          ("all", "grad_norm", rec["grad_norm"])])
        done = step == cfg.optimizer.steps - 1
        if done or (cfg.eval.cadence and (step + 1) % cfg.eval.cadence == 0):
            items = (eval_toy(model, ds, sched, cfg, eval_rng)
                     if len(ds.data_shape) == 1
                     else _loss_items(model, ds, sched, cfg, eval_rng))
            record.add_rows(rec["step"] + 1, items)
    record.phase_seconds["unlearn"] = time.perf_counter() - t0
    if out_dir is not None:
        out = Path(out_dir)
        (out / "checkpoints").mkdir(parents=True, exist_ok=True)
        (out / "config.snapshot").write_text(record.config_text)
        ckpt = out / "checkpoints" / "unlearned.ckpt"
        save_checkpoint(ckpt, model, sched)
        record.checkpoints["unlearned"] = str(ckpt)
        write_metrics_csv(out / "metrics.csv", record.rows)
        save_record(out / "run_record.json", record)
    record.notes["final_model"] = model
    return record


# --- the three-window toy sweep ------------------------------------------------------

TOY_WINDOWS = (("early", 0.0, 0.25), ("middle", 0.25, 0.75), ("late", 0.75, 1.0))


def toy_fig_config(seed: int = 0) -> RunConfig:
    """Calibrated two-moons setup for the three-window unlearning study.

    The forget set is a 12-point arc on the upper moon; unlearning is GA plus
    a retain term capped below 0.75 T and a preservation-anchor term on the
    points flanking the arc, capped below 0.25 T.
    """
    return RunConfig(
        dataset=cfgmod.DatasetSpec(kind="two-moons", n_samples=1000, noise=0.05,
                                   forget_indices=tuple(range(70, 190, 10)),
                                   seed=seed),
        arch=cfgmod.ArchConfig(hidden=(128, 128, 128), emb_dim=16),
        schedule=cfgmod.ScheduleConfig(T=200, beta_start=1e-4, beta_end=0.1),
        objective=cfgmod.ObjectiveConfig(kind="ga", retain_weight=1.5,
                                         retain_t_max_frac=0.75,
                                         retain_anchors=12,
                                         retain_anchor_gap=0.13,
                                         anchor_weight=14.0,
                                         anchor_mode="preserve",
                                         anchor_t_max_frac=0.25),
        time_window=cfgmod.TimeWindowSpec(k=0.0, t1_frac=0.25, t2_frac=0.75),
        freq_filter=None,
        train=cfgmod.TrainConfig(lr=2e-3, steps=10000, batch_size=256,
                                 plateau_window=1000, plateau_tol=3e-4),
        optimizer=cfgmod.OptimizerConfig(lr=1e-4, steps=800, batch_size=52,
                                         clip_norm=1.0),
        eval=cfgmod.EvalConfig(cadence=0, n_sample=1000, hit_radius=0.1,
                               coverage_radius=0.1),
        seed=seed,
    )


def toyfig_sweep(cfg: RunConfig, out_dir=None,
                 windows=TOY_WINDOWS) -> dict:
    """Unlearn the same base model over each timestep window and compare.

    Returns per-window hit-rate/coverage (plus the base values) and, when
    out_dir is given, writes per-window sample files, scatter figures, and a
    summary table.
    """
    ds = make_dataset(cfg.dataset)
    base, sched, _ = train_base(cfg, dataset=ds)
    stream_names = ("base-eval",) + tuple(f"{name}-eval" for name, _, _ in windows)
    streams = _rng_streams(cfg.seed, stream_names)
    base_pts = sample(base, sched, cfg.eval.n_sample, streams["base-eval"])
    refs = _coverage_references(ds, cfg)
    summary = {
        "base": {
            "hit_rate": forget_hit_rate(base_pts, ds.forget, cfg.eval.hit_radius),
            "coverage": retain_coverage(base_pts, refs, cfg.eval.coverage_radius),
        }
    }
    samples_by_window = {"base": base_pts}
    for name, lo, hi in windows:
        wcfg = replace(cfg, time_window=cfgmod.TimeWindowSpec(
            k=cfg.time_window.k if cfg.time_window else 0.0,
            t1_frac=lo, t2_frac=hi))
        record = run_unlearn(wcfg, base, dataset=ds)
        model = record.notes["final_model"]
        pts = sample(model, sched, cfg.eval.n_sample, streams[f"{name}-eval"])
        summary[name] = {
            "hit_rate": forget_hit_rate(pts, ds.forget, cfg.eval.hit_radius),
            "coverage": retain_coverage(pts, refs, cfg.eval.coverage_radius),
        }
        samples_by_window[name] = pts
    if out_dir is not None:
        out = Path(out_dir)
        (out / "samples").mkdir(parents=True, exist_ok=True)
        for name, pts in samples_by_window.items():
            write_array(out / "samples" / f"{name}.f64", pts)
        with open(out / "summary.csv", "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["window", "forget_hit_rate", "retain_coverage"])
            for name in summary:
                writer.writerow([name, repr(summary[name]["hit_rate"]),
                                 repr(summary[name]["coverage"])])
        from .report import render_toyfig
        render_toyfig(out / "figures", ds, samples_by_window, summary)
    return summary
