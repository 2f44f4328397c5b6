"""Unlearning losses: gradient ascent, EraseDiff, SISS, and DPO/KTO variants.

All losses consume an UnlearnBatch (data plus the sampled timesteps and noise
draws) and produce a differentiable scalar.  Batch construction is factored
into draw_batch so the selective wrapper can swap the timestep distribution
without touching any loss; given a fixed batch every loss is deterministic up
to the extra draws it takes from its rng argument.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .autodiff import (NonFiniteError, Tensor, add, concat, log, mul,
                       no_grad, sigmoid, tmean)
from .diffusion import (Denoiser, NoiseSchedule, abar_at, forward_noise,
                        prediction_error, sigma_at, weighted_error_mean)
from .optim import Adam, clip_by_global_norm
from .selective import BranchFilters, TimeWindowConfig, sample_timesteps, uniform_window


class UnlearnAbort(RuntimeError):
    """A step produced a non-finite loss or gradient."""

    def __init__(self, step: int, message: str):
        super().__init__(f"unlearning aborted at step {step}: {message}")
        self.step = step


@dataclass
class UnlearnBatch:
    """One step's worth of samples and their (t, eps) draws.

    forget and retain rows are flattened samples; the two sets are disjoint
    by construction of the dataset split.
    """

    forget: np.ndarray       # (nf, d)
    retain: np.ndarray       # (nr, d)
    t_forget: np.ndarray     # (nf,)
    t_retain: np.ndarray     # (nr,)
    eps_forget: np.ndarray   # (nf, d)
    eps_retain: np.ndarray   # (nr, d)


def draw_batch(forget: np.ndarray, retain: np.ndarray, sched: NoiseSchedule,
               rng: np.random.Generator,
               time_cfg: TimeWindowConfig | None = None,
               n_retain: int | None = None,
               fixed_retain: np.ndarray | None = None) -> UnlearnBatch:
    """Assemble a step batch: full forget set plus a sampled retain batch.

    fixed_retain rows (anchor points) are included in every batch ahead of
    the sampled pool rows.  Draw order is fixed (retain rows, forget t,
    retain t, forget eps, retain eps) so that runs with identical seeds
    consume the stream identically regardless of the objective.
    """
    forget = np.asarray(forget, dtype=np.float64)
    retain = np.asarray(retain, dtype=np.float64)
    cfg = time_cfg if time_cfg is not None else uniform_window(sched.T)
    nf = len(forget)
    nr = nf if n_retain is None else int(n_retain)
    if fixed_retain is not None and len(fixed_retain):
        n_pool = max(nr - len(fixed_retain), 0)
        rows = rng.integers(0, len(retain), n_pool) if n_pool \
            else np.empty(0, dtype=np.int64)
        retain_batch = np.concatenate([np.asarray(fixed_retain, dtype=np.float64),
                                       retain[rows]])
    else:
        rows = rng.integers(0, len(retain), nr) if nr else np.empty(0, dtype=np.int64)
        retain_batch = retain[rows] if nr else retain[:0]
    t_f = sample_timesteps(cfg, nf, rng)
    t_r = sample_timesteps(cfg, len(retain_batch), rng)
    eps_f = rng.standard_normal(forget.shape)
    eps_r = rng.standard_normal(retain_batch.shape)
    return UnlearnBatch(forget=forget, retain=retain_batch, t_forget=t_f,
                        t_retain=t_r, eps_forget=eps_f, eps_retain=eps_r)


def _noisy(x0: np.ndarray, t: np.ndarray, eps: np.ndarray, sched: NoiseSchedule,
           filt: Callable | None, filter_target: bool) -> tuple[np.ndarray, np.ndarray]:
    """Noisy model input and its regression target, optionally filtered."""
    x_t = forward_noise(x0, t, eps, sched)
    target = eps
    if filt is not None:
        x_t = filt(x_t)
        if filter_target:
            target = filt(eps)
    return x_t, target


def _branch_error(model, x0, t, eps, sched, filt, filter_target) -> Tensor:
    x_t, target = _noisy(x0, t, eps, sched, filt, filter_target)
    return prediction_error(model, x_t, t, target)


# --- gradient ascent ---------------------------------------------------------

def ga_loss(model, batch: UnlearnBatch, sched: NoiseSchedule, rng=None,
            filters: BranchFilters | None = None) -> Tensor:
    """Negated diffusion loss on the forget set (ascent as descent)."""
    if len(batch.forget) == 0:
        raise ValueError("ga_loss: empty forget batch")
    f = filters or BranchFilters()
    err = _branch_error(model, batch.forget, batch.t_forget, batch.eps_forget,
                        sched, f.forget, f.filter_target)
    return mul(weighted_error_mean(err, batch.t_forget, sched), -1.0)


def retain_term(model, batch: UnlearnBatch, sched: NoiseSchedule,
                filters: BranchFilters | None = None) -> Tensor:
    """Plain diffusion loss on the retain rows of a batch."""
    if len(batch.retain) == 0:
        raise ValueError("retain_term: empty retain batch")
    f = filters or BranchFilters()
    err = _branch_error(model, batch.retain, batch.t_retain, batch.eps_retain,
                        sched, f.retain, f.filter_target)
    return weighted_error_mean(err, batch.t_retain, sched)


def with_retain_term(objective: Callable, weight: float) -> Callable:
    """Compose objective + weight * retain diffusion loss (forget-and-retain form)."""
    if weight == 0.0:
        return objective

    def composed(model, batch, sched, rng, filters=None):
        loss = objective(model, batch, sched, rng, filters=filters)
        return add(loss, mul(retain_term(model, batch, sched, filters), weight))

    return composed


# --- EraseDiff ---------------------------------------------------------------

def erasediff_loss(model, batch: UnlearnBatch, sched: NoiseSchedule,
                   rng: np.random.Generator, beta_retain: float = 1.0,
                   filters: BranchFilters | None = None) -> Tensor:
    """Regress forget predictions onto fresh data-independent noise.

    The score target -eps'/sigma_t becomes plain eps' in epsilon space; the
    retain set trains normally, scaled by beta_retain.
    """
    if len(batch.forget) == 0:
        raise ValueError("erasediff_loss: empty forget batch")
    if beta_retain != 0.0 and len(batch.retain) == 0:
        raise ValueError("erasediff_loss: empty retain batch with beta_retain != 0")
    f = filters or BranchFilters()
    eps_prime = rng.standard_normal(batch.forget.shape)
    x_t, _ = _noisy(batch.forget, batch.t_forget, batch.eps_forget, sched,
                    f.forget, f.filter_target)
    target = f.forget(eps_prime) if (f.forget is not None and f.filter_target) \
        else eps_prime
    err = prediction_error(model, x_t, batch.t_forget, target)
    loss = weighted_error_mean(err, batch.t_forget, sched)
    if beta_retain != 0.0:
        loss = add(loss, mul(retain_term(model, batch, sched, filters),
                             beta_retain))
    return loss


# --- SISS --------------------------------------------------------------------

@dataclass(frozen=True)
class SissConfig:
    """Mixture proportion, forget amplifier, and the importance toggle."""

    lam: float = 0.5
    beta_siss: float = 0.0
    importance_sampling: bool = True

    def __post_init__(self):
        if not (0.0 < self.lam < 1.0):
            raise ValueError(f"lambda must be strictly inside (0, 1), got {self.lam}")
        if self.beta_siss < 0.0:
            raise ValueError(f"beta_siss must be >= 0, got {self.beta_siss}")


def siss_sample_mixture(x: np.ndarray, x_prime: np.ndarray, t, lam: float,
                        sched: NoiseSchedule, rng: np.random.Generator
                        ) -> tuple[np.ndarray, np.ndarray]:
    """Draw m_t from the lambda-mixture of the two noising kernels.

    Returns (m_t, branch) where branch is True when the forget component
    (anchor x) was selected.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    x_prime = np.atleast_2d(np.asarray(x_prime, dtype=np.float64))
    if x.shape != x_prime.shape:
        raise ValueError(f"siss mixture: shapes {x.shape} vs {x_prime.shape}")
    branch = rng.random(len(x)) < lam
    eps = rng.standard_normal(x.shape)
    anchor = np.where(branch[:, None], x, x_prime)
    return forward_noise(anchor, t, eps, sched), branch


def _gaussian_logpdf(m: np.ndarray, mean: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    d = m.shape[1]
    s2 = sigma ** 2
    return -0.5 * (d * np.log(2.0 * np.pi * s2)
                   + np.sum((m - mean) ** 2, axis=1) / s2)


def siss_weights(m_t: np.ndarray, x: np.ndarray, x_prime: np.ndarray, t,
                 lam: float, sched: NoiseSchedule) -> tuple[np.ndarray, np.ndarray]:
    """Importance weights q(m|x') / q_lam and q(m|x) / q_lam.

    Computed from Gaussian log-densities in log-sum-exp form.  Requires
    t >= 1 (the t = 0 kernel is a point mass with no density).
    """
    m_t = np.atleast_2d(np.asarray(m_t, dtype=np.float64))
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    x_prime = np.atleast_2d(np.asarray(x_prime, dtype=np.float64))
    t = np.broadcast_to(np.asarray(t, dtype=np.int64), (len(m_t),))
    if t.min() < 1:
        raise ValueError("siss_weights: t must be >= 1 (zero-noise kernel is "
                         "degenerate)")
    root = np.sqrt(abar_at(sched, t))[:, None]
    sig = sigma_at(sched, t)
    log_f = _gaussian_logpdf(m_t, root * x, sig)         # forget component
    log_k = _gaussian_logpdf(m_t, root * x_prime, sig)   # keep component
    log_mix = np.logaddexp(np.log(lam) + log_f, np.log1p(-lam) + log_k)
    if not (np.all(np.isfinite(log_mix)) and np.all(np.isfinite(log_f))
            and np.all(np.isfinite(log_k))):
        raise NonFiniteError("siss_weights: non-finite log densities")
    return np.exp(log_k - log_mix), np.exp(log_f - log_mix)


def siss_loss(model, batch: UnlearnBatch, sched: NoiseSchedule,
              rng: np.random.Generator, cfg: SissConfig = SissConfig(),
              filters: BranchFilters | None = None) -> Tensor:
    """Mixture importance-sampled unlearning loss over forget/retain pairs.

    Timesteps are clamped to >= 1: the mixture densities do not exist at the
    zero-noise state.  Targets are the epsilon-space scores of each anchor:
    eps_a = (m_t - sqrt(abar_t) * a) / sigma_t.
    """
    if len(batch.forget) == 0 or len(batch.retain) == 0:
        raise ValueError("siss_loss: needs nonempty forget and retain batches")
    if len(batch.forget) != len(batch.retain):
        raise ValueError("siss_loss: forget/retain rows must be paired")
    f = filters or BranchFilters()
    x, xp = batch.forget, batch.retain
    t = np.maximum(batch.t_forget, 1)
    m_t, _ = siss_sample_mixture(x, xp, t, cfg.lam, sched, rng)
    if cfg.importance_sampling:
        w_keep, w_forget = siss_weights(m_t, x, xp, t, cfg.lam, sched)
    else:
        w_keep = w_forget = np.ones(len(x))
    root = np.sqrt(abar_at(sched, t))[:, None]
    sig = sigma_at(sched, t)[:, None]
    eps_keep = (m_t - root * xp) / sig
    eps_forget = (m_t - root * x) / sig
    m_forget_in = f.forget(m_t) if f.forget is not None else m_t
    m_keep_in = f.retain(m_t) if f.retain is not None else m_t
    if f.filter_target:
        eps_forget = f.forget(eps_forget) if f.forget is not None else eps_forget
        eps_keep = f.retain(eps_keep) if f.retain is not None else eps_keep
    err_keep = prediction_error(model, m_keep_in, t, eps_keep)
    err_forget = prediction_error(model, m_forget_in, t, eps_forget)
    per_pair = add(mul(err_keep, Tensor(w_keep)),
                   mul(err_forget, Tensor(-(1.0 + cfg.beta_siss) * w_forget)))
    return tmean(per_pair)


# --- preference losses ---------------------------------------------------------

@dataclass
class PreferenceConfig:
    """Inverse temperature, frozen reference model, and KTO term weights."""

    beta_pref: float = 1.0
    reference: Denoiser | None = None
    kto_weights: tuple[float, float] = (1.0, 1.0)  # (desirable, undesirable)

    def __post_init__(self):
        if self.beta_pref <= 0.0:
            raise ValueError(f"beta_pref must be > 0, got {self.beta_pref}")


def _reference_error(reference, x_t, t, target) -> np.ndarray:
    with no_grad():
        return prediction_error(reference, x_t, t, target).data


def dpo_forget_loss(model, batch: UnlearnBatch, sched: NoiseSchedule,
                    rng=None, cfg: PreferenceConfig = None,
                    filters: BranchFilters | None = None) -> Tensor:
    """Preference loss with retain as winner and forget as loser.

    Per pair: -log sigmoid(beta * (delta_forget - delta_retain)) where
    delta = err_theta - err_reference; minimizing raises the forget error
    relative to the frozen reference while anchoring the retain error.
    At theta = reference the loss is exactly log 2.
    """
    if cfg is None or cfg.reference is None:
        raise ValueError("dpo_forget_loss: missing reference snapshot")
    nf, nr = len(batch.forget), len(batch.retain)
    if nf == 0 or nr != nf:
        raise ValueError("dpo_forget_loss: needs paired forget/retain rows")
    f = filters or BranchFilters()
    t = batch.t_forget  # shared per pair
    xf, tf = _noisy(batch.forget, t, batch.eps_forget, sched,
                    f.forget, f.filter_target)
    xr, tr = _noisy(batch.retain, t, batch.eps_retain, sched,
                    f.retain, f.filter_target)
    d_forget = prediction_error(model, xf, t, tf) \
        - Tensor(_reference_error(cfg.reference, xf, t, tf))
    d_retain = prediction_error(model, xr, t, tr) \
        - Tensor(_reference_error(cfg.reference, xr, t, tr))
    z = mul(d_forget - d_retain, cfg.beta_pref)
    return tmean(mul(log(sigmoid(z)), -1.0))


def kto_forget_loss(model, batch: UnlearnBatch, sched: NoiseSchedule,
                    rng=None, cfg: PreferenceConfig = None,
                    filters: BranchFilters | None = None) -> Tensor:
    """Pair-free preference loss with a batch-mean reference margin.

    Margins are m = beta * (err_theta - err_reference) per sample and z_ref
    is the batch mean of all margins (kept in the graph so the loss is
    cleanly differentiable).  Forget (undesirable) terms 1 - sigmoid(m -
    z_ref) push the forget error up; retain (desirable) terms
    1 - sigmoid(z_ref - m) pull the retain error down.  At theta = reference
    the loss is (w_d + w_u) / 2.
    """
    if cfg is None or cfg.reference is None:
        raise ValueError("kto_forget_loss: missing reference snapshot")
    if len(batch.forget) == 0 and len(batch.retain) == 0:
        raise ValueError("kto_forget_loss: empty batch")
    f = filters or BranchFilters()
    w_d, w_u = cfg.kto_weights
    parts: list[tuple[str, Tensor]] = []
    if len(batch.forget):
        xf, tf = _noisy(batch.forget, batch.t_forget, batch.eps_forget, sched,
                        f.forget, f.filter_target)
        m_f = mul(prediction_error(model, xf, batch.t_forget, tf)
                  - Tensor(_reference_error(cfg.reference, xf, batch.t_forget, tf)),
                  cfg.beta_pref)
        parts.append(("forget", m_f))
    if len(batch.retain):
        xr, tr = _noisy(batch.retain, batch.t_retain, batch.eps_retain, sched,
                        f.retain, f.filter_target)
        m_r = mul(prediction_error(model, xr, batch.t_retain, tr)
                  - Tensor(_reference_error(cfg.reference, xr, batch.t_retain, tr)),
                  cfg.beta_pref)
        parts.append(("retain", m_r))
    z_ref = tmean(concat([m for _, m in parts], axis=0))
    loss = Tensor(0.0)
    for kind, m in parts:
        if kind == "forget":
            term = tmean(add(mul(sigmoid(add(m, mul(z_ref, -1.0))), -1.0), 1.0))
            loss = add(loss, mul(term, w_u))
        else:
            term = tmean(add(mul(sigmoid(add(z_ref, mul(m, -1.0))), -1.0), 1.0))
            loss = add(loss, mul(term, w_d))
    return loss


# --- the update step -----------------------------------------------------------

@dataclass
class UnlearnRun:
    """Mutable state of one unlearning experiment."""

    model: Denoiser
    sched: NoiseSchedule
    step_fn: Callable                 # (model, forget, retain, sched, rng, ...)
    opt: Adam
    forget: np.ndarray
    retain: np.ndarray
    n_retain: int | None = None
    fixed_retain: np.ndarray | None = None
    clip_norm: float = 1.0
    step: int = 0
    history: list = field(default_factory=list)


def unlearn_step(run: UnlearnRun, rng: np.random.Generator) -> dict:
    """One optimizer update on the run's objective; returns the step record."""
    from .autodiff import grad  # local import keeps module load order simple
    try:
        loss = run.step_fn(run.model, run.forget, run.retain, run.sched, rng,
                           n_retain=run.n_retain, fixed_retain=run.fixed_retain)
        grads = grad(loss, run.model.params)
    except NonFiniteError as exc:
        raise UnlearnAbort(run.step, str(exc)) from exc
    grads, norm = clip_by_global_norm(grads, run.clip_norm)
    run.opt.step(grads)
    rec = {"step": run.step, "loss": float(loss.data), "grad_norm": norm}
    run.step += 1
    run.history.append(rec)
    return rec
