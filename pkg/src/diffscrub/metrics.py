"""Evaluation metrics: embedding similarities, PSD, gradient-norm diagnostics,
and toy-data hit/coverage rates.

Embeddings are pluggable: any callable producing a unit-norm feature vector
works, so a pretrained copy-detection or self-supervised network can replace
the built-in pixel-space backends without touching the metric code.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .autodiff import grad
from .diffusion import (NoiseSchedule, epsilon_loss, forward_noise,
                        prediction_error, weighted_error_mean)
from .selective import TimeWindowConfig, sample_timesteps, uniform_window
from .spectral import FrequencyFilterConfig, centered_radii, dft2, low_pass


@dataclass(frozen=True)
class Embedding:
    """Deterministic map image -> unit-norm feature vector."""

    fn: Callable[[np.ndarray], np.ndarray]
    descriptor: str

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.fn(np.asarray(x, dtype=np.float64))


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    return v / n if n > 0 else v


def _flatten_cosine(x: np.ndarray) -> np.ndarray:
    v = x.ravel()
    return _unit(v - v.mean())


def _patch_histogram(x: np.ndarray, patch: int = 8, bins: int = 16,
                     lo: float = -2.0, hi: float = 2.0) -> np.ndarray:
    img = np.atleast_2d(x)
    feats = []
    for i in range(0, img.shape[0], patch):
        for j in range(0, img.shape[1], patch):
            block = img[i:i + patch, j:j + patch]
            h, _ = np.histogram(block, bins=bins, range=(lo, hi))
            feats.append(h / max(block.size, 1))
    return _unit(np.concatenate(feats))


def make_embedding(descriptor: str) -> Embedding:
    if descriptor == "flatten-cosine":
        return Embedding(_flatten_cosine, descriptor)
    if descriptor == "patch-histogram":
        return Embedding(_patch_histogram, descriptor)
    raise ValueError(f"unknown embedding {descriptor!r}")


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.dot(a.ravel(), b.ravel()))


# --- SSCD-style scores --------------------------------------------------------

@dataclass(frozen=True)
class SscdNormConfig:
    """Perturbation radius and the denominator form of the normalized score.

    The defaults (rho = 100, squared-norm denominator) implement the
    normalized score verbatim; denominator="norm" instead projects onto a
    unit direction scaled by rho.
    """

    rho: float = 100.0
    eps_div: float = 1e-12
    denominator: str = "squared-norm"  # or "norm"

    def __post_init__(self):
        if self.rho < 0:
            raise ValueError("rho must be >= 0")
        if self.eps_div <= 0:
            raise ValueError("eps_div must be > 0")
        if self.denominator not in ("squared-norm", "norm"):
            raise ValueError(f"bad denominator {self.denominator!r}")


def scaled_rho(numel: int, rho: float = 100.0,
               reference_numel: int = 256 * 256 * 3) -> float:
    """Scale the perturbation radius so per-pixel magnitude is preserved."""
    return rho * np.sqrt(numel / reference_numel)


def sscd_perturbed_input(x0: np.ndarray, x0_hat: np.ndarray,
                         cfg: SscdNormConfig) -> np.ndarray:
    delta = np.asarray(x0_hat, dtype=np.float64) - np.asarray(x0, dtype=np.float64)
    norm = np.linalg.norm(delta)
    denom = norm * norm if cfg.denominator == "squared-norm" else norm
    return x0 + cfg.rho * delta / (denom + cfg.eps_div)


def sscd_norm(x0: np.ndarray, x0_hat: np.ndarray, embed: Embedding,
              cfg: SscdNormConfig = SscdNormConfig()) -> float:
    """Directional similarity after projecting the generation delta onto an
    l2-bounded perturbation of the original."""
    if np.shape(x0) != np.shape(x0_hat):
        raise ValueError(f"shape mismatch {np.shape(x0)} vs {np.shape(x0_hat)}")
    perturbed = sscd_perturbed_input(x0, x0_hat, cfg)
    return cosine(embed(x0), embed(perturbed))


def sscd_plain(x0: np.ndarray, x0_hat: np.ndarray, embed: Embedding) -> float:
    """Cosine similarity of embeddings, no projection."""
    if np.shape(x0) != np.shape(x0_hat):
        raise ValueError(f"shape mismatch {np.shape(x0)} vs {np.shape(x0_hat)}")
    return cosine(embed(x0), embed(x0_hat))


# --- power spectral density -----------------------------------------------------

@dataclass
class PsdCurve:
    """Radially averaged power; bin 0 is the DC bin alone."""

    radii: np.ndarray   # (n_bins,) representative frequency fraction per bin
    power: np.ndarray   # (n_bins,) mean |T(u,v)|^2 per bin
    counts: np.ndarray  # (n_bins,) number of frequency bins averaged

    def total_power(self) -> float:
        return float(np.sum(self.power * self.counts))


def psd_radial(image: np.ndarray, n_bins: int) -> PsdCurve:
    """|dft2|^2 averaged over annuli of the normalized centered radius.

    Bin 0 holds exactly the DC coefficient; bins 1..n_bins-1 partition the
    radii (0, 1] uniformly, so together the bins cover every frequency.
    """
    if n_bins < 2:
        raise ValueError(f"n_bins must be >= 2, got {n_bins}")
    spec = dft2(image)
    H, W = spec.shape
    p = np.abs(np.fft.fftshift(spec.values)) ** 2
    r = centered_radii(H, W)
    idx = np.where(r == 0.0, 0,
                   1 + np.minimum((r * (n_bins - 1)).astype(int), n_bins - 2))
    power = np.zeros(n_bins)
    counts = np.zeros(n_bins)
    np.add.at(power, idx.ravel(), p.ravel())
    np.add.at(counts, idx.ravel(), 1.0)
    nonzero = counts > 0
    power[nonzero] /= counts[nonzero]
    centers = np.concatenate([[0.0],
                              (np.arange(1, n_bins) - 0.5) / (n_bins - 1)])
    return PsdCurve(radii=centers, power=power, counts=counts)


# --- gradient-norm diagnostics ----------------------------------------------------

def grad_norm_of(model, x0: np.ndarray, sched: NoiseSchedule, n_draws: int,
                 rng: np.random.Generator,
                 t_window: tuple[int, int] | None = None) -> float:
    """Mean squared gradient norm of the diffusion loss for one sample.

    Each draw takes one (t, eps) pair; t is uniform over [0, T) or over the
    given half-open window.
    """
    if n_draws < 1:
        raise ValueError("n_draws must be >= 1")
    x0 = np.atleast_2d(np.asarray(x0, dtype=np.float64))
    if t_window is None:
        cfg = uniform_window(sched.T)
    else:
        cfg = TimeWindowConfig(k=0.0, t1=t_window[0], t2=t_window[1], T=sched.T)
    total = 0.0
    for _ in range(n_draws):
        t = sample_timesteps(cfg, len(x0), rng)
        eps = rng.standard_normal(x0.shape)
        loss = epsilon_loss(model, x0, t, eps, sched)
        gs = grad(loss, model.params)
        total += sum(float(np.sum(g * g)) for g in gs.values())
    return total / n_draws


def freq_decomposed_grad_norm(model, x0: np.ndarray, sched: NoiseSchedule,
                              cutoff: float, rng: np.random.Generator,
                              shape: tuple[int, int], n_draws: int = 1
                              ) -> tuple[float, float]:
    """Gradient norms with the noisy input split into low/high-frequency parts.

    x_t is decomposed as low = low_pass(x_t, r_t=cutoff, s=0) and
    high = x_t - low; each component is substituted as the model input with
    the same (t, eps) draw and the squared gradient norms are averaged.
    """
    if not (0.0 < cutoff < 1.0):
        raise ValueError(f"cutoff must be in (0, 1), got {cutoff}")
    cfg = FrequencyFilterConfig(r_t=cutoff, s=0.0)
    x0 = np.atleast_2d(np.asarray(x0, dtype=np.float64))
    H, W = shape
    totals = [0.0, 0.0]
    for _ in range(n_draws):
        t = sample_timesteps(uniform_window(sched.T), len(x0), rng)
        eps = rng.standard_normal(x0.shape)
        x_t = forward_noise(x0, t, eps, sched)
        low = np.stack([low_pass(row.reshape(H, W), cfg).ravel() for row in x_t])
        high = x_t - low
        for slot, comp in enumerate((low, high)):
            loss = weighted_error_mean(
                prediction_error(model, comp, t, eps), t, sched)
            gs = grad(loss, model.params)
            totals[slot] += sum(float(np.sum(g * g)) for g in gs.values())
    return totals[0] / n_draws, totals[1] / n_draws


# --- trajectories and toy-data rates -----------------------------------------------

def similarity_trajectory(x0: np.ndarray, dataset: np.ndarray,
                          sched: NoiseSchedule, embed: Embedding,
                          rng: np.random.Generator,
                          t_values: np.ndarray | None = None,
                          n_draws: int = 8) -> dict:
    """Embedding similarity of x_t to x0 and to x0's nearest neighbor.

    The neighbor is the closest dataset row by embedding similarity with x0
    itself excluded.  Similarities are averaged over noise draws per t.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    dataset = np.asarray(dataset, dtype=np.float64)
    e0 = embed(x0)
    sims = np.array([cosine(e0, embed(row)) for row in dataset])
    sims[[i for i, row in enumerate(dataset)
          if np.array_equal(row, x0)]] = -np.inf
    nn = dataset[int(np.argmax(sims))]
    e_nn = embed(nn)
    if t_values is None:
        t_values = np.unique(np.linspace(0, sched.T - 1, 16).astype(int))
    sim_x0, sim_nn = [], []
    for t in t_values:
        acc0 = accn = 0.0
        reps = 1 if t == 0 else n_draws
        for _ in range(reps):
            eps = rng.standard_normal(x0.shape)
            x_t = forward_noise(x0, int(t), eps, sched)
            e_t = embed(x_t)
            acc0 += cosine(e_t, e0)
            accn += cosine(e_t, e_nn)
        sim_x0.append(acc0 / reps)
        sim_nn.append(accn / reps)
    return {"t": np.asarray(t_values), "sim_x0": np.array(sim_x0),
            "sim_nn": np.array(sim_nn)}


def forget_hit_rate(samples: np.ndarray, forget_points: np.ndarray,
                    radius: float) -> float:
    """Fraction of samples within L2 radius of any forget point."""
    if radius <= 0:
        raise ValueError("radius must be > 0")
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    forget_points = np.atleast_2d(np.asarray(forget_points, dtype=np.float64))
    d = np.linalg.norm(samples[:, None, :] - forget_points[None, :, :], axis=2)
    return float(np.mean(d.min(axis=1) <= radius))


def retain_coverage(samples: np.ndarray, retain_manifold: np.ndarray,
                    radius: float) -> float:
    """Fraction of reference points with at least one sample within radius."""
    if radius <= 0:
        raise ValueError("radius must be > 0")
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    retain_manifold = np.atleast_2d(np.asarray(retain_manifold, dtype=np.float64))
    d = np.linalg.norm(retain_manifold[:, None, :] - samples[None, :, :], axis=2)
    return float(np.mean(d.min(axis=1) <= radius))
