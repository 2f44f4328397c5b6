"""Non-uniform timestep selection and the selective objective wrapper.

The timestep distribution concentrates mass (1 - k) on a half-open window
[t1, t2) and spreads the remaining k uniformly over the other steps.  With
k = 0 and the full window this reduces bitwise to the uniform sampler, which
is what every objective uses by default; wrapping an objective therefore only
swaps the distribution and (optionally) a frequency filter into the exact
same code path.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .spectral import FrequencyFilterConfig, low_pass_batch

APPLY_FILTER_CHOICES = ("forget-only", "forget-and-retain")


@dataclass(frozen=True)
class TimeWindowConfig:
    """Window [t1, t2) gets probability mass 1 - k; the rest shares k."""

    k: float
    t1: int
    t2: int
    T: int

    def __post_init__(self):
        if not (0 <= self.t1 < self.t2 <= self.T):
            raise ValueError(
                f"need 0 <= t1 < t2 <= T, got t1={self.t1}, t2={self.t2}, T={self.T}")
        if not (0.0 <= self.k <= 1.0):
            raise ValueError(f"k must be in [0, 1], got {self.k}")


def uniform_window(T: int) -> TimeWindowConfig:
    """The degenerate config whose pmf is exactly uniform over [0, T)."""
    return TimeWindowConfig(k=0.0, t1=0, t2=T, T=T)


def timestep_pmf(cfg: TimeWindowConfig) -> np.ndarray:
    """Probability of each t in [0, T); sums to 1 up to float rounding."""
    n_in = cfg.t2 - cfg.t1
    n_out = cfg.T - n_in
    pmf = np.empty(cfg.T)
    if n_out == 0:
        # full window: all mass is inside regardless of k
        pmf.fill(1.0 / cfg.T)
        return pmf
    pmf.fill(cfg.k / n_out)
    pmf[cfg.t1:cfg.t2] = (1.0 - cfg.k) / n_in
    return pmf


def pdf(cfg: TimeWindowConfig, t: int) -> float:
    """Pointwise pmf value at integer t."""
    if not (0 <= t < cfg.T):
        raise ValueError(f"t={t} out of range [0, {cfg.T})")
    n_in = cfg.t2 - cfg.t1
    n_out = cfg.T - n_in
    if n_out == 0:
        return 1.0 / cfg.T
    if cfg.t1 <= t < cfg.t2:
        return (1.0 - cfg.k) / n_in
    return cfg.k / n_out


def sample_timesteps(cfg: TimeWindowConfig, n: int,
                     rng: np.random.Generator) -> np.ndarray:
    """n draws from the window pmf via inverse CDF."""
    cum = np.cumsum(timestep_pmf(cfg))
    idx = np.searchsorted(cum, rng.random(n), side="right")
    return np.minimum(idx, cfg.T - 1).astype(np.int64)


def sample_timestep(cfg: TimeWindowConfig, rng: np.random.Generator) -> int:
    return int(sample_timesteps(cfg, 1, rng)[0])


@dataclass(frozen=True)
class BranchFilters:
    """Per-branch noisy-input transforms applied inside a loss."""

    forget: Callable[[np.ndarray], np.ndarray] | None = None
    retain: Callable[[np.ndarray], np.ndarray] | None = None
    filter_target: bool = False


def make_input_filter(freq_cfg: FrequencyFilterConfig | None,
                      data_shape: tuple[int, ...] | None,
                      apply_filter_to: str = "forget-only") -> BranchFilters:
    """Build branch filters from a frequency config.

    For non-grid data (data_shape is not 2-D) the filter is the identity:
    frequency filtering is only defined for image-shaped samples.  s = 1 is
    also short-circuited to the identity so that an inert filter stays
    bitwise-invisible.
    """
    if apply_filter_to not in APPLY_FILTER_CHOICES:
        raise ValueError(f"apply_filter_to must be one of {APPLY_FILTER_CHOICES}")
    if (freq_cfg is None or freq_cfg.s == 1.0
            or data_shape is None or len(data_shape) != 2):
        return BranchFilters()
    shape = (int(data_shape[0]), int(data_shape[1]))

    def filt(x: np.ndarray) -> np.ndarray:
        return low_pass_batch(x, shape, freq_cfg)

    return BranchFilters(
        forget=filt,
        retain=filt if apply_filter_to == "forget-and-retain" else None,
        filter_target=freq_cfg.filter_target,
    )


def selective_wrap(objective: Callable, time_cfg: TimeWindowConfig | None,
                   freq_cfg: FrequencyFilterConfig | None,
                   apply_filter_to: str = "forget-only",
                   data_shape: tuple[int, ...] | None = None) -> Callable:
    """Compose time selection and frequency filtering around an objective.

    `objective` is a batch-level loss fn(model, batch, sched, rng, filters).
    The result is a step-level loss fn(model, forget, retain, sched, rng)
    that draws timesteps from the window pmf (uniform when time_cfg is None)
    and routes the low-pass filter to the configured branches.
    """
    from .objectives import draw_batch  # deferred: objectives uses our sampler

    filters = make_input_filter(freq_cfg, data_shape, apply_filter_to)

    def wrapped(model, forget: np.ndarray, retain: np.ndarray, sched, rng,
                n_retain: int | None = None,
                fixed_retain: np.ndarray | None = None):
        cfg = time_cfg if time_cfg is not None else uniform_window(sched.T)
        batch = draw_batch(forget, retain, sched, rng, time_cfg=cfg,
                           n_retain=n_retain, fixed_retain=fixed_retain)
        wrapped.last_batch = batch
        return objective(model, batch, sched, rng, filters=filters)

    return wrapped
