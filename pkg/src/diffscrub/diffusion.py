"""Noise schedules, forward noising, the MLP denoiser, and ancestral sampling.

Timestep convention: ``t`` counts applied noising steps, so state ``t = 0`` is
the clean sample (``abar = 1``, ``sigma = 0``) and state ``t`` for ``t >= 1``
uses the cumulative product ``alpha_bar[t - 1]``.  This makes a single reverse
step from ``t = 1`` an exact inversion of the forward step, and
``denoise_from(x0, 0)`` the identity.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .autodiff import (Tensor, ShapeError, as_tensor, add, concat, matmul,
                       mul, no_grad, square, tanh, tmean)

CHECKPOINT_MAGIC = b"DSCK"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step diffusion coefficients for T discrete steps."""

    T: int
    beta: np.ndarray        # (T,) in (0, 1)
    alpha_bar: np.ndarray   # (T,) cumulative product of (1 - beta)
    sigma: np.ndarray       # (T,) sqrt(1 - alpha_bar)
    loss_weight: np.ndarray  # (T,) per-step loss weight, default 1
    kind: str = "linear"
    beta_start: float = 1e-4
    beta_end: float = 2e-2


def make_schedule(T: int, beta_start: float = 1e-4, beta_end: float = 2e-2,
                  kind: str = "linear",
                  loss_weight: np.ndarray | None = None) -> NoiseSchedule:
    if kind != "linear":
        raise ValueError(f"unknown schedule kind {kind!r}")
    if T < 2:
        raise ValueError(f"T must be >= 2, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError(
            f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})")
    beta = np.linspace(beta_start, beta_end, T)
    alpha_bar = np.cumprod(1.0 - beta)
    sigma = np.sqrt(1.0 - alpha_bar)
    if loss_weight is None:
        loss_weight = np.ones(T)
    else:
        loss_weight = np.asarray(loss_weight, dtype=np.float64)
        if loss_weight.shape != (T,):
            raise ValueError(f"loss_weight must have shape ({T},)")
    return NoiseSchedule(T=T, beta=beta, alpha_bar=alpha_bar, sigma=sigma,
                         loss_weight=loss_weight, kind=kind,
                         beta_start=float(beta_start), beta_end=float(beta_end))


def _check_t(t: np.ndarray | int, T: int) -> np.ndarray:
    t = np.asarray(t, dtype=np.int64)
    if t.size and (t.min() < 0 or t.max() >= T):
        raise ValueError(f"timestep out of range [0, {T}): {t.min()}..{t.max()}")
    return t


def abar_at(sched: NoiseSchedule, t) -> np.ndarray:
    """Cumulative alpha for state t; state 0 is noiseless (abar = 1)."""
    t = _check_t(t, sched.T)
    idx = np.maximum(t - 1, 0)
    return np.where(t == 0, 1.0, sched.alpha_bar[idx])


def sigma_at(sched: NoiseSchedule, t) -> np.ndarray:
    return np.sqrt(1.0 - abar_at(sched, t))


def forward_noise(x0: np.ndarray, t, eps: np.ndarray,
                  sched: NoiseSchedule) -> np.ndarray:
    """DDPM forward noising: sqrt(abar_t) x0 + sqrt(1 - abar_t) eps."""
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise ShapeError(f"forward_noise: x0 {x0.shape} vs eps {eps.shape}")
    abar = abar_at(sched, t)
    a = np.sqrt(abar)
    s = np.sqrt(1.0 - abar)
    if np.ndim(a) == 1 and x0.ndim > 1:
        a = a.reshape((-1,) + (1,) * (x0.ndim - 1))
        s = s.reshape((-1,) + (1,) * (x0.ndim - 1))
    return a * x0 + s * eps


# denoiser -------------------------------------------------------------------

@dataclass(frozen=True)
class ArchSpec:
    """Shape of the epsilon-prediction MLP."""

    data_dim: int
    hidden: tuple[int, ...] = (64, 64)
    emb_dim: int = 16
    activation: str = "tanh"


def timestep_embedding(t, emb_dim: int) -> np.ndarray:
    """Sinusoidal features of integer timesteps, shape (n, emb_dim)."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = emb_dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half - 1, 1))
    ang = t[:, None] * freqs[None, :]
    emb = np.concatenate([np.sin(ang), np.cos(ang)], axis=1)
    if emb.shape[1] < emb_dim:  # odd emb_dim, pad with zeros
        emb = np.concatenate([emb, np.zeros((emb.shape[0], 1))], axis=1)
    return emb


class Denoiser:
    """MLP epsilon-predictor conditioned on t via concatenated embeddings.

    Input contract: (x_t of shape (n, d), t of shape (n,)) -> (n, d).
    """

    def __init__(self, arch: ArchSpec, rng: np.random.Generator):
        if arch.activation != "tanh":
            raise ValueError(f"unsupported activation {arch.activation!r}")
        self.arch = arch
        sizes = [arch.data_dim + arch.emb_dim, *arch.hidden, arch.data_dim]
        self.params: list[Tensor] = []
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            w = rng.standard_normal((fan_in, fan_out)) * np.sqrt(1.0 / fan_in)
            self.params.append(Tensor(w, requires_grad=True, name=f"w{i}"))
            self.params.append(Tensor(np.zeros(fan_out), requires_grad=True,
                                      name=f"b{i}"))

    def __call__(self, x, t) -> Tensor:
        x = as_tensor(x)
        if x.data.ndim != 2 or x.shape[1] != self.arch.data_dim:
            raise ShapeError(
                f"denoiser expects (n, {self.arch.data_dim}), got {x.shape}")
        n = x.shape[0]
        t = np.broadcast_to(np.asarray(t, dtype=np.int64), (n,))
        h = concat([x, Tensor(timestep_embedding(t, self.arch.emb_dim))], axis=1)
        n_layers = len(self.params) // 2
        for i in range(n_layers):
            w, b = self.params[2 * i], self.params[2 * i + 1]
            h = add(matmul(h, w), b)
            if i < n_layers - 1:
                h = tanh(h)
        return h

    def param_arrays(self) -> list[np.ndarray]:
        return [p.data for p in self.params]

    def set_param_arrays(self, arrays: list[np.ndarray]) -> None:
        if len(arrays) != len(self.params):
            raise ValueError("parameter count mismatch")
        for p, a in zip(self.params, arrays):
            if p.data.shape != a.shape:
                raise ValueError(f"shape mismatch for {p.name}: "
                                 f"{p.data.shape} vs {a.shape}")
            p.data = np.asarray(a, dtype=np.float64).copy()

    def copy(self) -> "Denoiser":
        clone = Denoiser.__new__(Denoiser)
        clone.arch = self.arch
        clone.params = [Tensor(p.data.copy(), requires_grad=True, name=p.name)
                        for p in self.params]
        return clone


# losses ---------------------------------------------------------------------

def prediction_error(model, x_t: np.ndarray, t, target: np.ndarray) -> Tensor:
    """Per-sample mean squared prediction error, shape (n,)."""
    pred = model(x_t, t)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {pred.shape} vs target {target.shape}")
    return tmean(square(add(pred, mul(Tensor(target), -1.0))), axis=1)


def weighted_error_mean(err: Tensor, t, sched: NoiseSchedule) -> Tensor:
    w = sched.loss_weight[_check_t(t, sched.T)]
    return tmean(mul(err, Tensor(w)))


def epsilon_loss(model, x0: np.ndarray, t, eps: np.ndarray,
                 sched: NoiseSchedule) -> Tensor:
    """Batch-mean of w_t * ||eps_hat(x_t, t) - eps||^2 / numel."""
    x_t = forward_noise(x0, t, eps, sched)
    n = x_t.shape[0]
    t = np.broadcast_to(np.asarray(t, dtype=np.int64), (n,))
    return weighted_error_mean(prediction_error(model, x_t, t, eps), t, sched)


# sampling ---------------------------------------------------------------------

def reverse_step(model, x_t: np.ndarray, t: int, sched: NoiseSchedule,
                 noise: np.ndarray | None = None) -> np.ndarray:
    """One DDPM ancestral update x_t -> x_{t-1}; deterministic when noise=None.

    At t = 0 the state is already clean and the update is the identity.  The
    noise scale is the posterior standard deviation, which vanishes at t = 1,
    so the final step is always the exact inversion of the forward step.
    """
    _check_t(t, sched.T)
    t = int(t)
    if t == 0:
        return np.array(x_t, dtype=np.float64, copy=True)
    beta_t = sched.beta[t - 1]
    abar_t = float(abar_at(sched, t))
    abar_prev = float(abar_at(sched, t - 1))
    with no_grad():
        eps_hat = model(np.asarray(x_t, dtype=np.float64),
                        np.full(len(x_t), t, dtype=np.int64)).data
    mean = (x_t - beta_t / np.sqrt(1.0 - abar_t) * eps_hat) / np.sqrt(1.0 - beta_t)
    if noise is not None:
        var = beta_t * (1.0 - abar_prev) / (1.0 - abar_t)
        mean = mean + np.sqrt(var) * np.asarray(noise)
    return mean


def denoise_from(model, x0: np.ndarray, t_start: int, sched: NoiseSchedule,
                 rng: np.random.Generator) -> np.ndarray:
    """Noise x0 up to t_start, then reverse back down to a clean estimate.

    This is the memorization probe: a model that has memorized x0 will walk
    the noisy point back to (nearly) x0.
    """
    _check_t(t_start, sched.T)
    x0 = np.asarray(x0, dtype=np.float64)
    single = x0.ndim == 1
    if single:
        x0 = x0[None, :]
    if t_start == 0:
        return x0[0].copy() if single else x0.copy()
    eps = rng.standard_normal(x0.shape)
    x = forward_noise(x0, t_start, eps, sched)
    for t in range(t_start, 0, -1):
        noise = rng.standard_normal(x.shape) if t > 1 else None
        x = reverse_step(model, x, t, sched, noise=noise)
    return x[0] if single else x


def sample(model, sched: NoiseSchedule, n: int, rng: np.random.Generator,
           data_dim: int | None = None) -> np.ndarray:
    """Draw n ancestral samples starting from Gaussian noise at t = T - 1."""
    if n < 1:
        raise ValueError(f"need n >= 1 samples, got {n}")
    d = data_dim if data_dim is not None else model.arch.data_dim
    x = rng.standard_normal((n, d))
    for t in range(sched.T - 1, 0, -1):
        noise = rng.standard_normal(x.shape) if t > 1 else None
        x = reverse_step(model, x, t, sched, noise=noise)
    return x


# checkpoints ------------------------------------------------------------------

def save_checkpoint(path, model: Denoiser, sched: NoiseSchedule) -> None:
    """Binary header (magic, version, arch, schedule) + float64-LE parameters."""
    header = {
        "arch": {"data_dim": model.arch.data_dim,
                 "hidden": list(model.arch.hidden),
                 "emb_dim": model.arch.emb_dim,
                 "activation": model.arch.activation},
        "T": sched.T,
        "schedule_kind": sched.kind,
        "beta_start": sched.beta_start,
        "beta_end": sched.beta_end,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        for p in model.params:
            fh.write(p.data.astype("<f8").tobytes())


def load_checkpoint(path) -> tuple[Denoiser, NoiseSchedule]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"not a denoiser checkpoint: bad magic {magic!r}")
        version, blob_len = struct.unpack("<II", fh.read(8))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        header = json.loads(fh.read(blob_len).decode("utf-8"))
        arch = ArchSpec(data_dim=header["arch"]["data_dim"],
                        hidden=tuple(header["arch"]["hidden"]),
                        emb_dim=header["arch"]["emb_dim"],
                        activation=header["arch"]["activation"])
        sched = make_schedule(header["T"], header["beta_start"],
                              header["beta_end"], header["schedule_kind"])
        model = Denoiser(arch, np.random.default_rng(0))
        arrays = []
        for p in model.params:
            raw = fh.read(p.data.size * 8)
            arrays.append(np.frombuffer(raw, dtype="<f8").reshape(p.data.shape))
        model.set_param_arrays(arrays)
    return model, sched
