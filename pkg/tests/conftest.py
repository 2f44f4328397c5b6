import numpy as np
import pytest

from diffscrub.config import (ArchConfig, DatasetSpec, EvalConfig,
                              ObjectiveConfig, OptimizerConfig, RunConfig,
                              ScheduleConfig, TrainConfig)
from diffscrub.datasets import make_dataset
from diffscrub.harness import train_base


def micro_config(seed: int = 0, **kw) -> RunConfig:
    """Tiny 8-point two-moons setup that trains in a couple of seconds."""
    defaults = dict(
        dataset=DatasetSpec(kind="two-moons", n_samples=8, noise=0.0,
                            forget_indices=(2,), seed=seed),
        arch=ArchConfig(hidden=(96, 96), emb_dim=16),
        schedule=ScheduleConfig(T=60, beta_end=0.18),
        objective=ObjectiveConfig(kind="ga", retain_weight=1.0),
        time_window=None,
        train=TrainConfig(lr=1e-3, steps=9000, batch_size=8,
                          plateau_window=3000, plateau_tol=0.0),
        optimizer=OptimizerConfig(lr=1e-3, steps=10, batch_size=4),
        eval=EvalConfig(cadence=0, n_sample=64, t_start_fracs=(0.25,),
                        grad_norm_draws=2, n_retain_eval=2),
        seed=seed,
    )
    defaults.update(kw)
    return RunConfig(**defaults)


@pytest.fixture(scope="session")
def micro_base():
    """Converged model on 8 two-moons points (memorizes them)."""
    cfg = micro_config()
    ds = make_dataset(cfg.dataset)
    model, sched, record = train_base(cfg, dataset=ds)
    return {"cfg": cfg, "ds": ds, "model": model, "sched": sched,
            "record": record}


def rng(seed: int = 0) -> np.random.Generator:
    return np.random.default_rng(seed)
