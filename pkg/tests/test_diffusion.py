import numpy as np
import pytest

from diffscrub.autodiff import Tensor
from diffscrub.diffusion import (ArchSpec, Denoiser, abar_at, denoise_from,
                                 epsilon_loss, forward_noise, load_checkpoint,
                                 make_schedule, reverse_step, sample,
                                 save_checkpoint)


class StubModel:
    """Denoiser stand-in returning a fixed epsilon prediction."""

    def __init__(self, value):
        self.value = np.asarray(value, dtype=np.float64)

    def __call__(self, x, t):
        data = x.data if isinstance(x, Tensor) else np.asarray(x)
        return Tensor(np.broadcast_to(self.value, data.shape).copy())


def test_schedule_first_alpha_bar():
    sched = make_schedule(1000, 1e-4, 2e-2)
    assert sched.alpha_bar[0] == pytest.approx(1.0 - 1e-4)


def test_schedule_cumulative_product():
    sched = make_schedule(2, 0.5, 0.5)
    assert np.allclose(sched.alpha_bar, [0.5, 0.25])


def test_schedule_rejects_beta_end_one():
    with pytest.raises(ValueError):
        make_schedule(10, 1e-4, 1.0)


def test_schedule_invariants():
    sched = make_schedule(1000, 1e-4, 2e-2)
    assert np.all(np.diff(sched.alpha_bar) < 0)
    assert sched.alpha_bar[0] > 0.999
    assert sched.alpha_bar[-1] < 1e-3
    assert np.array_equal(sched.sigma, np.sqrt(1.0 - sched.alpha_bar))


def test_forward_noise_identity_at_zero_steps():
    sched = make_schedule(10, 1e-4, 0.1)
    x0 = np.array([[1.0, 2.0]])
    eps = np.array([[5.0, -3.0]])
    assert np.array_equal(forward_noise(x0, 0, eps, sched), x0)


def test_forward_noise_pure_noise_endpoint():
    sched = make_schedule(400, 1e-4, 0.1)  # alpha_bar[-1] ~ 2e-9
    x0 = np.ones((1, 4))
    eps = np.random.default_rng(0).standard_normal((1, 4))
    out = forward_noise(x0, 399, eps, sched)
    assert np.allclose(out, eps, atol=1e-3)


def test_forward_noise_half_signal():
    # state t=1 uses alpha_bar[0] = 0.25 for beta = 0.75
    sched = make_schedule(2, 0.75, 0.75)
    out = forward_noise(np.array([[1.0]]), 1, np.array([[0.0]]), sched)
    assert out[0, 0] == pytest.approx(0.5)


def test_forward_noise_shape_mismatch():
    sched = make_schedule(10)
    with pytest.raises(Exception, match="shape|x0"):
        forward_noise(np.ones((1, 2)), 1, np.ones((1, 3)), sched)


def test_forward_noise_marginals():
    # over many draws, mean -> sqrt(abar) x0 and var -> 1 - abar within 3 SE
    sched = make_schedule(100, 1e-4, 0.1)
    rng = np.random.default_rng(7)
    x0 = np.full((20000, 1), 1.7)
    t = 40
    out = forward_noise(x0, t, rng.standard_normal(x0.shape), sched)
    abar = float(abar_at(sched, t))
    n = len(out)
    se_mean = np.sqrt((1 - abar) / n)
    assert abs(out.mean() - np.sqrt(abar) * 1.7) < 3 * se_mean
    se_var = (1 - abar) * np.sqrt(2.0 / (n - 1))
    assert abs(out.var() - (1 - abar)) < 3 * se_var


def test_epsilon_loss_perfect_predictor_is_zero():
    sched = make_schedule(10, 1e-4, 0.1)
    eps = np.random.default_rng(1).standard_normal((3, 2))

    class Perfect:
        def __call__(self, x, t):
            return Tensor(eps)

    loss = epsilon_loss(Perfect(), np.zeros((3, 2)), np.array([1, 2, 3]), eps, sched)
    assert float(loss.data) == pytest.approx(0.0)


def test_epsilon_loss_zero_model_mean_square():
    sched = make_schedule(10, 1e-4, 0.1)
    eps = np.array([[3.0, 4.0]])  # ||eps||^2 = 25, numel = 2
    loss = epsilon_loss(StubModel([0.0, 0.0]), np.zeros((1, 2)), np.array([2]),
                        eps, sched)
    assert float(loss.data) == pytest.approx(25.0 / 2.0)


def test_epsilon_loss_matches_straight_line_oracle():
    # independent scalar re-computation of the weighted mean-square objective
    sched = make_schedule(30, 1e-4, 0.15)
    rng = np.random.default_rng(5)
    model = Denoiser(ArchSpec(data_dim=2, hidden=(6,), emb_dim=4), rng)
    x0 = rng.standard_normal((1, 2))
    eps = rng.standard_normal((1, 2))
    t = np.array([9])
    loss = float(epsilon_loss(model, x0, t, eps, sched).data)

    abar = float(abar_at(sched, 9))
    x_t = np.sqrt(abar) * x0 + np.sqrt(1 - abar) * eps
    pred = model(x_t, t).data
    expected = 0.0
    for j in range(2):
        expected += (pred[0, j] - eps[0, j]) ** 2
    expected = sched.loss_weight[9] * expected / 2.0
    assert loss == pytest.approx(expected, rel=1e-12)


class _Oracle:
    """Returns the exact recorded noise, whatever the input."""

    def __init__(self, eps):
        self.eps = eps

    def __call__(self, x, t):
        return Tensor(self.eps)


def test_reverse_step_inverts_forward_at_one_step():
    sched = make_schedule(50, 1e-4, 0.1)
    rng = np.random.default_rng(2)
    x0 = rng.standard_normal((2, 3))
    eps = rng.standard_normal((2, 3))
    x1 = forward_noise(x0, 1, eps, sched)
    rec = reverse_step(_Oracle(eps), x1, 1, sched)
    assert np.max(np.abs(rec - x0)) < 1e-8


def test_reverse_step_zero_everything():
    sched = make_schedule(50, 1e-4, 0.1)
    out = reverse_step(StubModel([0.0, 0.0]), np.zeros((1, 2)), 5, sched)
    assert np.array_equal(out, np.zeros((1, 2)))


def test_reverse_step_deterministic_without_noise():
    sched = make_schedule(50, 1e-4, 0.1)
    x = np.random.default_rng(3).standard_normal((2, 2))
    m = StubModel([0.1, -0.2])
    assert np.array_equal(reverse_step(m, x, 7, sched),
                          reverse_step(m, x, 7, sched))


def test_denoise_from_zero_steps_returns_input():
    sched = make_schedule(50, 1e-4, 0.1)
    x0 = np.random.default_rng(4).standard_normal((2, 2))
    out = denoise_from(StubModel([0.0, 0.0]), x0, 0, sched,
                       np.random.default_rng(0))
    assert np.array_equal(out, x0)


def test_denoise_from_seed_determinism(micro_base):
    ds, model, sched = micro_base["ds"], micro_base["model"], micro_base["sched"]
    a = denoise_from(model, ds.x[:2], 10, sched, np.random.default_rng(42))
    b = denoise_from(model, ds.x[:2], 10, sched, np.random.default_rng(42))
    assert np.array_equal(a, b)


def test_denoise_from_memorizes_training_points(micro_base):
    # converged 8-point model walks noisy points back toward their origins,
    # an untrained model does not; bounds measured on this fixture
    ds, model, sched = micro_base["ds"], micro_base["model"], micro_base["sched"]
    recon = denoise_from(model, ds.x, sched.T // 4, sched,
                         np.random.default_rng(11))
    own = np.linalg.norm(recon - ds.x, axis=1)
    assert np.median(own) < 0.8
    sharp = denoise_from(model, ds.x, sched.T // 12, sched,
                         np.random.default_rng(12))
    assert np.median(np.linalg.norm(sharp - ds.x, axis=1)) < 0.35
    fresh = Denoiser(model.arch, np.random.default_rng(99))
    blind = denoise_from(fresh, ds.x, sched.T // 4, sched,
                         np.random.default_rng(11))
    assert np.median(own) < 0.6 * np.median(np.linalg.norm(blind - ds.x, axis=1))


def test_single_step_reconstruction_with_recorded_noise():
    # a model that answers with the exact recorded noise inverts t_start=1
    sched = make_schedule(50, 1e-4, 0.1)
    x0 = np.random.default_rng(6).standard_normal((3, 2))
    seed_rng = np.random.default_rng(123)
    eps = seed_rng.standard_normal(x0.shape)  # what denoise_from will draw
    out = denoise_from(_Oracle(eps), x0, 1, sched, np.random.default_rng(123))
    assert np.max(np.abs(out - x0)) < 1e-6


def test_sample_rejects_zero():
    sched = make_schedule(10)
    with pytest.raises(ValueError):
        sample(StubModel([0.0, 0.0]), sched, 0, np.random.default_rng(0))


def test_untrained_model_samples_far_from_manifold():
    from diffscrub.datasets import moons_manifold_distance
    sched = make_schedule(50, 1e-4, 0.1)
    model = Denoiser(ArchSpec(data_dim=2, hidden=(8,), emb_dim=4),
                     np.random.default_rng(1))
    pts = sample(model, sched, 200, np.random.default_rng(2))
    assert np.median(moons_manifold_distance(pts)) > 0.2


def test_timestep_conditioning_is_wired():
    model = Denoiser(ArchSpec(data_dim=2, hidden=(8,), emb_dim=4),
                     np.random.default_rng(5))
    x = np.zeros((1, 2))
    a = model(x, np.array([3])).data
    b = model(x, np.array([17])).data
    assert not np.allclose(a, b)


def test_checkpoint_round_trip(tmp_path, micro_base):
    model, sched = micro_base["model"], micro_base["sched"]
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, model, sched)
    loaded, lsched = load_checkpoint(path)
    x = np.random.default_rng(8).standard_normal((4, 2))
    t = np.array([1, 5, 9, 20])
    assert np.max(np.abs(loaded(x, t).data - model(x, t).data)) < 1e-12
    assert lsched.T == sched.T and np.array_equal(lsched.beta, sched.beta)


def test_checkpoint_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"NOPE" + b"\x00" * 32)
    with pytest.raises(ValueError, match="magic"):
        load_checkpoint(path)
