import numpy as np
import pytest

from diffscrub.datasets import (DatasetSpec, load_image_dir, make_dataset,
                                moons_manifold_distance, moons_reference_points,
                                read_array, read_pgm, synthetic_textures,
                                two_moons, write_array)


def test_two_moons_deterministic():
    spec = DatasetSpec(kind="two-moons", n_samples=1000, noise=0.05, seed=3)
    a = make_dataset(spec)
    b = make_dataset(spec)
    assert np.array_equal(a.x, b.x)


def test_forget_split_arithmetic():
    spec = DatasetSpec(kind="two-moons", n_samples=1000, noise=0.05,
                       forget_indices=(1, 5, 9, 100, 500, 999))
    ds = make_dataset(spec)
    assert len(ds.forget) == 6 and len(ds.retain) == 994
    assert set(ds.forget_indices) & set(ds.retain_indices) == set()


def test_noiseless_moons_lie_on_manifold():
    pts = two_moons(400, 0.0, np.random.default_rng(0))
    assert moons_manifold_distance(pts).max() < 1e-12


def test_reference_points_on_manifold():
    refs = moons_reference_points(100)
    assert moons_manifold_distance(refs).max() < 1e-12


def test_invalid_forget_indices():
    with pytest.raises(ValueError, match="forget"):
        make_dataset(DatasetSpec(kind="two-moons", n_samples=10,
                                 forget_indices=(10,)))
    with pytest.raises(ValueError, match="forget"):
        make_dataset(DatasetSpec(kind="two-moons", n_samples=10,
                                 forget_indices=(1, 1)))


def test_gaussian_ring():
    ds = make_dataset(DatasetSpec(kind="gaussians", n_samples=80, noise=0.05))
    assert ds.x.shape == (80, 2)
    radii = np.linalg.norm(ds.x, axis=1)
    assert abs(np.median(radii) - 2.0) < 0.2


def test_synthetic_textures_shape_and_range():
    imgs = synthetic_textures(5, 12, 0.0, np.random.default_rng(1))
    assert imgs.shape == (5, 12, 12)
    assert np.abs(imgs).max() <= 1.0 + 1e-12
    ds = make_dataset(DatasetSpec(kind="synthetic-textures", n_samples=4,
                                  noise=0.0, image_size=10))
    assert ds.x.shape == (4, 100) and ds.data_shape == (10, 10)


def test_texture_has_high_frequency_content():
    from diffscrub.spectral import FrequencyFilterConfig, low_pass
    imgs = synthetic_textures(3, 16, 0.0, np.random.default_rng(2))
    for img in imgs:
        low = low_pass(img, FrequencyFilterConfig(r_t=0.15, s=0.0))
        assert np.sum((img - low) ** 2) > 0.01 * np.sum(img ** 2)


def test_raw_array_round_trip(tmp_path):
    arr = np.random.default_rng(3).standard_normal((7, 3, 2))
    path = tmp_path / "a.f64"
    write_array(path, arr)
    back = read_array(path)
    assert back.shape == arr.shape and np.array_equal(back, arr)
    header = path.read_bytes().split(b"\n", 1)[0]
    assert header == b"f64 7 3 2"


def test_raw_array_header_mismatch(tmp_path):
    path = tmp_path / "bad.f64"
    path.write_bytes(b"f64 4\n" + np.zeros(2).tobytes())
    with pytest.raises(ValueError, match="header"):
        read_array(path)


def test_pgm_readers(tmp_path):
    img = (np.arange(12).reshape(3, 4) * 20).astype(np.uint8)
    p5 = tmp_path / "img.pgm"
    p5.write_bytes(b"P5\n# comment\n4 3\n255\n" + img.tobytes())
    a = read_pgm(p5)
    assert a.shape == (3, 4)
    assert a.min() >= -1.0 and a.max() <= 1.0
    p2 = tmp_path / "img2.pgm"
    body = " ".join(str(v) for v in img.ravel())
    p2.write_text(f"P2\n4 3\n255\n{body}\n")
    b = read_pgm(p2)
    assert np.allclose(a, b)


def test_image_dir_loading(tmp_path):
    rng = np.random.default_rng(4)
    for i in range(3):
        write_array(tmp_path / f"im{i}.f64", rng.standard_normal((6, 6)))
    ds = make_dataset(DatasetSpec(kind="image-dir", n_samples=0,
                                  image_dir=str(tmp_path)))
    assert ds.x.shape == (3, 36) and ds.data_shape == (6, 6)


def test_image_dir_mixed_shapes_rejected(tmp_path):
    write_array(tmp_path / "a.f64", np.zeros((4, 4)))
    write_array(tmp_path / "b.f64", np.zeros((5, 5)))
    with pytest.raises(ValueError, match="mixed"):
        load_image_dir(tmp_path)


def test_unknown_kind_rejected():
    with pytest.raises(ValueError, match="kind"):
        DatasetSpec(kind="cifar")
