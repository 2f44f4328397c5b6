"""Datasets: analytic two-moons, a Gaussian ring, synthetic textures, and
grayscale image directories, plus the raw-array file format used for samples.

Raw array files carry a one-line ASCII shape header ("f64 <dims...>") followed
by the row-major little-endian float64 payload.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class DatasetSpec:
    kind: str = "two-moons"   # two-moons | gaussians | image-dir | synthetic-textures
    n_samples: int = 1000
    noise: float = 0.05
    forget_indices: tuple[int, ...] = ()
    seed: int = 0
    image_size: int = 16      # synthetic-textures edge length
    image_dir: str = ""       # for kind=image-dir

    def __post_init__(self):
        kinds = ("two-moons", "gaussians", "image-dir", "synthetic-textures")
        if self.kind not in kinds:
            raise ValueError(f"unknown dataset kind {self.kind!r}")


@dataclass
class SplitDataset:
    """Flattened samples plus the forget/retain split."""

    x: np.ndarray                      # (n, d)
    data_shape: tuple[int, ...]        # per-sample shape, e.g. (2,) or (H, W)
    forget_indices: np.ndarray         # (nf,)

    @property
    def forget(self) -> np.ndarray:
        return self.x[self.forget_indices]

    @property
    def retain_indices(self) -> np.ndarray:
        mask = np.ones(len(self.x), dtype=bool)
        mask[self.forget_indices] = False
        return np.nonzero(mask)[0]

    @property
    def retain(self) -> np.ndarray:
        return self.x[self.retain_indices]

    def images(self, rows: np.ndarray) -> np.ndarray:
        return rows.reshape((-1,) + self.data_shape)


def two_moons(n: int, noise: float, rng: np.random.Generator) -> np.ndarray:
    """Two interleaved unit semicircles with Gaussian jitter.

    Angles are evenly spaced so the noiseless dataset lies exactly on the
    manifold; only the jitter consumes randomness.
    """
    n_a = n // 2
    n_b = n - n_a
    th_a = np.linspace(0.0, np.pi, n_a)
    th_b = np.linspace(0.0, np.pi, n_b)
    upper = np.stack([np.cos(th_a), np.sin(th_a)], axis=1)
    lower = np.stack([1.0 - np.cos(th_b), 0.5 - np.sin(th_b)], axis=1)
    pts = np.concatenate([upper, lower])
    if noise > 0:
        pts = pts + noise * rng.standard_normal(pts.shape)
    return pts


def moons_manifold_distance(points: np.ndarray) -> np.ndarray:
    """Exact L2 distance from each point to the noiseless two-moons arcs."""
    pts = np.atleast_2d(points)

    def arc_distance(p, center, flip):
        q = (p - center) * np.array([1.0, flip])
        r = np.linalg.norm(q, axis=1)
        theta = np.arctan2(q[:, 1], q[:, 0])
        on_arc = (theta >= 0) & (theta <= np.pi)
        d_arc = np.abs(r - 1.0)
        d_end = np.minimum(np.linalg.norm(q - np.array([1.0, 0.0]), axis=1),
                           np.linalg.norm(q - np.array([-1.0, 0.0]), axis=1))
        return np.where(on_arc, np.minimum(d_arc, d_end), d_end)

    d_up = arc_distance(pts, np.array([0.0, 0.0]), 1.0)
    d_lo = arc_distance(pts, np.array([1.0, 0.5]), -1.0)
    return np.minimum(d_up, d_lo)


def moons_reference_points(n: int = 200) -> np.ndarray:
    """Evenly spaced noiseless manifold points (coverage references)."""
    return two_moons(n, 0.0, np.random.default_rng(0))


def gaussian_ring(n: int, noise: float, rng: np.random.Generator,
                  n_modes: int = 8, radius: float = 2.0) -> np.ndarray:
    angles = 2.0 * np.pi * np.arange(n_modes) / n_modes
    centers = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    which = np.arange(n) % n_modes
    return centers[which] + noise * rng.standard_normal((n, 2))


def synthetic_textures(n: int, size: int, noise: float,
                       rng: np.random.Generator) -> np.ndarray:
    """Grayscale textures: oriented gratings plus a Gaussian blob, in [-1, 1].

    Each texture mixes low and high spatial frequencies so that frequency
    -selective diagnostics have something to grab.
    """
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    imgs = np.zeros((n, size, size))
    for i in range(n):
        img = np.zeros((size, size))
        for _ in range(2):
            freq = rng.uniform(0.5, size / 3.0)
            angle = rng.uniform(0.0, np.pi)
            phase = rng.uniform(0.0, 2.0 * np.pi)
            proj = (xx * np.cos(angle) + yy * np.sin(angle)) / size
            img += rng.uniform(0.4, 1.0) * np.sin(2.0 * np.pi * freq * proj + phase)
        cy, cx = rng.uniform(0.2, 0.8, 2) * size
        sig = rng.uniform(0.12, 0.3) * size
        img += rng.uniform(0.5, 1.2) * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2)
                                              / (2.0 * sig * sig))
        img = img / max(np.abs(img).max(), 1e-12)
        if noise > 0:
            img = img + noise * rng.standard_normal(img.shape)
        imgs[i] = img
    return imgs


# --- raw array files -----------------------------------------------------------

def write_array(path, arr: np.ndarray) -> None:
    arr = np.asarray(arr, dtype=np.float64)
    with open(path, "wb") as fh:
        header = "f64 " + " ".join(str(s) for s in arr.shape) + "\n"
        fh.write(header.encode("ascii"))
        fh.write(arr.astype("<f8").tobytes())


def read_array(path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").split()
        if not header or header[0] != "f64":
            raise ValueError(f"{path}: not a raw float64 array file")
        shape = tuple(int(s) for s in header[1:])
        data = np.frombuffer(fh.read(), dtype="<f8")
    expected = int(np.prod(shape)) if shape else 1
    if data.size != expected:
        raise ValueError(f"{path}: payload has {data.size} values, "
                         f"header says {expected}")
    return data.reshape(shape)


def read_pgm(path) -> np.ndarray:
    """Minimal P2/P5 PGM reader; intensities rescaled to [-1, 1]."""
    with open(path, "rb") as fh:
        raw = fh.read()
    tokens = []
    i = 0
    while len(tokens) < 4 and i < len(raw):
        # skip whitespace and comment lines
        while i < len(raw) and raw[i:i + 1].isspace():
            i += 1
        if raw[i:i + 1] == b"#":
            while i < len(raw) and raw[i] != 0x0A:
                i += 1
            continue
        j = i
        while j < len(raw) and not raw[j:j + 1].isspace():
            j += 1
        tokens.append(raw[i:j])
        i = j
    magic, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if magic == b"P5":
        i += 1  # single whitespace after maxval
        dtype = np.uint8 if maxval < 256 else ">u2"
        img = np.frombuffer(raw[i:], dtype=dtype, count=w * h).reshape(h, w)
    elif magic == b"P2":
        vals = raw[i:].split()
        img = np.array(vals[:w * h], dtype=np.float64).reshape(h, w)
    else:
        raise ValueError(f"{path}: unsupported PGM magic {magic!r}")
    return img.astype(np.float64) / maxval * 2.0 - 1.0


def load_image_dir(directory) -> np.ndarray:
    """Stack all .pgm and raw-array images from a directory, sorted by name."""
    paths = sorted(Path(directory).iterdir())
    imgs = []
    for p in paths:
        if p.suffix == ".pgm":
            imgs.append(read_pgm(p))
        elif p.suffix in (".f64", ".raw"):
            imgs.append(read_array(p))
    if not imgs:
        raise ValueError(f"no .pgm/.f64/.raw images found in {directory}")
    shapes = {im.shape for im in imgs}
    if len(shapes) != 1:
        raise ValueError(f"images in {directory} have mixed shapes: {shapes}")
    return np.stack(imgs)


def make_dataset(spec: DatasetSpec) -> SplitDataset:
    """Deterministic dataset plus forget/retain split for a given spec."""
    rng = np.random.default_rng(spec.seed)
    if spec.kind == "two-moons":
        pts = two_moons(spec.n_samples, spec.noise, rng)
        x, shape = pts, (2,)
    elif spec.kind == "gaussians":
        pts = gaussian_ring(spec.n_samples, spec.noise, rng)
        x, shape = pts, (2,)
    elif spec.kind == "synthetic-textures":
        imgs = synthetic_textures(spec.n_samples, spec.image_size, spec.noise, rng)
        x, shape = imgs.reshape(len(imgs), -1), imgs.shape[1:]
    else:  # image-dir
        imgs = load_image_dir(spec.image_dir)
        x, shape = imgs.reshape(len(imgs), -1), imgs.shape[1:]
    forget = np.asarray(spec.forget_indices, dtype=np.int64)
    if forget.size:
        if forget.min() < 0 or forget.max() >= len(x) or \
                len(np.unique(forget)) != len(forget):
            raise ValueError(f"invalid forget indices for n={len(x)}: "
                             f"{spec.forget_indices}")
    return SplitDataset(x=x, data_shape=tuple(int(s) for s in shape),
                        forget_indices=forget)
