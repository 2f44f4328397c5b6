"""2-D DFT, radial low-pass masks, and filtering of image-shaped data.

Spectra are stored unshifted: the DC coefficient sits at index (0, 0).  The
radial mask is constructed on DC-centered coordinates and then unshifted to
match that layout.  Radii are normalized by the largest bin radius (the
corner of the centered grid), so the cutoff r_t lives in (0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

#64-bit round-trips through fft/ifft land around 1e-15; anything above this
# means the mask broke conjugate symmetry.
IMAG_RESIDUE_LIMIT = 1e-6


@dataclass
class Spectrum:
    """Complex DFT coefficients (H, W), DC at [0, 0] (unshifted)."""

    values: np.ndarray

    @property
    def real(self) -> np.ndarray:
        return self.values.real

    @property
    def imag(self) -> np.ndarray:
        return self.values.imag

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape


@dataclass(frozen=True)
class FrequencyFilterConfig:
    """Radial low-pass: keep radius <= r_t at weight 1, the rest at weight s.

    filter_target additionally applies the same mask to the regression target
    noise when the filter is used inside a loss (off by default).
    """

    r_t: float = 0.15
    s: float = 0.0
    filter_target: bool = False

    def __post_init__(self):
        if not (0.0 < self.r_t <= 1.0):
            raise ValueError(f"r_t must be in (0, 1], got {self.r_t}")
        if not (0.0 <= self.s <= 1.0):
            raise ValueError(f"s must be in [0, 1], got {self.s}")


def dft2(image: np.ndarray) -> Spectrum:
    """Standard 2-D DFT (no forward normalization)."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError(f"dft2 expects a 2-D image, got shape {image.shape}")
    return Spectrum(np.fft.fft2(image))


def idft2(spec: Spectrum) -> np.ndarray:
    """Inverse 2-D DFT with 1/(HW) normalization; returns the real plane.

    The imaginary residue must be negligible (conjugate-symmetric input);
    a large residue means the spectrum was manipulated asymmetrically.
    """
    out = np.fft.ifft2(spec.values)
    residue = float(np.max(np.abs(out.imag))) if out.size else 0.0
    if residue > IMAG_RESIDUE_LIMIT:
        raise ValueError(f"idft2: imaginary residue {residue:.3e} exceeds "
                         f"{IMAG_RESIDUE_LIMIT:.0e}; asymmetric spectrum")
    return out.real


def centered_radii(H: int, W: int) -> np.ndarray:
    """Normalized DC-centered bin radii in fftshift layout, corner = 1."""
    cu, cv = H // 2, W // 2
    u = np.arange(H) - cu
    v = np.arange(W) - cv
    dist = np.sqrt(u[:, None] ** 2 + v[None, :] ** 2)
    corner = np.sqrt(cu ** 2 + cv ** 2)
    if corner == 0.0:  # 1x1 image: only the DC bin
        return np.zeros((H, W))
    return dist / corner


def radial_mask(H: int, W: int, cfg: FrequencyFilterConfig) -> np.ndarray:
    """Mask in unshifted layout: exactly 1 inside the cutoff, exactly s outside."""
    radii = centered_radii(H, W)
    shifted = np.where(radii <= cfg.r_t, 1.0, cfg.s)
    return np.fft.ifftshift(shifted)


def low_pass(image: np.ndarray, cfg: FrequencyFilterConfig) -> np.ndarray:
    """idft2(dft2(image) * mask) for a single 2-D image."""
    spec = dft2(image)
    H, W = spec.shape
    return idft2(Spectrum(spec.values * radial_mask(H, W, cfg)))


def low_pass_batch(x: np.ndarray, shape: tuple[int, int],
                   cfg: FrequencyFilterConfig) -> np.ndarray:
    """Vectorized low_pass over rows of flattened images (n, H*W)."""
    H, W = shape
    x = np.asarray(x, dtype=np.float64)
    imgs = x.reshape(-1, H, W)
    mask = radial_mask(H, W, cfg)
    out = np.fft.ifft2(np.fft.fft2(imgs, axes=(-2, -1)) * mask, axes=(-2, -1))
    residue = float(np.max(np.abs(out.imag))) if out.size else 0.0
    if residue > IMAG_RESIDUE_LIMIT:
        raise ValueError(f"low_pass: imaginary residue {residue:.3e} exceeds "
                         f"{IMAG_RESIDUE_LIMIT:.0e}; mask symmetry broken")
    return out.real.reshape(x.shape)
