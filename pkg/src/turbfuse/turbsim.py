"""Atmospheric-turbulence image degradation.

Five-step pipeline: parameter initialization (Fried parameter from the
plane-wave formula), tilt power-spectrum generation, per-pixel tilt
warping, Zernike-coefficient sampling with Noll Kolmogorov statistics,
and FFT-pupil blur. Blur is spatially invariant (one tilt field and one
PSF per image); anisoplanatism is out of scope at desk scale.

Intensity is keyed by propagation length L in meters (10k/20k/30k/40k);
r0 = (0.423 k^2 Cn2 L)^(-3/5) with k = 2*pi/lambda, so larger L means a
smaller Fried parameter and stronger degradation.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.ndimage import convolve as nd_convolve
from scipy.special import gamma as sp_gamma

from .errors import ContractError, ShapeError

# Cn2 calibrated so D_ap/r0 = 2 at L = 10 km with the default aperture and
# wavelength; the 10k..40k ladder then spans D/r0 in [2.0, 4.6].
DEFAULT_CN2 = 2.4322e-16
DEFAULT_WAVELENGTH = 525e-9
DEFAULT_APERTURE = 0.1

INTENSITY_LEVELS = (10_000.0, 20_000.0, 30_000.0, 40_000.0)


@dataclass
class TurbulenceParams:
    intensity_meters: float
    image_size: int
    aperture_diameter: float = DEFAULT_APERTURE
    wavelength: float = DEFAULT_WAVELENGTH
    cn2: float = DEFAULT_CN2
    n_zernike: int = 33  # Noll modes 4 .. 4+n-1 (piston/tilt excluded)
    outer_scale_m: float = 10.0
    pixel_pitch_m: float = 0.05
    tilt_scale_px: float = 2.0
    fft_size: int = 96
    pupil_px: int = 32
    kernel_size: int = 23
    fried_r0: float = None

    @property
    def d_over_r0(self):
        if math.isinf(self.fried_r0):
            return 0.0
        return self.aperture_diameter / self.fried_r0


def fried_parameter(intensity_meters, wavelength, cn2):
    """Plane-wave Fried parameter r0 = (0.423 k^2 Cn2 L)^(-3/5)."""
    if intensity_meters <= 0 or wavelength <= 0:
        raise ContractError("propagation length and wavelength must be positive")
    if cn2 < 0:
        raise ContractError("cn2 must be nonnegative")
    if cn2 == 0.0:
        return math.inf
    k = 2.0 * math.pi / wavelength
    return (0.423 * k * k * cn2 * intensity_meters) ** (-3.0 / 5.0)


def init_params(intensity_meters, image_size, overrides=None):
    """Build TurbulenceParams for one intensity level, applying overrides."""
    if intensity_meters <= 0:
        raise ContractError("intensity_meters must be positive")
    if image_size <= 0:
        raise ContractError("image_size must be positive")
    p = TurbulenceParams(intensity_meters=float(intensity_meters), image_size=int(image_size))
    if overrides:
        known = {f for f in p.__dataclass_fields__}
        bad = set(overrides) - known
        if bad:
            raise ContractError(f"unknown turbulence overrides: {sorted(bad)}")
        p = replace(p, **overrides)
    if p.aperture_diameter <= 0 or p.wavelength <= 0:
        raise ContractError("aperture and wavelength must be positive")
    if p.n_zernike < 3:
        raise ContractError("n_zernike must be >= 3")
    if p.kernel_size % 2 == 0 or p.kernel_size > p.fft_size:
        raise ContractError("kernel_size must be odd and <= fft_size")
    if overrides is None or "fried_r0" not in overrides or p.fried_r0 is None:
        p = replace(p, fried_r0=fried_parameter(p.intensity_meters, p.wavelength, p.cn2))
    return p


def _rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


# -- tilt ----------------------------------------------------------------------


@dataclass
class TiltField:
    """Per-pixel shift maps in pixel units; zero-mean by construction."""

    dx: np.ndarray
    dy: np.ndarray


def _tilt_psd(p: TurbulenceParams):
    """von Karman-regularized Kolmogorov spectrum on the image frequency grid."""
    n = p.image_size
    f = np.fft.fftfreq(n)  # cycles per pixel
    k = 2.0 * math.pi * np.hypot(*np.meshgrid(f, f, indexing="ij")) / p.pixel_pitch_m
    k0 = 2.0 * math.pi / p.outer_scale_m
    psd = (k * k + k0 * k0) ** (-11.0 / 6.0)
    psd[0, 0] = 0.0  # no DC power: fields come out zero-mean
    return psd


def tilt_field(p: TurbulenceParams, seed):
    """Correlated random shift field with RMS = tilt_scale_px*(D/r0)^(5/6)."""
    rng = _rng(seed)
    n = p.image_size
    psd = _tilt_psd(p)
    noise = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    screen = np.fft.ifft2(noise * np.sqrt(psd))
    # E[Re(screen)^2] = sum(psd)/N^4; real/imag parts are two iid fields
    sigma = math.sqrt(psd.sum()) / (n * n)
    rms = p.tilt_scale_px * p.d_over_r0 ** (5.0 / 6.0)
    scale = rms / sigma
    return TiltField(dx=np.real(screen) * scale, dy=np.imag(screen) * scale)


def apply_tilt(image, t: TiltField):
    """Backward warp: out[y, x] samples image at (y + dy, x + dx), bilinear.

    Sampling coordinates are clamped to the image border (edge-replicate).
    """
    image = np.asarray(image)
    if image.shape != t.dx.shape or image.shape != t.dy.shape:
        raise ShapeError(f"image {image.shape} does not match tilt field {t.dx.shape}")
    n, m = image.shape
    yy, xx = np.meshgrid(np.arange(n), np.arange(m), indexing="ij")
    sy = np.clip(yy + t.dy, 0.0, n - 1.0)
    sx = np.clip(xx + t.dx, 0.0, m - 1.0)
    y0 = np.floor(sy).astype(int)
    x0 = np.floor(sx).astype(int)
    y1 = np.minimum(y0 + 1, n - 1)
    x1 = np.minimum(x0 + 1, m - 1)
    wy = sy - y0
    wx = sx - x0
    top = image[y0, x0] * (1 - wx) + image[y0, x1] * wx
    bot = image[y1, x0] * (1 - wx) + image[y1, x1] * wx
    return (top * (1 - wy) + bot * wy).astype(image.dtype, copy=False)


# -- Zernike statistics and PSF -------------------------------------------------


def noll_to_nm(j):
    """Noll index -> (n, m); negative m denotes the sine term."""
    if j < 1:
        raise ContractError("Noll indices start at 1")
    n = int(math.sqrt(2 * j - 1) + 0.5) - 1
    if n % 2:
        m = 2 * int((2 * (j + 1) - n * (n + 1)) // 4) - 1
    else:
        m = 2 * int((2 * j + 1 - n * (n + 1)) // 4)
    return n, m * (-1) ** (j % 2)


def _noll_cov_entry(ni, mi, nj, mj):
    """Kolmogorov covariance of Zernike coefficients at D/r0 = 1.

    Nonzero only for equal azimuthal order and matching sin/cos parity;
    the 7.2e-3 front factor is the classical Roddier constant.
    """
    if mi != mj:
        return 0.0
    m = abs(mi)
    sign = (-1.0) ** ((ni + nj - 2 * m) / 2.0)
    num = sp_gamma(14.0 / 3.0) * sp_gamma((ni + nj - 5.0 / 3.0) / 2.0)
    den = (
        sp_gamma((ni - nj + 17.0 / 3.0) / 2.0)
        * sp_gamma((nj - ni + 17.0 / 3.0) / 2.0)
        * sp_gamma((ni + nj + 23.0 / 3.0) / 2.0)
    )
    front = 0.0072077  # (2*pi)^(11/3)*0.0457654*(1/2)^(5/3)/(2*pi)^(14/3)*pi
    return front * math.sqrt((ni + 1) * (nj + 1)) * sign * math.pi ** (8.0 / 3.0) * num / den


@functools.lru_cache(maxsize=8)
def _unit_covariance(n_modes):
    """Covariance matrix of Noll modes 4..3+n at D/r0 = 1, with Cholesky."""
    js = [4 + i for i in range(n_modes)]
    nm = [noll_to_nm(j) for j in js]
    cov = np.zeros((n_modes, n_modes))
    for a, (na, ma) in enumerate(nm):
        for b, (nb, mb) in enumerate(nm):
            cov[a, b] = _noll_cov_entry(na, ma, nb, mb)
    # tiny jitter keeps Cholesky stable for near-singular high-order blocks
    chol = np.linalg.cholesky(cov + 1e-12 * np.eye(n_modes))
    return cov, chol


def zernike_covariance(p: TurbulenceParams):
    """Coefficient covariance (radians^2) for modes 4..3+n at this intensity."""
    cov, _ = _unit_covariance(p.n_zernike)
    return cov * p.d_over_r0 ** (5.0 / 3.0)


def sample_zernike_coeffs(p: TurbulenceParams, seed, n=1):
    """Draw n coefficient vectors from the configured Noll covariance."""
    rng = _rng(seed)
    _, chol = _unit_covariance(p.n_zernike)
    z = rng.standard_normal((n, p.n_zernike))
    return z @ chol.T * p.d_over_r0 ** (5.0 / 6.0)


@functools.lru_cache(maxsize=8)
def _zernike_basis(fft_size, pupil_px, n_modes):
    """Stack of Noll-normalized Zernike modes 4..3+n over the pupil disk."""
    c = fft_size // 2
    yy, xx = np.meshgrid(np.arange(fft_size) - c, np.arange(fft_size) - c, indexing="ij")
    rho = np.hypot(yy, xx) / (pupil_px / 2.0)
    theta = np.arctan2(yy, xx)
    mask = rho <= 1.0
    rho_c = np.where(mask, rho, 0.0)

    basis = np.zeros((n_modes, fft_size, fft_size))
    for i in range(n_modes):
        n, m = noll_to_nm(4 + i)
        ma = abs(m)
        radial = np.zeros_like(rho_c)
        for k in range((n - ma) // 2 + 1):
            coef = (
                (-1.0) ** k
                * math.factorial(n - k)
                / (math.factorial(k) * math.factorial((n + ma) // 2 - k) * math.factorial((n - ma) // 2 - k))
            )
            radial += coef * rho_c ** (n - 2 * k)
        if m == 0:
            z = math.sqrt(n + 1.0) * radial
        elif m > 0:
            z = math.sqrt(2.0 * (n + 1.0)) * radial * np.cos(ma * theta)
        else:
            z = math.sqrt(2.0 * (n + 1.0)) * radial * np.sin(ma * theta)
        basis[i] = z * mask
    return basis, mask


def zernike_psf(p: TurbulenceParams, seed=None, coeffs=None):
    """Unit-sum PSF kernel from a random (or given) aberrated pupil.

    coeffs: optional length-n_zernike vector in radians; overrides sampling
    (all-zeros gives the diffraction-limited kernel).
    """
    if coeffs is None:
        coeffs = sample_zernike_coeffs(p, seed, n=1)[0]
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape != (p.n_zernike,):
        raise ContractError(f"expected {p.n_zernike} coefficients, got {coeffs.shape}")
    basis, mask = _zernike_basis(p.fft_size, p.pupil_px, p.n_zernike)
    phase = np.tensordot(coeffs, basis, axes=1)
    field = mask * np.exp(1j * phase)
    psf = np.abs(np.fft.fftshift(np.fft.fft2(np.fft.ifftshift(field)))) ** 2
    c = p.fft_size // 2
    half = p.kernel_size // 2
    kern = psf[c - half : c + half + 1, c - half : c + half + 1]
    total = kern.sum()
    if total <= 0:
        raise ContractError("empty pupil produced a null PSF")
    return kern / total


# -- end-to-end degradation ------------------------------------------------------


def degrade(image, p: TurbulenceParams, seed):
    """Tilt then blur one image; deterministic in (image, params, seed)."""
    image = np.asarray(image, dtype=np.float64)
    if image.shape != (p.image_size, p.image_size):
        raise ShapeError(f"expected {p.image_size}x{p.image_size} image, got {image.shape}")
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    tilt_ss, psf_ss = ss.spawn(2)
    tilted = apply_tilt(image, tilt_field(p, np.random.default_rng(tilt_ss)))
    kern = zernike_psf(p, seed=np.random.default_rng(psf_ss))
    blurred = nd_convolve(tilted, kern, mode="nearest")
    return np.clip(blurred, image.min(), image.max())
