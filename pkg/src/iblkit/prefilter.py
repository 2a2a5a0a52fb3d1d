"""Screen-space prefiltering: roughness levels, blur targets and level lookup.

Level ``j`` of the prefiltered radiance is approximated in image space by a
Gaussian blur of the training image. The analytic screen kernel (the GGX lobe
pushed through the halfway and pinhole Jacobians) is provided for reference
and to justify the Gaussian widths.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import correlate1d

from .brdf import GAMMA_MIN, ggx_d


class ReflectionEscapedError(ValueError):
    pass


class KernelTruncationWarning(UserWarning):
    pass


@dataclass(frozen=True)
class PrefilterSpec:
    """Roughness per level, blur std in pixels per level, reference distance.

    ``depth_adaptive=False`` turns off the distance scaling of roughness for
    reflected lookups (used to show what the scaling buys).
    """

    gammas: tuple = (0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0)
    sigmas_px: tuple = (0.0, 2.0, 8.0, 32.0)
    d0: float = 1.0
    depth_adaptive: bool = True

    def __post_init__(self):
        g = tuple(float(v) for v in self.gammas)
        s = tuple(float(v) for v in self.sigmas_px)
        object.__setattr__(self, "gammas", g)
        object.__setattr__(self, "sigmas_px", s)
        object.__setattr__(self, "d0", float(self.d0))
        if len(g) < 2 or len(g) != len(s):
            raise ValueError("need matching gammas and sigmas_px with at least two levels")
        if g[0] != 0.0 or g[-1] != 1.0 or any(b <= a for a, b in zip(g, g[1:])):
            raise ValueError(f"level roughness must increase strictly from 0 to 1: {g}")
        if s[0] != 0.0 or any(v < 0.0 for v in s):
            raise ValueError(f"level 0 must be unblurred and stds nonnegative: {s}")
        if not self.d0 > 0.0:
            raise ValueError("d0 must be positive")

    @property
    def levels(self):
        return len(self.gammas)

    @classmethod
    def from_near_far(cls, near, far, **kw):
        return cls(d0=0.5 * (near + far), **kw)


@dataclass(frozen=True)
class ScreenKernel:
    weights: np.ndarray
    half_width: int
    focal: float
    mass_captured: float = field(default=1.0, compare=False)

    @property
    def second_moment(self):
        """E[r^2] in square pixels."""
        r = np.arange(-self.half_width, self.half_width + 1)
        r2 = r[:, None] ** 2 + r[None, :] ** 2
        return float(np.sum(self.weights * r2))


def _lobe_mass_within(tan_half2, alpha):
    # fraction of D(h)(h.w) mass with tan^2(theta_h) below tan_half2
    return tan_half2 / (tan_half2 + alpha * alpha)


def _screen_density(sx, sy, gamma, focal):
    # p_S for the view-aligned case w = v = +z, pixel offsets (sx, sy)
    r2 = sx * sx + sy * sy
    norm = np.sqrt(r2 + focal * focal)
    wi_z = focal / norm
    h_z = np.sqrt(0.5 * (1.0 + wi_z))  # cos of half the angle between wi and v
    d = ggx_d(h_z, gamma)
    return d * h_z / (4.0 * h_z) * wi_z / (focal * focal + r2)


def _pixel_means(px, gamma, focal, supersample):
    sub = (np.arange(supersample) + 0.5) / supersample - 0.5
    coords = (px[:, None] + sub[None, :]).ravel()
    dens = _screen_density(coords[:, None], coords[None, :], gamma, focal)
    n = len(px)
    return dens.reshape(n, supersample, n, supersample).mean(axis=(1, 3))


def analytic_kernel(gamma, focal, half_width, supersample=8):
    """Tabulated screen-space GGX kernel on a (2w+1)^2 pixel window.

    Each pixel holds the density integrated over its footprint (midpoint rule
    on ``supersample``^2 sub-pixels), and the window is renormalized to sum to
    one. Emits :class:`KernelTruncationWarning` when the window holds less than
    99% of the lobe mass visible in front of the camera.
    """
    gamma = max(float(gamma), GAMMA_MIN)
    if not focal > 0:
        raise ValueError("focal length must be positive")
    w = int(half_width)
    if w < 0:
        raise ValueError("half_width must be >= 0")
    pix = _pixel_means(np.arange(-w, w + 1), gamma, float(focal), supersample)
    # narrow lobes vary below the sub-pixel spacing: refine the central block
    lobe_px = 2.0 * gamma * gamma * focal
    fine = int(min(512, max(supersample, math.ceil(16.0 / max(lobe_px, 1e-9)))))
    if fine > supersample:
        b = min(w, 2)
        pix[w - b: w + b + 1, w - b: w + b + 1] = _pixel_means(
            np.arange(-b, b + 1), gamma, float(focal), fine)
    weights = pix / pix.sum()

    # exact captured fraction by polar integration of the radial CDF
    alpha = gamma * gamma
    phi = (np.arange(4096) + 0.5) * (0.5 * math.pi / 4096)
    edge = (w + 0.5) / np.maximum(np.abs(np.cos(phi)), np.abs(np.sin(phi)))
    theta_i = np.arctan(edge / focal)
    captured = np.mean(_lobe_mass_within(np.tan(0.5 * theta_i) ** 2, alpha))
    total = _lobe_mass_within(1.0, alpha)  # theta_i < 90 deg <=> theta_h < 45 deg
    frac = float(captured / total)
    if frac < 0.99:
        warnings.warn(
            f"kernel window of half-width {w} px captures {100 * frac:.1f}% of the lobe mass",
            KernelTruncationWarning,
            stacklevel=2,
        )
    return ScreenKernel(weights=weights, half_width=w, focal=float(focal), mass_captured=frac)


def gaussian_taps(sigma, truncate=4.0):
    """Sampled, unnormalized 1D Gaussian g(k) = exp(-k^2 / 2 sigma^2)."""
    radius = max(1, int(math.ceil(truncate * sigma)))
    k = np.arange(-radius, radius + 1, dtype=float)
    return np.exp(-0.5 * (k / sigma) ** 2)


def _blur_axis(image, taps, axis):
    num = correlate1d(image, taps, axis=axis, mode="constant", cval=0.0)
    ones = np.ones(image.shape[axis])
    den = correlate1d(ones, taps, mode="constant", cval=0.0)
    shape = [1] * image.ndim
    shape[axis] = -1
    return num / den.reshape(shape)


def gaussian_prefilter(image, level, spec=None):
    """Blur target for ``level``: separable Gaussian with renormalized borders.

    ``image`` is (H, W) or (H, W, C) linear radiance. Level 0 returns the input.
    """
    spec = spec or PrefilterSpec()
    if not 0 <= level < spec.levels:
        raise ValueError(f"level {level} outside [0, {spec.levels})")
    image = np.asarray(image)
    if not np.all(np.isfinite(image)):
        raise ValueError("image contains non-finite pixels")
    sigma = spec.sigmas_px[level]
    if sigma == 0.0:
        return image
    taps = gaussian_taps(sigma)
    out = _blur_axis(image.astype(np.float64), taps, 0)
    out = _blur_axis(out, taps, 1)
    return out.astype(image.dtype, copy=False)


def prefilter_stack(image, spec=None):
    spec = spec or PrefilterSpec()
    return [gaussian_prefilter(image, j, spec) for j in range(spec.levels)]


def interp_weights(gamma, spec=None):
    """Hat-function weights over the level grid, shape (..., J)."""
    spec = spec or PrefilterSpec()
    grid = np.asarray(spec.gammas)
    g = np.clip(np.asarray(gamma, dtype=float), 0.0, 1.0)
    i0 = np.clip(np.searchsorted(grid, g, side="right") - 1, 0, len(grid) - 2)
    t = (g - grid[i0]) / (grid[i0 + 1] - grid[i0])
    w = np.zeros(g.shape + (len(grid),))
    np.put_along_axis(w, i0[..., None], (1.0 - t)[..., None], axis=-1)
    np.put_along_axis(w, (i0 + 1)[..., None], t[..., None], axis=-1)
    return w


def interp_weights_grad(gamma, spec=None):
    """d(weights)/d(gamma); zero where gamma is clamped."""
    spec = spec or PrefilterSpec()
    grid = np.asarray(spec.gammas)
    g_raw = np.asarray(gamma, dtype=float)
    g = np.clip(g_raw, 0.0, 1.0)
    i0 = np.clip(np.searchsorted(grid, g, side="right") - 1, 0, len(grid) - 2)
    slope = 1.0 / (grid[i0 + 1] - grid[i0])
    slope = np.where((g_raw >= 0.0) & (g_raw <= 1.0), slope, 0.0)
    d = np.zeros(g.shape + (len(grid),))
    np.put_along_axis(d, i0[..., None], -slope[..., None], axis=-1)
    np.put_along_axis(d, (i0 + 1)[..., None], slope[..., None], axis=-1)
    return d


def normalize_roughness(gamma, d, spec=None):
    """Roughness for a reflected lookup: clip((d / d0) * gamma, 0, 1) at reflected depth ``d``."""
    spec = spec or PrefilterSpec()
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0.0):
        raise ReflectionEscapedError("reflected ray escaped the volume")
    return np.clip(d / spec.d0 * np.asarray(gamma, dtype=float), 0.0, 1.0)
