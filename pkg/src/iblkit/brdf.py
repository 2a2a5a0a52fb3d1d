"""Closed-form microfacet BRDF terms.

All functions broadcast over numpy arrays. Roughness ``gamma`` is the
perceptual roughness; the GGX width is ``alpha = gamma**2``.
"""

import warnings
from dataclasses import dataclass

import numpy as np

GAMMA_MIN = 0.02
DIELECTRIC_F0 = 0.04
_UNIT_TOL = 1e-6


class DegenerateGeometryError(ValueError):
    """Raised when the halfway vector is undefined (``wo == -wi``)."""


class BackfacingError(ValueError):
    """Raised when a cosine that must be positive is not."""


def clamp_roughness(gamma):
    return np.clip(gamma, GAMMA_MIN, 1.0)


def base_reflectance(albedo, metallic):
    """F0 = lerp(0.04, albedo, metallic); shape ``metallic`` to broadcast."""
    return DIELECTRIC_F0 + (np.asarray(albedo, dtype=float) - DIELECTRIC_F0) * np.asarray(metallic, dtype=float)


@dataclass(frozen=True)
class MicrofacetParams:
    albedo: np.ndarray
    roughness: float
    metallic: float = 0.0

    def __post_init__(self):
        albedo = np.broadcast_to(np.asarray(self.albedo, dtype=float), (3,)).copy()
        object.__setattr__(self, "albedo", albedo)
        if np.any(albedo < 0.0) or np.any(albedo > 1.0):
            raise ValueError(f"albedo outside [0, 1]: {albedo}")
        for name in ("roughness", "metallic"):
            v = float(getattr(self, name))
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} outside [0, 1]: {v}")
            object.__setattr__(self, name, v)

    @property
    def f0(self):
        return base_reflectance(self.albedo, self.metallic)


def _check_unit(name, v):
    v = np.asarray(v, dtype=float)
    norm = np.linalg.norm(v, axis=-1)
    if np.any(np.abs(norm - 1.0) > _UNIT_TOL):
        raise ValueError(f"{name} is not unit length (|v| = {norm})")
    return v


@dataclass(frozen=True)
class ShadingGeometry:
    """Normal, outgoing and incoming unit vectors; ``h`` is derived."""

    n: np.ndarray
    wo: np.ndarray
    wi: np.ndarray

    def __post_init__(self):
        for name in ("n", "wo", "wi"):
            object.__setattr__(self, name, _check_unit(name, getattr(self, name)))
        s = self.wo + self.wi
        norm = np.linalg.norm(s, axis=-1, keepdims=True)
        if np.any(norm < 1e-9):
            raise DegenerateGeometryError("halfway vector undefined: wo == -wi")
        object.__setattr__(self, "h", s / norm)

    @property
    def n_dot_h(self):
        return np.sum(self.n * self.h, axis=-1)

    @property
    def n_dot_wo(self):
        return np.sum(self.n * self.wo, axis=-1)

    @property
    def n_dot_wi(self):
        return np.sum(self.n * self.wi, axis=-1)

    @property
    def wo_dot_h(self):
        return np.sum(self.wo * self.h, axis=-1)


def ggx_d(n_dot_h, gamma):
    """Trowbridge-Reitz GGX normal distribution, ``alpha = gamma**2``."""
    gamma = np.asarray(gamma, dtype=float)
    if np.any(gamma <= 0.0):
        raise ValueError("mirror roughness; clamp before calling")
    a2 = gamma**4
    c = np.asarray(n_dot_h, dtype=float)
    denom = c * c * (a2 - 1.0) + 1.0
    return a2 / (np.pi * denom * denom)


def _clamp_cos(cos_theta, name):
    cos_theta = np.asarray(cos_theta, dtype=float)
    if np.any(cos_theta < -1e-6) or np.any(cos_theta > 1.0 + 1e-6):
        warnings.warn(f"{name} outside [0, 1]; clamping", RuntimeWarning, stacklevel=3)
    return np.clip(cos_theta, 0.0, 1.0)


def fresnel_schlick(cos_theta, f0):
    cos_theta = _clamp_cos(cos_theta, "cos_theta")
    f0 = np.asarray(f0, dtype=float)
    w = (1.0 - cos_theta) ** 5
    if f0.ndim > w.ndim:
        w = w[..., None]
    return f0 + (1.0 - f0) * w


def fresnel_gamma(n_dot_wo, f0, gamma):
    """Roughness-aware Fresnel: F0 + (max(1 - gamma, F0) - F0)(1 - n.wo)^5."""
    c = _clamp_cos(n_dot_wo, "n_dot_wo")
    f0 = np.asarray(f0, dtype=float)
    gamma = np.clip(np.asarray(gamma, dtype=float), 0.0, 1.0)
    w = (1.0 - c) ** 5
    if f0.ndim > w.ndim:
        w = w[..., None]
        gamma = gamma[..., None] if gamma.ndim else gamma
    return f0 + (np.maximum(1.0 - gamma, f0) - f0) * w


def schlick_g1(n_dot_w, gamma):
    k = np.asarray(gamma, dtype=float) ** 4 / 2.0
    n_dot_w = np.asarray(n_dot_w, dtype=float)
    return n_dot_w / (n_dot_w * (1.0 - k) + k)


def smith_g(n_dot_wi, n_dot_wo, gamma):
    """Smith's Schlick-GGX masking-shadowing with ``k = alpha**2 / 2``."""
    n_dot_wi = np.asarray(n_dot_wi, dtype=float)
    n_dot_wo = np.asarray(n_dot_wo, dtype=float)
    if np.any(n_dot_wi <= 0.0) or np.any(n_dot_wo <= 0.0):
        raise BackfacingError("backfacing geometry")
    return schlick_g1(n_dot_wi, gamma) * schlick_g1(n_dot_wo, gamma)


def specular_brdf(geom, params):
    """Cook-Torrance D F G / (4 n.wo n.wi), rgb."""
    gamma = clamp_roughness(params.roughness)
    d = ggx_d(geom.n_dot_h, gamma)
    f = fresnel_schlick(geom.wo_dot_h, params.f0)
    g = smith_g(geom.n_dot_wi, geom.n_dot_wo, gamma)
    scalar = d * g / (4.0 * geom.n_dot_wo * geom.n_dot_wi)
    return np.asarray(scalar)[..., None] * f


def diffuse_radiance(params, n_dot_wo, irradiance):
    """Diffuse term gamma * (1 - F_gamma) * albedo * I."""
    irradiance = np.asarray(irradiance, dtype=float)
    if np.any(irradiance < 0.0):
        raise ValueError("irradiance must be nonnegative")
    fg = fresnel_gamma(n_dot_wo, params.f0, params.roughness)
    return params.roughness * (1.0 - fg) * params.albedo * irradiance
