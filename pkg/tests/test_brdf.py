import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from iblkit.brdf import (
    BackfacingError,
    DegenerateGeometryError,
    MicrofacetParams,
    ShadingGeometry,
    diffuse_radiance,
    fresnel_gamma,
    fresnel_schlick,
    ggx_d,
    smith_g,
    specular_brdf,
)

Z = np.array([0.0, 0.0, 1.0])


def test_ggx_d_examples():
    assert ggx_d(1.0, 1.0) == pytest.approx(1.0 / math.pi)
    assert ggx_d(0.0, 1.0) == pytest.approx(1.0 / math.pi)
    assert ggx_d(1.0, 0.5) == pytest.approx(16.0 / math.pi)


def test_ggx_d_rejects_mirror():
    with pytest.raises(ValueError, match="mirror roughness"):
        ggx_d(1.0, 0.0)


@pytest.mark.parametrize("gamma", [0.1, 0.5, 1.0])
def test_ggx_d_normalization(gamma):
    # 1e5-node midpoint rule in cos(theta_h); D is azimuth independent
    n = 100_000
    mu = (np.arange(n) + 0.5) / n
    integral = np.sum(ggx_d(mu, gamma) * mu) * 2 * math.pi / n
    assert integral == pytest.approx(1.0, abs=0.02)


def test_fresnel_schlick_examples():
    assert fresnel_schlick(1.0, 0.04) == pytest.approx(0.04)
    assert fresnel_schlick(0.0, 0.04) == pytest.approx(1.0)
    assert fresnel_schlick(0.5, 0.0) == pytest.approx(0.03125)


def test_fresnel_schlick_clamps_and_warns():
    with pytest.warns(RuntimeWarning):
        v = fresnel_schlick(1.2, 0.04)
    assert v == pytest.approx(0.04)


@pytest.mark.parametrize("f0", [0.0, 0.04, 1.0])
def test_fresnel_schlick_monotone(f0):
    x = np.linspace(0.0, 1.0, 100)
    assert np.all(np.diff(fresnel_schlick(x, f0)) <= 0.0)


def test_fresnel_gamma_examples():
    assert fresnel_gamma(1.0, 0.04, 0.3) == pytest.approx(0.04)
    assert fresnel_gamma(0.0, 0.04, 0.0) == pytest.approx(1.0)
    assert fresnel_gamma(0.0, 0.04, 1.0) == pytest.approx(0.04)


def test_fresnel_gamma_rgb_broadcast():
    f0 = np.array([0.04, 0.5, 1.0])
    out = fresnel_gamma(np.array([0.0, 1.0]), f0[None, :], np.array([0.0, 0.5]))
    assert out.shape == (2, 3)
    np.testing.assert_allclose(out[0], [1.0, 1.0, 1.0])
    np.testing.assert_allclose(out[1], f0)


def test_smith_g_examples():
    assert smith_g(1.0, 1.0, 0.37) == pytest.approx(1.0)
    assert smith_g(0.5, 0.7, 0.0) == pytest.approx(1.0)
    assert smith_g(0.5, 0.5, 1.0) == pytest.approx(4.0 / 9.0)


def test_smith_g_backfacing():
    with pytest.raises(BackfacingError, match="backfacing geometry"):
        smith_g(-0.1, 0.5, 0.5)


def test_specular_brdf_examples():
    geom = ShadingGeometry(Z, Z, Z)
    diel = MicrofacetParams(albedo=[0.5, 0.5, 0.5], roughness=1.0, metallic=0.0)
    np.testing.assert_allclose(specular_brdf(geom, diel), 0.04 / (4 * math.pi))
    metal = MicrofacetParams(albedo=[1.0, 1.0, 1.0], roughness=1.0, metallic=1.0)
    np.testing.assert_allclose(specular_brdf(geom, metal), 1.0 / (4 * math.pi))
    black = MicrofacetParams(albedo=[0.0, 0.0, 0.0], roughness=0.3, metallic=1.0)
    np.testing.assert_allclose(specular_brdf(geom, black), 0.0)


def test_degenerate_halfway_vector():
    wo = np.array([0.6, 0.0, 0.8])
    with pytest.raises(DegenerateGeometryError):
        ShadingGeometry(Z, wo, -wo)


def test_non_unit_vectors_rejected():
    with pytest.raises(ValueError, match="unit length"):
        ShadingGeometry(Z, np.array([0.0, 0.0, 2.0]), Z)


def _hemi(v):
    v = np.asarray(v, dtype=float)
    v = v / np.linalg.norm(v)
    v[2] = abs(v[2]) + 0.05
    return v / np.linalg.norm(v)


vec = st.tuples(*[st.floats(-1, 1) for _ in range(3)]).filter(lambda t: np.linalg.norm(t) > 0.2)


@settings(max_examples=60, deadline=None)
@given(vec, vec, st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_specular_reciprocity(a, b, gamma, metallic, albedo):
    wo, wi = _hemi(a), _hemi(b)
    p = MicrofacetParams(albedo=[albedo, 0.3, 0.9], roughness=gamma, metallic=metallic)
    f1 = specular_brdf(ShadingGeometry(Z, wo, wi), p)
    f2 = specular_brdf(ShadingGeometry(Z, wi, wo), p)
    np.testing.assert_allclose(f1, f2, rtol=1e-10)
    assert np.all(np.isfinite(f1)) and np.all(f1 >= 0.0)


def test_diffuse_radiance_examples():
    black = MicrofacetParams(albedo=[0.0, 0.0, 0.0], roughness=0.7)
    np.testing.assert_allclose(diffuse_radiance(black, 0.5, 1.0), 0.0)
    mirror = MicrofacetParams(albedo=[0.5, 0.5, 0.5], roughness=0.0)
    np.testing.assert_allclose(diffuse_radiance(mirror, 0.5, 1.0), 0.0)
    rough = MicrofacetParams(albedo=[0.5, 0.5, 0.5], roughness=1.0)
    np.testing.assert_allclose(diffuse_radiance(rough, 1.0, 1.0), 0.48)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.floats(0.01, 5.0), st.floats(0.0, 3.0))
def test_diffuse_radiance_linear(cos, gamma, irr, scale):
    p = MicrofacetParams(albedo=[0.2, 0.4, 0.6], roughness=gamma)
    base = diffuse_radiance(p, cos, irr)
    np.testing.assert_allclose(diffuse_radiance(p, cos, scale * irr), scale * base, atol=1e-12)
    # albedo enters linearly once F0 is held fixed (metallic = 0)
    p2 = MicrofacetParams(albedo=p.albedo * 0.5, roughness=gamma)
    np.testing.assert_allclose(diffuse_radiance(p2, cos, irr), 0.5 * base, atol=1e-12)


def test_params_validation():
    with pytest.raises(ValueError):
        MicrofacetParams(albedo=[1.2, 0.0, 0.0], roughness=0.5)
    with pytest.raises(ValueError):
        MicrofacetParams(albedo=[0.2, 0.2, 0.2], roughness=1.5)
    p = MicrofacetParams(albedo=[0.8, 0.2, 0.1], roughness=0.5, metallic=0.0)
    np.testing.assert_allclose(p.f0, 0.04)
