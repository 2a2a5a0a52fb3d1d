"""Self-checks run by ``iblkit validate``: each suite measures a property against a tolerance."""

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .brdf import MicrofacetParams, fresnel_gamma, ggx_d, schlick_g1, smith_g
from .camera import Camera, focal_from_fov, look_at
from .field import (AnalyticField, Blob, FieldConfig, Rays, init_params, sdf_box, sdf_room, sdf_slab,
                    sdf_sphere, volume_accumulate)
from .lut import default_lut, fetch, gamma_axis, cos_axis, quadrature_entry
from .mc import mc_specular
from .prefilter import PrefilterSpec
from .shade import RenderSettings, render_view, render_view_mc, shade_forward
from .train import PHASE_TERMS, RayBatch, batch_loss


@dataclass
class Check:
    name: str
    measured: float
    tolerance: float
    ok: bool

    def line(self):
        status = "PASS" if self.ok else "FAIL"
        return f"{status}  {self.name}: measured {self.measured:.3e} (tolerance {self.tolerance:.1e})"


def _below(name, measured, tol):
    return Check(name, float(measured), float(tol), bool(measured < tol))


def suite_brdf():
    t, w = np.polynomial.legendre.leggauss(400)
    theta = 0.25 * np.pi * (t + 1.0)
    wt = 0.25 * np.pi * w
    worst = 0.0
    for g in (0.1, 0.3, 0.6, 1.0):
        # projected NDF integrates to one over the hemisphere
        val = 2 * np.pi * np.sum(ggx_d(np.cos(theta), g) * np.cos(theta) * np.sin(theta) * wt)
        worst = max(worst, abs(val - 1.0))
    out = [_below("ggx projected-area normalization |int D cos - 1|", worst, 1e-3)]
    f0 = np.array([0.04, 0.5, 0.9])
    out.append(_below("F_gamma at normal incidence equals F0",
                      np.abs(fresnel_gamma(1.0, f0, 0.3) - f0).max(), 1e-12))
    c = np.linspace(0.05, 1.0, 20)
    out.append(_below("Smith G symmetric in its arguments",
                      np.abs(smith_g(c, c[::-1], 0.4) - smith_g(c[::-1], c, 0.4)).max(), 1e-12))
    out.append(_below("Schlick-GGX G1(1) = 1", abs(schlick_g1(1.0, 0.7) - 1.0), 1e-12))
    return out


def suite_lut(cells=12, seed=0):
    lut = default_lut()
    rng = np.random.default_rng(seed)
    cs, gs = cos_axis(lut.resolution), gamma_axis(lut.resolution)
    err = 0.0
    for _ in range(cells):
        i, j = rng.integers(0, lut.resolution, 2)
        ref = quadrature_entry(cs[i], gs[j])
        err = max(err, np.abs(lut.table[i, j] - ref).max())
    return [_below(f"shipped LUT vs quadrature on {cells} random cells, max abs", err, 5e-3)]


def suite_kernel(seed=0):
    rng = np.random.default_rng(seed)
    sigma = rng.uniform(0, 5, (64, 48))
    delta = rng.uniform(0.001, 0.05, (64, 48))
    gw, gf = rng.normal(size=(64, 48)), rng.normal(size=64)
    fb = _kernels.fallback
    if _kernels.compiled is None:
        return [Check("compiled core present", 0.0, 0.0, False)]
    c = _kernels.compiled
    w1, t1 = c.composite_forward(sigma, delta)
    w2, t2 = fb.composite_forward(sigma, delta)
    out = [_below("composite_forward compiled vs numpy", max(np.abs(w1 - w2).max(), np.abs(t1 - t2).max()), 1e-12)]
    b1 = c.composite_backward(sigma, delta, w1, t1, gw, gf)
    b2 = fb.composite_backward(sigma, delta, w2, t2, gw, gf)
    out.append(_below("composite_backward compiled vs numpy", np.abs(b1 - b2).max(), 1e-10))
    cs, gs = np.array([0.2, 0.7]), np.array([0.1, 0.6])
    off = rng.random((2, 2, 2))
    l1 = c.lut_integrate(cs, gs, 256, off)
    l2 = fb.lut_integrate(cs, gs, 256, off)
    out.append(_below("lut_integrate compiled vs numpy", np.abs(l1 - l2).max(), 1e-12))
    return out


def suite_volume(seed=0):
    n, length, sig = 1024, 2.0, 1.3
    delta = np.full((1, n), length / n)
    t = (np.arange(n)[None] + 0.5) * length / n
    acc = volume_accumulate(np.full((1, n), sig), delta, t)
    out = [_below("constant density transmittance vs exp(-sigma T)",
                  abs(acc["t_far"][0] - np.exp(-sig * length)), 1e-3)]
    rng = np.random.default_rng(seed)
    sigma = rng.exponential(2.0, (10_000, 32)) * (rng.random((10_000, 32)) < 0.5)
    d = rng.uniform(0.0, 0.2, (10_000, 32))
    acc = volume_accumulate(sigma, d, np.cumsum(d, axis=1))
    out.append(_below("sum of weights + T_far = 1 on 10^4 rays",
                      np.abs(acc["acc"] + acc["t_far"] - 1.0).max(), 1e-6))
    return out


def suite_splitsum(triples=20, n=4096, seed=0):
    """Constant unit radiance: the split-sum specular against mc_specular within 3 SE."""
    rng = np.random.default_rng(seed)
    lut, spec = default_lut(), PrefilterSpec()
    worst = 0.0
    for k in range(triples):
        c = rng.uniform(0.1, 1.0)
        g = rng.uniform(0.1, 1.0)
        alb = rng.uniform(0.0, 1.0, 3)
        wo = np.array([np.sqrt(1 - c * c), 0.0, c])
        est = mc_specular(lambda x, d: np.ones((len(d), 3)), np.zeros(3), wo, np.array([0, 0, 1.0]),
                          MicrofacetParams(alb, g, 1.0 - g), n, seed=seed * 1000 + k)
        _, s, _ = shade_forward(alb[None], np.zeros(1), np.array([g]), np.array([c]),
                                np.ones((1, spec.levels, 3)), np.ones(1), np.array([True]), lut, spec)
        z = np.abs(s[0] - est.value) / np.maximum(est.stderr, 1e-12)
        worst = max(worst, z.max())
    return [_below(f"split-sum vs MC specular, max |diff| / SE over {triples} triples", worst, 3.0)]


def _shrunk_batch(seed=0):
    cfg = FieldConfig(pos_layers=2, pos_width=8, skip=1, dir_width=8, pos_freqs=2, dir_freqs=1,
                      dtype="float64")
    p = init_params(cfg, seed=seed)
    p.tensors["sigma.b"][:] = 2.0
    rng = np.random.default_rng(seed)
    o = rng.uniform(-0.3, 0.3, (4, 3))
    d = rng.normal(size=(4, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    batch = RayBatch(Rays(o, d, 0.05, 1.5), rng.uniform(0, 1, (4, 3)), rng.uniform(0, 1, (4, 4, 3)),
                     rng.uniform(0, 1, (4, 3)), rng.uniform(0, 1, 4), 0.4)
    return p, batch


def gradient_errors(params, batch, phase, term, settings, spec=None, h=1e-6):
    """Max relative error per tensor between backprop and central differences of one term."""
    spec = spec or PrefilterSpec()
    _, grads, geo = batch_loss(params, batch, phase, spec=spec, settings=settings, scales={term: 1.0})
    errs = {}
    for name, v in params.tensors.items():
        fd = np.zeros_like(v)
        for i in np.ndindex(v.shape):
            q = params.copy()
            q.tensors[name][i] += h
            up = batch_loss(q, batch, phase, spec=spec, settings=settings, geometry=geo,
                            need_grad=False)[0][term]
            q.tensors[name][i] -= 2 * h
            dn = batch_loss(q, batch, phase, spec=spec, settings=settings, geometry=geo,
                            need_grad=False)[0][term]
            fd[i] = (up - dn) / (2 * h)
        scale = max(np.abs(fd).max(), np.abs(grads[name]).max())
        errs[name] = 0.0 if scale == 0 else float(np.abs(fd - grads[name]).max() / scale)
    return errs


def suite_gradients(seed=0):
    params, batch = _shrunk_batch(seed)
    st = RenderSettings(n_samples=8, n_reflect=6, background=0.1)
    out = []
    for phase in (1, 2, 3):
        for term in PHASE_TERMS[phase]:
            errs = gradient_errors(params, batch, phase, term, st)
            out.append(_below(f"phase {phase} {term}: backprop vs central differences, max rel",
                              max(errs.values()), 1e-3))
    return out


def suite_counters():
    room = Blob(sdf_room(0.9), (0.6, 0.6, 0.6), 0.5, 0.3, np.full((4, 3), 0.4))
    ball = Blob(sdf_sphere([0, -0.3, -0.2], 0.3), (0.8, 0.2, 0.2), 0.6, 0.4, np.full((4, 3), 0.6))
    field = AnalyticField([room, ball])
    cam = Camera(look_at([0, 0, 0.6], [0, -0.2, -0.5]), focal_from_fov(16, 60), 16, 16, 0.05, 3.0)
    st = RenderSettings(n_samples=32, n_reflect=16)
    _, b, counter = render_view(field, cam, default_lut(), PrefilterSpec(), st)
    hits = int(b.hit.sum())
    out = [_below("split-sum shading evaluations - (pixels N_s + hits N_r)",
                  abs(counter.shading - (cam.pixels * 32 + hits * 16)), 0.5)]
    _, mc_counter = render_view_mc(field, cam, PrefilterSpec(), st, n_dirs=8)
    out.append(_below("MC shading evaluations - (pixels N_s + hits N_d N_r)",
                      abs(mc_counter.shading - (cam.pixels * 32 + hits * 8 * 16)), 0.5))
    return out


def _striped_card(center, half, depth, levels_blur, period=0.5, base=0.5, amp=0.4):
    """A card facing -z whose level-j radiance is a sinusoidal stripe texture blurred at that level.

    Coordinates along the card are measured in card half-widths, so two cards
    scaled to the same angular size carry the same blur per level.
    """
    cx = float(center[0])
    damp = np.exp(-2.0 * np.pi ** 2 * (np.asarray(levels_blur) / period) ** 2)

    def pref(x, d):
        u = (x[:, 0] - cx) / half
        val = base + amp * damp[None, :] * np.sin(2 * np.pi * u / period)[:, None]
        return np.repeat(val[..., None], 3, axis=-1)

    box = sdf_box([cx, center[1], depth + 0.02], [half, half, 0.02])
    return Blob(box, (0.5, 0.5, 0.5), 1.0, 0.0, pref)


def reflection_sharpness(depth_adaptive=True, size=96, d=0.25, eye=0.2, gloss=0.45, seed=0):
    """Edge energy of two reflections in a glossy wall, from cards at distances d and 3d.

    The wall is the plane z = 0 seen from (0, 0, eye). The cards sit behind the
    camera, one to each side, scaled so their reflections cover equal image
    areas; only the roughness level picked for each reflection differs.
    Returns ``(near, far)`` sums of gradient magnitude over each image half.
    """
    offset, width, blur = 0.055, 0.04, (0.0, 0.04, 0.12, 0.3)
    cards = []
    for sign, dist in ((-1.0, d), (1.0, 3.0 * d)):
        grow = 1.0 + dist / eye
        cards.append(_striped_card([sign * offset * grow, 0.0], width * grow, dist, blur))
    wall = Blob(sdf_slab(2, -0.1, 0.0), (0.9, 0.9, 0.9), gloss, 0.0, np.zeros((4, 3)))
    field = AnalyticField([wall] + cards)
    cam = Camera(look_at([0, 0, eye], [0, 0, 0]), focal_from_fov(size, 60), size, size, 0.05, 0.5)
    spec = PrefilterSpec(d0=2.0 * d, depth_adaptive=depth_adaptive)
    st = RenderSettings(n_samples=64, n_reflect=128, background=0.5, bound=1.0)
    frame, _, _ = render_view(field, cam, default_lut(), spec, st, seed=seed)
    lum = frame["beauty"].mean(axis=-1)
    gy, gx = np.gradient(lum)
    mag = np.hypot(gx, gy)
    half = size // 2
    return float(mag[:, :half].sum()), float(mag[:, half:].sum())


def suite_adaptive():
    near, far = reflection_sharpness(True)
    n0, f0 = reflection_sharpness(False)
    return [Check("depth-adapted: near reflection sharper (far / near)", far / near, 1.0, far < near),
            Check("fixed roughness: |near / far - 1|", abs(n0 / f0 - 1.0), 0.05, abs(n0 / f0 - 1.0) < 0.05)]


SUITES = {"brdf": suite_brdf, "lut": suite_lut, "kernel": suite_kernel, "volume": suite_volume,
          "splitsum": suite_splitsum, "gradients": suite_gradients, "counters": suite_counters,
          "adaptive": suite_adaptive}


def run_suite(name):
    if name not in SUITES:
        raise KeyError(f"unknown suite {name!r}; choose from {sorted(SUITES)}")
    return SUITES[name]()
