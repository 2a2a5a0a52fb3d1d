"""Monte-Carlo oracles and the analytic reference renderer.

The estimators here integrate the full rendering equation by sampling and are
used to validate the split-sum path. ``render_reference`` produces the
desk-scale datasets: beauty images plus ground-truth intrinsic AOVs.
"""

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .brdf import (
    DIELECTRIC_F0,
    MicrofacetParams,
    base_reflectance,
    clamp_roughness,
    fresnel_gamma,
    fresnel_schlick,
    ggx_d,
    schlick_g1,
    smith_g,
)

_EPS = 1e-4


class SceneError(ValueError):
    pass


class Estimate(NamedTuple):
    value: np.ndarray
    stderr: np.ndarray
    n: int


@dataclass(frozen=True)
class HemisphereSampleSet:
    directions: np.ndarray
    pdf: np.ndarray


# ---------------------------------------------------------------------------
# samplers

def equal_area_stratified(n, seed=0):
    """One jittered direction per equal-area (z, phi) stratum, pdf 1/(2 pi).

    The grid has ceil(sqrt(n)) rows in z; each row gets n // rows strata in
    phi and the last row also takes the remainder.
    """
    if n < 1:
        raise ValueError("need at least one sample")
    rng = np.random.default_rng(seed)
    rows = math.ceil(math.sqrt(n))
    cols = n // rows
    counts = np.full(rows, cols)
    counts[-1] += n - rows * cols
    row = np.repeat(np.arange(rows), counts)
    col = np.concatenate([np.arange(c) for c in counts])
    u, v = rng.random(n), rng.random(n)
    z = (row + u) / rows
    phi = 2 * np.pi * (col + v) / counts[row]
    s = np.sqrt(np.maximum(0.0, 1 - z * z))
    dirs = np.stack([s * np.cos(phi), s * np.sin(phi), z], axis=-1)
    return HemisphereSampleSet(dirs, np.full(n, 1 / (2 * np.pi)))


def ggx_sample(u1, u2, gamma):
    """Half-vector with density D(h)(n.h) in the local frame (n = +z).

    Returns ``(h, pdf)`` where ``pdf`` is per solid angle of h.
    """
    gamma = clamp_roughness(gamma)
    a2 = np.asarray(gamma, dtype=float) ** 4
    u1 = np.asarray(u1, dtype=float)
    cos_h = np.sqrt((1 - u1) / (1 + (a2 - 1) * u1))
    sin_h = np.sqrt(np.maximum(0.0, 1 - cos_h * cos_h))
    phi = 2 * np.pi * np.asarray(u2, dtype=float)
    h = np.stack([sin_h * np.cos(phi), sin_h * np.sin(phi), cos_h], axis=-1)
    return h, ggx_d(cos_h, gamma) * cos_h


def cosine_sample(u1, u2):
    r = np.sqrt(u1)
    phi = 2 * np.pi * u2
    z = np.sqrt(np.maximum(0.0, 1 - u1))
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)


def frame(n):
    """Orthonormal tangent frames (t, b) for unit normals ``n`` (..., 3)."""
    n = np.asarray(n, dtype=float)
    sign = np.where(n[..., 2] >= 0, 1.0, -1.0)
    a = -1.0 / (sign + n[..., 2])
    b = n[..., 0] * n[..., 1] * a
    t = np.stack([1 + sign * n[..., 0] ** 2 * a, sign * b, -sign * n[..., 0]], axis=-1)
    bt = np.stack([b, sign + n[..., 1] ** 2 * a, -n[..., 1]], axis=-1)
    return t, bt


def to_world(local, n):
    t, b = frame(n)
    return local[..., :1] * t + local[..., 1:2] * b + local[..., 2:3] * n


def _reflect(wo, h):
    return 2 * np.sum(wo * h, axis=-1, keepdims=True) * h - wo


def _mean_se(samples):
    n = len(samples)
    mean = samples.mean(axis=0)
    se = samples.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros_like(mean)
    return Estimate(mean, se, n)


# ---------------------------------------------------------------------------
# estimators

def mc_specular(radiance_fn, x, omega_o, n, params, n_samples, seed=0):
    """Importance-sampled specular reflection of ``radiance_fn`` at ``x``.

    ``radiance_fn(x, omega_i)`` returns (N, 3) incident radiance arriving
    from directions ``omega_i``. Half-vectors are drawn from D(h)(n.h), giving
    the per-sample weight F G (wo.h) / ((n.h)(n.wo)).
    """
    omega_o = np.asarray(omega_o, dtype=float)
    n = np.asarray(n, dtype=float)
    no = float(n @ omega_o)
    if no <= 0:
        raise ValueError("view direction below the surface")
    rng = np.random.default_rng(seed)
    u1, u2 = rng.random(n_samples), rng.random(n_samples)
    gamma = clamp_roughness(params.roughness)
    h_local, _ = ggx_sample(u1, u2, gamma)
    h = to_world(h_local, n)
    wi = _reflect(omega_o, h)
    ni = wi @ n
    oh = h @ omega_o
    nh = h_local[:, 2]
    valid = (ni > 0) & (oh > 0)
    samples = np.zeros((n_samples, 3))
    if valid.any():
        f = fresnel_schlick(oh[valid][:, None], params.f0)
        g = smith_g(ni[valid], no, gamma)
        w = (g * oh[valid] / (nh[valid] * no))[:, None] * f
        radiance = np.asarray(radiance_fn(np.broadcast_to(x, (valid.sum(), 3)), wi[valid]), dtype=float)
        samples[valid] = w * radiance
    return _mean_se(samples)


def mc_irradiance(radiance_fn, x, n, n_samples, seed=0, sampling="cosine"):
    """(1/pi) * integral of L(n.wi) over the hemisphere, rgb."""
    n = np.asarray(n, dtype=float)
    if sampling == "cosine":
        rng = np.random.default_rng(seed)
        local = cosine_sample(rng.random(n_samples), rng.random(n_samples))
        weight = np.ones(n_samples)
    elif sampling == "equal_area":
        s = equal_area_stratified(n_samples, seed)
        local = s.directions
        weight = local[:, 2] / (np.pi * s.pdf)
    else:
        raise ValueError(f"unknown sampling {sampling!r}")
    wi = to_world(local, n)
    radiance = np.asarray(radiance_fn(np.broadcast_to(x, wi.shape), wi), dtype=float)
    if radiance.ndim == 1:
        radiance = radiance[:, None]
    return _mean_se(weight[:, None] * radiance)


# ---------------------------------------------------------------------------
# scene description

@dataclass
class Primitive:
    """Sphere (``radius``), axis-aligned box or one-sided rectangle light."""

    kind: str
    center: np.ndarray
    radius: float = 0.0
    extent: np.ndarray = None
    normal: np.ndarray = None
    material: MicrofacetParams = None
    emission: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if self.kind not in ("sphere", "box", "rect"):
            raise SceneError(f"unknown primitive type {self.kind!r}")
        self.center = np.asarray(self.center, dtype=float)
        self.emission = np.broadcast_to(np.asarray(self.emission, dtype=float), (3,)).copy()
        if self.extent is not None:
            self.extent = np.asarray(self.extent, dtype=float)
        if self.kind == "rect":
            self.normal = np.asarray(self.normal, dtype=float)
            axes = np.flatnonzero(self.normal)
            if len(axes) != 1 or abs(abs(self.normal[axes[0]]) - 1) > 1e-9:
                raise SceneError("rect lights need an axis-aligned unit normal")
            self.axis = int(axes[0])
        if self.material is None:
            self.material = MicrofacetParams((0.0, 0.0, 0.0), 1.0, 0.0)

    @property
    def is_emitter(self):
        return bool(np.any(self.emission > 0))

    @property
    def area(self):
        e = np.delete(self.extent, self.axis)
        return 4.0 * e[0] * e[1]

    def intersect(self, o, d):
        """Nearest hit distance beyond a small epsilon (inf on miss) and normal."""
        if self.kind == "sphere":
            oc = o - self.center
            b = np.sum(oc * d, axis=-1)
            c = np.sum(oc * oc, axis=-1) - self.radius**2
            disc = b * b - c
            sq = np.sqrt(np.maximum(disc, 0.0))
            t0, t1 = -b - sq, -b + sq
            t = np.where(t0 > _EPS, t0, np.where(t1 > _EPS, t1, np.inf))
            t = np.where(disc >= 0, t, np.inf)
            p = o + np.where(np.isfinite(t), t, 0.0)[:, None] * d
            return t, (p - self.center) / self.radius
        if self.kind == "box":
            with np.errstate(divide="ignore", invalid="ignore"):
                inv = 1.0 / d
                t_lo = (self.center - self.extent - o) * inv
                t_hi = (self.center + self.extent - o) * inv
            t_near = np.minimum(t_lo, t_hi)
            t_far = np.maximum(t_lo, t_hi)
            t_near = np.where(np.isnan(t_near), -np.inf, t_near)
            t_far = np.where(np.isnan(t_far), np.inf, t_far)
            tmin, tmax = t_near.max(axis=-1), t_far.min(axis=-1)
            hit = tmax >= np.maximum(tmin, _EPS)
            entering = tmin > _EPS
            t = np.where(hit, np.where(entering, tmin, tmax), np.inf)
            axis = np.where(entering, t_near.argmax(axis=-1), t_far.argmin(axis=-1))
            nrm = np.zeros_like(o)
            idx = np.arange(len(o))
            sgn = -np.sign(d[idx, axis])
            nrm[idx, axis] = np.where(entering, sgn, -sgn)
            return t, nrm
        k = self.axis
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (self.center[k] - o[:, k]) / d[:, k]
        t = np.where(np.isfinite(t) & (t > _EPS), t, np.inf)
        p = o + np.where(np.isfinite(t), t, 0.0)[:, None] * d
        inside = np.all(np.abs(p - self.center) <= self.extent + 1e-12, axis=-1)
        t = np.where(inside, t, np.inf)
        return t, np.broadcast_to(self.normal, o.shape).copy()


@dataclass
class AnalyticScene:
    primitives: list
    background: np.ndarray = field(default_factory=lambda: np.zeros(3))
    bound: float = 1.0

    def __post_init__(self):
        self.background = np.broadcast_to(np.asarray(self.background, dtype=float), (3,)).copy()
        p = self.primitives
        self._albedo = np.array([q.material.albedo for q in p], dtype=float).reshape(-1, 3)
        self._rough = np.array([q.material.roughness for q in p], dtype=float)
        self._metal = np.array([q.material.metallic for q in p], dtype=float)
        self._emission = np.array([q.emission for q in p], dtype=float).reshape(-1, 3)
        # trailing False so that index -1 (a miss) reads as non-emitting
        self._is_emitter = np.array([q.is_emitter for q in p] + [False], dtype=bool)
        self.lights = [i for i, q in enumerate(p) if q.kind == "rect" and q.is_emitter]

    def check_bounds(self):
        for q in self.primitives:
            reach = q.radius if q.kind == "sphere" else q.extent
            if np.any(np.abs(q.center) + reach > self.bound + 1e-9):
                raise SceneError(f"{q.kind} at {q.center.tolist()} leaves the scene bounds")

    def validate(self):
        if not (any(q.is_emitter for q in self.primitives) or np.any(self.background > 0)):
            raise SceneError("scene has no emitters")

    def intersect(self, o, d):
        t_best = np.full(len(o), np.inf)
        prim = np.full(len(o), -1)
        nrm = np.zeros_like(o)
        for i, q in enumerate(self.primitives):
            t, nq = q.intersect(o, d)
            closer = t < t_best
            t_best = np.where(closer, t, t_best)
            prim = np.where(closer, i, prim)
            nrm[closer] = nq[closer]
        return t_best, prim, nrm

    def emitted(self, prim, d, nrm):
        """Radiance leaving the hit primitive toward the ray origin."""
        out = np.zeros((len(prim), 3))
        hit = prim >= 0
        out[~hit] = self.background
        e = self._emission[prim[hit]]
        front = np.sum(d[hit] * nrm[hit], axis=-1) < 0
        out[hit] = e * front[:, None]
        return out

    def radiance(self, x, d):
        """Emitted radiance seen from ``x`` along ``d`` (no bounces)."""
        x = np.asarray(x, dtype=float)
        d = np.asarray(d, dtype=float)
        _, prim, nrm = self.intersect(x, d)
        return self.emitted(prim, d, nrm)


# ---------------------------------------------------------------------------
# counter-based RNG

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLD = np.uint64(0x9E3779B97F4A7C15)


def _mix(z):
    z = z + _GOLD
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def counter_uniform(seed, pixel, sample, dim):
    """Uniform [0, 1) doubles keyed by (seed, pixel, sample, dim)."""
    with np.errstate(over="ignore"):
        h = _mix(np.uint64(seed) + np.zeros(np.shape(pixel), dtype=np.uint64))
        h = _mix(h ^ np.asarray(pixel, dtype=np.uint64))
        h = _mix(h ^ np.asarray(sample, dtype=np.uint64))
        h = _mix(h ^ np.uint64(dim))
    return (h >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


# ---------------------------------------------------------------------------
# reference renderer

_P_SPECULAR = 0.5


def bsdf_eval(n, wo, wi, albedo, rough, metal):
    """f(wo, wi) * (n.wi), rgb; zero below either hemisphere."""
    no = np.sum(n * wo, axis=-1)
    ni = np.sum(n * wi, axis=-1)
    out = np.zeros(np.shape(albedo))
    ok = (no > 1e-6) & (ni > 1e-6)
    if not ok.any():
        return out
    no, ni, wo_, wi_ = no[ok], ni[ok], wo[ok], wi[ok]
    a, g_raw, m = albedo[ok], rough[ok], metal[ok]
    g = clamp_roughness(g_raw)
    h = wo_ + wi_
    h /= np.linalg.norm(h, axis=-1, keepdims=True)
    nh = np.clip(np.sum(n[ok] * h, axis=-1), 0.0, 1.0)
    oh = np.clip(np.sum(wo_ * h, axis=-1), 0.0, 1.0)
    f0 = base_reflectance(a, m[:, None])
    spec = (ggx_d(nh, g) * schlick_g1(ni, g) * schlick_g1(no, g) / (4 * no * ni))[:, None]
    spec = spec * fresnel_schlick(oh, f0)
    diff = g_raw[:, None] * (1 - fresnel_gamma(no, f0, g_raw)) * a / np.pi
    out[ok] = (spec + diff) * ni[:, None]
    return out


def bsdf_pdf(n, wo, wi, rough):
    """Density of the GGX / cosine mixture used by ``bsdf_sample``."""
    ni = np.sum(n * wi, axis=-1)
    h = wo + wi
    h = h / np.maximum(np.linalg.norm(h, axis=-1, keepdims=True), 1e-12)
    nh = np.clip(np.sum(n * h, axis=-1), 0.0, 1.0)
    oh = np.abs(np.sum(wo * h, axis=-1))
    spec = ggx_d(nh, clamp_roughness(rough)) * nh / (4 * np.maximum(oh, 1e-12))
    pdf = _P_SPECULAR * spec + (1 - _P_SPECULAR) * np.maximum(ni, 0.0) / np.pi
    return np.where(ni > 0, pdf, 0.0)


def bsdf_sample(n, wo, rough, u0, u1, u2):
    h_local, _ = ggx_sample(u1, u2, rough)
    wi_spec = _reflect(wo, to_world(h_local, n))
    wi_diff = to_world(cosine_sample(u1, u2), n)
    wi = np.where((u0 < _P_SPECULAR)[:, None], wi_spec, wi_diff)
    return wi, bsdf_pdf(n, wo, wi, rough)


def _light_pdf(scene, j, wi, dist):
    """Solid-angle density of picking light ``j`` then a uniform point on it."""
    q = scene.primitives[j]
    cos_l = np.abs(wi[:, q.axis])
    return dist * dist / (np.maximum(cos_l, 1e-12) * q.area * len(scene.lights))


class _Lobe:
    """Integrand f*cos (``bsdf``) or cos/pi (``cosine``) at a set of points."""

    def __init__(self, scene, mode, n, wo, prim):
        self.mode, self.n, self.wo = mode, n, wo
        self.albedo = scene._albedo[prim]
        self.rough = scene._rough[prim]
        self.metal = scene._metal[prim]

    def take(self, idx):
        lobe = object.__new__(_Lobe)
        lobe.mode, lobe.n, lobe.wo = self.mode, self.n[idx], self.wo[idx]
        lobe.albedo, lobe.rough, lobe.metal = self.albedo[idx], self.rough[idx], self.metal[idx]
        return lobe

    def eval(self, wi):
        if self.mode == "cosine":
            ni = np.maximum(np.sum(self.n * wi, axis=-1), 0.0) / np.pi
            return np.repeat(ni[:, None], 3, axis=1)
        return bsdf_eval(self.n, self.wo, wi, self.albedo, self.rough, self.metal)

    def pdf(self, wi):
        if self.mode == "cosine":
            return np.maximum(np.sum(self.n * wi, axis=-1), 0.0) / np.pi
        return bsdf_pdf(self.n, self.wo, wi, self.rough)

    def sample(self, u0, u1, u2):
        if self.mode == "cosine":
            wi = to_world(cosine_sample(u1, u2), self.n)
            return wi, self.pdf(wi)
        return bsdf_sample(self.n, self.wo, self.rough, u0, u1, u2)


def _next_event(scene, origin, lobe, u):
    """Light-sampled direct term with balance-heuristic MIS weights."""
    out = np.zeros((len(origin), 3))
    n_lights = len(scene.lights)
    choice = np.minimum((u[0] * n_lights).astype(int), n_lights - 1)
    for k, j in enumerate(scene.lights):
        sel = np.flatnonzero(choice == k)
        if len(sel) == 0:
            continue
        q = scene.primitives[j]
        other = [a for a in range(3) if a != q.axis]
        p = np.tile(q.center, (len(sel), 1))
        p[:, other] += (2 * np.stack([u[1][sel], u[2][sel]], axis=-1) - 1) * q.extent[other]
        to_l = p - origin[sel]
        dist = np.linalg.norm(to_l, axis=-1)
        wi = to_l / dist[:, None]
        t_hit, hit, _ = scene.intersect(origin[sel], wi)
        visible = (np.sum(wi * q.normal, axis=-1) < 0) & (hit == j) & (np.abs(t_hit - dist) < 1e-3)
        sub = lobe.take(sel)
        pl = _light_pdf(scene, j, wi, dist)
        pb = sub.pdf(wi)
        contrib = sub.eval(wi) * q.emission * (1.0 / (pl + pb))[:, None]
        out[sel] = np.where(visible[:, None], contrib, 0.0)
    return out


def _shade(scene, x, n, wo, prim, key, dim0, depth, mode):
    """Reflected radiance toward ``wo`` (or irradiance in ``cosine`` mode)."""
    seed, pix, smp = key
    u = [counter_uniform(seed, pix, smp, dim0 + k) for k in range(6)]
    lobe = _Lobe(scene, mode, n, wo, prim)
    origin = x + 10 * _EPS * n
    out = _next_event(scene, origin, lobe, u) if scene.lights else np.zeros((len(x), 3))

    wi, pb = lobe.sample(u[3], u[4], u[5])
    ok = pb > 0
    through = np.where(ok[:, None], lobe.eval(wi) / np.where(ok, pb, 1.0)[:, None], 0.0)
    t_hit, hit, nrm = scene.intersect(origin, wi)
    mis = np.ones(len(x))
    for j in scene.lights:
        on = hit == j
        if on.any():
            pl = _light_pdf(scene, j, wi[on], t_hit[on])
            mis[on] = pb[on] / (pb[on] + pl)
    out += through * scene.emitted(hit, wi, nrm) * mis[:, None]

    if depth > 0:
        reflective = (hit >= 0) & ~scene._is_emitter[hit]
        idx = np.flatnonzero(reflective & np.any(through > 0, axis=-1))
        if len(idx):
            y = origin[idx] + t_hit[idx, None] * wi[idx]
            wo_y = -wi[idx]
            ny = nrm[idx] * np.where(np.sum(nrm[idx] * wo_y, axis=-1) < 0, -1.0, 1.0)[:, None]
            sub_key = (seed, pix[idx], smp[idx])
            out[idx] += through[idx] * _shade(scene, y, ny, wo_y, hit[idx], sub_key,
                                              dim0 + 6, depth - 1, "bsdf")
    return out


# emitter pixels report unit albedo / roughness and an irradiance that makes
# the diffuse-only shading reproduce their radiance (see ledger)
_EMITTER_IRRADIANCE_SCALE = 1.0 / (1.0 - DIELECTRIC_F0)


def render_reference(scene, camera, spp=16, seed=0, chunk=4096):
    """Beauty image plus ground-truth intrinsic AOVs for one camera.

    Direct lighting with one indirect bounce. Each pixel uses ``spp`` samples
    keyed by (seed, pixel, sample) so frames are identical across runs and
    chunkings.
    """
    scene.validate()
    if spp < 1:
        raise ValueError("spp must be >= 1")
    rays = camera.rays()
    h, w = camera.height, camera.width
    o, d = np.array(rays.origins, dtype=float), np.array(rays.directions, dtype=float)
    t, prim, nrm = scene.intersect(o, d)
    hit = prim >= 0
    emitter = scene._is_emitter[prim]
    surf = hit & ~emitter
    beauty = scene.emitted(prim, d, nrm)
    nrm = nrm * np.where(np.sum(nrm * d, axis=-1) > 0, -1.0, 1.0)[:, None]
    x = o + np.where(hit, t, 0.0)[:, None] * d
    irradiance = np.zeros(len(d))
    idx_all = np.flatnonzero(surf)
    for start in range(0, len(idx_all), max(1, chunk // spp)):
        idx = idx_all[start: start + max(1, chunk // spp)]
        pix = np.repeat(idx, spp).astype(np.uint64)
        smp = np.tile(np.arange(spp), len(idx)).astype(np.uint64)
        rep = np.repeat(np.arange(len(idx)), spp)
        xs, ns, wos, ps = x[idx][rep], nrm[idx][rep], -d[idx][rep], prim[idx][rep]
        key = (seed, pix, smp)
        rad = _shade(scene, xs, ns, wos, ps, key, 0, 1, "bsdf")
        irr = _shade(scene, xs, ns, wos, ps, key, 12, 1, "cosine")
        beauty[idx] = rad.reshape(len(idx), spp, 3).mean(axis=1)
        irradiance[idx] = irr.reshape(len(idx), spp, 3).mean(axis=(1, 2))

    albedo = np.zeros((len(d), 3))
    albedo[surf] = scene._albedo[prim[surf]]
    albedo[emitter] = 1.0
    roughness = np.zeros(len(d))
    roughness[surf] = scene._rough[prim[surf]]
    roughness[emitter] = 1.0
    irradiance[emitter] = scene._emission[prim[emitter]].mean(axis=-1) * _EMITTER_IRRADIANCE_SCALE
    normal = np.where(hit[:, None], nrm, 0.0)
    depth = np.where(hit, t, camera.far)
    shape = (h, w)
    return {
        "beauty": beauty.reshape(*shape, 3),
        "albedo": albedo.reshape(*shape, 3),
        "roughness": roughness.reshape(shape),
        "normal": normal.reshape(*shape, 3),
        "depth": depth.reshape(shape),
        "irradiance": irradiance.reshape(shape),
        "emitter": emitter.reshape(shape),
    }


# ---------------------------------------------------------------------------
# scene construction

_PRIM_KEYS = {"type", "center", "radius", "extent", "normal", "albedo", "roughness",
              "metallic", "emission"}


def primitive_from_dict(d):
    unknown = set(d) - _PRIM_KEYS
    if unknown:
        raise SceneError(f"unknown primitive keys: {sorted(unknown)}")
    if "type" not in d or "center" not in d:
        raise SceneError("primitive needs 'type' and 'center'")
    kind = d["type"]
    if kind == "sphere" and "radius" not in d:
        raise SceneError("sphere needs 'radius'")
    if kind in ("box", "rect") and "extent" not in d:
        raise SceneError(f"{kind} needs 'extent'")
    if kind == "rect" and "normal" not in d:
        raise SceneError("rect needs 'normal'")
    material = MicrofacetParams(d.get("albedo", 0.0), d.get("roughness", 1.0), d.get("metallic", 0.0))
    return Primitive(kind, d["center"], radius=float(d.get("radius", 0.0)), extent=d.get("extent"),
                     normal=d.get("normal"), material=material, emission=d.get("emission", 0.0))


def scene_from_dict(d):
    """Build a scene from ``{primitives: [...], background, bound}``."""
    prims = [primitive_from_dict(p) for p in d.get("primitives", [])]
    scene = AnalyticScene(prims, d.get("background", 0.0), float(d.get("bound", 1.0)))
    scene.check_bounds()
    scene.validate()
    return scene


def scene_to_dict(scene):
    out = []
    for q in scene.primitives:
        p = {"type": q.kind, "center": q.center.tolist(), "albedo": q.material.albedo.tolist(),
             "roughness": q.material.roughness, "metallic": q.material.metallic,
             "emission": q.emission.tolist()}
        if q.kind == "sphere":
            p["radius"] = float(q.radius)
        else:
            p["extent"] = q.extent.tolist()
        if q.kind == "rect":
            p["normal"] = q.normal.tolist()
        out.append(p)
    return {"primitives": out, "background": scene.background.tolist(), "bound": scene.bound}


def box_scene():
    """The toy room: five walls, an open front, three objects, one ceiling light.

    Inner wall faces sit at +-0.9 so everything stays inside the unit box.
    """
    wall, th = 0.9, 0.05
    walls = [
        ("box", [0, -wall - th, 0], [1.0, th, 1.0], (0.75, 0.75, 0.72), 0.9),   # floor
        ("box", [0, wall + th, 0], [1.0, th, 1.0], (0.8, 0.8, 0.8), 1.0),      # ceiling
        ("box", [-wall - th, 0, 0], [th, 1.0, 1.0], (0.7, 0.2, 0.15), 0.8),    # left, red
        ("box", [wall + th, 0, 0], [th, 1.0, 1.0], (0.2, 0.45, 0.7), 0.8),     # right, blue
        ("box", [0, 0, -wall - th], [1.0, 1.0, th], (0.7, 0.7, 0.65), 0.6),    # back
    ]
    prims = [Primitive(k, c, extent=e, material=MicrofacetParams(a, r)) for k, c, e, a, r in walls]
    prims += [
        Primitive("sphere", [-0.4, -0.55, -0.2], radius=0.35,
                  material=MicrofacetParams((0.8, 0.15, 0.1), 0.25)),
        Primitive("box", [0.4, -0.6, -0.35], extent=[0.25, 0.3, 0.25],
                  material=MicrofacetParams((0.9, 0.85, 0.3), 0.9)),
        Primitive("sphere", [0.35, -0.75, 0.35], radius=0.15,
                  material=MicrofacetParams((0.3, 0.8, 0.35), 0.5)),
        Primitive("rect", [0, wall - 1e-3, 0], extent=[0.75, 0.0, 0.75], normal=[0, -1, 0],
                  emission=(1.0, 1.0, 1.0)),
    ]
    return AnalyticScene(prims, background=(0.05, 0.05, 0.05), bound=1.0)
