"""Image-based-lighting shading of field outputs, full-frame rendering and edits.

Outgoing radiance at a surface hit is a diffuse term (roughness, Fresnel
complement, albedo and irradiance multiplied together) plus the prefiltered
reflection at depth-scaled roughness times the LUT's (scale, bias) applied to F0.
"""

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import lut as lut_mod
from .brdf import DIELECTRIC_F0, clamp_roughness, ggx_d, schlick_g1
from .field import (
    EvalCounter,
    march,
    query_prefiltered,
    reflect,
    sdf_box,
    sdf_sphere,
    surface_normal,
)
from .mc import equal_area_stratified, to_world
from .prefilter import PrefilterSpec, interp_weights, interp_weights_grad

HIT_THRESHOLD = 0.5


class EmptySelectionWarning(UserWarning):
    pass


@dataclass
class IntrinsicBuffers:
    """Per-pixel shading inputs, flattened to (P, ...) with an image ``shape``."""

    albedo: np.ndarray
    irradiance: np.ndarray
    roughness: np.ndarray
    normal: np.ndarray
    depth: np.ndarray
    t_far: np.ndarray
    pref: np.ndarray
    d_reflect: np.ndarray
    escaped: np.ndarray
    omega_o: np.ndarray
    hit: np.ndarray
    position: np.ndarray
    pref_view: np.ndarray = None
    shape: tuple = None

    def copy(self):
        return replace(self, **{k: (v.copy() if isinstance(v, np.ndarray) else v)
                                for k, v in self.__dict__.items()})


# ---------------------------------------------------------------------------
# shading

def shade_forward(albedo, irradiance, roughness, cos_o, pref, d_reflect, escaped,
                  lut, spec, metallic_from_roughness=True):
    """Diffuse and specular terms for surface hits.

    Shapes: albedo (P, 3), irradiance / roughness / cos_o / d_reflect /
    escaped (P,), pref (P, J, 3). Returns ``(diffuse, specular, aux)`` where
    ``aux`` carries the intermediates for :func:`shade_backward`.
    """
    a = np.asarray(albedo, dtype=float)
    irr = np.asarray(irradiance, dtype=float)
    g = np.asarray(roughness, dtype=float)
    c = np.clip(np.asarray(cos_o, dtype=float), 0.0, 1.0)
    escaped = np.asarray(escaped, dtype=bool)
    m = (1.0 - g) if metallic_from_roughness else np.zeros_like(g)
    f0 = DIELECTRIC_F0 + (a - DIELECTRIC_F0) * m[:, None]
    w5 = ((1.0 - c) ** 5)[:, None]
    one_minus_g = (1.0 - np.clip(g, 0.0, 1.0))[:, None]
    upper = np.maximum(one_minus_g, f0)
    f_gamma = f0 + (upper - f0) * w5
    diffuse = (g * irr)[:, None] * (1.0 - f_gamma) * a

    # depth-adapted level selection; escaped reflections keep gamma
    fixed = escaped | (not spec.depth_adaptive)
    ratio = np.where(fixed, 1.0, np.asarray(d_reflect, dtype=float) / spec.d0)
    raw_ref = g * ratio
    g_ref = np.clip(raw_ref, 0.0, 1.0)
    weights = interp_weights(g_ref, spec)
    reflected = np.einsum("pj,pjc->pc", weights, pref)
    sb = lut_mod.fetch(lut, c, g)
    k = f0 * sb[:, :1] + sb[:, 1:]
    specular = reflected * k
    aux = dict(a=a, irr=irr, g=g, c=c, m=m, f0=f0, w5=w5, one_minus_g=one_minus_g,
               f_gamma=f_gamma, ratio=ratio, raw_ref=raw_ref, g_ref=g_ref, weights=weights,
               pref=np.asarray(pref, dtype=float), reflected=reflected, sb=sb, k=k, lut=lut, spec=spec,
               mfr=metallic_from_roughness)
    return diffuse, specular, aux


def shade_backward(aux, grad):
    """Gradients of ``sum(grad * (diffuse + specular))`` with respect to the inputs.

    Returns a dict with ``albedo`` (P, 3), ``irradiance`` (P,), ``roughness``
    (P,) and ``pref`` (P, J, 3). Geometry (normal, reflected depth) is held
    fixed.
    """
    grad = np.asarray(grad, dtype=float)
    a, irr, g, f0 = aux["a"], aux["irr"], aux["g"], aux["f0"]
    w5, f_gamma, k, sb = aux["w5"], aux["f_gamma"], aux["k"], aux["sb"]
    dm_dg = -1.0 if aux["mfr"] else 0.0
    m = aux["m"][:, None]

    # F_gamma = F0 + (max(1 - gamma, F0) - F0) w5
    f0_wins = f0 > aux["one_minus_g"]
    dfg_df0 = 1.0 - w5 + w5 * f0_wins
    inside = ((g >= 0.0) & (g <= 1.0))[:, None]
    dfg_dg_direct = -w5 * (~f0_wins) * inside
    df0_dg = (a - DIELECTRIC_F0) * dm_dg

    gi = (g * irr)[:, None]
    g_diff_fg = -gi * a * grad
    g_albedo = grad * gi * (1.0 - f_gamma)
    g_irr = np.sum(grad * g[:, None] * (1.0 - f_gamma) * a, axis=-1)
    g_rough = np.sum(grad * irr[:, None] * (1.0 - f_gamma) * a, axis=-1)
    g_f0 = g_diff_fg * dfg_df0
    g_rough += np.sum(g_diff_fg * dfg_dg_direct, axis=-1)

    reflected = aux["reflected"]
    g_k = grad * reflected
    g_f0 += g_k * sb[:, :1]
    dsb = lut_mod.fetch_grad_gamma(aux["lut"], aux["c"], g)
    g_rough += np.sum(g_k * (f0 * dsb[:, :1] + dsb[:, 1:]), axis=-1)

    g_lpref = grad * k
    g_pref = aux["weights"][:, :, None] * g_lpref[:, None, :]
    dw = interp_weights_grad(aux["g_ref"], aux["spec"])
    in_range = (aux["raw_ref"] >= 0.0) & (aux["raw_ref"] <= 1.0)
    dref_dg = aux["ratio"] * in_range
    g_rough += np.einsum("pj,pjc,pc->p", dw, aux["pref"], g_lpref) * dref_dg

    g_albedo += g_f0 * m
    g_rough += np.sum(g_f0 * df0_dg, axis=-1)
    return {"albedo": g_albedo, "irradiance": g_irr, "roughness": g_rough, "pref": g_pref}


def shade_pixel(buffers, lut, spec=None, background=0.0, metallic_from_roughness=True):
    """Radiance per pixel (P, 3) plus the diffuse and specular parts.

    Hits (accumulated weight >= 0.5) are shaded; other pixels show the
    background attenuated by their remaining transmittance.
    """
    spec = spec or PrefilterSpec()
    b = buffers
    p = len(b.hit)
    out = np.zeros((p, 3))
    diffuse = np.zeros((p, 3))
    specular = np.zeros((p, 3))
    idx = np.flatnonzero(b.hit)
    if len(idx):
        cos_o = np.sum(b.normal[idx] * b.omega_o[idx], axis=-1)
        d, s, _ = shade_forward(b.albedo[idx], b.irradiance[idx], b.roughness[idx], cos_o,
                                b.pref[idx], b.d_reflect[idx], b.escaped[idx], lut, spec,
                                metallic_from_roughness)
        diffuse[idx], specular[idx] = d, s
        out[idx] = d + s
    miss = ~b.hit
    out[miss] = b.t_far[miss, None] * np.asarray(background, dtype=float)
    return out, diffuse, specular


# ---------------------------------------------------------------------------
# frame rendering

@dataclass(frozen=True)
class RenderSettings:
    n_samples: int = 64
    n_reflect: int = 32
    background: float = 0.0
    normal_step: float = 1e-2
    reflect_offset: float = 2e-2
    bound: float = 1.0
    metallic_from_roughness: bool = True
    chunk: int = 1024


def _rng(seed):
    return None if seed is None else np.random.default_rng(seed)


def trace_buffers(field, rays, settings=None, seed=None, counter=None):
    """Primary march, normals and the reflected prefiltered query for ``rays``."""
    st = settings or RenderSettings()
    counter = counter if counter is not None else EvalCounter()
    rng = _rng(seed)
    n = len(rays)
    parts = []
    for start in range(0, n, st.chunk):
        sub = rays.subset(slice(start, start + st.chunk))
        prim = march(field, sub, st.n_samples, rng, True, st.background, counter, "primary")
        hit = prim["acc"] >= HIT_THRESHOLD
        r = len(sub)
        normal = np.zeros((r, 3))
        position = sub.origins + prim["depth"][:, None] * sub.directions
        levels = prim["pref"].shape[1]
        pref = np.zeros((r, levels, 3))
        d_reflect = np.zeros(r)
        escaped = np.zeros(r, dtype=bool)
        hi = np.flatnonzero(hit)
        if len(hi):
            hit_rays = sub.subset(hi)
            normal[hi], _ = surface_normal(field, hit_rays, prim["t"][hi], prim["delta"][hi],
                                           st.normal_step, counter)
            omega_r = reflect(-hit_rays.directions, normal[hi])
            q = query_prefiltered(field, position[hi], omega_r, st.n_reflect, st.reflect_offset,
                                  rng, st.background, st.bound, counter, "secondary")
            pref[hi], d_reflect[hi], escaped[hi] = q["pref"], q["d_reflect"], q["escaped"]
        parts.append(IntrinsicBuffers(
            albedo=prim["albedo"], irradiance=np.reshape(prim["irradiance"], (r,)),
            roughness=np.reshape(prim["roughness"], (r,)), normal=normal, depth=prim["depth"],
            t_far=prim["t_far"], pref=pref, d_reflect=d_reflect, escaped=escaped,
            omega_o=-sub.directions, hit=hit, position=position, pref_view=prim["pref"]))
    merged = {k: np.concatenate([getattr(b, k) for b in parts])
              for k in IntrinsicBuffers.__dataclass_fields__ if k != "shape"}
    return IntrinsicBuffers(**merged), counter


def _frame(buffers, rgb, diffuse, specular, shape):
    h, w = shape
    b = buffers
    frame = {
        "beauty": rgb.reshape(h, w, 3),
        "diffuse": diffuse.reshape(h, w, 3),
        "specular": specular.reshape(h, w, 3),
        "albedo": (b.albedo * b.hit[:, None]).reshape(h, w, 3),
        "roughness": (b.roughness * b.hit).reshape(h, w),
        "irradiance": (b.irradiance * b.hit).reshape(h, w),
        "normal": (b.normal * b.hit[:, None]).reshape(h, w, 3),
        "depth": b.depth.reshape(h, w),
        "escaped": (b.escaped & b.hit).reshape(h, w),
    }
    if b.pref_view is not None:
        for j in range(b.pref_view.shape[1]):
            frame[f"pref{j}"] = b.pref_view[:, j].reshape(h, w, 3)
    return frame


def render_view(field, camera, lut, spec=None, settings=None, seed=None):
    """Render one camera: beauty plus intrinsic AOVs.

    Returns ``(frame, buffers, counter)``. The counter's ``shading`` total is
    ``pixels * n_samples + hits * n_reflect``; depth-gradient normals are
    tallied separately under ``normal``.
    """
    spec = spec or PrefilterSpec()
    st = settings or RenderSettings()
    buffers, counter = trace_buffers(field, camera.rays(), st, seed)
    buffers.shape = (camera.height, camera.width)
    rgb, diffuse, specular = shade_pixel(buffers, lut, spec, st.background, st.metallic_from_roughness)
    return _frame(buffers, rgb, diffuse, specular, buffers.shape), buffers, counter


def render_view_mc(field, camera, spec=None, settings=None, n_dirs=64, seed=None):
    """Comparison path: Monte-Carlo shading from ``n_dirs`` marched directions.

    Each hit integrates the full microfacet BRDF against level-0 radiance
    marched along ``n_dirs`` equal-area hemisphere directions of
    ``n_reflect`` samples each, i.e. ``n_samples + n_dirs * n_reflect`` field
    evaluations per hit pixel.
    """
    st = settings or RenderSettings()
    rays = camera.rays()
    counter = EvalCounter()
    rng = _rng(seed)
    rgb = np.zeros((len(rays), 3))
    local = equal_area_stratified(n_dirs, 0 if seed is None else seed)
    per_chunk = max(1, st.chunk // n_dirs)
    for start in range(0, len(rays), per_chunk):
        sub = rays.subset(slice(start, start + per_chunk))
        prim = march(field, sub, st.n_samples, rng, False, st.background, counter, "primary")
        hit = prim["acc"] >= HIT_THRESHOLD
        out = np.zeros((len(sub), 3))
        out[~hit] = prim["t_far"][~hit, None] * st.background
        hi = np.flatnonzero(hit)
        if len(hi):
            hit_rays = sub.subset(hi)
            n, _ = surface_normal(field, hit_rays, prim["t"][hi], prim["delta"][hi],
                                  st.normal_step, counter)
            x = hit_rays.origins + prim["depth"][hi, None] * hit_rays.directions
            wo = -hit_rays.directions
            k = len(hi)
            wi = to_world(np.broadcast_to(local.directions, (k, n_dirs, 3)),
                          np.repeat(n[:, None, :], n_dirs, axis=1))
            q = query_prefiltered(field, np.repeat(x, n_dirs, axis=0), wi.reshape(-1, 3),
                                  st.n_reflect, st.reflect_offset, rng, st.background, st.bound,
                                  counter, "secondary")
            radiance = q["pref"][:, 0].reshape(k, n_dirs, 3)
            f = _brdf_cos(n, wo, wi, prim["albedo"][hi], np.reshape(prim["roughness"], (-1,))[hi],
                          st.metallic_from_roughness)
            out[hi] = np.mean(f * radiance / local.pdf[None, :, None], axis=1)
        rgb[start: start + len(sub)] = out
    return rgb.reshape(camera.height, camera.width, 3), counter


def _brdf_cos(n, wo, wi, albedo, roughness, metallic_from_roughness):
    """Full BRDF times n.wi for (K, D) directions, with the shading F0 rule."""
    no = np.clip(np.sum(n * wo, axis=-1), 1e-6, 1.0)[:, None]
    ni = np.sum(n[:, None] * wi, axis=-1)
    h = wo[:, None] + wi
    h /= np.maximum(np.linalg.norm(h, axis=-1, keepdims=True), 1e-12)
    nh = np.clip(np.sum(n[:, None] * h, axis=-1), 0.0, 1.0)
    oh = np.clip(np.sum(wo[:, None] * h, axis=-1), 0.0, 1.0)
    g = clamp_roughness(roughness)[:, None]
    m = (1.0 - roughness) if metallic_from_roughness else np.zeros_like(roughness)
    f0 = (DIELECTRIC_F0 + (albedo - DIELECTRIC_F0) * m[:, None])[:, None, :]
    fres = f0 + (1.0 - f0) * ((1.0 - oh) ** 5)[..., None]
    ni_pos = np.maximum(ni, 1e-12)
    spec = (ggx_d(nh, g) * schlick_g1(ni_pos, g) * schlick_g1(no, g) / (4 * no))[..., None] * fres
    w5 = ((1.0 - no) ** 5)[:, :, None]
    f_gamma = f0 + (np.maximum(1.0 - roughness[:, None, None], f0) - f0) * w5
    diff = roughness[:, None, None] * (1.0 - f_gamma) * albedo[:, None, :] / np.pi * ni_pos[..., None]
    return np.where((ni > 0)[..., None], spec + diff, 0.0)


# ---------------------------------------------------------------------------
# editing

@dataclass
class Region:
    """A box in world space or a pixel mask, with optional material overrides."""

    box_min: np.ndarray = None
    box_max: np.ndarray = None
    mask: np.ndarray = None
    set_albedo: tuple = None
    set_roughness: float = None

    def __post_init__(self):
        if (self.box_min is None) != (self.box_max is None):
            raise ValueError("a box region needs both box_min and box_max")
        if self.box_min is None and self.mask is None:
            raise ValueError("a region needs a box or a mask")
        if self.set_albedo is not None:
            a = np.broadcast_to(np.asarray(self.set_albedo, dtype=float), (3,))
            if np.any(a < 0) or np.any(a > 1):
                raise ValueError("albedo override outside [0, 1]")
            self.set_albedo = a.copy()
        if self.set_roughness is not None and not 0.0 <= float(self.set_roughness) <= 1.0:
            raise ValueError("roughness override outside [0, 1]")

    def select(self, buffers):
        sel = buffers.hit.copy()
        if self.box_min is not None:
            x = buffers.position
            sel &= np.all((x >= np.asarray(self.box_min)) & (x <= np.asarray(self.box_max)), axis=-1)
        if self.mask is not None:
            sel &= np.asarray(self.mask, dtype=bool).reshape(-1)
        return sel


@dataclass
class InsertedObject:
    """Sphere (``radius``) or box (``extent``) with its own material."""

    kind: str
    center: np.ndarray
    radius: float = 0.0
    extent: np.ndarray = None
    albedo: tuple = (0.5, 0.5, 0.5)
    roughness: float = 0.5
    alpha: float = 0.0

    def __post_init__(self):
        if self.kind not in ("sphere", "box"):
            raise ValueError(f"unknown object sdf {self.kind!r}")
        self.center = np.asarray(self.center, dtype=float)
        self.albedo = np.broadcast_to(np.asarray(self.albedo, dtype=float), (3,)).copy()
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("transparency alpha outside [0, 1]")
        if np.any(self.albedo < 0) or np.any(self.albedo > 1) or not 0 <= self.roughness <= 1:
            raise ValueError("object material outside valid ranges")

    @property
    def sdf(self):
        if self.kind == "sphere":
            return sdf_sphere(self.center, self.radius)
        return sdf_box(self.center, self.extent)


@dataclass
class EditSpec:
    regions: list = field(default_factory=list)
    objects: list = field(default_factory=list)

    @property
    def empty(self):
        return not self.regions and not self.objects


def apply_edits(frame_buffers, edits, lut, spec=None, background=0.0, metallic_from_roughness=True,
                beauty=None):
    """Override materials inside the selected regions and re-shade those pixels.

    Pixels outside every selector keep their original values bit for bit.
    Returns ``(beauty (P, 3), buffers)``.
    """
    spec = spec or PrefilterSpec()
    base = frame_buffers
    if beauty is None:
        beauty, _, _ = shade_pixel(base, lut, spec, background, metallic_from_roughness)
    beauty = np.array(beauty, dtype=float).reshape(-1, 3)
    buffers = base.copy()
    touched = np.zeros(len(base.hit), dtype=bool)
    for region in edits.regions:
        sel = region.select(buffers)
        if not sel.any():
            warnings.warn("edit region selects no pixels", EmptySelectionWarning, stacklevel=2)
            continue
        if region.set_albedo is not None:
            buffers.albedo[sel] = region.set_albedo
        if region.set_roughness is not None:
            buffers.roughness[sel] = region.set_roughness
        touched |= sel
    idx = np.flatnonzero(touched)
    if len(idx):
        b = buffers
        cos_o = np.sum(b.normal[idx] * b.omega_o[idx], axis=-1)
        d, s, _ = shade_forward(b.albedo[idx], b.irradiance[idx], b.roughness[idx], cos_o,
                                b.pref[idx], b.d_reflect[idx], b.escaped[idx], lut, spec,
                                metallic_from_roughness)
        beauty[idx] = d + s
    return beauty, buffers


def sphere_trace(sdf, origins, directions, near, far, max_steps=256, eps=1e-4):
    """Distances to the SDF surface; ``inf`` on a miss or without convergence."""
    t = np.broadcast_to(np.asarray(near, dtype=float), (len(origins),)).copy()
    far = np.broadcast_to(np.asarray(far, dtype=float), (len(origins),))
    done = np.zeros(len(origins), dtype=bool)
    active = np.ones(len(origins), dtype=bool)
    for _ in range(max_steps):
        idx = np.flatnonzero(active)
        if len(idx) == 0:
            break
        dist = sdf(origins[idx] + t[idx, None] * directions[idx])
        conv = np.abs(dist) < eps
        done[idx[conv]] = True
        t[idx] += np.where(conv, 0.0, dist)
        active[idx[conv]] = False
        active[idx[t[idx] > far[idx]]] = False
    return np.where(done & (t <= far), t, np.inf)


def _sdf_normal(sdf, x, h=1e-4):
    grad = np.stack([sdf(x + e) - sdf(x - e) for e in np.eye(3) * h], axis=-1)
    return grad / np.maximum(np.linalg.norm(grad, axis=-1, keepdims=True), 1e-300)


def insert_object(buffers, beauty, obj, camera, field, lut, spec=None, settings=None, seed=None,
                  counter=None):
    """Composite an SDF object into a rendered frame.

    The object is shaded like any surface: its own albedo and roughness, the
    field's irradiance at the hit point and a prefiltered reflection query.
    Returns ``(beauty (P, 3), object mask (P,))``.
    """
    spec = spec or PrefilterSpec()
    st = settings or RenderSettings()
    rays = camera.rays()
    beauty = np.array(beauty, dtype=float).reshape(-1, 3)
    t_obj = sphere_trace(obj.sdf, rays.origins, rays.directions, rays.near, rays.far)
    surface_depth = np.where(buffers.hit, buffers.depth, np.inf)
    mask = t_obj < surface_depth
    idx = np.flatnonzero(mask)
    if len(idx) == 0:
        return beauty, mask
    x = rays.origins[idx] + t_obj[idx, None] * rays.directions[idx]
    n = _sdf_normal(obj.sdf, x)
    wo = -rays.directions[idx]
    irr = np.reshape(field.query(x)["irradiance"], (-1,))
    if counter is not None:
        counter.add("secondary", len(x))
    omega_r = reflect(wo, n)
    q = query_prefiltered(field, x + 1e-3 * n, omega_r, st.n_reflect, st.reflect_offset, _rng(seed),
                          st.background, st.bound, counter, "secondary")
    k = len(idx)
    d, s, _ = shade_forward(np.tile(obj.albedo, (k, 1)), irr, np.full(k, float(obj.roughness)),
                            np.sum(n * wo, axis=-1), q["pref"], q["d_reflect"], q["escaped"],
                            lut, spec, st.metallic_from_roughness)
    beauty[idx] = (1.0 - obj.alpha) * (d + s) + obj.alpha * beauty[idx]
    return beauty, mask


def edit_frame(buffers, beauty, edits, camera, field, lut, spec=None, settings=None, seed=None):
    """Region overrides followed by object insertion, in that order."""
    st = settings or RenderSettings()
    out, edited = apply_edits(buffers, edits, lut, spec, st.background, st.metallic_from_roughness,
                              beauty=beauty)
    for obj in edits.objects:
        out, _ = insert_object(edited, out, obj, camera, field, lut, spec, st, seed)
    return out

