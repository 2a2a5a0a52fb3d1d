"""Losses, the three-phase schedule, Adam and the training loop.

Phase 1 fits density and the per-level radiance to blurred copies of the
training images. Phase 2 adds the shaded-radiance loss. Phase 3 freezes the
roughness head and adds the albedo prior and the irradiance regularizer.

Gradients are hand-derived adjoints of one fixed graph: encoding, MLPs,
compositing along primary and reflected rays, and the shading model. Surface
geometry (hit mask, normal, reflected ray, reflected depth) is held fixed.
"""

import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import _kernels
from .field import (FieldConfig, Rays, backward, depth_gradient_normal, forward, init_params,
                    ray_box_exit, reflect, save_checkpoint, stratified_samples)
from .lut import default_lut
from .prefilter import PrefilterSpec, prefilter_stack
from .shade import HIT_THRESHOLD, RenderSettings, shade_backward, shade_forward

TERMS = ("render", "pref", "prior", "ireg")
PHASE_TERMS = {1: ("pref",), 2: ("render", "pref"), 3: TERMS}
FROZEN_IN_PHASE3 = ("roughness.W", "roughness.b")


class TrainError(ValueError):
    pass


class MissingPriorError(TrainError):
    pass


def _finite(name, *arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise TrainError(f"non-finite {name} input")


# ---------------------------------------------------------------------------
# losses

def loss_render(pred, target):
    """Mean over rays of the squared rgb residual norm."""
    pred, target = np.asarray(pred, dtype=float), np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise TrainError(f"batch shapes differ: {pred.shape} vs {target.shape}")
    _finite("render", pred, target)
    if pred.size == 0:
        return 0.0
    res = (pred - target).reshape(len(pred), -1)
    return float(np.mean(np.sum(res * res, axis=1)))


def loss_pref(pred_levels, target_levels):
    """Sum over levels of the per-level render loss.

    Accepts (B, J, 3) arrays or length-J sequences of (B, 3) batches.
    """
    pred = _levels(pred_levels)
    target = _levels(target_levels)
    if len(pred) != len(target):
        raise TrainError(f"level count mismatch: {len(pred)} vs {len(target)}")
    return float(sum(loss_render(p, t) for p, t in zip(pred, target)))


def _levels(x):
    if isinstance(x, np.ndarray) and x.ndim == 3:
        return [x[:, j] for j in range(x.shape[1])]
    return [np.asarray(v, dtype=float) for v in x]


def loss_prior(albedo, prior_albedo):
    if prior_albedo is None:
        raise MissingPriorError("albedo prior missing")
    return loss_render(albedo, prior_albedo)


def loss_ireg(irradiance, mean_irradiance):
    if mean_irradiance is None:
        raise MissingPriorError("mean irradiance missing")
    irr = np.asarray(irradiance, dtype=float).reshape(-1, 1)
    _finite("irradiance", irr, np.asarray(mean_irradiance, dtype=float))
    return loss_render(irr, np.full_like(irr, float(mean_irradiance)))


@dataclass(frozen=True)
class LossWeights:
    """Term multipliers; ``prior`` exists so ablations can switch the albedo prior off."""

    lambda_ireg: float = 0.1
    prior: float = 1.0

    def __post_init__(self):
        if self.lambda_ireg < 0 or self.prior < 0:
            raise ValueError("loss weights must be nonnegative")

    def scales(self, phase):
        full = {"render": 1.0, "pref": 1.0, "prior": self.prior, "ireg": self.lambda_ireg}
        return {k: full[k] for k in PHASE_TERMS[phase]}


def total_loss(parts, weights=None, phase=3):
    """Weighted sum of the terms active in ``phase``."""
    weights = weights or LossWeights()
    scales = weights.scales(phase)
    missing = [k for k in scales if k not in parts]
    if missing:
        raise TrainError(f"phase {phase} needs loss parts {missing}")
    return float(sum(s * parts[k] for k, s in scales.items()))


# ---------------------------------------------------------------------------
# schedule and priors

@dataclass(frozen=True)
class Schedule:
    total_steps: int = 5000
    phase1_end: int = 500
    phase2_end: int = 4000
    batch_rays: int = 512
    lr: float = 5e-4
    lr_final: float = 5e-5

    def __post_init__(self):
        # zero steps is the degenerate "no training" schedule
        if self.total_steps != 0 and not 0 < self.phase1_end < self.phase2_end < self.total_steps:
            raise ValueError("need 0 < phase1_end < phase2_end < total_steps")
        if self.batch_rays < 1 or self.lr <= 0 or self.lr_final <= 0:
            raise ValueError("batch size and learning rates must be positive")

    def phase(self, step):
        if step < self.phase1_end:
            return 1
        return 2 if step < self.phase2_end else 3

    def learning_rate(self, step):
        frac = step / max(self.total_steps, 1)
        return self.lr * (self.lr_final / self.lr) ** frac


@dataclass
class PriorImages:
    """Per-view pseudo albedo (H, W, 3) and irradiance (H, W) images."""

    albedo: list
    irradiance: list
    mean_irradiance: float = None

    def __post_init__(self):
        self.albedo = [np.asarray(a, dtype=float) for a in self.albedo]
        self.irradiance = [np.asarray(i, dtype=float) for i in self.irradiance]
        if len(self.albedo) != len(self.irradiance):
            raise ValueError("albedo and irradiance priors differ in view count")
        for a, i in zip(self.albedo, self.irradiance):
            if np.any(a < 0) or np.any(a > 1):
                raise ValueError("prior albedo outside [0, 1]")
            if np.any(i < 0):
                raise ValueError("negative prior irradiance")
        if self.mean_irradiance is None and self.irradiance:
            self.mean_irradiance = float(np.mean([i.mean() for i in self.irradiance]))


def priors_from_aovs(albedo, irradiance, noise=0.0, seed=0):
    """Pseudo priors from ground-truth AOVs, each view scaled by its own random factor.

    The per-view factors are lognormal with log-std ``noise`` (per channel for
    albedo), mimicking single-image decompositions that disagree across views.
    """
    rng = np.random.default_rng(seed)
    alb, irr = [], []
    for a, i in zip(albedo, irradiance):
        fa = np.exp(noise * rng.standard_normal(3))
        fi = np.exp(noise * rng.standard_normal())
        alb.append(np.clip(np.asarray(a, dtype=float) * fa, 0.0, 1.0))
        irr.append(np.asarray(i, dtype=float) * fi)
    return PriorImages(alb, irr)


# ---------------------------------------------------------------------------
# ray batches

@dataclass
class TrainView:
    camera: object
    image: np.ndarray


@dataclass
class RayBatch:
    rays: Rays
    rgb: np.ndarray
    levels: np.ndarray
    prior_albedo: np.ndarray = None
    prior_irradiance: np.ndarray = None
    mean_irradiance: float = None


class RayDataset:
    """All training pixels flattened into rays with their level targets and priors."""

    def __init__(self, views, spec, priors=None):
        views = list(views)
        if not views:
            raise TrainError("dataset is empty")
        if priors is not None and len(priors.albedo) != len(views):
            raise TrainError("prior count does not match the view count")
        o, d, near, far, rgb, levels, pa, pi = [], [], [], [], [], [], [], []
        for k, v in enumerate(views):
            rays = v.camera.rays()
            img = np.asarray(v.image, dtype=float)[..., :3]
            o.append(rays.origins)
            d.append(rays.directions)
            near.append(rays.near)
            far.append(rays.far)
            rgb.append(img.reshape(-1, 3))
            stack = prefilter_stack(img, spec)
            levels.append(np.stack([s.reshape(-1, 3) for s in stack], axis=1))
            if priors is not None:
                pa.append(priors.albedo[k].reshape(-1, 3))
                pi.append(priors.irradiance[k].reshape(-1))
        self.origins, self.directions = np.concatenate(o), np.concatenate(d)
        self.near, self.far = np.concatenate(near), np.concatenate(far)
        self.rgb, self.levels = np.concatenate(rgb), np.concatenate(levels)
        self.prior_albedo = np.concatenate(pa) if pa else None
        self.prior_irradiance = np.concatenate(pi) if pi else None
        self.mean_irradiance = priors.mean_irradiance if priors is not None else None
        self.views = len(views)

    def __len__(self):
        return len(self.rgb)

    def batch(self, idx):
        take = (lambda a: None if a is None else a[idx])
        rays = Rays(self.origins[idx], self.directions[idx], self.near[idx], self.far[idx])
        return RayBatch(rays, self.rgb[idx], self.levels[idx], take(self.prior_albedo),
                        take(self.prior_irradiance), self.mean_irradiance)


# ---------------------------------------------------------------------------
# gradient engine

def _composite(weights, values, t_far=None, background=0.0):
    w = weights.reshape(weights.shape + (1,) * (values.ndim - 2))
    out = np.sum(w * values, axis=1)
    if t_far is not None:
        out = out + t_far.reshape(t_far.shape + (1,) * (out.ndim - 1)) * background
    return out


def _add(total, grads):
    for k, v in grads.items():
        total[k] = total[k] + v if k in total else v.astype(float)
    return total


def batch_loss(params, batch, phase, weights=None, lut=None, spec=None, settings=None,
               rng=None, geometry=None, scales=None, need_grad=True):
    """Loss parts and parameter gradients for one ray batch.

    ``scales`` maps terms to multipliers in the differentiated objective
    (default: the phase's weights). ``geometry`` from a previous call freezes
    the hit mask, compositing weights, normals, reflected rays, reflected
    depth and (in phase 3) the roughness, which is how the finite-difference oracle sees the same
    stop-gradient objective.
    Returns ``(parts, grads, geometry)``.
    """
    weights = weights or LossWeights()
    spec = spec or PrefilterSpec()
    st = settings or RenderSettings()
    lut = lut if lut is not None else default_lut()
    scales = weights.scales(phase) if scales is None else scales
    if phase == 3 and (batch.prior_albedo is None or batch.mean_irradiance is None):
        raise MissingPriorError("phase 3 needs albedo priors and the mean irradiance")
    rays = batch.rays
    r, ns, bg = len(rays), st.n_samples, st.background
    geo = dict(geometry) if geometry is not None else {}
    if "t" not in geo:
        geo["t"], geo["delta"] = stratified_samples(rays, ns, rng)
    t, delta = geo["t"], geo["delta"]
    x = rays.origins[:, None, :] + t[..., None] * rays.directions[:, None, :]
    dirs = np.broadcast_to(rays.directions[:, None, :], x.shape).reshape(-1, 3)
    out, cache = forward(params, x.reshape(-1, 3), dirs, keep_cache=True)
    sigma = np.asarray(out["sigma"], dtype=float).reshape(r, ns)
    w, t_far = _kernels.composite_forward(sigma, delta)
    pref_pts = np.asarray(out["pref"], dtype=float).reshape(r, ns, -1, 3)
    pref_c = _composite(w, pref_pts, t_far, bg)
    if pref_c.shape[1:] != batch.levels.shape[1:]:
        raise TrainError(f"level count mismatch: {pref_c.shape[1]} vs {batch.levels.shape[1]}")

    parts = {"pref": loss_pref(pref_c, batch.levels)}
    g_pref_c = scales.get("pref", 0.0) * 2.0 * (pref_c - batch.levels) / r
    g_albedo_c = np.zeros((r, 3))
    g_irr_c = np.zeros(r)
    g_rough_c = np.zeros(r)
    g_tf = np.zeros(r)
    sec_grads = {}

    if phase >= 2:
        # compositing weights are geometry: only the prefiltered loss moves density
        wg, tfg = geo.setdefault("w", w), geo.setdefault("t_far", t_far)
        albedo_pts = np.asarray(out["albedo"], dtype=float).reshape(r, ns, 3)
        irr_pts = np.asarray(out["irradiance"], dtype=float).reshape(r, ns)
        rough_pts = np.asarray(out["roughness"], dtype=float).reshape(r, ns)
        albedo_c = _composite(wg, albedo_pts)
        irr_c = _composite(wg, irr_pts)
        rough_c = _composite(wg, rough_pts)
        if phase == 3:
            # frozen roughness is a constant of the phase-3 objective
            rough_c = geo.setdefault("roughness", rough_c)
        if "hit" not in geo:
            _trace_geometry(geo, params, cache, sigma, w, t_far, rays, st, rng)
        hit = geo["hit"]
        hi = np.flatnonzero(hit)
        radiance = np.broadcast_to((tfg * bg)[:, None], (r, 3)).copy()
        if len(hi):
            sr, n_r = geo["sec_rays"], st.n_reflect
            xs = sr.origins[:, None, :] + geo["sec_t"][..., None] * sr.directions[:, None, :]
            ds = np.broadcast_to(sr.directions[:, None, :], xs.shape).reshape(-1, 3)
            out2, cache2 = forward(params, xs.reshape(-1, 3), ds, keep_cache=True)
            if "sec_w" not in geo:
                sig2 = np.asarray(out2["sigma"], dtype=float).reshape(len(hi), n_r)
                geo["sec_w"], geo["sec_t_far"] = _kernels.composite_forward(sig2, geo["sec_delta"])
            w2, tf2 = geo["sec_w"], geo["sec_t_far"]
            pref2_pts = np.asarray(out2["pref"], dtype=float).reshape(len(hi), n_r, -1, 3)
            pref2 = _composite(w2, pref2_pts, tf2, bg)
            if "d_reflect" not in geo:
                escaped = tf2 > 0.5
                depth2 = np.sum(w2 * geo["sec_t"], axis=1) / np.maximum(w2.sum(axis=1), 1e-12)
                geo["escaped"] = escaped
                geo["d_reflect"] = np.where(escaped, 0.0, depth2 + st.reflect_offset)
            cos_o = np.sum(geo["normal"][hi] * -rays.directions[hi], axis=-1)
            diff, spe, aux = shade_forward(albedo_c[hi], irr_c[hi], rough_c[hi], cos_o, pref2,
                                           geo["d_reflect"], geo["escaped"], lut, spec,
                                           st.metallic_from_roughness)
            radiance[hi] = diff + spe
        parts["render"] = loss_render(radiance, batch.rgb)
        g_radiance = scales.get("render", 0.0) * 2.0 * (radiance - batch.rgb) / r
        if len(hi) and need_grad:
            gs = shade_backward(aux, g_radiance[hi])
            g_albedo_c[hi] += gs["albedo"]
            g_irr_c[hi] += gs["irradiance"]
            g_rough_c[hi] += gs["roughness"]
            g_pts2 = w2[:, :, None, None] * gs["pref"][:, None]
            sec_grads = backward(params, cache2, {"pref": g_pts2.reshape(len(hi) * n_r, -1, 3)})

    if phase == 3:
        hi = np.flatnonzero(geo["hit"])
        h = max(len(hi), 1)
        parts["prior"] = loss_prior(albedo_c[hi], batch.prior_albedo[hi])
        parts["ireg"] = loss_ireg(irr_c[hi], batch.mean_irradiance)
        g_albedo_c[hi] += scales.get("prior", 0.0) * 2.0 * (albedo_c[hi] - batch.prior_albedo[hi]) / h
        g_irr_c[hi] += scales.get("ireg", 0.0) * 2.0 * (irr_c[hi] - batch.mean_irradiance) / h
        # frozen roughness: nothing flows through the roughness head
        g_rough_c[:] = 0.0

    parts = {k: v for k, v in parts.items() if k in PHASE_TERMS[phase]}
    if not need_grad:
        return parts, None, geo

    g_w = np.einsum("rjc,rnjc->rn", g_pref_c, pref_pts)
    g_tf += bg * g_pref_c.sum(axis=(1, 2))
    point_grads = {"pref": (w[:, :, None, None] * g_pref_c[:, None]).reshape(r * ns, -1, 3)}
    if phase >= 2:
        point_grads["albedo"] = (wg[..., None] * g_albedo_c[:, None]).reshape(-1, 3)
        point_grads["irradiance"] = (wg * g_irr_c[:, None]).reshape(-1)
        if phase == 2:
            point_grads["roughness"] = (wg * g_rough_c[:, None]).reshape(-1)
    point_grads["sigma"] = _kernels.composite_backward(sigma, delta, w, t_far, g_w, g_tf).reshape(-1)
    grads = _add(_add({}, backward(params, cache, point_grads)), sec_grads)
    return parts, grads, geo


def _trace_geometry(geo, params, cache, sigma, w, t_far, rays, st, rng):
    """Hit mask, depth-gradient normals and reflected rays, all treated as constants."""
    hit = w.sum(axis=1) >= HIT_THRESHOLD
    geo["hit"] = hit
    geo["normal"] = np.zeros((len(rays), 3))
    hi = np.flatnonzero(hit)
    if not len(hi):
        return
    n, _ = depth_gradient_normal(params, cache, sigma, geo["t"], geo["delta"], w, t_far,
                                 rays.directions)
    geo["normal"] = n
    depth = np.sum(w * geo["t"], axis=1)
    pos = rays.origins[hi] + depth[hi, None] * rays.directions[hi]
    omega_r = reflect(-rays.directions[hi], n[hi])
    origins = pos + st.reflect_offset * omega_r
    far = np.maximum(ray_box_exit(origins, omega_r, st.bound), 1e-6)
    sec = Rays(origins, omega_r, 0.0, far)
    geo["sec_rays"] = sec
    geo["sec_t"], geo["sec_delta"] = stratified_samples(sec, st.n_reflect, rng)


# ---------------------------------------------------------------------------
# optimizer

@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0
    skipped: int = 0

    def copy(self):
        return AdamState({k: a.copy() for k, a in self.m.items()},
                         {k: a.copy() for k, a in self.v.items()}, self.t, self.skipped)


def adam_init(params):
    zeros = {k: np.zeros(v.shape) for k, v in params.tensors.items()}
    return AdamState(zeros, {k: z.copy() for k, z in zeros.items()})


def adam_step(params, grads, state, lr, frozen=(), b1=0.9, b2=0.999, eps=1e-8):
    """One Adam update. Frozen tensors and their moments are left untouched."""
    state.t += 1
    new = params.copy()
    c1, c2 = 1.0 - b1 ** state.t, 1.0 - b2 ** state.t
    for k, g in grads.items():
        if k in frozen:
            continue
        state.m[k] = b1 * state.m[k] + (1 - b1) * g
        state.v[k] = b2 * state.v[k] + (1 - b2) * g * g
        step = lr * (state.m[k] / c1) / (np.sqrt(state.v[k] / c2) + eps)
        new.tensors[k] = (params.tensors[k] - step).astype(params.dtype)
    return new


def backward_and_step(params, batch, state, phase, lr, weights=None, lut=None, spec=None,
                      settings=None, rng=None):
    """Loss, gradients and one Adam step. Returns ``(params, report)``.

    A non-finite gradient skips the update and increments ``state.skipped``.
    """
    weights = weights or LossWeights()
    parts, grads, _ = batch_loss(params, batch, phase, weights, lut, spec, settings, rng)
    report = {"parts": parts, "total": total_loss(parts, weights, phase), "skipped": False}
    if not all(np.all(np.isfinite(g)) for g in grads.values()):
        state.skipped += 1
        report["skipped"] = True
        return params, report
    frozen = FROZEN_IN_PHASE3 if phase == 3 else ()
    return adam_step(params, grads, state, lr, frozen), report


# ---------------------------------------------------------------------------
# training loop

@dataclass(frozen=True)
class TrainConfig:
    schedule: Schedule = field(default_factory=Schedule)
    weights: LossWeights = field(default_factory=LossWeights)
    network: FieldConfig = field(default_factory=FieldConfig)
    render: RenderSettings = field(default_factory=RenderSettings)
    spec: PrefilterSpec = field(default_factory=PrefilterSpec)
    seed: int = 0
    deterministic: bool = True


@dataclass
class TrainResult:
    params: object
    log: list
    state: AdamState
    step: int


def train(dataset, priors, config=None, lut=None, out_dir=None, params=None, state=None,
          start_step=0, stop_step=None, callback=None, metadata=None):
    """Run the schedule from ``start_step`` up to ``stop_step`` (default: the end).

    ``dataset`` is a sequence of :class:`TrainView` or a :class:`RayDataset`.
    Passing ``params`` and ``state`` from an earlier result resumes it; each
    step draws its rays from a generator keyed by (seed, step), so a resumed
    run matches an uninterrupted one.
    """
    cfg = config or TrainConfig()
    sched = cfg.schedule
    data = dataset if isinstance(dataset, RayDataset) else RayDataset(dataset, cfg.spec, priors)
    if len(data) == 0:
        raise TrainError("dataset is empty")
    params = params if params is not None else init_params(cfg.network, cfg.seed)
    state = state if state is not None else adam_init(params)
    stop = sched.total_steps if stop_step is None else min(stop_step, sched.total_steps)
    log = []
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    metrics = open(out / "metrics.jsonl", "a") if out is not None else None
    try:
        for step in range(start_step, stop):
            phase = sched.phase(step)
            if phase == 3 and data.prior_albedo is None:
                raise MissingPriorError("phase 3 reached without priors")
            rng = np.random.default_rng([cfg.seed, step])
            idx = rng.integers(0, len(data), sched.batch_rays)
            t0 = time.perf_counter()
            params, rep = backward_and_step(params, data.batch(idx), state, phase,
                                            sched.learning_rate(step), cfg.weights, lut,
                                            cfg.spec, cfg.render, rng)
            rec = {"step": step, "phase": phase, "parts": rep["parts"], "total": rep["total"],
                   "skipped": rep["skipped"], "wall_ms": 1e3 * (time.perf_counter() - t0)}
            log.append(rec)
            if metrics is not None:
                metrics.write(json.dumps(rec) + "\n")
            if callback is not None:
                callback(rec)
            boundary = step + 1 in (sched.phase1_end, sched.phase2_end, sched.total_steps)
            if out is not None and boundary:
                save_checkpoint(params, out / f"phase{phase}.ckpt",
                                dict(metadata or {}, step=step + 1, phase=phase, seed=cfg.seed))
    finally:
        if metrics is not None:
            metrics.close()
    return TrainResult(params, log, state, max(stop, start_step))


def smoothed(values, window=100):
    """Trailing moving average (shorter windows at the start)."""
    v = np.asarray(values, dtype=float)
    c = np.concatenate([[0.0], np.cumsum(v)])
    i = np.arange(1, len(v) + 1)
    lo = np.maximum(i - window, 0)
    return (c[i] - c[lo]) / (i - lo)


def with_weights(config, **kw):
    return replace(config, weights=replace(config.weights, **kw))
