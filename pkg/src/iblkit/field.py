"""Neural prefiltered radiance field and volume rendering.

A position MLP maps an encoded point to density, albedo, irradiance,
roughness and a feature vector; a small direction MLP maps (feature, encoded
direction) to one rgb radiance per prefilter level. Forward passes can keep a
cache so that :func:`backward` returns exact parameter gradients.

Analytic fields built from signed-distance shapes implement the same query
protocol (``query``, ``density``) and serve as oracles.
"""

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels

HEADS = ("sigma", "albedo", "irradiance", "roughness")
HEAD_DIMS = {"sigma": 1, "albedo": 3, "irradiance": 1, "roughness": 1}
CKPT_MAGIC = b"IBLCKPT1\n"


class CheckpointError(ValueError):
    pass


# ---------------------------------------------------------------------------
# activations

def softplus(z):
    return np.logaddexp(0.0, z)


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def positional_encoding(v, order):
    """Raw ``v`` followed by sin(2^k pi v) for all k, then cos(2^k pi v)."""
    v = np.asarray(v)
    if order == 0:
        return v
    freqs = (2.0 ** np.arange(order)) * np.pi
    arg = (v[..., None, :] * freqs[:, None].astype(v.dtype)).reshape(v.shape[:-1] + (-1,))
    return np.concatenate([v, np.sin(arg), np.cos(arg)], axis=-1)


# ---------------------------------------------------------------------------
# parameters

@dataclass(frozen=True)
class FieldConfig:
    pos_layers: int = 8
    pos_width: int = 256
    skip: int = 4
    dir_width: int = 128
    pos_freqs: int = 10
    dir_freqs: int = 4
    levels: int = 4
    dtype: str = "float32"
    sigma_bias: float = 3.0  # start opaque; free space is carved out
    roughness_bias: float = 1.5  # start rough (~0.8); glossy-first fits trade irradiance for gloss

    def __post_init__(self):
        if self.pos_layers < 1 or self.pos_width < 1 or self.dir_width < 1:
            raise ValueError("network sizes must be positive")
        if not 0 <= self.skip < self.pos_layers:
            raise ValueError("skip layer index outside the position MLP")

    @property
    def pos_in(self):
        return 3 * (1 + 2 * self.pos_freqs)

    @property
    def dir_in(self):
        return 3 * (1 + 2 * self.dir_freqs)

    def shapes(self):
        """Tensor names and shapes in declaration order."""
        out = []
        fan = self.pos_in
        for layer in range(self.pos_layers):
            if layer == self.skip and layer > 0:
                fan += self.pos_in
            out += [(f"pos{layer}.W", (fan, self.pos_width)), (f"pos{layer}.b", (self.pos_width,))]
            fan = self.pos_width
        for head in HEADS:
            out += [(f"{head}.W", (fan, HEAD_DIMS[head])), (f"{head}.b", (HEAD_DIMS[head],))]
        out += [("feature.W", (fan, self.pos_width)), ("feature.b", (self.pos_width,))]
        out += [("dir0.W", (self.pos_width + self.dir_in, self.dir_width)), ("dir0.b", (self.dir_width,))]
        out += [("pref.W", (self.dir_width, 3 * self.levels)), ("pref.b", (3 * self.levels,))]
        return out


@dataclass
class FieldParams:
    """Network weights keyed by tensor name, plus the architecture."""

    config: FieldConfig
    tensors: dict

    def __post_init__(self):
        expected = self.config.shapes()
        if [n for n, _ in expected] != list(self.tensors):
            raise ValueError("tensor names do not match the configuration")
        for name, shape in expected:
            if self.tensors[name].shape != shape:
                raise ValueError(f"{name}: expected {shape}, got {self.tensors[name].shape}")

    @property
    def dtype(self):
        return np.dtype(self.config.dtype)

    def copy(self):
        return FieldParams(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def num_parameters(self):
        return sum(v.size for v in self.tensors.values())

    # field protocol -------------------------------------------------------
    def query(self, x, d=None):
        out, _ = forward(self, x, d)
        return out

    def density(self, x):
        out, _ = forward(self, x, None, sigma_only=True)
        return out["sigma"]


def init_params(config=None, seed=0, zero_heads=False):
    """He-uniform fan-in initialization; biases are zero except the density and roughness heads."""
    config = config or FieldConfig()
    rng = np.random.default_rng(seed)
    dtype = np.dtype(config.dtype)
    tensors = {}
    for name, shape in config.shapes():
        if name.endswith(".b"):
            bias = {"sigma.b": config.sigma_bias, "roughness.b": config.roughness_bias}
            fill = 0.0 if zero_heads else bias.get(name, 0.0)
            tensors[name] = np.full(shape, fill, dtype=dtype)
            continue
        head = name.split(".")[0]
        if zero_heads and (head in HEADS or head == "pref"):
            tensors[name] = np.zeros(shape, dtype=dtype)
            continue
        bound = np.sqrt(6.0 / shape[0])
        tensors[name] = rng.uniform(-bound, bound, shape).astype(dtype)
    return FieldParams(config, tensors)


def _check_finite(name, v):
    if not np.all(np.isfinite(v)):
        raise ValueError(f"non-finite {name}")


# ---------------------------------------------------------------------------
# forward / backward

def forward(params, x, d=None, sigma_only=False, keep_cache=False):
    """Evaluate the field at points ``x`` (N, 3) and ray directions ``d``.

    Returns ``(outputs, cache)``. ``pref`` (N, J, 3) is present only when
    directions are given; the cache is ``None`` unless ``keep_cache``.
    """
    cfg, p = params.config, params.tensors
    dt = params.dtype
    x = np.asarray(x, dtype=dt)
    _check_finite("position", x)
    enc = positional_encoding(x, cfg.pos_freqs)
    cache = {"enc": enc, "layers": []} if keep_cache else None
    h = enc
    for layer in range(cfg.pos_layers):
        inp = np.concatenate([h, enc], axis=-1) if layer == cfg.skip and layer > 0 else h
        z = inp @ p[f"pos{layer}.W"] + p[f"pos{layer}.b"]
        h = np.maximum(z, 0)
        if keep_cache:
            cache["layers"].append((inp, z > 0))
    raw_sigma = (h @ p["sigma.W"] + p["sigma.b"])[:, 0]
    out = {"sigma": softplus(raw_sigma)}
    if keep_cache:
        cache["h"] = h
        cache["raw_sigma"] = raw_sigma
    if sigma_only:
        return out, cache
    out["albedo"] = sigmoid(h @ p["albedo.W"] + p["albedo.b"])
    raw_irr = (h @ p["irradiance.W"] + p["irradiance.b"])[:, 0]
    out["irradiance"] = softplus(raw_irr)
    out["roughness"] = sigmoid(h @ p["roughness.W"] + p["roughness.b"])[:, 0]
    feature = h @ p["feature.W"] + p["feature.b"]
    out["feature"] = feature
    if keep_cache:
        cache["raw_irr"] = raw_irr
        cache["out"] = out
    if d is not None:
        out["pref"] = _direction_forward(params, feature, d, cache)
    return out, cache


def _direction_forward(params, feature, d, cache=None):
    cfg, p = params.config, params.tensors
    d = np.asarray(d, dtype=params.dtype)
    inp = np.concatenate([feature, positional_encoding(d, cfg.dir_freqs)], axis=-1)
    z = inp @ p["dir0.W"] + p["dir0.b"]
    g = np.maximum(z, 0)
    pref = sigmoid(g @ p["pref.W"] + p["pref.b"]).reshape(-1, cfg.levels, 3)
    if cache is not None:
        cache["dir"] = (inp, z > 0, g, pref)
    return pref


def eval_point(params, x):
    """(sigma, albedo, irradiance, roughness) at points ``x``."""
    out, _ = forward(params, np.atleast_2d(x))
    return out["sigma"], out["albedo"], out["irradiance"], out["roughness"]


def eval_direction(params, feature, omega):
    """Per-level radiance (N, J, 3) from position features and directions."""
    return _direction_forward(params, np.atleast_2d(feature), np.atleast_2d(omega))


def backward(params, cache, grads):
    """Parameter gradients given dL/d(outputs).

    ``grads`` may hold any of ``sigma`` (N,), ``albedo`` (N, 3),
    ``irradiance`` (N,), ``roughness`` (N,), ``pref`` (N, J, 3). Missing keys
    contribute nothing, so their heads receive exact zeros.
    """
    cfg, p = params.config, params.tensors
    dt = params.dtype
    h = cache["h"]
    g_out = {}
    dh = np.zeros_like(h)

    def head(name, draw):
        draw = draw.astype(dt, copy=False)
        g_out[f"{name}.W"] = h.T @ draw
        g_out[f"{name}.b"] = draw.sum(axis=0)
        return draw @ p[f"{name}.W"].T

    if "sigma" in grads:
        draw = (grads["sigma"] * sigmoid(cache["raw_sigma"]))[:, None]
        dh += head("sigma", draw)
    out = cache.get("out", {})
    if "albedo" in grads:
        a = out["albedo"]
        dh += head("albedo", grads["albedo"] * a * (1 - a))
    if "irradiance" in grads:
        dh += head("irradiance", (grads["irradiance"] * sigmoid(cache["raw_irr"]))[:, None])
    if "roughness" in grads:
        r = out["roughness"]
        dh += head("roughness", (grads["roughness"] * r * (1 - r))[:, None])
    if "pref" in grads and "dir" in cache:
        inp, mask, g, pref = cache["dir"]
        draw = (grads["pref"] * pref * (1 - pref)).reshape(len(g), -1).astype(dt, copy=False)
        g_out["pref.W"] = g.T @ draw
        g_out["pref.b"] = draw.sum(axis=0)
        dz = (draw @ p["pref.W"].T) * mask
        g_out["dir0.W"] = inp.T @ dz
        g_out["dir0.b"] = dz.sum(axis=0)
        dfeat = dz @ p["dir0.W"][: cfg.pos_width].T
        dh += head("feature", dfeat)
    for layer in reversed(range(cfg.pos_layers)):
        inp, mask = cache["layers"][layer]
        dz = dh * mask
        g_out[f"pos{layer}.W"] = inp.T @ dz
        g_out[f"pos{layer}.b"] = dz.sum(axis=0)
        if layer > 0:
            dinp = dz @ p[f"pos{layer}.W"].T
            dh = dinp[:, : cfg.pos_width] if layer == cfg.skip else dinp
    return {name: g_out.get(name, np.zeros_like(v)) for name, v in p.items()}


def density_position_grad(params, cache, grad_sigma):
    """Vector-Jacobian product of sigma with respect to the query points.

    ``cache`` comes from ``forward(..., keep_cache=True)``; returns (N, 3).
    """
    cfg, p = params.config, params.tensors
    enc = cache["enc"]
    dt = params.dtype
    draw = (np.asarray(grad_sigma, dtype=dt) * sigmoid(cache["raw_sigma"]))[:, None]
    dh = draw @ p["sigma.W"].T
    denc = np.zeros(enc.shape, dtype=dt)
    for layer in reversed(range(cfg.pos_layers)):
        inp, mask = cache["layers"][layer]
        dinp = (dh * mask) @ p[f"pos{layer}.W"].T
        if layer == 0:
            denc += dinp
        elif layer == cfg.skip:
            dh = dinp[:, : cfg.pos_width]
            denc += dinp[:, cfg.pos_width:]
        else:
            dh = dinp
    x = enc[:, :3].astype(float)
    order = cfg.pos_freqs
    denc = denc.astype(float)
    if order == 0:
        return denc
    freqs = (2.0 ** np.arange(order)) * np.pi
    arg = x[:, None, :] * freqs[:, None]
    g_sin = denc[:, 3: 3 + 3 * order].reshape(-1, order, 3)
    g_cos = denc[:, 3 + 3 * order:].reshape(-1, order, 3)
    chain = (g_sin * np.cos(arg) - g_cos * np.sin(arg)) * freqs[:, None]
    return denc[:, :3] + chain.sum(axis=1)


# ---------------------------------------------------------------------------
# rays and compositing

@dataclass
class Rays:
    """Ray bundle ``x(t) = origin + t * direction``, direction = -omega_o."""

    origins: np.ndarray
    directions: np.ndarray
    near: np.ndarray
    far: np.ndarray

    def __post_init__(self):
        self.origins = np.atleast_2d(np.asarray(self.origins, dtype=float))
        self.directions = np.atleast_2d(np.asarray(self.directions, dtype=float))
        n = len(self.origins)
        self.near = np.broadcast_to(np.asarray(self.near, dtype=float), (n,)).copy()
        self.far = np.broadcast_to(np.asarray(self.far, dtype=float), (n,)).copy()
        if np.any(self.near >= self.far):
            raise ValueError("ray near must be < far")
        norms = np.linalg.norm(self.directions, axis=-1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise ValueError("ray directions must be unit length")

    def __len__(self):
        return len(self.origins)

    def subset(self, idx):
        return Rays(self.origins[idx], self.directions[idx], self.near[idx], self.far[idx])


def stratified_samples(rays, n_samples, rng=None):
    """Per-ray strata of equal width; one sample per stratum.

    Returns ``(t, delta)``, both (R, N). Without ``rng`` samples sit at the
    stratum midpoints; with it they are jittered uniformly inside.
    """
    frac = np.arange(n_samples) / n_samples
    width = (rays.far - rays.near)[:, None]
    lo = rays.near[:, None] + width * frac
    delta = np.broadcast_to(width / n_samples, lo.shape).copy()
    u = 0.5 if rng is None else rng.random(lo.shape)
    return lo + u * delta, delta


@dataclass
class EvalCounter:
    """Field point evaluations by role."""

    primary: int = 0
    secondary: int = 0
    normal: int = 0

    def add(self, category, n):
        setattr(self, category, getattr(self, category) + int(n))

    @property
    def shading(self):
        # the per-pixel accounting counts primary and secondary queries
        return self.primary + self.secondary


def volume_accumulate(sigma, delta, t, values=None):
    """Composite per-sample values along rays.

    ``sigma``, ``delta``, ``t`` are (R, N); ``values`` maps names to (R, N, ...)
    arrays. Returns a dict with ``weights``, ``t_far``, ``depth`` (sum w t),
    ``acc`` (sum w) and each accumulated value.
    """
    sigma = np.asarray(sigma, dtype=float)
    if sigma.size == 0:
        raise ValueError("empty sample batch")
    _check_finite("density", sigma)
    weights, t_far = _kernels.composite_forward(sigma, np.asarray(delta, dtype=float))
    out = {"weights": weights, "t_far": t_far, "depth": np.sum(weights * t, axis=1),
           "acc": weights.sum(axis=1)}
    for name, v in (values or {}).items():
        v = np.asarray(v)
        w = weights.reshape(weights.shape + (1,) * (v.ndim - 2))
        out[name] = np.sum(w * v, axis=1)
    return out


def march(field, rays, n_samples, rng=None, with_pref=True, background=0.0,
          counter=None, category="primary", t_delta=None):
    """Sample, query and composite ``field`` along ``rays``.

    Per-level radiance is composited over ``background`` by ``t_far``.
    """
    t, delta = t_delta if t_delta is not None else stratified_samples(rays, n_samples, rng)
    r, n = t.shape
    x = rays.origins[:, None, :] + t[..., None] * rays.directions[:, None, :]
    dirs = np.broadcast_to(rays.directions[:, None, :], x.shape).reshape(-1, 3)
    q = field.query(x.reshape(-1, 3), dirs if with_pref else None)
    if counter is not None:
        counter.add(category, r * n)
    values = {k: np.asarray(q[k]).reshape((r, n) + np.shape(q[k])[1:])
              for k in ("albedo", "irradiance", "roughness", "pref") if k in q}
    out = volume_accumulate(np.asarray(q["sigma"], dtype=float).reshape(r, n), delta, t, values)
    if "pref" in out:
        out["pref"] = out["pref"] + out["t_far"][:, None, None] * np.asarray(background, dtype=float)
    out["t"], out["delta"] = t, delta
    return out


def depth_only(field, rays, t, delta, counter=None, category="normal"):
    r, n = t.shape
    x = rays.origins[:, None, :] + t[..., None] * rays.directions[:, None, :]
    sigma = np.asarray(field.density(x.reshape(-1, 3)), dtype=float).reshape(r, n)
    if counter is not None:
        counter.add(category, r * n)
    w, _ = _kernels.composite_forward(sigma, delta)
    return np.sum(w * t, axis=1)


def surface_normal(field, rays, t, delta, step=1e-2, counter=None):
    """Normals from central differences of the termination depth.

    Each ray is re-cast from origins displaced by +-``step`` along the world
    axes with the same direction and sample offsets. Returns ``(n, fallback)``;
    where the depth gradient vanishes the normal falls back to omega_o.
    """
    grad = np.zeros((len(rays), 3))
    for axis in range(3):
        off = np.zeros(3)
        off[axis] = step
        plus = Rays(rays.origins + off, rays.directions, rays.near, rays.far)
        minus = Rays(rays.origins - off, rays.directions, rays.near, rays.far)
        d_plus = depth_only(field, plus, t, delta, counter)
        d_minus = depth_only(field, minus, t, delta, counter)
        grad[:, axis] = (d_plus - d_minus) / (2 * step)
    return _orient(grad, -rays.directions)


def depth_gradient_normal(params, cache, sigma, t, delta, weights, t_far, directions):
    """Normals from the exact origin-gradient of the termination depth.

    The step -> 0 limit of :func:`surface_normal` for a network field, built
    from the primary march's cache: d(depth)/d(sigma) through compositing,
    then back through the density network to the sample positions.
    """
    r, n = t.shape
    g_sigma = _kernels.composite_backward(sigma, delta, weights, t_far, t, np.zeros(r))
    g_x = density_position_grad(params, cache, g_sigma.reshape(-1)).reshape(r, n, 3)
    grad = g_x.sum(axis=1)
    return _orient(grad, -np.asarray(directions, dtype=float))


def _orient(grad, omega_o):
    norm = np.linalg.norm(grad, axis=-1)
    fallback = norm < 1e-6
    n = np.where(fallback[:, None], omega_o, grad / np.maximum(norm, 1e-300)[:, None])
    flip = np.sum(n * omega_o, axis=-1) < 0
    n[flip] *= -1
    return n, fallback


def reflect(omega_o, n):
    """Mirror direction of omega_o about n."""
    return 2.0 * np.sum(omega_o * n, axis=-1, keepdims=True) * n - omega_o


def ray_box_exit(origins, directions, bound=1.0):
    """Distance to leave the cube [-bound, bound]^3 from interior origins."""
    with np.errstate(divide="ignore", invalid="ignore"):
        t_pos = (bound - origins) / directions
        t_neg = (-bound - origins) / directions
    t_exit = np.where(directions > 0, t_pos, np.where(directions < 0, t_neg, np.inf))
    return np.maximum(np.min(t_exit, axis=-1), 0.0)


def query_prefiltered(field, x_surf, omega_r, n_samples=64, offset=1e-3, rng=None,
                      background=0.0, bound=1.0, counter=None, category="secondary"):
    """Volume-render all levels along the reflected ray from ``x_surf``.

    Returns a dict with ``pref`` (R, J, 3), ``d_reflect`` (distance from
    ``x_surf``), ``t_far`` and ``escaped`` (t_far > 0.5). Escaped rays report
    ``d_reflect = 0``.
    """
    x_surf = np.atleast_2d(np.asarray(x_surf, dtype=float))
    omega_r = np.atleast_2d(np.asarray(omega_r, dtype=float))
    origins = x_surf + offset * omega_r
    far = np.maximum(ray_box_exit(origins, omega_r, bound), 1e-6)
    rays = Rays(origins, omega_r, 0.0, far)
    out = march(field, rays, n_samples, rng, True, background, counter, category)
    escaped = out["t_far"] > 0.5
    acc = np.maximum(out["acc"], 1e-12)
    # expected hit distance given a hit, measured from x_surf
    d_reflect = np.where(escaped, 0.0, out["depth"] / acc + offset)
    return {"pref": out["pref"], "d_reflect": d_reflect, "t_far": out["t_far"],
            "escaped": escaped, "march": out, "rays": rays}


# ---------------------------------------------------------------------------
# analytic fields

def sdf_sphere(center, radius):
    center = np.asarray(center, dtype=float)
    return lambda x: np.linalg.norm(x - center, axis=-1) - radius


def sdf_box(center, half_extent):
    center = np.asarray(center, dtype=float)
    half = np.asarray(half_extent, dtype=float)

    def sdf(x):
        q = np.abs(x - center) - half
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        return outside + np.minimum(np.max(q, axis=-1), 0.0)
    return sdf


def sdf_slab(axis, lo, hi):
    def sdf(x):
        c = x[..., axis]
        return np.maximum(lo - c, c - hi)
    return sdf


def sdf_room(half_extent):
    """Interior of a box: solid outside, empty inside."""
    box = sdf_box(np.zeros(3), half_extent)
    return lambda x: -box(x)


@dataclass
class Blob:
    """One soft solid. ``pref`` is a (J, 3) array or ``fn(x, d) -> (N, J, 3)``."""

    sdf: object
    albedo: tuple = (0.5, 0.5, 0.5)
    roughness: float = 0.5
    irradiance: float = 1.0
    pref: object = None


@dataclass
class AnalyticField:
    """Density ``s_max * sigmoid(-sdf / width)`` summed over blobs.

    Appearance at a point is the density-weighted mixture of blob values.
    """

    blobs: list
    sigma_max: float = 200.0
    width: float = 0.01
    levels: int = 4
    calls: int = field(default=0, compare=False)

    def _densities(self, x):
        if not self.blobs:
            return np.zeros((len(x), 1))
        return np.stack([self.sigma_max * _stable_sigmoid(-b.sdf(x) / self.width)
                         for b in self.blobs], axis=-1)

    def density(self, x):
        x = np.asarray(x, dtype=float)
        self.calls += len(x)
        return self._densities(x).sum(axis=-1)

    def query(self, x, d=None):
        x = np.asarray(x, dtype=float)
        self.calls += len(x)
        dens = self._densities(x)
        sigma = dens.sum(axis=-1)
        mix = dens / np.maximum(sigma, 1e-300)[:, None]
        blobs = self.blobs or [Blob(None, (0.0, 0.0, 0.0), 0.0, 0.0)]
        out = {
            "sigma": sigma,
            "albedo": mix @ np.array([b.albedo for b in blobs], dtype=float),
            "roughness": mix @ np.array([b.roughness for b in blobs], dtype=float),
            "irradiance": mix @ np.array([b.irradiance for b in blobs], dtype=float),
        }
        if d is not None:
            pref = np.zeros((len(x), self.levels, 3))
            for k, b in enumerate(blobs):
                if b.pref is None:
                    continue
                val = b.pref(x, d) if callable(b.pref) else np.asarray(b.pref, dtype=float)
                pref += mix[:, k, None, None] * val
            out["pref"] = pref
        return out


def _stable_sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


# ---------------------------------------------------------------------------
# checkpoints

def config_hash(obj):
    text = json.dumps(obj, sort_keys=True, default=str)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def save_checkpoint(params, path, metadata=None):
    """Binary checkpoint: magic, tensor shapes, f32 payload, JSON metadata."""
    meta = dict(metadata or {})
    meta["field_config"] = asdict(params.config)
    meta["tensors"] = list(params.tensors)
    shapes = [v.shape for v in params.tensors.values()]
    header = [len(shapes)]
    for s in shapes:
        header += [len(s), *s]
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack(f"<{len(header)}I", *header))
        for v in params.tensors.values():
            fh.write(np.ascontiguousarray(v, dtype="<f4").tobytes())
        text = json.dumps(meta, sort_keys=True).encode()
        fh.write(struct.pack("<I", len(text)))
        fh.write(text)


def load_checkpoint(path, dtype=None):
    """Returns ``(FieldParams, metadata)``."""
    data = Path(path).read_bytes()
    if not data.startswith(CKPT_MAGIC):
        raise CheckpointError("not a checkpoint file (bad magic)")
    off = len(CKPT_MAGIC)

    def take(fmt):
        nonlocal off
        size = struct.calcsize(fmt)
        if off + size > len(data):
            raise CheckpointError("unexpected end of checkpoint")
        vals = struct.unpack_from(fmt, data, off)
        off += size
        return vals

    (count,) = take("<I")
    shapes = []
    for _ in range(count):
        (ndim,) = take("<I")
        shapes.append(take(f"<{ndim}I"))
    arrays = []
    for s in shapes:
        n = int(np.prod(s))
        if off + 4 * n > len(data):
            raise CheckpointError("unexpected end of checkpoint")
        arrays.append(np.frombuffer(data, dtype="<f4", count=n, offset=off).reshape(s))
        off += 4 * n
    (mlen,) = take("<I")
    if off + mlen > len(data):
        raise CheckpointError("unexpected end of checkpoint")
    meta = json.loads(data[off: off + mlen].decode())
    cfg_kw = dict(meta["field_config"])
    if dtype is not None:
        cfg_kw["dtype"] = np.dtype(dtype).name
    config = FieldConfig(**cfg_kw)
    dt = np.dtype(config.dtype)
    tensors = {name: a.astype(dt) for name, a in zip(meta["tensors"], arrays)}
    return FieldParams(config, tensors), meta
