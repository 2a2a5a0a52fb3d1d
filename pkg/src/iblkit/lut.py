"""Split-sum BRDF integration lookup table.

The table stores, per (n.wo, gamma) cell, the pair (scale, bias) such that the
directional integral of the specular BRDF equals ``F0 * scale + bias``.
"""

import struct
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from . import _kernels
from .brdf import GAMMA_MIN

MAGIC = b"IBLLUT1\n"
_HEADER = struct.Struct("<II")


class LutFormatError(ValueError):
    pass


def cos_axis(resolution):
    return (np.arange(resolution) + 0.5) / resolution


def gamma_axis(resolution):
    return GAMMA_MIN + (np.arange(resolution) + 0.5) * (1.0 - GAMMA_MIN) / resolution


@dataclass(frozen=True)
class BrdfLut:
    """Immutable (R, R, 2) float32 table, cos(theta) outer, gamma inner."""

    table: np.ndarray

    def __post_init__(self):
        table = np.array(self.table, dtype=np.float32)
        if table.ndim != 3 or table.shape[0] != table.shape[1] or table.shape[2] != 2:
            raise ValueError(f"LUT table must be (R, R, 2), got {table.shape}")
        if table.shape[0] < 2:
            raise ValueError("LUT resolution must be >= 2")
        table.setflags(write=False)
        object.__setattr__(self, "table", table)

    @property
    def resolution(self):
        return self.table.shape[0]

    @property
    def scale(self):
        return self.table[..., 0]

    @property
    def bias(self):
        return self.table[..., 1]

    def __eq__(self, other):
        return isinstance(other, BrdfLut) and np.array_equal(self.table, other.table)

    def __hash__(self):
        return hash(self.table.tobytes())


_SAMPLERS = {"vndf": 0, "ndf": 1}


def cell_offsets(resolution, seed):
    """Per-cell Cranley-Patterson rotations from independent seeded streams."""
    offsets = np.empty((resolution, resolution, 2))
    for i in range(resolution):
        for j in range(resolution):
            offsets[i, j] = np.random.default_rng([seed, i, j]).random(2)
    return offsets


def compute_lut(resolution=64, samples_per_cell=2**14, seed=0, sampler="vndf"):
    """GGX-importance-sampled (scale, bias) integrals at cell centers.

    ``sampler="vndf"`` draws half-vectors from the visible-normal distribution
    of the view direction; ``"ndf"`` draws them from D(h)(n.h), which is much
    noisier at grazing angles.
    """
    if sampler not in _SAMPLERS:
        raise ValueError(f"unknown sampler {sampler!r}; expected one of {sorted(_SAMPLERS)}")
    if resolution < 2:
        raise ValueError("resolution must be >= 2")
    if samples_per_cell < 1:
        raise ValueError("samples_per_cell must be >= 1")
    table = _kernels.lut_integrate(
        cos_axis(resolution), gamma_axis(resolution), int(samples_per_cell),
        cell_offsets(resolution, seed), _SAMPLERS[sampler],
    )
    return BrdfLut(table)


def _axis_coords(values, resolution, lo, hi):
    # continuous index into cell centers, clamped to the grid
    pos = (np.asarray(values, dtype=float) - lo) / (hi - lo) * resolution - 0.5
    pos = np.clip(pos, 0.0, resolution - 1.0)
    i0 = np.minimum(np.floor(pos).astype(np.int64), resolution - 2)
    return i0, pos - i0, pos


def fetch(lut, cos_theta, gamma):
    """Bilinear (scale, bias) lookup; returns an array of shape (..., 2)."""
    r = lut.resolution
    i0, fi, _ = _axis_coords(cos_theta, r, 0.0, 1.0)
    j0, fj, _ = _axis_coords(gamma, r, GAMMA_MIN, 1.0)
    t = lut.table.astype(np.float64)
    fi = fi[..., None]
    fj = fj[..., None]
    return ((1 - fi) * (1 - fj) * t[i0, j0] + fi * (1 - fj) * t[i0 + 1, j0]
            + (1 - fi) * fj * t[i0, j0 + 1] + fi * fj * t[i0 + 1, j0 + 1])


def fetch_grad_gamma(lut, cos_theta, gamma):
    """d(scale, bias)/d(gamma) of :func:`fetch`; zero where gamma is clamped."""
    r = lut.resolution
    i0, fi, _ = _axis_coords(cos_theta, r, 0.0, 1.0)
    g = np.asarray(gamma, dtype=float)
    j0, _, pos = _axis_coords(g, r, GAMMA_MIN, 1.0)
    raw = (g - GAMMA_MIN) / (1.0 - GAMMA_MIN) * r - 0.5
    inside = (raw > 0.0) & (raw < r - 1.0)
    t = lut.table.astype(np.float64)
    fi = fi[..., None]
    d_pos = ((1 - fi) * (t[i0, j0 + 1] - t[i0, j0]) + fi * (t[i0 + 1, j0 + 1] - t[i0 + 1, j0]))
    return d_pos * (r / (1.0 - GAMMA_MIN)) * inside[..., None]


def save_lut(lut, path):
    path = Path(path)
    payload = np.ascontiguousarray(lut.table, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_HEADER.pack(lut.resolution, 0))
        fh.write(payload)


def load_lut(path):
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC):
        if data[:6] == MAGIC[:6]:
            raise LutFormatError("unsupported LUT version")
        raise LutFormatError("not a LUT file (bad magic)")
    off = len(MAGIC)
    if len(data) < off + _HEADER.size:
        raise LutFormatError("unexpected end of LUT payload")
    resolution, _reserved = _HEADER.unpack_from(data, off)
    off += _HEADER.size
    n = resolution * resolution * 2
    if resolution < 2:
        raise LutFormatError(f"invalid LUT resolution {resolution}")
    if len(data) - off < 4 * n:
        raise LutFormatError("unexpected end of LUT payload")
    table = np.frombuffer(data, dtype="<f4", count=n, offset=off).reshape(resolution, resolution, 2)
    if not np.all(np.isfinite(table)):
        raise LutFormatError("non-finite LUT entry")
    return BrdfLut(table.astype(np.float32))


_DEFAULT = None


def default_lut():
    """The shipped 64x64 table (2^14 samples/cell, seed 0)."""
    global _DEFAULT
    if _DEFAULT is None:
        ref = resources.files("iblkit") / "data" / "brdf_lut_64.bin"
        try:
            with resources.as_file(ref) as p:
                _DEFAULT = load_lut(p)
        except FileNotFoundError:
            _DEFAULT = compute_lut(64, 2**14, 0)
    return _DEFAULT


# ---------------------------------------------------------------------------
# Quadrature oracle: deterministic Gauss-Legendre integration over the
# half-vector hemisphere. Independent of the sampling path above.

def _theta_nodes(alpha, per_interval):
    x, w = np.polynomial.legendre.leggauss(per_interval)
    marks = alpha * np.array([0.03, 0.1, 0.3, 1.0, 3.0, 10.0, 30.0, 100.0])
    bps = np.unique(np.concatenate([[0.0], np.minimum(marks, np.pi / 2), [np.pi / 2]]))
    nodes, weights = [], []
    for lo, hi in zip(bps[:-1], bps[1:]):
        if hi - lo < 1e-12:
            continue
        nodes.append(0.5 * (hi - lo) * x + 0.5 * (hi + lo))
        weights.append(0.5 * (hi - lo) * w)
    return np.concatenate(nodes), np.concatenate(weights)


def _half_vector_integrand(c, alpha, nh, sin_t, hx, weight):
    # integrand of (scale, bias) over h with d(omega_i) = 4 (wo.h) d(omega_h);
    # continuous at n.wi = 0 because the masking term vanishes there
    a2 = alpha * alpha
    k = a2 / 2.0
    oh = np.sqrt(max(0.0, 1.0 - c * c)) * hx + c * nh
    ni = 2.0 * oh * nh - c
    valid = (ni > 0.0) & (oh > 0.0)
    ni_safe = np.where(valid, ni, 1.0)
    d = a2 / (np.pi * (nh * nh * (a2 - 1.0) + 1.0) ** 2)
    g = (ni_safe / (ni_safe * (1.0 - k) + k)) * (c / (c * (1.0 - k) + k))
    base = np.where(valid, d * g * oh / c * sin_t * weight, 0.0)
    fc = (1.0 - oh) ** 5
    axes = tuple(range(-2, 0))
    return np.stack([np.sum(base * (1.0 - fc), axis=axes), np.sum(base * fc, axis=axes)], axis=-1)


def _phi_nodes(n):
    px, pw = np.polynomial.legendre.leggauss(n)
    # the integrand is even in phi, so integrate [0, pi] and double
    return 0.5 * np.pi * (px + 1.0), np.pi * pw


def quadrature_entry(cos_theta, gamma, theta_nodes=48, phi_nodes=128):
    """(scale, bias) for one cell by tensor-product quadrature over h."""
    alpha = float(gamma) ** 2
    th, tw = _theta_nodes(alpha, theta_nodes)
    ph, pw = _phi_nodes(phi_nodes)
    t, p = th[:, None], ph[None, :]
    return _half_vector_integrand(float(cos_theta), alpha, np.cos(t), np.sin(t),
                                  np.sin(t) * np.cos(p), np.outer(tw, pw))


def quadrature_table(resolution, theta_nodes=48, phi_nodes=128):
    """Deterministic reference table, vectorized over the roughness axis."""
    cs, gs = cos_axis(resolution), gamma_axis(resolution)
    nodes = [_theta_nodes(g * g, theta_nodes) for g in gs]
    width = max(len(n) for n, _ in nodes)
    th = np.zeros((len(gs), width))
    tw = np.zeros((len(gs), width))
    for j, (n, w) in enumerate(nodes):
        th[j, : len(n)] = n
        tw[j, : len(w)] = w
    ph, pw = _phi_nodes(phi_nodes)
    t, p = th[:, :, None], ph[None, None, :]
    nh, sin_t = np.cos(t), np.sin(t)
    hx = sin_t * np.cos(p)
    weight = tw[:, :, None] * pw[None, None, :]
    alpha = (gs * gs)[:, None, None]
    return np.stack([_half_vector_integrand(c, alpha, nh, sin_t, hx, weight) for c in cs])
