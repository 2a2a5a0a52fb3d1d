"""Pure numpy implementations of the hot kernels.

These mirror the signatures of the compiled ``_core`` module exactly and are
used whenever the extension is unavailable or ``IBLKIT_PURE_PYTHON=1``.
"""

import numpy as np

BACKEND = "numpy"


def van_der_corput(n):
    """Base-2 radical inverse of 0..n-1 as float64."""
    i = np.arange(n, dtype=np.uint32)
    i = ((i << 16) | (i >> 16)).astype(np.uint32)
    i = (((i & 0x00FF00FF) << 8) | ((i & 0xFF00FF00) >> 8)).astype(np.uint32)
    i = (((i & 0x0F0F0F0F) << 4) | ((i & 0xF0F0F0F0) >> 4)).astype(np.uint32)
    i = (((i & 0x33333333) << 2) | ((i & 0xCCCCCCCC) >> 2)).astype(np.uint32)
    i = (((i & 0x55555555) << 1) | ((i & 0xAAAAAAAA) >> 1)).astype(np.uint32)
    return i.astype(np.float64) * (1.0 / 4294967296.0)


METHOD_VNDF = 0
METHOD_NDF = 1


def _ndf_weights(c, alpha, u1, u2):
    # h ~ D(h)(n.h); weight = G (wo.h) / ((n.h)(n.wo))
    a2 = alpha * alpha
    k = a2 / 2.0
    wo_x = np.sqrt(max(0.0, 1.0 - c * c))
    cos_h = np.sqrt((1.0 - u1) / (1.0 + (a2[:, None] - 1.0) * u1))
    sin_h = np.sqrt(np.maximum(0.0, 1.0 - cos_h * cos_h))
    hx = sin_h * np.cos(2.0 * np.pi * u2)
    o_h = wo_x * hx + c * cos_h
    n_i = 2.0 * o_h * cos_h - c
    valid = (n_i > 0.0) & (o_h > 0.0)
    n_i = np.where(valid, n_i, 1.0)
    kk = k[:, None]
    g = (n_i / (n_i * (1.0 - kk) + kk)) * (c / (c * (1.0 - kk) + kk))
    return np.where(valid, g * o_h / (cos_h * c), 0.0), o_h


def _vndf_weights(c, alpha, u1, u2):
    # h ~ visible normals of wo; weight = G / G1_smith(wo)
    a = alpha[:, None]
    a2 = a * a
    k = a2 / 2.0
    wo_x = np.sqrt(max(0.0, 1.0 - c * c))
    # stretched view vector lies in the xz-plane: T1 = (0, 1, 0)
    vx, vz = a * wo_x, np.broadcast_to(c, a.shape)
    vn = np.sqrt(vx * vx + vz * vz)
    vx, vz = vx / vn, vz / vn
    r = np.sqrt(u1)
    phi = 2.0 * np.pi * u2
    t1 = r * np.cos(phi)
    t2 = r * np.sin(phi)
    s = 0.5 * (1.0 + vz)
    t2 = (1.0 - s) * np.sqrt(np.maximum(0.0, 1.0 - t1 * t1)) + s * t2
    tz = np.sqrt(np.maximum(0.0, 1.0 - t1 * t1 - t2 * t2))
    # T1 = (0,1,0), T2 = Vh x T1 = (-vz, 0, vx)
    nx = -t2 * vz + tz * vx
    ny = t1
    nz = t2 * vx + tz * vz
    hx, hy, hz = a * nx, a * ny, np.maximum(0.0, nz)
    hn = np.sqrt(hx * hx + hy * hy + hz * hz)
    hx, hz = hx / hn, hz / hn
    o_h = wo_x * hx + c * hz
    n_i = 2.0 * o_h * hz - c
    valid = n_i > 0.0
    n_i = np.where(valid, n_i, 1.0)
    g = (n_i / (n_i * (1.0 - k) + k)) * (c / (c * (1.0 - k) + k))
    g1 = 2.0 * c / (c + np.sqrt(a2 + (1.0 - a2) * c * c))
    return np.where(valid, g / g1, 0.0), o_h


def lut_integrate(cos_centers, gamma_centers, n_samples, offsets, method=METHOD_VNDF):
    """Importance-sampled (scale, bias) split-sum integrals per grid cell.

    Hammersley points rotated per cell by ``offsets`` drive GGX half-vector
    sampling (visible normals by default, ``method=1`` for D(h)(n.h)); the
    view vector sits in the xz-plane with the normal on +z.
    """
    cos_centers = np.asarray(cos_centers, dtype=np.float64)
    gamma_centers = np.asarray(gamma_centers, dtype=np.float64)
    offsets = np.asarray(offsets, dtype=np.float64)
    out = np.zeros((cos_centers.size, gamma_centers.size, 2))
    base1 = np.arange(n_samples, dtype=np.float64) / n_samples
    base2 = van_der_corput(n_samples)
    alpha = gamma_centers**2
    weights_fn = _vndf_weights if method == METHOD_VNDF else _ndf_weights
    for i, c in enumerate(cos_centers):
        # one row of gamma cells at a time: (n_gamma, n_samples)
        u1 = np.mod(base1[None, :] + offsets[i, :, 0:1], 1.0)
        u2 = np.mod(base2[None, :] + offsets[i, :, 1:2], 1.0)
        w, o_h = weights_fn(c, alpha, u1, u2)
        fc = (1.0 - o_h) ** 5
        out[i, :, 0] = np.sum(w * (1.0 - fc), axis=1) / n_samples
        out[i, :, 1] = np.sum(w * fc, axis=1) / n_samples
    return out


def composite_forward(sigma, delta):
    """Per-sample volume-rendering weights and far transmittance.

    ``sigma`` and ``delta`` are (rays, samples). Returns ``(weights, t_far)``.
    """
    tau = sigma * delta
    cum = np.cumsum(tau, axis=1)
    trans_after = np.exp(-cum)
    trans_before = np.empty_like(trans_after)
    trans_before[:, 0] = 1.0
    trans_before[:, 1:] = trans_after[:, :-1]
    weights = trans_before - trans_after
    return weights, trans_after[:, -1].copy()


def composite_backward(sigma, delta, weights, t_far, grad_weights, grad_t_far):
    """Adjoint of :func:`composite_forward` with respect to ``sigma``.

    dL/dsigma_k = delta_k * (T_{k+1} g_k - sum_{i>k} w_i g_i - T_far g_far)
    """
    tau = sigma * delta
    trans_after = np.exp(-np.cumsum(tau, axis=1))
    wg = weights * grad_weights
    suffix = np.cumsum(wg[:, ::-1], axis=1)[:, ::-1]
    after = suffix - wg
    return delta * (trans_after * grad_weights - after - (t_far * grad_t_far)[:, None])
