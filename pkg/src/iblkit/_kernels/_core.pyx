# cython: language_level=3
"""Compiled hot kernels. Signatures match ``_fallback``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, cos, sin, exp, M_PI

cnp.import_array()

BACKEND = "cython"


cdef inline double _radical_inverse(unsigned int i) nogil:
    i = (i << 16) | (i >> 16)
    i = ((i & 0x00FF00FFu) << 8) | ((i & 0xFF00FF00u) >> 8)
    i = ((i & 0x0F0F0F0Fu) << 4) | ((i & 0xF0F0F0F0u) >> 4)
    i = ((i & 0x33333333u) << 2) | ((i & 0xCCCCCCCCu) >> 2)
    i = ((i & 0x55555555u) << 1) | ((i & 0xAAAAAAAAu) >> 1)
    return <double>i * (1.0 / 4294967296.0)


def van_der_corput(Py_ssize_t n):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(n)
    cdef Py_ssize_t i
    for i in range(n):
        out[i] = _radical_inverse(<unsigned int>i)
    return out


METHOD_VNDF = 0
METHOD_NDF = 1


cdef inline void _ndf_sample(double c, double wo_x, double a2, double k, double u1, double u2,
                             double* w, double* o_h) noexcept nogil:
    cdef double cos_h, sin_h, t, hx, n_i, g
    cos_h = sqrt((1.0 - u1) / (1.0 + (a2 - 1.0) * u1))
    t = 1.0 - cos_h * cos_h
    sin_h = sqrt(t) if t > 0.0 else 0.0
    hx = sin_h * cos(2.0 * M_PI * u2)
    o_h[0] = wo_x * hx + c * cos_h
    n_i = 2.0 * o_h[0] * cos_h - c
    if n_i <= 0.0 or o_h[0] <= 0.0:
        w[0] = 0.0
        return
    g = (n_i / (n_i * (1.0 - k) + k)) * (c / (c * (1.0 - k) + k))
    w[0] = g * o_h[0] / (cos_h * c)


cdef inline void _vndf_sample(double c, double wo_x, double a, double k, double g1,
                              double vx, double vz, double u1, double u2,
                              double* w, double* o_h) noexcept nogil:
    cdef double r, phi, t1, t2, tz, s, nx, ny, nz, hx, hy, hz, hn, n_i, g, t
    r = sqrt(u1)
    phi = 2.0 * M_PI * u2
    t1 = r * cos(phi)
    t2 = r * sin(phi)
    s = 0.5 * (1.0 + vz)
    t = 1.0 - t1 * t1
    t2 = (1.0 - s) * (sqrt(t) if t > 0.0 else 0.0) + s * t2
    t = 1.0 - t1 * t1 - t2 * t2
    tz = sqrt(t) if t > 0.0 else 0.0
    nx = -t2 * vz + tz * vx
    ny = t1
    nz = t2 * vx + tz * vz
    hx = a * nx
    hy = a * ny
    hz = nz if nz > 0.0 else 0.0
    hn = sqrt(hx * hx + hy * hy + hz * hz)
    hx = hx / hn
    hz = hz / hn
    o_h[0] = wo_x * hx + c * hz
    n_i = 2.0 * o_h[0] * hz - c
    if n_i <= 0.0:
        w[0] = 0.0
        return
    g = (n_i / (n_i * (1.0 - k) + k)) * (c / (c * (1.0 - k) + k))
    w[0] = g / g1


def lut_integrate(cos_centers, gamma_centers, Py_ssize_t n_samples, offsets, int method=0):
    cdef double[::1] cs = np.ascontiguousarray(cos_centers, dtype=np.float64)
    cdef double[::1] gs = np.ascontiguousarray(gamma_centers, dtype=np.float64)
    cdef double[:, :, ::1] off = np.ascontiguousarray(offsets, dtype=np.float64)
    cdef Py_ssize_t n_c = cs.shape[0], n_g = gs.shape[0]
    out_arr = np.zeros((n_c, n_g, 2))
    cdef double[:, :, ::1] out = out_arr
    cdef double[::1] vdc = van_der_corput(n_samples)
    cdef Py_ssize_t i, j, s
    cdef double c, wo_x, alpha, a2, k, o1, o2, u1, u2, g1, vx, vz, vn
    cdef double w, o_h, fc, t, acc_s, acc_b, inv_n = 1.0 / n_samples
    with nogil:
        for i in range(n_c):
            c = cs[i]
            wo_x = sqrt(1.0 - c * c) if c < 1.0 else 0.0
            for j in range(n_g):
                alpha = gs[j] * gs[j]
                a2 = alpha * alpha
                k = a2 * 0.5
                g1 = 2.0 * c / (c + sqrt(a2 + (1.0 - a2) * c * c))
                vx = alpha * wo_x
                vz = c
                vn = sqrt(vx * vx + vz * vz)
                vx = vx / vn
                vz = vz / vn
                o1 = off[i, j, 0]
                o2 = off[i, j, 1]
                acc_s = 0.0
                acc_b = 0.0
                for s in range(n_samples):
                    u1 = s * inv_n + o1
                    if u1 >= 1.0:
                        u1 -= 1.0
                    u2 = vdc[s] + o2
                    if u2 >= 1.0:
                        u2 -= 1.0
                    if method == 0:
                        _vndf_sample(c, wo_x, alpha, k, g1, vx, vz, u1, u2, &w, &o_h)
                    else:
                        _ndf_sample(c, wo_x, a2, k, u1, u2, &w, &o_h)
                    if w == 0.0:
                        continue
                    t = 1.0 - o_h
                    fc = t * t * t * t * t
                    acc_s += w * (1.0 - fc)
                    acc_b += w * fc
                out[i, j, 0] = acc_s * inv_n
                out[i, j, 1] = acc_b * inv_n
    return out_arr


def composite_forward(sigma, delta):
    cdef double[:, ::1] sg = np.ascontiguousarray(sigma, dtype=np.float64)
    cdef double[:, ::1] dl = np.ascontiguousarray(delta, dtype=np.float64)
    cdef Py_ssize_t n_r = sg.shape[0], n_s = sg.shape[1], r, i
    w_arr = np.empty((n_r, n_s))
    tf_arr = np.empty(n_r)
    cdef double[:, ::1] w = w_arr
    cdef double[::1] tf = tf_arr
    cdef double cum, before, after
    with nogil:
        for r in range(n_r):
            cum = 0.0
            before = 1.0
            for i in range(n_s):
                cum = cum + sg[r, i] * dl[r, i]
                after = exp(-cum)
                w[r, i] = before - after
                before = after
            tf[r] = before
    dtype = np.result_type(sigma, delta)
    return w_arr.astype(dtype, copy=False), tf_arr.astype(dtype, copy=False)


def composite_backward(sigma, delta, weights, t_far, grad_weights, grad_t_far):
    cdef double[:, ::1] sg = np.ascontiguousarray(sigma, dtype=np.float64)
    cdef double[:, ::1] dl = np.ascontiguousarray(delta, dtype=np.float64)
    cdef double[:, ::1] w = np.ascontiguousarray(weights, dtype=np.float64)
    cdef double[::1] tf = np.ascontiguousarray(t_far, dtype=np.float64)
    cdef double[:, ::1] gw = np.ascontiguousarray(grad_weights, dtype=np.float64)
    cdef double[::1] gf = np.ascontiguousarray(grad_t_far, dtype=np.float64)
    cdef Py_ssize_t n_r = sg.shape[0], n_s = sg.shape[1], r, i
    out_arr = np.empty((n_r, n_s))
    cdef double[:, ::1] out = out_arr
    cdef double[::1] ta = np.empty(n_s)
    cdef double cum, suffix, far_term, wg
    with nogil:
        for r in range(n_r):
            far_term = tf[r] * gf[r]
            cum = 0.0
            for i in range(n_s):
                cum = cum + sg[r, i] * dl[r, i]
                ta[i] = exp(-cum)
            suffix = 0.0
            for i in range(n_s - 1, -1, -1):
                wg = w[r, i] * gw[r, i]
                out[r, i] = dl[r, i] * (ta[i] * gw[r, i] - suffix - far_term)
                suffix = suffix + wg
    dtype = np.result_type(sigma, delta)
    return out_arr.astype(dtype, copy=False)
