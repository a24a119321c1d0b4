# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled kernel backend.

Mirrors _pykern exactly: same flat parameter layout (_layout), same
lowest-index tie rules, same empty-cluster repair. Floating-point results
may differ from the numpy backend in the last ulps because summation order
differs; each backend is bitwise deterministic on its own.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport tanh

cnp.import_array()

BACKEND_NAME = "c"


cdef struct FaeOffsets:
    Py_ssize_t enc_W1, enc_b1, enc_w2, enc_b2
    Py_ssize_t lat_W, lat_b, proj_v, proj_c
    Py_ssize_t dec_U1, dec_a1, dec_U2, dec_a2
    Py_ssize_t glob_S1, glob_b1, glob_S2, glob_b2
    Py_ssize_t total


cdef FaeOffsets _offsets(Py_ssize_t m, Py_ssize_t h, Py_ssize_t lat, bint with_global) nogil:
    cdef FaeOffsets o
    cdef Py_ssize_t w = m * (m - 1) // 2
    o.enc_W1 = 0
    o.enc_b1 = o.enc_W1 + w * h * 2
    o.enc_w2 = o.enc_b1 + w * h
    o.enc_b2 = o.enc_w2 + w * h
    o.lat_W = o.enc_b2 + w
    o.lat_b = o.lat_W + lat * w
    o.proj_v = o.lat_b + lat
    o.proj_c = o.proj_v + w * lat
    o.dec_U1 = o.proj_c + w
    o.dec_a1 = o.dec_U1 + w * h
    o.dec_U2 = o.dec_a1 + w * h
    o.dec_a2 = o.dec_U2 + w * 2 * h
    o.glob_S1 = o.dec_a2 + w * 2
    if with_global:
        o.glob_b1 = o.glob_S1 + h * w
        o.glob_S2 = o.glob_b1 + h
        o.glob_b2 = o.glob_S2 + m * h
        o.total = o.glob_b2 + m
    else:
        o.glob_b1 = o.glob_S2 = o.glob_b2 = o.glob_S1
        o.total = o.glob_S1
    return o


cdef void _pair_table(Py_ssize_t m, Py_ssize_t[::1] iw, Py_ssize_t[::1] jw) nogil:
    cdef Py_ssize_t i, j, idx = 0
    for i in range(m - 1):
        for j in range(i + 1, m):
            iw[idx] = i
            jw[idx] = j
            idx += 1


cdef void _fae_forward_sample(
    const double[::1] th, FaeOffsets o, const double[:, ::1] x, Py_ssize_t b,
    Py_ssize_t m, Py_ssize_t h, Py_ssize_t lat, Py_ssize_t w,
    const Py_ssize_t[::1] iw, const Py_ssize_t[::1] jw,
    double[:, ::1] hbuf, double[::1] ebuf, double[::1] zbuf, double[::1] dbuf,
) nogil:
    cdef Py_ssize_t ww, hh, ll
    cdef double acc, xi, xj
    for ww in range(w):
        xi = x[b, iw[ww]]
        xj = x[b, jw[ww]]
        for hh in range(h):
            acc = th[o.enc_W1 + (ww * h + hh) * 2] * xi \
                + th[o.enc_W1 + (ww * h + hh) * 2 + 1] * xj \
                + th[o.enc_b1 + ww * h + hh]
            hbuf[ww, hh] = tanh(acc)
        acc = th[o.enc_b2 + ww]
        for hh in range(h):
            acc += th[o.enc_w2 + ww * h + hh] * hbuf[ww, hh]
        ebuf[ww] = tanh(acc)
    for ll in range(lat):
        acc = th[o.lat_b + ll]
        for ww in range(w):
            acc += th[o.lat_W + ll * w + ww] * ebuf[ww]
        zbuf[ll] = tanh(acc)
    for ww in range(w):
        acc = th[o.proj_c + ww]
        for ll in range(lat):
            acc += th[o.proj_v + ww * lat + ll] * zbuf[ll]
        dbuf[ww] = tanh(acc)


cdef void _trunk_backward_sample(
    const double[::1] th, FaeOffsets o, double[::1] gr,
    const double[:, ::1] x, Py_ssize_t b,
    Py_ssize_t m, Py_ssize_t h, Py_ssize_t lat, Py_ssize_t w,
    const Py_ssize_t[::1] iw, const Py_ssize_t[::1] jw,
    const double[:, ::1] hbuf, const double[::1] ebuf, const double[::1] zbuf,
    const double[::1] dbuf, const double[::1] dd,
    double[::1] dz, double[::1] de,
) nogil:
    cdef Py_ssize_t ww, hh, ll
    cdef double dg, da, ds, dh, du, xi, xj
    for ll in range(lat):
        dz[ll] = 0.0
    for ww in range(w):
        dg = dd[ww] * (1.0 - dbuf[ww] * dbuf[ww])
        gr[o.proj_c + ww] += dg
        for ll in range(lat):
            gr[o.proj_v + ww * lat + ll] += dg * zbuf[ll]
            dz[ll] += dg * th[o.proj_v + ww * lat + ll]
    for ww in range(w):
        de[ww] = 0.0
    for ll in range(lat):
        da = dz[ll] * (1.0 - zbuf[ll] * zbuf[ll])
        gr[o.lat_b + ll] += da
        for ww in range(w):
            gr[o.lat_W + ll * w + ww] += da * ebuf[ww]
            de[ww] += da * th[o.lat_W + ll * w + ww]
    for ww in range(w):
        xi = x[b, iw[ww]]
        xj = x[b, jw[ww]]
        ds = de[ww] * (1.0 - ebuf[ww] * ebuf[ww])
        gr[o.enc_b2 + ww] += ds
        for hh in range(h):
            gr[o.enc_w2 + ww * h + hh] += ds * hbuf[ww, hh]
            dh = ds * th[o.enc_w2 + ww * h + hh]
            du = dh * (1.0 - hbuf[ww, hh] * hbuf[ww, hh])
            gr[o.enc_W1 + (ww * h + hh) * 2] += du * xi
            gr[o.enc_W1 + (ww * h + hh) * 2 + 1] += du * xj
            gr[o.enc_b1 + ww * h + hh] += du


def fae_value_grad(double[::1] theta, double[:, ::1] x,
                   Py_ssize_t m, Py_ssize_t h, Py_ssize_t lat,
                   bint with_global, int loss_kind):
    cdef Py_ssize_t w = m * (m - 1) // 2
    cdef FaeOffsets o = _offsets(m, h, lat, with_global)
    if theta.shape[0] != o.total:
        raise ValueError("theta length does not match layout")
    if loss_kind == 1 and not with_global:
        raise ValueError("model has no global decoding head")
    cdef Py_ssize_t n = x.shape[0]
    grad_arr = np.zeros(o.total)
    cdef double[::1] gr = grad_arr
    cdef double[:, ::1] hbuf = np.empty((w, h))
    cdef double[::1] ebuf = np.empty(w)
    cdef double[::1] zbuf = np.empty(lat)
    cdef double[::1] dbuf = np.empty(w)
    cdef double[::1] dd = np.empty(w)
    cdef double[::1] dz = np.empty(lat)
    cdef double[::1] de = np.empty(w)
    cdef double[:, ::1] rbuf = np.empty((w, h))
    cdef double[:, ::1] dybuf = np.empty((w, 2))
    cdef double[::1] rgbuf = np.empty(h)
    cdef double[::1] dygbuf = np.empty(m)
    cdef Py_ssize_t[::1] iw = np.empty(w, dtype=np.intp)
    cdef Py_ssize_t[::1] jw = np.empty(w, dtype=np.intp)
    cdef double loss_sq = 0.0, acc, diff, dy_scale, xi, xj, dr, dq, drg, dc
    cdef Py_ssize_t b, ww, hh, ll, oo, mm
    with nogil:
        _pair_table(m, iw, jw)
        if loss_kind == 0:
            dy_scale = 1.0 / (n * w)
        else:
            dy_scale = 2.0 / (n * m)
        for b in range(n):
            _fae_forward_sample(theta, o, x, b, m, h, lat, w, iw, jw, hbuf, ebuf, zbuf, dbuf)
            for ww in range(w):
                dd[ww] = 0.0
            if loss_kind == 0:
                for ww in range(w):
                    xi = x[b, iw[ww]]
                    xj = x[b, jw[ww]]
                    for hh in range(h):
                        acc = theta[o.dec_U1 + ww * h + hh] * dbuf[ww] \
                            + theta[o.dec_a1 + ww * h + hh]
                        rbuf[ww, hh] = tanh(acc)
                    for oo in range(2):
                        acc = theta[o.dec_a2 + ww * 2 + oo]
                        for hh in range(h):
                            acc += theta[o.dec_U2 + (ww * 2 + oo) * h + hh] * rbuf[ww, hh]
                        diff = acc - (xi if oo == 0 else xj)
                        loss_sq += diff * diff
                        dybuf[ww, oo] = diff * dy_scale
                for ww in range(w):
                    for oo in range(2):
                        gr[o.dec_a2 + ww * 2 + oo] += dybuf[ww, oo]
                        for hh in range(h):
                            gr[o.dec_U2 + (ww * 2 + oo) * h + hh] += dybuf[ww, oo] * rbuf[ww, hh]
                    for hh in range(h):
                        dr = theta[o.dec_U2 + (ww * 2 + 0) * h + hh] * dybuf[ww, 0] \
                           + theta[o.dec_U2 + (ww * 2 + 1) * h + hh] * dybuf[ww, 1]
                        dq = dr * (1.0 - rbuf[ww, hh] * rbuf[ww, hh])
                        gr[o.dec_U1 + ww * h + hh] += dq * dbuf[ww]
                        gr[o.dec_a1 + ww * h + hh] += dq
                        dd[ww] += dq * theta[o.dec_U1 + ww * h + hh]
            else:
                for hh in range(h):
                    acc = theta[o.glob_b1 + hh]
                    for ww in range(w):
                        acc += theta[o.glob_S1 + hh * w + ww] * dbuf[ww]
                    rgbuf[hh] = tanh(acc)
                for mm in range(m):
                    acc = theta[o.glob_b2 + mm]
                    for hh in range(h):
                        acc += theta[o.glob_S2 + mm * h + hh] * rgbuf[hh]
                    diff = acc - x[b, mm]
                    loss_sq += diff * diff
                    dygbuf[mm] = diff * dy_scale
                for mm in range(m):
                    gr[o.glob_b2 + mm] += dygbuf[mm]
                    for hh in range(h):
                        gr[o.glob_S2 + mm * h + hh] += dygbuf[mm] * rgbuf[hh]
                for hh in range(h):
                    drg = 0.0
                    for mm in range(m):
                        drg += theta[o.glob_S2 + mm * h + hh] * dygbuf[mm]
                    dc = drg * (1.0 - rgbuf[hh] * rgbuf[hh])
                    gr[o.glob_b1 + hh] += dc
                    for ww in range(w):
                        gr[o.glob_S1 + hh * w + ww] += dc * dbuf[ww]
                        dd[ww] += dc * theta[o.glob_S1 + hh * w + ww]
            _trunk_backward_sample(theta, o, gr, x, b, m, h, lat, w, iw, jw,
                                   hbuf, ebuf, zbuf, dbuf, dd, dz, de)
    cdef double loss
    if loss_kind == 0:
        loss = loss_sq / (n * w * 2)
    else:
        loss = loss_sq / (n * m)
    return loss, grad_arr


def fae_encode(double[::1] theta, double[:, ::1] x,
               Py_ssize_t m, Py_ssize_t h, Py_ssize_t lat, bint with_global):
    cdef Py_ssize_t w = m * (m - 1) // 2
    cdef FaeOffsets o = _offsets(m, h, lat, with_global)
    if theta.shape[0] != o.total:
        raise ValueError("theta length does not match layout")
    cdef Py_ssize_t n = x.shape[0]
    z_arr = np.empty((n, lat))
    cdef double[:, ::1] z = z_arr
    cdef double[:, ::1] hbuf = np.empty((w, h))
    cdef double[::1] ebuf = np.empty(w)
    cdef double[::1] zbuf = np.empty(lat)
    cdef double[::1] dbuf = np.empty(w)
    cdef Py_ssize_t[::1] iw = np.empty(w, dtype=np.intp)
    cdef Py_ssize_t[::1] jw = np.empty(w, dtype=np.intp)
    cdef Py_ssize_t b, ll
    with nogil:
        _pair_table(m, iw, jw)
        for b in range(n):
            _fae_forward_sample(theta, o, x, b, m, h, lat, w, iw, jw, hbuf, ebuf, zbuf, dbuf)
            for ll in range(lat):
                z[b, ll] = zbuf[ll]
    return z_arr


def fae_reconstruct(double[::1] theta, double[:, ::1] x,
                    Py_ssize_t m, Py_ssize_t h, Py_ssize_t lat, bint with_global):
    cdef Py_ssize_t w = m * (m - 1) // 2
    cdef FaeOffsets o = _offsets(m, h, lat, with_global)
    if theta.shape[0] != o.total:
        raise ValueError("theta length does not match layout")
    cdef Py_ssize_t n = x.shape[0]
    z_arr = np.empty((n, lat))
    y_arr = np.empty((n, w, 2))
    yg_arr = np.empty((n, m)) if with_global else None
    cdef double[:, ::1] z = z_arr
    cdef double[:, :, ::1] y = y_arr
    cdef double[:, ::1] yg = yg_arr if with_global else np.empty((0, m))
    cdef double[:, ::1] hbuf = np.empty((w, h))
    cdef double[::1] ebuf = np.empty(w)
    cdef double[::1] zbuf = np.empty(lat)
    cdef double[::1] dbuf = np.empty(w)
    cdef double[::1] rgbuf = np.empty(h)
    cdef Py_ssize_t[::1] iw = np.empty(w, dtype=np.intp)
    cdef Py_ssize_t[::1] jw = np.empty(w, dtype=np.intp)
    cdef Py_ssize_t b, ww, hh, ll, oo, mm
    cdef double acc, r
    with nogil:
        _pair_table(m, iw, jw)
        for b in range(n):
            _fae_forward_sample(theta, o, x, b, m, h, lat, w, iw, jw, hbuf, ebuf, zbuf, dbuf)
            for ll in range(lat):
                z[b, ll] = zbuf[ll]
            for ww in range(w):
                for oo in range(2):
                    acc = theta[o.dec_a2 + ww * 2 + oo]
                    for hh in range(h):
                        r = tanh(theta[o.dec_U1 + ww * h + hh] * dbuf[ww]
                                 + theta[o.dec_a1 + ww * h + hh])
                        acc += theta[o.dec_U2 + (ww * 2 + oo) * h + hh] * r
                    y[b, ww, oo] = acc
            if with_global:
                for hh in range(h):
                    acc = theta[o.glob_b1 + hh]
                    for ww in range(w):
                        acc += theta[o.glob_S1 + hh * w + ww] * dbuf[ww]
                    rgbuf[hh] = tanh(acc)
                for mm in range(m):
                    acc = theta[o.glob_b2 + mm]
                    for hh in range(h):
                        acc += theta[o.glob_S2 + mm * h + hh] * rgbuf[hh]
                    yg[b, mm] = acc
    return z_arr, y_arr, yg_arr


# ---------------------------------------------------------------------------
# chain MLP
# ---------------------------------------------------------------------------


def mlp_value_grad(double[::1] theta, double[:, ::1] x, dims):
    cdef Py_ssize_t n_layers = len(dims) - 1
    cdef Py_ssize_t[::1] dim = np.asarray(dims, dtype=np.intp)
    cdef Py_ssize_t[::1] w_off = np.empty(n_layers, dtype=np.intp)
    cdef Py_ssize_t[::1] b_off = np.empty(n_layers, dtype=np.intp)
    cdef Py_ssize_t off = 0, l, i, j, b
    cdef Py_ssize_t max_d = 0
    for l in range(n_layers + 1):
        if dim[l] > max_d:
            max_d = dim[l]
    for l in range(n_layers):
        w_off[l] = off
        off += dim[l + 1] * dim[l]
        b_off[l] = off
        off += dim[l + 1]
    if theta.shape[0] != off:
        raise ValueError("theta length does not match layout")
    cdef Py_ssize_t n = x.shape[0]
    grad_arr = np.zeros(off)
    cdef double[::1] gr = grad_arr
    cdef double[:, ::1] acts = np.empty((n_layers + 1, max_d))
    cdef double[::1] delta = np.empty(max_d)
    cdef double[::1] delta_next = np.empty(max_d)
    cdef double loss_sq = 0.0, acc, diff, scale
    scale = 2.0 / (n * dim[n_layers])
    with nogil:
        for b in range(n):
            for i in range(dim[0]):
                acts[0, i] = x[b, i]
            for l in range(n_layers):
                for i in range(dim[l + 1]):
                    acc = theta[b_off[l] + i]
                    for j in range(dim[l]):
                        acc += theta[w_off[l] + i * dim[l] + j] * acts[l, j]
                    acts[l + 1, i] = acc if l == n_layers - 1 else tanh(acc)
            for i in range(dim[n_layers]):
                diff = acts[n_layers, i] - x[b, i]
                loss_sq += diff * diff
                delta[i] = diff * scale
            for l in range(n_layers - 1, -1, -1):
                if l != n_layers - 1:
                    for i in range(dim[l + 1]):
                        delta[i] = delta[i] * (1.0 - acts[l + 1, i] * acts[l + 1, i])
                for i in range(dim[l + 1]):
                    gr[b_off[l] + i] += delta[i]
                    for j in range(dim[l]):
                        gr[w_off[l] + i * dim[l] + j] += delta[i] * acts[l, j]
                if l > 0:
                    for j in range(dim[l]):
                        acc = 0.0
                        for i in range(dim[l + 1]):
                            acc += theta[w_off[l] + i * dim[l] + j] * delta[i]
                        delta_next[j] = acc
                    for j in range(dim[l]):
                        delta[j] = delta_next[j]
    return loss_sq / (n * dim[n_layers]), grad_arr


def mlp_encode(double[::1] theta, double[:, ::1] x, dims, Py_ssize_t n_encode_layers):
    cdef Py_ssize_t n_layers = len(dims) - 1
    cdef Py_ssize_t[::1] dim = np.asarray(dims, dtype=np.intp)
    cdef Py_ssize_t[::1] w_off = np.empty(n_layers, dtype=np.intp)
    cdef Py_ssize_t[::1] b_off = np.empty(n_layers, dtype=np.intp)
    cdef Py_ssize_t off = 0, l, i, j, b, max_d = 0
    for l in range(n_layers + 1):
        if dim[l] > max_d:
            max_d = dim[l]
    for l in range(n_layers):
        w_off[l] = off
        off += dim[l + 1] * dim[l]
        b_off[l] = off
        off += dim[l + 1]
    if theta.shape[0] != off:
        raise ValueError("theta length does not match layout")
    cdef Py_ssize_t n = x.shape[0]
    out_arr = np.empty((n, dims[n_encode_layers]))
    cdef double[:, ::1] out = out_arr
    cdef double[::1] cur = np.empty(max_d)
    cdef double[::1] nxt = np.empty(max_d)
    cdef double acc
    with nogil:
        for b in range(n):
            for i in range(dim[0]):
                cur[i] = x[b, i]
            for l in range(n_encode_layers):
                for i in range(dim[l + 1]):
                    acc = theta[b_off[l] + i]
                    for j in range(dim[l]):
                        acc += theta[w_off[l] + i * dim[l] + j] * cur[j]
                    nxt[i] = tanh(acc)
                for i in range(dim[l + 1]):
                    cur[i] = nxt[i]
            for i in range(dim[n_encode_layers]):
                out[b, i] = cur[i]
    return out_arr


# ---------------------------------------------------------------------------
# k-means
# ---------------------------------------------------------------------------


cdef Py_ssize_t _nearest(const double[:, ::1] points, Py_ssize_t p,
                         const double[:, ::1] cent) nogil:
    cdef Py_ssize_t k = cent.shape[0], d = cent.shape[1], j, c
    cdef double best = -1.0, dist, diff
    cdef Py_ssize_t best_j = 0
    for j in range(k):
        dist = 0.0
        for c in range(d):
            diff = points[p, c] - cent[j, c]
            dist += diff * diff
        if best < 0.0 or dist < best:
            best = dist
            best_j = j
    return best_j


def assign_nearest(double[:, ::1] points, double[:, ::1] centroids):
    cdef Py_ssize_t n = points.shape[0]
    labels_arr = np.empty(n, dtype=np.int64)
    cdef long long[::1] labels = labels_arr
    cdef Py_ssize_t p
    with nogil:
        for p in range(n):
            labels[p] = _nearest(points, p, centroids)
    return labels_arr


cdef double _sqdist(const double[:, ::1] points, Py_ssize_t p,
                    const double[:, ::1] cent, Py_ssize_t j) nogil:
    cdef Py_ssize_t c
    cdef double dist = 0.0, diff
    for c in range(points.shape[1]):
        diff = points[p, c] - cent[j, c]
        dist += diff * diff
    return dist


def lloyd(double[:, ::1] points, double[:, ::1] centroids_init, Py_ssize_t max_iter):
    cdef Py_ssize_t n = points.shape[0], d = points.shape[1], k = centroids_init.shape[0]
    cent_arr = np.array(centroids_init, copy=True)
    cdef double[:, ::1] cent = cent_arr
    labels_arr = np.empty(n, dtype=np.int64)
    cdef long long[::1] labels = labels_arr
    cdef long long[::1] counts = np.empty(k, dtype=np.int64)
    cdef double[:, ::1] sums = np.empty((k, d))
    cdef long long[::1] empties = np.empty(4 * k + 4, dtype=np.int64)
    cdef Py_ssize_t p, j, c, it, n_iter = 0, n_empty, qhead, worst_p, old
    cdef double dist, worst
    cdef bint changed
    cdef Py_ssize_t lab
    with nogil:
        for p in range(n):
            labels[p] = _nearest(points, p, cent)
        for it in range(max_iter):
            n_iter += 1
            for j in range(k):
                counts[j] = 0
                for c in range(d):
                    sums[j, c] = 0.0
            for p in range(n):
                lab = labels[p]
                counts[lab] += 1
                for c in range(d):
                    sums[lab, c] += points[p, c]
            for j in range(k):
                if counts[j] > 0:
                    for c in range(d):
                        cent[j, c] = sums[j, c] / counts[j]
            # empty-cluster repair: farthest point from its own centroid
            n_empty = 0
            for j in range(k):
                if counts[j] == 0:
                    empties[n_empty] = j
                    n_empty += 1
            qhead = 0
            while qhead < n_empty:
                j = empties[qhead]
                qhead += 1
                worst = -1.0
                worst_p = 0
                for p in range(n):
                    dist = _sqdist(points, p, cent, labels[p])
                    if dist > worst:
                        worst = dist
                        worst_p = p
                old = labels[worst_p]
                counts[old] -= 1
                for c in range(d):
                    cent[j, c] = points[worst_p, c]
                labels[worst_p] = j
                counts[j] = 1
                if counts[old] == 0 and n_empty < empties.shape[0]:
                    empties[n_empty] = old
                    n_empty += 1
            changed = False
            for p in range(n):
                j = _nearest(points, p, cent)
                if j != labels[p]:
                    changed = True
                labels[p] = j
            if not changed:
                break
    cdef double inertia = 0.0
    with nogil:
        for p in range(n):
            inertia += _sqdist(points, p, cent, labels[p])
    return cent_arr, labels_arr, inertia, n_iter
