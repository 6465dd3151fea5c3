# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled scalar-loop kernels for the Monte Carlo hot paths.

Mirrors the contracts of ``pure.py`` (see the layout notes there).  The
per-trial matrices are tiny, so straight C loops beat vectorized dispatch;
scratch buffers are allocated once per block and reused across trials.
"""

import numpy as np

from libc.string cimport memset

NAME = "compiled"


cdef inline void _row_times_matrix(const double* w, const double* r_in, double* r_out,
                                   Py_ssize_t rows, Py_ssize_t cols) noexcept nogil:
    # r_out[q] = sum_p r_in[p] * W[p, q]   (W row-major, rows x cols)
    cdef Py_ssize_t pidx, qidx
    cdef double acc
    for qidx in range(cols):
        acc = 0.0
        for pidx in range(rows):
            acc += r_in[pidx] * w[pidx * cols + qidx]
        r_out[qidx] = acc


cdef inline void _matrix_times_vec(const double* w, const double* u_in, double* u_out,
                                   Py_ssize_t rows, Py_ssize_t cols) noexcept nogil:
    # u_out[p] = sum_q W[p, q] * u_in[q]
    cdef Py_ssize_t pidx, qidx
    cdef double acc
    for pidx in range(rows):
        acc = 0.0
        for qidx in range(cols):
            acc += w[pidx * cols + qidx] * u_in[qidx]
        u_out[pidx] = acc


cdef inline void _teacher_product(const double* row, const long long* offp,
                                  const long long* kd, Py_ssize_t L, Py_ssize_t P,
                                  double* scratch, double* out) noexcept nogil:
    # out[0..d) = W*_L ... W*_1 as a row vector
    cdef Py_ssize_t a, qidx
    scratch[0] = 1.0
    for a in range(L - 1, -1, -1):
        _row_times_matrix(row + P + offp[a], scratch, out, kd[a + 1], kd[a])
        for qidx in range(kd[a]):
            scratch[qidx] = out[qidx]
    for qidx in range(kd[0]):
        out[qidx] = scratch[qidx]


def lnn_block_stats(double[:, ::1] normals, widths, int n):
    """Per-trial (n*sum||g_i||^2, ||sum g_i||^2, cross) for a linear network."""
    cdef list wl = [int(w) for w in widths]
    cdef Py_ssize_t L = len(wl)
    cdef Py_ssize_t T = normals.shape[0]

    kdims_arr = np.empty(L + 1, dtype=np.int64)
    offs_arr = np.empty(L + 1, dtype=np.int64)
    cdef long long[::1] kdims = kdims_arr
    cdef long long[::1] offs = offs_arr
    cdef Py_ssize_t a
    for a in range(L):
        kdims[a] = wl[a]
    kdims[L] = 1
    cdef Py_ssize_t d = kdims[0]
    cdef Py_ssize_t P = 0
    for a in range(L):
        offs[a] = P
        P += kdims[a + 1] * kdims[a]
    offs[L] = P
    if normals.shape[1] != 2 * P + n * d:
        raise ValueError("normals row length does not match widths and n")

    cdef Py_ssize_t maxw = 1
    for a in range(L + 1):
        if kdims[a] > maxw:
            maxw = kdims[a]

    rbuf_arr = np.empty((L + 1) * maxw, dtype=np.float64)
    rn_arr = np.empty(L + 1, dtype=np.float64)
    u_arr = np.empty(maxw, dtype=np.float64)
    unext_arr = np.empty(maxw, dtype=np.float64)
    wt_arr = np.empty(maxw, dtype=np.float64)
    tb_arr = np.empty(maxw, dtype=np.float64)
    msum_arr = np.empty((L + 1) * maxw, dtype=np.float64)
    out_arr = np.empty((T, 3), dtype=np.float64)

    cdef double[::1] rbuf = rbuf_arr
    cdef double[::1] rn = rn_arr
    cdef double[::1] u_mv = u_arr
    cdef double[::1] unext_mv = unext_arr
    cdef double[::1] wt_mv = wt_arr
    cdef double[::1] tb_mv = tb_arr
    cdef double[::1] msum = msum_arr
    cdef double[:, ::1] out = out_arr

    cdef double* rb = &rbuf[0]
    cdef double* rnp = &rn[0]
    cdef double* ub
    cdef double* un
    cdef double* wt = &wt_mv[0]
    cdef double* tb = &tb_mv[0]
    cdef double* ms = &msum[0]
    cdef const long long* offp = &offs[0]
    cdef const long long* kd = &kdims[0]
    cdef const double* row

    cdef Py_ssize_t t, i, qidx
    cdef double e_i, acc, s1, normsum, tmp
    cdef double* swap

    with nogil:
        for t in range(T):
            row = &normals[t, 0]

            # student suffix rows r_L..r_0 (r_0 = full product, length d)
            rb[L * maxw] = 1.0
            rnp[L] = 1.0
            for a in range(L - 1, -1, -1):
                _row_times_matrix(row + offp[a], rb + (a + 1) * maxw, rb + a * maxw,
                                  kd[a + 1], kd[a])
                acc = 0.0
                for qidx in range(kd[a]):
                    tmp = rb[a * maxw + qidx]
                    acc += tmp * tmp
                rnp[a] = acc

            _teacher_product(row, offp, kd, L, P, tb, wt)

            memset(ms, 0, (L + 1) * maxw * sizeof(double))
            s1 = 0.0
            ub = &u_mv[0]
            un = &unext_mv[0]
            for i in range(n):
                e_i = 0.0
                for qidx in range(d):
                    e_i += (rb[qidx] - wt[qidx]) * row[2 * P + i * d + qidx]

                # prefix chain u_1..u_L, accumulating the factored statistics
                for qidx in range(d):
                    ub[qidx] = row[2 * P + i * d + qidx]
                for a in range(1, L + 1):
                    acc = 0.0
                    for qidx in range(kd[a - 1]):
                        tmp = ub[qidx]
                        acc += tmp * tmp
                        ms[a * maxw + qidx] += e_i * tmp
                    s1 += rnp[a] * e_i * e_i * acc
                    if a < L:
                        _matrix_times_vec(row + offp[a - 1], ub, un, kd[a], kd[a - 1])
                        swap = ub
                        ub = un
                        un = swap

            normsum = 0.0
            for a in range(1, L + 1):
                acc = 0.0
                for qidx in range(kd[a - 1]):
                    tmp = ms[a * maxw + qidx]
                    acc += tmp * tmp
                normsum += rnp[a] * acc

            out[t, 0] = n * s1
            out[t, 1] = normsum
            out[t, 2] = normsum - s1

    return out_arr


def lnn_block_layer_stats(double[:, ::1] normals, widths, int n):
    """Per-trial, per-layer entry-averaged samples for every layer at once.

    Columns [0, L) are squared samples, [L, 2L) the matching cross samples;
    see the pure backend for the exact definitions.
    """
    cdef list wl = [int(w) for w in widths]
    cdef Py_ssize_t L = len(wl)
    cdef Py_ssize_t T = normals.shape[0]
    if n < 2:
        raise ValueError("cross samples need n >= 2")

    kdims_arr = np.empty(L + 1, dtype=np.int64)
    offs_arr = np.empty(L + 1, dtype=np.int64)
    cdef long long[::1] kdims = kdims_arr
    cdef long long[::1] offs = offs_arr
    cdef Py_ssize_t a
    for a in range(L):
        kdims[a] = wl[a]
    kdims[L] = 1
    cdef Py_ssize_t d = kdims[0]
    cdef Py_ssize_t P = 0
    for a in range(L):
        offs[a] = P
        P += kdims[a + 1] * kdims[a]
    offs[L] = P
    if normals.shape[1] != 2 * P + n * d:
        raise ValueError("normals row length does not match widths and n")

    cdef Py_ssize_t maxw = 1
    for a in range(L + 1):
        if kdims[a] > maxw:
            maxw = kdims[a]

    rbuf_arr = np.empty((L + 1) * maxw, dtype=np.float64)
    rn_arr = np.empty(L + 1, dtype=np.float64)
    u_arr = np.empty(maxw, dtype=np.float64)
    unext_arr = np.empty(maxw, dtype=np.float64)
    wt_arr = np.empty(maxw, dtype=np.float64)
    tb_arr = np.empty(maxw, dtype=np.float64)
    msum_arr = np.empty((L + 1) * maxw, dtype=np.float64)
    bsq_arr = np.empty(L + 1, dtype=np.float64)
    out_arr = np.empty((T, 2 * L), dtype=np.float64)

    cdef double[::1] rbuf = rbuf_arr
    cdef double[::1] rn = rn_arr
    cdef double[::1] u_mv = u_arr
    cdef double[::1] unext_mv = unext_arr
    cdef double[::1] wt_mv = wt_arr
    cdef double[::1] tb_mv = tb_arr
    cdef double[::1] msum = msum_arr
    cdef double[::1] bsq_mv = bsq_arr
    cdef double[:, ::1] out = out_arr

    cdef double* rb = &rbuf[0]
    cdef double* rnp = &rn[0]
    cdef double* ub
    cdef double* un
    cdef double* wt = &wt_mv[0]
    cdef double* tb = &tb_mv[0]
    cdef double* ms = &msum[0]
    cdef double* bsq = &bsq_mv[0]
    cdef const long long* offp = &offs[0]
    cdef const long long* kd = &kdims[0]
    cdef const double* row

    cdef Py_ssize_t t, i, qidx, entries
    cdef double e_i, acc, tmp, block_cross
    cdef double* swap

    with nogil:
        for t in range(T):
            row = &normals[t, 0]

            rb[L * maxw] = 1.0
            rnp[L] = 1.0
            for a in range(L - 1, -1, -1):
                _row_times_matrix(row + offp[a], rb + (a + 1) * maxw, rb + a * maxw,
                                  kd[a + 1], kd[a])
                acc = 0.0
                for qidx in range(kd[a]):
                    tmp = rb[a * maxw + qidx]
                    acc += tmp * tmp
                rnp[a] = acc

            _teacher_product(row, offp, kd, L, P, tb, wt)

            memset(ms, 0, (L + 1) * maxw * sizeof(double))
            memset(bsq, 0, (L + 1) * sizeof(double))
            ub = &u_mv[0]
            un = &unext_mv[0]
            for i in range(n):
                e_i = 0.0
                for qidx in range(d):
                    e_i += (rb[qidx] - wt[qidx]) * row[2 * P + i * d + qidx]
                for qidx in range(d):
                    ub[qidx] = row[2 * P + i * d + qidx]
                for a in range(1, L + 1):
                    acc = 0.0
                    for qidx in range(kd[a - 1]):
                        tmp = ub[qidx]
                        acc += tmp * tmp
                        ms[a * maxw + qidx] += e_i * tmp
                    bsq[a] += rnp[a] * e_i * e_i * acc
                    if a < L:
                        _matrix_times_vec(row + offp[a - 1], ub, un, kd[a], kd[a - 1])
                        swap = ub
                        ub = un
                        un = swap

            for a in range(1, L + 1):
                acc = 0.0
                for qidx in range(kd[a - 1]):
                    tmp = ms[a * maxw + qidx]
                    acc += tmp * tmp
                block_cross = rnp[a] * acc - bsq[a]
                entries = kd[a] * kd[a - 1]
                out[t, a - 1] = bsq[a] / (n * entries)
                out[t, L + a - 1] = block_cross / (n * (n - 1.0) * entries)

    return out_arr


def lnn_block_entry_stats(double[:, ::1] normals, widths, int n,
                          int a_layer, int p, int q):
    """Per-trial samples of the layer-a entry (p, q) expectations."""
    cdef list wl = [int(w) for w in widths]
    cdef Py_ssize_t L = len(wl)
    cdef Py_ssize_t T = normals.shape[0]
    if not 1 <= a_layer <= L:
        raise ValueError("layer index out of range")
    if n < 2:
        raise ValueError("per-entry cross sample needs n >= 2")

    kdims_arr = np.empty(L + 1, dtype=np.int64)
    offs_arr = np.empty(L + 1, dtype=np.int64)
    cdef long long[::1] kdims = kdims_arr
    cdef long long[::1] offs = offs_arr
    cdef Py_ssize_t a
    for a in range(L):
        kdims[a] = wl[a]
    kdims[L] = 1
    cdef Py_ssize_t d = kdims[0]
    cdef Py_ssize_t P = 0
    for a in range(L):
        offs[a] = P
        P += kdims[a + 1] * kdims[a]
    offs[L] = P
    if normals.shape[1] != 2 * P + n * d:
        raise ValueError("normals row length does not match widths and n")
    if p < 0 or p >= kdims[a_layer]:
        raise ValueError("row index out of range for layer")
    if q < 0 or q >= kdims[a_layer - 1]:
        raise ValueError("column index out of range for layer")

    cdef Py_ssize_t maxw = 1
    for a in range(L + 1):
        if kdims[a] > maxw:
            maxw = kdims[a]

    rbuf_arr = np.empty((L + 1) * maxw, dtype=np.float64)
    u_arr = np.empty(maxw, dtype=np.float64)
    unext_arr = np.empty(maxw, dtype=np.float64)
    wt_arr = np.empty(maxw, dtype=np.float64)
    tb_arr = np.empty(maxw, dtype=np.float64)
    out_arr = np.empty((T, 2), dtype=np.float64)

    cdef double[::1] rbuf = rbuf_arr
    cdef double[::1] u_mv = u_arr
    cdef double[::1] unext_mv = unext_arr
    cdef double[::1] wt_mv = wt_arr
    cdef double[::1] tb_mv = tb_arr
    cdef double[:, ::1] out = out_arr

    cdef double* rb = &rbuf[0]
    cdef double* ub
    cdef double* un
    cdef double* wt = &wt_mv[0]
    cdef double* tb = &tb_mv[0]
    cdef const long long* offp = &offs[0]
    cdef const long long* kd = &kdims[0]
    cdef const double* row

    cdef Py_ssize_t t, i, qidx
    cdef double e_i, g, gsum, gsq, rap
    cdef double* swap

    with nogil:
        for t in range(T):
            row = &normals[t, 0]

            rb[L * maxw] = 1.0
            for a in range(L - 1, -1, -1):
                _row_times_matrix(row + offp[a], rb + (a + 1) * maxw, rb + a * maxw,
                                  kd[a + 1], kd[a])
            rap = rb[a_layer * maxw + p]

            _teacher_product(row, offp, kd, L, P, tb, wt)

            gsum = 0.0
            gsq = 0.0
            ub = &u_mv[0]
            un = &unext_mv[0]
            for i in range(n):
                e_i = 0.0
                for qidx in range(d):
                    e_i += (rb[qidx] - wt[qidx]) * row[2 * P + i * d + qidx]
                for qidx in range(d):
                    ub[qidx] = row[2 * P + i * d + qidx]
                for a in range(1, a_layer):
                    _matrix_times_vec(row + offp[a - 1], ub, un, kd[a], kd[a - 1])
                    swap = ub
                    ub = un
                    un = swap
                g = e_i * rap * ub[q]
                gsum += g
                gsq += g * g

            out[t, 0] = gsq / n
            out[t, 1] = (gsum * gsum - gsq) / (n * (n - 1.0))

    return out_arr


def twolayer_block_terms(double[:, ::1] w2, double[:, ::1] w2_teacher,
                         double[:, ::1] s, double[:, ::1] s_teacher,
                         double[:, ::1] dz, double[:, ::1] x):
    """Per-trial (A1, A2, B1, B2) of a conditioned two-layer network."""
    cdef Py_ssize_t T = w2.shape[0]
    cdef Py_ssize_t K = w2.shape[1]
    cdef Py_ssize_t n = s.shape[0]
    cdef Py_ssize_t dim = x.shape[1]
    if s_teacher.shape[0] != n or dz.shape[0] != n or x.shape[0] != n:
        raise ValueError("conditioning arrays disagree on n")
    if s.shape[1] != K or s_teacher.shape[1] != K or dz.shape[1] != K or w2_teacher.shape[1] != K:
        raise ValueError("conditioning arrays disagree on K")

    xsq_arr = np.square(np.asarray(x)).sum(axis=1)
    ssq_arr = np.square(np.asarray(s)).sum(axis=1)
    e_arr = np.empty(n, dtype=np.float64)
    v_arr = np.empty(dim, dtype=np.float64)
    out_arr = np.empty((T, 4), dtype=np.float64)

    cdef double[::1] xsq = xsq_arr
    cdef double[::1] ssq = ssq_arr
    cdef double[::1] ebuf = e_arr
    cdef double[::1] vbuf = v_arr
    cdef double[:, ::1] out = out_arr

    cdef Py_ssize_t t, i, kidx, didx
    cdef double acc, a1, a2, b1, b2, e_i, tmp

    with nogil:
        for t in range(T):
            a1 = 0.0
            a2 = 0.0
            for i in range(n):
                e_i = 0.0
                for kidx in range(K):
                    e_i += w2[t, kidx] * s[i, kidx] - w2_teacher[t, kidx] * s_teacher[i, kidx]
                ebuf[i] = e_i
                acc = 0.0
                for kidx in range(K):
                    tmp = w2[t, kidx] * dz[i, kidx]
                    acc += tmp * tmp
                a1 += e_i * e_i * acc * xsq[i]
                a2 += e_i * e_i * ssq[i]

            b2 = 0.0
            for kidx in range(K):
                acc = 0.0
                for i in range(n):
                    acc += ebuf[i] * s[i, kidx]
                b2 += acc * acc

            b1 = 0.0
            for kidx in range(K):
                for didx in range(dim):
                    vbuf[didx] = 0.0
                for i in range(n):
                    tmp = ebuf[i] * dz[i, kidx]
                    for didx in range(dim):
                        vbuf[didx] += tmp * x[i, didx]
                acc = 0.0
                for didx in range(dim):
                    acc += vbuf[didx] * vbuf[didx]
                b1 += w2[t, kidx] * w2[t, kidx] * acc

            out[t, 0] = n * a1
            out[t, 1] = n * a2
            out[t, 2] = b1
            out[t, 3] = b2

    return out_arr
