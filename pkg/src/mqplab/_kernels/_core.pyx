# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled stepping kernels.

Mirrors mqplab._kernels.pure exactly: same exponential-map update, same QR
schedule, same sampling and snapshot logic, so per-trajectory results agree
with the fallback lane to rounding.  Per-trajectory math depends only on that
trajectory's own noise arrays; the batch axis only amortizes call overhead.
"""

import numpy as np

from libc.math cimport exp, fabs, isfinite, log, sqrt

BACKEND_NAME = "compiled"

DEF MAXD = 16

cdef double _OVERFLOW = 1e100


cdef void _mm(double* a, double* b, double* out, int d) noexcept nogil:
    cdef int i, j, k
    cdef double acc
    for i in range(d):
        for j in range(d):
            acc = 0.0
            for k in range(d):
                acc += a[i * d + k] * b[k * d + j]
            out[i * d + j] = acc


cdef double _det_small_c(double* g, int d) noexcept nogil:
    """Closed-form determinant for d <= 3 (same evaluation order as the pure
    lane); Gaussian elimination with partial pivoting otherwise."""
    cdef double a[MAXD * MAXD]
    cdef double det, piv, fac
    cdef int i, j, k, p
    if d == 1:
        return g[0]
    if d == 2:
        return g[0] * g[3] - g[1] * g[2]
    if d == 3:
        return (g[0] * (g[4] * g[8] - g[5] * g[7])
                - g[1] * (g[3] * g[8] - g[5] * g[6])
                + g[2] * (g[3] * g[7] - g[4] * g[6]))
    for i in range(d * d):
        a[i] = g[i]
    det = 1.0
    for k in range(d):
        p = k
        for i in range(k + 1, d):
            if fabs(a[i * d + k]) > fabs(a[p * d + k]):
                p = i
        if p != k:
            det = -det
            for j in range(d):
                piv = a[k * d + j]
                a[k * d + j] = a[p * d + j]
                a[p * d + j] = piv
        piv = a[k * d + k]
        det *= piv
        if piv == 0.0:
            return 0.0
        for i in range(k + 1, d):
            fac = a[i * d + k] / piv
            for j in range(k, d):
                a[i * d + j] -= fac * a[k * d + j]
    return det


cdef void _expm4_c(double* s, double* g, int d, bint unimodular) noexcept nogil:
    """g = I + s + s^2/2 + s^3/6 + s^4/24, optionally rescaled to det 1."""
    cdef double s2[MAXD * MAXD]
    cdef double s3[MAXD * MAXD]
    cdef double s4[MAXD * MAXD]
    cdef int i, j
    cdef double det, scale
    _mm(s, s, s2, d)
    _mm(s2, s, s3, d)
    _mm(s3, s, s4, d)
    for i in range(d):
        for j in range(d):
            g[i * d + j] = s[i * d + j] + s2[i * d + j] / 2.0 \
                + s3[i * d + j] / 6.0 + s4[i * d + j] / 24.0
        g[i * d + i] += 1.0
    if unimodular:
        det = _det_small_c(g, d)
        if det > 0.0:
            scale = exp(-log(det) / d)
            for i in range(d * d):
                g[i] *= scale


cdef void _mgs_c(double* z, double* r, int d) noexcept nogil:
    """Two-pass modified Gram-Schmidt in place: z becomes Q, r receives R."""
    cdef int i, j, k, p
    cdef double c, nrm
    cdef double v[MAXD]
    for j in range(d):
        for k in range(d):
            v[k] = z[k * d + j]
        for p in range(2):
            for i in range(j):
                c = 0.0
                for k in range(d):
                    c += z[k * d + i] * v[k]
                r[i * d + j] += c
                for k in range(d):
                    v[k] -= c * z[k * d + i]
        nrm = 0.0
        for k in range(d):
            nrm += v[k] * v[k]
        nrm = sqrt(nrm)
        r[j * d + j] = nrm
        for k in range(d):
            z[k * d + j] = v[k] / nrm


cdef void _reorth_traj(double* z, double[:, :] logst, double[:, :, :, :] rhist,
                       long long[:] rcount, Py_ssize_t b, int d, bint track_r) noexcept nogil:
    cdef double r[MAXD * MAXD]
    cdef int i, j
    cdef long long nr
    for i in range(d * d):
        r[i] = 0.0
    _mgs_c(z, r, d)
    for i in range(d):
        logst[b, i] += log(r[i * d + i])
    if track_r:
        nr = rcount[b]
        if nr < rhist.shape[1]:
            for i in range(d):
                for j in range(d):
                    rhist[b, nr, i, j] = r[i * d + j]
            rcount[b] = nr + 1


def scalar_chunk(
    double[:] x, double[:] logw, double[:] aux, long long[:] blow,
    long long[:] nsamp, double[:, :] samples, double[:, :] snaps,
    double[:, :] zm, double[:, :] za, long long step0, long long n,
    int mode, int scheme, bint track_x, bint track_w,
    double a_drift, double efac, double wlog, double corr,
    double mscale, double oudecay, double tg_p, double dt,
    double ascale, double cross,
    long long sample_start, long long sample_stride,
    long long[:] snap_steps, long long n_snap_done, double ceiling,
):
    cdef Py_ssize_t B = x.shape[0]
    cdef bint has_mult = zm.shape[1] > 0
    cdef bint has_add = za.shape[1] > 0
    cdef Py_ssize_t n_snaps = snap_steps.shape[0]
    cdef Py_ssize_t b
    cdef long long k, gstep, t1, sp
    cdef double s, add, xb, xn, xt, f0
    cdef long long snap_ptr = n_snap_done
    with nogil:
        for b in range(B):
            sp = n_snap_done
            for k in range(n):
                gstep = step0 + k
                t1 = gstep + 1
                if not has_mult:
                    s = 0.0
                elif mode == 0:
                    s = mscale * zm[b, k]
                elif mode == 1:
                    s = aux[b] * dt
                else:
                    s = aux[b] * (mscale * dt)
                add = cross * s
                if has_add:
                    add = add + ascale * za[b, k]
                if track_x:
                    if blow[b] < 0:
                        xb = x[b]
                        if scheme == 0:
                            if has_mult:
                                xn = efac * (exp(s) * xb + add)
                            else:
                                xn = efac * (xb + add)
                        else:
                            f0 = a_drift * xb
                            xt = xb + f0 * dt + s * xb + add
                            xn = xb + 0.5 * dt * (f0 + a_drift * xt) + s * xb + add
                        if (not isfinite(xn)) or fabs(xn) > ceiling:
                            blow[b] = gstep
                        else:
                            x[b] = xn
                if track_w:
                    logw[b] += wlog + s
                if mode == 1:
                    aux[b] = oudecay * aux[b] + mscale * zm[b, k]
                elif mode == 2:
                    if zm[b, k] < tg_p:
                        aux[b] = -aux[b]
                if track_x and sample_stride > 0 and t1 >= sample_start \
                        and (t1 - sample_start) % sample_stride == 0 and blow[b] < 0:
                    samples[b, nsamp[b]] = x[b]
                    nsamp[b] += 1
                if sp < n_snaps and t1 == snap_steps[sp]:
                    snaps[b, sp] = logw[b]
                    sp += 1
            if b == 0:
                snap_ptr = sp
    return int(snap_ptr)


def dense_chunk(
    double[:, :] x, z_obj, logst_obj, double[:, :, :] aux,
    long long[:] blow, long long[:] nsamp,
    double[:, :, :] samples, double[:, :, :] snaps,
    rhist_obj, long long[:] rcount,
    double[:, :, :] zm, double[:, :, :] za, long long step0, long long n,
    int mode, int scheme, bint track_x, bint track_w,
    double[:, :] E, double[:, :] A, double[:, :] Ec, double[:, :, :] factors,
    double[:, :] ouin, double oudecay, double[:, :] tgsig, double tg_p,
    double dt, double[:] ascale,
    long long sample_start, long long sample_stride,
    long long[:] snap_steps, long long n_snap_done,
    long long reorth_every, double ceiling, bint unimodular,
):
    cdef Py_ssize_t B = x.shape[0]
    cdef int d = E.shape[0]
    if d > MAXD:
        raise ValueError(f"compiled kernel supports d <= {MAXD}")
    cdef bint has_mult = zm.shape[2] > 0
    cdef bint has_add = za.shape[1] > 0
    cdef bint track_r = rhist_obj is not None
    cdef double[:, :, :, :] rhist
    cdef double[:, :, :] z
    cdef double[:, :] logst
    if track_r:
        rhist = rhist_obj
    else:
        rhist = np.zeros((1, 1, 1, 1))
    if track_w:
        z = z_obj
        logst = logst_obj
    else:
        z = np.zeros((1, 1, 1))
        logst = np.zeros((1, 1))
    cdef Py_ssize_t n_snaps = snap_steps.shape[0]
    cdef Py_ssize_t b
    cdef long long k, gstep, t1, sp
    cdef int i, j, f, nf
    cdef double acc, zmax
    cdef double s[MAXD * MAXD]
    cdef double g[MAXD * MAXD]
    cdef double zb[MAXD * MAXD]
    cdef double ym[MAXD * MAXD]
    cdef double xb[MAXD]
    cdef double y[MAXD]
    cdef double yv[MAXD]
    cdef double f0[MAXD]
    cdef bint bad, scheduled, is_snap
    cdef long long snap_ptr = n_snap_done
    nf = factors.shape[0]
    with nogil:
        for b in range(B):
            sp = n_snap_done
            if track_w:
                for i in range(d):
                    for j in range(d):
                        zb[i * d + j] = z[b, i, j]
            for k in range(n):
                gstep = step0 + k
                t1 = gstep + 1
                # multiplicative increment s over this step, and its exponential
                if not has_mult:
                    for i in range(d * d):
                        s[i] = 0.0
                elif mode == 0:
                    for i in range(d * d):
                        s[i] = 0.0
                    for f in range(nf):
                        acc = zm[b, k, f]
                        for i in range(d):
                            for j in range(d):
                                s[i * d + j] += acc * factors[f, i, j]
                elif mode == 1:
                    for i in range(d):
                        for j in range(d):
                            s[i * d + j] = aux[b, i, j] * dt
                else:
                    acc = aux[b, 0, 0] * dt
                    for i in range(d):
                        for j in range(d):
                            s[i * d + j] = acc * tgsig[i, j]
                if has_mult:
                    _expm4_c(s, g, d, unimodular)
                if track_x and blow[b] < 0:
                    for i in range(d):
                        xb[i] = x[b, i]
                    if scheme == 0:
                        if has_mult:
                            for i in range(d):
                                acc = 0.0
                                for j in range(d):
                                    acc += g[i * d + j] * xb[j]
                                y[i] = acc
                        else:
                            for i in range(d):
                                y[i] = xb[i]
                        if has_add:
                            for i in range(d):
                                y[i] += ascale[i] * za[b, k, i]
                        for i in range(d):
                            acc = 0.0
                            for j in range(d):
                                acc += E[i, j] * y[j]
                            yv[i] = acc
                    else:
                        # y = s x (+ additive); f0 = A x; predictor in ym; f1 in yv
                        for i in range(d):
                            acc = 0.0
                            for j in range(d):
                                acc += s[i * d + j] * xb[j]
                            y[i] = acc
                        if has_add:
                            for i in range(d):
                                y[i] += ascale[i] * za[b, k, i]
                        for i in range(d):
                            acc = 0.0
                            for j in range(d):
                                acc += A[i, j] * xb[j]
                            f0[i] = acc
                        for i in range(d):
                            ym[i] = xb[i] + f0[i] * dt + y[i]
                        for i in range(d):
                            acc = 0.0
                            for j in range(d):
                                acc += A[i, j] * ym[j]
                            yv[i] = acc
                        for i in range(d):
                            yv[i] = xb[i] + 0.5 * dt * (f0[i] + yv[i]) + y[i]
                    bad = False
                    for i in range(d):
                        if (not isfinite(yv[i])) or fabs(yv[i]) > ceiling:
                            bad = True
                    if bad:
                        blow[b] = gstep
                    else:
                        for i in range(d):
                            x[b, i] = yv[i]
                if track_w:
                    # zb <- Ec (expm4(s) zb)
                    _mm(g, zb, ym, d)
                    for i in range(d):
                        for j in range(d):
                            acc = 0.0
                            for f in range(d):
                                acc += Ec[i, f] * ym[f * d + j]
                            zb[i * d + j] = acc
                    scheduled = (t1 % reorth_every == 0)
                    is_snap = sp < n_snaps and t1 == snap_steps[sp]
                    if scheduled or is_snap:
                        _reorth_traj(zb, logst, rhist, rcount, b, d, track_r)
                    else:
                        zmax = 0.0
                        for i in range(d * d):
                            if fabs(zb[i]) > zmax:
                                zmax = fabs(zb[i])
                        if zmax > _OVERFLOW:
                            _reorth_traj(zb, logst, rhist, rcount, b, d, track_r)
                if mode == 1:
                    for i in range(d):
                        for j in range(d):
                            aux[b, i, j] = oudecay * aux[b, i, j] + ouin[i, j] * zm[b, k, i * d + j]
                elif mode == 2:
                    if zm[b, k, 0] < tg_p:
                        aux[b, 0, 0] = -aux[b, 0, 0]
                if track_x and sample_stride > 0 and t1 >= sample_start \
                        and (t1 - sample_start) % sample_stride == 0 and blow[b] < 0:
                    for i in range(d):
                        samples[b, nsamp[b], i] = x[b, i]
                    nsamp[b] += 1
                if sp < n_snaps and t1 == snap_steps[sp]:
                    for i in range(d):
                        snaps[b, sp, i] = logst[b, i]
                    sp += 1
            if track_w:
                for i in range(d):
                    for j in range(d):
                        z[b, i, j] = zb[i * d + j]
            if b == 0:
                snap_ptr = sp
    return int(snap_ptr)
