"""Pure-numpy stepping kernels (fallback lane).

Both kernel lanes share one contract: trajectories carry a leading batch axis
B, every per-trajectory quantity depends only on that trajectory's own noise
arrays, and all arithmetic is performed per trajectory in a fixed order, so
results are independent of batch composition, worker count and execution order.

Default scheme (0): the multiplicative increment s over a step is applied
through the exponential map and the constant linear drift through its exact
integrating factor,

    x <- E expm(s) x + E a,      E = expm((m - phi + (lambda-1/2) C) dt),

with expm(s) evaluated exactly for scalars and by a 4th-order Taylor
polynomial for matrices.  The exponential update carries the Stratonovich half
of the convention correction, hence the (lambda - 1/2) C drift term.  It is
weak order 1, exact for deterministic linear systems, and preserves
tr log W exactly for traceless multiplicative increments (the volume sum rule
of incompressible flows holds to rounding instead of O(dt)).

Scheme 1 is the classical predictor-corrector (Heun on the full Ito drift
m - phi + lambda C, Euler noise).

The propagator frame Z is re-orthonormalized by two-pass modified Gram-Schmidt
every `reorth_every` steps, at snapshot steps, and whenever an entry exceeds
1e100 (that last check is made per trajectory).
"""

from __future__ import annotations

import numpy as np

BACKEND_NAME = "pure"

_OVERFLOW = 1e100


def _mgs(z):
    """Two-pass modified Gram-Schmidt of a (d,d) matrix; returns (q, r) with
    r_jj >= 0.  Fixed column order so results do not depend on context."""
    d = z.shape[0]
    q = np.empty_like(z)
    r = np.zeros_like(z)
    for j in range(d):
        v = z[:, j].copy()
        for _pass in range(2):
            for i in range(j):
                c = float(q[:, i] @ v)
                r[i, j] += c
                v -= c * q[:, i]
        nrm = float(np.sqrt(v @ v))
        r[j, j] = nrm
        q[:, j] = v / nrm
    return q, r


def _mgs_batch(z):
    """Batched two-pass MGS over (B,d,d); per-item results equal _mgs item-wise."""
    b, d, _ = z.shape
    q = np.empty_like(z)
    r = np.zeros((b, d, d))
    for j in range(d):
        v = z[:, :, j].copy()
        for _pass in range(2):
            for i in range(j):
                c = np.einsum("bk,bk->b", q[:, :, i], v)
                r[:, i, j] += c
                v -= c[:, None] * q[:, :, i]
        nrm = np.sqrt(np.einsum("bk,bk->b", v, v))
        r[:, j, j] = nrm
        q[:, :, j] = v / nrm[:, None]
    return q, r


def _reorth_one(z, logst, rhist, rcount, b):
    q, r = _mgs(z[b])
    z[b] = q
    logst[b] += np.log(np.diag(r))
    if rhist is not None:
        n = rcount[b]
        if n < rhist.shape[1]:
            rhist[b, n] = r
            rcount[b] = n + 1


def _reorth_all(z, logst, rhist, rcount):
    q, r = _mgs_batch(z)
    z[:] = q
    logst += np.log(np.einsum("bii->bi", r))
    if rhist is not None:
        for b in range(z.shape[0]):
            n = rcount[b]
            if n < rhist.shape[1]:
                rhist[b, n] = r[b]
                rcount[b] = n + 1


def _expm4(s, unimodular):
    """I + s + s^2/2 + s^3/6 + s^4/24 over a (B,d,d) stack.

    When the increments are traceless (incompressible tensors) the continuum
    map has unit determinant; `unimodular` rescales the truncated polynomial
    to restore det = 1 exactly, so volume sum rules hold to rounding."""
    d = s.shape[-1]
    s2 = np.matmul(s, s)
    s3 = np.matmul(s2, s)
    s4 = np.matmul(s3, s)
    g = np.eye(d) + s + s2 / 2.0 + s3 / 6.0 + s4 / 24.0
    if unimodular:
        det = _det_small(g)
        good = det > 0.0
        scale = np.where(good, np.exp(-np.log(np.where(good, det, 1.0)) / d), 1.0)
        g *= scale[:, None, None]
    return g


def _det_small(g):
    """Determinants of a (B,d,d) stack with a fixed closed-form evaluation
    order for d <= 3 (kept identical to the compiled lane)."""
    d = g.shape[-1]
    if d == 1:
        return g[:, 0, 0].copy()
    if d == 2:
        return g[:, 0, 0] * g[:, 1, 1] - g[:, 0, 1] * g[:, 1, 0]
    if d == 3:
        return (g[:, 0, 0] * (g[:, 1, 1] * g[:, 2, 2] - g[:, 1, 2] * g[:, 2, 1])
                - g[:, 0, 1] * (g[:, 1, 0] * g[:, 2, 2] - g[:, 1, 2] * g[:, 2, 0])
                + g[:, 0, 2] * (g[:, 1, 0] * g[:, 2, 1] - g[:, 1, 1] * g[:, 2, 0]))
    return np.linalg.det(g)


def scalar_chunk(
    x, logw, aux, blow, nsamp, samples, snaps,
    zm, za, step0, n,
    mode, scheme, track_x, track_w,
    a_drift, efac, wlog, corr,
    mscale, oudecay, tg_p, dt, ascale, cross,
    sample_start, sample_stride, snap_steps, n_snap_done, ceiling,
):
    """Advance a batch of scalar trajectories over one chunk of n steps.

    zm: (B,n) multiplicative draws (normals for white/OU, uniforms for telegraph).
    za: (B,n) additive normals; zero-size when there is no additive channel.
    Returns the updated snapshot cursor.
    """
    B = x.shape[0]
    has_mult = zm.size > 0
    has_add = za.size > 0
    snap_ptr = n_snap_done
    n_snaps = len(snap_steps)
    zero = np.zeros(B)
    for k in range(n):
        gstep = step0 + k
        t1 = gstep + 1
        if not has_mult:
            s = zero
        elif mode == 0:
            s = mscale * zm[:, k]
        elif mode == 1:
            s = aux * dt
        else:
            s = aux * (mscale * dt)
        add = cross * s
        if has_add:
            add = add + ascale * za[:, k]
        if track_x:
            alive = blow < 0
            if scheme == 0:
                grow = np.exp(s) if has_mult else 1.0
                xn = efac * (grow * x + add)
            else:
                f0 = a_drift * x
                xt = x + f0 * dt + s * x + add
                xn = x + 0.5 * dt * (f0 + a_drift * xt) + s * x + add
            bad = ~np.isfinite(xn) | (np.abs(xn) > ceiling)
            blow[bad & alive] = gstep
            keep = alive & ~bad
            x[keep] = xn[keep]
        if track_w:
            logw += wlog + s
        if mode == 1:
            aux[:] = oudecay * aux + mscale * zm[:, k]
        elif mode == 2:
            flip = zm[:, k] < tg_p
            aux[flip] = -aux[flip]
        if track_x and sample_stride > 0 and t1 >= sample_start and (t1 - sample_start) % sample_stride == 0:
            em = np.nonzero(blow < 0)[0]
            samples[em, nsamp[em]] = x[em]
            nsamp[em] += 1
        if snap_ptr < n_snaps and t1 == snap_steps[snap_ptr]:
            snaps[:, snap_ptr] = logw
            snap_ptr += 1
    return snap_ptr


def dense_chunk(
    x, z, logst, aux, blow, nsamp, samples, snaps, rhist, rcount,
    zm, za, step0, n,
    mode, scheme, track_x, track_w,
    E, A, Ec, factors, ouin, oudecay, tgsig, tg_p, dt, ascale,
    sample_start, sample_stride, snap_steps, n_snap_done,
    reorth_every, ceiling, unimodular,
):
    """Advance a batch of d-dimensional trajectories over one chunk of n steps.

    zm: (B,n,nf) factor normals / (B,n,d*d) OU innovations / (B,n,1) uniforms.
    za: (B,n,d) additive normals or zero-size.
    """
    B = x.shape[0]
    d = E.shape[0]
    has_mult = zm.size > 0
    has_add = za.size > 0
    snap_ptr = n_snap_done
    n_snaps = len(snap_steps)
    s = np.empty((B, d, d))
    for k in range(n):
        gstep = step0 + k
        t1 = gstep + 1
        if not has_mult:
            s[:] = 0.0
        elif mode == 0:
            s[:] = 0.0
            for f in range(factors.shape[0]):
                s += zm[:, k, f, None, None] * factors[f]
        elif mode == 1:
            np.multiply(aux, dt, out=s)
        else:
            np.multiply(aux[:, 0, 0, None, None] * dt, tgsig, out=s)
        if has_mult:
            grow = _expm4(s, unimodular)
        if track_x:
            alive = blow < 0
            if scheme == 0:
                y = np.matmul(grow, x[:, :, None])[:, :, 0] if has_mult else x.copy()
                if has_add:
                    y += ascale * za[:, k]
                xn = np.matmul(E, y[:, :, None])[:, :, 0]
            else:
                sx = np.matmul(s, x[:, :, None])[:, :, 0]
                if has_add:
                    sx += ascale * za[:, k]
                f0 = np.matmul(A, x[:, :, None])[:, :, 0]
                xt = x + f0 * dt + sx
                f1 = np.matmul(A, xt[:, :, None])[:, :, 0]
                xn = x + 0.5 * dt * (f0 + f1) + sx
            bad = ~np.all(np.isfinite(xn), axis=1) | (np.max(np.abs(xn), axis=1) > ceiling)
            blow[bad & alive] = gstep
            keep = alive & ~bad
            x[keep] = xn[keep]
        if track_w:
            z[:] = np.matmul(Ec, np.matmul(grow, z))
            scheduled = (t1 % reorth_every == 0)
            is_snap = snap_ptr < n_snaps and t1 == snap_steps[snap_ptr]
            if scheduled or is_snap:
                _reorth_all(z, logst, rhist, rcount)
            else:
                over = np.max(np.abs(z.reshape(B, -1)), axis=1) > _OVERFLOW
                for b in np.nonzero(over)[0]:
                    _reorth_one(z, logst, rhist, rcount, b)
        if mode == 1:
            aux *= oudecay
            aux += ouin * zm[:, k].reshape(B, d, d)
        elif mode == 2:
            flip = zm[:, k, 0] < tg_p
            aux[flip] = -aux[flip]
        if track_x and sample_stride > 0 and t1 >= sample_start and (t1 - sample_start) % sample_stride == 0:
            em = np.nonzero(blow < 0)[0]
            samples[em, nsamp[em], :] = x[em]
            nsamp[em] += 1
        if snap_ptr < n_snaps and t1 == snap_steps[snap_ptr]:
            snaps[:, snap_ptr] = logst
            snap_ptr += 1
    return snap_ptr
