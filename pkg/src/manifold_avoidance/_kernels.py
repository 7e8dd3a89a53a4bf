"""Compiled right-hand sides and fixed-step integrators.

Kernels never raise; they return a status code and the index of the step at
which it was set, and the Python wrappers in :mod:`dynamics` turn that into an
exception carrying the failing time stamp.
"""

import math

import numpy as np
from numba import njit

from .potentials import _deriv_over_d, _value

OK = 0
SINGULAR = 1
ANTIPODAL = 2
NONFINITE = 3

EULER = 0
RK4 = 1

_CUT = math.pi - 1e-6


@njit(cache=True)
def euclid_force(q, ei, ej, fam, D, eps, k, out):
    """out[i] = -sum_j grad_1 V_ij(q_i, q_j); returns a status code."""
    out[:, :] = 0.0
    n = q.shape[1]
    for e in range(ei.shape[0]):
        i = ei[e]
        j = ej[e]
        d2 = 0.0
        for c in range(n):
            diff = q[i, c] - q[j, c]
            d2 += diff * diff
        d = math.sqrt(d2)
        if d == 0.0 and k[e] < 2.0:
            return SINGULAR
        coeff = _deriv_over_d(fam[e], D[e], eps[e], k[e], d)
        # grad_1 V(q_i, q_j) = coeff * (q_i - q_j)
        for c in range(n):
            g = coeff * (q[i, c] - q[j, c])
            out[i, c] -= g
            out[j, c] += g
    return OK


@njit(cache=True)
def euclid_potential_sum(q, ei, ej, fam, D, eps, k):
    """Sum of edge potentials (each undirected edge once)."""
    total = 0.0
    n = q.shape[1]
    for e in range(ei.shape[0]):
        d2 = 0.0
        for c in range(n):
            diff = q[ei[e], c] - q[ej[e], c]
            d2 += diff * diff
        total += _value(fam[e], D[e], eps[e], k[e], math.sqrt(d2))
    return total


@njit(cache=True)
def sphere_lifted_gradients(R, ei, ej, fam, D, eps, k, out):
    """out[i] = sum_j horizontal body-frame lift of grad_1 V_ij at R_i."""
    out[:, :] = 0.0
    for e in range(ei.shape[0]):
        i = ei[e]
        j = ej[e]
        p = R[i, :, 0]
        q = R[j, :, 0]
        cx = p[1] * q[2] - p[2] * q[1]
        cy = p[2] * q[0] - p[0] * q[2]
        cz = p[0] * q[1] - p[1] * q[0]
        s = math.sqrt(cx * cx + cy * cy + cz * cz)
        c = p[0] * q[0] + p[1] * q[1] + p[2] * q[2]
        phi = math.atan2(s, c)
        if phi > _CUT:
            return ANTIPODAL
        if phi == 0.0 and k[e] < 2.0:
            return SINGULAR
        coeff = _deriv_over_d(fam[e], D[e], eps[e], k[e], phi)
        if phi < 1e-4:
            fac = 1.0 + phi * phi / 6.0
        else:
            fac = phi / math.sin(phi)
        # grad_1 V(p, q) = -coeff * log_p(q), log_p(q) = fac * (q - c p)
        for side in range(2):
            a = i if side == 0 else j
            b = j if side == 0 else i
            pa = R[a, :, 0]
            pb = R[b, :, 0]
            g0 = -coeff * fac * (pb[0] - c * pa[0])
            g1 = -coeff * fac * (pb[1] - c * pa[1])
            g2 = -coeff * fac * (pb[2] - c * pa[2])
            # body coordinates u = R_a^T g, lift e1 x u = (0, -u3, u2)
            u1 = R[a, 0, 1] * g0 + R[a, 1, 1] * g1 + R[a, 2, 1] * g2
            u2 = R[a, 0, 2] * g0 + R[a, 1, 2] * g1 + R[a, 2, 2] * g2
            out[a, 1] -= u2
            out[a, 2] += u1
    return OK


@njit(cache=True)
def sphere_rhs(R, xi, dxi, ei, ej, fam, D, eps, k, out):
    """Reduced third derivative of the body velocity for every agent."""
    status = sphere_lifted_gradients(R, ei, ej, fam, D, eps, k, out)
    if status != OK:
        return status
    for i in range(xi.shape[0]):
        x = xi[i]
        d = dxi[i]
        # w = xi' x xi, then xi x w
        w0 = d[1] * x[2] - d[2] * x[1]
        w1 = d[2] * x[0] - d[0] * x[2]
        w2 = d[0] * x[1] - d[1] * x[0]
        out[i, 0] = -(x[1] * w2 - x[2] * w1) - out[i, 0]
        out[i, 1] = -(x[2] * w0 - x[0] * w2) - out[i, 1]
        out[i, 2] = -(x[0] * w1 - x[1] * w0) - out[i, 2]
    return OK


@njit(cache=True)
def sphere_potential_sum(R, ei, ej, fam, D, eps, k):
    total = 0.0
    for e in range(ei.shape[0]):
        p = R[ei[e], :, 0]
        q = R[ej[e], :, 0]
        cx = p[1] * q[2] - p[2] * q[1]
        cy = p[2] * q[0] - p[0] * q[2]
        cz = p[0] * q[1] - p[1] * q[0]
        s = math.sqrt(cx * cx + cy * cy + cz * cz)
        c = p[0] * q[0] + p[1] * q[1] + p[2] * q[2]
        total += _value(fam[e], D[e], eps[e], k[e], math.atan2(s, c))
    return total


@njit(cache=True)
def _all_finite(a):
    for x in a.ravel():
        if not np.isfinite(x):
            return False
    return True


@njit(cache=True)
def _axpy(out, x, h, y):
    """out = x + h * y elementwise for 2-D arrays."""
    for i in range(x.shape[0]):
        for c in range(x.shape[1]):
            out[i, c] = x[i, c] + h * y[i, c]


@njit(cache=True)
def _rk4_combine(out, x, h, k1, k2, k3, k4):
    w = h / 6.0
    for i in range(x.shape[0]):
        for c in range(x.shape[1]):
            out[i, c] = x[i, c] + w * (k1[i, c] + 2.0 * k2[i, c] + 2.0 * k3[i, c] + k4[i, c])


@njit(cache=True)
def integrate_euclid(q0, dq0, d2q0, d3q0, steps, method, ei, ej, fam, D, eps, k):
    """Fixed-step integration of q'''' = F(q) on R^n over the given step sizes."""
    N = steps.shape[0]
    s, n = q0.shape
    q = np.empty((N + 1, s, n))
    dq = np.empty((N + 1, s, n))
    d2q = np.empty((N + 1, s, n))
    d3q = np.empty((N + 1, s, n))
    q[0] = q0
    dq[0] = dq0
    d2q[0] = d2q0
    d3q[0] = d3q0
    f1 = np.empty((s, n))
    f2 = np.empty((s, n))
    f3 = np.empty((s, n))
    f4 = np.empty((s, n))
    qa = np.empty((s, n))
    va = np.empty((s, n))
    aa = np.empty((s, n))
    ja = np.empty((s, n))
    qb = np.empty((s, n))
    vb = np.empty((s, n))
    ab = np.empty((s, n))
    jb = np.empty((s, n))
    qc = np.empty((s, n))
    vc = np.empty((s, n))
    ac = np.empty((s, n))
    jc = np.empty((s, n))
    for m in range(N):
        h = steps[m]
        st = euclid_force(q[m], ei, ej, fam, D, eps, k, f1)
        if st != OK:
            return q, dq, d2q, d3q, st, m
        if method == EULER:
            _axpy(q[m + 1], q[m], h, dq[m])
            _axpy(dq[m + 1], dq[m], h, d2q[m])
            _axpy(d2q[m + 1], d2q[m], h, d3q[m])
            _axpy(d3q[m + 1], d3q[m], h, f1)
        else:
            _axpy(qa, q[m], 0.5 * h, dq[m])
            _axpy(va, dq[m], 0.5 * h, d2q[m])
            _axpy(aa, d2q[m], 0.5 * h, d3q[m])
            _axpy(ja, d3q[m], 0.5 * h, f1)
            st = euclid_force(qa, ei, ej, fam, D, eps, k, f2)
            if st != OK:
                return q, dq, d2q, d3q, st, m
            _axpy(qb, q[m], 0.5 * h, va)
            _axpy(vb, dq[m], 0.5 * h, aa)
            _axpy(ab, d2q[m], 0.5 * h, ja)
            _axpy(jb, d3q[m], 0.5 * h, f2)
            st = euclid_force(qb, ei, ej, fam, D, eps, k, f3)
            if st != OK:
                return q, dq, d2q, d3q, st, m
            _axpy(qc, q[m], h, vb)
            _axpy(vc, dq[m], h, ab)
            _axpy(ac, d2q[m], h, jb)
            _axpy(jc, d3q[m], h, f3)
            st = euclid_force(qc, ei, ej, fam, D, eps, k, f4)
            if st != OK:
                return q, dq, d2q, d3q, st, m
            _rk4_combine(q[m + 1], q[m], h, dq[m], va, vb, vc)
            _rk4_combine(dq[m + 1], dq[m], h, d2q[m], aa, ab, ac)
            _rk4_combine(d2q[m + 1], d2q[m], h, d3q[m], ja, jb, jc)
            _rk4_combine(d3q[m + 1], d3q[m], h, f1, f2, f3, f4)
        if not _all_finite(d3q[m + 1]) or not _all_finite(q[m + 1]):
            return q, dq, d2q, d3q, NONFINITE, m
    return q, dq, d2q, d3q, OK, N


@njit(cache=True)
def _expm_hat(a, out):
    """Rodrigues formula exp(hat(a)) written into out."""
    t2 = a[0] * a[0] + a[1] * a[1] + a[2] * a[2]
    if t2 < 1e-16:
        A = 1.0 - t2 / 6.0
        B = 0.5 - t2 / 24.0
    else:
        t = math.sqrt(t2)
        A = math.sin(t) / t
        B = (1.0 - math.cos(t)) / t2
    # hat(a)^2 = a a^T - |a|^2 I
    for r in range(3):
        for c in range(3):
            out[r, c] = B * a[r] * a[c]
        out[r, r] += 1.0 - B * t2
    out[0, 1] -= A * a[2]
    out[0, 2] += A * a[1]
    out[1, 0] += A * a[2]
    out[1, 2] -= A * a[0]
    out[2, 0] -= A * a[1]
    out[2, 1] += A * a[0]


@njit(cache=True)
def _matmul3(A, B, out):
    for r in range(3):
        for c in range(3):
            out[r, c] = A[r, 0] * B[0, c] + A[r, 1] * B[1, c] + A[r, 2] * B[2, c]


@njit(cache=True)
def _gram_defect(R):
    worst = 0.0
    for r in range(3):
        for c in range(3):
            g = R[0, r] * R[0, c] + R[1, r] * R[1, c] + R[2, r] * R[2, c]
            if r == c:
                g -= 1.0
            worst = max(worst, abs(g))
    return worst


@njit(cache=True)
def _polish(R, work):
    """Project R onto SO(3) by its polar factor.

    Newton-Schulz steps R <- R (3I - R^T R) / 2 converge quadratically when R
    is already close to a rotation; far from it (large RK4 steps) the factor
    comes from an SVD instead.
    """
    if not _gram_defect(R) < 0.25:
        if not np.all(np.isfinite(R)):
            return
        U, _, Vt = np.linalg.svd(R)
        P = U @ Vt
        R[:, :] = P
    for it in range(8):
        for r in range(3):
            for c in range(3):
                g = -(R[0, r] * R[0, c] + R[1, r] * R[1, c] + R[2, r] * R[2, c])
                if r == c:
                    g += 3.0
                work[r, c] = 0.5 * g
        for r in range(3):
            x0 = R[r, 0]
            x1 = R[r, 1]
            x2 = R[r, 2]
            for c in range(3):
                R[r, c] = x0 * work[0, c] + x1 * work[1, c] + x2 * work[2, c]
        if it >= 1 and _gram_defect(R) < 1e-15:
            break


@njit(cache=True)
def _rdot(R, xi, out):
    # d/dt R = R hat(xi)
    for a in range(R.shape[0]):
        for r in range(3):
            x0 = R[a, r, 0]
            x1 = R[a, r, 1]
            x2 = R[a, r, 2]
            out[a, r, 0] = x1 * xi[a, 2] - x2 * xi[a, 1]
            out[a, r, 1] = -x0 * xi[a, 2] + x2 * xi[a, 0]
            out[a, r, 2] = x0 * xi[a, 1] - x1 * xi[a, 0]


@njit(cache=True)
def integrate_sphere(R0, xi0, dxi0, d2xi0, steps, method, ei, ej, fam, D, eps, k):
    """Fixed-step integration of the reduced equations with R' = R hat(xi)."""
    N = steps.shape[0]
    s = R0.shape[0]
    R = np.empty((N + 1, s, 3, 3))
    xi = np.empty((N + 1, s, 3))
    dxi = np.empty((N + 1, s, 3))
    d2xi = np.empty((N + 1, s, 3))
    R[0] = R0
    xi[0] = xi0
    dxi[0] = dxi0
    d2xi[0] = d2xi0
    f1 = np.empty((s, 3))
    f2 = np.empty((s, 3))
    f3 = np.empty((s, 3))
    f4 = np.empty((s, 3))
    E = np.empty((3, 3))
    step = np.empty(3)
    k1 = np.empty((s, 3, 3))
    k2 = np.empty((s, 3, 3))
    k3 = np.empty((s, 3, 3))
    k4 = np.empty((s, 3, 3))
    Ra = np.empty((s, 3, 3))
    Rb = np.empty((s, 3, 3))
    Rc = np.empty((s, 3, 3))
    xa = np.empty((s, 3))
    da = np.empty((s, 3))
    ja = np.empty((s, 3))
    xb = np.empty((s, 3))
    db = np.empty((s, 3))
    jb = np.empty((s, 3))
    xc = np.empty((s, 3))
    dc = np.empty((s, 3))
    jc = np.empty((s, 3))
    Rm = R.reshape((N + 1, s * 3, 3))
    for m in range(N):
        h = steps[m]
        st = sphere_rhs(R[m], xi[m], dxi[m], ei, ej, fam, D, eps, k, f1)
        if st != OK:
            return R, xi, dxi, d2xi, st, m
        if method == EULER:
            for a in range(s):
                for c in range(3):
                    step[c] = h * xi[m, a, c]
                _expm_hat(step, E)
                _matmul3(R[m, a], E, R[m + 1, a])
            _axpy(xi[m + 1], xi[m], h, dxi[m])
            _axpy(dxi[m + 1], dxi[m], h, d2xi[m])
            _axpy(d2xi[m + 1], d2xi[m], h, f1)
        else:
            _rdot(R[m], xi[m], k1)
            _axpy(Ra.reshape((s * 3, 3)), Rm[m], 0.5 * h, k1.reshape((s * 3, 3)))
            _axpy(xa, xi[m], 0.5 * h, dxi[m])
            _axpy(da, dxi[m], 0.5 * h, d2xi[m])
            _axpy(ja, d2xi[m], 0.5 * h, f1)
            st = sphere_rhs(Ra, xa, da, ei, ej, fam, D, eps, k, f2)
            if st != OK:
                return R, xi, dxi, d2xi, st, m
            _rdot(Ra, xa, k2)
            _axpy(Rb.reshape((s * 3, 3)), Rm[m], 0.5 * h, k2.reshape((s * 3, 3)))
            _axpy(xb, xi[m], 0.5 * h, da)
            _axpy(db, dxi[m], 0.5 * h, ja)
            _axpy(jb, d2xi[m], 0.5 * h, f2)
            st = sphere_rhs(Rb, xb, db, ei, ej, fam, D, eps, k, f3)
            if st != OK:
                return R, xi, dxi, d2xi, st, m
            _rdot(Rb, xb, k3)
            _axpy(Rc.reshape((s * 3, 3)), Rm[m], h, k3.reshape((s * 3, 3)))
            _axpy(xc, xi[m], h, db)
            _axpy(dc, dxi[m], h, jb)
            _axpy(jc, d2xi[m], h, f3)
            st = sphere_rhs(Rc, xc, dc, ei, ej, fam, D, eps, k, f4)
            if st != OK:
                return R, xi, dxi, d2xi, st, m
            _rdot(Rc, xc, k4)
            _rk4_combine(Rm[m + 1], Rm[m], h, k1.reshape((s * 3, 3)), k2.reshape((s * 3, 3)),
                         k3.reshape((s * 3, 3)), k4.reshape((s * 3, 3)))
            _rk4_combine(xi[m + 1], xi[m], h, dxi[m], da, db, dc)
            _rk4_combine(dxi[m + 1], dxi[m], h, d2xi[m], ja, jb, jc)
            _rk4_combine(d2xi[m + 1], d2xi[m], h, f1, f2, f3, f4)
        for a in range(s):
            _polish(R[m + 1, a], E)
        if not _all_finite(d2xi[m + 1]) or not _all_finite(R[m + 1]):
            return R, xi, dxi, d2xi, NONFINITE, m
    return R, xi, dxi, d2xi, OK, N
