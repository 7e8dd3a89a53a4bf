"""Finite-difference gradient oracles evaluated in 50-digit arithmetic.

Central differences in mpmath with a tiny step make the truncation and
rounding errors negligible, so the only remaining error is that of the
double-precision code under test.
"""

import math

import mpmath as mp
import numpy as np

from manifold_avoidance.geometry import rotation_with_first_column

mp.mp.dps = 50
STEP = mp.mpf("1e-18")


def potential_mp(params, d):
    D, eps, k = mp.mpf(params.D), mp.mpf(params.eps), int(params.k)
    x = d / D
    if params.family == "inverse":
        return 1 / (eps + x ** k)
    if x >= 1:
        return mp.mpf(0)
    return mp.exp(-1 / (1 - x ** k)) / eps


def _central(f):
    return (f(STEP) - f(-STEP)) / (2 * STEP)


def _mpvec(v):
    return [mp.mpf(float(x)) for x in v]


def fd_gradient_r3(params, p, q):
    p, q = _mpvec(p), _mpvec(q)
    g = []
    for c in range(len(p)):
        def f(t):
            x = list(p)
            x[c] += t
            return potential_mp(params, mp.sqrt(sum((a - b) ** 2 for a, b in zip(x, q))))
        g.append(float(_central(f)))
    return np.array(g)


def _sphere_dist(x, q):
    cx = [x[1] * q[2] - x[2] * q[1], x[2] * q[0] - x[0] * q[2], x[0] * q[1] - x[1] * q[0]]
    return mp.atan2(mp.sqrt(sum(c * c for c in cx)), sum(a * b for a, b in zip(x, q)))


def fd_gradient_s2(params, p, q):
    """Gradient along the tangent basis of p, differentiating along great circles."""
    R = rotation_with_first_column(p)
    pm, qm = _mpvec(R[:, 0]), _mpvec(q)
    g = np.zeros(3)
    for col in (1, 2):
        e = _mpvec(R[:, col])
        def f(t):
            x = [mp.cos(t) * a + mp.sin(t) * b for a, b in zip(pm, e)]
            return potential_mp(params, _sphere_dist(x, qm))
        g += float(_central(f)) * R[:, col]
    return g


def fd_tangent(rng, p, scale):
    """Random tangent vector at p with length in (0.02, 1) * scale."""
    R = rotation_with_first_column(p)
    ang = rng.uniform(0, 2 * math.pi)
    return rng.uniform(0.02, 1.0) * scale * (math.cos(ang) * R[:, 1] + math.sin(ang) * R[:, 2])


def relative_error(g, ref):
    """|g - ref| / |ref| with a floor at the double-precision underflow level."""
    return float(np.linalg.norm(g - ref) / max(np.linalg.norm(ref), 1e-300))
