"""Manifold primitives for Euclidean space and the unit sphere.

Points on S^2 are stored as ambient unit 3-vectors. Rotations enter through
the projection SO(3) -> S^2, R -> R e1, whose isotropy is the rotation group
about e1; body velocities of horizontal curves have a zero first component.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

UNIT_TOL = 1e-9
ROTATION_TOL = 1e-9
# Below this angle phi/(2 sin phi) is replaced by its Taylor series.
SMALL_ANGLE = 1e-4
# Relative rotations / point pairs this close to pi sit on the cut locus.
CUT_LOCUS_TOL = 1e-6

E1 = np.array([1.0, 0.0, 0.0])


class GeometryError(ValueError):
    """Invalid input to a manifold primitive."""


class DomainError(ArithmeticError):
    """Operation evaluated on the cut locus (antipodal data)."""


@dataclass(frozen=True)
class ManifoldId:
    """Either Euclidean n-space (``kind == "euclidean"``) or the 2-sphere."""

    kind: str
    n: int = 3

    def __post_init__(self):
        if self.kind not in ("euclidean", "sphere"):
            raise GeometryError(f"unknown manifold kind {self.kind!r}")
        if self.kind == "euclidean" and self.n < 1:
            raise GeometryError("euclidean dimension must be >= 1")
        if self.kind == "sphere" and self.n != 3:
            raise GeometryError("sphere points live in R^3 (n must be 3)")

    @classmethod
    def euclidean(cls, n: int) -> "ManifoldId":
        return cls("euclidean", int(n))

    @classmethod
    def sphere(cls) -> "ManifoldId":
        return cls("sphere", 3)

    @classmethod
    def parse(cls, tag: str) -> "ManifoldId":
        """Parse ``"s2"`` or ``"rN"`` (e.g. ``"r3"``)."""
        tag = str(tag).strip().lower()
        if tag == "s2":
            return cls.sphere()
        if tag.startswith("r") and tag[1:].isdigit():
            return cls.euclidean(int(tag[1:]))
        raise GeometryError(f"unknown manifold tag {tag!r}")

    @property
    def is_sphere(self) -> bool:
        return self.kind == "sphere"

    @property
    def ambient_dim(self) -> int:
        return self.n

    @property
    def tag(self) -> str:
        return "s2" if self.is_sphere else f"r{self.n}"


def _as_point(manifold: ManifoldId, p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.shape != (manifold.ambient_dim,):
        raise GeometryError(
            f"point has shape {p.shape}, expected ({manifold.ambient_dim},) on {manifold.tag}"
        )
    if manifold.is_sphere and abs(np.linalg.norm(p) - 1.0) > UNIT_TOL:
        raise GeometryError(f"sphere point is not unit length (|p| = {np.linalg.norm(p)!r})")
    return p


def sphere_angle(p: np.ndarray, q: np.ndarray) -> float:
    """Great-circle angle between two unit vectors.

    Uses atan2(|p x q|, p.q), which keeps full precision near 0 and pi where
    arccos loses digits.
    """
    c = np.cross(p, q)
    return math.atan2(math.sqrt(c @ c), float(p @ q))


def dist(manifold: ManifoldId, p, q) -> float:
    """Riemannian distance."""
    p = _as_point(manifold, p)
    q = _as_point(manifold, q)
    if manifold.is_sphere:
        return sphere_angle(p, q)
    return float(np.linalg.norm(q - p))


def log_map(manifold: ManifoldId, p, q) -> np.ndarray:
    """Tangent vector at ``p`` pointing to ``q`` with length ``dist(p, q)``."""
    p = _as_point(manifold, p)
    q = _as_point(manifold, q)
    if not manifold.is_sphere:
        return q - p
    phi = sphere_angle(p, q)
    if phi > math.pi - CUT_LOCUS_TOL:
        raise DomainError("antipodal points, sphere log undefined")
    w = q - (p @ q) * p
    if phi < SMALL_ANGLE:
        # phi / sin(phi) = 1 + phi^2/6 + ...
        return (1.0 + phi * phi / 6.0) * w
    return (phi / math.sin(phi)) * w


def exp_map(manifold: ManifoldId, p, v) -> np.ndarray:
    """Endpoint of the unit-time geodesic from ``p`` with velocity ``v``."""
    p = _as_point(manifold, p)
    v = np.asarray(v, dtype=float)
    if not manifold.is_sphere:
        return p + v
    theta = float(np.linalg.norm(v))
    if theta < 1e-15:
        return p.copy()
    out = math.cos(theta) * p + (math.sin(theta) / theta) * v
    return out / np.linalg.norm(out)


def hat(a) -> np.ndarray:
    """Skew matrix with hat(a) @ b == cross(a, b)."""
    a = np.asarray(a, dtype=float)
    return np.array(
        [[0.0, -a[2], a[1]],
         [a[2], 0.0, -a[0]],
         [-a[1], a[0], 0.0]]
    )


def vee(S) -> np.ndarray:
    """Inverse of :func:`hat`; rejects matrices that are not skew."""
    S = np.asarray(S, dtype=float)
    if S.shape != (3, 3):
        raise GeometryError(f"vee expects a 3x3 matrix, got {S.shape}")
    if np.linalg.norm(S + S.T) > 1e-9:
        raise GeometryError("vee of a non-skew matrix")
    return np.array([S[2, 1], S[0, 2], S[1, 0]])


def is_rotation(m, tol: float = ROTATION_TOL) -> bool:
    m = np.asarray(m, dtype=float)
    if m.shape != (3, 3):
        return False
    return (np.linalg.norm(m.T @ m - np.eye(3)) <= tol
            and abs(np.linalg.det(m) - 1.0) <= tol)


def exp_rotation(a) -> np.ndarray:
    """Rodrigues formula for the matrix exponential of hat(a)."""
    a = np.asarray(a, dtype=float)
    theta2 = float(a @ a)
    K = hat(a)
    if theta2 < 1e-16:
        # sin(t)/t and (1 - cos t)/t^2 series
        A = 1.0 - theta2 / 6.0
        B = 0.5 - theta2 / 24.0
    else:
        theta = math.sqrt(theta2)
        A = math.sin(theta) / theta
        B = (1.0 - math.cos(theta)) / theta2
    return np.eye(3) + A * K + B * (K @ K)


def log_rotation(Rrel) -> np.ndarray:
    """Rotation vector of ``Rrel`` (vee of the principal matrix logarithm).

    Raises DomainError when the rotation angle is within 1e-6 of pi, where the
    logarithm is not unique.
    """
    Rrel = np.asarray(Rrel, dtype=float)
    if Rrel.shape != (3, 3):
        raise GeometryError(f"log_rotation expects a 3x3 matrix, got {Rrel.shape}")
    skew = np.array([Rrel[2, 1] - Rrel[1, 2], Rrel[0, 2] - Rrel[2, 0], Rrel[1, 0] - Rrel[0, 1]])
    cos_phi = min(1.0, max(-1.0, 0.5 * (np.trace(Rrel) - 1.0)))
    # arccos(cos_phi) loses digits near 0 and pi; atan2 with the skew part does not
    phi = math.atan2(0.5 * np.linalg.norm(skew), cos_phi)
    if phi > math.pi - CUT_LOCUS_TOL:
        raise DomainError("antipodal rotation, log undefined")
    if phi < SMALL_ANGLE:
        return (0.5 + phi * phi / 12.0) * skew
    return (phi / (2.0 * math.sin(phi))) * skew


def project_to_sphere(R) -> np.ndarray:
    """pi(R) = R e1, the first column."""
    R = np.asarray(R, dtype=float)
    q = R[:, 0].copy()
    return q / np.linalg.norm(q)


def reorthonormalize(R) -> np.ndarray:
    """Closest rotation to a near-orthogonal matrix (polar factor, det +1)."""
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        raise ArithmeticError("reorthonormalize needs a finite 3x3 matrix")
    U, s, Vt = np.linalg.svd(R)
    if s[-1] < 1e-8:
        raise ArithmeticError("singular matrix cannot be reorthonormalized")
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def rotation_with_first_column(q) -> np.ndarray:
    """Some rotation R with R e1 = q (used to lift sphere data to SO(3))."""
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q)
    helper = np.array([0.0, 0.0, 1.0]) if abs(q[2]) < 0.9 else np.array([0.0, 1.0, 0.0])
    b = helper - (helper @ q) * q
    b /= np.linalg.norm(b)
    c = np.cross(q, b)
    return np.column_stack([q, b, c])


def body_from_spatial(R, v) -> np.ndarray:
    """Horizontal body velocity xi (first component 0) with R (xi x e1) = v."""
    u = np.asarray(R, dtype=float).T @ np.asarray(v, dtype=float)
    return np.array([0.0, -u[2], u[1]])


def spatial_from_body(R, xi) -> np.ndarray:
    """Velocity of pi(R(t)) given the body velocity xi."""
    return np.asarray(R, dtype=float) @ np.cross(xi, E1)


def transport_sphere(p, q, v) -> np.ndarray:
    """Parallel transport of v in T_p S^2 to T_q S^2 along the minimal geodesic."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    axis = np.cross(p, q)
    s = np.linalg.norm(axis)
    if s < 1e-15:
        return np.asarray(v, dtype=float).copy()
    phi = sphere_angle(p, q)
    if phi > math.pi - CUT_LOCUS_TOL:
        raise DomainError("antipodal points, transport undefined")
    return exp_rotation(axis / s * phi) @ np.asarray(v, dtype=float)
