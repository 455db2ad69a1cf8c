"""Riemannian machinery on S+(2, n), the Grassmannian G(2, n) and the SPD cone P2.

A rank-2 Gram matrix ``G = Z Z^T`` of centered planar landmarks is stored in
factored form ``(U, S)`` with ``G = U S U^T``, ``U`` an ``n x 2`` matrix with
orthonormal columns and ``S`` a ``2 x 2`` SPD matrix. The pair is defined only
up to the action ``(U O, O^T S O)`` of the orthogonal group O(2); comparisons
first pick a canonical representative of both fibers through the SVD of
``U1^T U2`` (:func:`canonical_align`).

Landmark configurations and SPD matrices are plain ``numpy`` arrays.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateConfiguration,
    DimensionMismatch,
    InvalidInput,
    InvalidParameter,
    NotHorizontal,
    NotPositiveDefinite,
)

__all__ = [
    "RANK_TOL",
    "SIN_CUTOFF",
    "DEFAULT_K",
    "PsdPoint",
    "AlignedPair",
    "center_landmarks",
    "polar_decompose",
    "point_from_landmarks",
    "gram",
    "squared_distance_matrix",
    "canonical_align",
    "principal_angles",
    "grassmann_distance",
    "grassmann_geodesic",
    "spd_distance",
    "spd_geodesic",
    "pseudo_geodesic",
    "closeness",
    "closeness_batch",
    "covariance",
    "horizontal_inner_product",
    "flat_distance",
    "regularized_spd_distance",
    "default_epsilon",
]

# sigma_min < RANK_TOL * sigma_max means rank-deficient
RANK_TOL = 1e-8
# F in the Grassmann geodesic: 1/sin(theta) above this, 0 below
SIN_CUTOFF = 1e-12
DEFAULT_K = 0.01


@dataclass(frozen=True, eq=False)
class PsdPoint:
    """A point of S+(2, n) in factored form ``G = basis @ shape @ basis.T``.

    Parameters
    ----------
    basis : ndarray, shape (n, 2)
        Orthonormal columns spanning the range of ``G``.
    shape : ndarray, shape (2, 2)
        SPD matrix ``R^2`` carrying scale and anisotropy.
    """

    basis: np.ndarray
    shape: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.basis, dtype=float)
        s = np.asarray(self.shape, dtype=float)
        if u.ndim != 2 or u.shape[1] != 2 or s.shape != (2, 2):
            raise InvalidInput(f"expected (n, 2) basis and (2, 2) shape, got {u.shape} and {s.shape}")
        object.__setattr__(self, "basis", u)
        object.__setattr__(self, "shape", s)

    @property
    def n(self) -> int:
        return self.basis.shape[0]

    @property
    def gram(self) -> np.ndarray:
        return self.basis @ self.shape @ self.basis.T

    def landmarks(self) -> np.ndarray:
        """A landmark configuration ``Z = U S^(1/2)`` whose Gram matrix is this point."""
        return self.basis @ _spd_fn(self.shape, np.sqrt)

    def check(self, atol: float = 1e-10) -> None:
        """Raise if the stored factors violate their invariants."""
        u, s = self.basis, self.shape
        if np.abs(u.T @ u - np.eye(2)).max() > atol:
            raise InvalidInput("basis columns are not orthonormal")
        _check_spd(s)


@dataclass(frozen=True, eq=False)
class AlignedPair:
    """Two points rotated within their fibers so that ``U1^T U2 = diag(cos theta)``."""

    first: PsdPoint
    second: PsdPoint
    angles: np.ndarray
    cosines: np.ndarray
    sines: np.ndarray


# --------------------------------------------------------------------------
# symmetric matrix helpers

def _sym(m):
    return 0.5 * (m + np.swapaxes(m, -1, -2))


def _spd_fn(m, fn):
    """Apply a scalar function to a symmetric matrix through its eigendecomposition."""
    w, v = np.linalg.eigh(_sym(m))
    return (v * fn(w)[..., None, :]) @ np.swapaxes(v, -1, -2)


def _check_spd(m, name="matrix"):
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise NotPositiveDefinite(f"{name} must be square, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NotPositiveDefinite(f"{name} has non-finite entries")
    scale = max(1.0, float(np.abs(m).max()))
    if np.abs(m - m.T).max() > 1e-12 * scale:
        raise NotPositiveDefinite(f"{name} is not symmetric")
    if np.linalg.eigvalsh(_sym(m)).min() <= 0:
        raise NotPositiveDefinite(f"{name} has a non-positive eigenvalue")
    return m


def _same_n(a: PsdPoint, b: PsdPoint):
    if a.n != b.n:
        raise DimensionMismatch(f"points have n={a.n} and n={b.n}")


# --------------------------------------------------------------------------
# static shape representation

def center_landmarks(raw) -> np.ndarray:
    """Translate landmarks so that their center of mass is the origin.

    Parameters
    ----------
    raw : array_like, shape (n, 2)
        Image-plane landmark coordinates, ``n >= 3``.

    Returns
    -------
    z : ndarray, shape (n, 2)
        Centered configuration of rank 2.

    Raises
    ------
    InvalidInput
        Wrong shape, fewer than three landmarks, or non-finite entries.
    DegenerateConfiguration
        The centered points are collinear (or coincident).
    """
    z = np.array(raw, dtype=float)
    if z.ndim != 2 or z.shape[1] != 2:
        raise InvalidInput(f"landmarks must have shape (n, 2), got {z.shape}")
    if z.shape[0] < 3:
        raise InvalidInput(f"need at least 3 landmarks, got {z.shape[0]}")
    if not np.all(np.isfinite(z)):
        raise InvalidInput("landmarks contain non-finite values")
    z -= z.mean(axis=0)
    sv = np.linalg.svd(z, compute_uv=False)
    if sv[0] == 0.0 or sv[1] < RANK_TOL * sv[0]:
        raise DegenerateConfiguration("centered landmarks are rank-deficient")
    return z


def polar_decompose(z) -> PsdPoint:
    """Factor ``Z = U R`` with ``R = (Z^T Z)^(1/2)``; returns ``(U, R^2)``."""
    z = np.asarray(z, dtype=float)
    w, sv, vt = np.linalg.svd(z, full_matrices=False)
    if sv[0] == 0.0 or sv[1] < RANK_TOL * sv[0]:
        raise DegenerateConfiguration("Z^T Z is numerically singular")
    basis = w @ vt
    shape = _sym((vt.T * sv**2) @ vt)
    return PsdPoint(basis, shape)


def point_from_landmarks(raw) -> PsdPoint:
    """Center raw landmarks and return their point on S+(2, n)."""
    return polar_decompose(center_landmarks(raw))


def gram(z) -> np.ndarray:
    """Matrix of pairwise inner products ``Z Z^T``."""
    z = np.asarray(z, dtype=float)
    return z @ z.T


def squared_distance_matrix(z) -> np.ndarray:
    """Augmented ``(n+1) x (n+1)`` squared-distance matrix read off the Gram matrix.

    Index 0 is the center of mass (the origin for a centered configuration), so
    row and column 0 hold the squared norms of the landmarks.
    """
    z = np.asarray(z, dtype=float)
    n = z.shape[0]
    g = np.zeros((n + 1, n + 1))
    g[1:, 1:] = gram(z)
    d = np.diag(g)
    out = d[:, None] - 2.0 * g + d[None, :]
    np.fill_diagonal(out, 0.0)
    return out


def covariance(z) -> np.ndarray:
    """Spatial covariance ``Z^T Z / (n - 1)`` of a centered configuration."""
    z = np.asarray(z, dtype=float)
    return _sym(z.T @ z) / (z.shape[0] - 1)


# --------------------------------------------------------------------------
# Grassmann part

def canonical_align(a: PsdPoint, b: PsdPoint) -> AlignedPair:
    """Rotate both points within their fibers into principal-angle correspondence.

    With the SVD ``U1^T U2 = O1 diag(sigma) O2^T`` (sigma descending), the
    representatives ``(U1 O1, O1^T S1 O1)`` and ``(U2 O2, O2^T S2 O2)`` satisfy
    ``(U1 O1)^T (U2 O2) = diag(sigma)``. Angles are computed as
    ``arctan2(sin, cos)`` where the sines are the column norms of the part of
    ``U2 O2`` orthogonal to ``span(U1)``; this stays accurate for tiny angles,
    where ``arccos`` loses half the digits.
    """
    _same_n(a, b)
    o1, sig, o2t = np.linalg.svd(a.basis.T @ b.basis)
    o2 = o2t.T
    cos = np.clip(sig, 0.0, 1.0)
    u1 = a.basis @ o1
    u2 = b.basis @ o2
    sin = np.linalg.norm(u2 - u1 * cos, axis=0)
    theta = np.arctan2(sin, cos)
    first = PsdPoint(u1, _sym(o1.T @ a.shape @ o1))
    second = PsdPoint(u2, _sym(o2.T @ b.shape @ o2))
    return AlignedPair(first, second, theta, cos, sin)


def principal_angles(a: PsdPoint, b: PsdPoint) -> np.ndarray:
    """Principal angles ``(theta1, theta2)`` between the two spans, ascending."""
    return canonical_align(a, b).angles


def grassmann_distance(a: PsdPoint, b: PsdPoint) -> float:
    """Geodesic distance ``||Theta||_F`` between ``span(U1)`` and ``span(U2)``."""
    return float(np.linalg.norm(principal_angles(a, b)))


def _orthonormalize(u):
    # polar factor: nearest orthonormal frame, keeps column correspondence
    w, _, vt = np.linalg.svd(u, full_matrices=False)
    return w @ vt


def _grassmann_curve(pair: AlignedPair, t: float) -> np.ndarray:
    u1 = pair.first.basis
    resid = pair.second.basis - u1 * pair.cosines
    big = pair.sines > SIN_CUTOFF
    f = np.where(big, 1.0 / np.where(big, pair.sines, 1.0), 0.0)
    m = resid * f
    ut = u1 * np.cos(pair.angles * t) + m * np.sin(pair.angles * t)
    return _orthonormalize(ut)


def grassmann_geodesic(a: PsdPoint, b: PsdPoint, t: float) -> np.ndarray:
    """Orthonormal basis of the Grassmann geodesic from ``span(U1)`` to ``span(U2)`` at ``t``."""
    return _grassmann_curve(canonical_align(a, b), t)


# --------------------------------------------------------------------------
# SPD part

def spd_distance(a, b) -> float:
    """Affine-invariant distance ``||log(A^(-1/2) B A^(-1/2))||_F``."""
    a = _check_spd(a, "a")
    b = _check_spd(b, "b")
    return float(np.sqrt(_spd_sq_dist(a, b)))


def _spd_sq_dist(a, b):
    w, v = np.linalg.eigh(a)
    a_isqrt = (v / np.sqrt(w)) @ v.T
    lam = np.linalg.eigvalsh(_sym(a_isqrt @ b @ a_isqrt))
    return float(np.sum(np.log(lam) ** 2))


def spd_geodesic(a, b, t: float) -> np.ndarray:
    """Point ``A^(1/2) (A^(-1/2) B A^(-1/2))^t A^(1/2)`` of the SPD geodesic."""
    a = _check_spd(a, "a")
    b = _check_spd(b, "b")
    return _spd_geodesic(a, b, t)


def _spd_geodesic(a, b, t):
    w, v = np.linalg.eigh(a)
    a_sqrt = (v * np.sqrt(w)) @ v.T
    a_isqrt = (v / np.sqrt(w)) @ v.T
    inner = _spd_fn(a_isqrt @ b @ a_isqrt, lambda x: x**t)
    return _sym(a_sqrt @ inner @ a_sqrt)


# --------------------------------------------------------------------------
# S+(2, n)

def pseudo_geodesic(a: PsdPoint, b: PsdPoint, t: float) -> PsdPoint:
    """Point at time ``t`` of the pseudo-geodesic ``U(t) R^2(t) U(t)^T`` from ``a`` to ``b``."""
    pair = canonical_align(a, b)
    basis = _grassmann_curve(pair, t)
    shape = _spd_geodesic(pair.first.shape, pair.second.shape, t)
    return PsdPoint(basis, shape)


def closeness(a: PsdPoint, b: PsdPoint, k: float = DEFAULT_K) -> float:
    """Squared length of the pseudo-geodesic: ``||Theta||^2 + k d_P2(R1^2, R2^2)^2``.

    Not a metric (no triangle inequality). ``k = 0`` reduces to the squared
    Grassmann distance.
    """
    if k < 0:
        raise InvalidParameter(f"k must be nonnegative, got {k}")
    pair = canonical_align(a, b)
    value = float(np.sum(pair.angles**2))
    if k > 0:
        value += k * _spd_sq_dist(pair.first.shape, pair.second.shape)
    return value


def _svd2(p):
    """Closed-form SVD of stacked 2 x 2 matrices: ``p = o1 @ diag(sig) @ o2.T``.

    Singular values come out descending and nonnegative; ``o1`` and ``o2``
    are orthogonal. Avoids one LAPACK call per matrix.
    """
    a, b, c, d = p[..., 0, 0], p[..., 0, 1], p[..., 1, 0], p[..., 1, 1]
    e, f = 0.5 * (a + d), 0.5 * (a - d)
    g, h = 0.5 * (c + b), 0.5 * (c - b)
    q, r = np.hypot(e, h), np.hypot(f, g)
    a1, a2 = np.arctan2(g, f), np.arctan2(h, e)
    theta, phi = 0.5 * (a2 - a1), 0.5 * (a2 + a1)
    sy = q - r
    sign = np.where(sy < 0, -1.0, 1.0)
    cp, sp = np.cos(phi), np.sin(phi)
    ct, st = np.cos(theta), np.sin(theta)
    o1 = np.stack([np.stack([cp, -sp * sign], -1), np.stack([sp, cp * sign], -1)], -2)
    o2 = np.stack([np.stack([ct, st], -1), np.stack([-st, ct], -1)], -2)
    sig = np.stack([q + r, np.abs(sy)], -1)
    return o1, sig, o2


def _spd2_sq_dist(a, b, det_a, det_b):
    """Squared affine-invariant distance between stacked 2 x 2 SPD matrices."""
    s = np.sqrt(det_a)
    t = np.sqrt(a[..., 0, 0] + a[..., 1, 1] + 2.0 * s)
    # (A^(1/2))^-1 with A^(1/2) = (A + sqrt(det A) I) / t
    w = np.empty_like(a)
    w[..., 0, 0] = a[..., 1, 1] + s
    w[..., 1, 1] = a[..., 0, 0] + s
    w[..., 0, 1] = w[..., 1, 0] = -a[..., 0, 1]
    w /= (t * s)[..., None, None]
    m = w @ b @ w
    mid = 0.5 * (m[..., 0, 0] + m[..., 1, 1])
    rad = np.hypot(0.5 * (m[..., 0, 0] - m[..., 1, 1]), 0.5 * (m[..., 0, 1] + m[..., 1, 0]))
    lam1 = mid + rad
    lam2 = (det_b / det_a) / lam1
    return np.log(lam1) ** 2 + np.log(lam2) ** 2


def closeness_batch(bases_a, shapes_a, bases_b, shapes_b, k: float = DEFAULT_K) -> np.ndarray:
    """Vectorized closeness over broadcast stacks of factored points.

    ``bases_*`` have shape ``(..., n, 2)`` and ``shapes_*`` shape ``(..., 2, 2)``;
    leading dimensions broadcast, so ``bases_a[:, None]`` against
    ``bases_b[None, :]`` yields the full cost grid of two trajectories.
    Uses closed-form 2 x 2 linear algebra; agrees with :func:`closeness`
    to round-off.
    """
    if k < 0:
        raise InvalidParameter(f"k must be nonnegative, got {k}")
    ua = np.asarray(bases_a, dtype=float)
    ub = np.asarray(bases_b, dtype=float)
    if ua.shape[-2] != ub.shape[-2]:
        raise DimensionMismatch(f"points have n={ua.shape[-2]} and n={ub.shape[-2]}")
    p = np.swapaxes(ua, -1, -2) @ ub
    o1, sig, o2 = _svd2(p)
    cos = np.clip(sig, 0.0, 1.0)
    # part of U2 orthogonal to span(U1); its Gram gives accurate sines
    resid = ub - ua @ p
    gr = np.swapaxes(resid, -1, -2) @ resid
    sin2 = np.einsum("...ji,...jk,...ki->...i", o2, gr, o2)
    theta = np.arctan2(np.sqrt(np.maximum(sin2, 0.0)), cos)
    value = np.sum(theta**2, axis=-1)
    if k > 0:
        sa = np.asarray(shapes_a, dtype=float)
        sb = np.asarray(shapes_b, dtype=float)
        det_a = sa[..., 0, 0] * sa[..., 1, 1] - sa[..., 0, 1] * sa[..., 1, 0]
        det_b = sb[..., 0, 0] * sb[..., 1, 1] - sb[..., 0, 1] * sb[..., 1, 0]
        a = np.swapaxes(o1, -1, -2) @ sa @ o1
        b = np.swapaxes(o2, -1, -2) @ sb @ o2
        value = value + k * _spd2_sq_dist(_sym(a), _sym(b), det_a, det_b)
    return value


def horizontal_inner_product(m1, n1, m2, n2, at_basis, at_shape, k: float) -> float:
    """Metric ``tr(M1^T M2) + k tr(N1 S^-1 N2 S^-1)`` on horizontal vectors at ``(U, S)``."""
    u = np.asarray(at_basis, dtype=float)
    s = _check_spd(at_shape, "at_shape")
    m1, m2 = np.asarray(m1, dtype=float), np.asarray(m2, dtype=float)
    n1, n2 = np.asarray(n1, dtype=float), np.asarray(n2, dtype=float)
    for name, m in (("m1", m1), ("m2", m2)):
        if m.shape != u.shape:
            raise DimensionMismatch(f"{name} has shape {m.shape}, basis has {u.shape}")
        if np.abs(m.T @ u).max() > 1e-8 * max(1.0, float(np.abs(m).max())):
            raise NotHorizontal(f"{name}^T U is not zero")
    for name, nn in (("n1", n1), ("n2", n2)):
        if nn.shape != (2, 2) or np.abs(nn - nn.T).max() > 1e-12 * max(1.0, float(np.abs(nn).max())):
            raise InvalidInput(f"{name} must be a symmetric 2 x 2 matrix")
    s_inv = np.linalg.inv(s)
    return float(np.trace(m1.T @ m2) + k * np.trace(n1 @ s_inv @ n2 @ s_inv))


# --------------------------------------------------------------------------
# baseline distances on full n x n Gram matrices

def flat_distance(a: PsdPoint, b: PsdPoint) -> float:
    """Frobenius distance ``||G1 - G2||_F`` between the Gram matrices."""
    _same_n(a, b)
    return float(np.linalg.norm(a.gram - b.gram))


def default_epsilon(a: PsdPoint, b: PsdPoint) -> float:
    """``1e-6`` times the mean diagonal entry of the two Gram matrices."""
    return 1e-6 * (np.trace(a.shape) + np.trace(b.shape)) / (2 * a.n)


def regularized_spd_distance(a: PsdPoint, b: PsdPoint, epsilon: float | None = None) -> float:
    """Affine-invariant distance on P_n between ``G1 + eps I`` and ``G2 + eps I``.

    ``epsilon`` defaults to :func:`default_epsilon`.
    """
    _same_n(a, b)
    if epsilon is None:
        epsilon = default_epsilon(a, b)
    if not epsilon > 0:
        raise InvalidParameter(f"epsilon must be positive, got {epsilon}")
    eye = epsilon * np.eye(a.n)
    g1 = a.gram + eye
    g2 = b.gram + eye
    g1_isqrt = _spd_fn(g1, lambda w: 1.0 / np.sqrt(w))
    lam = np.linalg.eigvalsh(_sym(g1_isqrt @ g2 @ g1_isqrt))
    return float(np.sqrt(np.sum(np.log(lam) ** 2)))
