"""Trajectories on S+(2, n): construction, dynamic time warping, re-sampling."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from .errors import (
    DegenerateFrame,
    DimensionMismatch,
    EmptySequence,
    GramTrajError,
    InvalidParameter,
)
from .geometry import (
    DEFAULT_K,
    PsdPoint,
    closeness,
    closeness_batch,
    default_epsilon,
    flat_distance,
    point_from_landmarks,
    pseudo_geodesic,
    regularized_spd_distance,
)

DISTANCES = ("closeness", "flat", "spd-reg")


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Time-ordered sequence of at least two points sharing one landmark count."""

    points: tuple[PsdPoint, ...]
    id: str | None = None
    label: str | None = None

    def __post_init__(self):
        pts = tuple(self.points)
        if len(pts) < 2:
            raise EmptySequence(f"a trajectory needs at least 2 points, got {len(pts)}")
        n = pts[0].n
        if any(p.n != n for p in pts):
            raise DimensionMismatch("trajectory points have different landmark counts")
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return len(self.points)

    @property
    def n(self) -> int:
        return self.points[0].n

    @cached_property
    def bases(self) -> np.ndarray:
        return np.stack([p.basis for p in self.points])

    @cached_property
    def shapes(self) -> np.ndarray:
        return np.stack([p.shape for p in self.points])

    def with_points(self, points) -> "Trajectory":
        return Trajectory(tuple(points), id=self.id, label=self.label)


@dataclass(frozen=True)
class AlignmentPath:
    """Monotone warping path between two trajectories.

    ``steps`` runs from ``(0, 0)`` to ``(len(a) - 1, len(b) - 1)``;
    ``normalized_cost`` is ``total_cost / len(steps)``.
    """

    steps: tuple[tuple[int, int], ...]
    total_cost: float
    normalized_cost: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "normalized_cost", self.total_cost / len(self.steps))


def build_trajectory(frames: Sequence, id: str | None = None, label: str | None = None) -> Trajectory:
    """Map each raw ``n x 2`` frame to S+(2, n), keeping frame order.

    Raises
    ------
    EmptySequence
        Fewer than two frames.
    DegenerateFrame
        A frame fails centering or polar decomposition; ``.index`` names it.
    """
    if len(frames) < 2:
        raise EmptySequence(f"sequence {id!r} has {len(frames)} frame(s), need at least 2")
    points = []
    for i, frame in enumerate(frames):
        try:
            points.append(point_from_landmarks(frame))
        except GramTrajError as exc:
            raise DegenerateFrame(i, str(exc)) from exc
    n = points[0].n
    for i, p in enumerate(points):
        if p.n != n:
            raise DegenerateFrame(i, f"has {p.n} landmarks, first frame has {n}")
    return Trajectory(tuple(points), id=id, label=label)


# --------------------------------------------------------------------------
# ground costs

def cost_matrix(a: Trajectory, b: Trajectory, k: float = DEFAULT_K,
                distance: str = "closeness", epsilon: float | None = None) -> np.ndarray:
    """Frame-by-frame ground cost grid of shape ``(len(a), len(b))``.

    ``distance`` selects the closeness (default) or one of the two baselines,
    the flat Frobenius distance and the regularized full-rank SPD distance.
    """
    if a.n != b.n:
        raise DimensionMismatch(f"trajectories have n={a.n} and n={b.n}")
    if distance == "closeness":
        return closeness_batch(a.bases[:, None], a.shapes[:, None], b.bases[None, :], b.shapes[None, :], k)
    if distance == "flat":
        fn = flat_distance
    elif distance == "spd-reg":
        def fn(p, q):
            return regularized_spd_distance(p, q, epsilon if epsilon is not None else default_epsilon(p, q))
    else:
        raise InvalidParameter(f"unknown distance {distance!r}; expected one of {DISTANCES}")
    return np.array([[fn(p, q) for q in b.points] for p in a.points])


def _dtw_from_cost(cost) -> AlignmentPath:
    """Exact DTW over a precomputed cost grid, steps (1,0), (0,1), (1,1)."""
    c = np.asarray(cost, dtype=float).tolist()
    n1, n2 = len(c), len(c[0])
    inf = math.inf
    acc = [[inf] * n2 for _ in range(n1)]
    for i in range(n1):
        row, ci = acc[i], c[i]
        prev = acc[i - 1] if i else None
        for j in range(n2):
            if i == 0 and j == 0:
                best = 0.0
            else:
                best = inf
                if prev is not None:
                    if j and prev[j - 1] < best:
                        best = prev[j - 1]
                    if prev[j] < best:
                        best = prev[j]
                if j and row[j - 1] < best:
                    best = row[j - 1]
            row[j] = best + ci[j]
    # traceback: prefer diagonal, then vertical (i-1, j), then horizontal (i, j-1)
    i, j = n1 - 1, n2 - 1
    steps = [(i, j)]
    while i or j:
        cands = []
        if i and j:
            cands.append((acc[i - 1][j - 1], i - 1, j - 1))
        if i:
            cands.append((acc[i - 1][j], i - 1, j))
        if j:
            cands.append((acc[i][j - 1], i, j - 1))
        best = cands[0]
        for cand in cands[1:]:
            if cand[0] < best[0]:
                best = cand
        _, i, j = best
        steps.append((i, j))
    steps.reverse()
    return AlignmentPath(tuple(steps), acc[n1 - 1][n2 - 1])


def dtw_align(a: Trajectory, b: Trajectory, k: float = DEFAULT_K,
              distance: str = "closeness", epsilon: float | None = None) -> AlignmentPath:
    """Optimal monotone alignment of ``a`` and ``b`` under the chosen ground cost."""
    if k < 0:
        raise InvalidParameter(f"k must be nonnegative, got {k}")
    return _dtw_from_cost(cost_matrix(a, b, k, distance, epsilon))


def dtw_distance(a: Trajectory, b: Trajectory, k: float = DEFAULT_K,
                 distance: str = "closeness", epsilon: float | None = None) -> float:
    """Rate-invariant dissimilarity: path-length normalized DTW cost."""
    return dtw_align(a, b, k, distance, epsilon).normalized_cost


def frame_distance_profile(a: Trajectory, k: float = DEFAULT_K) -> np.ndarray:
    """Closeness of every point to its predecessor (length ``len(a) - 1``)."""
    return closeness_batch(a.bases[:-1], a.shapes[:-1], a.bases[1:], a.shapes[1:], k)


# --------------------------------------------------------------------------
# re-sampling

def _subdivisions(d: float, zeta2: float) -> int:
    """Smallest q >= 1 with d / q**2 <= zeta2."""
    q = max(1, math.ceil(math.sqrt(d / zeta2)))
    while q > 1 and d / (q - 1) ** 2 <= zeta2:
        q -= 1
    while d / q**2 > zeta2:
        q += 1
    return q


def resample(a: Trajectory, zeta1: float, zeta2: float, k: float = DEFAULT_K) -> Trajectory:
    """Adaptive one-pass re-sampling driven by the closeness between neighbours.

    Walking left to right, a point closer than ``zeta1`` to the last kept point
    is dropped (the first and last points are always kept). When the gap to
    the last kept point exceeds ``zeta2``, the fewest equally spaced
    pseudo-geodesic samples are inserted so that every sub-gap is at most
    ``zeta2``; sub-gaps shrink exactly like ``1/q**2``.

    The output is a fixed point of a second pass whenever ``zeta1 <= zeta2 / 4``
    (inserted sub-gaps are always larger than ``zeta2 / 4``).
    """
    if zeta1 < 0 or zeta2 < 0:
        raise InvalidParameter("resampling thresholds must be nonnegative")
    if not zeta1 < zeta2:
        raise InvalidParameter(f"need zeta1 < zeta2, got {zeta1} and {zeta2}")
    pts = a.points
    last = pts[0]
    out = [last]
    for i in range(1, len(pts)):
        cur = pts[i]
        d = closeness(last, cur, k)
        is_final = i == len(pts) - 1
        if d < zeta1 and not is_final:
            continue
        # relative slack keeps rounding noise from triggering re-insertion
        if d > zeta2 * (1 + 1e-10):
            q = _subdivisions(d, zeta2)
            out.extend(pseudo_geodesic(last, cur, s / q) for s in range(1, q))
        out.append(cur)
        last = cur
    return a.with_points(out)


def auto_zeta(trajectories: Sequence[Trajectory], k: float = DEFAULT_K,
              low: float = 0.05, high: float = 2.0) -> tuple[float, float]:
    """Thresholds ``(low * median, high * median)`` of all consecutive closenesses."""
    gaps = np.concatenate([frame_distance_profile(t, k) for t in trajectories])
    med = float(np.median(gaps))
    # identical frames give round-off closeness, not an exact zero
    if not med > 1e-14:
        raise InvalidParameter("median consecutive closeness is zero; cannot derive thresholds")
    return low * med, high * med


# --------------------------------------------------------------------------
# lockstep comparison (no temporal alignment)

def interpolate(a: Trajectory, length: int) -> Trajectory:
    """Sample the piecewise pseudo-geodesic curve through ``a`` at ``length`` uniform times."""
    if length < 2:
        raise InvalidParameter(f"length must be at least 2, got {length}")
    if length == len(a):
        return a
    last = len(a) - 1
    out = []
    for j in range(length):
        pos = j * last / (length - 1)
        i = min(int(math.floor(pos)), last - 1)
        frac = pos - i
        if frac <= 0.0:
            out.append(a.points[i])
        elif frac >= 1.0:
            out.append(a.points[i + 1])
        else:
            out.append(pseudo_geodesic(a.points[i], a.points[i + 1], frac))
    return a.with_points(out)


def lockstep_distance(a: Trajectory, b: Trajectory, k: float = DEFAULT_K,
                      distance: str = "closeness", epsilon: float | None = None) -> float:
    """Mean frame-wise cost after interpolating both curves to a common length."""
    length = max(len(a), len(b))
    a, b = interpolate(a, length), interpolate(b, length)
    if distance == "closeness":
        return float(np.mean(closeness_batch(a.bases, a.shapes, b.bases, b.shapes, k)))
    grid = cost_matrix(a, b, k, distance, epsilon)
    return float(np.mean(np.diag(grid)))


def pair_function(k: float = DEFAULT_K, distance: str = "closeness", epsilon: float | None = None,
                  use_dtw: bool = True) -> Callable[[Trajectory, Trajectory], float]:
    """Trajectory dissimilarity with fixed settings, either DTW or lockstep."""
    if distance not in DISTANCES:
        raise InvalidParameter(f"unknown distance {distance!r}; expected one of {DISTANCES}")
    if k < 0:
        raise InvalidParameter(f"k must be nonnegative, got {k}")
    if use_dtw:
        return lambda a, b: dtw_distance(a, b, k, distance, epsilon)
    return lambda a, b: lockstep_distance(a, b, k, distance, epsilon)
