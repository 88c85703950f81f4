"""Domain geometry for diffusions killed at the boundary of an open set.

A :class:`DomainGeometry` describes an open bounded domain D in R^d through
its signed distance function (negative inside, zero on the boundary,
positive outside).  Discrete trajectories are wrapped in
:class:`DiscretePath`; :func:`exit_time` and :func:`grazing_check` examine
when and how such a trajectory leaves the domain.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "DomainGeometry",
    "DiscretePath",
    "exit_time",
    "grazing_check",
    "domain_from_dict",
]

# Kind codes shared with the step kernels.
KIND_INTERVAL = 0
KIND_BALL = 1


class DomainGeometry:
    """Open bounded domain in R^d.

    Build instances through :meth:`interval` or :meth:`ball`.  The signed
    distance convention is negative strictly inside the domain and
    non-negative on the boundary and outside, so ``contains(x)`` is
    equivalent to ``signed_distance(x) < 0``.
    """

    kind: str
    dim: int

    @staticmethod
    def interval(a: float, b: float) -> "IntervalDomain":
        """Open interval (a, b) in R^1."""
        return IntervalDomain(a, b)

    @staticmethod
    def ball(center, radius: float) -> "BallDomain":
        """Open Euclidean ball of given center and radius."""
        return BallDomain(center, radius)

    def signed_distance(self, x) -> np.ndarray:
        """Signed distance to the boundary, negative inside.

        Parameters
        ----------
        x : array_like
            Single point of shape ``(dim,)`` or batch of shape ``(n, dim)``.

        Returns
        -------
        float or ndarray
            Scalar for a single point, shape ``(n,)`` for a batch.
        """
        raise NotImplementedError

    def contains(self, x):
        """True where x lies strictly inside the open domain."""
        return self.signed_distance(x) < 0.0

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        """Axis-aligned bounding box as a pair (lower, upper) of arrays."""
        raise NotImplementedError

    def boundary_projection(self, x) -> np.ndarray:
        """Closest boundary point to x (radial for balls)."""
        raise NotImplementedError

    def sample_closure(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Draw n points uniformly from the closure of the domain."""
        raise NotImplementedError

    def to_dict(self) -> dict:
        """JSON-ready description, inverse of :func:`domain_from_dict`."""
        raise NotImplementedError

    def _check_points(self, x) -> tuple[np.ndarray, bool]:
        """Coerce to a (n, dim) float array, remembering if input was 1-d."""
        arr = np.asarray(x, dtype=np.float64)
        if arr.ndim == 1:
            if arr.shape[0] != self.dim:
                raise ValueError(
                    f"point has dimension {arr.shape[0]}, domain has dimension {self.dim}"
                )
            return arr[None, :], True
        if arr.ndim == 2:
            if arr.shape[1] != self.dim:
                raise ValueError(
                    f"points have dimension {arr.shape[1]}, domain has dimension {self.dim}"
                )
            return arr, False
        raise ValueError("expected a point (dim,) or a batch (n, dim)")


class IntervalDomain(DomainGeometry):
    """Open interval (a, b)."""

    def __init__(self, a: float, b: float):
        a = float(a)
        b = float(b)
        if not (np.isfinite(a) and np.isfinite(b)):
            raise ValueError("interval endpoints must be finite")
        if not a < b:
            raise ValueError(f"interval requires a < b, got a={a}, b={b}")
        self.a = a
        self.b = b
        self.kind = "interval"
        self.dim = 1

    def signed_distance(self, x):
        pts, single = self._check_points(x)
        # max(a - x, x - b): exact zero at both endpoints.
        sd = np.maximum(self.a - pts[:, 0], pts[:, 0] - self.b)
        return sd[0] if single else sd

    def bounding_box(self):
        return np.array([self.a]), np.array([self.b])

    def boundary_projection(self, x):
        pts, single = self._check_points(x)
        out = np.where((pts[:, 0] - self.a) < (self.b - pts[:, 0]), self.a, self.b)
        out = out[:, None]
        return out[0] if single else out

    def sample_closure(self, rng, n):
        return rng.uniform(self.a, self.b, size=(n, 1))

    def to_dict(self):
        return {"kind": "interval", "a": self.a, "b": self.b}

    def __repr__(self):
        return f"DomainGeometry.interval({self.a}, {self.b})"

    def __eq__(self, other):
        return (
            isinstance(other, IntervalDomain)
            and self.a == other.a
            and self.b == other.b
        )

    def _kernel_params(self):
        return KIND_INTERVAL, self.a, self.b, np.zeros(1), 0.0


class BallDomain(DomainGeometry):
    """Open Euclidean ball."""

    def __init__(self, center, radius: float):
        center = np.atleast_1d(np.asarray(center, dtype=np.float64))
        if center.ndim != 1:
            raise ValueError("ball center must be a vector")
        if not np.all(np.isfinite(center)):
            raise ValueError("ball center must be finite")
        radius = float(radius)
        if not (np.isfinite(radius) and radius > 0):
            raise ValueError(f"ball radius must be positive and finite, got {radius}")
        self.center = center
        self.radius = radius
        self.kind = "ball"
        self.dim = center.shape[0]

    def signed_distance(self, x):
        pts, single = self._check_points(x)
        diff = pts - self.center
        sd = np.sqrt((diff * diff).sum(axis=1)) - self.radius
        return sd[0] if single else sd

    def bounding_box(self):
        return self.center - self.radius, self.center + self.radius

    def boundary_projection(self, x):
        pts, single = self._check_points(x)
        diff = pts - self.center
        norm = np.sqrt((diff * diff).sum(axis=1))
        out = np.empty_like(pts)
        degenerate = norm == 0.0
        safe = ~degenerate
        out[safe] = self.center + diff[safe] * (self.radius / norm[safe])[:, None]
        if degenerate.any():
            # center itself: pick the first-axis boundary point
            out[degenerate] = self.center
            out[degenerate, 0] += self.radius
        return out[0] if single else out

    def sample_closure(self, rng, n):
        direction = rng.normal(size=(n, self.dim))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        r = self.radius * rng.uniform(size=(n, 1)) ** (1.0 / self.dim)
        return self.center + direction * r

    def to_dict(self):
        return {
            "kind": "ball",
            "center": [float(c) for c in self.center],
            "radius": self.radius,
        }

    def __repr__(self):
        return f"DomainGeometry.ball({self.center.tolist()}, {self.radius})"

    def __eq__(self, other):
        return (
            isinstance(other, BallDomain)
            and self.radius == other.radius
            and np.array_equal(self.center, other.center)
        )

    def _kernel_params(self):
        return KIND_BALL, 0.0, 0.0, self.center, self.radius


def domain_from_dict(spec: dict) -> DomainGeometry:
    """Rebuild a domain from its :meth:`DomainGeometry.to_dict` form."""
    kind = spec.get("kind")
    if kind == "interval":
        return DomainGeometry.interval(spec["a"], spec["b"])
    if kind == "ball":
        return DomainGeometry.ball(spec["center"], spec["radius"])
    raise ValueError(f"unknown domain kind {kind!r}")


@dataclass(frozen=True)
class DiscretePath:
    """Trajectory sampled on a strictly increasing time grid.

    Attributes
    ----------
    times : ndarray, shape (m,)
        Strictly increasing sample times.
    positions : ndarray, shape (m, d)
        Position at each sample time.
    """

    times: np.ndarray
    positions: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=np.float64)
        positions = np.asarray(self.positions, dtype=np.float64)
        if positions.ndim == 1:
            positions = positions[:, None]
        if times.ndim != 1 or times.shape[0] < 1:
            raise ValueError("times must be a non-empty 1-d array")
        if positions.shape[0] != times.shape[0]:
            raise ValueError("times and positions must have matching length")
        if times.shape[0] > 1 and not np.all(np.diff(times) > 0):
            raise ValueError("times must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "positions", positions)

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    @classmethod
    def from_function(cls, fn, times) -> "DiscretePath":
        """Sample ``fn(t)`` (scalar or vector valued) on the given times."""
        times = np.asarray(times, dtype=np.float64)
        values = np.array([np.atleast_1d(fn(t)) for t in times], dtype=np.float64)
        return cls(times, values)


def exit_time(path: DiscretePath, domain: DomainGeometry) -> float:
    """First time the path leaves the open domain.

    The signed distance is evaluated at the path nodes and interpolated
    linearly in between, so a sign change between nodes yields a crossing
    time strictly inside the step.  A path that starts outside (or on the
    boundary of) the domain exits at its first recorded time, and a path
    whose nodes all remain strictly inside never exits.

    Returns
    -------
    float
        Exit time, or ``inf`` when the sampled path stays inside.
    """
    sd = domain.signed_distance(path.positions)
    outside = np.flatnonzero(sd >= 0.0)
    if outside.size == 0:
        return np.inf
    k = int(outside[0])
    if k == 0:
        return float(path.times[0])
    t0, t1 = path.times[k - 1], path.times[k]
    s0, s1 = sd[k - 1], sd[k]
    # s0 < 0 <= s1, linear interpolation of the signed distance
    return float(t0 + (t1 - t0) * (s0 / (s0 - s1)))


def grazing_check(path: DiscretePath, domain: DomainGeometry, tol: float = 1e-9) -> bool:
    """Check that a path does not graze the boundary.

    A graze is a boundary touch that the discrete exit detection cannot be
    trusted on: the path comes within ``tol`` of the boundary and then
    returns strictly inside (or keeps hugging the boundary) instead of
    committing to the exit.  Exit times computed from grazing paths are
    unstable under perturbation, so callers should treat them as suspect.

    Returns
    -------
    bool
        True when the path is clean: it either stays strictly inside
        (farther than ``tol`` from the boundary) or crosses decisively.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    sd = domain.signed_distance(path.positions)
    near = np.flatnonzero(sd >= -tol)
    if near.size == 0:
        return True  # never approaches the boundary
    k = int(near[0])
    if sd[k] > tol:
        return True  # jumps clear across in one step
    # Touched the tol-band at node k: committed exit only if the path gets
    # strictly outside before it gets strictly inside again.
    for s in sd[k + 1 :]:
        if s > tol:
            return True
        if s < -tol:
            return False
    return False  # hugs the boundary until the end of the record
