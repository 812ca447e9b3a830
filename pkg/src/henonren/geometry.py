"""Small geometric value types: intervals, rectangles, projective directions."""

from dataclasses import dataclass

import numpy as np

from .errors import OutOfDomain


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self):
        if not (np.isfinite(self.lo) and np.isfinite(self.hi)):
            raise ValueError("interval bounds must be finite")
        if self.hi < self.lo:
            raise ValueError(f"empty interval [{self.lo}, {self.hi}]")

    @property
    def width(self):
        return self.hi - self.lo

    @property
    def mid(self):
        return 0.5 * (self.lo + self.hi)

    def contains(self, x, margin=0.0):
        x = np.asarray(x)
        return (x >= self.lo - margin) & (x <= self.hi + margin)

    def inflate(self, left, right=None):
        if right is None:
            right = left
        return Interval(self.lo - left, self.hi + right)

    def hull(self, other):
        return Interval(min(self.lo, other.lo), max(self.hi, other.hi))

    def intersects(self, other, margin=0.0):
        return not (self.hi < other.lo - margin or other.hi < self.lo - margin)

    def grid(self, n):
        return np.linspace(self.lo, self.hi, n)

    @staticmethod
    def spanning(*points):
        pts = [float(p) for p in points]
        return Interval(min(pts), max(pts))


@dataclass(frozen=True)
class Rect:
    x: Interval
    y: Interval

    @staticmethod
    def of(x0, x1, y0, y1):
        return Rect(Interval(x0, x1), Interval(y0, y1))

    def contains(self, p, margin=0.0):
        p = np.asarray(p, float)
        return self.x.contains(p[..., 0], margin) & self.y.contains(p[..., 1], margin)

    def require(self, p, margin=0.0):
        ok = self.contains(p, margin)
        if not np.all(ok):
            bad = np.asarray(p, float).reshape(-1, 2)[~np.asarray(ok).ravel()][0]
            raise OutOfDomain(f"point {bad} outside rect x={self.x} y={self.y}")

    def grid(self, nx, ny=None):
        ny = nx if ny is None else ny
        gx = self.x.grid(nx)
        gy = self.y.grid(ny)
        return np.stack(np.meshgrid(gx, gy, indexing="ij"), axis=-1)

    def corners(self):
        return np.array(
            [[self.x.lo, self.y.lo], [self.x.hi, self.y.lo],
             [self.x.hi, self.y.hi], [self.x.lo, self.y.hi]]
        )

    def boundary(self, n_per_side=32):
        xs = self.x.grid(n_per_side)
        ys = self.y.grid(n_per_side)
        bottom = np.stack([xs, np.full_like(xs, self.y.lo)], -1)
        top = np.stack([xs, np.full_like(xs, self.y.hi)], -1)
        left = np.stack([np.full_like(ys, self.x.lo), ys], -1)
        right = np.stack([np.full_like(ys, self.x.hi), ys], -1)
        return np.concatenate([bottom, top, left, right], axis=0)

    def as_list(self):
        return [[self.x.lo, self.x.hi], [self.y.lo, self.y.hi]]

    @staticmethod
    def from_list(v):
        (x0, x1), (y0, y1) = v
        return Rect(Interval(float(x0), float(x1)), Interval(float(y0), float(y1)))


def unit(v):
    """Unit representative of a nonzero vector; raises on zero input."""
    v = np.asarray(v, float)
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(n == 0.0):
        raise ValueError("zero vector has no direction")
    return v / n


def direction_angle(u, v):
    """Projective angle between two directions in [0, pi/2]."""
    u = unit(u)
    v = unit(v)
    c = np.abs(np.sum(u * v, axis=-1))
    return np.arccos(np.clip(c, 0.0, 1.0))


def same_direction(u, v, tol=1e-12):
    """Projective equality: v and -v name the same direction."""
    return direction_angle(u, v) < tol
