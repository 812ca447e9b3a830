"""Chebyshev interpolants used to represent fitted charts and 1D profiles.

Fits are built on Chebyshev-Lobatto nodes so the coefficient solve is a
well-conditioned square system and derivatives are exact polynomial
derivatives (no finite differencing inside chart machinery).
"""

import numpy as np
from numpy.polynomial import chebyshev as _C

from .errors import DynamicsError


def lobatto(lo, hi, n):
    """n Chebyshev-Lobatto nodes on [lo, hi], ascending."""
    k = np.arange(n)
    return 0.5 * (lo + hi) + 0.5 * (hi - lo) * np.cos(np.pi * k / (n - 1))[::-1]


class Cheb1:
    """Chebyshev polynomial on [lo, hi] with exact derivatives."""

    def __init__(self, coef, lo, hi):
        self.coef = np.asarray(coef, float)
        self.lo = float(lo)
        self.hi = float(hi)
        self._dcache = {}

    @staticmethod
    def fit(nodes, values, lo, hi):
        t = (2.0 * np.asarray(nodes) - (lo + hi)) / (hi - lo)
        V = _C.chebvander(t, len(nodes) - 1)
        return Cheb1(np.linalg.solve(V, np.asarray(values, float)), lo, hi)

    @staticmethod
    def linear(slope, intercept, lo, hi):
        """Exact representation of x -> slope*x + intercept."""
        mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
        return Cheb1([slope * mid + intercept, slope * half], lo, hi)

    def _t(self, x):
        return (2.0 * np.asarray(x, float) - (self.lo + self.hi)) / (self.hi - self.lo)

    def __call__(self, x, der=0):
        c = self._dcache.get(der)
        if c is None:
            c = self.coef
            if der:
                c = _C.chebder(c, der) * (2.0 / (self.hi - self.lo)) ** der
            self._dcache[der] = c
        return _C.chebval(self._t(x), c)

    def residual(self, nodes, values):
        return float(np.max(np.abs(self(nodes) - values)))

    def is_monotone(self, n=257):
        d = self(np.linspace(self.lo, self.hi, n), der=1)
        return bool(np.all(d > 0) or np.all(d < 0))

    def invert(self, values, tol=1e-14, maxiter=80):
        """Solve self(x) = v for each v by guarded Newton (monotone branch)."""
        v = np.asarray(values, float)
        x = np.full(v.shape, 0.5 * (self.lo + self.hi))
        lo = np.full(v.shape, self.lo)
        hi = np.full(v.shape, self.hi)
        increasing = self(self.hi) > self(self.lo)
        for _ in range(maxiter):
            r = self(x) - v
            if increasing:
                hi = np.where(r > 0, np.minimum(hi, x), hi)
                lo = np.where(r < 0, np.maximum(lo, x), lo)
            else:
                lo = np.where(r > 0, np.maximum(lo, x), lo)
                hi = np.where(r < 0, np.minimum(hi, x), hi)
            d = self(x, der=1)
            step = np.where(d != 0, r / np.where(d == 0, 1.0, d), 0.0)
            xn = x - step
            bad = (xn < lo) | (xn > hi) | ~np.isfinite(xn)
            xn = np.where(bad, 0.5 * (lo + hi), xn)
            if np.max(np.abs(xn - x)) < tol:
                return xn
            x = xn
        if np.max(np.abs(self(x) - v)) > 1e-9 * max(1.0, np.max(np.abs(v))):
            raise DynamicsError("1D inversion did not converge")
        return x

    def to_dict(self):
        return {"coef": self.coef.tolist(), "lo": self.lo, "hi": self.hi}

    @staticmethod
    def from_dict(d):
        return Cheb1(d["coef"], d["lo"], d["hi"])


class Cheb2:
    """Tensor Chebyshev polynomial on a box with exact partial derivatives."""

    def __init__(self, coef, xlo, xhi, ylo, yhi):
        self.coef = np.asarray(coef, float)
        self.xlo, self.xhi = float(xlo), float(xhi)
        self.ylo, self.yhi = float(ylo), float(yhi)
        self._dcache = {}

    @staticmethod
    def fit(xnodes, ynodes, Z, xlo, xhi, ylo, yhi):
        tx = (2.0 * np.asarray(xnodes) - (xlo + xhi)) / (xhi - xlo)
        ty = (2.0 * np.asarray(ynodes) - (ylo + yhi)) / (yhi - ylo)
        Vx = _C.chebvander(tx, len(xnodes) - 1)
        Vy = _C.chebvander(ty, len(ynodes) - 1)
        coef = np.linalg.solve(Vx, np.asarray(Z, float)) @ np.linalg.inv(Vy).T
        return Cheb2(coef, xlo, xhi, ylo, yhi)

    def _t(self, x, y):
        tx = (2.0 * np.asarray(x, float) - (self.xlo + self.xhi)) / (self.xhi - self.xlo)
        ty = (2.0 * np.asarray(y, float) - (self.ylo + self.yhi)) / (self.yhi - self.ylo)
        return tx, ty

    def __call__(self, x, y, dx=0, dy=0):
        c = self._dcache.get((dx, dy))
        if c is None:
            c = self.coef
            if dx:
                c = _C.chebder(c, dx, axis=0) * (2.0 / (self.xhi - self.xlo)) ** dx
            if dy:
                c = _C.chebder(c, dy, axis=1) * (2.0 / (self.yhi - self.ylo)) ** dy
            self._dcache[(dx, dy)] = c
        tx, ty = self._t(x, y)
        return _C.chebval2d(tx, ty, c)

    def residual(self, xnodes, ynodes, Z):
        X, Y = np.meshgrid(xnodes, ynodes, indexing="ij")
        return float(np.max(np.abs(self(X, Y) - Z)))

    def to_dict(self):
        return {
            "coef": self.coef.tolist(),
            "xlo": self.xlo, "xhi": self.xhi,
            "ylo": self.ylo, "yhi": self.yhi,
        }

    @staticmethod
    def from_dict(d):
        return Cheb2(d["coef"], d["xlo"], d["xhi"], d["ylo"], d["yhi"])
