"""Unimodal interval dynamics: renormalization, types, kneading, nonlinearity.

A UnimodalMap wraps a scalar function object exposing ``fn(x, der=0|1|2)``
(vectorized, exact derivatives) together with its located critical point.
The renormalization operator returns affinely normalized maps (critical
point at 0, second derivative 2 there).
"""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .errors import (
    NormalizationFailed,
    NotUnimodal,
    TargetUnrealizable,
    FullnessViolation,
    TieBreak,
)
from .geometry import Interval

CRIT_TOL = 1e-10
GRID_SCAN = 2048


# ---------------------------------------------------------------------------
# function objects

class QuadFn:
    """x -> x**2 + a."""

    def __init__(self, a):
        self.a = float(a)

    def __call__(self, x, der=0):
        x = np.asarray(x, float)
        if der == 0:
            return x * x + self.a
        if der == 1:
            return 2.0 * x
        if der == 2:
            return np.full_like(x, 2.0)
        raise ValueError("der must be 0, 1 or 2")


class MirrorFn:
    """x -> -f(-x); conjugation by the reflection x -> -x."""

    def __init__(self, fn):
        self.fn = fn

    def __call__(self, x, der=0):
        x = np.asarray(x, float)
        v = self.fn(-x, der)
        return v if der == 1 else -v


class ReturnFn:
    """S o f^R o S^{-1} with S(x) = s*(x - t); exact chained derivatives."""

    def __init__(self, fn, R, s, t):
        self.fn = fn
        self.R = int(R)
        self.s = float(s)
        self.t = float(t)

    def __call__(self, x, der=0):
        x = np.asarray(x, float)
        y = x / self.s + self.t
        if der == 0:
            for _ in range(self.R):
                y = self.fn(y)
            return self.s * (y - self.t)
        d1 = np.ones_like(y)
        d2 = np.zeros_like(y)
        for _ in range(self.R):
            f1 = self.fn(y, 1)
            if der == 2:
                d2 = self.fn(y, 2) * d1 * d1 + f1 * d2
            d1 = f1 * d1
            y = self.fn(y)
        if der == 1:
            return d1
        return d2 / self.s


# ---------------------------------------------------------------------------
# core type

def critical_point(fn, domain):
    """Locate the unique quadratic critical point of fn on domain.

    Scans f' for sign changes on a 2048-point grid; exactly one change is
    required.  Returns (c, v, sign of f''(c)).
    """
    xs = domain.grid(GRID_SCAN)
    d = fn(xs, 1)
    sgn = np.sign(d)
    nz = sgn != 0
    changes = np.where(np.diff(sgn[nz]) != 0)[0]
    if len(changes) != 1:
        raise NotUnimodal(f"derivative has {len(changes)} sign changes, need 1")
    xs_nz = xs[nz]
    i = changes[0]
    c = brentq(lambda x: float(fn(x, 1)), xs_nz[i], xs_nz[i + 1], xtol=1e-15)
    # Newton polish
    for _ in range(8):
        d1 = float(fn(c, 1))
        d2 = float(fn(c, 2))
        if d2 == 0.0:
            break
        step = d1 / d2
        c -= step
        if abs(step) < 1e-16:
            break
    if abs(float(fn(c, 1))) > CRIT_TOL:
        raise NotUnimodal(f"|f'(c)| = {abs(float(fn(c, 1))):.2e} exceeds {CRIT_TOL}")
    v = float(fn(c))
    sgn2 = float(np.sign(fn(c, 2)))
    if sgn2 == 0.0:
        raise NotUnimodal("f''(c) vanishes; critical point is not quadratic")
    return float(c), v, sgn2


class UnimodalMap:
    """Interval self-map with a marked quadratic critical point."""

    def __init__(self, fn, domain, c=None, v=None, sign=None):
        self.fn = fn
        self.domain = domain
        if c is None:
            c, v, sign = critical_point(fn, domain)
        self.c = float(c)
        self.v = float(v)
        self.sign = float(sign)

    def __call__(self, x, der=0):
        return self.fn(x, der)

    @property
    def second(self):
        return float(self.fn(self.c, 2))

    @property
    def normalized(self):
        return abs(self.c) < 1e-8 and abs(self.second - 2.0) < 1e-8

    def iterate(self, x, n):
        y = np.asarray(x, float)
        for _ in range(n):
            y = self.fn(y)
        return y

    def orbit(self, x, n):
        out = [float(x)]
        for _ in range(n):
            out.append(float(self.fn(out[-1])))
        return np.array(out)

    def interval_image(self, iv):
        """Exact image hull of an interval under one application."""
        vals = self.fn(np.array([iv.lo, iv.hi]))
        cands = [float(vals[0]), float(vals[1])]
        if iv.lo <= self.c <= iv.hi:
            cands.append(self.v)
        return Interval(min(cands), max(cands))

    def interval_orbit(self, iv, n):
        out = [iv]
        for _ in range(n):
            out.append(self.interval_image(out[-1]))
        return out

    def mirrored(self):
        return UnimodalMap(
            MirrorFn(self.fn),
            Interval(-self.domain.hi, -self.domain.lo),
            c=-self.c, v=-self.v, sign=-self.sign,
        )

    def maps_into_itself(self, tol=1e-9):
        img = self.interval_image(self.domain)
        w = max(self.domain.width, 1.0)
        return img.lo >= self.domain.lo - tol * w and img.hi <= self.domain.hi + tol * w


def quadratic_map(a):
    """The normalized quadratic family member x^2 + a on its invariant interval."""
    beta = 0.5 * (1.0 + np.sqrt(max(1.0 - 4.0 * a, 0.0)))
    beta = max(beta, abs(a), 1e-3)
    return UnimodalMap(QuadFn(a), Interval(-beta, beta), c=0.0, v=float(a), sign=1.0)


# ---------------------------------------------------------------------------
# renormalization combinatorics

@dataclass(frozen=True)
class RenType:
    """Return time R plus the spatial order of the first R critical-value iterates."""
    R: int
    ranks: tuple

    def __post_init__(self):
        if sorted(self.ranks) != list(range(self.R)):
            raise ValueError(f"ranks {self.ranks} is not a permutation of 0..{self.R - 1}")

    def to_dict(self):
        return {"R": self.R, "ranks": list(self.ranks)}

    @staticmethod
    def from_dict(d):
        return RenType(int(d["R"]), tuple(int(r) for r in d["ranks"]))


def doubling(n=1):
    """The period-doubling word of length n."""
    return [RenType(2, (0, 1))] * n


@dataclass(frozen=True)
class NormalizationAffine:
    """S(x) = scale * (x - shift), the affine map normalizing a return."""
    scale: float
    shift: float

    def apply(self, x):
        return self.scale * (np.asarray(x, float) - self.shift)

    def invert(self, u):
        return np.asarray(u, float) / self.scale + self.shift


def _fold_root(f, R, hull):
    """Root of f^{R-1}(x) = c nearest the critical value, or None."""
    span = max(hull.width, 1e-4 * f.domain.width)
    lo = max(hull.lo - 2.0 * span - 0.02 * f.domain.width, f.domain.lo)
    hi = min(hull.hi + 2.0 * span + 0.02 * f.domain.width, f.domain.hi)
    xs = np.linspace(lo, hi, 513)
    g = f.iterate(xs, R - 1) - f.c
    sgn = np.sign(g)
    idx = np.where(sgn[:-1] * sgn[1:] < 0)[0]
    roots = [
        brentq(lambda x: float(f.iterate(x, R - 1)) - f.c, xs[i], xs[i + 1], xtol=1e-15)
        for i in idx
    ]
    exact = xs[np.abs(g) < 1e-13]
    roots.extend(exact.tolist())
    if not roots:
        return None
    return min(roots, key=lambda r: abs(r - f.v))


def _valuable_interval(f, R, margin_rel=1e-9):
    """Periodic interval around the critical value whose return is unimodal.

    Construction: hull of {v, f^R(v)} and the return's fold point, grown to
    an invariant hull of the return, then padded as far as the measured
    containment slack allows.  All conditions are re-verified with a safety
    margin before accepting.
    """
    scale = f.domain.width
    margin = margin_rel * scale
    v = f.v
    w = float(f.iterate(v, R))
    hull = Interval.spanning(v, w)
    chat = _fold_root(f, R, hull)
    if chat is None:
        return None
    iv = Interval.spanning(v, w, chat)
    if iv.width < 1e-12 * scale:
        iv = iv.inflate(1e-7 * scale)
    # chase the return-invariant hull
    for _ in range(256):
        img = iv
        for _ in range(R):
            img = f.interval_image(img)
        grown = iv.hull(img)
        if grown.width - iv.width < 1e-15 * scale:
            iv = grown
            break
        iv = grown
    else:
        return None
    if not f.domain.contains(iv.lo) or not f.domain.contains(iv.hi):
        return None

    def conditions(cand):
        orbit = f.interval_orbit(cand, R)
        gaps = []
        for i in range(1, R):
            if orbit[i].intersects(cand, margin=margin):
                return None
            gaps.append(max(cand.lo - orbit[i].hi, orbit[i].lo - cand.hi))
        if not orbit[R - 1].contains(f.c, margin=margin):
            return None
        back = orbit[R]
        if back.lo < cand.lo - margin or back.hi > cand.hi + margin:
            return None
        if not back.contains(v, margin=margin):
            return None
        slack = min(cand.hi - back.hi, back.lo - cand.lo)
        return min(gaps), max(slack, 0.0)

    base = conditions(iv)
    if base is None:
        return None
    # pad outward, bounded by measured slack over the return's Lipschitz bound
    xs = iv.grid(65)
    d1 = np.ones_like(xs)
    y = xs.copy()
    for _ in range(R):
        d1 = f.fn(y, 1) * d1
        y = f.fn(y)
    lip = max(float(np.max(np.abs(d1))), 1.0)
    gap, slack = base
    pad = min(0.05 * iv.width, 0.2 * min(gap, slack if slack > 0 else gap) / lip)
    pad = max(pad, 2.0 * margin)
    for factor in (1.0, 0.3, 0.1, 0.0):
        cand = iv.inflate(pad * factor)
        if conditions(cand) is not None:
            return cand
    return None


def renormalizable(f, b_max=9):
    """Smallest return time 2 <= R <= b_max with a valuable periodic interval.

    Returns (R, I1) or None.  I1 contains the critical value, its first R-1
    images are disjoint from it, the R-th image falls back into it and covers
    the critical value, and the return map folds at an interior point.
    """
    if f.sign < 0:
        res = renormalizable(f.mirrored(), b_max)
        if res is None:
            return None
        R, iv = res
        return R, Interval(-iv.hi, -iv.lo)
    for R in range(2, b_max + 1):
        iv = _valuable_interval(f, R)
        if iv is not None:
            return R, iv
    return None


def renorm_1d(f, R, I1):
    """Affinely normalized return map S o f^R|_{I1} o S^{-1}.

    Returns (UnimodalMap, NormalizationAffine); the output has critical
    point 0 and second derivative 2 there.
    """
    t = _fold_root(f, R, I1)
    if t is None or not I1.contains(t):
        raise NormalizationFailed("return map has no interior fold point")
    # polish t as the critical point of the return
    for _ in range(60):
        x, d1, d2 = t, 1.0, 0.0
        for _ in range(R):
            f1 = float(f.fn(x, 1))
            d2 = float(f.fn(x, 2)) * d1 * d1 + f1 * d2
            d1 = f1 * d1
            x = float(f.fn(x))
        if d2 == 0.0:
            break
        step = d1 / d2
        t -= step
        if abs(step) < 1e-16:
            break
    kappa2 = d2
    if abs(kappa2 / 2.0) < 1e-8:
        raise NormalizationFailed(f"return second derivative {kappa2:.2e} below threshold")
    s = kappa2 / 2.0
    fn = ReturnFn(f.fn, R, s, t)
    a0, a1 = s * (I1.lo - t), s * (I1.hi - t)
    dom = Interval(min(a0, a1), max(a0, a1))
    out = UnimodalMap(fn, dom, c=0.0, v=float(fn(0.0)), sign=1.0)
    return out, NormalizationAffine(s, t)


def ren_type(f, R, tie_tol=1e-12):
    """Spatial order of the first R iterates of the critical value."""
    pts = f.orbit(f.v, R - 1)
    scale = max(1.0, float(np.max(np.abs(pts))))
    for i in range(R):
        for j in range(i + 1, R):
            if abs(pts[i] - pts[j]) < tie_tol * scale:
                raise TieBreak(f"orbit points {i} and {j} coincide: {pts[i]!r} vs {pts[j]!r}")
    order = np.argsort(pts, kind="stable")
    ranks = np.empty(R, dtype=int)
    ranks[order] = np.arange(R)
    if f.sign < 0:
        ranks = R - 1 - ranks
    return RenType(R, tuple(int(r) for r in ranks))


# ---------------------------------------------------------------------------
# kneading predicates

@dataclass(frozen=True)
class KneadingFlags:
    eta_gap: bool
    double_eta_gap: bool
    theta_bounded: object  # int or None
    eta_chi_kneading: bool
    eta: float
    chi: int

    def __post_init__(self):
        if self.double_eta_gap and not self.eta_gap:
            raise ValueError("double eta-gap implies eta-gap")

    def to_dict(self):
        return {
            "eta_gap": self.eta_gap,
            "double_eta_gap": self.double_eta_gap,
            "theta_bounded": self.theta_bounded,
            "eta_chi_kneading": self.eta_chi_kneading,
            "eta": self.eta,
            "chi": self.chi,
        }


def kneading_flags(f, eta, chi, theta_cap=64):
    """Orbit-order predicates of the critical orbit.

    eta-gap: f(c) < c - eta.  Double eta-gap: f(c) < f^2(c) < c - eta.
    theta_bounded: smallest theta >= 1 with f(c) < c and f^{1+theta}(c) < c.
    (eta, chi)-kneading: f^{1+chi}(c) + eta < c < f^{1+i}(c) - eta for 1 <= i < chi.
    """
    if f.sign < 0:
        f = f.mirrored()
    c = f.c
    orb = f.orbit(c, max(theta_cap + 2, chi + 2))
    eta_gap = orb[1] < c - eta
    double_gap = eta_gap and (orb[1] < orb[2] < c - eta)
    theta = None
    if orb[1] < c:
        for th in range(1, theta_cap + 1):
            if orb[1 + th] < c:
                theta = th
                break
    knead = orb[1 + chi] + eta < c and all(c < orb[1 + i] - eta for i in range(1, chi))
    return KneadingFlags(bool(eta_gap), bool(double_gap), theta, bool(knead),
                         float(eta), int(chi))


# ---------------------------------------------------------------------------
# nonlinearity

from .errors import NonQuadratic  # noqa: E402  (grouped with its single user)


def nonlinearity_K(f, n_grid=513, exclude_rel=1e-4):
    """Distortion bound of the square-root factorization of f.

    Writes f(x) = v + kappa * psi(x)^2 with kappa = f''(c)/2 and returns
    sup psi' / inf psi' over the domain; psi'(c) = 1 by the analytic limit.
    """
    kappa = f.second / 2.0
    xs = f.domain.grid(n_grid)
    q = (f(xs) - f.v) / kappa
    if np.any(q < -1e-12 * max(1.0, abs(kappa))):
        raise NonQuadratic("(f - v)/kappa changes sign")
    q = np.maximum(q, 0.0)
    psi = np.sign(xs - f.c) * np.sqrt(q)
    excl = exclude_rel * max(f.domain.width, 1.0)
    away = np.abs(xs - f.c) > excl
    dpsi = np.empty_like(xs)
    dpsi[away] = f(xs[away], 1) / (2.0 * kappa * psi[away])
    dpsi[~away] = 1.0
    if np.any(dpsi <= 0):
        raise NonQuadratic("psi is not monotone")
    return float(np.max(dpsi) / np.min(dpsi))


# ---------------------------------------------------------------------------
# full-family realization in one dimension

def _matches(f, target, b_max):
    try:
        res = renormalizable(f, b_max)
        if res is None or res[0] != target.R:
            return False
        return ren_type(f, target.R) == target
    except TieBreak:
        return False


def full_family_bisect(family, param_iv, target, eta=0.05, chi=None, tol=1e-10,
                       b_max=9, scan=512):
    """Parameter subinterval (width <= tol) realizing a prescribed 1D type.

    family: parameter -> UnimodalMap, monotone in kneading in the weak sense
    that one endpoint map has a double eta-gap and the other (eta, chi)-kneading.
    Bisection brackets the boundary of the set where the type matches.
    """
    chi = int(chi if chi is not None else max(target.R, 2))
    flo = kneading_flags(family(param_iv.lo), eta, chi)
    fhi = kneading_flags(family(param_iv.hi), eta, chi)
    ok = (flo.double_eta_gap and fhi.eta_chi_kneading) or \
         (fhi.double_eta_gap and flo.eta_chi_kneading)
    if not ok:
        raise FullnessViolation(
            f"endpoints lack double eta-gap / (eta,chi)-kneading at eta={eta}, chi={chi}")
    if target.R > b_max:
        raise TargetUnrealizable(f"return time {target.R} exceeds b_max={b_max}")

    def match(a):
        return _matches(family(a), target, b_max)

    block = None
    for n in (scan, 4 * scan):
        params = param_iv.grid(n)
        flags = [match(a) for a in params]
        if any(flags):
            i_mid = int(np.flatnonzero(flags)[len(np.flatnonzero(flags)) // 2])
            i0 = i_mid
            while i0 > 0 and flags[i0 - 1]:
                i0 -= 1
            i1 = i_mid
            while i1 < n - 1 and flags[i1 + 1]:
                i1 += 1
            block = (params, i0, i1)
            break
    if block is None:
        raise TargetUnrealizable(f"no parameter with type {target} in {param_iv}")
    params, i0, i1 = block

    def edge(inside, outside):
        # bisect the conjunction of order conditions; ties keep the left side
        for _ in range(200):
            if abs(outside - inside) <= tol:
                return inside
            mid = 0.5 * (inside + outside)
            if match(mid):
                inside = mid
            else:
                outside = mid
        return inside

    left = edge(params[i0], params[i0 - 1]) if i0 > 0 else params[i0]
    right = edge(params[i1], params[i1 + 1]) if i1 < len(params) - 1 else params[i1]
    center = 0.5 * (left + right)
    out = Interval(center - 0.5 * tol, center + 0.5 * tol)
    if not match(out.mid):
        raise TargetUnrealizable("bracketed interval lost the target type")
    return out
