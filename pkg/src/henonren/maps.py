"""Planar map representations with exact evaluation and derivatives.

Variants: the Henon family, the degenerate embedding of the quadratic
family, affine/linear test maps, and chart-conjugated return maps (the
output of the renormalization operator).  All evaluation is vectorized
over a trailing axis of length 2; Jacobians are exact per variant and
chained exactly through compositions.  Cumulative quantities along orbits
are accumulated in log space.
"""

from dataclasses import dataclass, field

import numpy as np

from .charts import Chart
from .errors import NotUnimodal, OrbitEscaped, SingularJacobian
from .geometry import Interval, Rect, unit
from .unimodal import UnimodalMap

ESCAPE_MARGIN_REL = 0.5


def _as_points(p):
    p = np.asarray(p, float)
    if p.shape[-1] != 2:
        raise ValueError("points need a trailing axis of length 2")
    return p


def _eye_like(p):
    return np.broadcast_to(np.eye(2), p.shape[:-1] + (2, 2)).copy()


def jet_compose(outer, val, J, H):
    """Compose 2-jets: outer is a map object with .jet2; returns the chained jet."""
    val2, J2, H2 = outer
    Jc = J2 @ J
    Hc = (np.einsum("...kmn,...mi,...nj->...kij", H2, J, J)
          + np.einsum("...km,...mij->...kij", J2, H))
    return val2, Jc, Hc


class _PlanarMap:
    variant = "abstract"
    invertible = False

    def escape_box(self):
        dx = ESCAPE_MARGIN_REL * max(self.domain.x.width, 1.0)
        dy = ESCAPE_MARGIN_REL * max(self.domain.y.width, 1.0)
        return Rect(self.domain.x.inflate(dx), self.domain.y.inflate(dy))

    def iterate(self, p, n):
        q = _as_points(p)
        for _ in range(n):
            q = self.evaluate(q)
        return q

    def jacobian_power(self, p, n):
        """(D_p F^n, F^n(p)) by exact chain rule."""
        q = _as_points(p)
        M = _eye_like(q)
        for _ in range(n):
            M = self.jacobian(q) @ M
            q = self.evaluate(q)
        return M, q

    def inverse_jacobian(self, p):
        """Jacobian of F^{-1} at p (inverse of DF at the preimage)."""
        if not self.invertible:
            raise SingularJacobian(f"{self.variant} map is not invertible")
        q = self.inverse_evaluate(p)
        J = self.jacobian(q)
        det = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
        inv = np.empty_like(J)
        inv[..., 0, 0] = J[..., 1, 1]
        inv[..., 0, 1] = -J[..., 0, 1]
        inv[..., 1, 0] = -J[..., 1, 0]
        inv[..., 1, 1] = J[..., 0, 0]
        return inv / det[..., None, None], q


@dataclass
class HenonMap(_PlanarMap):
    """F(x, y) = (x^2 + a - b y, x)."""
    a: float
    b: float
    domain: Rect = None
    variant = "henon"

    def __post_init__(self):
        self.a = float(self.a)
        self.b = float(self.b)
        if self.domain is None:
            disc = (1.0 + self.b) ** 2 - 4.0 * self.a
            w = 2.2 if disc < 0 else max(2.2, 1.05 * 0.5 * ((1.0 + self.b) + np.sqrt(disc)))
            self.domain = Rect.of(-w, w, -w, w)

    @property
    def invertible(self):
        return self.b != 0.0

    def evaluate(self, p):
        p = _as_points(p)
        x, y = p[..., 0], p[..., 1]
        return np.stack([x * x + self.a - self.b * y, x], axis=-1)

    def jacobian(self, p):
        p = _as_points(p)
        J = np.zeros(p.shape[:-1] + (2, 2))
        J[..., 0, 0] = 2.0 * p[..., 0]
        J[..., 0, 1] = -self.b
        J[..., 1, 0] = 1.0
        return J

    def jet2(self, p):
        p = _as_points(p)
        H = np.zeros(p.shape[:-1] + (2, 2, 2))
        H[..., 0, 0, 0] = 2.0
        return self.evaluate(p), self.jacobian(p), H

    def inverse_evaluate(self, p):
        if self.b == 0.0:
            raise SingularJacobian("Henon map with b=0 is not invertible")
        p = _as_points(p)
        X, Y = p[..., 0], p[..., 1]
        return np.stack([Y, (Y * Y + self.a - X) / self.b], axis=-1)

    def to_dict(self):
        return {"variant": "henon", "a": self.a, "b": self.b,
                "domain": self.domain.as_list()}


@dataclass
class Embedded1D(_PlanarMap):
    """iota(f_a)(x, y) = (x^2 + a, x): the quadratic family as a degenerate planar map."""
    a: float
    domain: Rect = None
    variant = "quad1d"
    invertible = False

    def __post_init__(self):
        self.a = float(self.a)
        if self.domain is None:
            beta = max(0.5 * (1.0 + np.sqrt(max(1.0 - 4.0 * self.a, 0.0))), abs(self.a), 1.0)
            w = 1.05 * beta
            self.domain = Rect.of(-w, w, -w, w)

    def evaluate(self, p):
        p = _as_points(p)
        x = p[..., 0]
        return np.stack([x * x + self.a, x], axis=-1)

    def jacobian(self, p):
        p = _as_points(p)
        J = np.zeros(p.shape[:-1] + (2, 2))
        J[..., 0, 0] = 2.0 * p[..., 0]
        J[..., 1, 0] = 1.0
        return J

    def jet2(self, p):
        p = _as_points(p)
        H = np.zeros(p.shape[:-1] + (2, 2, 2))
        H[..., 0, 0, 0] = 2.0
        return self.evaluate(p), self.jacobian(p), H

    def inverse_evaluate(self, p):
        raise SingularJacobian("degenerate embedding is not invertible")

    def to_dict(self):
        return {"variant": "quad1d", "a": self.a, "domain": self.domain.as_list()}


@dataclass
class LinearMap(_PlanarMap):
    """Affine test map p -> M p + offset."""
    matrix: np.ndarray
    offset: np.ndarray = None
    domain: Rect = None
    variant = "linear"

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, float).reshape(2, 2)
        self.offset = (np.zeros(2) if self.offset is None
                       else np.asarray(self.offset, float).reshape(2))
        if self.domain is None:
            self.domain = Rect.of(-1e6, 1e6, -1e6, 1e6)

    @property
    def invertible(self):
        return abs(np.linalg.det(self.matrix)) > 0.0

    def evaluate(self, p):
        return _as_points(p) @ self.matrix.T + self.offset

    def jacobian(self, p):
        p = _as_points(p)
        return np.broadcast_to(self.matrix, p.shape[:-1] + (2, 2)).copy()

    def jet2(self, p):
        p = _as_points(p)
        return self.evaluate(p), self.jacobian(p), np.zeros(p.shape[:-1] + (2, 2, 2))

    def inverse_evaluate(self, p):
        if not self.invertible:
            raise SingularJacobian("singular linear map")
        return (_as_points(p) - self.offset) @ np.linalg.inv(self.matrix).T

    def to_dict(self):
        return {"variant": "linear", "matrix": self.matrix.tolist(),
                "offset": self.offset.tolist(), "domain": self.domain.as_list()}


@dataclass
class ResampledMap(_PlanarMap):
    """Tensor-Chebyshev resampling of another map on its rectangle.

    Optional fast evaluator (fit residual reported); used by the sequence
    driver to keep deep-level construction cost flat.  Both components are
    polynomials with exact derivatives.
    """
    fx: object
    fy: object
    domain: Rect
    residual: float
    variant = "resampled"
    invertible = False

    def evaluate(self, p):
        p = _as_points(p)
        x, y = p[..., 0], p[..., 1]
        return np.stack([self.fx(x, y), self.fy(x, y)], axis=-1)

    def jacobian(self, p):
        p = _as_points(p)
        x, y = p[..., 0], p[..., 1]
        J = np.empty(p.shape[:-1] + (2, 2))
        J[..., 0, 0] = self.fx(x, y, dx=1)
        J[..., 0, 1] = self.fx(x, y, dy=1)
        J[..., 1, 0] = self.fy(x, y, dx=1)
        J[..., 1, 1] = self.fy(x, y, dy=1)
        return J

    def jet2(self, p):
        p = _as_points(p)
        x, y = p[..., 0], p[..., 1]
        H = np.empty(p.shape[:-1] + (2, 2, 2))
        for k, f in enumerate((self.fx, self.fy)):
            H[..., k, 0, 0] = f(x, y, dx=2)
            hxy = f(x, y, dx=1, dy=1)
            H[..., k, 0, 1] = hxy
            H[..., k, 1, 0] = hxy
            H[..., k, 1, 1] = f(x, y, dy=2)
        return self.evaluate(p), self.jacobian(p), H

    def inverse_evaluate(self, p):
        raise SingularJacobian("resampled evaluator has no inverse")

    def to_dict(self):
        return {"variant": "resampled", "fx": self.fx.to_dict(),
                "fy": self.fy.to_dict(), "domain": self.domain.as_list(),
                "residual": self.residual}


def resample(map2d, rect=None, n=21):
    """Fit a ResampledMap to map2d on rect (default: its domain)."""
    from .cheb import Cheb2, lobatto
    rect = map2d.domain if rect is None else rect
    xs = lobatto(rect.x.lo, rect.x.hi, n)
    ys = lobatto(rect.y.lo, rect.y.hi, n)
    G = np.stack(np.meshgrid(xs, ys, indexing="ij"), axis=-1)
    V = map2d.evaluate(G.reshape(-1, 2)).reshape(n, n, 2)
    fx = Cheb2.fit(xs, ys, V[..., 0], rect.x.lo, rect.x.hi, rect.y.lo, rect.y.hi)
    fy = Cheb2.fit(xs, ys, V[..., 1], rect.x.lo, rect.x.hi, rect.y.lo, rect.y.hi)
    xm = 0.5 * (xs[:-1] + xs[1:])
    ym = 0.5 * (ys[:-1] + ys[1:])
    Gm = np.stack(np.meshgrid(xm, ym, indexing="ij"), axis=-1).reshape(-1, 2)
    Vm = map2d.evaluate(Gm)
    res = float(max(np.max(np.abs(fx(Gm[:, 0], Gm[:, 1]) - Vm[:, 0])),
                    np.max(np.abs(fy(Gm[:, 0], Gm[:, 1]) - Vm[:, 1]))))
    return ResampledMap(fx, fy, rect, res)


@dataclass
class ChartConjugatedMap(_PlanarMap):
    """S o Phi o F^R o Phi^{-1} o S^{-1} with S(x,y) = (s(x-t), s(y-t)).

    Evaluation is lazy through the composition; derivatives are chained
    exactly (the scalar rescale cancels out of the Jacobian).
    """
    inner: _PlanarMap
    power: int
    chart: Chart
    scale: float
    shift: float
    domain: Rect
    variant = "chart_conjugated"

    def __post_init__(self):
        self.power = int(self.power)
        self.scale = float(self.scale)
        self.shift = float(self.shift)

    @property
    def invertible(self):
        return self.inner.invertible

    def _unscale(self, p):
        return _as_points(p) / self.scale + self.shift

    def _rescale(self, z):
        return self.scale * (np.asarray(z) - self.shift)

    def evaluate(self, p):
        q = self.chart.inverse(self._unscale(p))
        for _ in range(self.power):
            q = self.inner.evaluate(q)
        return self._rescale(self.chart.forward(q))

    def jacobian(self, p):
        z = self._unscale(p)
        q = self.chart.inverse(z)
        M = self.chart.jacobian_inverse(z)
        for _ in range(self.power):
            M = self.inner.jacobian(q) @ M
            q = self.inner.evaluate(q)
        return self.chart.jacobian_forward(q) @ M

    def jet2(self, p):
        p = _as_points(p)
        z = self._unscale(p)
        val, J, H = self.chart.jet2_inverse(z)
        J = J / self.scale
        H = H / self.scale ** 2
        for _ in range(self.power):
            val, J, H = jet_compose(self.inner.jet2(val), val, J, H)
        val, J, H = jet_compose(self.chart.jet2_forward(val), val, J, H)
        return self._rescale(val), self.scale * J, self.scale * H

    def inverse_evaluate(self, p):
        if not self.inner.invertible:
            raise SingularJacobian("inner map is not invertible")
        q = self.chart.inverse(self._unscale(p))
        for _ in range(self.power):
            q = self.inner.inverse_evaluate(q)
        return self._rescale(self.chart.forward(q))

    def to_dict(self, chart_ref=None):
        return {
            "variant": "chart_conjugated",
            "inner": self.inner.to_dict(),
            "power": self.power,
            "chart": chart_ref if chart_ref is not None else self.chart.to_artifact(),
            "rescale": {"scale": self.scale, "shift": self.shift},
            "domain": self.domain.as_list(),
        }


# ---------------------------------------------------------------------------
# spec operations

def evaluate(map2d, p):
    """Image of p; errors OutOfDomain if p is outside the declared domain."""
    p = _as_points(p)
    map2d.domain.require(p, margin=1e-12 * max(map2d.domain.x.width, 1.0))
    return map2d.evaluate(p)


def jacobian(map2d, p):
    """Exact derivative at p (chain rule through compositions)."""
    p = _as_points(p)
    map2d.domain.require(p, margin=1e-12 * max(map2d.domain.x.width, 1.0))
    return map2d.jacobian(p)


@dataclass
class OrbitCocycle:
    """Orbit with exact per-step Jacobians and log-space cumulative data.

    log_norms[m-1] = log ||DF^{+/-m}|_E||, log_dets[m-1] = log |Jac F^{+/-m}|.
    """
    points: np.ndarray
    jacobians: np.ndarray
    directions: np.ndarray
    log_norms: np.ndarray
    log_dets: np.ndarray
    forward: bool = True

    @property
    def steps(self):
        return len(self.jacobians)

    def stretch(self, m):
        return float(np.exp(self.log_norms[m - 1]))

    def det(self, m):
        return float(np.exp(self.log_dets[m - 1]))


def orbit_cocycle(map2d, p0, E0, M, direction="forward"):
    """Propagate a unit direction along the orbit, accumulating stretch and det.

    direction='backward' follows F^{-1} and requires invertibility.
    """
    p = np.asarray(p0, float).reshape(2)
    u = unit(np.asarray(E0, float).reshape(2))
    box = map2d.escape_box()
    fwd = direction == "forward"
    if not fwd and not map2d.invertible:
        raise SingularJacobian("backward cocycle needs an invertible map")
    pts = [p.copy()]
    jacs, dirs, lns, lds = [], [u.copy()], [], []
    acc_n = 0.0
    acc_d = 0.0
    for m in range(M):
        if fwd:
            J = map2d.jacobian(p[None, :])[0]
            p = map2d.evaluate(p[None, :])[0]
        else:
            J, q = map2d.inverse_jacobian(p[None, :])
            J, p = J[0], q[0]
        if not bool(box.contains(p)):
            raise OrbitEscaped(m + 1, p)
        det = J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
        if det == 0.0 and not fwd:
            raise SingularJacobian("zero Jacobian on backward orbit")
        v = J @ u
        s = float(np.linalg.norm(v))
        if s == 0.0:
            raise SingularJacobian("direction annihilated along orbit")
        u = v / s
        acc_n += np.log(s)
        acc_d += np.log(abs(det))
        pts.append(p.copy())
        jacs.append(J)
        dirs.append(u.copy())
        lns.append(acc_n)
        lds.append(acc_d)
    return OrbitCocycle(np.array(pts), np.array(jacs), np.array(dirs),
                        np.array(lns), np.array(lds), forward=fwd)


class ProfileFn:
    """1D section x -> pi_h(F(x, y0)) with exact derivatives from the planar jet."""

    def __init__(self, map2d, y0=0.0):
        self.map2d = map2d
        self.y0 = float(y0)

    def _pts(self, x):
        x = np.asarray(x, float)
        return np.stack([x, np.full_like(x, self.y0)], axis=-1)

    def __call__(self, x, der=0):
        scalar = np.isscalar(x) or np.asarray(x).ndim == 0
        pts = self._pts(np.atleast_1d(np.asarray(x, float)))
        if der == 0:
            out = self.map2d.evaluate(pts)[..., 0]
        elif der == 1:
            out = self.map2d.jacobian(pts)[..., 0, 0]
        elif der == 2:
            out = self.map2d.jet2(pts)[2][..., 0, 0, 0]
        else:
            raise ValueError("der must be 0, 1 or 2")
        return float(out[0]) if scalar else out


def _invariant_trim(fn, iv):
    """Largest symmetric-around-the-fixed-point subinterval mapped into itself."""
    from scipy.optimize import brentq
    xs = iv.grid(1024)
    g = fn(xs) - xs
    sgn = np.sign(g)
    idx = np.flatnonzero(sgn[:-1] * sgn[1:] < 0)
    candidates = []
    for i in idx:
        q = brentq(lambda x: float(fn(x)) - x, xs[i], xs[i + 1], xtol=1e-14)
        if float(fn(q, 1)) >= 1.0:
            candidates.append(q)
    if not candidates:
        return None
    for q in sorted(candidates, key=lambda q: abs(q)):
        lo, hi = sorted((q, -q))
        cand = Interval(max(lo, iv.lo), min(hi, iv.hi))
        if cand.width <= 0:
            continue
        img_lo, img_hi = np.min(fn(cand.grid(257))), np.max(fn(cand.grid(257)))
        if img_lo >= cand.lo - 1e-9 and img_hi <= cand.hi + 1e-9:
            return cand
    return None


def profile_1d(map2d, n_scan=2048):
    """The unimodal 1D section x -> pi_h(F(x, 0)) with located critical point.

    The x-range is trimmed to an invariant subinterval when the full declared
    range escapes (raw Henon windows); raises NotUnimodal if the derivative
    does not change sign exactly once.
    """
    fn = ProfileFn(map2d)
    iv = map2d.domain.x
    xs = iv.grid(n_scan)
    d = fn(xs, 1)
    sgn = np.sign(d)
    nz = sgn != 0
    if len(np.flatnonzero(np.diff(sgn[nz]))) != 1:
        raise NotUnimodal("profile derivative does not change sign exactly once")
    img = (float(np.min(fn(xs))), float(np.max(fn(xs))))
    if img[0] < iv.lo - 1e-9 * iv.width or img[1] > iv.hi + 1e-9 * iv.width:
        trimmed = _invariant_trim(fn, iv)
        if trimmed is not None:
            iv = trimmed
    return UnimodalMap(fn, iv)


def embed_1d(umap):
    """iota(f) for a quadratic-family member (inverse of profile_1d on that family)."""
    from .unimodal import QuadFn
    if not isinstance(umap.fn, QuadFn):
        raise ValueError("only quadratic-family maps embed to a serializable variant")
    w = 1.05 * max(abs(umap.domain.lo), abs(umap.domain.hi))
    return Embedded1D(umap.fn.a, Rect.of(-w, w, -w, w))


def thinness(map2d, order=1, grid=(128, 128)):
    """Numerical sup of |d f/d y| (and order-2 cross terms) over a domain grid.

    For Henon-like maps this measures the distance to a 1D system; the
    Jacobian of F equals -d f/d y.
    """
    G = map2d.domain.grid(*grid).reshape(-1, 2)
    if order == 1:
        J = map2d.jacobian(G)
        return float(np.max(np.abs(J[..., 0, 1])))
    if order == 2:
        _, J, H = map2d.jet2(G)
        return float(max(np.max(np.abs(J[..., 0, 1])),
                         np.max(np.abs(H[..., 0, 0, 1])),
                         np.max(np.abs(H[..., 0, 1, 1]))))
    raise ValueError("order must be 1 or 2")


def map_from_dict(d, chart_loader=None):
    """Rebuild a map from its JSON dictionary."""
    v = d["variant"]
    dom = Rect.from_list(d["domain"]) if "domain" in d else None
    if v == "henon":
        return HenonMap(d["a"], d["b"], dom)
    if v == "quad1d":
        return Embedded1D(d["a"], dom)
    if v == "linear":
        return LinearMap(np.array(d["matrix"]), np.array(d.get("offset", [0, 0])), dom)
    if v == "chart_conjugated":
        ch = d["chart"]
        if isinstance(ch, str):
            if chart_loader is None:
                raise ValueError("chart reference needs a loader")
            chart = chart_loader(ch)
        else:
            chart = Chart.from_artifact(ch)
        return ChartConjugatedMap(
            map_from_dict(d["inner"], chart_loader), d["power"], chart,
            d["rescale"]["scale"], d["rescale"]["shift"], dom)
    raise ValueError(f"unknown variant {v!r}")
