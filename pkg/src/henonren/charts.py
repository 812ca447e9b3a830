"""Numerical straightening charts.

A chart here is genuinely horizontal: Phi(x, y) = (u(x, y), sec(y)) where u
labels the vertical leaf through (x, y) by the abscissa at which that leaf
crosses the base level, relative to the base point, and sec depends on y
alone.  Leaves come from integrating a near-vertical direction field
(typically the pullback of the horizontal direction under an iterate).
The working representation is a tensor-Chebyshev fit of the leaf flow
X(x0, y); closed forms (identity, translation, shear) are exact degree-1
fits of the same shape.
"""

import numpy as np

from .cheb import Cheb1, Cheb2, lobatto
from .errors import (
    ChartFailure,
    DegenerateCurvature,
    LeafEscaped,
    NoTangency,
    OrbitEscaped,
    OutOfDomain,
    SingularJacobian,
)
from .geometry import Interval, Rect

VERTICALITY_LIMIT = 1.0  # max |slope| = tan(pi/4)


class VerticalField:
    """Near-vertical direction field on a rectangle.

    Stores sampled slopes on a grid (bilinear interpolation) and, when
    available, an exact slope callback used preferentially by integrators.
    Directions are projective; slope is dx/dy of the leaf.
    """

    def __init__(self, box, grid_x, grid_y, slopes, slope_fn=None, meta=None):
        self.box = box
        self.grid_x = np.asarray(grid_x, float)
        self.grid_y = np.asarray(grid_y, float)
        self.slopes = np.asarray(slopes, float)
        self.slope_fn = slope_fn
        self.meta = dict(meta or {})
        m = float(np.max(np.abs(self.slopes)))
        if not np.isfinite(m) or m > VERTICALITY_LIMIT:
            raise ChartFailure(f"field slope {m:.3f} exceeds verticality limit 1.0")

    def _interp(self, pts):
        pts = np.asarray(pts, float)
        gx, gy = self.grid_x, self.grid_y
        ix = np.clip(np.searchsorted(gx, pts[..., 0]) - 1, 0, len(gx) - 2)
        iy = np.clip(np.searchsorted(gy, pts[..., 1]) - 1, 0, len(gy) - 2)
        tx = (pts[..., 0] - gx[ix]) / (gx[ix + 1] - gx[ix])
        ty = (pts[..., 1] - gy[iy]) / (gy[iy + 1] - gy[iy])
        tx = np.clip(tx, 0.0, 1.0)
        ty = np.clip(ty, 0.0, 1.0)
        s = self.slopes
        return ((1 - tx) * (1 - ty) * s[ix, iy] + tx * (1 - ty) * s[ix + 1, iy]
                + (1 - tx) * ty * s[ix, iy + 1] + tx * ty * s[ix + 1, iy + 1])

    def slope(self, pts):
        if self.slope_fn is not None:
            return self.slope_fn(np.asarray(pts, float))
        return self._interp(pts)

    def direction(self, pts):
        s = self.slope(pts)
        n = np.sqrt(1.0 + s * s)
        return np.stack([s / n, 1.0 / n], axis=-1)


def _pullback_slope(map2d, R, pts, escape=None):
    """Slope of DF^{-R}(horizontal) via the adjugate (no inverse needed)."""
    q = np.asarray(pts, float)
    M = np.broadcast_to(np.eye(2), q.shape[:-1] + (2, 2)).copy()
    for step in range(R):
        M = map2d.jacobian(q) @ M
        q = map2d.evaluate(q)
        if escape is not None and not np.all(escape(q)):
            raise OrbitEscaped(step + 1)
    m10, m11 = M[..., 1, 0], M[..., 1, 1]
    bad = (np.abs(m10) < 1e-300) & (np.abs(m11) < 1e-300)
    if np.any(bad):
        raise SingularJacobian("adjugate pullback column vanished")
    with np.errstate(divide="ignore", invalid="ignore"):
        return -m11 / m10


def pullback_vertical_field(map2d, R, domain, grid=(17, 17), exact=True):
    """Field p -> direction of DF^{-R} applied to the horizontal at F^R(p).

    Computed by the adjugate of the forward derivative, so it extends to the
    degenerate (non-invertible) limit where it returns the contracted
    direction.  Slopes are sampled on the grid; the exact closure is kept
    for integration when ``exact`` is true.
    """
    big = Rect(domain.x.inflate(100.0 * max(domain.x.width, 1.0)),
               domain.y.inflate(100.0 * max(domain.y.width, 1.0)))

    def escape(q):
        return big.contains(q)

    gx = np.linspace(domain.x.lo, domain.x.hi, grid[0])
    gy = np.linspace(domain.y.lo, domain.y.hi, grid[1])
    G = np.stack(np.meshgrid(gx, gy, indexing="ij"), axis=-1)
    slopes = _pullback_slope(map2d, R, G.reshape(-1, 2), escape).reshape(grid)
    fn = (lambda pts: _pullback_slope(map2d, R, pts)) if exact else None
    return VerticalField(domain, gx, gy, slopes, slope_fn=fn,
                         meta={"R": R, "kind": "pullback"})


def constant_field(box, slope):
    gx = np.linspace(box.x.lo, box.x.hi, 2)
    gy = np.linspace(box.y.lo, box.y.hi, 2)
    s = np.full((2, 2), float(slope))
    return VerticalField(box, gx, gy, s, slope_fn=lambda p: np.full(p.shape[:-1], float(slope)),
                         meta={"kind": "constant"})


def integrate_leaves(field, base_y, seeds=None, y_targets=None, max_step_frac=1 / 256,
                     track_arclength_at=None):
    """Integrate dx/dy = slope from the base level to each target level (RK4).

    Returns (X, arc) where X[i, j] is the abscissa of the leaf seeded at
    seeds[i] when it reaches y_targets[j]; arc[j] is the signed arclength
    along the tracked leaf (None if not requested).  Fixed step, at most
    max_step_frac of the box height per substep.
    """
    box = field.box
    if seeds is None:
        seeds = lobatto(box.x.lo, box.x.hi, 17)
    seeds = np.asarray(seeds, float)
    if y_targets is None:
        y_targets = lobatto(box.y.lo, box.y.hi, 17)
    y_targets = np.asarray(y_targets, float)
    hmax = max_step_frac * box.y.width
    xlim = box.x.inflate(0.25 * box.x.width)

    track = track_arclength_at is not None
    X = np.empty((len(seeds), len(y_targets)))
    arc = np.zeros(len(y_targets)) if track else None
    state0 = np.concatenate([seeds, [track_arclength_at]]) if track else seeds

    def rhs(x, y):
        s = field.slope(np.stack([x, np.full_like(x, y)], axis=-1))
        return s

    for sign in (+1.0, -1.0):
        order = [j for j in range(len(y_targets)) if (y_targets[j] - base_y) * sign > 0]
        order.sort(key=lambda j: abs(y_targets[j] - base_y))
        x = state0.copy()
        a = 0.0
        ycur = base_y
        for j in order:
            seg = y_targets[j] - ycur
            nst = max(1, int(np.ceil(abs(seg) / hmax)))
            h = seg / nst
            for _ in range(nst):
                k1 = rhs(x, ycur)
                k2 = rhs(x + 0.5 * h * k1, ycur + 0.5 * h)
                k3 = rhs(x + 0.5 * h * k2, ycur + 0.5 * h)
                k4 = rhs(x + h * k3, ycur + h)
                if track:
                    # arclength of the tracked leaf, Simpson on sqrt(1+s^2)
                    s0, s1, s2 = k1[-1], k2[-1], k4[-1]
                    a += h / 6.0 * (np.sqrt(1 + s0 ** 2) + 4 * np.sqrt(1 + s1 ** 2)
                                    + np.sqrt(1 + s2 ** 2))
                x = x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
                ycur += h
                if not np.all(xlim.contains(x)):
                    raise LeafEscaped(f"leaf left the box near y={ycur:.6g}")
            X[:, j] = x[:-1] if track else x
            if track:
                arc[j] = a
        # exact targets on the base level
    on_base = np.isclose(y_targets, base_y, rtol=0.0, atol=1e-15 * max(1.0, abs(base_y)))
    for j in np.flatnonzero(on_base):
        X[:, j] = seeds
        if track:
            arc[j] = 0.0
    return X, arc


class Chart:
    """Genuinely horizontal chart Phi(x,y) = (u(x,y), sec(y)).

    flow: Cheb2 leaf flow X(x0, y); sec: monotone Cheb1 in y.  base is the
    point mapped to the origin when the chart is centered.
    """

    def __init__(self, flow, sec, base, box, meta=None):
        self.flow = flow
        self.sec = sec
        self.base = np.asarray(base, float)
        self.box = box
        self.meta = dict(meta or {})

    # -- construction helpers ------------------------------------------------

    @staticmethod
    def identity(box, base=(0.0, 0.0)):
        return Chart.shear(box, 0.0, base)

    @staticmethod
    def shear(box, slope, base=(0.0, 0.0)):
        """Centered chart of the constant-slope field: leaves x = x0 + s*(y-yc)."""
        bx, by = float(base[0]), float(base[1])
        xn = lobatto(box.x.lo, box.x.hi, 3)
        yn = lobatto(box.y.lo, box.y.hi, 3)
        Z = xn[:, None] + slope * (yn[None, :] - by)
        flow = Cheb2.fit(xn, yn, Z, box.x.lo, box.x.hi, box.y.lo, box.y.hi)
        speed = float(np.sqrt(1.0 + slope * slope))
        sec = Cheb1.linear(speed, -speed * by, box.y.lo, box.y.hi)
        return Chart(flow, sec, (bx, by), box,
                     meta={"kind": "shear", "slope": float(slope), "centered": True})

    # -- evaluation ----------------------------------------------------------

    def _labels(self, pts, tol=1e-14, maxiter=60):
        pts = np.asarray(pts, float)
        x, y = pts[..., 0], pts[..., 1]
        a = np.clip(x, self.flow.xlo, self.flow.xhi)
        for _ in range(maxiter):
            r = self.flow(a, y) - x
            d = self.flow(a, y, dx=1)
            step = r / d
            a = a - step
            if np.max(np.abs(step)) < tol * max(1.0, self.box.x.width):
                break
        if np.max(np.abs(self.flow(a, y) - x)) > 1e-8 * max(1.0, self.box.x.width):
            raise ChartFailure("leaf-label inversion did not converge")
        return a

    def forward(self, pts):
        pts = np.asarray(pts, float)
        a = self._labels(pts)
        return np.stack([a - self.base[0], self.sec(pts[..., 1])], axis=-1)

    def inverse(self, z):
        z = np.asarray(z, float)
        y = self.sec.invert(z[..., 1])
        x = self.flow(z[..., 0] + self.base[0], y)
        return np.stack([x, y], axis=-1)

    def jacobian_forward(self, pts):
        pts = np.asarray(pts, float)
        a = self._labels(pts)
        y = pts[..., 1]
        Xa = self.flow(a, y, dx=1)
        Xy = self.flow(a, y, dy=1)
        J = np.zeros(pts.shape[:-1] + (2, 2))
        J[..., 0, 0] = 1.0 / Xa
        J[..., 0, 1] = -Xy / Xa
        J[..., 1, 1] = self.sec(y, der=1)
        return J

    def jacobian_inverse(self, z):
        z = np.asarray(z, float)
        y = self.sec.invert(z[..., 1])
        a = z[..., 0] + self.base[0]
        Xa = self.flow(a, y, dx=1)
        Xy = self.flow(a, y, dy=1)
        dy = 1.0 / self.sec(y, der=1)
        J = np.zeros(z.shape[:-1] + (2, 2))
        J[..., 0, 0] = Xa
        J[..., 0, 1] = Xy * dy
        J[..., 1, 1] = dy
        return J

    def jet2_forward(self, pts):
        pts = np.asarray(pts, float)
        a = self._labels(pts)
        y = pts[..., 1]
        Xa = self.flow(a, y, dx=1)
        Xy = self.flow(a, y, dy=1)
        Xaa = self.flow(a, y, dx=2)
        Xay = self.flow(a, y, dx=1, dy=1)
        Xyy = self.flow(a, y, dy=2)
        ax = 1.0 / Xa
        ay = -Xy / Xa
        val = np.stack([a - self.base[0], self.sec(y)], axis=-1)
        J = np.zeros(pts.shape[:-1] + (2, 2))
        J[..., 0, 0] = ax
        J[..., 0, 1] = ay
        J[..., 1, 1] = self.sec(y, der=1)
        H = np.zeros(pts.shape[:-1] + (2, 2, 2))
        H[..., 0, 0, 0] = -Xaa * ax * ax / Xa
        hxy = -ax * (Xaa * ay + Xay) / Xa
        H[..., 0, 0, 1] = hxy
        H[..., 0, 1, 0] = hxy
        H[..., 0, 1, 1] = -(Xaa * ay * ay + 2.0 * Xay * ay + Xyy) / Xa
        H[..., 1, 1, 1] = self.sec(y, der=2)
        return val, J, H

    def jet2_inverse(self, z):
        z = np.asarray(z, float)
        y = self.sec.invert(z[..., 1])
        a = z[..., 0] + self.base[0]
        Xa = self.flow(a, y, dx=1)
        Xy = self.flow(a, y, dy=1)
        Xaa = self.flow(a, y, dx=2)
        Xay = self.flow(a, y, dx=1, dy=1)
        Xyy = self.flow(a, y, dy=2)
        Yp = 1.0 / self.sec(y, der=1)
        Ypp = -self.sec(y, der=2) * Yp ** 3
        val = np.stack([self.flow(a, y), y], axis=-1)
        J = np.zeros(z.shape[:-1] + (2, 2))
        J[..., 0, 0] = Xa
        J[..., 0, 1] = Xy * Yp
        J[..., 1, 1] = Yp
        H = np.zeros(z.shape[:-1] + (2, 2, 2))
        H[..., 0, 0, 0] = Xaa
        H[..., 0, 0, 1] = Xay * Yp
        H[..., 0, 1, 0] = Xay * Yp
        H[..., 0, 1, 1] = Xyy * Yp * Yp + Xy * Ypp
        H[..., 1, 1, 1] = Ypp
        return val, J, H

    # -- artifact serialization ----------------------------------------------

    def to_artifact(self, n_grid=17):
        g = self.box.grid(n_grid)
        fwd = self.forward(g.reshape(-1, 2)).reshape(g.shape)
        zc = self.forward(self.base[None, :])[0]
        return {
            "kind": "chart",
            "grid_x": g[:, 0, 0].tolist(),
            "grid_y": g[0, :, 1].tolist(),
            "forward_u": fwd[..., 0].tolist(),
            "forward_w": fwd[..., 1].tolist(),
            "metadata": {
                "base": self.base.tolist(),
                "base_image": zc.tolist(),
                "box": self.box.as_list(),
                "flow": self.flow.to_dict(),
                "sec": self.sec.to_dict(),
                **{k: v for k, v in self.meta.items() if _jsonable(v)},
            },
        }

    @staticmethod
    def from_artifact(d):
        md = d["metadata"]
        return Chart(
            Cheb2.from_dict(md["flow"]),
            Cheb1.from_dict(md["sec"]),
            md["base"],
            Rect.from_list(md["box"]),
            meta={k: v for k, v in md.items() if k not in ("flow", "sec", "base", "box")},
        )


def _jsonable(v):
    return isinstance(v, (bool, int, float, str, list, tuple, type(None)))


def build_straightening_chart(field, v0, n_seed=17, n_ynode=17, max_step_frac=1 / 256):
    """Centered chart of a near-vertical field.

    First coordinate: leaf label by abscissa on the base level through v0.
    Second coordinate: signed arclength along the central leaf.  Both central
    axes are unit-speed, so the chart is centered at v0.
    """
    box = field.box
    xc, yc = float(v0[0]), float(v0[1])
    if not box.contains(np.array([xc, yc])):
        raise OutOfDomain(f"base point {v0} outside field box")
    seeds = lobatto(box.x.lo, box.x.hi, n_seed)
    ynodes = lobatto(box.y.lo, box.y.hi, n_ynode)
    seeds_aug = np.append(seeds, xc)
    X, arc = integrate_leaves(field, yc, seeds=seeds_aug[:-1], y_targets=ynodes,
                              max_step_frac=max_step_frac, track_arclength_at=xc)
    flow = Cheb2.fit(seeds, ynodes, X, box.x.lo, box.x.hi, box.y.lo, box.y.hi)
    sec = Cheb1.fit(ynodes, np.sign(ynodes - yc) * np.abs(arc), box.y.lo, box.y.hi)
    if not sec.is_monotone():
        raise ChartFailure("central-leaf arclength is not monotone")
    return Chart(flow, sec, (xc, yc), box, meta={"kind": "straightening", "centered": True})


def project_valuable(chart, pts):
    """Project onto the central horizontal leaf: Phi^{-1} o Pi_h o Phi."""
    z = chart.forward(np.asarray(pts, float))
    z = z.copy()
    z[..., 1] = 0.0
    return chart.inverse(z)


def chart_distance(chart_a, chart_b, domain=None, n_grid=33):
    """(C0, first-difference) distance of chart_a o chart_b^{-1} from the identity.

    domain is a Rect in chart_b image coordinates; defaults to the image of
    chart_b's box corners, shrunk 5% for interpolation safety.
    """
    if domain is None:
        z = chart_b.forward(chart_b.box.grid(9).reshape(-1, 2))
        lo, hi = z.min(axis=0), z.max(axis=0)
        pad = 0.05 * (hi - lo)
        domain = Rect.of(lo[0] + pad[0], hi[0] - pad[0], lo[1] + pad[1], hi[1] - pad[1])
    G = domain.grid(n_grid)
    Z = chart_a.forward(chart_b.inverse(G.reshape(-1, 2))).reshape(G.shape)
    D = Z - G
    c0 = float(np.max(np.linalg.norm(D, axis=-1)))
    hx = G[1, 0, 0] - G[0, 0, 0]
    hy = G[0, 1, 1] - G[0, 0, 1]
    dZx = np.gradient(Z, axis=0) / hx
    dZy = np.gradient(Z, axis=1) / hy
    J = np.stack([dZx, dZy], axis=-1)
    c1 = float(np.max(np.abs(J - np.eye(2))))
    return c0, c1


def vertical_quadratic_curvature(curve, chart=None, stencil=9, degree=4,
                                 degenerate_tol=1e-8):
    """Second derivative at the turning point of a vertical-quadratic arc.

    curve: sampled points (N, 2) in source coordinates; chart (optional) maps
    them first.  The chart image must be a vertical graph x = g(y) with one
    interior extremum; returns g'' there from a local least-squares fit.
    """
    pts = np.asarray(curve, float)
    if chart is not None:
        pts = chart.forward(pts)
    order = np.argsort(pts[:, 1])
    u, w = pts[order, 0], pts[order, 1]
    du = np.diff(u)
    sgn = np.sign(du)
    changes = np.flatnonzero(sgn[:-1] * sgn[1:] < 0)
    if len(changes) != 1:
        raise NoTangency(f"{len(changes)} turning points in the chart image, need 1")
    k = changes[0] + 1
    half = stencil // 2
    i0 = max(0, k - half)
    i1 = min(len(u), i0 + stencil)
    i0 = max(0, i1 - stencil)
    us, ws = u[i0:i1], w[i0:i1]
    wc = ws[np.argmin(us) if u[k] < u[k - 1] else np.argmax(us)]
    t = ws - wc
    scale = max(np.max(np.abs(t)), 1e-30)
    V = np.vander(t / scale, degree + 1, increasing=True)
    coef, *_ = np.linalg.lstsq(V, us, rcond=None)
    p = np.polynomial.Polynomial(coef)
    dp = p.deriv()
    roots = dp.roots()
    real = roots[np.abs(roots.imag) < 1e-8].real
    real = real[(real > t.min() / scale - 0.5) & (real < t.max() / scale + 0.5)]
    if len(real) == 0:
        raise NoTangency("fitted graph has no interior critical point")
    r = real[np.argmin(np.abs(real))]
    kappa = float(p.deriv(2)(r) / scale ** 2)
    if abs(kappa) < degenerate_tol:
        raise DegenerateCurvature(f"|g''| = {abs(kappa):.2e} below {degenerate_tol}")
    return kappa
