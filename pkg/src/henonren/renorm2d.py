"""Henon-like renormalization operator and the nested-return driver.

One level: locate the 1D periodic structure of the profile for the return
time and a rough working box, straighten the pulled-back vertical foliation
on that box, absorb the first-entry diffeomorphism into the chart's second
coordinate so the conjugated return is Henon-like, then read the genuine
periodic interval off the straightened return itself (at nonzero thinness
it sits O(beta) away from the raw profile's interval) and rescale by the
diagonal affine map normalizing the output profile.  The output is a
ChartConjugatedMap evaluated lazily through the composition, so the driver
can be iterated.
"""

from dataclasses import dataclass, field

import numpy as np

from .charts import (
    Chart,
    build_straightening_chart,
    integrate_leaves,
    pullback_vertical_field,
    vertical_quadratic_curvature,
)
from .cheb import Cheb1, lobatto
from .errors import (
    ChartFailure,
    DynamicsError,
    OrbitEscaped,
    InsufficientDepth,
    LeafEscaped,
    MappingViolation,
    NormalizationFailed,
    NoTangency,
    NotHenonLikeAfterChart,
    SingularJacobian,
    StripOverlap,
    TieBreak,
)
from .geometry import Interval, Rect
from .maps import ChartConjugatedMap, profile_1d, resample, thinness
from .regularity import ReturnCandidate, certify_return
from .unimodal import RenType, _fold_root, renormalizable

HENONLIKE_TOL = 1e-3


@dataclass
class Quadrilateral:
    """Region bounded by two vertical leaf graphs x = g(y) and two y-levels."""
    left: Cheb1
    right: Cheb1
    y: Interval

    def contains(self, pts, margin=0.0):
        pts = np.asarray(pts, float)
        x, yy = pts[..., 0], pts[..., 1]
        iny = self.y.contains(yy, margin)
        yc = np.clip(yy, self.y.lo, self.y.hi)
        return iny & (x >= self.left(yc) - margin) & (x <= self.right(yc) + margin)

    def containment_margin(self, pts):
        """Smallest signed distance of pts to the boundary (positive = inside)."""
        pts = np.asarray(pts, float)
        x, yy = pts[..., 0], pts[..., 1]
        yc = np.clip(yy, self.y.lo, self.y.hi)
        m = np.minimum(x - self.left(yc), self.right(yc) - x)
        m = np.minimum(m, np.minimum(yy - self.y.lo, self.y.hi - yy))
        return float(np.min(m))

    def boundary(self, n=48):
        ys = self.y.grid(n)
        left = np.stack([self.left(ys), ys], -1)
        right = np.stack([self.right(ys), ys], -1)
        ts = np.linspace(0.0, 1.0, n)
        lo_x = self.left(self.y.lo) + ts * (self.right(self.y.lo) - self.left(self.y.lo))
        hi_x = self.left(self.y.hi) + ts * (self.right(self.y.hi) - self.left(self.y.hi))
        bottom = np.stack([lo_x, np.full_like(ts, self.y.lo)], -1)
        top = np.stack([hi_x, np.full_like(ts, self.y.hi)], -1)
        return np.concatenate([left, right, bottom, top], 0)

    def sample_grid(self, nx=12, ny=12, inset=0.02):
        ys = np.linspace(self.y.lo + inset * self.y.width,
                         self.y.hi - inset * self.y.width, ny)
        out = []
        for yy in ys:
            lo, hi = float(self.left(yy)), float(self.right(yy))
            w = hi - lo
            xs = np.linspace(lo + inset * w, hi - inset * w, nx)
            out.append(np.stack([xs, np.full_like(xs, yy)], -1))
        return np.concatenate(out, 0)

    def x_extent_at(self, y):
        return Interval(float(self.left(y)), float(self.right(y)))

    def to_dict(self):
        return {"left": self.left.to_dict(), "right": self.right.to_dict(),
                "y": [self.y.lo, self.y.hi]}


def _safe_box_x(prof, R, core, ladder=(0.45, 0.30, 0.20, 0.12, 0.06, 0.03, 0.012, 0.0)):
    """Chart box: extend the core while keeping f^{R-1} fold-free on it."""
    for frac in ladder:
        d = frac * core.width
        lo = max(core.lo - d, prof.domain.lo)
        hi = min(core.hi + d, prof.domain.hi)
        cand = Interval(lo, hi)
        iv = cand
        ok = not iv.contains(prof.c)
        for _ in range(max(R - 2, 0)):
            if not ok:
                break
            iv = prof.interval_image(iv)
            ok = not iv.contains(prof.c) and prof.domain.contains(iv.lo) \
                and prof.domain.contains(iv.hi)
        if ok:
            return cand
    return core


@dataclass
class _Build:
    """All artifacts of one renormalization step."""
    R: int
    prof: object
    beta_in: float
    box: Rect
    field: object
    chartC: Chart
    phi: Chart
    labels: Interval           # invariant label interval of the straightened return
    quad: Quadrilateral
    scale: float
    shift: float
    out_rect: Rect
    margins: dict


def _chart_stack(map2d, prof, R, box, n_nodes, step_frac=1 / 128):
    """Field, centered chart, first-entry fit and the operator chart on a box."""
    field = pullback_vertical_field(map2d, R, box, grid=(n_nodes, n_nodes))
    chartC = build_straightening_chart(field, (prof.v, 0.0), n_seed=n_nodes,
                                       n_ynode=n_nodes, max_step_frac=step_frac)
    seeds = lobatto(box.x.lo, box.x.hi, n_nodes)
    base_pts = np.stack([seeds, np.zeros_like(seeds)], -1)
    imgs = map2d.iterate(base_pts, R)
    hvals = chartC.sec(imgs[:, 1])
    hfit = Cheb1.fit(seeds, hvals, box.x.lo, box.x.hi)
    if not hfit.is_monotone():
        raise ChartFailure("first-entry map is not monotone on the chart box")
    hlo, hhi = sorted((float(np.min(hvals)), float(np.max(hvals))))
    hw = hhi - hlo
    yy = np.linspace(box.y.lo, box.y.hi, 2049)
    wv = chartC.sec(yy)
    ok = (wv > hlo + 0.005 * hw) & (wv < hhi - 0.005 * hw)
    j0 = int(np.argmin(np.abs(yy)))
    if not ok[j0]:
        raise ChartFailure("base level outside the first-entry range")
    i0 = j0
    while i0 > 0 and ok[i0 - 1]:
        i0 -= 1
    i1 = j0
    while i1 < len(yy) - 1 and ok[i1 + 1]:
        i1 += 1
    Vv = Interval(yy[i0], yy[i1])
    ynodes = lobatto(Vv.lo, Vv.hi, n_nodes)
    xc = float(prof.v)
    psi_nodes = hfit.invert(chartC.sec(ynodes)) - xc  # label units
    psi2 = Cheb1.fit(ynodes, psi_nodes, Vv.lo, Vv.hi)
    if not psi2.is_monotone():
        raise ChartFailure("straightened second coordinate is not monotone")
    phi = Chart(chartC.flow, psi2, (xc, 0.0), Rect(box.x, Vv),
                meta={"kind": "operator", "centered": False})
    return field, chartC, phi


def _diag_fold(unscaled, lbl):
    """Newton for the fold of the straightened return on the diagonal section.

    Seeded at the discrete extremum of the diagonal section over the label
    range, so no 1D profile data is needed.
    """
    ts = np.linspace(lbl.lo, lbl.hi, 129)
    diag = unscaled.evaluate(np.stack([ts, ts], -1))[:, 0]
    d = np.diff(diag)
    sgn = np.sign(d)
    idx = np.flatnonzero(sgn[:-1] * sgn[1:] < 0)
    if len(idx) == 0:
        raise NormalizationFailed("diagonal section of the return is monotone")
    t = float(ts[idx[0] + 1])
    for _ in range(60):
        _, J, H = unscaled.jet2(np.array([[t, t]]))
        g1 = float(J[0, 0, 0])
        g2 = float(H[0, 0, 0, 0] + H[0, 0, 0, 1])
        if g2 == 0.0:
            break
        step = g1 / g2
        t -= step
        if abs(step) < 1e-15 * max(1.0, abs(t)):
            break
    _, J, H = unscaled.jet2(np.array([[t, t]]))
    if abs(float(J[0, 0, 0])) > 1e-8:
        raise NormalizationFailed("normalization Newton did not locate the fold")
    return t, float(H[0, 0, 0, 0]) / 2.0


def _invariant_labels(unscaled, t, lbl, margin_floor):
    """Invariant label interval of the straightened return through the fold.

    In chart coordinates the candidate domain is the square I x I (the
    second coordinate is in label units), so containment of the return is a
    direct 2D grid check: both output coordinates must land back in I.
    Chases the forward hull of the fold-value orbit, then pads outward.
    """
    def sec(u):
        u = np.atleast_1d(np.asarray(u, float))
        z = np.stack([u, np.full_like(u, t)], -1)
        return unscaled.evaluate(z)[..., 0]

    def square_margin(iv):
        g = np.linspace(iv.lo, iv.hi, 17)
        G = np.stack(np.meshgrid(g, g, indexing="ij"), -1).reshape(-1, 2)
        out = unscaled.evaluate(G)
        x = out[:, 0]
        return float(min(np.min(x - iv.lo), np.min(iv.hi - x)))

    vhat = float(sec(t)[0])
    iv = Interval.spanning(vhat, float(sec(vhat)[0]), t)
    if iv.width < 1e-9 * max(lbl.width, 1.0):
        iv = iv.inflate(1e-7 * max(lbl.width, 1.0))
    for _ in range(200):
        g = sec(np.linspace(iv.lo, iv.hi, 65))
        img = Interval(float(np.min(g)), float(np.max(g)))
        grown = iv.hull(img)
        if grown.width - iv.width < 1e-14 * max(lbl.width, 1.0):
            iv = grown
            break
        iv = grown
        if not (lbl.contains(iv.lo) and lbl.contains(iv.hi)):
            raise ChartFailure("invariant interval of the return left the chart box")
    for frac in (0.06, 0.03, 0.015, 0.006, 0.002):
        d = max(frac * iv.width, 4.0 * margin_floor)
        far = d
        for _ in range(8):
            cand = Interval(iv.lo - d, iv.hi + far)
            if not (lbl.contains(cand.lo) and lbl.contains(cand.hi)):
                break
            m = square_margin(cand)
            if m > margin_floor:
                return cand, m
            far *= 2.0
    raise MappingViolation("straightened return has no padded invariant interval")


def _rough_candidates(work, prof, b_max, skip_R=None, n_orbit=96):
    """Candidate (R, box_x, V0) triples from the 2D return orbit of the marker.

    Used when the raw profile is blind to the true return structure (the
    b-induced parameter shift); every candidate is still fully verified by
    the chart-coordinate build, so this only has to be roughly right.
    """
    box = work.escape_box()
    orbit = [np.array([prof.v, 0.0])]
    for _ in range(n_orbit):
        q = work.evaluate(orbit[-1][None, :])[0]
        if not bool(box.contains(q)):
            break
        orbit.append(q)
    pts = np.array(orbit)
    if len(pts) < 3 * 2:
        return
    transient = min(len(pts) // 3, 30)
    tail = pts[transient:]
    spread = max(float(np.max(pts[:, 0]) - np.min(pts[:, 0])), 1e-6)
    for R in range(2, b_max + 1):
        if R == skip_R or len(tail) < 3 * R:
            continue
        off = transient % R
        rx = tail[(R - off) % R::R, 0]
        ry = tail[(R - off) % R + R - 1::R, 0]  # pre-return abscissas
        if len(rx) < 2 or len(ry) < 2:
            continue
        cx, wx = 0.5 * (rx.max() + rx.min()), max(rx.max() - rx.min(), 0.05 * spread)
        cy, wy = 0.5 * (ry.max() + ry.min()), max(ry.max() - ry.min(), 0.05 * spread)
        box_x = Interval(max(cx - 1.75 * wx, prof.domain.lo),
                         min(cx + 1.75 * wx, prof.domain.hi))
        V0 = Interval(min(cy - 0.9 * wy, -1e-9), max(cy + 0.9 * wy, 1e-9))
        V0 = Interval(max(V0.lo, work.domain.y.lo), min(V0.hi, work.domain.y.hi))
        if box_x.width <= 0 or V0.width <= 0:
            continue
        yield R, box_x, V0


def _attempt_build(map2d, work, prof, R, box_x, V0, n_nodes, attempts=3):
    """Chart build + invariant labels for one (R, box) candidate."""
    xc = float(prof.v)
    last_err = None
    result = None
    for attempt in range(attempts):
        box = Rect(box_x, V0)
        try:
            field, chartC, phi = _chart_stack(work, prof, R, box, n_nodes)
            lbl = Interval(box.x.lo - xc, box.x.hi - xc).inflate(-0.02 * box.x.width)
            psi_rng = Interval(*sorted((float(phi.sec(phi.box.y.lo)),
                                        float(phi.sec(phi.box.y.hi)))))
            lbl = Interval(max(lbl.lo, psi_rng.lo), min(lbl.hi, psi_rng.hi))
            unscaled = ChartConjugatedMap(work, R, phi, 1.0, 0.0,
                                          Rect(lbl, psi_rng))
            t, half_dd = _diag_fold(unscaled, lbl)
            labels, lbl_margin = _invariant_labels(unscaled, t, lbl,
                                                   1e-9 * max(1.0, box.x.width))
            result = (field, chartC, phi, t, half_dd, labels, lbl_margin)
        except (ChartFailure, MappingViolation, NormalizationFailed,
                LeafEscaped, SingularJacobian, OrbitEscaped) as e:
            last_err = e
            if result is not None:
                break  # keep the previous successful build
            box_x = box_x.inflate(0.25 * box_x.width)
            box_x = Interval(max(box_x.lo, prof.domain.lo), min(box_x.hi, prof.domain.hi))
            V0 = V0.inflate(0.15 * V0.width)
            V0 = Interval(max(V0.lo, work.domain.y.lo), min(V0.hi, work.domain.y.hi))
            continue
        # retry with a recentered box when the invariant interval sits near its
        # edge; the recentered box must stay clear of the profile fold
        edge = min(labels.lo - lbl.lo, lbl.hi - labels.hi)
        if edge < 0.05 * labels.width and attempt + 1 < attempts:
            mid_abs = labels.mid + xc
            half = 0.8 * labels.width
            cand = Interval(max(mid_abs - half, prof.domain.lo),
                            min(mid_abs + half, prof.domain.hi))
            if cand.width > 0 and not cand.contains(prof.c):
                box_x = cand
                continue
        break
    if result is None:
        raise last_err if last_err is not None else ChartFailure("chart build failed")
    field, chartC, phi, t, half_dd, labels, lbl_margin = result

    if abs(half_dd) < 1e-8:
        raise NormalizationFailed(f"section second derivative {2 * half_dd:.2e} too small")
    s = half_dd

    # quadrilateral: leaves at the invariant labels; heights cover the padded
    # label range so the return image clears the top and bottom edges
    psi_rng = Interval(*sorted((float(phi.sec(phi.box.y.lo)),
                                float(phi.sec(phi.box.y.hi)))))
    pad = min(0.3 * lbl_margin, 0.45 * (psi_rng.width - labels.width))
    pad = max(pad, 0.0)
    lab_pad = Interval(max(labels.lo - pad, psi_rng.lo + 1e-12 * psi_rng.width),
                       min(labels.hi + pad, psi_rng.hi - 1e-12 * psi_rng.width))
    y_lo = float(phi.sec.invert(np.array([lab_pad.lo]))[0])
    y_hi = float(phi.sec.invert(np.array([lab_pad.hi]))[0])
    qy = Interval(*sorted((y_lo, y_hi)))
    # boundary leaves read off the fitted flow
    ynodes = lobatto(phi.box.y.lo, phi.box.y.hi, n_nodes)
    left = Cheb1.fit(ynodes, phi.flow(np.full_like(ynodes, labels.lo + xc), ynodes),
                     phi.box.y.lo, phi.box.y.hi)
    right = Cheb1.fit(ynodes, phi.flow(np.full_like(ynodes, labels.hi + xc), ynodes),
                      phi.box.y.lo, phi.box.y.hi)
    quad = Quadrilateral(left, right, qy)

    beta_in = thinness(work, order=1, grid=(24, 24))
    out_x = Interval(*sorted((s * (labels.lo - t), s * (labels.hi - t))))
    out_rect = Rect(out_x, out_x)
    margins = _verify_cycle(work, prof, R, quad)
    return _Build(R, prof, beta_in, Rect(box_x, V0), field, chartC, phi, labels,
                  quad, s, t, out_rect, margins)


def _build_level(map2d, b_max=9, n_nodes=17, attempts=3, work=None):
    """Full preparation of one renormalization step, or None if not renormalizable.

    work, when given, is a fast resampled stand-in used for all internal
    construction; the caller re-validates on the true map.  The primary
    candidate comes from the raw 1D profile; when that is blind to the true
    return structure, candidates from the 2D marker orbit are tried.
    """
    if work is None:
        work = map2d
    prof = profile_1d(work)
    candidates = []
    skip_R = None
    rr = renormalizable(prof, b_max)
    if rr is not None:
        R, I1 = rr
        skip_R = R
        box_x = _safe_box_x(prof, R, I1)
        JR1 = prof.interval_orbit(I1, R - 1)[R - 1]
        beta0 = thinness(work, order=1, grid=(16, 16))
        pad_v = (0.15 + min(np.sqrt(max(beta0, 0.0)), 0.15)) * max(JR1.width, 1e-9)
        V0 = Interval(min(JR1.lo - pad_v, -1e-9), max(JR1.hi + pad_v, 1e-9))
        V0 = Interval(max(V0.lo, work.domain.y.lo), min(V0.hi, work.domain.y.hi))
        candidates.append((R, box_x, V0))
    last_err = None
    catchable = (ChartFailure, MappingViolation, NormalizationFailed, StripOverlap,
                 LeafEscaped, SingularJacobian, OrbitEscaped)
    for R, box_x, V0 in candidates:
        try:
            return _attempt_build(map2d, work, prof, R, box_x, V0, n_nodes, attempts)
        except catchable as e:
            last_err = e
    for R, box_x, V0 in _rough_candidates(work, prof, b_max, skip_R=skip_R):
        try:
            return _attempt_build(map2d, work, prof, R, box_x, V0, n_nodes, attempts)
        except catchable as e:
            last_err = e
    if rr is None and last_err is None:
        return None
    if rr is None:
        return None
    raise last_err


def _verify_cycle(map2d, prof, R, quad):
    """Sampled first-return checks on the quadrilateral."""
    scale = prof.domain.width
    b = quad.boundary(40)
    center = np.array([[0.5 * (float(quad.left(quad.y.mid)) + float(quad.right(quad.y.mid))),
                        quad.y.mid]])
    q = np.concatenate([b, center], 0)
    for i in range(1, R):
        q = map2d.evaluate(q)
        if bool(np.any(quad.contains(q))):
            raise StripOverlap(f"iterate {i} re-enters the domain before time R")
    q = map2d.evaluate(q)
    ret_margin = quad.containment_margin(q)
    if ret_margin <= 0.0:
        raise MappingViolation(
            f"return image leaves the quadrilateral (margin {ret_margin:.3e})")
    return {"return_margin": ret_margin}


def find_periodic_domain(map2d, b_max=9):
    """Fold-periodic quadrilateral around the critical value, or None.

    Returns (R, Quadrilateral) where the quadrilateral is bounded by leaves
    of the pulled-back vertical field through the endpoints of the
    straightened return's invariant interval; first-return disjointness and
    return containment are verified by boundary sampling.
    """
    build = _build_level(map2d, b_max=b_max)
    if build is None:
        return None
    build.quad._build = build
    return build.R, build.quad


@dataclass
class RenormLevel:
    """Per-depth record of one renormalization step."""
    n: int
    R_total: int
    ratio: int
    domain: Quadrilateral
    chart: Chart
    chart_centered: Chart
    scale: float
    shift: float
    rtype: RenType
    beta: float
    kappa: float
    width: float
    regularity: object = None
    diagnostics: dict = field(default_factory=dict)
    map_in: object = None
    map_out: object = None

    def to_dict(self):
        return {
            "n": self.n,
            "R_total": self.R_total,
            "ratio": self.ratio,
            "rescale": {"scale": self.scale, "shift": self.shift},
            "type": self.rtype.to_dict() if self.rtype else None,
            "beta": self.beta,
            "kappa": self.kappa,
            "width": self.width,
            "regularity": self.regularity.to_dict() if self.regularity else None,
            "diagnostics": {k: v for k, v in self.diagnostics.items()
                            if isinstance(v, (int, float, str, bool, list, type(None)))},
        }


def _achieved_type(map2d, prof, r, tie_tol=1e-12):
    """Order of the projected return orbit of the critical value marker."""
    pts = [np.array([prof.v, 0.0])]
    for _ in range(r - 1):
        pts.append(map2d.evaluate(pts[-1][None, :])[0])
    a = np.array([p[0] for p in pts])
    scale = max(1.0, float(np.max(np.abs(a))))
    for i in range(r):
        for j in range(i + 1, r):
            if abs(a[i] - a[j]) < tie_tol * scale:
                raise TieBreak(f"projected values {i} and {j} coincide")
    order = np.argsort(a, kind="stable")
    ranks = np.empty(r, dtype=int)
    ranks[order] = np.arange(r)
    return RenType(r, tuple(int(x) for x in ranks))


def type_2d(level, r=None, tie_tol=1e-12):
    """Renormalization type from the projected critical-value return orbit."""
    prof = profile_1d(level.map_in)
    return _achieved_type(level.map_in, prof, int(r if r is not None else level.ratio),
                          tie_tol)


def renormalize_once(map2d, R=None, domain=None, b_max=9, n_nodes=17,
                     henonlike_tol=HENONLIKE_TOL, work=None):
    """One step of the Henon-like renormalization operator.

    Returns (renormalized MapSpec, RenormLevel).  R and domain normally come
    from find_periodic_domain; passing None recomputes them.  The output is
    always conjugated over map2d itself, even when a resampled work map was
    used for construction.
    """
    build = getattr(domain, "_build", None)
    if build is None:
        build = _build_level(map2d, b_max=b_max, n_nodes=n_nodes, work=work)
        if build is None:
            raise NormalizationFailed("profile not renormalizable")
    if R is not None and R != build.R:
        raise ValueError(f"requested return time {R} != detected {build.R}")
    R, prof, phi, s, t = build.R, build.prof, build.phi, build.scale, build.shift
    out = ChartConjugatedMap(map2d, R, phi, s, t, build.out_rect)

    rect = build.out_rect
    zg = Rect(rect.x.inflate(-0.02 * rect.x.width),
              rect.y.inflate(-0.02 * rect.y.width)).grid(17).reshape(-1, 2)
    w = out.evaluate(zg)
    resid = float(np.max(np.abs(w[:, 1] - zg[:, 0])))
    tol = henonlike_tol * max(1.0, rect.x.width)
    if resid > tol:
        raise NotHenonLikeAfterChart(resid, tol)

    beta_out = thinness(out, order=1, grid=(48, 48))
    Jg = out.jacobian(zg)
    det_sup = float(np.max(np.abs(
        Jg[..., 0, 0] * Jg[..., 1, 1] - Jg[..., 0, 1] * Jg[..., 1, 0])))

    xc = float(prof.v)
    xs = np.linspace(build.labels.lo + xc, build.labels.hi + xc, 41)
    curve = map2d.iterate(np.stack([xs, np.zeros_like(xs)], -1), R)
    # (curve/type/tangency use the true map; construction may have used work)
    try:
        kappa = vertical_quadratic_curvature(curve, build.chartC)
        zc = build.chartC.forward(curve)
        lo_i, hi_i = int(np.argmin(zc[:, 0])), int(np.argmax(zc[:, 0]))
        k_idx = lo_i if lo_i not in (0, len(xs) - 1) else hi_i
        tangency = curve[k_idx]
    except NoTangency:
        kappa, tangency = float("nan"), None

    try:
        rtype = _achieved_type(map2d, prof, R)
    except TieBreak:
        rtype = None

    level = RenormLevel(
        n=0, R_total=R, ratio=R,
        domain=build.quad,
        chart=phi, chart_centered=build.chartC,
        scale=s, shift=t, rtype=rtype,
        beta=beta_out, kappa=kappa, width=build.labels.width,
        diagnostics={
            "henonlike_residual": resid,
            "jacobian_sup": det_sup,
            "thinness_in": build.beta_in,
            "return_margin": build.margins.get("return_margin"),
            "tangency": None if tangency is None else
                        [float(tangency[0]), float(tangency[1])],
            "labels": [build.labels.lo, build.labels.hi],
            "out_rect": rect.as_list(),
        },
        map_in=map2d, map_out=out,
    )
    return out, level


@dataclass
class RenormSequence:
    """Nested stack of renormalization levels over a base map."""
    base: object
    levels: list
    stop_reason: str
    params: dict

    @property
    def depth(self):
        return len(self.levels)

    @property
    def word(self):
        return [lv.rtype for lv in self.levels]

    def map_at(self, n):
        return self.base if n == 0 else self.levels[n - 1].map_out

    def push(self, n, pts):
        """Original coordinates -> level-n coordinates."""
        pts = np.asarray(pts, float)
        for lv in self.levels[:n]:
            pts = lv.scale * (lv.chart.forward(pts) - lv.shift)
        return pts

    def pull(self, n, pts):
        """Level-n coordinates -> original coordinates."""
        pts = np.asarray(pts, float)
        for lv in reversed(self.levels[:n]):
            pts = lv.chart.inverse(pts / lv.scale + lv.shift)
        return pts

    def push_jacobian(self, n, pts):
        """Derivative of the original -> level-n conjugacy at original points."""
        pts = np.asarray(pts, float)
        J = np.broadcast_to(np.eye(2), pts.shape[:-1] + (2, 2)).copy()
        for lv in self.levels[:n]:
            J = lv.scale * (lv.chart.jacobian_forward(pts) @ J)
            pts = lv.scale * (lv.chart.forward(pts) - lv.shift)
        return J

    def cumulative_scale(self, n):
        out = 1.0
        for lv in self.levels[:n]:
            out *= lv.scale
        return out

    def to_dict(self):
        return {
            "base": self.base.to_dict(),
            "depth": self.depth,
            "stop_reason": self.stop_reason,
            "params": self.params,
            "levels": [lv.to_dict() for lv in self.levels],
        }


def renorm_sequence(map2d, depth=None, word=None, b_max=9, eps=0.2, lam=None,
                    L=None, certify=True, certify_grid=10, depth_guard=256,
                    n_nodes=17):
    """Iterate the renormalization operator, certifying each level.

    Stops at the requested depth / word end or at the first structural
    failure, recording a stop reason.  lam defaults to the base thinness.
    """
    if (depth is None) == (word is None):
        raise ValueError("pass exactly one of depth or word")
    target = len(word) if word is not None else int(depth)
    if lam is None:
        lam = float(np.clip(thinness(map2d, grid=(16, 16)), 1e-4, 0.9))
    L_req = 10.0 if L is None else float(L)

    levels = []
    cur = map2d
    cur_work = map2d
    R_total = 1
    stop = "requested depth reached"
    for n in range(1, target + 1):
        try:
            build = _build_level(cur, b_max=b_max, n_nodes=n_nodes, work=cur_work)
        except DynamicsError as e:
            stop = f"domain construction failed at depth {n}: {e}"
            break
        if build is None:
            stop = "profile not renormalizable"
            break
        if R_total * build.R > depth_guard:
            stop = (f"precision guard: return time {R_total * build.R} exceeds "
                    f"{depth_guard} at depth {n}")
            break
        build.quad._build = build
        try:
            out, level = renormalize_once(cur, build.R, build.quad, b_max=b_max,
                                          n_nodes=n_nodes)
        except (ChartFailure, NotHenonLikeAfterChart, NormalizationFailed) as e:
            stop = f"{type(e).__name__} at depth {n}: {e}"
            break
        out_work = resample(out, n=13)
        if out_work.residual > 1e-10 * max(1.0, out.domain.x.width):
            out_work = resample(out, n=21)
        level.diagnostics["resample_residual"] = out_work.residual
        R_total *= build.R
        level.n = n
        level.R_total = R_total
        seq_tmp = RenormSequence(map2d, levels + [level], "", {})
        if certify:
            try:
                cand = return_candidate(seq_tmp, n, grid=certify_grid)
                level.regularity = certify_return(cand, eps, lam, L_req)
            except Exception as e:  # certification must never kill the build
                level.diagnostics["certification_error"] = f"{type(e).__name__}: {e}"
        if word is not None and level.rtype != word[n - 1]:
            level.diagnostics["word_mismatch"] = True
            levels.append(level)
            stop = (f"type mismatch at depth {n}: achieved {level.rtype}, "
                    f"wanted {word[n - 1]}")
            break
        levels.append(level)
        cur = out
        cur_work = out_work
    else:
        stop = "requested depth reached" if word is None else "word realized"
    return RenormSequence(map2d, levels, stop,
                          {"b_max": b_max, "eps": eps, "lam": lam, "L": L_req})


def return_candidate(seq, n, grid=10):
    """Certification data of the level-n return in original coordinates."""
    level = seq.levels[n - 1]
    pts_prev = level.domain.sample_grid(grid, grid)
    pts_orig = seq.pull(n - 1, pts_prev)
    Jpsi = level.chart.jacobian_forward(pts_prev) @ seq.push_jacobian(n - 1, pts_orig)
    inv = np.linalg.inv(Jpsi)
    E_v = inv[..., :, 1]
    E_h = inv[..., :, 0]
    img_prev = level.map_in.iterate(pts_prev, level.ratio)
    img_orig = seq.pull(n - 1, img_prev)
    Jpsi_img = level.chart.jacobian_forward(img_prev) @ seq.push_jacobian(n - 1, img_orig)
    E_h_img = np.linalg.inv(Jpsi_img)[..., :, 0]
    return ReturnCandidate(
        map2d=seq.base, R=level.R_total,
        points=pts_orig, E_v=E_v, E_h=E_h,
        image_points=img_orig, image_E_h=E_h_img,
        meta={"depth": n, "grid": grid},
    )


def critical_value(seq):
    """Tangency-located critical value and per-depth residuals."""
    if seq.depth < 1:
        raise InsufficientDepth("need at least one level")
    pts = []
    for k, lv in enumerate(seq.levels, start=1):
        tg = lv.diagnostics.get("tangency")
        if tg is None:
            raise NoTangency(f"level {k} recorded no tangency")
        pts.append(seq.pull(k - 1, np.array([tg]))[0])
    residuals = [float(np.linalg.norm(pts[i + 1] - pts[i])) for i in range(len(pts) - 1)]
    return pts[-1], residuals


def piece_diameters(seq, n, boundary_n=40):
    """Diameters of F^i(B^n_{R_n}) for 0 <= i < R_n, plus their sum."""
    if n == 0:
        d = _diam(seq.base.domain.boundary(boundary_n))
        return [d], d
    if n < 0 or n > seq.depth:
        raise InsufficientDepth(f"level {n} not available")
    level = seq.levels[n - 1]
    b_prev = level.domain.boundary(boundary_n)
    b_orig = seq.pull(n - 1, b_prev)
    R = level.R_total
    q = b_orig
    for _ in range(R):
        q = seq.base.evaluate(q)
    diams = []
    for _ in range(R):
        diams.append(_diam(q))
        q = seq.base.evaluate(q)
    return diams, float(np.sum(diams))


def _diam(pts):
    pts = np.asarray(pts, float)
    d = pts[:, None, :] - pts[None, :, :]
    return float(np.max(np.linalg.norm(d, axis=-1)))
