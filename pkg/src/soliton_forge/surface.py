"""Surface generation: reaper cylinders, the model Scherk tower and glued initial surfaces."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import ellipj, ellipk

from .flexibility import FlexibleConfiguration
from .mesh import MeshError, SurfaceMesh, assemble, strip_faces
from .planar import GrimReaperCurve

LN2 = math.log(2.0)


class GluingError(ValueError):
    pass


class ClearanceError(GluingError):
    pass


def quintic(t):
    """C2 step: 0 below 0, 1 above 1, two vanishing derivatives at both ends."""
    t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
    return t ** 3 * (10.0 - 15.0 * t + 6.0 * t * t)


# ---------------------------------------------------------------- extrusions


def _row_z(R, parity, dz):
    return (np.arange(R) - R / 2 + parity / 2) * dz


def extrude_polyline(xy, z_period: float, rows: int, closed: bool = False, parity0: int = 0,
                     mirror: bool = True) -> SurfaceMesh:
    """Vertical z-periodic strip over a planar polyline, rows offset on alternate columns."""
    xy = np.asarray(xy, dtype=float)
    C = len(xy)
    if closed and C % 2:
        raise MeshError("closed extrusion needs an even number of columns")
    R = int(rows)
    dz = z_period / R
    pos, cols = [], []
    for c in range(C):
        p = (parity0 + c) % 2
        z = _row_z(R, p, dz)
        cols.append(np.arange(len(pos) * 0 + sum(len(q) for q in pos), sum(len(q) for q in pos) + R))
        pos.append(np.c_[np.full(R, xy[c, 0]), np.full(R, xy[c, 1]), z])
    P = np.vstack(pos)
    fvs, fzs = [], []
    n_seg = C if closed else C - 1
    for c in range(n_seg):
        fv, fz = strip_faces(cols[c], (parity0 + c) % 2, cols[(c + 1) % C], R)
        fvs.append(fv)
        fzs.append(fz)
    return assemble(P, np.vstack(fvs), np.vstack(fzs), z_period=z_period, mirror=mirror)


def plane_mesh(width: float = 2.0, z_period: float = 2.0, rows: int = 16) -> SurfaceMesh:
    """Strip of the plane x = 0 over |y| <= width/2."""
    dz = z_period / rows
    ds = math.sqrt(3) / 2 * dz
    n = int(math.ceil(width / ds)) + 1
    y = (np.arange(n) - (n - 1) / 2) * ds
    return extrude_polyline(np.c_[np.zeros(n), y], z_period, rows)


def round_cylinder_mesh(radius: float = 1.0, z_period: float = 2.0, rows: int = 16) -> SurfaceMesh:
    dz = z_period / rows
    n = int(math.ceil(2 * math.pi * radius / (math.sqrt(3) / 2 * dz)))
    n += n % 2
    phi = 2 * math.pi * np.arange(n) / n
    return extrude_polyline(np.c_[radius * np.cos(phi), radius * np.sin(phi)], z_period, rows, closed=True)


def reaper_cylinder_mesh(curve: GrimReaperCurve = GrimReaperCurve(0.0, 0.0), s_range=(-1.5, 1.5),
                         z_period: float = 1.0, rows: int = 16) -> SurfaceMesh:
    """Grim reaper cylinder over an arc-length window, columns uniform in arc length."""
    dz = z_period / rows
    ds = math.sqrt(3) / 2 * dz
    n = int(math.ceil((s_range[1] - s_range[0]) / ds)) + 1
    s = np.linspace(s_range[0], s_range[1], n)
    x = curve.x_at_arclength(s)
    m = extrude_polyline(np.c_[x, curve.y(x)], z_period, rows)
    m.meta["curve"] = curve.to_dict()
    return m


# ---------------------------------------------------------------- Scherk tower pieces

def scherk_from_w(w):
    """Point of sin z = sinh x sinh y from the Gauss-map coordinate w (w = inf -> (0, 0, pi))."""
    w = np.asarray(w, dtype=complex)
    with np.errstate(all="ignore"):
        X = np.real(np.log((1 + w) / (1 - w)))
        Y = np.real(np.log((1 + 1j * w) / (1 - 1j * w)))
        Z = -np.angle((1 + w ** 2) / (1 - w ** 2))
    inf = ~np.isfinite(w) | (np.abs(w) > 1e13)
    X = np.where(inf, 0.0, X)
    Y = np.where(inf, 0.0, Y)
    Z = np.where(inf, math.pi, Z)
    return X, Y, Z


def scherk_implicit(p):
    p = np.asarray(p, dtype=float)
    return np.sin(p[..., 2]) - np.sinh(p[..., 0]) * np.sinh(p[..., 1])


LEMN_K = float(ellipk(0.5) / math.sqrt(2))  # quarter period of the lemniscate sine


def _sn_dn(u, m):
    # complex Jacobi sn and dn from real-argument values (addition formula)
    x, y = np.real(u), np.imag(u)
    s, c, d, _ = ellipj(x, m)
    s1, c1, d1, _ = ellipj(y, 1 - m)
    den = c1 ** 2 + m * s ** 2 * s1 ** 2
    with np.errstate(all="ignore"):
        sn = (s * d1 + 1j * c * d * s1 * c1) / den
        dn = (d * c1 * d1 - 1j * m * s * c * s1) / den
    return sn, dn


def lemniscate_sl(z):
    sn, dn = _sn_dn(np.sqrt(2) * np.asarray(z, dtype=complex), 0.5)
    with np.errstate(all="ignore"):
        return sn / dn / np.sqrt(2)


def _wrap(d):
    return (d + math.pi) % (2 * math.pi) - math.pi


def _pillow_raw(n: int, half_width: float):
    """Square lattice on the flat pillowcase chart mapped to the tower, plus graph wings.

    The chart is regular at the saddles; its cone points sit at the wing ends. The lattice is
    cut on a Chebyshev ring around each cone point and the wing beyond it is meshed as the graph
    y = asinh(sin z / sinh x) (or the same with x, y swapped) out to half_width. The ring takes
    the smallest radius (>= 2 cells) that still fits in the box, so under refinement the seam
    between the two grids moves out to where the surface is flatter. Returns positions, faces
    and integer z-lifts per corner found by continuity through edge midpoints.
    """
    h = LEMN_K / n
    A, B = np.meshgrid(np.arange(4 * n), np.arange(2 * n), indexing="ij")
    A = A.ravel()
    B = B.ravel()

    def idx(a, b):
        q = np.floor_divide(b, 2 * n)
        b = b - 2 * n * q
        a = np.mod(a + 2 * n * q, 4 * n)
        return a * (2 * n) + b

    def surf(a, b):
        return scherk_from_w(1j * lemniscate_sl(h * (a + 1j * b)))

    punct = [(0, n), (2 * n, n), (n, 0), (3 * n, 0)]

    def ring_offsets(r):
        # counter-clockwise square of Chebyshev radius r
        return np.array([(r, t) for t in range(-r, r)] + [(-t, r) for t in range(-r, r)]
                        + [(-r, -t) for t in range(-r, r)] + [(t, -r) for t in range(-r, r)])

    rc = None
    for r in range(2, n // 2):
        ring = ring_offsets(r)
        Xr, Yr, _ = surf(punct[1][0] + ring[:, 0], punct[1][1] + ring[:, 1])
        if np.abs(Xr).max() <= half_width - 0.25:
            rc = r
            break
    if rc is None:
        raise MeshError(f"half_width={half_width:g} too small to reach the wings")
    # Chebyshev distance to the nearest cone point on the twisted torus
    def cheb(a, b):
        out = np.full(np.shape(a), np.inf)
        for pa, pb in punct:
            for i in (-1, 0, 1):
                for j in (-1, 0, 1):
                    da = a - pa - 4 * n * i - 2 * n * j
                    db = b - pb - 2 * n * j
                    out = np.minimum(out, np.maximum(np.abs(da), np.abs(db)))
        return out

    X, Y, Z = surf(A, B)
    keep = cheb(A, B) >= rc
    outside = []
    corners = [((0, 0), (1, 0), (0, 1)), ((1, 0), (1, 1), (0, 1))]
    Fs, Ls = [], []
    for tri in corners:
        F = np.stack([idx(A + da, B + db) for da, db in tri], 1)
        lifts = np.zeros((len(A), 3), np.int64)
        z0 = Z[F[:, 0]]
        for c in (1, 2):
            ma = A + 0.5 * (tri[0][0] + tri[c][0])
            mb = B + 0.5 * (tri[0][1] + tri[c][1])
            zm = surf(ma, mb)[2]
            zc = Z[F[:, c]]
            tot = _wrap(zm - z0) + _wrap(zc - zm)
            lifts[:, c] = np.round((z0 + tot - zc) / (2 * math.pi)).astype(np.int64)
        Fs.append(F)
        Ls.append(lifts)
        # corner triangles of the ring have all vertices on it but lie inside
        ca = A + sum(d[0] for d in tri) / 3
        cb = B + sum(d[1] for d in tri) / 3
        outside.append(cheb(ca, cb) > rc)
    F = np.vstack(Fs)
    L = np.vstack(Ls)
    ok = np.all(keep[F], axis=1) & np.concatenate(outside)
    P = np.c_[np.where(keep, X, 0.0), np.where(keep, Y, 0.0), np.where(keep, Z, 0.0)]
    Fs, Ls = [F[ok]], [L[ok]]
    Ps = [P]
    nv = len(P)
    for pa, pb in punct:
        ids = idx(pa + ring[:, 0], pb + ring[:, 1])
        xr, yr, zr = P[ids].T
        # unwrap z along the closed ring using the midpoints between neighbours
        a2 = pa + np.r_[ring[:, 0], ring[:1, 0]]
        b2 = pb + np.r_[ring[:, 1], ring[:1, 1]]
        zm = surf(0.5 * (a2[:-1] + a2[1:]), 0.5 * (b2[:-1] + b2[1:]))[2]
        znext = np.r_[zr[1:], zr[:1]]
        step = _wrap(zm - zr) + _wrap(znext - zm)
        zu = zr[0] + np.r_[0.0, np.cumsum(step)]
        lift = np.round((zu - np.r_[zr, zr[:1]]) / (2 * math.pi)).astype(np.int64)
        xwing = np.abs(xr).mean() > np.abs(yr).mean()
        u0 = np.abs(xr) if xwing else np.abs(yr)
        sgn = np.sign(xr.mean()) if xwing else np.sign(yr.mean())
        dz = np.abs(step).mean()
        K = max(1, int(math.ceil((half_width - u0.min()) / (0.87 * dz))))
        t = np.arange(1, K + 1) / K
        U = sgn * (u0[:, None] + (half_width - u0[:, None]) * t[None, :])
        with np.errstate(all="ignore"):
            W = np.arcsinh(np.sin(zr)[:, None] / np.sinh(U))
        Zc = np.broadcast_to(zr[:, None], U.shape)
        col = np.c_[U.ravel(), W.ravel(), Zc.ravel()] if xwing else np.c_[W.ravel(), U.ravel(), Zc.ravel()]
        Ps.append(col)
        nr = len(ring)
        vid = np.empty((nr, K + 1), np.int64)
        vid[:, 0] = ids
        vid[:, 1:] = nv + np.arange(nr * K).reshape(nr, K)
        nv += nr * K
        i0 = np.repeat(np.arange(nr), K)
        k0 = np.tile(np.arange(K), nr)
        i1 = (i0 + 1) % nr
        l0 = lift[i0]
        l1 = lift[i0 + 1]
        Fs.append(np.c_[vid[i0, k0], vid[i1, k0], vid[i0, k0 + 1]])
        Ls.append(np.c_[l0, l1, l0])
        Fs.append(np.c_[vid[i1, k0], vid[i1, k0 + 1], vid[i0, k0 + 1]])
        Ls.append(np.c_[l1, l1, l0])
    return np.vstack(Ps), np.vstack(Fs), np.vstack(Ls)


def scherk_model_mesh(m: int = 1, res: int = 32, half_width: float = 5.0) -> SurfaceMesh:
    """Scherk tower sin z = sinh x sinh y over |x|, |y| <= half_width, one z-period [-pi, pi).

    res counts lattice cells across the neck. For m > 1 the tower is scaled uniformly by 1/m,
    so m necks fit in one z-period 2*pi and vertices satisfy sin(m z) = sinh(m x) sinh(m y).
    """
    m = int(m)
    if m < 1:
        raise MeshError("m must be >= 1")
    if res < 16:
        raise MeshError(f"res={res} too coarse to resolve the neck (need >= 16)")
    n = int(res) // 2
    P1, F1, L1 = _pillow_raw(n, half_width * m)
    Ps, Fs, Zs = [], [], []
    for j in range(m):
        Q = P1 / m
        Q[:, 2] += 2 * math.pi * j / m
        Ps.append(Q)
        # a corner lifted by one model period lands in the neighbouring copy
        jj = j + L1
        Fs.append(F1 + np.mod(jj, m) * len(P1))
        Zs.append(np.floor_divide(jj, m))
    mesh = assemble(np.vstack(Ps), np.vstack(Fs), np.vstack(Zs), z_period=2 * math.pi, z_lo=-math.pi,
                    weld_tol=1e-9)
    mesh.meta.update({"kind": "scherk_model", "m": m, "res": int(res), "half_width": float(half_width),
                      "scale": 1.0 / m})
    return mesh


# ---------------------------------------------------------------- gluing


@dataclass
class NodePlan:
    node: int
    m: int
    tau_k: float
    point: list
    t1: list
    t2: list
    r_in: float
    r_out: float
    columns: int  # chart columns per wing up to the wing end
    chart_rows: int
    profile: str = "quintic"


@dataclass
class GluingPlan:
    tau: float
    rows: int
    dz: float
    ray_length: float
    nodes: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


def _wedge_frame(tet):
    t1 = tet[2] - tet[0]
    t2 = tet[3] - tet[1]
    t1 = t1 / np.linalg.norm(t1)
    t2 = t2 / np.linalg.norm(t2)
    ang = math.acos(max(-1.0, min(1.0, float(t1 @ t2))))
    if abs(ang - math.pi / 2) > math.radians(30):
        raise GluingError(f"wedge angle {math.degrees(ang):.2f} deg deviates from 90 by more than 30")
    if t1[0] * t2[1] - t1[1] * t2[0] <= 0:
        raise GluingError("tetrad frame is not positively oriented")
    return t1, t2


def _arm_curves(flex: FlexibleConfiguration):
    """(node, arm) -> (curve in the node frame, arc index, a-shift of the node in the arc frame)."""
    out = {}
    for ai, arc in enumerate(flex.arcs):
        for end, arm in ((arc.start, arc.start_arm), (arc.end, arc.end_arm)):
            if end is None:
                continue
            k, t = end
            g = arc.curve.shifted(-t * flex.config.period[0], -t * flex.config.period[1])
            out[(k, arm)] = (g, ai, t)
    return out


def _arc_length(g: GrimReaperCurve, x0, x1):
    return float(abs(g.arclength(x1) - g.arclength(x0)))


def _graph_radius(g: GrimReaperCurve, p, v, t1, t2, idx):
    """Largest oblique distance reached monotonically by the arm before it turns back."""
    axis = 0 if idx in (0, 2) else 1
    Ai = np.linalg.inv(np.c_[t1, t2])
    lo, hi = g.slab
    x_end = hi if v[0] > 0 else lo
    x = p[0] + (x_end - p[0]) * (1 - np.geomspace(1, 1e-6, 4000))
    q = np.c_[x, g.y(x)] - np.asarray(p)
    s = np.abs((q @ Ai.T)[:, axis])
    ds = np.diff(s)
    stop = np.nonzero(ds <= 0)[0]
    return float(s[stop[0]] if len(stop) else s[-1])


def _nearest_node_distance(flex: FlexibleConfiguration):
    """Planar distance from each node to the nearest other node or period translate."""
    a = np.asarray(flex.config.a, float)
    pts = np.array([nd.point for nd in flex.nodes], float).reshape(-1, 2)
    out = np.full(len(pts), math.inf)
    for s in range(-2, 3):
        Q = pts + s * a
        D = np.linalg.norm(pts[:, None, :] - Q[None, :, :], axis=-1)
        if s == 0:
            D[np.diag_indices(len(pts))] = math.inf
        out = np.minimum(out, D.min(1))
    return out


def plan_gluing(flex: FlexibleConfiguration, tau: float, m=1, res: int = 16, ray_length=None) -> GluingPlan:
    if not (tau > 0):
        raise GluingError("tau must be positive")
    nn = len(flex.nodes)
    ms = [int(m)] * nn if np.isscalar(m) else [int(v) for v in m]
    if len(ms) != nn or min(ms) < 1:
        raise GluingError("m must be a positive integer per node")
    res = int(res)
    if res < 8:
        raise GluingError("res must be >= 8")
    res += (-res) % 4
    L = int(np.lcm.reduce(ms))
    R = res * L
    dz = 2 * math.pi * tau / R
    near = _nearest_node_distance(flex)
    arms = _arm_curves(flex)
    plans = []
    max_rout = 0.0
    for nd in flex.nodes:
        mk = ms[nd.id]
        tk = tau / mk
        t1, t2 = _wedge_frame(nd.tetrad)
        r_in = max(1.2 * math.sqrt(tau), 3.0 * tk)
        r_out = 2.0 * math.sqrt(tau)
        # blend disks of distinct nodes (and of a node and its translates) stay apart
        r_out = min(r_out, 0.45 * near[nd.id])
        for idx in range(4):
            g, ai, t = arms[(nd.id, idx)]
            arc = flex.arcs[ai]
            if not arc.is_ray:
                lam = _arc_length(arc.curve, arc.x_lo, arc.x_hi)
                r_out = min(r_out, lam / 4)
            # the arm must stay a graph over its oblique axis across the blend band
            r_out = min(r_out, 0.85 * _graph_radius(g, nd.point, nd.tetrad[idx], t1, t2, idx))
        if r_out <= 1.2 * r_in:
            raise ClearanceError(f"node {nd.id}: r_out={r_out:.4g} leaves no transition band over "
                                 f"r_in={r_in:.4g}; reduce tau")
        Nk = R // mk
        h = 2 * math.pi / Nk
        dc = math.sqrt(3) / 2 * h
        J0 = int(math.ceil((r_out * 1.02 / tk - LN2) / dc)) + 1
        plans.append(NodePlan(nd.id, mk, tk, [float(v) for v in nd.point], t1.tolist(), t2.tolist(),
                              r_in, r_out, J0, Nk))
        max_rout = max(max_rout, r_out)
    if ray_length is None:
        ray_length = max(1.5, 2 * max_rout + 0.5)
    if ray_length <= max_rout + 4 * dz:
        raise ClearanceError("ray_length must exceed r_out")
    return GluingPlan(float(tau), R, dz, float(ray_length), plans)


def _chart_w(Zc, Zs, sheet):
    xi = Zc + 1j * Zs
    q = -1j * np.tan(xi / 2)
    w = np.exp(1j * math.pi / 4) * np.sqrt(-1j * q)
    return w if sheet == 0 else -w


class _Builder:
    def __init__(self, flex: FlexibleConfiguration, plan: GluingPlan):
        self.flex = flex
        self.plan = plan
        self.pos = []
        self.n = 0
        self.fv, self.fz, self.fa = [], [], []
        self.arms = _arm_curves(flex)
        self.wing_end = {}  # (node, arm) -> (ids, parity, sigma0)

    def add(self, P):
        ids = np.arange(self.n, self.n + len(P))
        self.pos.append(P)
        self.n += len(P)
        return ids

    def faces(self, colA, pa, colB, ta=0, tb=0):
        fv, fz = strip_faces(colA, pa, colB, self.plan.rows)
        fa = np.where(np.isin(fv, np.asarray(colB)), tb, ta)
        self.fv.append(fv)
        self.fz.append(fz)
        self.fa.append(fa)

    # -- blending of one node

    def _curve_at_oblique(self, npl, g, s, axis):
        """Point of g whose oblique coordinate along `axis` equals s, plus its transverse coordinate."""
        p = np.array(npl.point)
        A = np.c_[npl.t1, npl.t2]
        Ai = np.linalg.inv(A)
        lo, hi = g.slab
        x = np.full_like(s, p[0])
        for _ in range(60):
            u = x - g.b
            q = np.stack([x, -np.log(np.cos(u)) + g.c], -1) - p
            ob = q @ Ai.T
            dq = np.stack([np.ones_like(x), np.tan(u)], -1) @ Ai.T
            step = (ob[..., axis] - s) / dq[..., axis]
            x = np.clip(x - step, lo + 1e-12, hi - 1e-12)
            if np.all(np.abs(step) < 1e-15 * (1 + np.abs(x))):
                break
        q = np.stack([x, g.y(x)], -1)
        ob = (q - p) @ Ai.T
        return q, ob[..., 1 - axis]

    def place(self, npl: NodePlan, X, Y, z):
        """Model (X, Y) at scale tau_k -> blended physical positions."""
        tk = npl.tau_k
        p = np.array(npl.point)
        t1 = np.array(npl.t1)
        t2 = np.array(npl.t2)
        Xs, Ys = tk * X, tk * Y
        out = p + Xs[:, None] * t1 + Ys[:, None] * t2
        onx = np.abs(X) >= np.abs(Y)
        for axis, mask_axis in ((0, onx), (1, ~onx)):
            s_all = Xs if axis == 0 else Ys
            tr_all = Ys if axis == 0 else Xs
            for sign, arm in ((1, 2 if axis == 0 else 3), (-1, 0 if axis == 0 else 1)):
                sel = mask_axis & (np.sign(s_all) == sign)
                r = np.abs(s_all[sel])
                chi = quintic((r - npl.r_in) / (npl.r_out - npl.r_in))
                blend = chi > 0
                if not np.any(blend):
                    continue
                ids = np.nonzero(sel)[0][blend]
                g = self.arms[(npl.node, arm)][0]
                q, F = self._curve_at_oblique(npl, g, s_all[ids], axis)
                c = chi[blend]
                tr = (1 - c) * tr_all[ids] + c * F
                if axis == 0:
                    pt = p + s_all[ids][:, None] * t1 + tr[:, None] * t2
                else:
                    pt = p + tr[:, None] * t1 + s_all[ids][:, None] * t2
                full = c >= 1.0
                pt[full] = q[full]
                out[ids] = pt
        return np.c_[out, z]

    def core(self, npl: NodePlan):
        cols = self.chart(npl)
        J0 = npl.columns
        # wing ends: (sheet, side) -> arm
        for (sheet, side), arm in (((0, 1), 2), ((0, -1), 1), ((1, 1), 0), ((1, -1), 3)):
            ids = cols[(sheet, side * J0)][0]
            g0 = self.arms[(npl.node, arm)][0]
            P = self._positions(ids)
            sig = np.abs(g0.arclength(P[:, 0]) - g0.arclength(npl.point[0]))
            self.wing_end[(npl.node, arm)] = (ids, J0 % 2, float(np.median(sig)))

    def chart(self, npl: NodePlan):
        """Conformal height chart of the tower: columns j in [-J0, J0] on both sheets."""
        R = self.plan.rows
        Nk = npl.chart_rows
        h = 2 * math.pi / Nk
        dc = math.sqrt(3) / 2 * h
        J0 = npl.columns
        g = np.arange(R)
        cols = {}
        for sheet in (0, 1):
            for j in range(-J0, J0 + 1):
                par = j % 2
                kc = g - R // 2 + Nk // 4
                kr = np.mod(kc, Nk)
                Zc = (kr + par / 2) * h
                z = (g - R / 2 + par / 2) * self.plan.dz
                views = {}
                sides = (-1, 1) if j == 0 else (0,)
                for side in sides:
                    Zs = np.full(R, j * dc) if side == 0 else np.full(R, side * 1e-30)
                    if j == 0:
                        Zs = np.where(kr <= Nk // 2, side * 1e-30, 0.0)
                    w = _chart_w(Zc, Zs, sheet)
                    if j == 0:
                        w = np.where((kr == Nk // 2), np.inf, w)
                    X, Y, _ = scherk_from_w(w)
                    P = self.place(npl, X, Y, z)
                    views[side] = self.add(P)
                cols[(sheet, j)] = views
        for sheet in (0, 1):
            for j in range(-J0, J0):
                a = cols[(sheet, j)]
                b = cols[(sheet, j + 1)]
                colA = a[1] if j == 0 else a[0]
                colB = b[-1] if j + 1 == 0 else b[0]
                self.faces(colA, j % 2, colB)
        return cols

    def _positions(self, ids):
        allp = np.vstack(self.pos)
        return allp[ids]

    def _regions(self, xy):
        """Planar distance to the nearest node and zone code (0 core, 1 blend, 2 reaper).

        Zones use the blend coordinate of the nearest node: the larger oblique coordinate.
        """
        a = self.flex.config.a
        d = np.full(len(xy), np.inf)
        zone = np.full(len(xy), 2)
        for npl in self.plan.nodes:
            Ai = np.linalg.inv(np.c_[npl.t1, npl.t2])
            for t in range(-2, 3):
                rel = xy - (np.asarray(npl.point) + t * a)
                dn = np.linalg.norm(rel, axis=1)
                s = np.abs(rel @ Ai.T).max(1)
                z = np.where(s < npl.r_in, 0, np.where(s < npl.r_out, 1, 2))
                closer = dn < d
                d = np.where(closer, dn, d)
                zone = np.where(closer, z, zone)
        return d, zone

    def strip_columns(self, g, x_of_sigma, sigmas, parity0):
        R = self.plan.rows
        cols = []
        for c, sg in enumerate(sigmas):
            par = (parity0 + c) % 2
            x = x_of_sigma(sg)
            z = (np.arange(R) - R / 2 + par / 2) * self.plan.dz
            P = np.c_[np.full(R, x), np.full(R, float(g.y(x))), z]
            cols.append(self.add(P))
        return cols

    def edge(self, arc):
        (kA, tA), (kB, tB) = arc.start, arc.end
        idsA, parA, sA = self.wing_end[(kA, arc.start_arm)]
        idsB, parB, sB = self.wing_end[(kB, arc.end_arm)]
        g = arc.curve
        lam = _arc_length(g, arc.x_lo, arc.x_hi)
        ds = math.sqrt(3) / 2 * self.plan.dz
        span = lam - sA - sB
        C = max(1, int(round(span / ds)))
        if (parA + C) % 2 != parB:
            C += 1 if C * ds < span or C == 1 else -1
        if span < 0.5 * ds or C < 1:
            raise ClearanceError("arc too short for the two wing ends")
        s0 = g.arclength(arc.x_lo)
        sig = sA + span * np.arange(1, C) / C
        cols = self.strip_columns(g, lambda sg: float(g.x_at_arclength(s0 + sg)), sig, (parA + 1) % 2)
        chain = [(idsA, parA, tA)] + [(c, (parA + 1 + i) % 2, 0) for i, c in enumerate(cols)] + [(idsB, parB, tB)]
        for (ca, pa, ta), (cb, pb, tb) in zip(chain[:-1], chain[1:]):
            self.faces(ca, pa, cb, ta, tb)

    def ray(self, arc):
        end = arc.start if arc.start is not None else arc.end
        arm = arc.start_arm if arc.start is not None else arc.end_arm
        k, t = end
        ids, par, s0w = self.wing_end[(k, arm)]
        g = arc.curve
        d = 1 if arc.start is not None else -1
        xn = arc.x_lo if d > 0 else arc.x_hi
        sn = float(g.arclength(xn))
        ds = math.sqrt(3) / 2 * self.plan.dz
        C = int(math.ceil((self.plan.ray_length - s0w) / ds))
        if C < 1:
            raise ClearanceError("ray_length shorter than the wing end")
        sig = s0w + ds * np.arange(1, C + 1)
        cols = self.strip_columns(g, lambda sg: float(g.x_at_arclength(sn + d * sg)), sig, (par + 1) % 2)
        chain = [(ids, par, t)] + [(c, (par + 1 + i) % 2, t) for i, c in enumerate(cols)]
        for (ca, pa, ta), (cb, pb, tb) in zip(chain[:-1], chain[1:]):
            self.faces(ca, pa, cb, ta, tb)


def build_initial_surface(flex: FlexibleConfiguration, tau: float, m=1, res: int = 16,
                          ray_length=None, check_quality: bool = True) -> SurfaceMesh:
    plan = plan_gluing(flex, tau, m, res, ray_length)
    b = _Builder(flex, plan)
    for npl in plan.nodes:
        b.core(npl)
    for arc in flex.arcs:
        if arc.start is None and arc.end is None:
            raise GluingError("curves without intersection nodes are not supported")
        if arc.is_ray:
            b.ray(arc)
        else:
            b.edge(arc)
    P = np.vstack(b.pos)
    ax, ay = flex.config.period
    mesh = assemble(P, np.vstack(b.fv), np.vstack(b.fz), np.vstack(b.fa), z_period=2 * math.pi * tau,
                    a_vec=np.array([ax, ay]), z_lo=-math.pi * tau, weld_tol=1e-9, mirror=True)
    d, region = b._regions(mesh.vertices[:, :2])
    # a vertex belongs to the core or reaper region only if its whole star does,
    # since the discrete operators at a vertex see its one-ring
    fr = region[mesh.faces]
    mixed = mesh.faces[(fr != fr[:, :1]).any(1)].ravel()
    region[mixed] = 1
    mesh.fields["node_distance"] = d
    mesh.fields["region"] = region
    mesh.meta.update({"kind": "initial_surface", "plan": plan.to_dict()})
    if check_quality:
        mesh.check_quality(5.0)
    return mesh
