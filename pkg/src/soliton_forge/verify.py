"""Soliton residual, convergence proxies and area growth."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import integrate, stats
from scipy.spatial import cKDTree
from scipy.stats import qmc

from .discrete import QuotientGeometry, vertex_fields
from .flexibility import FlexibleConfiguration
from .mesh import MeshError, SurfaceMesh
from .planar import GrimReaperCurve, PeriodicConfiguration

REGION_NAMES = ("core", "transition", "reaper")


class VerifyError(ValueError):
    pass


# ---------------------------------------------------------------- residual

@dataclass
class ResidualReport:
    residual: np.ndarray  # per open vertex
    H: np.ndarray
    normal: np.ndarray
    area: np.ndarray  # mixed area per open vertex (copies share the rep's value)
    interior: np.ndarray  # False on free boundary vertices
    masks: dict = field(default_factory=dict)
    sup: float = 0.0
    l2: float = 0.0
    region_sup: dict = field(default_factory=dict)
    region_max_H: dict = field(default_factory=dict)

    def to_dict(self, fields=False):
        out = {
            "sup": self.sup,
            "l2": self.l2,
            "n_vertices": int(len(self.residual)),
            "n_interior": int(self.interior.sum()),
            "region_sup": dict(self.region_sup),
            "region_max_H": dict(self.region_max_H),
            "region_counts": {k: int(v.sum()) for k, v in self.masks.items()},
        }
        if fields:
            out["residual"] = self.residual.tolist()
            out["H"] = self.H.tolist()
            out["masks"] = {k: np.nonzero(v)[0].tolist() for k, v in self.masks.items()}
        return out


def _region_masks(mesh: SurfaceMesh):
    reg = mesh.fields.get("region")
    if reg is None:
        return {}
    reg = np.asarray(reg)
    return {name: reg == i for i, name in enumerate(REGION_NAMES)}


def soliton_residual(mesh: SurfaceMesh, check_quality=True) -> ResidualReport:
    """Residual H - e_y.nu with the cotangent Laplacian on the quotient surface."""
    if check_quality:
        mesh.check_quality()
    qg = QuotientGeometry.from_mesh(mesh)
    X = qg.rep_positions(mesh)
    fl = vertex_fields(X, qg)
    if not np.all(np.isfinite(fl["residual"][qg.interior])):
        raise MeshError("non-finite discrete curvature (degenerate star)")
    s = qg.vid_to_rep
    res = fl["residual"][s]
    H = fl["H"][s]
    interior = qg.interior[s]
    masks = _region_masks(mesh)
    # norms on the quotient: each rep once
    ri = qg.interior
    r = fl["residual"][ri]
    sup = float(np.max(np.abs(r))) if len(r) else 0.0
    l2 = float(math.sqrt(np.sum(r * r * fl["area"][ri])))
    rep_sel = np.zeros(mesh.n_vertices, bool)
    rep_sel[qg.reps] = True
    region_sup, region_H = {}, {}
    for name, msk in masks.items():
        sel = msk & interior & rep_sel
        region_sup[name] = float(np.max(np.abs(res[sel]))) if sel.any() else 0.0
        region_H[name] = float(np.max(np.abs(H[sel]))) if sel.any() else 0.0
    return ResidualReport(res, H, fl["normal"][s], fl["area"][s], interior, masks, sup, l2,
                          region_sup, region_H)


# ---------------------------------------------------------------- geometry helpers

def _curve_xy(g: GrimReaperCurve, s):
    return g.b + np.arctan(np.sinh(s)), g.c + np.log(np.cosh(s))


def curve_distance(g: GrimReaperCurve, P, s_lo=-np.inf, s_hi=np.inf, iters=40):
    """Planar distance from points P (k,2) to the arc of g with arclength in [s_lo, s_hi]."""
    P = np.asarray(P, float).reshape(-1, 2)
    px, py = P[:, 0], P[:, 1]
    u = np.clip(px - g.b, -math.pi / 2 + 1e-12, math.pi / 2 - 1e-12)
    cand = [np.arcsinh(np.tan(u))]
    t = np.maximum(py - g.c, 0.0)
    sy = np.arccosh(np.exp(np.minimum(t, 700)))
    cand += [sy, -sy]
    best_s = None
    best_d = np.full(len(P), np.inf)
    for s in cand:
        s = np.clip(s, s_lo, s_hi)
        for _ in range(iters):
            x, y = _curve_xy(g, s)
            ch = np.cosh(s)
            th = np.tanh(s)
            dx, dy = x - px, y - py
            g1 = dx / ch + dy * th
            g2 = 1.0 - dx * th / ch + dy / ch ** 2
            step = np.where(g2 > 0.1, g1 / np.maximum(g2, 0.1), g1)
            s = np.clip(s - np.clip(step, -1.0, 1.0), s_lo, s_hi)
        x, y = _curve_xy(g, s)
        d = np.hypot(x - px, y - py)
        better = d < best_d
        best_d = np.where(better, d, best_d)
        best_s = s if best_s is None else np.where(better, s, best_s)
    return best_d, best_s


def _arc_s_range(arc):
    g = arc.curve
    return float(g.arclength(arc.x_lo)), float(g.arclength(arc.x_hi))


def _node_points(flex: FlexibleConfiguration, shifts=(-1, 0, 1)):
    a = np.asarray(flex.config.a, float)
    pts = np.array([nd.point for nd in flex.nodes], float).reshape(-1, 2)
    return np.concatenate([pts + s * a for s in shifts]) if len(pts) else pts


def _dist_to_nodes(P, nodes):
    if len(nodes) == 0:
        return np.full(len(P), np.inf)
    d, _ = cKDTree(nodes).query(P)
    return d


def point_triangle_distance(Q, A, B, C):
    """Distances from points Q (k,3) to triangles (A,B,C) (k,3) each, pairwise."""
    ab, ac, ap = B - A, C - A, Q - A
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = Q - B
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = Q - C
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2
    den = va + vb + vc
    den = np.where(den == 0, 1e-300, den)
    v = vb / den
    w = vc / den
    R = A + v[:, None] * ab + w[:, None] * ac
    # edge and vertex regions, later conditions take priority
    with np.errstate(divide="ignore", invalid="ignore"):
        bc_t = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        m = (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0)
        R = np.where(m[:, None], B + bc_t[:, None] * (C - B), R)
        m = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
        t = d2 / (d2 - d6)
        R = np.where(m[:, None], A + t[:, None] * ac, R)
        m = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
        t = d1 / (d1 - d3)
        R = np.where(m[:, None], A + t[:, None] * ab, R)
    R = np.where(((d6 >= 0) & (d5 <= d6))[:, None], C, R)
    R = np.where(((d3 >= 0) & (d4 <= d3))[:, None], B, R)
    R = np.where(((d1 <= 0) & (d2 <= 0))[:, None], A, R)
    return np.linalg.norm(Q - R, axis=1)


class MeshDistance:
    """Distance queries to a periodic mesh (tiled by +-1 period in z and along a)."""

    def __init__(self, mesh: SurfaceMesh, k=8):
        V, F = mesh.vertices, mesh.faces
        shifts = [np.array([0.0, 0.0, kz * mesh.z_period]) for kz in (-1, 0, 1)]
        if mesh.a_vec is not None:
            a = np.array([mesh.a_vec[0], mesh.a_vec[1], 0.0])
            shifts = [s + ka * a for s in shifts for ka in (-1, 0, 1)]
        nV = len(V)
        self.V = np.concatenate([V + s for s in shifts])
        self.F = np.concatenate([F + i * nV for i in range(len(shifts))])
        nf = len(self.F)
        vf = np.repeat(np.arange(nf), 3)
        order = np.argsort(self.F.ravel(), kind="stable")
        cnt = np.bincount(self.F.ravel(), minlength=len(self.V))
        self.start = np.r_[0, np.cumsum(cnt)]
        self.vf = vf[order]
        self.maxdeg = int(cnt.max())
        self.tree = cKDTree(self.V)
        self.k = k

    def __call__(self, Q):
        Q = np.asarray(Q, float)
        _, idx = self.tree.query(Q, k=self.k)
        best = np.full(len(Q), np.inf)
        for c in range(self.k):
            vi = idx[:, c]
            for j in range(self.maxdeg):
                pos = self.start[vi] + j
                ok = pos < self.start[vi + 1]
                if not ok.any():
                    continue
                fi = self.vf[pos[ok]]
                T = self.V[self.F[fi]]
                d = point_triangle_distance(Q[ok], T[:, 0], T[:, 1], T[:, 2])
                best[ok] = np.minimum(best[ok], d)
        return best


def sample_mesh(mesh: SurfaceMesh, n: int, seed=0):
    """Deterministic low-discrepancy area samples on the mesh faces."""
    P = mesh.corner_positions()
    area = 0.5 * np.linalg.norm(np.cross(P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]), axis=1)
    cdf = np.cumsum(area)
    cdf /= cdf[-1]
    U = qmc.Halton(d=3, scramble=False).random(n + 1)[1:]
    fi = np.minimum(np.searchsorted(cdf, U[:, 0]), len(P) - 1)
    r1 = np.sqrt(U[:, 1])
    b0, b1 = 1 - r1, r1 * (1 - U[:, 2])
    b2 = r1 * U[:, 2]
    T = P[fi]
    return b0[:, None] * T[:, 0] + b1[:, None] * T[:, 1] + b2[:, None] * T[:, 2]


def _shifted_arcs(flex: FlexibleConfiguration, shifts=(-1, 0, 1)):
    a = np.asarray(flex.config.a, float)
    out = []
    for arc in flex.arcs:
        s_lo, s_hi = _arc_s_range(arc)
        for k in shifts:
            out.append((arc.curve.shifted(k * a[0], k * a[1]) if k else arc.curve, s_lo, s_hi))
    return out


def hausdorff_to_cylinder(mesh: SurfaceMesh, flex: FlexibleConfiguration, d_far=0.25,
                          n_samples=10_000, ray_margin=0.05):
    """Two-sided sampled Hausdorff distance between mesh and G x R away from the nodes."""
    nodes = _node_points(flex)
    # mesh -> G
    S = sample_mesh(mesh, n_samples)
    keep = _dist_to_nodes(S[:, :2], nodes) >= d_far
    S = S[keep]
    d1 = np.full(len(S), np.inf)
    for g, s_lo, s_hi in _shifted_arcs(flex):
        d, _ = curve_distance(g, S[:, :2], s_lo, s_hi)
        d1 = np.minimum(d1, d)
    # G -> mesh, restricted to the part of G the mesh covers
    ray_len = mesh.meta.get("plan", {}).get("ray_length", np.inf)
    segs = []
    for arc in flex.arcs:
        s_lo, s_hi = _arc_s_range(arc)
        if arc.is_ray:
            # rays are meshed up to ray_length of arclength from their node
            if arc.start is not None:
                s_hi = s_lo + (ray_len - ray_margin)
            else:
                s_lo = s_hi - (ray_len - ray_margin)
        segs.append((arc.curve, s_lo, s_hi))
    lens = np.array([hi - lo for _, lo, hi in segs])
    cdf = np.cumsum(lens) / lens.sum()
    U = qmc.Halton(d=2, scramble=False).random(n_samples + 1)[1:]
    which = np.minimum(np.searchsorted(cdf, U[:, 0]), len(segs) - 1)
    lo_c = np.r_[0.0, cdf[:-1]]
    frac = (U[:, 0] - lo_c[which]) / (cdf[which] - lo_c[which])
    Q = np.zeros((n_samples, 3))
    for i, (g, lo, hi) in enumerate(segs):
        sel = which == i
        x, y = _curve_xy(g, lo + frac[sel] * (hi - lo))
        Q[sel, 0], Q[sel, 1] = x, y
    z_lo = mesh.meta.get("z_lo", -0.5 * mesh.z_period)
    Q[:, 2] = z_lo + U[:, 1] * mesh.z_period
    Q = Q[_dist_to_nodes(Q[:, :2], nodes) >= d_far]
    d2 = MeshDistance(mesh)(Q)
    return {
        "hausdorff": float(max(d1.max(initial=0.0), d2.max(initial=0.0))),
        "mesh_to_G": float(d1.max(initial=0.0)),
        "G_to_mesh": float(d2.max(initial=0.0)),
        "n_mesh_samples": int(len(S)),
        "n_curve_samples": int(len(Q)),
    }


def scherk_project(P, iters=80, max_step=0.25):
    """Distance from points (k,3) to sin z = sinh x sinh y by damped Newton projection."""
    P = np.asarray(P, float)
    p = P.copy()
    for _ in range(iters):
        x, y, z = p.T
        phi = np.sin(z) - np.sinh(x) * np.sinh(y)
        grad = np.c_[-np.cosh(x) * np.sinh(y), -np.sinh(x) * np.cosh(y), np.cos(z)]
        g2 = np.einsum("ij,ij->i", grad, grad)
        step = (phi / np.maximum(g2, 1e-300))[:, None] * grad
        n = np.linalg.norm(step, axis=1)
        step *= np.minimum(1.0, max_step / np.maximum(n, 1e-300))[:, None]
        p = p - step
    return np.linalg.norm(p - P, axis=1)


def blowup_distance(mesh: SurfaceMesh, rho=6.0):
    """Max distance of the node blow-ups to the model tower over the model box |X|,|Y| <= rho."""
    plan = mesh.meta.get("plan")
    if not plan:
        raise VerifyError("mesh carries no gluing plan")
    V = mesh.vertices
    out = []
    for npl in plan["nodes"]:
        Ai = np.linalg.inv(np.c_[npl["t1"], npl["t2"]])
        tk = npl["tau_k"]
        XY = (V[:, :2] - np.asarray(npl["point"])) @ Ai.T / tk
        sel = (np.abs(XY[:, 0]) <= rho) & (np.abs(XY[:, 1]) <= rho)
        if not sel.any():
            out.append(0.0)
            continue
        Pm = np.c_[XY[sel], V[sel, 2] / tk + math.pi / 2]
        out.append(float(scherk_project(Pm).max()))
    return out


def convergence_report(flex: FlexibleConfiguration, taus: Sequence[float], m=1, res=16,
                       d_far=0.25, rho=6.0, n_samples=10_000, builder_kw=None):
    from .surface import build_initial_surface
    taus = [float(t) for t in taus]
    if any(b >= a for a, b in zip(taus, taus[1:])):
        raise VerifyError("taus must be strictly decreasing")
    rows = []
    for tau in taus:
        mesh = build_initial_surface(flex, tau, m, res, **(builder_kw or {}))
        hd = hausdorff_to_cylinder(mesh, flex, d_far, n_samples)
        bd = blowup_distance(mesh, rho)
        rep = soliton_residual(mesh, check_quality=False)
        rows.append({"tau": tau, **hd, "blowup": max(bd) if bd else 0.0, "blowup_per_node": bd,
                     "residual_sup": rep.sup, "region_sup": rep.region_sup,
                     "region_max_H": rep.region_max_H, "n_vertices": int(mesh.n_vertices)})

    def ratios(key):
        v = [r[key] for r in rows]
        return [b / a if a > 0 else math.nan for a, b in zip(v, v[1:])]

    return {"taus": taus, "d_far": d_far, "rho": rho, "rows": rows,
            "hausdorff_ratios": ratios("hausdorff"), "blowup_ratios": ratios("blowup")}


# ---------------------------------------------------------------- area growth

@dataclass
class GrowthReport:
    radii: np.ndarray
    areas: np.ndarray
    slope: float
    ci: tuple
    max_H_outside: Optional[np.ndarray] = None

    def to_dict(self):
        out = {"radii": self.radii.tolist(), "areas": self.areas.tolist(), "slope": self.slope,
               "ci95": list(self.ci)}
        if self.max_H_outside is not None:
            out["max_H_outside"] = self.max_H_outside.tolist()
        return out


def _strip_area(g: GrimReaperCurve, R, center):
    """Area of (curve x R) inside the ball B_R(center), by quadrature in arclength."""
    cx, cy, _ = center
    # the curve reaches height cy + R at arclength acosh(exp(cy + R - c))
    top = cy + R - g.c
    if top < 0 or abs(g.b - cx) > R + math.pi / 2:
        return 0.0
    S = float(np.arccosh(math.exp(min(top, 700.0)))) + 1e-9

    def rho2(s):
        x, y = _curve_xy(g, s)
        return (x - cx) ** 2 + (y - cy) ** 2

    grid = np.linspace(-S, S, 4001)
    inside = rho2(grid) < R * R
    if not inside.any():
        return 0.0
    # split into intervals where the integrand is positive and refine the clip points
    from scipy.optimize import brentq
    f = lambda s: rho2(s) - R * R
    edges = np.nonzero(np.diff(inside.astype(int)))[0]
    pts = [grid[0]] if inside[0] else []
    for e in edges:
        pts.append(brentq(f, grid[e], grid[e + 1], xtol=1e-14))
    if inside[-1]:
        pts.append(grid[-1])
    total = 0.0
    integrand = lambda s: 2.0 * math.sqrt(max(R * R - rho2(s), 0.0))
    for lo, hi in zip(pts[::2], pts[1::2]):
        val, _ = integrate.quad(integrand, lo, hi, limit=200, epsabs=1e-10, epsrel=1e-12)
        total += val
    return total


def _max_H_outside(g: GrimReaperCurve, R, center):
    cx, cy, _ = center
    if math.hypot(g.b - cx, g.c - cy) > R:
        return 1.0
    # H = 1/cosh(s) decreases away from the apex, so the sup is at the first exit
    f = lambda s: (lambda x, y: (x - cx) ** 2 + (y - cy) ** 2 - R * R)(*_curve_xy(g, s))
    from scipy.optimize import brentq
    best = 0.0
    for sgn in (1.0, -1.0):
        hi = 1.0
        while f(sgn * hi) < 0 and hi < 1e3:
            hi *= 2
        s = brentq(lambda t: f(sgn * t), 0.0, hi, xtol=1e-14)
        best = max(best, 1.0 / math.cosh(s))
    return best


def area_growth(source, radii=None, center=(0.0, 0.0, 0.0), min_copies=3) -> GrowthReport:
    """Area of the z-invariant surface inside B_R for each R, with a log-log slope fit.

    source: a PeriodicConfiguration (periodically extended), a GrimReaperCurve, or the
    string "plane" (the plane x = center_x).
    """
    radii = np.asarray(np.logspace(1, 2, 10) if radii is None else radii, float)
    if len(radii) < 2 or radii.max() / radii.min() < 10 - 1e-9:
        raise VerifyError("radii must span at least one decade")
    center = tuple(float(v) for v in center)
    areas, hmax = [], None
    if isinstance(source, str) and source == "plane":
        areas = math.pi * radii ** 2
    else:
        if isinstance(source, GrimReaperCurve):
            copies = lambda R: [source]
        elif isinstance(source, PeriodicConfiguration):
            ax, ay = source.period

            def copies(R):
                j_max = int(math.ceil((R + math.pi + abs(center[0])) / abs(ax))) + 1
                out = []
                for g in source.curves:
                    for j in range(-j_max, j_max + 1):
                        h = g.shifted(j * ax, j * ay)
                        if abs(h.b - center[0]) <= R + math.pi / 2 and h.c <= center[1] + R:
                            out.append(h)
                return out
            n_big = len({round((h.b - source.curves[0].b) / ax)
                         for h in copies(float(radii.max())) if _strip_area(h, radii.max(), center) > 0})
            if n_big < min_copies:
                raise VerifyError(f"only {n_big} period copies meet the largest ball; need {min_copies}")
        else:
            raise VerifyError(f"unsupported growth source {type(source).__name__}")
        hmax = []
        for R in radii:
            cs = copies(R)
            areas.append(sum(_strip_area(h, R, center) for h in cs))
            hmax.append(max((_max_H_outside(h, R, center) for h in cs), default=0.0))
        areas = np.asarray(areas)
        hmax = np.asarray(hmax)
    areas = np.asarray(areas, float)
    if np.any(np.diff(areas) < -1e-9 * areas[1:]):
        raise VerifyError("area is not monotone in R")
    lr = stats.linregress(np.log(radii), np.log(areas))
    t = stats.t.ppf(0.975, len(radii) - 2) if len(radii) > 2 else math.nan
    ci = (float(lr.slope - t * lr.stderr), float(lr.slope + t * lr.stderr))
    return GrowthReport(radii, areas, float(lr.slope), ci, hmax)


def mesh_area_in_ball(mesh: SurfaceMesh, R, center=(0.0, 0.0, 0.0), subdiv=4):
    """Area of the z-periodic mesh inside B_R, by centroid tests on subdivided faces."""
    c = np.asarray(center, float)
    P = mesh.corner_positions()
    kz = int(math.ceil((R + abs(c[2])) / mesh.z_period)) + 1
    # barycentric subdivision into subdiv^2 triangles
    tris = []
    for i in range(subdiv):
        for j in range(subdiv - i):
            tris.append(((i, j), (i + 1, j), (i, j + 1)))
            if i + j < subdiv - 1:
                tris.append(((i + 1, j), (i + 1, j + 1), (i, j + 1)))
    total = 0.0
    for k in range(-kz, kz + 1):
        Q = P + np.array([0.0, 0.0, k * mesh.z_period])
        for t in tris:
            pts = [Q[:, 0] + (a * (Q[:, 1] - Q[:, 0]) + b * (Q[:, 2] - Q[:, 0])) / subdiv for a, b in t]
            cen = (pts[0] + pts[1] + pts[2]) / 3
            ar = 0.5 * np.linalg.norm(np.cross(pts[1] - pts[0], pts[2] - pts[0]), axis=1)
            total += float(ar[np.linalg.norm(cen - c, axis=1) < R].sum())
    return total


__all__ = ["VerifyError", "ResidualReport", "soliton_residual", "convergence_report",
           "hausdorff_to_cylinder", "blowup_distance", "GrowthReport", "area_growth",
           "curve_distance", "point_triangle_distance", "MeshDistance", "sample_mesh",
           "scherk_project", "mesh_area_in_ball"]
