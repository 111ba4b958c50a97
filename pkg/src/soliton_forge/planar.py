"""Planar kernel for grim reaper curves y = -ln cos(x - b) + c."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

GEOM_TOL = 1e-9
HALF_PI = 0.5 * math.pi


class DomainError(ValueError):
    pass


class DegenerateError(ValueError):
    """Two curves touch without crossing, or coincide."""


class GeneralPositionError(ValueError):
    pass


@dataclass(frozen=True)
class GrimReaperCurve:
    b: float
    c: float = 0.0

    @property
    def slab(self):
        return (self.b - HALF_PI, self.b + HALF_PI)

    def contains(self, x, margin=0.0):
        return (x > self.b - HALF_PI + margin) & (x < self.b + HALF_PI - margin)

    def y(self, x):
        return -np.log(np.cos(np.asarray(x, dtype=float) - self.b)) + self.c

    def slope(self, x):
        return np.tan(np.asarray(x, dtype=float) - self.b)

    def arclength(self, x):
        # signed arc length from the apex
        return np.arcsinh(np.tan(np.asarray(x, dtype=float) - self.b))

    def x_at_arclength(self, s):
        return self.b + np.arctan(np.sinh(s))

    def shifted(self, dx, dy):
        return GrimReaperCurve(self.b + dx, self.c + dy)

    def to_dict(self):
        return {"b": float(self.b), "c": float(self.c)}


class ReaperPoint(NamedTuple):
    y: float
    tangent: np.ndarray
    normal: np.ndarray
    curvature: float


def reaper_point(curve: GrimReaperCurve, x: float) -> ReaperPoint:
    u = x - curve.b
    if not (-HALF_PI < u < HALF_PI) or not math.isfinite(u):
        raise DomainError(f"x={x} outside the open slab {curve.slab}")
    cu, su = math.cos(u), math.sin(u)
    if cu <= 0.0:
        raise DomainError(f"x={x} outside the open slab {curve.slab}")
    y = -math.log(cu) + curve.c
    return ReaperPoint(y, np.array([cu, su]), np.array([-su, cu]), cu)


def reaper_frame(curve: GrimReaperCurve, x):
    """Vectorized (y, tangent, normal, curvature); no domain checks."""
    u = np.asarray(x, dtype=float) - curve.b
    cu, su = np.cos(u), np.sin(u)
    y = -np.log(cu) + curve.c
    return y, np.stack([cu, su], -1), np.stack([-su, cu], -1), cu


def reaper_through(p, slope: float) -> GrimReaperCurve:
    px, py = float(p[0]), float(p[1])
    if not math.isfinite(slope):
        raise DomainError("vertical tangent: no grim reaper through this direction")
    b = px - math.atan(slope)
    return GrimReaperCurve(b, py + math.log(math.cos(px - b)))


def reaper_through_direction(p, d) -> GrimReaperCurve:
    """Curve through p tangent to direction d (either orientation)."""
    dx, dy = float(d[0]), float(d[1])
    if abs(dx) <= 1e-15 * max(1.0, abs(dy)):
        raise DomainError("vertical tangent: no grim reaper through this direction")
    px, py = float(p[0]), float(p[1])
    b = px - math.atan2(dy * math.copysign(1.0, dx), abs(dx))
    return GrimReaperCurve(b, py + math.log(math.cos(px - b)))


def _overlap(g1, g2):
    lo = max(g1.b, g2.b) - HALF_PI
    hi = min(g1.b, g2.b) + HALF_PI
    return lo, hi


def intersect_pair(g1: GrimReaperCurve, g2: GrimReaperCurve) -> Optional[np.ndarray]:
    """Unique crossing point of two curves, or None.

    The height difference is strictly monotone on the slab overlap, so there is
    at most one root; it solves A cos x + B sin x = 0.
    """
    if g1.b > g2.b or (g1.b == g2.b and g1.c > g2.c):
        g1, g2 = g2, g1  # symmetric evaluation order
    lo, hi = _overlap(g1, g2)
    if hi <= lo:
        return None
    if g1.b == g2.b:
        return None
    lam = math.exp(g1.c - g2.c)
    A = math.cos(g1.b) - lam * math.cos(g2.b)
    B = math.sin(g1.b) - lam * math.sin(g2.b)
    x0 = math.atan2(B, A) + HALF_PI
    # pick the root branch inside the overlap
    k = math.ceil((lo - x0) / math.pi)
    x = x0 + k * math.pi
    if not (lo < x < hi):
        return None
    # Newton polish on f(x) = y1 - y2; near a slab edge the closed form loses digits
    for _ in range(4):
        f = -math.log(math.cos(x - g1.b)) + math.log(math.cos(x - g2.b)) + g1.c - g2.c
        df = math.tan(x - g1.b) - math.tan(x - g2.b)
        if df == 0.0:
            break
        xn = x - f / df
        if not lo < xn < hi or xn == x:
            break
        x = xn
    return np.array([x, float(g1.y(x))])


def crossing_angle(g1: GrimReaperCurve, g2: GrimReaperCurve) -> float:
    # tangent angles are x - b, so the angle between them is |b1 - b2|
    return abs(g1.b - g2.b)


# ---------------------------------------------------------------- configurations


@dataclass(frozen=True)
class NodeMeta:
    m: int = 1
    theta: tuple = (0.0, 0.0)


@dataclass
class PeriodicConfiguration:
    curves: tuple
    period: tuple
    epsilon: float = 0.0
    node_meta: list = field(default_factory=list)

    def __post_init__(self):
        self.curves = tuple(
            c if isinstance(c, GrimReaperCurve) else GrimReaperCurve(*c) for c in self.curves
        )
        self.period = (float(self.period[0]), float(self.period[1]))
        if len(self.curves) < 1:
            raise ValueError("configuration needs at least one curve")
        if self.period[0] == 0.0:
            raise ValueError("period must have a_x != 0")
        if self.period[0] < 0.0:
            # normalize to the lattice generator with positive x-component
            self.period = (-self.period[0], -self.period[1])
        ax, ay = self.period
        seen = []
        for g in self.curves:
            for h in seen:
                t = (g.b - h.b) / ax
                j = round(t)
                if abs(t - j) * ax < GEOM_TOL and abs(g.c - h.c - j * ay) < GEOM_TOL:
                    raise ValueError("two curves of the same translation class")
            seen.append(g)

    @property
    def a(self):
        return np.array(self.period)

    def curve(self, n: int, shift: int = 0) -> GrimReaperCurve:
        g = self.curves[n]
        return g.shifted(shift * self.period[0], shift * self.period[1])

    @property
    def x0(self) -> float:
        return min(g.b for g in self.curves) - HALF_PI - 1e-3 * self.period[0]

    def to_dict(self):
        d = {
            "period": [self.period[0], self.period[1]],
            "epsilon": float(self.epsilon),
            "curves": [g.to_dict() for g in self.curves],
        }
        if self.node_meta:
            d["nodes"] = [{"m": int(nm.m), "theta": [float(nm.theta[0]), float(nm.theta[1])]}
                          for nm in self.node_meta]
        return d

    @classmethod
    def from_dict(cls, d):
        try:
            curves = [GrimReaperCurve(float(c["b"]), float(c.get("c", 0.0))) for c in d["curves"]]
            period = tuple(float(v) for v in d["period"])
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed configuration: {exc}") from exc
        if len(period) != 2:
            raise ValueError("period must have two components")
        meta = [NodeMeta(int(n.get("m", 1)), tuple(float(t) for t in n.get("theta", (0.0, 0.0))))
                for n in d.get("nodes", [])]
        return cls(tuple(curves), period, float(d.get("epsilon", 0.0)), meta)


@dataclass
class IntersectionNode:
    id: int
    point: np.ndarray
    curve_ids: tuple  # ((n, shift), (n', shift')) ordered as (L, G): L carries v1/v3
    tetrad: np.ndarray  # (4, 2)
    level: float = math.inf
    m: int = 1
    theta: tuple = (0.0, 0.0)

    def to_dict(self):
        return {
            "id": self.id,
            "point": [float(self.point[0]), float(self.point[1])],
            "curve_ids": [list(map(int, c)) for c in self.curve_ids],
            "tetrad": self.tetrad.tolist(),
            "level": None if math.isinf(self.level) else int(self.level),
            "m": int(self.m),
            "theta": [float(self.theta[0]), float(self.theta[1])],
        }


def ccw_from_ey(v) -> np.ndarray:
    """Counterclockwise angle from e_y, in [0, 2pi)."""
    v = np.asarray(v, dtype=float)
    return np.mod(np.arctan2(v[..., 1], v[..., 0]) - HALF_PI, 2 * math.pi)


def tetrad_at(g1: GrimReaperCurve, g2: GrimReaperCurve, x: float):
    """Ordered tetrad at a crossing; returns (tetrad, swapped) where swapped means g2 is L."""
    u1, u2 = x - g1.b, x - g2.b
    swapped = u2 < u1
    uL, uG = (u2, u1) if swapped else (u1, u2)
    tL = np.array([math.cos(uL), math.sin(uL)])
    tG = np.array([math.cos(uG), math.sin(uG)])
    return np.array([-tL, -tG, tL, tG]), swapped


def signed_angle(u, w) -> float:
    """Rotation angle taking w to u, in (-pi, pi]."""
    return math.atan2(w[0] * u[1] - w[1] * u[0], w[0] * u[0] + w[1] * u[1])


def _orbit_pairs(config: PeriodicConfiguration):
    ax = config.period[0]
    N = len(config.curves)
    for n in range(N):
        for n2 in range(n, N):
            d = config.curves[n].b - config.curves[n2].b
            jmax = int(math.ceil((abs(d) + math.pi) / ax)) + 1
            for j in range(-jmax, jmax + 1):
                if n == n2 and j <= 0:
                    continue
                if abs(d - j * ax) < math.pi:
                    yield n, n2, j


def enumerate_intersections(config: PeriodicConfiguration, x0: Optional[float] = None):
    ax, ay = config.period
    base = config.x0 if x0 is None else float(x0)
    for _attempt in range(8):
        nodes = []
        redo = False
        for n, n2, j in _orbit_pairs(config):
            g1 = config.curve(n, 0)
            g2 = config.curve(n2, j)
            p = intersect_pair(g1, g2)
            if p is None:
                continue
            if crossing_angle(g1, g2) < GEOM_TOL:
                raise DegenerateError(f"curves {n} and {n2}+{j}a are tangent")
            k = math.floor((p[0] - base) / ax)
            frac = p[0] - base - k * ax
            if frac < GEOM_TOL or ax - frac < GEOM_TOL:
                redo = True
                break
            p = p - k * np.array([ax, ay])
            ids = [(n, -k), (n2, j - k)]
            tet, swapped = tetrad_at(config.curve(*ids[0]), config.curve(*ids[1]), p[0])
            if swapped:
                ids = ids[::-1]
            nodes.append((p, tuple(ids), tet))
        if not redo:
            break
        base += 0.618e-3 * ax * (1 + _attempt)
    else:
        raise RuntimeError("could not find a generic fundamental-domain anchor")
    nodes.sort(key=lambda t: (t[0][0], t[0][1]))
    out = []
    for i, (p, ids, tet) in enumerate(nodes):
        meta = config.node_meta[i] if i < len(config.node_meta) else NodeMeta()
        out.append(IntersectionNode(i, p, ids, tet, math.inf, meta.m, tuple(meta.theta)))
    return out


# ---------------------------------------------------------------- general position


@dataclass
class GeneralPositionReport:
    plane_gap: float
    epsilon: float
    triples: list
    passed: bool

    def to_dict(self):
        return {"plane_gap": self.plane_gap, "epsilon": self.epsilon,
                "triples": self.triples, "passed": self.passed}


def plane_gap(config: PeriodicConfiguration) -> float:
    ax = config.period[0]
    planes = []
    for g in config.curves:
        planes += [g.b - HALF_PI, g.b + HALF_PI]
    planes = np.mod(np.array(planes), ax)
    gap = ax
    for i in range(len(planes)):
        for j in range(i + 1, len(planes)):
            d = abs(planes[i] - planes[j]) % ax
            gap = min(gap, d, ax - d)
    return float(gap)


def find_triples(config: PeriodicConfiguration, nodes=None, tol: float = GEOM_TOL):
    ax, ay = config.period
    if nodes is None:
        nodes = enumerate_intersections(config)
    triples = []
    for nd in nodes:
        x, y = nd.point
        owners = {tuple(c) for c in nd.curve_ids}
        for n, g in enumerate(config.curves):
            jlo = math.ceil((x - g.b - HALF_PI) / ax)
            jhi = math.floor((x - g.b + HALF_PI) / ax)
            for j in range(jlo - 1, jhi + 2):
                if (n, j) in owners:
                    continue
                h = config.curve(n, j)
                if not h.contains(x):
                    continue
                if abs(float(h.y(x)) - y) <= tol * (1 + abs(y)):
                    triples.append({"node": nd.id, "point": [float(x), float(y)],
                                    "curves": [list(c) for c in nd.curve_ids] + [[n, j]]})
    return triples


def check_general_position(config: PeriodicConfiguration) -> GeneralPositionReport:
    gap = plane_gap(config)
    try:
        triples = find_triples(config)
    except DegenerateError as exc:
        triples = [{"degenerate": str(exc)}]
    passed = gap >= config.epsilon and gap > GEOM_TOL and not triples
    return GeneralPositionReport(gap, float(config.epsilon), triples, bool(passed))


# ---------------------------------------------------------------- separation constants


@dataclass
class SeparationConstants:
    delta: float
    delta_gamma: float
    plane_gap: float

    def to_dict(self):
        return {"delta": self.delta, "delta_gamma": self.delta_gamma, "plane_gap": self.plane_gap}


def node_points_on_curves(config: PeriodicConfiguration, nodes):
    """For each base curve n, the abscissae (in its own frame) of every node it carries."""
    ax, ay = config.period
    pts = {n: [] for n in range(len(config.curves))}
    for nd in nodes:
        for n, s in nd.curve_ids:
            pts[n].append(nd.point[0] - s * ax)
    return pts


def separation_constants(config: PeriodicConfiguration) -> SeparationConstants:
    rep = check_general_position(config)
    if not rep.passed:
        raise GeneralPositionError(f"configuration not in general position: {rep.to_dict()}")
    nodes = enumerate_intersections(config)
    ey = np.array([0.0, 1.0])
    angles = []
    for nd in nodes:
        a = ccw_from_ey(nd.tetrad)
        ext = np.append(a, a[0] + 2 * math.pi)
        angles += list(np.diff(ext))
        for v in nd.tetrad:
            c = abs(float(v @ ey))
            angles.append(math.acos(min(1.0, c)))
    dg = min(angles) / 30.0 if angles else math.inf
    delta = math.inf
    for n, xs in node_points_on_curves(config, nodes).items():
        if len(xs) < 2:
            continue
        s = np.sort(config.curves[n].arclength(np.array(xs)))
        d = np.diff(s)
        if np.any(d <= GEOM_TOL):
            raise DegenerateError("two crossings coincide along a curve")
        delta = min(delta, 0.5 * float(d.min()))
    return SeparationConstants(delta, dg, rep.plane_gap)


# ---------------------------------------------------------------- lower envelope


@dataclass(frozen=True)
class Arc:
    """Piece of curve (n, shift) over the open/closed interval [x_lo, x_hi]."""
    n: int
    shift: int
    x_lo: float
    x_hi: float

    def is_ray(self, curve: GrimReaperCurve):
        lo, hi = curve.slab
        return self.x_lo <= lo + 1e-12 or self.x_hi >= hi - 1e-12


@dataclass
class Envelope:
    arcs: list
    curve_ids: frozenset
    x0: float
    period_x: float

    def key(self):
        return [(a.n, a.shift, round(a.x_lo, 9), round(a.x_hi, 9)) for a in self.arcs]


def _translates_over(config, subset, lo, hi):
    ax = config.period[0]
    out = []
    for n in sorted(subset):
        g = config.curves[n]
        jlo = math.floor((lo - g.b - HALF_PI) / ax)
        jhi = math.ceil((hi - g.b + HALF_PI) / ax)
        for j in range(jlo, jhi + 1):
            h = config.curve(n, j)
            a, b = h.slab
            if b > lo and a < hi:
                out.append((n, j, h))
    return out


def lower_envelope(config: PeriodicConfiguration, subset=None) -> Envelope:
    if subset is None:
        subset = range(len(config.curves))
    subset = frozenset(int(n) for n in subset)
    if not subset:
        raise ValueError("subset must be nonempty")
    ax = config.period[0]
    x0 = config.x0
    x1 = x0 + ax
    tr = _translates_over(config, subset, x0, x1)
    brk = {x0, x1}
    for _, _, h in tr:
        for e in h.slab:
            if x0 < e < x1:
                brk.add(e)
    for i in range(len(tr)):
        for k in range(i + 1, len(tr)):
            p = intersect_pair(tr[i][2], tr[k][2])
            if p is not None and x0 < p[0] < x1:
                brk.add(float(p[0]))
    brk = sorted(brk)
    pieces = []
    for a, b in zip(brk[:-1], brk[1:]):
        if b - a <= 1e-14:
            continue
        xm = 0.5 * (a + b)
        best = None
        for n, j, h in tr:
            if h.contains(xm):
                y = float(h.y(xm))
                if best is None or y < best[0]:
                    best = (y, n, j)
        if best is None:
            continue
        _, n, j = best
        if pieces and pieces[-1][0] == n and pieces[-1][1] == j and abs(pieces[-1][3] - a) < 1e-12:
            pieces[-1][3] = b
        else:
            pieces.append([n, j, a, b])
    # merge across the fundamental-domain seam
    if len(pieces) > 1:
        first, last = pieces[0], pieces[-1]
        if (first[0] == last[0] and last[1] == first[1] + 1 and abs(first[2] - x0) < 1e-12
                and abs(last[3] - x1) < 1e-12):
            first[2] = last[2] - ax
            pieces.pop()
    elif len(pieces) == 1:
        p = pieces[0]
        if abs(p[2] - x0) < 1e-12 and abs(p[3] - x1) < 1e-12:
            # one curve wraps the whole period; can only happen when it is the only one
            pass
    arcs = []
    for n, j, a, b in pieces:
        g = config.curve(n, j)
        lo, hi = g.slab
        # extend pieces reaching a slab edge to the full ray
        arcs.append(Arc(n, j, max(a, lo), min(b, hi)))
    ids = frozenset(a.n for a in arcs)
    return Envelope(arcs, ids, x0, ax)
