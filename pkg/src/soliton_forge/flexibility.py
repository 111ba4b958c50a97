"""Levels, tetrad unbalancing and the bottom-up perturbed configuration."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .planar import (GEOM_TOL, Arc, Envelope, GrimReaperCurve, PeriodicConfiguration,
                     ccw_from_ey, enumerate_intersections, intersect_pair, lower_envelope,
                     reaper_through_direction, signed_angle)

# rotation sign convention, recorded in serialized output
ROTATION_CONVENTION = "v1 = -R(+2*theta1) v3, v4 = -R(-2*theta2) v2, R counterclockwise"


class FlexibilityError(ValueError):
    pass


class OrderingError(FlexibilityError):
    pass


def rot(phi):
    c, s = math.cos(phi), math.sin(phi)
    return np.array([[c, -s], [s, c]])


def _check_order(tet):
    a = ccw_from_ey(tet)
    if not (a[0] < a[1] < a[2] < a[3]):
        raise OrderingError(f"tetrad ordering violated (ccw angles {a.tolist()})")
    if np.any(np.abs(tet[:, 0]) < 1e-12):
        raise OrderingError("tetrad vector parallel to e_y")


def unbalance_tetrad(v2, v3, theta1: float, theta2: float):
    v2 = np.asarray(v2, dtype=float)
    v3 = np.asarray(v3, dtype=float)
    if abs(theta1) >= math.pi / 4 or abs(theta2) >= math.pi / 4:
        raise OrderingError("|theta| >= pi/4 rejected")
    if abs(v2[0] * v3[1] - v2[1] * v3[0]) < 1e-12:
        raise FlexibilityError("v2 and v3 are parallel")
    v1 = -rot(2 * theta1) @ v3
    v4 = -rot(-2 * theta2) @ v2
    _check_order(np.array([v1, v2, v3, v4]))
    return v1, v4


def complete_tetrad(fixed: dict, theta1: float, theta2: float) -> np.ndarray:
    """Fill a tetrad from one vector on each curve (keys are tetrad indices 0..3)."""
    if abs(theta1) >= math.pi / 4 or abs(theta2) >= math.pi / 4:
        raise OrderingError("|theta| >= pi/4 rejected")
    t = [None] * 4
    for i, v in fixed.items():
        t[i] = np.asarray(v, dtype=float)
    if t[0] is None and t[2] is not None:
        t[0] = -rot(2 * theta1) @ t[2]
    elif t[2] is None and t[0] is not None:
        t[2] = -rot(-2 * theta1) @ t[0]
    if t[3] is None and t[1] is not None:
        t[3] = -rot(-2 * theta2) @ t[1]
    elif t[1] is None and t[3] is not None:
        t[1] = -rot(2 * theta2) @ t[3]
    if any(v is None for v in t):
        raise FlexibilityError("need one fixed vector on each curve")
    tet = np.array(t)
    _check_order(tet)
    return tet


def tetrad_angles(tet) -> tuple:
    """(angle(-v1, v3), angle(-v2, v4)); equal to (2 theta1, 2 theta2)."""
    return signed_angle(-tet[0], tet[2]), signed_angle(-tet[1], tet[3])


# ---------------------------------------------------------------- arrangement graph


@dataclass(frozen=True)
class Arm:
    node: int
    idx: int  # tetrad index 0..3
    n: int  # base curve id
    shift: int  # curve translate in the node's frame
    direction: int  # -1 left, +1 right
    nbr: Optional[tuple]  # (node, shift, idx) or None for a ray


def _slot(idx):
    return 0 if idx in (0, 2) else 1


def build_graph(config: PeriodicConfiguration, nodes, subset=None):
    ax = config.period[0]
    keep = [nd for nd in nodes
            if subset is None or all(n in subset for n, _ in nd.curve_ids)]
    byid = {nd.id: nd for nd in keep}
    along = {}
    for nd in keep:
        for slot, (n, s) in enumerate(nd.curve_ids):
            along.setdefault(n, []).append((nd.point[0] - s * ax, nd.id, slot))
    for n in along:
        along[n].sort()
    arms = {}
    for nd in keep:
        for idx in range(4):
            slot = _slot(idx)
            n, s = nd.curve_ids[slot]
            d = -1 if idx in (0, 1) else 1
            lst = along[n]
            pos = [i for i, e in enumerate(lst) if e[1] == nd.id and e[2] == slot][0]
            j = pos + d
            nbr = None
            if 0 <= j < len(lst):
                _, k2, slot2 = lst[j]
                s2 = byid[k2].curve_ids[slot2][1]
                back = (0 if slot2 == 0 else 1) if d > 0 else (2 if slot2 == 0 else 3)
                nbr = (k2, s - s2, back)
            arms[(nd.id, idx)] = Arm(nd.id, idx, n, s, d, nbr)
    return arms


def _node_on_arc(config, nd, arc, tol=GEOM_TOL):
    ax = config.period[0]
    for n, s in nd.curve_ids:
        if n != arc.n:
            continue
        # node copy translated by t lies on curve (n, s + t); match t = arc.shift - s
        x = nd.point[0] + (arc.shift - s) * ax
        if arc.x_lo - tol <= x <= arc.x_hi + tol:
            return True
    return False


def assign_levels(config: PeriodicConfiguration, bottom: Envelope, nodes=None) -> dict:
    if nodes is None:
        nodes = enumerate_intersections(config)
    subset = frozenset(bottom.curve_ids)
    for arc in bottom.arcs:
        if not (0 <= arc.n < len(config.curves)):
            raise FlexibilityError("bottom arc not contained in the configuration")
        g = config.curve(arc.n, arc.shift)
        lo, hi = g.slab
        if arc.x_lo < lo - 1e-9 or arc.x_hi > hi + 1e-9:
            raise FlexibilityError("bottom arc not contained in the configuration")
    arms = build_graph(config, nodes, subset)
    levels = {nd.id: math.inf for nd in nodes}
    eligible = [nd for nd in nodes if all(n in subset for n, _ in nd.curve_ids)]
    for nd in eligible:
        if any(_node_on_arc(config, nd, arc) for arc in bottom.arcs):
            levels[nd.id] = 1
    j = 2
    while True:
        new = []
        for nd in eligible:
            if levels[nd.id] < math.inf:
                continue
            good = 0
            for idx in range(4):
                nb = arms[(nd.id, idx)].nbr
                if nb is None or nb[0] == nd.id:
                    continue
                if levels[nb[0]] <= j - 1:
                    good += 1
            if good >= 2:
                new.append(nd.id)
        if not new:
            break
        for k in new:
            levels[k] = j
        j += 1
    return levels


# ---------------------------------------------------------------- flexible configuration


@dataclass
class FlexNode:
    id: int
    point: np.ndarray
    tetrad: np.ndarray
    curve_ids: tuple
    level: float
    part: int
    theta: tuple
    m: int = 1
    drift: float = 0.0  # distance moved from the balanced node position

    def to_dict(self):
        return {
            "id": self.id,
            "point": [float(v) for v in self.point],
            "tetrad": [[float(a), float(b)] for a, b in self.tetrad],
            "curve_ids": [list(map(int, c)) for c in self.curve_ids],
            "level": None if math.isinf(self.level) else int(self.level),
            "part": int(self.part),
            "theta": [float(self.theta[0]), float(self.theta[1])],
            "m": int(self.m),
            "drift": float(self.drift),
        }


@dataclass
class FlexArc:
    """Grim reaper piece over [x_lo, x_hi]; ends are (node, shift) or None at a slab edge."""
    b: float
    c: float
    x_lo: float
    x_hi: float
    start: Optional[tuple]
    end: Optional[tuple]
    provenance: int
    start_arm: Optional[int] = None
    end_arm: Optional[int] = None

    @property
    def curve(self):
        return GrimReaperCurve(self.b, self.c)

    @property
    def is_ray(self):
        return self.start is None or self.end is None

    def to_dict(self):
        return {
            "b": float(self.b), "c": float(self.c),
            "x_range": [float(self.x_lo), float(self.x_hi)],
            "start": None if self.start is None else list(map(int, self.start)),
            "end": None if self.end is None else list(map(int, self.end)),
            "provenance": int(self.provenance),
            "arms": [None if self.start_arm is None else int(self.start_arm),
                     None if self.end_arm is None else int(self.end_arm)],
        }


@dataclass
class FlexibleConfiguration:
    config: PeriodicConfiguration
    nodes: list
    arcs: list
    parts: int
    theta: list = field(default_factory=list)

    @property
    def edges(self):
        return [a for a in self.arcs if not a.is_ray]

    @property
    def rays(self):
        return [a for a in self.arcs if a.is_ray]

    def node_point(self, k, shift=0):
        return self.nodes[k].point + shift * self.config.a

    def to_dict(self):
        return {
            "rotation_convention": ROTATION_CONVENTION,
            "parts": int(self.parts),
            "nodes": [nd.to_dict() for nd in self.nodes],
            "arcs": [a.to_dict() for a in self.arcs],
        }

    @classmethod
    def from_dict(cls, config: PeriodicConfiguration, d):
        nodes = [FlexNode(int(n["id"]), np.array(n["point"], float), np.array(n["tetrad"], float),
                          tuple(tuple(c) for c in n["curve_ids"]),
                          math.inf if n["level"] is None else int(n["level"]), int(n["part"]),
                          tuple(n["theta"]), int(n.get("m", 1)), float(n.get("drift", 0.0)))
                 for n in d["nodes"]]
        arcs = [FlexArc(float(a["b"]), float(a["c"]), float(a["x_range"][0]), float(a["x_range"][1]),
                        None if a["start"] is None else tuple(a["start"]),
                        None if a["end"] is None else tuple(a["end"]), int(a["provenance"]),
                        *a.get("arms", [None, None]))
                for a in d["arcs"]]
        return cls(config, nodes, arcs, int(d.get("parts", 1)), [nd.theta for nd in nodes])


def _theta_array(theta, n_nodes):
    if theta is None:
        return np.zeros((n_nodes, 2))
    th = np.asarray(theta, dtype=float)
    if th.size == 0:
        return np.zeros((n_nodes, 2))
    th = th.reshape(-1, 2)
    if th.shape[0] != n_nodes:
        raise FlexibilityError(f"theta has {th.shape[0]} rows, configuration has {n_nodes} nodes")
    return th


class _Sweep:
    def __init__(self, config, nodes, theta):
        self.cfg = config
        self.nodes = nodes
        self.theta = theta
        self.arms = build_graph(config, nodes)
        self.real = {}  # (node, idx) -> GrimReaperCurve in the node frame
        self.res = {}  # node -> (point, tetrad)
        self.part_of = {}
        self.level_of = {nd.id: math.inf for nd in nodes}
        self.a = config.a

    def realize(self, k, idx, g: GrimReaperCurve):
        self.real[(k, idx)] = g
        nb = self.arms[(k, idx)].nbr
        if nb is not None:
            k2, t, i2 = nb
            g2 = g.shifted(-t * self.a[0], -t * self.a[1])
            if (k2, i2) not in self.real:
                self.real[(k2, i2)] = g2

    def resolvable(self, k):
        if k in self.res:
            return False
        have = [i for i in range(4) if (k, i) in self.real]
        return any(i in (0, 2) for i in have) and any(i in (1, 3) for i in have)

    def resolve(self, k, part):
        nd = self.nodes[k]
        have = [i for i in range(4) if (k, i) in self.real]
        iL = 2 if 2 in have else 0
        iG = 1 if 1 in have else 3
        gL, gG = self.real[(k, iL)], self.real[(k, iG)]
        p = intersect_pair(gL, gG)
        if p is None:
            raise FlexibilityError(f"attached pieces fail to intersect at node {k}")
        if np.linalg.norm(p - nd.point) > 50.0:
            raise FlexibilityError(f"node {k} moved too far ({np.linalg.norm(p - nd.point):.3g})")
        fixed = {}
        for i, g in ((iL, gL), (iG, gG)):
            u = p[0] - g.b
            t = np.array([math.cos(u), math.sin(u)])
            fixed[i] = -t if i in (0, 1) else t
        th1, th2 = self.theta[k]
        tet = complete_tetrad(fixed, th1, th2)
        for i in range(4):
            if i in (iL, iG):
                continue
            if (k, i) in self.real:
                g = self.real[(k, i)]
                y = float(g.y(p[0])) if g.contains(p[0]) else math.inf
                u = p[0] - g.b
                tt = np.array([math.cos(u), math.sin(u)]) * (-1 if i in (0, 1) else 1)
                if abs(y - p[1]) > 1e-9 or np.linalg.norm(tt - tet[i]) > 1e-9:
                    raise FlexibilityError(f"overdetermined node {k}: arm {i + 1} inconsistent")
            else:
                self.realize(k, i, reaper_through_direction(p, tet[i]))
        self.res[k] = (p, tet)
        self.part_of[k] = part

    def sweep(self, part):
        while True:
            cand = [k for k in range(len(self.nodes)) if self.resolvable(k)]
            if not cand:
                return
            k = min(cand, key=lambda kk: (self.level_of[kk], kk))
            self.resolve(k, part)

    def realize_original_arc(self, n, shift, lo, hi):
        """Realize with the original curve every unrealized arm whose edge lies on [lo, hi]."""
        ax = self.a[0]
        g = self.cfg.curve(n, shift)
        for (k, idx), arm in self.arms.items():
            if arm.n != n:
                continue
            nd = self.nodes[k]
            x = nd.point[0] + (shift - arm.shift) * ax
            if not (lo - GEOM_TOL <= x <= hi + GEOM_TOL):
                continue
            # edge from this node in the arm direction must stay inside [lo, hi]
            if arm.nbr is None:
                gl, gh = g.slab
                inside = (arm.direction < 0 and lo <= gl + 1e-12) or (arm.direction > 0 and hi >= gh - 1e-12)
            else:
                k2, t, _ = arm.nbr
                x2 = self.nodes[k2].point[0] + (t + shift - arm.shift) * ax
                inside = lo - GEOM_TOL <= x2 <= hi + GEOM_TOL
            if inside and (k, idx) not in self.real:
                self.realize(k, idx, g.shifted(-(shift - arm.shift) * ax,
                                               -(shift - arm.shift) * self.a[1]))


def _envelope_components(sweep: _Sweep, env: Envelope, done_curves):
    """Split envelope arcs at nodes involving processed curves; return bounded pieces."""
    ax = sweep.a[0]
    comps = []
    for arc in env.arcs:
        cuts = []
        for nd in sweep.nodes:
            if not any(n in done_curves for n, _ in nd.curve_ids):
                continue
            for n, s in nd.curve_ids:
                if n == arc.n:
                    x = nd.point[0] + (arc.shift - s) * ax
                    if arc.x_lo - GEOM_TOL <= x <= arc.x_hi + GEOM_TOL:
                        cuts.append(x)
        pts = sorted(set([arc.x_lo, arc.x_hi] + cuts))
        for a, b in zip(pts[:-1], pts[1:]):
            bounded = a in cuts and b in cuts
            comps.append((bounded, a, arc.n, arc.shift, b))
    return comps


def _resolved_edges(sw: _Sweep):
    """Original-curve arcs joining two already resolved nodes."""
    ax = sw.a[0]
    out = []
    for (k, idx), arm in sw.arms.items():
        if arm.nbr is None or k not in sw.res or arm.nbr[0] not in sw.res or arm.direction < 0:
            continue
        k2, t, _ = arm.nbr
        x1 = sw.nodes[k].point[0]
        x2 = sw.nodes[k2].point[0] + t * ax
        out.append(Arc(arm.n, arm.shift, min(x1, x2), max(x1, x2)))
    return out


def build_flexible_configuration(config: PeriodicConfiguration, theta=None) -> FlexibleConfiguration:
    nodes = enumerate_intersections(config)
    th = _theta_array(theta, len(nodes))
    if np.any(np.abs(th) >= math.pi / 4):
        raise OrderingError("|theta| >= pi/4 rejected")
    sw = _Sweep(config, nodes, th)
    N = len(config.curves)
    # part 1: the bottom of all curves, realized by the original curves
    env = lower_envelope(config)
    lev = assign_levels(config, env, nodes)
    sw.level_of.update(lev)
    for arc in env.arcs:
        sw.realize_original_arc(arc.n, arc.shift, arc.x_lo, arc.x_hi)
    part = 1
    sw.sweep(part)
    max_parts = max(1, len(nodes))
    while len(sw.res) < len(nodes):
        part += 1
        if part > max_parts + 1:
            raise FlexibilityError("non-termination guard: parts exceed node count")
        pending = [nd for nd in nodes if nd.id not in sw.res]
        # curves already carrying realized pieces belong to earlier parts
        done_curves = {sw.arms[key].n for key in sw.real}
        remaining = sorted(set(range(N)) - done_curves)
        if not remaining:
            remaining = sorted({n for nd in pending for n, _ in nd.curve_ids})
            done_curves = set(range(N)) - set(remaining)
        env_m = lower_envelope(config, remaining)
        comps = _envelope_components(sw, env_m, done_curves)
        bounded = [c for c in comps if c[0]]
        pool = bounded if bounded else comps
        if not pool:
            raise FlexibilityError("no component available for the next part")
        before = len(sw.real)
        chosen = None
        for _, lo, n, s, hi in sorted(pool, key=lambda c: c[1]):
            sw.realize_original_arc(n, s, lo, hi)
            if len(sw.real) > before:
                chosen = Arc(n, s, lo, hi)
                break
        if chosen is not None:
            # re-level against the G-edges under B'_m and the pieces of earlier parts
            bottom = Envelope([chosen] + _resolved_edges(sw), frozenset(range(N)), config.x0,
                              config.period[0])
            sw.level_of.update({k: v for k, v in assign_levels(config, bottom, nodes).items()
                                if k not in sw.res})
        sw.sweep(part)
        if len(sw.real) == before:
            raise FlexibilityError("part made no progress")
    return _assemble(config, nodes, sw, th, part)


def _assemble(config, nodes, sw: _Sweep, th, parts):
    ax, ay = config.period
    fnodes = []
    for nd in nodes:
        p, tet = sw.res[nd.id]
        fnodes.append(FlexNode(nd.id, p, tet, nd.curve_ids, sw.level_of[nd.id],
                               sw.part_of[nd.id], (float(th[nd.id, 0]), float(th[nd.id, 1])), nd.m,
                               float(np.hypot(*(p - nd.point)))))
    arcs = []
    seen = set()
    for (k, idx), arm in sorted(sw.arms.items()):
        if (k, idx) in seen:
            continue
        g = sw.real[(k, idx)]
        p = sw.res[k][0]
        if arm.nbr is None:
            lo, hi = g.slab
            if arm.direction < 0:
                arcs.append(FlexArc(g.b, g.c, lo, p[0], None, (k, 0), arm.n, None, idx))
            else:
                arcs.append(FlexArc(g.b, g.c, p[0], hi, (k, 0), None, arm.n, idx, None))
            seen.add((k, idx))
            continue
        k2, t, i2 = arm.nbr
        seen.add((k, idx))
        seen.add((k2, i2))
        q = sw.res[k2][0] + t * np.array([ax, ay])
        if (q[0] - p[0]) * arm.direction <= 0:
            raise FlexibilityError(f"edge from node {k} reverses direction")
        if abs(float(g.y(q[0])) - q[1]) > 1e-8 if g.contains(q[0]) else True:
            raise FlexibilityError(f"edge from node {k} misses node {k2}")
        if arm.direction > 0:
            arcs.append(FlexArc(g.b, g.c, p[0], q[0], (k, 0), (k2, t), arm.n, idx, i2))
        else:
            arcs.append(FlexArc(g.b, g.c, q[0], p[0], (k2, t), (k, 0), arm.n, i2, idx))
    # curves carrying no node at all
    carried = {n for nd in nodes for n, _ in nd.curve_ids}
    for n, g in enumerate(config.curves):
        if n not in carried:
            lo, hi = g.slab
            arcs.append(FlexArc(g.b, g.c, lo, hi, None, None, n))
    return FlexibleConfiguration(config, fnodes, arcs, parts, [tuple(r) for r in th.tolist()])


# ---------------------------------------------------------------- embeddedness


def _registered_points(flex: FlexibleConfiguration, shifts):
    pts = []
    for nd in flex.nodes:
        for j in shifts:
            pts.append(nd.point + j * flex.config.a)
    return np.array(pts) if pts else np.zeros((0, 2))


def check_embedded(flex: FlexibleConfiguration, tol: float = 1e-9):
    ax, ay = flex.config.period
    arcs = flex.arcs
    witnesses = []
    xs = [a.x_lo for a in arcs] + [a.x_hi for a in arcs]
    span = (max(xs) - min(xs)) if xs else 0.0
    jmax = int(math.ceil(span / ax)) + 1
    reg = _registered_points(flex, range(-jmax - 2, jmax + 3))
    for i, A in enumerate(arcs):
        for k in range(i, len(arcs)):
            B0 = arcs[k]
            for j in range(-jmax, jmax + 1):
                if k == i and j == 0:
                    continue
                if k == i and j < 0:
                    continue
                B = FlexArc(B0.b + j * ax, B0.c + j * ay, B0.x_lo + j * ax, B0.x_hi + j * ax,
                            None, None, B0.provenance)
                lo = max(A.x_lo, B.x_lo)
                hi = min(A.x_hi, B.x_hi)
                if hi < lo - tol:
                    continue
                if abs(A.b - B.b) < 1e-13 and abs(A.c - B.c) < 1e-13:
                    if hi - lo > tol:
                        witnesses.append({"arcs": [i, k], "shift": j, "point": None,
                                          "kind": "overlap", "x_range": [lo, hi]})
                    continue
                p = intersect_pair(A.curve, B.curve)
                if p is None:
                    continue
                if not (lo - tol <= p[0] <= hi + tol):
                    continue
                if reg.size and np.min(np.hypot(*(reg - p).T)) <= max(tol, 1e-9 * (1 + abs(p[1]))) * 10:
                    continue
                witnesses.append({"arcs": [i, k], "shift": j, "point": [float(p[0]), float(p[1])],
                                  "kind": "crossing"})
    return len(witnesses) == 0, witnesses


# ---------------------------------------------------------------- admissible radius


def _probe(config, theta):
    try:
        flex = build_flexible_configuration(config, theta)
    except (FlexibilityError, ValueError):
        return False
    ok, _ = check_embedded(flex)
    return ok


def estimate_delta_theta(config: PeriodicConfiguration, direction, steps: int = 20):
    nodes = enumerate_intersections(config)
    d = np.asarray(direction, dtype=float).reshape(-1, 2) if np.size(direction) else np.zeros((0, 2))
    if d.shape[0] != len(nodes):
        raise FlexibilityError(f"direction needs {len(nodes)} rows")
    nrm = float(np.linalg.norm(d))
    if nrm == 0.0:
        raise FlexibilityError("direction must be nonzero")
    d = d / nrm
    t_hi = (math.pi / 4) / float(np.abs(d).max()) * (1 - 1e-12)
    if _probe(config, t_hi * d):
        return {"radius": t_hi, "bracket": [t_hi, t_hi], "width": 0.0}
    lo = t_hi / 2
    hi = t_hi
    for _ in range(60):
        if _probe(config, lo * d):
            break
        hi = lo
        lo /= 2
    else:
        return {"radius": 0.0, "bracket": [0.0, hi], "width": hi}
    for _ in range(steps):
        mid = math.sqrt(lo * hi)
        if _probe(config, mid * d):
            lo = mid
        else:
            hi = mid
    return {"radius": lo, "bracket": [lo, hi], "width": hi - lo}
