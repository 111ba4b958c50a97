"""Triangle meshes with z-periodic and lattice-periodic vertex pairings."""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree


class MeshError(ValueError):
    pass


@dataclass
class SurfaceMesh:
    """Open fundamental piece plus pairing tags.

    pairs rows are (i, j, kz, ka): vertices[j] = vertices[i] + kz*(0,0,z_period) + ka*(ax,ay,0).
    mirror_pairs rows are (i, j): vertices[j] = vertices[i] reflected in z = 0.
    """
    vertices: np.ndarray
    faces: np.ndarray
    z_period: Optional[float] = None
    a_vec: Optional[np.ndarray] = None
    pairs: np.ndarray = field(default_factory=lambda: np.zeros((0, 4), dtype=np.int64))
    mirror_pairs: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    fields: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        self.pairs = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 4)
        self.mirror_pairs = np.asarray(self.mirror_pairs, dtype=np.int64).reshape(-1, 2)
        if self.a_vec is not None:
            self.a_vec = np.asarray(self.a_vec, dtype=float).reshape(2)

    @property
    def n_vertices(self):
        return len(self.vertices)

    def translation(self, kz, ka):
        kz = np.asarray(kz, dtype=float)
        ka = np.asarray(ka, dtype=float)
        t = np.zeros(np.broadcast(kz, ka).shape + (3,))
        if self.z_period is not None:
            t[..., 2] += kz * self.z_period
        if self.a_vec is not None:
            t[..., 0] += ka * self.a_vec[0]
            t[..., 1] += ka * self.a_vec[1]
        return t

    @property
    def z_pairs(self):
        p = self.pairs
        return p[(p[:, 2] != 0) & (p[:, 3] == 0)]

    @property
    def a_pairs(self):
        p = self.pairs
        return p[(p[:, 3] != 0) & (p[:, 2] == 0)]

    def pair_error(self) -> float:
        if len(self.pairs) == 0:
            return 0.0
        i, j = self.pairs[:, 0], self.pairs[:, 1]
        d = self.vertices[j] - self.vertices[i] - self.translation(self.pairs[:, 2], self.pairs[:, 3])
        return float(np.abs(d).max())

    def mirror_error(self) -> float:
        if len(self.mirror_pairs) == 0:
            return 0.0
        a = self.vertices[self.mirror_pairs[:, 0]] * np.array([1.0, 1.0, -1.0])
        return float(np.abs(a - self.vertices[self.mirror_pairs[:, 1]]).max())

    # ------------------------------------------------------------ quotient view

    def quotient(self):
        """(rep index per vertex, offset vector per vertex) with vertex = rep + offset."""
        n = self.n_vertices
        rep = np.arange(n)
        off = np.zeros((n, 3))
        if len(self.pairs):
            i, j = self.pairs[:, 0], self.pairs[:, 1]
            # pairs are stored against a base copy, so one hop suffices
            if np.any(np.isin(i, j)):
                raise MeshError("pair chains are not supported (base copy is itself paired)")
            rep[j] = i
            off[j] = self.translation(self.pairs[:, 2], self.pairs[:, 3])
        return rep, off

    def corner_positions(self, vertices=None):
        V = self.vertices if vertices is None else vertices
        return V[self.faces]

    def face_reps(self):
        rep, _ = self.quotient()
        return rep[self.faces]

    def boundary_vertices(self) -> np.ndarray:
        """Mask of vertices on a free (untagged) boundary of the quotient surface."""
        rep, off = self.quotient()
        fr = rep[self.faces]
        co = off[self.faces]  # corner offsets
        keys = []
        for a, b in ((0, 1), (1, 2), (2, 0)):
            ra, rb = fr[:, a], fr[:, b]
            da = co[:, a] - co[:, b]
            swap = ra > rb
            r1 = np.where(swap, rb, ra)
            r2 = np.where(swap, ra, rb)
            d = np.where(swap[:, None], -da, da)
            keys.append(np.c_[r1, r2, np.round(d * 1e6).astype(np.int64)])
        K = np.concatenate(keys)
        _, inv, cnt = np.unique(K, axis=0, return_inverse=True, return_counts=True)
        bad = cnt[inv.ravel()] == 1
        mask_rep = np.zeros(self.n_vertices, bool)
        mask_rep[K[bad, 0]] = True
        mask_rep[K[bad, 1]] = True
        return mask_rep[rep]

    def triangle_angles(self) -> np.ndarray:
        P = self.corner_positions()
        ang = np.zeros((len(P), 3))
        for i in range(3):
            u = P[:, (i + 1) % 3] - P[:, i]
            v = P[:, (i + 2) % 3] - P[:, i]
            c = np.einsum("ij,ij->i", u, v) / (np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
            ang[:, i] = np.arccos(np.clip(c, -1.0, 1.0))
        return ang

    def min_angle_deg(self) -> float:
        if len(self.faces) == 0:
            return 0.0
        return float(np.degrees(self.triangle_angles().min()))

    def check_quality(self, min_angle_deg: float = 5.0):
        a = self.min_angle_deg()
        if not np.isfinite(self.vertices).all():
            raise MeshError("non-finite vertex coordinates")
        if a < min_angle_deg:
            raise MeshError(f"min triangle angle {a:.3g} deg below {min_angle_deg}")
        return a

    def copy(self):
        return SurfaceMesh(self.vertices.copy(), self.faces.copy(), self.z_period,
                           None if self.a_vec is None else self.a_vec.copy(), self.pairs.copy(),
                           self.mirror_pairs.copy(), {k: np.array(v, copy=True) for k, v in self.fields.items()},
                           json.loads(json.dumps(self.meta)))

    # ------------------------------------------------------------ io

    def sidecar(self) -> dict:
        return {
            "z_period": self.z_period,
            "a_vec": None if self.a_vec is None else [float(v) for v in self.a_vec],
            "pairs": self.pairs.tolist(),
            "mirror_pairs": self.mirror_pairs.tolist(),
            "n_vertices": int(self.n_vertices),
            "n_faces": int(len(self.faces)),
            "fields": {k: np.asarray(v).tolist() for k, v in self.fields.items()},
            "meta": self.meta,
        }

    def obj_text(self) -> str:
        out = [f"v {x:.17g} {y:.17g} {z:.17g}" for x, y, z in self.vertices]
        out += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in self.faces]
        return "\n".join(out) + "\n"

    def ply_text(self, scalars=None) -> str:
        scalars = dict(scalars or {})
        for k, v in self.fields.items():
            v = np.asarray(v)
            if v.ndim == 1 and len(v) == self.n_vertices:
                scalars.setdefault(k, v)
        names = sorted(scalars)
        head = ["ply", "format ascii 1.0", f"element vertex {self.n_vertices}",
                "property double x", "property double y", "property double z"]
        head += [f"property double {k}" for k in names]
        head += [f"element face {len(self.faces)}", "property list uchar int vertex_indices", "end_header"]
        cols = [self.vertices] + [np.asarray(scalars[k], float)[:, None] for k in names]
        data = np.hstack(cols)
        rows = [" ".join(f"{v:.17g}" for v in r) for r in data]
        rows += [f"3 {a} {b} {c}" for a, b, c in self.faces]
        return "\n".join(head + rows) + "\n"

    @classmethod
    def from_obj_text(cls, text: str, sidecar: Optional[dict] = None):
        V, F = [], []
        for line in text.splitlines():
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                V.append([float(p) for p in parts[1:4]])
            elif parts[0] == "f":
                F.append([int(p.split("/")[0]) - 1 for p in parts[1:4]])
        m = cls(np.array(V, float), np.array(F, np.int64))
        if sidecar:
            m.z_period = sidecar.get("z_period")
            a = sidecar.get("a_vec")
            m.a_vec = None if a is None else np.array(a, float)
            m.pairs = np.array(sidecar.get("pairs", []), np.int64).reshape(-1, 4)
            m.mirror_pairs = np.array(sidecar.get("mirror_pairs", []), np.int64).reshape(-1, 2)
            m.fields = {k: np.array(v) for k, v in sidecar.get("fields", {}).items()}
            m.meta = sidecar.get("meta", {})
        return m


# ---------------------------------------------------------------- assembly


def _union_find(n, pairs):
    if len(pairs) == 0:
        return np.arange(n)
    g = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, lab = connected_components(g, directed=False)
    # representative = smallest raw index in each component
    first = np.full(lab.max() + 1, n, dtype=np.int64)
    np.minimum.at(first, lab, np.arange(n))
    return first[lab]


def assemble(raw_pos, fv, fz=None, fa=None, z_period=None, a_vec=None, z_lo=None,
             weld_tol=1e-9, mirror=False, reference_normal=None) -> SurfaceMesh:
    """Weld raw vertices in the quotient, orient, and unroll into a tagged open mesh.

    raw_pos: (n,3); fv: (f,3) raw vertex ids; fz/fa: (f,3) integer z- and lattice offsets per corner.
    """
    P = np.asarray(raw_pos, dtype=float)
    fv = np.asarray(fv, dtype=np.int64)
    f = len(fv)
    fz = np.zeros((f, 3), np.int64) if fz is None else np.asarray(fz, np.int64)
    fa = np.zeros((f, 3), np.int64) if fa is None else np.asarray(fa, np.int64)
    Pz = z_period
    if z_lo is None:
        z_lo = -0.5 * Pz if Pz else 0.0
    # canonical z inside the window
    Q = P.copy()
    kz_raw = np.zeros(len(P), np.int64)
    if Pz:
        t = np.mod(P[:, 2] - z_lo, Pz)
        t[t >= Pz] = 0.0
        kz_raw = np.round((P[:, 2] - z_lo - t) / Pz).astype(np.int64)
        Q[:, 2] = z_lo + t
    # weld
    lo = Q.min(0) - 1.0
    D = Q - lo
    if Pz:
        D[:, 2] = Q[:, 2] - z_lo
        box = np.array([D[:, 0].max() + 10.0, D[:, 1].max() + 10.0, Pz])
        D[:, 2] = np.where(D[:, 2] >= Pz, 0.0, D[:, 2])
        tree = cKDTree(D, boxsize=box)
    else:
        tree = cKDTree(D)
    pr = tree.query_pairs(weld_tol, output_type="ndarray")
    rep = _union_find(len(P), pr)
    # offsets of each raw vertex relative to its rep
    kz_v = kz_raw.copy()
    if Pz:
        dz = P[:, 2] - Q[rep, 2]
        kz_v = np.round(dz / Pz).astype(np.int64)
    Vc = Q[rep]  # canonical positions (rep's canonical copy)
    cr = rep[fv]
    ckz = kz_v[fv] + fz
    cka = fa
    # drop degenerate faces (repeated corner after welding)
    same = np.zeros(f, bool)
    for a, b in ((0, 1), (1, 2), (2, 0)):
        same |= (cr[:, a] == cr[:, b]) & (ckz[:, a] == ckz[:, b]) & (cka[:, a] == cka[:, b])
    keep = ~same
    cr, ckz, cka = cr[keep], ckz[keep], cka[keep]
    # normalize each face so its centroid lies in the z window
    if Pz:
        cz = (Vc[cr, 2] + ckz * Pz).mean(1)
        sh = np.floor((cz - z_lo) / Pz + 1e-12).astype(np.int64)
        ckz = ckz - sh[:, None]
    # deduplicate identical faces
    order = np.argsort(cr, axis=1)
    rows = np.arange(len(cr))[:, None]
    # lifts relative to the first sorted corner, so translated duplicates coincide
    skz = ckz[rows, order]
    ska = cka[rows, order]
    skey = np.concatenate([cr[rows, order], skz - skz[:, :1], ska - ska[:, :1]], axis=1)
    _, ui = np.unique(skey, axis=0, return_index=True)
    ui = np.sort(ui)
    cr, ckz, cka = cr[ui], ckz[ui], cka[ui]
    # orientation on the quotient: edges match up to a common lift
    corner_key = [[(int(cr[i, a]), int(ckz[i, a]), int(cka[i, a])) for a in range(3)] for i in range(len(cr))]
    flip = _orient_lifted(corner_key)
    cr[flip] = cr[flip][:, ::-1]
    ckz[flip] = ckz[flip][:, ::-1]
    cka[flip] = cka[flip][:, ::-1]
    # unroll
    trip = np.stack([cr, ckz, cka], axis=2).reshape(-1, 3)
    uniq, inv = np.unique(trip, axis=0, return_inverse=True)
    inv = inv.ravel()
    faces = inv.reshape(-1, 3)
    a3 = np.zeros(3)
    if a_vec is not None:
        a3[:2] = a_vec
    V = Vc[uniq[:, 0]] + uniq[:, 1:2] * np.array([0.0, 0.0, Pz or 0.0]) + uniq[:, 2:3] * a3
    # pairs against the first copy of each rep
    _, first = np.unique(uniq[:, 0], return_index=True)
    base_of = np.empty(len(uniq), np.int64)
    base_of[:] = first[np.searchsorted(uniq[first, 0], uniq[:, 0])]
    other = np.nonzero(base_of != np.arange(len(uniq)))[0]
    pairs = np.c_[base_of[other], other, uniq[other, 1] - uniq[base_of[other], 1],
                  uniq[other, 2] - uniq[base_of[other], 2]]
    # make the base copies exact translates
    if len(pairs):
        V[pairs[:, 1]] = V[pairs[:, 0]] + pairs[:, 2:3] * np.array([0.0, 0.0, Pz or 0.0]) + pairs[:, 3:4] * a3
    mesh = SurfaceMesh(V, faces, Pz, None if a_vec is None else np.asarray(a_vec, float), pairs)
    if reference_normal is not None:
        _align_orientation(mesh, *reference_normal)
    if mirror:
        mesh.mirror_pairs = find_mirror_pairs(mesh.vertices, tol=max(weld_tol, 1e-9))
    return mesh


def _orient_lifted(corner_key):
    """Consistent winding for faces given lifted corner keys (rep, kz, ka)."""
    f = len(corner_key)
    emap = {}
    for fi, ck in enumerate(corner_key):
        for a in range(3):
            u, v = ck[a], ck[(a + 1) % 3]
            fwd = u <= v
            lo_, hi_ = (u, v) if fwd else (v, u)
            k = (lo_[0], hi_[0], hi_[1] - lo_[1], hi_[2] - lo_[2])
            emap.setdefault(k, []).append((fi, fwd))
    nb = [[] for _ in range(f)]
    for k, lst in emap.items():
        if len(lst) > 2:
            raise MeshError("non-manifold edge")
        if len(lst) == 2:
            (f1, d1), (f2, d2) = lst
            same = d1 == d2
            nb[f1].append((f2, same))
            nb[f2].append((f1, same))
    flip = np.full(f, -1, dtype=np.int8)
    for s in range(f):
        if flip[s] >= 0:
            continue
        flip[s] = 0
        dq = deque([s])
        while dq:
            a = dq.popleft()
            for b, same in nb[a]:
                want = flip[a] ^ (1 if same else 0)
                if flip[b] < 0:
                    flip[b] = want
                    dq.append(b)
                elif flip[b] != want:
                    raise MeshError("surface is not orientable")
    return flip.astype(bool)


def _align_orientation(mesh: SurfaceMesh, point, normal):
    """Flip all faces if the face nearest `point` has normal against `normal`."""
    P = mesh.corner_positions()
    c = P.mean(1)
    i = int(np.argmin(np.linalg.norm(c - np.asarray(point), axis=1)))
    n = np.cross(P[i, 1] - P[i, 0], P[i, 2] - P[i, 0])
    if np.dot(n, normal) < 0:
        mesh.faces = mesh.faces[:, ::-1].copy()


def find_mirror_pairs(V, tol=1e-9):
    tree = cKDTree(V)
    M = V * np.array([1.0, 1.0, -1.0])
    d, j = tree.query(M, distance_upper_bound=tol)
    ok = np.isfinite(d)
    i = np.nonzero(ok)[0]
    return np.c_[i, j[ok]].astype(np.int64)


def strip_faces(colA, pa, colB, R):
    """Triangles between adjacent row-offset columns (ids arrays of length R).

    Column parity p puts row g at height g + p/2. Returns (fv, fz).
    """
    g = np.arange(R)
    colA = np.asarray(colA)
    colB = np.asarray(colB)

    def at(col, k):
        return col[np.mod(k, R)], np.floor_divide(k, R)

    tris = []
    if pa == 0:
        tris.append((at(colA, g), at(colB, g), at(colA, g + 1)))
        tris.append((at(colA, g), at(colB, g - 1), at(colB, g)))
    else:
        tris.append((at(colA, g), at(colB, g), at(colB, g + 1)))
        tris.append((at(colA, g), at(colB, g + 1), at(colA, g + 1)))
    fv = np.concatenate([np.stack([t[0][0], t[1][0], t[2][0]], 1) for t in tris])
    fz = np.concatenate([np.stack([t[0][1], t[1][1], t[2][1]], 1) for t in tris])
    return fv, fz
