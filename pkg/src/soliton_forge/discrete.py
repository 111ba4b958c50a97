"""Cotangent Laplacian, mixed areas, normals and the soliton objective with its adjoint."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import SurfaceMesh

EY = np.array([0.0, 1.0, 0.0])


@dataclass
class QuotientGeometry:
    """Mesh seen in the quotient: reps carry the unknowns, corners add fixed offsets."""
    reps: np.ndarray  # (r,) vertex index of each rep
    vid_to_rep: np.ndarray  # (n,) rep slot of every open vertex
    corner_rep: np.ndarray  # (f,3) rep slot per face corner
    corner_off: np.ndarray  # (f,3,3) offset vector per face corner
    offset: np.ndarray  # (n,3) offset of every open vertex from its rep
    interior: np.ndarray  # (r,) bool, rep not on a free boundary

    @classmethod
    def from_mesh(cls, mesh: SurfaceMesh):
        rep, off = mesh.quotient()
        reps, slot = np.unique(rep, return_inverse=True)
        slot = slot.ravel()
        bnd = mesh.boundary_vertices()
        interior = np.ones(len(reps), bool)
        interior[slot[bnd]] = False
        return cls(reps, slot, slot[mesh.faces], off[mesh.faces], off, interior)

    def rep_positions(self, mesh: SurfaceMesh):
        return mesh.vertices[self.reps]

    def expand(self, X):
        """Open-mesh positions from rep positions."""
        return X[self.vid_to_rep] + self.offset


def _corners(X, qg: QuotientGeometry):
    return X[qg.corner_rep] + qg.corner_off


def forward(X, qg: QuotientGeometry, keep=False):
    """Per-rep Laplacian sum L, mixed area A, area-weighted normal N."""
    P = _corners(X, qg)
    f = len(P)
    nr = len(X)
    u = [P[:, (i + 1) % 3] - P[:, i] for i in range(3)]
    w = [P[:, (i + 2) % 3] - P[:, i] for i in range(3)]
    n = np.cross(u[0], w[0])
    c = np.linalg.norm(n, axis=1)
    d = [np.einsum("ij,ij->i", u[i], w[i]) for i in range(3)]
    cot = [d[i] / c for i in range(3)]
    obt = np.stack([d[i] < 0 for i in range(3)], 1)
    any_obt = obt.any(1)
    L = np.zeros((nr, 3))
    A = np.zeros(nr)
    N = np.zeros((nr, 3))
    cr = qg.corner_rep
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        e = P[:, k] - P[:, j]
        np.add.at(L, cr[:, j], 0.5 * cot[i][:, None] * e)
        np.add.at(L, cr[:, k], -0.5 * cot[i][:, None] * e)
        vor = (np.einsum("ij,ij->i", u[i], u[i]) * cot[k] + np.einsum("ij,ij->i", w[i], w[i]) * cot[j]) / 8
        Ai = np.where(any_obt, np.where(obt[:, i], c / 4, c / 8), vor)
        np.add.at(A, cr[:, i], Ai)
        np.add.at(N, cr[:, i], n)
    out = {"L": L, "A": A, "N": N}
    if keep:
        out.update({"P": P, "u": u, "w": w, "n": n, "c": c, "d": d, "cot": cot, "obt": obt,
                    "any_obt": any_obt, "f": f})
    return out


def vertex_fields(X, qg: QuotientGeometry):
    g = forward(X, qg)
    N = g["N"]
    nrm = np.linalg.norm(N, axis=1)
    nu = N / nrm[:, None]
    Hvec = g["L"] / g["A"][:, None]
    H = np.einsum("ij,ij->i", Hvec, nu)
    return {"normal": nu, "H": H, "area": g["A"], "residual": H - nu[:, 1], "Hvec": Hvec}


def objective(X, qg: QuotientGeometry, weights=None):
    """F = sum_v (H_v - e_y . nu_v)^2 A_v over interior reps."""
    fl = vertex_fields(X, qg)
    wgt = qg.interior.astype(float) if weights is None else weights
    return float(np.sum(wgt * fl["residual"] ** 2 * fl["area"]))


def objective_grad(X, qg: QuotientGeometry, weights=None):
    """Value and gradient of the objective with respect to rep positions."""
    g = forward(X, qg, keep=True)
    L, A, N = g["L"], g["A"], g["N"]
    wgt = qg.interior.astype(float) if weights is None else weights
    nrm = np.linalg.norm(N, axis=1)
    nu = N / nrm[:, None]
    gdot = np.einsum("ij,ij->i", L, nu) - A * nu[:, 1]
    r = gdot / A
    F = float(np.sum(wgt * r * r * A))
    gL = (wgt * 2 * r)[:, None] * nu
    gA = wgt * (-2 * r * nu[:, 1] - r * r)
    gnu = (wgt * 2 * r)[:, None] * (L - A[:, None] * EY)
    gN = (gnu - np.einsum("ij,ij->i", gnu, nu)[:, None] * nu) / nrm[:, None]

    P, u, w, n, c, d, cot = g["P"], g["u"], g["w"], g["n"], g["c"], g["d"], g["cot"]
    obt, any_obt = g["obt"], g["any_obt"]
    cr = qg.corner_rep
    gP = np.zeros_like(P)
    gcot = [np.zeros(len(P)) for _ in range(3)]
    gc = np.zeros(len(P))
    gn = gN[cr[:, 0]] + gN[cr[:, 1]] + gN[cr[:, 2]]
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        # Laplacian terms
        e = P[:, k] - P[:, j]
        diff = gL[cr[:, j]] - gL[cr[:, k]]
        gcot[i] += 0.5 * np.einsum("ij,ij->i", diff, e)
        ge = 0.5 * cot[i][:, None] * diff
        gP[:, k] += ge
        gP[:, j] -= ge
        # mixed area terms
        gAi = gA[cr[:, i]]
        uu = np.einsum("ij,ij->i", u[i], u[i])
        ww = np.einsum("ij,ij->i", w[i], w[i])
        vor_w = np.where(any_obt, 0.0, gAi)
        gcot[k] += vor_w * uu / 8
        gcot[j] += vor_w * ww / 8
        gu = (vor_w * cot[k] / 4)[:, None] * u[i]
        gw = (vor_w * cot[j] / 4)[:, None] * w[i]
        gP[:, j] += gu
        gP[:, k] += gw
        gP[:, i] -= gu + gw
        gc += np.where(any_obt, np.where(obt[:, i], gAi / 4, gAi / 8), 0.0)
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        gd = gcot[i] / c
        gc -= gcot[i] * d[i] / c ** 2
        gP[:, j] += gd[:, None] * w[i]
        gP[:, k] += gd[:, None] * u[i]
        gP[:, i] -= gd[:, None] * (u[i] + w[i])
    gn = gn + (gc / c)[:, None] * n
    g1 = np.cross(w[0], gn)
    g2 = np.cross(gn, u[0])
    gP[:, 1] += g1
    gP[:, 2] += g2
    gP[:, 0] -= g1 + g2
    G = np.zeros_like(X)
    for a in range(3):
        np.add.at(G, cr[:, a], gP[:, a])
    return F, G, nu
