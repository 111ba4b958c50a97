"""Normal-offset descent on the discrete soliton residual."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .discrete import QuotientGeometry, objective, objective_grad
from .mesh import MeshError, SurfaceMesh

MIRROR = np.array([1.0, 1.0, -1.0])


class RefineError(ValueError):
    pass


@dataclass(frozen=True)
class RefineOptions:
    max_iter: int = 50
    step_rule: str = "backtracking"  # or "fixed"
    step: float = 0.0  # initial (or fixed) step; 0 picks one from the edge scale
    tol: float = 1e-14  # stop when the objective decrease falls below this
    symmetric: bool = True
    min_angle_deg: float = 5.0
    shrink: float = 0.5
    max_backtracks: int = 40
    max_offset_frac: float = 0.1  # initial max offset as a fraction of the shortest edge

    def __post_init__(self):
        if self.step_rule not in ("backtracking", "fixed"):
            raise RefineError(f"unknown step rule {self.step_rule!r}")
        if self.max_iter < 0 or self.tol <= 0 or not (0 < self.shrink < 1) or self.step < 0:
            raise RefineError("refine thresholds must be positive")


@dataclass
class RefineResult:
    mesh: SurfaceMesh
    history: list = field(default_factory=list)  # dicts: iteration, objective, step, max_offset
    flag: str = "converged"

    def history_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "objective", "step", "max_offset"])
        for h in self.history:
            w.writerow([h["iteration"], repr(h["objective"]), repr(h["step"]), repr(h["max_offset"])])
        return buf.getvalue()

    @property
    def objectives(self):
        return [h["objective"] for h in self.history]


def _mirror_rep_pairs(mesh: SurfaceMesh, qg: QuotientGeometry):
    if not len(mesh.mirror_pairs):
        return np.zeros((0, 4), int)
    i, j = mesh.mirror_pairs[:, 0], mesh.mirror_pairs[:, 1]
    ri, rj = qg.vid_to_rep[i], qg.vid_to_rep[j]
    keep = ri <= rj
    out = np.c_[i[keep], j[keep], ri[keep], rj[keep]]
    # one constraint per rep
    _, first = np.unique(out[:, 3], return_index=True)
    return out[np.sort(first)]


def _enforce_mirror(X, qg, mp):
    if not len(mp):
        return X
    i, j, ri, rj = mp.T
    img = (X[ri] + qg.offset[i]) * MIRROR - qg.offset[j]
    self_ = ri == rj
    X = X.copy()
    X[rj[~self_]] = img[~self_]
    X[rj[self_]] = 0.5 * (X[rj[self_]] + img[self_])
    return X


def _min_angle(X, qg):
    P = X[qg.corner_rep] + qg.corner_off
    out = np.inf
    for a in range(3):
        u = P[:, (a + 1) % 3] - P[:, a]
        v = P[:, (a + 2) % 3] - P[:, a]
        c = np.einsum("ij,ij->i", u, v) / (np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
        out = min(out, float(np.degrees(np.arccos(np.clip(c, -1, 1))).min()))
    return out


def _min_edge(X, qg):
    P = X[qg.corner_rep] + qg.corner_off
    return float(min(np.linalg.norm(P[:, (a + 1) % 3] - P[:, a], axis=1).min() for a in range(3)))


def refine_mesh(mesh: SurfaceMesh, opts: RefineOptions = RefineOptions()) -> RefineResult:
    """Reduce sum_v (H_v - e_y.nu_v)^2 A_v by offsets along vertex normals."""
    if mesh.min_angle_deg() < opts.min_angle_deg:
        raise MeshError("input mesh fails the quality check")
    qg = QuotientGeometry.from_mesh(mesh)
    X = qg.rep_positions(mesh).copy()
    mp = _mirror_rep_pairs(mesh, qg) if opts.symmetric else np.zeros((0, 4), int)
    movable = qg.interior.astype(float)
    F = objective(X, qg)
    if not math.isfinite(F):
        raise RefineError("non-finite objective")
    history = [{"iteration": 0, "objective": F, "step": 0.0, "max_offset": 0.0}]
    h_edge = _min_edge(X, qg)
    alpha = opts.step
    flag = "max_iter"
    for it in range(1, opts.max_iter + 1):
        F0, G, nu = objective_grad(X, qg)
        gd = np.einsum("ij,ij->i", G, nu) * movable
        if len(mp):
            _, _, ri, rj = mp.T
            avg = 0.5 * (gd[ri] + gd[rj])
            gd[ri] = avg
            gd[rj] = avg
        gmax = float(np.abs(gd).max())
        if gmax == 0.0:
            flag = "converged"
            break
        if alpha <= 0:
            alpha = opts.max_offset_frac * h_edge / gmax
        accepted = False
        quality_hit = False
        tries = 1 if opts.step_rule == "fixed" else opts.max_backtracks
        for _ in range(tries):
            Xn = _enforce_mirror(X - (alpha * gd)[:, None] * nu, qg, mp)
            if _min_angle(Xn, qg) < opts.min_angle_deg:
                quality_hit = True
                alpha *= opts.shrink
                continue
            Fn = objective(Xn, qg)
            if math.isfinite(Fn) and Fn <= F:
                accepted = True
                break
            alpha *= opts.shrink
        if not accepted:
            flag = "quality_limited" if quality_hit else "no_descent"
            break
        dec = F - Fn
        history.append({"iteration": it, "objective": Fn, "step": alpha,
                        "max_offset": float(alpha * gmax)})
        X, F = Xn, Fn
        if dec < opts.tol:
            flag = "converged"
            break
        if opts.step_rule == "backtracking":
            alpha /= opts.shrink
    out = mesh.copy()
    out.vertices = qg.expand(X)
    out.meta["refine"] = {"options": asdict(opts), "flag": flag, "iterations": len(history) - 1,
                          "initial_objective": history[0]["objective"], "final_objective": F}
    return RefineResult(out, history, flag)


__all__ = ["RefineOptions", "RefineResult", "RefineError", "refine_mesh"]
