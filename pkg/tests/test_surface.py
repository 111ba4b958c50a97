import math

import numpy as np
import pytest
from scipy.spatial import cKDTree

from soliton_forge.flexibility import build_flexible_configuration
from soliton_forge.mesh import MeshError, SurfaceMesh
from soliton_forge.planar import GrimReaperCurve
from soliton_forge.surface import (ClearanceError, GluingError, build_initial_surface, plan_gluing,
                                   quintic, reaper_cylinder_mesh, round_cylinder_mesh, scherk_model_mesh)


def implicit(V, m=1):
    x, y, z = (m * V).T
    return np.sin(z) - np.sinh(x) * np.sinh(y)


@pytest.fixture(scope="module")
def cross_mesh(cross_flex):
    return build_initial_surface(cross_flex, 0.1)


# ------------------------------------------------------------------ profile

def test_quintic_profile():
    t = np.linspace(0, 1, 101)
    q = quintic(t)
    assert q[0] == 0.0 and q[-1] == 1.0
    assert np.all(np.diff(q) >= 0)
    h = 1e-4
    for e in (0.0, 1.0):
        d1 = (quintic(e + h) - quintic(e - h)) / (2 * h)
        d2 = (quintic(e + h) - 2 * quintic(e) + quintic(e - h)) / h ** 2
        assert abs(d1) < 1e-6 and abs(d2) < 1e-3
    assert quintic(0.5) == pytest.approx(0.5)
    assert quintic(-3.0) == 0.0 and quintic(7.0) == 1.0


# ------------------------------------------------------------------ extrusions

def test_cylinder_meshes_tags():
    m = round_cylinder_mesh(1.0, 2.0, 16)
    assert m.z_period == 2.0
    assert m.pair_error() == 0.0
    assert not m.boundary_vertices().any()
    r = reaper_cylinder_mesh(GrimReaperCurve(0.2, 0.1), (-1, 1), 1.0, 16)
    x, y, _ = r.vertices.T
    np.testing.assert_allclose(y, -np.log(np.cos(x - 0.2)) + 0.1, atol=1e-12)
    assert r.min_angle_deg() >= 5.0


# ------------------------------------------------------------------ model tower

@pytest.mark.parametrize("res", [16, 32])
def test_scherk_implicit_equation(res):
    mesh = scherk_model_mesh(1, res, 5.0)
    assert np.abs(implicit(mesh.vertices)).max() <= 1e-8
    assert mesh.min_angle_deg() >= 5.0
    assert mesh.z_period == pytest.approx(2 * math.pi)
    assert mesh.pair_error() <= 1e-9


def test_scherk_m2_equation():
    mesh = scherk_model_mesh(2, 16, 5.0)
    assert np.abs(implicit(mesh.vertices, 2)).max() <= 1e-8
    assert mesh.z_period == pytest.approx(2 * math.pi)


def test_scherk_asymptotic_to_planes():
    mesh = scherk_model_mesh(1, 32, 5.0)
    x, y, z = mesh.vertices.T
    bound = math.asinh(1 / math.sinh(5.0))
    assert bound == pytest.approx(0.013476, abs=1e-6)
    edge_x = np.abs(x) >= 5.0 - 1e-9
    edge_y = np.abs(y) >= 5.0 - 1e-9
    assert edge_x.any() and edge_y.any()
    assert np.abs(y[edge_x]).max() <= bound + 1e-12
    assert np.abs(x[edge_y]).max() <= bound + 1e-12
    assert np.all(np.minimum(np.abs(x), np.abs(y)) <= 5.0 + 1e-9)


def _quotient_points(mesh):
    rep, _ = mesh.quotient()
    V = mesh.vertices[np.unique(rep)]
    z = np.mod(V[:, 2] + math.pi, 2 * math.pi)
    return np.c_[V[:, 0] + 100, V[:, 1] + 100, z]


def test_scherk_m2_is_scaled_m1():
    # the m = 2 tower is the m = 1 tower over twice the box, scaled by 1/2 and stacked twice
    m2 = scherk_model_mesh(2, 16, 5.0)
    m1 = scherk_model_mesh(1, 16, 10.0)
    A = _quotient_points(m2)
    V1 = m1.vertices[np.unique(m1.quotient()[0])] / 2
    B = np.vstack([V1, V1 + [0, 0, math.pi]])
    B = np.c_[B[:, 0] + 100, B[:, 1] + 100, np.mod(B[:, 2] + math.pi, 2 * math.pi)]
    assert len(A) == len(B)
    box = [1e3, 1e3, 2 * math.pi]
    d, _ = cKDTree(np.mod(B, box), boxsize=box).query(np.mod(A, box))
    assert d.max() <= 1e-12
    d, _ = cKDTree(np.mod(A, box), boxsize=box).query(np.mod(B, box))
    assert d.max() <= 1e-12


def test_scherk_wings_meet_lattice():
    # the only free boundary is the outer rim of the box
    mesh = scherk_model_mesh(1, 32, 8.0)
    V = mesh.vertices[mesh.boundary_vertices()]
    assert np.all(np.maximum(np.abs(V[:, 0]), np.abs(V[:, 1])) >= 8.0 - 1e-9)


def test_scherk_mean_curvature_converges():
    from soliton_forge.discrete import QuotientGeometry, vertex_fields
    sups = []
    for res in (16, 32, 64):
        mesh = scherk_model_mesh(1, res, 8.0)
        qg = QuotientGeometry.from_mesh(mesh)
        fl = vertex_fields(qg.rep_positions(mesh), qg)
        sups.append(np.abs(fl["H"][qg.interior]).max())
    assert sups[0] / sups[1] >= 3 and sups[1] / sups[2] >= 3


def test_scherk_rejects_coarse():
    with pytest.raises(MeshError):
        scherk_model_mesh(1, 8, 5.0)
    with pytest.raises(MeshError):
        scherk_model_mesh(0, 16, 5.0)


# ------------------------------------------------------------------ glued surface

def test_cross_period_and_mirror(cross_mesh):
    tau = 0.1
    assert cross_mesh.z_period == pytest.approx(2 * math.pi * tau, abs=0)
    zp = cross_mesh.z_pairs
    assert len(zp) > 0
    d = cross_mesh.vertices[zp[:, 1]] - cross_mesh.vertices[zp[:, 0]]
    np.testing.assert_array_equal(d[:, :2], 0.0)
    np.testing.assert_allclose(d[:, 2], zp[:, 2] * 2 * math.pi * tau, rtol=0, atol=1e-15)
    assert len(cross_mesh.mirror_pairs) > 0
    assert cross_mesh.mirror_error() <= 1e-12
    assert cross_mesh.min_angle_deg() >= 5.0


def test_cross_is_a_surface(cross_mesh):
    # every quotient edge is shared by at most two faces and the orientation is consistent
    rep, off = cross_mesh.quotient()
    F = cross_mesh.faces
    keys = {}
    for f in F:
        for a, b in ((0, 1), (1, 2), (2, 0)):
            ka = (rep[f[a]], tuple(np.round(off[f[a]] - off[f[b]], 6)), rep[f[b]])
            keys[ka] = keys.get(ka, 0) + 1
    assert max(keys.values()) == 1
    opposite = sum(1 for (i, d, j) in keys if (j, tuple(-np.asarray(d) + 0.0), i) in keys)
    assert opposite > 0.9 * len(keys)


def test_case1_translation_invariance(case1):
    flex = build_flexible_configuration(case1)
    mesh = build_initial_surface(flex, 0.1)
    ap = mesh.a_pairs
    assert len(ap) > 0
    d = mesh.vertices[ap[:, 1]] - mesh.vertices[ap[:, 0]]
    expect = ap[:, 3, None] * np.array([2.0, 0.5, 0.0])
    assert np.abs(d - expect).max() <= 1e-9
    assert mesh.pair_error() <= 1e-9
    assert mesh.min_angle_deg() >= 5.0


def test_reaper_region_on_curves(cross_mesh, cross_flex):
    V = cross_mesh.vertices
    reg = cross_mesh.fields["region"]
    sel = reg == 2
    assert sel.any()
    err = np.full(sel.sum(), np.inf)
    x, y = V[sel, 0], V[sel, 1]
    for arc in cross_flex.arcs:
        g = arc.curve
        ok = g.contains(x)
        e = np.where(ok, np.abs(g.y(np.where(ok, x, g.b)) - y) / (1 + np.abs(y)), np.inf)
        err = np.minimum(err, e)
    assert err.max() <= 1e-10


def test_core_on_scaled_tower(cross_mesh):
    plan = cross_mesh.meta["plan"]
    V = cross_mesh.vertices
    reg = cross_mesh.fields["region"]
    for npl in plan["nodes"]:
        Ai = np.linalg.inv(np.c_[npl["t1"], npl["t2"]])
        tk = npl["tau_k"]
        XY = (V[:, :2] - npl["point"]) @ Ai.T / tk
        core = (reg == 0) & (np.abs(XY).max(1) * tk < npl["r_in"])
        assert core.any()
        Z = V[core, 2] / tk + math.pi / 2
        r = np.sin(Z) - np.sinh(XY[core, 0]) * np.sinh(XY[core, 1])
        assert np.abs(r).max() <= 1e-8


def test_plan_radii(cross_flex):
    plan = plan_gluing(cross_flex, 0.1)
    for npl in plan.nodes:
        assert npl.r_in < npl.r_out
    assert plan.rows % 4 == 0


def test_clearance_error(case1):
    # at tau = 0.5 the inner radius 3*tau_k = 1.5 exceeds the room left between nodes
    flex = build_flexible_configuration(case1)
    # one node per period: its nearest neighbour is its own translate by the period
    assert 1.5 > min(2 * math.sqrt(0.5), 0.45 * math.hypot(2.0, 0.5))
    with pytest.raises(ClearanceError):
        build_initial_surface(flex, 0.5)


def test_m2_glued(cross_flex):
    mesh = build_initial_surface(cross_flex, 0.1, m=2)
    assert mesh.pair_error() <= 1e-12
    assert mesh.min_angle_deg() >= 5.0
    assert mesh.meta["plan"]["nodes"][0]["tau_k"] == pytest.approx(0.05)


def test_bad_inputs(cross_flex):
    with pytest.raises(GluingError):
        build_initial_surface(cross_flex, -0.1)
    with pytest.raises(GluingError):
        build_initial_surface(cross_flex, 0.1, m=0)


def test_obj_round_trip(cross_mesh):
    text = cross_mesh.obj_text()
    back = SurfaceMesh.from_obj_text(text, cross_mesh.sidecar())
    np.testing.assert_allclose(back.vertices, cross_mesh.vertices, atol=0)
    np.testing.assert_array_equal(back.faces, cross_mesh.faces)
    np.testing.assert_array_equal(back.pairs, cross_mesh.pairs)
    assert back.z_period == cross_mesh.z_period
