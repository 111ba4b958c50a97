import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from soliton_forge.flexibility import (FlexArc, FlexibilityError, FlexibleConfiguration, OrderingError,
                                       assign_levels, build_flexible_configuration, check_embedded,
                                       estimate_delta_theta, rot, tetrad_angles, unbalance_tetrad)
from soliton_forge.planar import (Arc, Envelope, PeriodicConfiguration,
                                  enumerate_intersections, lower_envelope, signed_angle)

from .conftest import cross_config, stacked_config, two_part_config

INF = math.inf


def _by_curves(cfg, levels):
    return {frozenset(n for n, _ in nd.curve_ids): levels[nd.id] for nd in enumerate_intersections(cfg)}


# ------------------------------------------------------------------ unbalancing

def test_unbalance_identity():
    v2 = np.array([-1.0, -1.0]) / math.sqrt(2)
    v3 = np.array([1.0, -1.0]) / math.sqrt(2)
    v1, v4 = unbalance_tetrad(v2, v3, 0.0, 0.0)
    np.testing.assert_allclose(v1, -v3, atol=1e-16)
    np.testing.assert_allclose(v4, -v2, atol=1e-16)


def test_unbalance_example():
    v3 = np.array([1.0, -1.0]) / math.sqrt(2)
    v2 = np.array([-1.0, -1.0]) / math.sqrt(2)
    v1, v4 = unbalance_tetrad(v2, v3, 0.01, 0.0)
    c, s = math.cos(0.02), math.sin(0.02)
    expect = -np.array([c * v3[0] - s * v3[1], s * v3[0] + c * v3[1]])
    np.testing.assert_allclose(v1, expect, atol=1e-15)
    assert signed_angle(-v1, v3) == pytest.approx(0.02, abs=1e-15)
    assert abs(abs(signed_angle(-v1, v3)) - 0.02) < 1e-15


def test_unbalance_ordering_error():
    # wedge of 0.05 between v1-side neighbours: rotating by 2*0.2 crosses v2
    v3 = np.array([math.cos(-0.3), math.sin(-0.3)])
    v2 = -np.array([math.cos(0.05 - 0.3), math.sin(0.05 - 0.3)])
    with pytest.raises(OrderingError):
        unbalance_tetrad(v2, v3, 0.2, 0.0)
    with pytest.raises(OrderingError):
        unbalance_tetrad(v2, v3, math.pi / 4, 0.0)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.3, 1.2), st.floats(0.3, 1.2), st.floats(-0.1, 0.1), st.floats(-0.1, 0.1))
def test_unbalance_angles(a, b, t1, t2):
    v3 = np.array([math.cos(-a), math.sin(-a)])
    v2 = -np.array([math.cos(b), math.sin(b)])
    v1, v4 = unbalance_tetrad(v2, v3, t1, t2)
    tet = np.array([v1, v2, v3, v4])
    got = tetrad_angles(tet)
    assert got[0] == pytest.approx(2 * t1, abs=1e-13)
    assert got[1] == pytest.approx(2 * t2, abs=1e-13)


# ------------------------------------------------------------------ levels

def test_levels_case1(case1):
    lev = assign_levels(case1, lower_envelope(case1))
    assert list(lev.values()) == [1]


def test_levels_stacked():
    cfg = stacked_config()
    got = _by_curves(cfg, assign_levels(cfg, lower_envelope(cfg)))
    # A, C, B form the bottom; A x B sits above C and is reached through both side nodes
    assert got == {frozenset({0, 1}): 1, frozenset({1, 2}): 1, frozenset({0, 2}): 2}


def test_levels_out_of_bottom():
    cfg = stacked_config()
    got = _by_curves(cfg, assign_levels(cfg, lower_envelope(cfg, [0, 1])))
    assert got == {frozenset({0, 1}): 1, frozenset({1, 2}): INF, frozenset({0, 2}): INF}


def test_levels_case3(case3):
    # crossing of g_0 with its translate by j sits at x = j/2 and is reached after j - 1 steps
    lev = assign_levels(case3, lower_envelope(case3))
    for nd in enumerate_intersections(case3):
        j = abs(nd.curve_ids[0][1] - nd.curve_ids[1][1])
        assert lev[nd.id] == j


def test_levels_monotone_in_bottom():
    cfg = stacked_config()
    env = lower_envelope(cfg)
    base = assign_levels(cfg, env)
    extra = Envelope(env.arcs + [Arc(0, 0, -0.81428349, 0.0)], env.curve_ids, env.x0, env.period_x)
    more = assign_levels(cfg, extra)
    assert all(more[k] <= base[k] for k in base)


def test_levels_reject_foreign_bottom():
    cfg = stacked_config()
    env = Envelope([Arc(7, 0, 0.0, 1.0)], frozenset({7}), cfg.x0, cfg.period[0])
    with pytest.raises(FlexibilityError):
        assign_levels(cfg, env)


# ------------------------------------------------------------------ flexible configuration

@pytest.mark.parametrize("make", [cross_config, stacked_config, two_part_config])
def test_theta_zero_identity(make):
    cfg = make()
    flex = build_flexible_configuration(cfg)
    for nd, orig in zip(flex.nodes, enumerate_intersections(cfg)):
        np.testing.assert_allclose(nd.point, orig.point, atol=1e-12)
        np.testing.assert_allclose(nd.tetrad, orig.tetrad, atol=1e-12)
    for arc in flex.arcs:
        g = cfg.curves[arc.provenance]
        k = round((arc.b - g.b) / cfg.period[0])
        assert arc.b == pytest.approx(g.b + k * cfg.period[0], abs=1e-12)
        assert arc.c == pytest.approx(g.c + k * cfg.period[1], abs=1e-12)
    assert check_embedded(flex)[0]


def test_theta_zero_identity_periodic(case1, case3):
    for cfg in (case1, case3):
        flex = build_flexible_configuration(cfg)
        for nd, orig in zip(flex.nodes, enumerate_intersections(cfg)):
            np.testing.assert_allclose(nd.point, orig.point, atol=1e-12)


def test_case1_example(case1):
    flex = build_flexible_configuration(case1, [(0.005, -0.003)])
    a1, a2 = tetrad_angles(flex.nodes[0].tetrad)
    assert a1 == pytest.approx(0.01, abs=1e-10)
    assert a2 == pytest.approx(-0.006, abs=1e-10)
    assert check_embedded(flex)[0]


def test_two_parts():
    cfg = two_part_config()
    flex = build_flexible_configuration(cfg)
    assert flex.parts == 2
    got = {frozenset(n for n, _ in nd.curve_ids): (nd.part, nd.level) for nd in flex.nodes}
    # part 2 re-levels against the piece of D between its crossings with B and A
    assert got[frozenset({3, 2})] == (2, 1)
    assert got[frozenset({3, 0})] == (2, 1)
    assert got[frozenset({3, 1})] == (2, 2)
    assert flex.parts <= len(flex.nodes)


@pytest.mark.parametrize("make", [stacked_config, two_part_config])
def test_random_theta_contract(make):
    cfg = make()
    n = len(enumerate_intersections(cfg))
    rng = np.random.default_rng(5)
    for _ in range(10):
        th = rng.uniform(-1e-3, 1e-3, (n, 2))
        flex = build_flexible_configuration(cfg, th)
        for nd in flex.nodes:
            a1, a2 = tetrad_angles(nd.tetrad)
            assert abs(a1 - 2 * th[nd.id, 0]) < 1e-10
            assert abs(a2 - 2 * th[nd.id, 1]) < 1e-10
        assert check_embedded(flex)[0]


def test_arcs_are_reaper_pieces_meeting_at_nodes(case3):
    th = np.random.default_rng(2).uniform(-1e-3, 1e-3, (3, 2))
    flex = build_flexible_configuration(case3, th)
    a = case3.a
    for arc in flex.arcs:
        for end, x in ((arc.start, arc.x_lo), (arc.end, arc.x_hi)):
            if end is None:
                continue
            p = flex.nodes[end[0]].point + end[1] * a
            assert x == pytest.approx(p[0], abs=1e-12)
            assert arc.curve.y(p[0]) == pytest.approx(p[1], abs=1e-9)
    # four arcs meet at every node (counting translates)
    count = {nd.id: 0 for nd in flex.nodes}
    for arc in flex.arcs:
        for end in (arc.start, arc.end):
            if end is not None:
                count[end[0]] += 1
    assert set(count.values()) == {4}


def test_translation_commutes(case1):
    th = [(0.002, -0.001)]
    flex = build_flexible_configuration(case1, th)
    ax, ay = case1.period
    moved = PeriodicConfiguration(tuple(g.shifted(ax, ay) for g in case1.curves), case1.period, case1.epsilon)
    flex2 = build_flexible_configuration(moved, th)
    p1 = flex.nodes[0].point
    p2 = flex2.nodes[0].point
    d = p2 - p1
    k = round(d[0] / ax)
    np.testing.assert_allclose(d, k * np.array([ax, ay]), atol=1e-10)
    np.testing.assert_allclose(flex2.nodes[0].tetrad, flex.nodes[0].tetrad, atol=1e-12)


def test_continuity_probe(case3):
    base = build_flexible_configuration(case3)
    d = np.random.default_rng(3).uniform(-1, 1, (3, 2))

    def disp(t):
        f = build_flexible_configuration(case3, t * d)
        return max(np.linalg.norm(a.point - b.point) for a, b in zip(f.nodes, base.nodes))

    r = disp(5e-4) / disp(1e-3)
    assert 0.4 <= r <= 0.6


def test_drift_recorded(case3):
    base = build_flexible_configuration(case3)
    assert all(nd.drift == 0.0 for nd in base.nodes)
    th = np.random.default_rng(5).uniform(-1e-3, 1e-3, (3, 2))
    flex = build_flexible_configuration(case3, th)
    for nd, orig in zip(flex.nodes, enumerate_intersections(case3)):
        assert nd.drift == pytest.approx(np.linalg.norm(nd.point - orig.point), abs=1e-15)
    assert max(nd.drift for nd in flex.nodes) > 0


def test_check_embedded_witness():
    cfg = cross_config()
    # two long arcs of the crossing curves, no registered nodes
    arcs = [FlexArc(-math.pi / 4, 0.0, -1.0, 1.0, (0, 0), (0, 0), 0),
            FlexArc(math.pi / 4, 0.0, -1.0, 1.0, (0, 0), (0, 0), 1)]
    flex = FlexibleConfiguration(cfg, [], arcs, 1, [])
    ok, wit = check_embedded(flex)
    assert not ok
    assert len(wit) == 1
    np.testing.assert_allclose(wit[0]["point"], [0.0, 0.5 * math.log(2)], atol=1e-12)


def test_theta_too_large(case1):
    with pytest.raises(FlexibilityError):
        build_flexible_configuration(case1, [(0.8, 0.0)])
    with pytest.raises(FlexibilityError):
        build_flexible_configuration(case1, [(0.0, 0.0), (0.0, 0.0)])


def test_estimate_delta_theta(case1):
    est = estimate_delta_theta(case1, [1.0, 0.0])
    assert est["radius"] > 0
    assert est["width"] < 1e-5
    lo, hi = est["bracket"]
    if hi > lo:
        # just above the bracket the construction must fail or lose embeddedness
        with pytest.raises(FlexibilityError):
            f = build_flexible_configuration(case1, [(min(hi * 1.01, 0.785), 0.0)])
            if not check_embedded(f)[0]:
                raise FlexibilityError("not embedded")
    with pytest.raises(FlexibilityError):
        estimate_delta_theta(case1, [0.0, 0.0])


def test_estimate_delta_theta_mirror():
    # x -> -x reverses the tetrad order, which swaps the two unbalancing angles
    cfg = cross_config()
    for d in ([1.0, 0.0], [1.0, -0.5], [0.3, 1.0]):
        a = estimate_delta_theta(cfg, d)
        b = estimate_delta_theta(cfg, d[::-1])
        assert a["radius"] > 0
        assert abs(a["radius"] - b["radius"]) <= max(a["width"], b["width"]) + 1e-12


def test_twice_estimate_fails(case3):
    d = np.zeros((3, 2))
    d[0, 0] = 1.0
    est = estimate_delta_theta(case3, d)
    t = 2 * est["radius"]
    if t < math.pi / 4:
        try:
            f = build_flexible_configuration(case3, t * d)
        except FlexibilityError:
            return
        ok, wit = check_embedded(f)
        assert not ok and wit


def test_rot_is_ccw():
    np.testing.assert_allclose(rot(math.pi / 2) @ [1.0, 0.0], [0.0, 1.0], atol=1e-16)


def test_flex_json_round_trip(case3):
    th = np.random.default_rng(4).uniform(-1e-3, 1e-3, (3, 2))
    flex = build_flexible_configuration(case3, th)
    d = flex.to_dict()
    back = FlexibleConfiguration.from_dict(case3, d)
    assert back.to_dict() == d
