import io

import numpy as np
import pytest

from spinodal import fespace as fes
from spinodal import interface as itf
from spinodal import mesh as msh


def circle_levelset(cx, cy, r, n=256, t=0.0):
    th = np.linspace(0, 2 * np.pi, n, endpoint=False)
    pts = np.column_stack([cx + r * np.cos(th), cy + r * np.sin(th)])
    return itf.LevelSet([itf.Polyline(pts, True)], t=t)


def vline_levelset(x0, t=0.0):
    pts = np.column_stack([np.full(41, x0), np.linspace(-1, 1, 41)])
    return itf.LevelSet([itf.Polyline(pts, False)], t=t)


@pytest.mark.parametrize("degree", [1, 2])
def test_extract_plane_field(degree):
    s = fes.FunctionSpace(msh.build_initial_mesh(4), degree)
    f = fes.interpolate(s, lambda x, y: x)
    ls = itf.extract_zero_level_set(f)
    assert len(ls.polylines) == 1
    p = ls.polylines[0]
    assert not p.closed
    assert np.abs(p.points[:, 0]).max() <= 1e-12
    ys = np.sort(p.points[:, 1])
    assert ys[0] == pytest.approx(-1.0, abs=1e-10)
    assert ys[-1] == pytest.approx(1.0, abs=1e-10)
    length = np.sum(np.linalg.norm(np.diff(p.points, axis=0), axis=1))
    assert length == pytest.approx(2.0, abs=1e-10)


def test_extract_constant_is_empty():
    s = fes.FunctionSpace(msh.build_initial_mesh(2), 2)
    f = fes.interpolate(s, lambda x, y: np.ones_like(x))
    assert itf.extract_zero_level_set(f).is_empty


def test_extract_circle_radius_accuracy():
    # analytic circle oracle: the quadratic is exact in P2, the contouring
    # linearization is O(h^2) accurate
    s = fes.FunctionSpace(msh.build_initial_mesh(16), 2)
    f = fes.interpolate(s, lambda x, y: x ** 2 + y ** 2 - 0.25)
    ls = itf.extract_zero_level_set(f)
    loops = ls.closed_loops()
    assert len(loops) == 1
    r = np.linalg.norm(loops[0].points, axis=1)
    assert np.abs(r - 0.5).max() <= 0.01


def test_extraction_consistency_vertices_are_zeros():
    s = fes.FunctionSpace(msh.build_initial_mesh(6), 1)
    f = fes.interpolate(s, lambda x, y: np.sin(2 * x) + 0.3 * y + 0.1)
    ls = itf.extract_zero_level_set(f)
    fmax = np.abs(f.coefficients).max()
    for p in ls.polylines:
        for x, y in p.points:
            assert abs(f(x, y)) <= 1e-8 * fmax


def test_extraction_invariant_under_refinement_p1():
    tri = msh.build_initial_mesh(4)
    s = fes.FunctionSpace(tri, 1)
    f = fes.interpolate(s, lambda x, y: x + 0.421 * y - 0.07)
    fine = msh.refine(tri, tri.active_ids)
    s2 = fes.FunctionSpace(fine, 1)
    g = fes.transfer(f, s2)
    a = itf.extract_zero_level_set(f)
    b = itf.extract_zero_level_set(g)
    assert itf.hausdorff_distance(a, b) <= 1e-10


def test_one_sided_distance_identity_and_circles():
    A = circle_levelset(0, 0, 0.5)
    assert itf.one_sided_distance(A, A) <= 1e-14
    B = circle_levelset(0, 0, 0.6, n=720)
    d = itf.one_sided_distance(A, B)
    assert d == pytest.approx(0.1, abs=2e-4)


def test_one_sided_distance_translation():
    A = vline_levelset(0.0)
    for d in (1e-3, 2.5e-2):
        B = itf.LevelSet([itf.Polyline(A.polylines[0].points + [d, 0.0], False)])
        assert itf.one_sided_distance(A, B) == pytest.approx(d, rel=1e-12)


def test_one_sided_distance_empty_raises():
    A = vline_levelset(0.0)
    with pytest.raises(itf.EmptyLevelSetError):
        itf.one_sided_distance(A, itf.LevelSet([]))


def test_rate_study_published_reference_numbers():
    # the published DOF triple and level-set gaps of the epsilon=0.01 study
    d1, d2 = 0.00173, 0.0004
    samples = [
        itf.RateSample(0.04, 5995, vline_levelset(0.0), 0.01),
        itf.RateSample(0.02, 9766, vline_levelset(d1), 0.01),
        itf.RateSample(0.01, 12565, vline_levelset(d1 + d2), 0.01),
    ]
    res = itf.rate_study(samples)
    assert res.dof_predictors[0] == pytest.approx(0.2394, abs=1e-4)
    assert res.distances[0] == pytest.approx(d1, rel=1e-12)
    assert res.distances[1] == pytest.approx(d2, rel=1e-12)
    assert res.distance_ratios[0] == pytest.approx(0.2312, abs=1e-4)


def test_rate_study_identical_runs():
    ls = vline_levelset(0.3)
    samples = [itf.RateSample(tol, 100 * (k + 1), ls, 0.1)
               for k, tol in enumerate([0.4, 0.2, 0.1])]
    res = itf.rate_study(samples)
    assert res.distances == [0.0, 0.0]


def test_rate_study_synthetic_halving():
    d = 1e-3
    samples = [
        itf.RateSample(0.8, 10, vline_levelset(0.0)),
        itf.RateSample(0.4, 20, vline_levelset(4 * d)),
        itf.RateSample(0.2, 40, vline_levelset(6 * d)),
        itf.RateSample(0.1, 80, vline_levelset(7 * d)),
    ]
    res = itf.rate_study(samples)
    assert res.distance_ratios == pytest.approx([0.5, 0.5], rel=1e-12)


def test_rate_study_comparability_errors():
    good = [
        itf.RateSample(0.4, 10, vline_levelset(0.0), 0.1),
        itf.RateSample(0.2, 20, vline_levelset(0.1), 0.1),
        itf.RateSample(0.1, 40, vline_levelset(0.15), 0.1),
    ]
    with pytest.raises(ValueError):
        itf.rate_study(good[:2])
    bad_t = [good[0], good[1],
             itf.RateSample(0.1, 40, vline_levelset(0.15, t=1.0), 0.1)]
    with pytest.raises(itf.ComparabilityError):
        itf.rate_study(bad_t)
    bad_eps = [good[0], good[1], itf.RateSample(0.1, 40, vline_levelset(0.15), 0.2)]
    with pytest.raises(itf.ComparabilityError):
        itf.rate_study(bad_eps)


def test_circle_drift_frozen_field():
    snaps = [circle_levelset(0.1, -0.2, 0.4, t=0.0), circle_levelset(0.1, -0.2, 0.4, t=1.0)]
    rep = itf.circle_drift(snaps)
    assert not rep.topology_changed
    assert rep.drift == pytest.approx(0.0, abs=1e-14)


def test_circle_drift_topology_change():
    snaps = [
        circle_levelset(0, 0, 0.4),
        itf.LevelSet([circle_levelset(0, 0, 0.2).polylines[0],
                      circle_levelset(0.5, 0, 0.1).polylines[0]]),
    ]
    rep = itf.circle_drift(snaps)
    assert rep.topology_changed
    assert rep.snapshots_used == 1


def test_loop_mean_radius_nearest():
    ls = itf.LevelSet([
        circle_levelset(0.3, 0.0, 0.25).polylines[0],
        circle_levelset(-0.3, 0.0, 0.3).polylines[0],
    ])
    c, r = itf.loop_mean_radius(ls, (0.3, 0.0))
    assert c[0] == pytest.approx(0.3, abs=1e-12)
    assert r == pytest.approx(0.25, abs=1e-4)


def test_sigma_constant():
    assert itf.hele_shaw_sigma() == pytest.approx(np.sqrt(2) / 3, abs=1e-10)
    assert itf.HeleShawConstants.compute().sigma == pytest.approx(
        np.sqrt(2) / 3, abs=1e-12
    )


def test_levelset_file_roundtrip():
    ls = itf.LevelSet(
        [itf.Polyline(np.array([[0.0, 0.1], [0.2, 0.3], [0.4, -0.5]]), False),
         circle_levelset(0, 0, 0.25, n=8).polylines[0]],
        t=0.125,
    )
    buf = io.StringIO()
    itf.write_levelset(buf, ls)
    buf.seek(0)
    back = itf.read_levelset(buf)
    assert back.t == 0.125
    assert len(back.polylines) == 2
    assert back.polylines[0].closed is False
    assert back.polylines[1].closed is True
    for a, b in zip(ls.polylines, back.polylines):
        assert np.array_equal(a.points, b.points)
