from __future__ import annotations

import numpy as np
import pytest

from orbitkit import fixtures as fx
from orbitkit.fields import Family
from orbitkit.flow import FlowWord, flow_word, random_words
from orbitkit.geometry import euclidean, sample_points
from orbitkit.intertwine import (
    FiberCoordinateError,
    MappedSystem,
    MappedSystemError,
    SmoothMap,
    TrivializationError,
    UnpairedIndexError,
    build_trivialization,
    check_intertwine,
    fiber_coordinate,
    lift_word,
    overlap_consistency,
    rank_along_orbit,
    restricted_rank,
    sample_fiber,
    sample_u0,
    semiconjugacy_residual,
    verify_trivialization,
)
from orbitkit.orbit import orbit_dimension

from conftest import IDENTITY, NORTH


def _rx(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])


# --- SmoothMap and MappedSystem -------------------------------------------------------


def test_smooth_map_jacobian_matches_finite_differences(so3_sys):
    R3 = euclidean(3, "R3", ("x", "y", "z"))
    R2 = euclidean(2, "R2", ("u", "v"))
    phi = SmoothMap.from_strings("nl", R3, R2, ["sin(x)*y + z^2", "exp(x - z) / (1 + y^2)"])
    h = 1e-6
    for p in np.random.default_rng(0).uniform(-1, 1, (10, 3)):
        fd = np.empty((2, 3))
        for j in range(3):
            e = np.zeros(3)
            e[j] = h
            fd[:, j] = (phi(p + e) - phi(p - e)) / (2 * h)
        np.testing.assert_allclose(phi.jacobian(p), fd, atol=1e-6)
    assert so3_sys.phi.jacobian(IDENTITY).shape == (3, 9)


def test_mapped_system_validation(proj_sys):
    s = proj_sys
    with pytest.raises(MappedSystemError, match="not total"):
        MappedSystem("x", s.phi, s.F0, s.F1, ((0, 0),))
    with pytest.raises(MappedSystemError, match="not onto"):
        MappedSystem("x", s.phi, s.F0, s.F1, ((0, 0), (1, 0)))
    with pytest.raises(MappedSystemError, match="out of range"):
        MappedSystem("x", s.phi, s.F0, s.F1, ((0, 0), (1, 1), (2, 1)))
    with pytest.raises(MappedSystemError, match="F0 lives"):
        MappedSystem("x", s.phi, s.F1, s.F1, ((0, 0), (1, 1)))


def test_lift_picks_first_listed_pair(proj_sys):
    s = proj_sys
    multi = MappedSystem("m", s.phi, s.F0, s.F1, ((1, 1), (0, 1), (0, 0)))
    assert multi.lift_index(1) == 1
    assert multi.lift_index(0) == 0
    with pytest.raises(UnpairedIndexError):
        multi.lift_index(5)


# --- relatedness and rank ---------------------------------------------------------------


def test_check_intertwine_projection(proj_sys):
    rep = check_intertwine(proj_sys, 64, 1e-12)
    assert rep.passed and rep.max_residual == 0.0
    assert len(rep.pairs) == 2


def test_check_intertwine_so3(so3_sys):
    rep = check_intertwine(so3_sys, 64, 1e-8)
    assert rep.passed
    assert rep.max_residual <= 1e-8


def test_check_intertwine_corrupted_pair(proj_sys):
    s = proj_sys
    bad = MappedSystem("bad", s.phi, s.F0, s.F1, ((0, 0), (1, 0), (0, 1)))
    rep = check_intertwine(bad, 32, 1e-8)
    assert not rep.passed
    assert rep.max_residual == 1.0


def test_check_intertwine_two_disks_and_degenerate():
    assert check_intertwine(fx.two_disks(), 64, 1e-10).passed
    assert check_intertwine(fx.radius_squared(), 32, 1e-10).passed


def test_rank_along_orbit_projection(proj_sys):
    rep = rank_along_orbit(proj_sys, [0.3, -0.4], n_words=20)
    assert rep.constant and set(rep.ranks) == {1}
    assert len(rep.ranks) == 21


def test_rank_along_orbit_so3(so3_sys):
    rep = rank_along_orbit(so3_sys, IDENTITY, n_words=20)
    assert rep.constant and set(rep.ranks) == {2}


def test_rank_along_orbit_radius_squared():
    rep = rank_along_orbit(fx.radius_squared(), [1.0, 0.0], n_words=20)
    assert rep.constant and set(rep.ranks) == {0}


def test_restricted_rank_differs_from_full_jacobian_rank():
    sys = fx.radius_squared()
    assert np.linalg.matrix_rank(sys.phi.jacobian([1.0, 0.0])) == 1
    assert restricted_rank(sys, [1.0, 0.0]) == 0


def test_rank_along_orbit_two_disks_skips_incomplete():
    rep = rank_along_orbit(fx.two_disks(), [5.0, 0.0], n_words=20, t_max=3.0)
    assert rep.constant and set(rep.ranks) == {2}
    assert rep.skipped > 0


# --- lifting --------------------------------------------------------------------------


def test_lift_projection_word(proj_sys):
    w = FlowWord(((0, 1.5),))
    assert lift_word(proj_sys, w) == FlowWord(((0, 1.5),))
    assert semiconjugacy_residual(proj_sys, w, [0.2, 0.7]) <= 1e-9


def test_lift_empty_word(proj_sys):
    assert lift_word(proj_sys, FlowWord()) == FlowWord()


def test_lift_rejects_bad_index(proj_sys):
    with pytest.raises(IndexError):
        lift_word(proj_sys, FlowWord(((4, 1.0),)))


def test_so3_three_rotation_semiconjugacy(so3_sys):
    rng = np.random.default_rng(3)
    w = FlowWord(tuple((int(i), float(t)) for i, t in zip(rng.integers(0, 3, 3), rng.uniform(-1, 1, 3))))
    assert semiconjugacy_residual(so3_sys, w, IDENTITY) <= 1e-6


@pytest.mark.parametrize("name", ["projection", "so3_s2", "identity_line", "radius_squared"])
def test_semiconjugacy_random_words(name):
    sys = getattr(fx, name)()
    rng = np.random.default_rng(7)
    starts = sample_points(sys.phi.domain, 4, seed=1)
    for i, w in enumerate(random_words(rng, len(sys.F1), 20, 5, 1.0)):
        assert semiconjugacy_residual(sys, w, starts[i % 4]) <= 1e-6


# --- trivializations ----------------------------------------------------------------


def test_projection_trivialization(proj_triv):
    t = proj_triv
    assert t.k == 1
    assert t.system.F0[t.lifted[0]].name == "dx"
    assert t.fiber.dimension == 1
    np.testing.assert_allclose(t.fiber.points[:, 0], 0.0, atol=1e-12)


def test_fiber_coordinate_projection(proj_triv):
    fc = fiber_coordinate(proj_triv, [0.7, 0.3])
    np.testing.assert_allclose(fc.t, [0.7], atol=1e-12)
    np.testing.assert_allclose(fc.z, [0.0, 0.3], atol=1e-12)


def test_fiber_coordinate_at_base_point(proj_triv, so3_triv):
    for triv in (proj_triv, so3_triv):
        fc = fiber_coordinate(triv, triv.u0star)
        np.testing.assert_array_equal(fc.t, np.zeros(triv.k))
        np.testing.assert_allclose(fc.z, triv.u0star, atol=1e-14)


def test_fiber_coordinate_outside_box(proj_triv):
    with pytest.raises(FiberCoordinateError):
        fiber_coordinate(proj_triv, [50.0, 0.0])


def test_so3_trivialization_shape(so3_triv):
    assert so3_triv.k == 2
    assert so3_triv.fiber.dimension == 1
    assert len(so3_triv.fiber.points) > 20


def test_so3_fiber_landing(so3_sys, so3_triv):
    rng = np.random.default_rng(4)
    for w in random_words(rng, 3, 10, 3, 0.3):
        u = flow_word(so3_sys.F0, w, IDENTITY)
        try:
            fc = fiber_coordinate(so3_triv, u)
        except FiberCoordinateError:
            continue
        assert np.linalg.norm(so3_sys.phi(fc.z) - NORTH) <= 1e-7


def test_so3_fiber_is_stabilizer_circle(so3_sys, so3_triv):
    pts = so3_triv.fiber.points
    assert np.max(np.linalg.norm(np.array([so3_sys.phi(p) for p in pts]) - NORTH, axis=1)) <= 1e-7
    # rotations about the z-axis: third row and column fixed
    g = pts.reshape(-1, 3, 3)
    np.testing.assert_allclose(g[:, 2, :], np.tile([0, 0, 1.0], (len(g), 1)), atol=1e-7)
    angles = np.sort(np.arctan2(g[:, 1, 0], g[:, 0, 0]))
    # closed loop: no angular gap wider than a few cells
    assert np.max(np.diff(np.r_[angles, angles[0] + 2 * np.pi])) < 0.3


def test_fiber_words_replay(so3_sys, so3_triv):
    for p, w in zip(so3_triv.fiber.points[:30], so3_triv.fiber.words[:30]):
        np.testing.assert_allclose(flow_word(so3_sys.F0, w, IDENTITY), p, atol=1e-6)


def test_verify_projection(proj_triv):
    rep = verify_trivialization(proj_triv, 100, tol=1e-9)
    assert rep.passed and rep.max_round_trip <= 1e-9
    assert rep.failures == 0


def test_verify_so3(so3_triv):
    rep = verify_trivialization(so3_triv, 100, tol=1e-6)
    assert rep.passed, rep.as_dict()
    assert rep.max_landing <= 1e-7


def test_verify_counts_inversion_failures(proj_triv):
    rep = verify_trivialization(proj_triv, samples=[[0.1, 0.0], [90.0, 0.0]])
    assert rep.failures == 1 and not rep.passed


def test_identity_fiber_is_single_point():
    sys = fx.identity_line()
    triv = build_trivialization(sys, [0.0], [0.0])
    assert len(triv.fiber.points) == 1 and triv.fiber.dimension == 0
    fs = sample_fiber(sys, [0.0], [0.0], 200)
    assert len(fs.points) == 1


def test_sample_fiber_projection(proj_sys):
    fs = sample_fiber(proj_sys, [0.0], [0.0, 0.0], 500)
    assert fs.dimension == 1
    assert fs.candidates > 0
    np.testing.assert_allclose(fs.points[:, 0], 0.0, atol=1e-12)


def test_sample_fiber_csv(tmp_path, proj_triv):
    path = proj_triv.fiber.to_csv(tmp_path / "fiber.csv")
    assert path.read_text().splitlines()[0] == "c1,c2,word"


def test_two_disk_right_disk_is_incomplete():
    sys = fx.two_disks()
    with pytest.raises(TrivializationError) as info:
        build_trivialization(sys, [5.0, 0.0], [5.0, 0.0], push_t_max=3.0)
    assert info.value.kind == "incomplete"


def test_two_disk_left_disk_has_no_lift():
    sys = fx.two_disks()
    with pytest.raises(TrivializationError) as info:
        build_trivialization(sys, [-5.0, 0.0], [-5.0, 0.0], push_t_max=3.0)
    assert info.value.kind == "no-lift"
    assert info.value.as_dict()["kind"] == "no-lift"


def test_trivialization_base_point_and_dimension_errors(proj_sys):
    with pytest.raises(TrivializationError) as info:
        build_trivialization(proj_sys, [0.0], [0.5, 0.0])
    assert info.value.kind == "base-point"
    with pytest.raises(TrivializationError) as info:
        build_trivialization(fx.radius_squared(), [1.0], [1.0, 0.0])
    assert info.value.kind == "dimension"


def test_lift_defect_detected():
    # pairing d_y -> d_x is not phi-related, so lifted chart flows miss the chart
    s = fx.projection()
    F1 = Family("line", (s.F1[1], s.F1[0]))
    bad = MappedSystem("bad", s.phi, s.F0, F1, ((1, 1), (0, 0)))
    with pytest.raises(TrivializationError) as info:
        build_trivialization(bad, [0.0], [0.0, 0.0], sample=False)
    assert info.value.kind == "lift-defect"


def test_overlap_consistency_so3(so3_sys, so3_triv):
    g = _rx(0.5)
    tilted = build_trivialization(so3_sys, so3_sys.phi(g.ravel()), g.ravel(), fiber_budget=500)
    samples = sample_u0(so3_triv, 40, seed=1, shrink=0.6)
    rep = overlap_consistency(so3_triv, tilted, samples)
    assert rep["shared_samples"] > 5
    assert rep["max_discrepancy"] <= 1e-6


def test_dimension_bookkeeping(proj_sys, so3_sys, proj_triv, so3_triv):
    for sys, u, m, triv in ((proj_sys, [0.0, 0.0], [0.0], proj_triv), (so3_sys, IDENTITY, NORTH, so3_triv)):
        up = orbit_dimension(sys.F0, u).k
        down = orbit_dimension(sys.F1, m).k
        assert up == down + triv.fiber.dimension
