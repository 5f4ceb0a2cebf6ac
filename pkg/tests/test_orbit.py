from __future__ import annotations

import math

import numpy as np
import pytest

from orbitkit import fixtures as fx
from orbitkit.flow import FlowWord, flow, flow_word, random_words
from orbitkit.geometry import euclidean
from orbitkit.orbit import (
    BoxError,
    ChartError,
    chart_jacobian,
    chart_point,
    dedup,
    distinguished_chart,
    greedy_independent,
    local_pca_dimension,
    numerical_rank,
    orbit_dimension,
    read_cloud_csv,
    sample_orbit,
)

H = fx.heisenberg()
ROT = fx.rotation()
TR = fx.translations(2)
DISK = fx.disk_bump()


def test_numerical_rank_relative_and_floor():
    assert numerical_rank(np.zeros((3, 4))) == 0
    assert numerical_rank(np.diag([1.0, 1e-8, 0.0])) == 1
    assert numerical_rank(np.diag([1.0, 1e-6, 0.0])) == 2
    assert numerical_rank(np.diag([1e-13, 1e-13])) == 0


def test_greedy_independent_keeps_order():
    cols = [np.array([1.0, 0, 0]), np.array([2.0, 0, 0]), np.array([1.0, 1, 0]), np.array([0, 0, 1.0])]
    assert greedy_independent(cols, 1e-9) == [0, 2, 3]


def test_orbit_dimension_heisenberg():
    od = orbit_dimension(H, [0, 0, 0], bracket_depth=2)
    assert od.k == 3
    assert od.closure_rank == 3
    assert od.witnesses[:2] == ["gen:0", "gen:1"]


def test_orbit_dimension_rotation_stratification():
    assert orbit_dimension(ROT, [0, 0]).k == 0
    assert orbit_dimension(ROT, [1, 0]).k == 1


def test_orbit_dimension_translations_everywhere():
    for p in np.random.default_rng(0).uniform(-5, 5, (5, 2)):
        assert orbit_dimension(TR, p).k == 2


def test_orbit_dimension_disk_family():
    assert orbit_dimension(DISK, [0.2, -0.5]).k == 2
    assert orbit_dimension(DISK, [1.0, 0.0]).k == 0
    assert orbit_dimension(DISK, [0.0, -1.3]).k == 0


def test_push_estimator_reported_separately():
    # the push-around columns alone already see the bracket direction
    od = orbit_dimension(H, [0, 0, 0], bracket_depth=1, push_words=16)
    assert od.closure_rank == 2
    assert od.push_rank == 3
    assert od.k == 3
    assert od.as_dict()["certified"] == ">= 3"


def test_orbit_dimension_constant_along_orbit():
    rng = np.random.default_rng(1)
    cases = [(H, np.zeros(3)), (ROT, np.array([1.0, 0.0])), (DISK, np.array([0.1, 0.2])), (fx.so3_s2().F1, np.array([0, 0, 1.0]))]
    for F, m0 in cases:
        k0 = orbit_dimension(F, m0, bracket_depth=3, push_words=16).k
        for w in random_words(rng, len(F), 10, 4, 1.0):
            q = flow_word(F, w, m0)
            assert orbit_dimension(F, q, bracket_depth=3, push_words=16).k == k0


def test_orbit_dimension_skips_incomplete_push_words():
    two = fx.two_disks()
    od = orbit_dimension(two.F0, [-5.0, 0.0], push_t_max=3.0)
    assert od.skipped_words > 0
    assert od.k == 1


# --- charts ---------------------------------------------------------------------------


def test_identity_chart_for_translations():
    c = distinguished_chart(TR, [0, 0])
    assert c.k == 2
    assert np.all(c.half_widths >= 0.5)
    np.testing.assert_allclose(chart_point(c, [0.3, -0.2]), [0.3, -0.2], atol=1e-12)
    np.testing.assert_array_equal(chart_point(c, [0, 0]), [0, 0])


def test_circle_chart():
    c = distinguished_chart(ROT, [1, 0])
    assert c.k == 1
    np.testing.assert_allclose(chart_point(c, [math.pi / 4]), [math.sqrt(0.5), math.sqrt(0.5)], atol=1e-8)


def test_heisenberg_chart_uses_bracket():
    c = distinguished_chart(H, [0, 0, 0])
    kinds = [d.kind for d in c.descriptors]
    assert kinds == ["generator", "generator", "bracket"]
    np.testing.assert_allclose(c.jacobian0, np.array([[0, 0, 1], [1, 0, 0], [0, 1, 0]]).T, atol=1e-12)


def test_chart_errors():
    with pytest.raises(ChartError):
        distinguished_chart(ROT, [0, 0])
    with pytest.raises(ChartError):
        distinguished_chart(H, [0, 0, 0], generators_only=True)
    c = distinguished_chart(ROT, [1, 0])
    with pytest.raises(BoxError):
        chart_point(c, [5.0])
    with pytest.raises(BoxError):
        chart_point(c, [0.1, 0.1])


def test_chart_immersion_by_finite_differences():
    rng = np.random.default_rng(2)
    for F, m0 in ((H, np.zeros(3)), (ROT, np.array([1.0, 0.0])), (fx.so3_s2().F1, np.array([0, 0, 1.0]))):
        c = distinguished_chart(F, m0)
        h = 1e-5
        for _ in range(10):
            t = rng.uniform(-1, 1, c.k) * c.half_widths * 0.9
            J = np.empty((F.space.dim, c.k))
            for i in range(c.k):
                e = np.zeros(c.k)
                e[i] = h
                J[:, i] = (chart_point(c, t + e) - chart_point(c, t - e)) / (2 * h)
            assert numerical_rank(J, 1e-6) == c.k
            np.testing.assert_allclose(chart_jacobian(c, t), J, atol=1e-5)


def test_chart_box_shrinks_for_injectivity():
    # grid corners t = -pi and t = pi land on the same point, so the sweep halves once
    c = distinguished_chart(ROT, [1, 0], box=math.pi)
    assert c.half_widths[0] == pytest.approx(math.pi / 2)


# --- sampling ---------------------------------------------------------------------------


def test_sample_circle():
    s = sample_orbit(ROT, [1, 0], 500)
    assert np.max(np.abs(np.linalg.norm(s.points, axis=1) - 1)) <= 1e-6
    assert s.dimension == 1


def test_sample_heisenberg_is_three_dimensional():
    s = sample_orbit(H, [0, 0, 0], 2000)
    assert s.dimension == 3


def test_sample_outside_disk_is_single_point():
    s = sample_orbit(DISK, [2.0, 0.0], 200)
    assert len(s) == 1 and s.dimension == 0


def test_sample_torus_visits_every_cell():
    s = sample_orbit(fx.torus_line(), [0, 0], 2000, t_max=50, cell=0.1)
    cells = {tuple(np.floor(p / 0.1).astype(int)) for p in s.points}
    assert len(cells) == 100


def test_sample_words_replay():
    for F, m0 in ((H, np.zeros(3)), (fx.so3_s2().F1, np.array([0, 0, 1.0]))):
        s = sample_orbit(F, m0, 300)
        for p, w in zip(s.points, s.words):
            np.testing.assert_allclose(flow_word(F, w, m0), p, atol=1e-6)


def test_sample_cells_are_unique():
    s = sample_orbit(H, [0, 0, 0], 1000, cell=0.1)
    keys = {tuple(np.floor(p / 0.1).astype(int)) for p in s.points}
    assert len(keys) == len(s)


def test_sample_independent_of_workers():
    a = sample_orbit(H, [0, 0, 0], 800, workers=1)
    b = sample_orbit(H, [0, 0, 0], 800, workers=4)
    assert a.point_set() == b.point_set()


def test_sample_drops_incomplete_words():
    two = fx.two_disks()
    s = sample_orbit(two.F0, [-5.0, 0.0], 200)
    assert s.dropped > 0
    assert s.summary()["dropped_incomplete"] == s.dropped


def test_sample_csv_round_trip(tmp_path):
    s = sample_orbit(ROT, [1, 0], 100)
    path = s.to_csv(tmp_path / "cloud.csv")
    header = path.read_text().splitlines()[0]
    assert header == "c1,c2,word"
    pts, words = read_cloud_csv(path)
    np.testing.assert_array_equal(pts, s.points)
    assert words == s.words


def test_sample_budget_validation():
    with pytest.raises(ValueError):
        sample_orbit(ROT, [1, 0], 0)


# --- dedup and local PCA ------------------------------------------------------------------


def test_dedup_periodic_cells():
    T2 = fx.torus_line().space
    pts = np.array([[0.001, 0.5], [0.999 + 1e-3, 0.5], [0.5, 0.5]])
    assert dedup(T2, pts, 0.1) == [0, 2]


def test_dedup_merge_tolerance():
    R1 = euclidean(1)
    pts = np.array([[-1e-17], [0.0], [0.3]])
    assert dedup(R1, pts, 0.05) == [0, 1, 2]
    assert dedup(R1, pts, 0.05, merge=1e-8) == [0, 2]


@pytest.mark.parametrize("dim", [1, 2, 3])
def test_local_pca_flat_clouds(dim):
    rng = np.random.default_rng(dim)
    pts = np.zeros((400, 4))
    pts[:, :dim] = rng.uniform(-1, 1, (400, dim))
    assert local_pca_dimension(euclidean(4), pts, 0.05) == dim


def test_local_pca_curved_circle_and_sphere():
    theta = np.linspace(0, 2 * np.pi, 126, endpoint=False)
    circle = np.column_stack([np.cos(theta), np.sin(theta)])
    assert local_pca_dimension(euclidean(2), circle, 0.05) == 1
    rng = np.random.default_rng(3)
    v = rng.standard_normal((3000, 3))
    sphere = v / np.linalg.norm(v, axis=1)[:, None]
    assert local_pca_dimension(euclidean(3), sphere, 0.05) == 2


def test_local_pca_single_point():
    assert local_pca_dimension(euclidean(2), np.array([[1.0, 2.0]]), 0.05) == 0
    assert local_pca_dimension(euclidean(2), np.array([[1.0, 2.0], [1.0, 2.0 + 1e-12]]), 0.05) == 0


def test_flow_sanity_for_chart_fixture():
    assert flow(ROT[0], 0.0, [1, 0]).tolist() == [1.0, 0.0]
    assert FlowWord().to_text() == ""
