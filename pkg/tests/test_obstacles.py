import math

import numpy as np
import pytest
from scipy import stats

from quenchpin.errors import WindowError
from conftest import manual_field

from quenchpin.obstacles import (
    ObstacleField,
    ObstacleShape,
    StrengthDistribution,
    Window,
    eval_f_max_local_sum,
    sample_field,
    sample_field_torus,
    sample_lattice_field,
)


class TestShape:
    def test_support_and_sign(self, fixture_shape):
        rng = np.random.default_rng(0)
        r = rng.uniform(0, 3 * fixture_shape.r1, 1000)
        vals = fixture_shape.phi_radial(r)
        assert np.all(vals <= 0)
        assert np.all(vals[r > fixture_shape.r1] == 0.0)
        assert fixture_shape.phi_radial(2 * fixture_shape.r1) == 0.0

    def test_core_condition(self, fixture_shape):
        # every point of the inf-ball of radius r0 in R^2 must be <= -1
        rng = np.random.default_rng(1)
        pts = rng.uniform(-fixture_shape.r0, fixture_shape.r0, size=(2000, 2))
        vals = fixture_shape.phi(pts[:, 0], pts[:, 1])
        assert np.all(vals <= -1.0)
        assert fixture_shape.phi_radial(0.0) <= -1.0

    def test_corner_example(self):
        # n=1, r0=0.25, r1=0.5*sqrt(2)+0.01: the inf-ball corner just satisfies
        # the core bound
        shape = ObstacleShape(n=1, r0=0.25, r1=0.5 * math.sqrt(2) + 0.01)
        val = shape.phi(np.array([0.25]), np.array([0.25]))[0]
        assert val <= -1.0

    def test_incompatible_radii_rejected(self):
        with pytest.raises(ValueError):
            ObstacleShape(n=1, r0=0.25, r1=math.sqrt(2) * 0.25)
        with pytest.raises(ValueError):
            ObstacleShape(n=2, r0=0.25, r1=0.4)

    def test_dy_derivative_matches_fd(self, fixture_shape):
        rng = np.random.default_rng(2)
        dx = rng.uniform(-0.3, 0.3, 200)
        dy = rng.uniform(-0.3, 0.3, 200)
        eps = 1e-6
        fd = (fixture_shape.phi(dx, dy + eps) - fixture_shape.phi(dx, dy - eps)) / (2 * eps)
        assert np.abs(fd - fixture_shape.dphi_dy(dx, dy)).max() < 1e-6

    def test_dy_bound(self, fixture_shape):
        rng = np.random.default_rng(3)
        dx = rng.uniform(-0.5, 0.5, 5000)
        dy = rng.uniform(-0.5, 0.5, 5000)
        assert np.abs(fixture_shape.dphi_dy(dx, dy)).max() <= fixture_shape.dphi_dy_max()


class TestStrengths:
    def test_tails(self):
        c = StrengthDistribution("constant", 10.0)
        assert c.tail(10.0) == 1.0 and c.tail(10.0001) == 0.0
        u = StrengthDistribution("uniform", 1.0, 3.0)
        assert u.tail(0.5) == 1.0
        assert u.tail(2.0) == pytest.approx(0.5)
        assert u.tail(4.0) == 0.0
        e = StrengthDistribution("exponential", 2.0)
        assert e.tail(3.0) == pytest.approx(math.exp(-1.5))

    def test_max_fbar(self):
        assert StrengthDistribution("constant", 7.0).max_fbar_with_tail(0.5) == 7.0
        u = StrengthDistribution("uniform", 1.0, 3.0)
        fb = u.max_fbar_with_tail(0.25)
        assert u.tail(fb) == pytest.approx(0.25)
        e = StrengthDistribution("exponential", 2.0)
        fb = e.max_fbar_with_tail(0.3)
        assert e.tail(fb) == pytest.approx(0.3)

    def test_positive(self):
        with pytest.raises(ValueError):
            StrengthDistribution("uniform", -1.0, 3.0)
        with pytest.raises(ValueError):
            StrengthDistribution("gamma", 1.0)


class TestSampling:
    def test_poisson_moments(self, fixture_shape, fixture_dist):
        # volume 10 at lambda 2: counts are Poisson(20)
        w = Window((0.0,), (10.0,), fixture_shape.r1, fixture_shape.r1 + 1.0)
        counts = np.array([
            sample_field(w, 2.0, fixture_dist, fixture_shape, seed=s).count
            for s in range(1000)
        ])
        assert abs(counts.mean() - 20.0) < 1.5
        assert abs(counts.var(ddof=1) - 20.0) < 4.0

    def test_vanishing_intensity(self, fixture_shape, fixture_dist):
        w = Window((0.0,), (1.0,), fixture_shape.r1, fixture_shape.r1 + 1.0)
        total = sum(
            sample_field(w, 1e-9, fixture_dist, fixture_shape, seed=s).count
            for s in range(200)
        )
        assert total == 0

    def test_determinism(self, fixture_shape, fixture_dist):
        w = Window((0.0,), (10.0,), fixture_shape.r1, fixture_shape.r1 + 4.0)
        a = sample_field(w, 1.0, fixture_dist, fixture_shape, seed=5)
        b = sample_field(w, 1.0, fixture_dist, fixture_shape, seed=5)
        assert a.to_text() == b.to_text()
        c = sample_field(w, 1.0, fixture_dist, fixture_shape, seed=6)
        assert a.to_text() != c.to_text()

    def test_overlapping_windows_agree(self, fixture_shape, fixture_dist):
        wa = Window((0.0,), (10.0,), fixture_shape.r1, fixture_shape.r1 + 5.0)
        wb = Window((4.0,), (16.0,), fixture_shape.r1, fixture_shape.r1 + 5.0)
        a = sample_field(wa, 1.5, fixture_dist, fixture_shape, seed=13)
        b = sample_field(wb, 1.5, fixture_dist, fixture_shape, seed=13)
        sel_a = (a.centers_x[:, 0] >= 4.0) & (a.centers_x[:, 0] < 10.0)
        sel_b = (b.centers_x[:, 0] >= 4.0) & (b.centers_x[:, 0] < 10.0)
        pa = sorted(map(tuple, np.column_stack(
            [a.centers_x[sel_a, 0], a.centers_y[sel_a], a.strengths[sel_a]])))
        pb = sorted(map(tuple, np.column_stack(
            [b.centers_x[sel_b, 0], b.centers_y[sel_b], b.strengths[sel_b]])))
        assert pa == pb

    def test_window_below_r1_rejected(self, fixture_shape, fixture_dist):
        w = Window((0.0,), (10.0,), 0.1, 5.0)
        with pytest.raises(WindowError):
            sample_field(w, 1.0, fixture_dist, fixture_shape, seed=0)

    def test_count_distribution_chi_square(self, fixture_shape, fixture_dist):
        # chi-square GOF against Poisson(lambda) over 10^4 unit cells at 1%
        lam = 1.5
        w = Window((0.0,), (100.0,), fixture_shape.r1, fixture_shape.r1 + 100.0)
        f = sample_field(w, lam, fixture_dist, fixture_shape, seed=2024)
        ix = np.floor(f.centers_x[:, 0]).astype(int)
        iy = np.floor(f.centers_y - fixture_shape.r1).astype(int)
        counts = np.zeros((100, 100), dtype=int)
        np.add.at(counts, (ix, iy), 1)
        observed = np.bincount(counts.ravel(), minlength=20)
        k = np.arange(len(observed))
        expected = stats.poisson.pmf(k, lam) * counts.size
        expected[-1] = counts.size - expected[:-1].sum()
        # pool the tail so every expected bin is >= 5
        while expected[-1] < 5 and len(expected) > 2:
            expected[-2] += expected[-1]
            observed[-2] += observed[-1]
            expected = expected[:-1]
            observed = observed[:-1]
        chi, p = stats.chisquare(observed, expected)
        assert p > 0.01


class TestEval:
    def test_empty_field(self, fixture_shape, fixture_dist):
        f = manual_field(fixture_shape, np.empty((0, 1)), [], [])
        x = np.linspace(-5, 5, 50).reshape(-1, 1)
        assert np.all(f.eval(x, np.zeros(50)) == 0.0)
        assert eval_f_max_local_sum(f, -1.0, 1.0, 0.5, 1.5) == 0.0

    def test_single_obstacle_center(self, fixture_shape):
        f = manual_field(fixture_shape, [[0.0]], [1.0], [3.0])
        v = f.eval(np.array([[0.0]]), np.array([1.0]))[0]
        assert v == pytest.approx(3.0 * fixture_shape.phi_radial(0.0))
        assert v <= -3.0

    def test_zero_below_line(self, fixture_shape, fixture_dist):
        w = Window((0.0,), (10.0,), fixture_shape.r1, fixture_shape.r1 + 3.0)
        f = sample_field(w, 2.0, fixture_dist, fixture_shape, seed=3)
        x = np.linspace(0.5, 9.5, 100).reshape(-1, 1)
        assert np.all(f.eval(x, np.full(100, -0.01)) == 0.0)
        assert np.all(f.eval(x, np.zeros(100)) == 0.0)

    def test_sign(self, fixture_shape, fixture_dist):
        w = Window((0.0,), (10.0,), fixture_shape.r1, fixture_shape.r1 + 3.0)
        f = sample_field(w, 2.0, fixture_dist, fixture_shape, seed=4)
        rng = np.random.default_rng(0)
        x = rng.uniform(0, 10, 500).reshape(-1, 1)
        y = rng.uniform(-1, 4, 500)
        assert np.all(f.eval(x, y) <= 0.0)

    def test_support_locality(self, fixture_shape):
        f2 = manual_field(fixture_shape, [[0.0], [5.0]], [1.0, 1.0], [2.0, 7.0])
        f1 = manual_field(fixture_shape, [[0.0]], [1.0], [2.0])
        x = np.array([[0.1]])
        y = np.array([0.9])
        # the obstacle at distance ~5 is outside support; deleting it changes nothing
        assert f2.eval(x, y)[0] == pytest.approx(f1.eval(x, y)[0], abs=0)

    def test_query_complete(self, fixture_shape, fixture_dist):
        w = Window((0.0,), (10.0,), fixture_shape.r1, fixture_shape.r1 + 3.0)
        f = sample_field(w, 1.0, fixture_dist, fixture_shape, seed=1)
        assert bool(f.query_complete(np.array([[5.0]]), np.array([1.0]))[0])
        assert not bool(f.query_complete(np.array([[0.1]]), np.array([1.0]))[0])
        ft = sample_field_torus((10.0,), 3.0, 1.0, fixture_dist, fixture_shape, 1)
        assert bool(ft.query_complete(np.array([[0.1]]), np.array([1.0]))[0])

    def test_torus_wrap(self, fixture_shape, fixture_dist):
        f = manual_field(fixture_shape, [[0.1]], [1.0], [3.0], period=(10.0,),
                         window=Window((0.0,), (10.0,), 0.4, 3.0))
        across = f.eval(np.array([[9.9]]), np.array([1.0]))[0]
        assert across == pytest.approx(3.0 * float(fixture_shape.phi_radial(0.2)))

    def test_max_local_sum_single(self, fixture_shape):
        f = manual_field(fixture_shape, [[0.0]], [1.0], [1.0])
        M = eval_f_max_local_sum(f, -0.5, 0.5, 0.5, 1.5, resolution=0.01)
        assert 1.0 <= M <= fixture_shape.amplitude

    def test_max_local_sum_coincident(self, fixture_shape):
        # two coincident obstacles, strengths 1 and 2: M = 3 max|phi|
        f = manual_field(fixture_shape, [[0.0], [0.0]], [1.0, 1.0], [1.0, 2.0])
        M = eval_f_max_local_sum(f, -0.5, 0.5, 0.5, 1.5, resolution=0.005)
        assert M == pytest.approx(3.0 * fixture_shape.amplitude, rel=1e-3)


class TestLattice:
    def test_exact_sites(self, fixture_shape, fixture_dist):
        w = Window((-0.1,), (1.1,), fixture_shape.r1, 2.1)
        f = sample_lattice_field(1.0, fixture_dist, fixture_shape, seed=7, window=w)
        assert f.count == 4  # x in {0, 1}, y in {0.5, 1.5}
        assert sorted(set(f.centers_y)) == [0.5, 1.5]

    def test_seed_reproducible(self, fixture_shape):
        dist = StrengthDistribution("uniform", 1.0, 2.0)
        w = Window((0.0,), (5.0,), fixture_shape.r1, 3.0)
        a = sample_lattice_field(1.0, dist, fixture_shape, seed=5, window=w)
        b = sample_lattice_field(1.0, dist, fixture_shape, seed=5, window=w)
        assert np.array_equal(a.strengths, b.strengths)

    def test_constant_strengths(self, fixture_shape, fixture_dist):
        w = Window((0.0,), (5.0,), fixture_shape.r1, 3.0)
        f = sample_lattice_field(1.0, fixture_dist, fixture_shape, seed=5, window=w)
        assert np.all(f.strengths == 10.0)

    def test_spacing_too_small(self, fixture_shape, fixture_dist):
        w = Window((0.0,), (5.0,), fixture_shape.r1, 3.0)
        with pytest.raises(ValueError):
            sample_lattice_field(0.7, fixture_dist, fixture_shape, seed=5, window=w)


def test_text_round_trip(fixture_shape, fixture_dist):
    f = sample_field_torus((12.0,), 4.0, 1.0, fixture_dist, fixture_shape, seed=17)
    g = ObstacleField.from_text(f.to_text())
    assert np.array_equal(g.centers_x, f.centers_x)
    assert np.array_equal(g.centers_y, f.centers_y)
    assert np.array_equal(g.strengths, f.strengths)
    assert g.period == f.period
    assert g.to_text() == f.to_text()
