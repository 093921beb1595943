import numpy as np

from lyapcert.sampling import SamplingPlan, ball_points, sobol, sphere_directions


def test_sobol_prefix_is_stable():
    a = sobol(3, 100, seed=4)
    b = sobol(3, 1000, seed=4)
    np.testing.assert_array_equal(a, b[:100])
    assert not np.array_equal(a, sobol(3, 100, seed=5))


def test_ball_points_lie_in_annulus():
    for n in (1, 2, 5):
        X = ball_points(n, 2000, 2.0, inner_radius=0.5, seed=1)
        r = np.linalg.norm(X, axis=1)
        assert X.shape == (2000, n)
        assert r.min() >= 0.5 - 1e-12 and r.max() <= 2.0 + 1e-12


def test_ball_points_are_uniform_in_volume():
    X = ball_points(2, 20000, 1.0, seed=0)
    inside = np.mean(np.linalg.norm(X, axis=1) < 0.5)
    assert abs(inside - 0.25) < 0.01


def test_sphere_directions():
    assert sphere_directions(1).tolist() == [[1.0], [-1.0]]
    d2 = sphere_directions(2)
    assert d2.shape == (41, 2)
    d3 = sphere_directions(3)
    assert d3.shape == (60, 3)
    for d in (d2, d3):
        np.testing.assert_allclose(np.linalg.norm(d, axis=1), 1.0)


def test_plan_points():
    t, X = SamplingPlan(samples=512, t_max=10.0, seed=2).points(2, 3.0)
    assert t.shape == (512,) and X.shape == (512, 2)
    assert t.min() >= 0 and t.max() <= 10.0
    assert np.linalg.norm(X, axis=1).max() <= 3.0 + 1e-12
    t2, X2 = SamplingPlan(samples=512, t_max=10.0, seed=2).points(2, 3.0)
    np.testing.assert_array_equal(X, X2)
