import numpy as np
from hypothesis import given, strategies as st

from identikit.optim import BoxTransform, nelder_mead


def test_rosenbrock():
    f = lambda x: (1 - x[0]) ** 2 + 100 * (x[1] - x[0] ** 2) ** 2
    res = nelder_mead(f, np.array([-1.2, 1.0]), max_iter=5000)
    assert res.converged
    assert np.allclose(res.x, [1, 1], atol=1e-4)


def test_quadratic_converges_tightly():
    res = nelder_mead(lambda x: np.sum((x - [3.0, -2.0, 0.5]) ** 2), np.zeros(3))
    assert res.converged
    assert np.allclose(res.x, [3.0, -2.0, 0.5], atol=1e-5)


def test_iteration_cap_reports_not_converged():
    res = nelder_mead(lambda x: np.sum(x ** 2), np.ones(4) * 10, max_iter=5)
    assert not res.converged and res.iterations == 5


@given(st.lists(st.floats(-0.999, 0.999), min_size=1, max_size=4))
def test_box_round_trip(frac):
    lo = -np.ones(len(frac))
    hi = np.ones(len(frac)) * 2
    box = BoxTransform(lo, hi)
    x = lo + (np.array(frac) + 1) / 2 * (hi - lo)
    assert np.allclose(box.to_box(box.to_free(x)), x, atol=1e-9)


def test_box_maps_everything_inside():
    box = BoxTransform([0.0, 1.0], [1.0, 5.0])
    for u in ([-1e3, 1e3], [0.0, 0.0], [50.0, -50.0]):
        x = box.to_box(np.array(u))
        assert np.all(x >= [0, 1]) and np.all(x <= [1, 5])
