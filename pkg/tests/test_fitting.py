import numpy as np
import pytest
from hypothesis import given, strategies as st

from bosepolaron.fitting import fit_slope


@given(st.floats(-3, 3), st.floats(0.1, 10))
def test_exact_power_law(k, c):
    xs = [2.0, 4.0, 8.0, 16.0]
    s, e = fit_slope([(x, c * x**k) for x in xs])
    assert s == pytest.approx(k, abs=1e-9)
    assert e < 1e-7


def test_known_noisy_fit():
    # y = x^-1/2 with a factor 1.1 on the second point; least squares by hand
    pts = [(4, 0.5), (8, 1.1 / np.sqrt(8)), (16, 0.25), (32, 1 / np.sqrt(32))]
    lx = np.log([p[0] for p in pts])
    ly = np.log([p[1] for p in pts])
    want = np.polyfit(lx, ly, 1)[0]
    assert fit_slope(pts)[0] == pytest.approx(want, rel=1e-12)


def test_rejects_bad_input():
    with pytest.raises(ValueError):
        fit_slope([(1, 1), (2, 2)])
    with pytest.raises(ValueError):
        fit_slope([(1, 1), (2, 0), (3, 1)])
