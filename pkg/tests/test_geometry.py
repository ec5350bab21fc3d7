import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kvembed.geometry import alignment, cosine, metric_report, uniformity


def unit_rows(rng, n, d):
    x = rng.standard_normal((n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def loop_uniformity(x, t=2.0):
    n = len(x)
    s = 0.0
    for i in range(n):
        for j in range(n):
            if i != j:
                s += math.exp(-t * float(np.sum((x[i] - x[j]) ** 2)))
    return math.log(s / (n * (n - 1)))


def loop_alignment(pairs, alpha=2.0):
    return sum(float(np.linalg.norm(a - b)) ** alpha for a, b in pairs) / len(pairs)


def test_antipodal_alignment_is_four():
    e = np.array([0.6, 0.8])
    assert alignment([(e, -e)], 2.0) == 4.0


def test_antipodal_uniformity():
    e = np.array([0.0, 1.0, 0.0])
    assert abs(uniformity([e, -e], 2.0) - (-8.0)) < 1e-12


def test_square_closed_form():
    # four points on the unit circle at right angles
    x = np.array([[0, 1], [1, 0], [0, -1], [-1, 0]], dtype=float)
    expected = math.log(1 / 3) + math.log(2 + math.exp(-4)) - 4
    assert abs(uniformity(x) - expected) < 1e-12


def test_identical_pairs_align_to_zero(rng):
    x = unit_rows(rng, 5, 4)
    assert alignment(list(zip(x, x))) == 0.0


def test_double_loop_oracle(rng):
    x = unit_rows(np.random.default_rng(42), 100, 16)
    assert abs(uniformity(x, 2.0) - loop_uniformity(x, 2.0)) < 1e-12
    pairs = list(zip(x[:50], x[50:]))
    assert abs(alignment(pairs, 2.0) - loop_alignment(pairs, 2.0)) < 1e-12
    assert abs(alignment(pairs, 1.0) - loop_alignment(pairs, 1.0)) < 1e-12


@given(st.integers(0, 1000), st.integers(2, 12))
def test_uniformity_bounds(seed, n):
    x = unit_rows(np.random.default_rng(seed), n, 3)
    u = uniformity(x)
    assert -8.0 - 1e-12 <= u <= 1e-12


@given(st.integers(0, 1000))
def test_alignment_bounds(seed):
    x = unit_rows(np.random.default_rng(seed), 6, 5)
    assert 0 <= alignment(list(zip(x[:3], x[3:]))) <= 4 + 1e-12


def test_cosine_clamp():
    e = np.array([1.0, 0.0])
    assert cosine(e * (1 + 1e-15), e) == 1.0
    with pytest.raises(ValueError):
        cosine(e, np.ones(3))


def test_errors():
    with pytest.raises(ValueError):
        uniformity([np.ones(2)])
    with pytest.raises(ValueError):
        alignment([])


def test_report(rng):
    x = unit_rows(rng, 6, 3)
    rep = metric_report(x, list(zip(x[:3], x[3:])))
    d = rep.to_dict()
    assert d["n_pairs"] == 3 and d["n_points"] == 6
    assert d["uniformity"] == round(uniformity(x), 4)
    assert metric_report(x).alignment is None


def test_report_precision_distinguishes_published_values():
    # four decimals are enough to order values like 0.6082 / -2.3899
    from kvembed.geometry import MetricReport
    d = MetricReport(0.60816, -2.38994, 2.0, 2.0, 1, 2).to_dict()
    assert (d["alignment"], d["uniformity"]) == (0.6082, -2.3899)
