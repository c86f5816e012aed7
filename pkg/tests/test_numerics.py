import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from demolearn.errors import ConfigError, UsageError
from demolearn.numerics import (
    GradCheckReport,
    finite_diff_check,
    renyi_divergence,
    renyi_grad,
    softmax,
)


def test_softmax_symmetry():
    out = softmax(np.zeros(3))
    np.testing.assert_allclose(out, np.full(3, 1.0 / 3.0), atol=1e-15)


def test_softmax_no_overflow():
    out = softmax(np.array([1000.0, 0.0]))
    assert abs(out[0] - 1.0) < 1e-12
    assert out[1] < 1e-12


def test_softmax_matches_extended_precision():
    # oracle: naive exp / sum(exp) evaluated at 50 decimal digits
    logits = [1.0, 2.0, 3.0]
    with mpmath.workdps(50):
        exps = [mpmath.exp(x) for x in logits]
        total = sum(exps)
        expected = [float(e / total) for e in exps]
    np.testing.assert_allclose(softmax(np.array(logits)), expected, rtol=1e-15)


def test_softmax_rejects_empty_and_nonfinite():
    with pytest.raises(UsageError):
        softmax(np.array([]))
    with pytest.raises(UsageError):
        softmax(np.array([1.0, np.nan]))


@given(
    st.lists(st.floats(-50, 50), min_size=1, max_size=8),
    st.floats(-100, 100),
)
@settings(max_examples=200, deadline=None)
def test_softmax_shift_invariance_and_simplex(logits, shift):
    a = softmax(np.array(logits))
    b = softmax(np.array(logits) + shift)
    np.testing.assert_allclose(a, b, atol=1e-12)
    assert np.all(a > 0)
    assert abs(a.sum() - 1.0) < 1e-9


def test_renyi_zero_at_certainty():
    for alpha in (0.25, 0.5, 0.9, 1.0):
        y = np.array([0.0, 1.0, 0.0])
        assert renyi_divergence(y, 1, alpha) == pytest.approx(0.0, abs=1e-12)


def test_renyi_closed_form_example():
    # (0.5 / -0.5) * ln 0.25 = ln 4
    y = np.array([0.25, 0.5, 0.25])
    assert renyi_divergence(y, 0, 0.5) == pytest.approx(math.log(4.0), rel=1e-12)


def test_renyi_cross_entropy_at_alpha_one():
    # oracle: cross-entropy computed independently
    y = np.array([0.7, 0.2, 0.1])
    expected = -math.log(0.7)
    assert renyi_divergence(y, 0, 1.0) == pytest.approx(expected, rel=1e-12)


def test_renyi_rejects_bad_alpha_and_target():
    y = np.array([0.5, 0.5])
    for alpha in (0.0, -0.5, 1.5, 2.0):
        with pytest.raises(ConfigError):
            renyi_divergence(y, 0, alpha)
    with pytest.raises(UsageError):
        renyi_divergence(y, 2, 0.9)
    with pytest.raises(UsageError):
        renyi_divergence(y, -1, 0.9)


@pytest.mark.parametrize("alpha", [0.25, 0.5, 0.9, 1.0])
def test_renyi_strictly_decreasing_in_target_prob(alpha):
    ps = np.linspace(0.01, 1.0, 50)
    vals = [renyi_divergence(np.array([p, 1.0 - p]), 0, alpha) for p in ps]
    assert all(a > b for a, b in zip(vals, vals[1:]))
    assert all(v >= 0.0 for v in vals)


def test_finite_diff_quadratic():
    p = np.array([1.0, 2.0])
    report = finite_diff_check(lambda q: float(np.sum(q**2)), p, 2.0 * p)
    assert isinstance(report, GradCheckReport)
    assert report.max_relative_error < 1e-6


def test_finite_diff_constant_loss():
    p = np.array([0.3, -0.7, 1.1])
    report = finite_diff_check(lambda q: 5.0, p, np.zeros(3))
    assert report.max_relative_error < 1e-8
    assert abs(report.numeric) < 1e-10


def test_finite_diff_renyi_of_linear_softmax():
    # loss = renyi(softmax(W x), target) as a function of W
    rng = np.random.default_rng(3)
    x = rng.normal(size=4)
    w0 = rng.normal(scale=0.3, size=(3, 4))
    target = 1
    alpha = 0.9

    def loss(flat_w):
        w = flat_w.reshape(3, 4)
        return renyi_divergence(softmax(w @ x), target, alpha)

    p = softmax(w0 @ x)
    g_out = renyi_grad(p, target, alpha)
    # chain rule through softmax: dL/dz = p * (g - <g, p>)
    dz = p * (g_out - np.dot(g_out, p))
    analytic = np.outer(dz, x).ravel()
    report = finite_diff_check(loss, w0.ravel(), analytic)
    assert report.max_relative_error < 1e-4


def test_softmax_renyi_gradient_on_100_random_instances():
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(2, 8))
        z0 = rng.normal(scale=2.0, size=n)
        target = int(rng.integers(n))
        alpha = float(rng.uniform(0.05, 1.0))

        def loss(z):
            return renyi_divergence(softmax(z), target, alpha)

        p = softmax(z0)
        g_out = renyi_grad(p, target, alpha)
        dz = p * (g_out - np.dot(g_out, p))
        report = finite_diff_check(loss, z0, dz)
        worst = max(worst, report.max_relative_error)
    assert worst < 1e-4
