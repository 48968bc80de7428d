from fractions import Fraction as F

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cocodlab import theory
from cocodlab.theory import StepSizeError, TheoremParams


def params(**kw):
    base = dict(gamma=0.1, L=1.0, k=1, sigma2=1.0, zeta2=0.0, N=2, batch_sizes=(1, 1), T=100, initial_gap=1.0)
    base.update(kw)
    return TheoremParams(**base)


def exact_d2(g, L, k):
    g, L = F(g), F(L)
    return 8 * g**2 * L**2 * k / (1 - 16 * g**2 * k**2 * L**2)


def test_d_coefficients_zero_step():
    assert theory.d_coefficients(params(gamma=0.0)) == (1.0, 0.0)


def test_d_coefficients_hand_value():
    d1, d2 = theory.d_coefficients(params())
    ref = exact_d2("0.1", 1, 1)
    assert ref == F(2, 21)  # 0.08 / 0.84
    assert d2 == pytest.approx(float(ref), rel=1e-14)
    assert d1 == pytest.approx(float(1 - 2 * ref), rel=1e-14)
    assert round(d2, 6) == 0.095238 and round(d1, 6) == 0.809524


def test_d_coefficients_too_large():
    with pytest.raises(StepSizeError, match="step size too large for period"):
        theory.d_coefficients(params(gamma=0.25, k=2))


def test_theorem1_rhs_hand_value():
    rhs = theory.theorem1_rhs(params())
    ref = F(2, 10) + F(2, 21) * 1 + F(1, 10) * F(1, 2)
    assert rhs == pytest.approx(float(ref), rel=1e-14)
    assert round(rhs, 6) == 0.345238


def test_theorem1_rhs_deterministic_and_linear_in_T():
    p = params(sigma2=0.0, zeta2=0.0, gamma=0.05)
    assert theory.theorem1_rhs(p) == pytest.approx(2 * 1.0 / (100 * 0.05), rel=1e-14)
    a = theory.theorem1_rhs(params(T=100))
    b = theory.theorem1_rhs(params(T=200))
    assert a - b == pytest.approx(2 / (100 * 0.1) - 2 / (200 * 0.1), rel=1e-12)


def test_convergence_bound_needs_gamma_at_most_inverse_L():
    with pytest.raises(StepSizeError):
        theory.theorem1_rhs(params(gamma=0.2, L=10.0, k=1))


def test_corollary_lr():
    assert theory.corollary_lr(1.0, 100, 4) == pytest.approx(0.2, rel=1e-15)
    assert theory.corollary_lr(2.0, 400, 8) == pytest.approx(theory.corollary_lr(2.0, 100, 8) / 2, rel=1e-15)
    assert theory.corollary_lr(0.5, 64, 64) == pytest.approx(2.0, rel=1e-15)
    with pytest.raises(ValueError, match="use deterministic step rule"):
        theory.corollary_lr(0.0, 10, 4)


def exact_min_T(L, s2, z2, k, N, M):
    m = F(sum(M))
    L, s2, z2 = F(L), F(s2), F(z2)
    terms = [L**2 * m / s2, 48 * m * L**2 * k**2 / s2, 144 * m**3 / s2**3 * L**2 * k**2 * (N * s2 / m + 2 * k * z2) ** 2]
    top = max(terms)
    return -(-top.numerator // top.denominator)


def test_corollary_min_T_hand_value():
    assert theory.corollary_min_T(1.0, 1.0, 0.0, 1, 2, (1, 1)) == 1152
    assert exact_min_T(1, 1, 0, 1, 2, (1, 1)) == 1152


def test_corollary_min_T_scaling():
    base = theory.corollary_min_T(1.0, 1.0, 0.0, 1, 2, (1, 1))
    assert theory.corollary_min_T(1.0, 1.0, 0.0, 2, 2, (1, 1)) == 4 * base
    assert theory.corollary_min_T(1.0, 1e4, 0.0, 1, 2, (1, 1)) == 1


@settings(max_examples=100, deadline=None)
@given(
    s2=st.sampled_from([0.25, 0.5, 1, 2, 4, 9, 16, 100]),
    z2=st.sampled_from([0, 0.25, 1, 2]),
    k=st.integers(1, 6),
    M=st.lists(st.integers(1, 16), min_size=1, max_size=4),
)
def test_corollary_min_T_matches_rational_oracle(s2, z2, k, M):
    got = theory.corollary_min_T(1.0, s2**0.5, z2**0.5, k, len(M), M)
    assert got == max(1, exact_min_T(1, s2, z2, k, len(M), M))


def test_corollary_rate_rhs():
    assert theory.corollary_rate_rhs(1.0, 0.0, 1.0, 16, 1) == pytest.approx(1.0, rel=1e-15)
    a = theory.corollary_rate_rhs(1.3, 0.7, 1.0, 50, 3)
    assert theory.corollary_rate_rhs(1.3, 0.7, 1.0, 50, 12) == pytest.approx(a / 2, rel=1e-14)
    assert theory.corollary_rate_rhs(0.0, 0.7, 1.0, 50, 3) == 0.0


def test_max_period():
    assert theory.max_period(4096, 8) == 1
    assert theory.max_period(10**8, 1) == 100
    assert theory.max_period(10**8, 16) == 100 // 8


def test_scaled_lr_paper_values():
    assert theory.scaled_lr(0.01, [1.0] * 16) == pytest.approx(0.16, rel=1e-14)
    assert theory.scaled_lr(0.01, [1.0] * 8 + [2.0] * 8, reference=1.0) == pytest.approx(0.24, rel=1e-14)
    assert theory.scaled_lr(0.01, [3.0]) == 0.01


def test_predicted_speedup_hand_values():
    n, tc, tm, a, k = 4, 2.0, 2.0, 0.5, 5
    assert theory.predicted_speedup("ssgd", n, tc, tm, a, k) == pytest.approx(2.0, rel=1e-15)
    assert theory.predicted_speedup("pipe", n, tc, tm, a, k) == pytest.approx(8 / 3, rel=1e-15)
    assert theory.predicted_speedup("local", n, tc, tm, a, k) == pytest.approx(10 / 3, rel=1e-15)
    assert theory.predicted_speedup("cocod", n, tc, tm, a, k) == pytest.approx(8 / 2.2, rel=1e-15)
    for v in ("ssgd", "pipe", "local", "cocod"):
        assert theory.predicted_speedup(v, 7, 1.5, 0.0, a, k) == pytest.approx(7.0, rel=1e-15)


@settings(max_examples=300, deadline=None)
@given(
    n=st.integers(1, 64),
    tc=st.floats(0.01, 100),
    tm=st.floats(0, 100),
    a=st.floats(0, 1),
    k=st.integers(1, 50),
)
def test_speedup_ordering_and_monotonicity(n, tc, tm, a, k):
    s = {v: theory.predicted_speedup(v, n, tc, tm, a, k) for v in ("ssgd", "pipe", "local", "cocod")}
    eps = 1e-12 * n
    assert s["cocod"] >= s["local"] - eps
    assert s["cocod"] >= s["pipe"] - eps
    assert s["pipe"] >= s["ssgd"] - eps
    for v in s:
        assert theory.predicted_speedup(v, n, tc, tm * 1.5 + 0.1, a, k) <= s[v] + eps
        assert theory.predicted_speedup(v, n, tc, tm, min(1.0, a + 0.1), k) <= s[v] + eps
        assert theory.predicted_speedup(v, n, tc, tm, a, k + 1) >= s[v] - eps


def test_lemma2_rhs():
    assert theory.lemma2_rhs(0.0, 1.0, 2, 1.0, 0.0, 2, 2, 10, 0.0) == 0.0
    assert theory.lemma2_rhs(0.05, 1.0, 2, 0.0, 0.0, 2, 2, 10, 0.0) == 0.0
    g = F(5, 100)
    ref = 8 * g**2 * 2 / (1 - 16 * g**2 * 4) * (F(10 * 2, 2))
    got = theory.lemma2_rhs(0.05, 1.0, 2, 1.0, 0.0, 2, 2, 10, 0.0)
    assert got == pytest.approx(float(ref), rel=1e-14)
    assert round(got, 5) == 0.47619
    with pytest.raises(StepSizeError):
        theory.lemma2_rhs(0.25, 1.0, 2, 1.0, 0.0, 2, 2, 10, 0.0)
