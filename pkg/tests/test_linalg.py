import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hyperstab.linalg import (ConvergenceError, congruence, is_pd, is_psd, jacobi_eigenvalues,
                              smallest_eigenvalue, sym)


def analytic_2x2(a, b, c):
    r = np.sqrt((a - c) ** 2 + 4 * b * b)
    return (a + c - r) / 2, (a + c + r) / 2


def analytic_3x3(A):
    # trigonometric solution of the characteristic cubic
    p1 = A[0, 1] ** 2 + A[0, 2] ** 2 + A[1, 2] ** 2
    q = np.trace(A) / 3
    p2 = (A[0, 0] - q) ** 2 + (A[1, 1] - q) ** 2 + (A[2, 2] - q) ** 2 + 2 * p1
    p = np.sqrt(p2 / 6)
    if p == 0:
        return np.sort(np.diag(A))
    Bm = (A - q * np.eye(3)) / p
    r = np.clip(np.linalg.det(Bm) / 2, -1, 1)
    phi = np.arccos(r) / 3
    e1 = q + 2 * p * np.cos(phi)
    e3 = q + 2 * p * np.cos(phi + 2 * np.pi / 3)
    return np.sort([e3, 3 * q - e1 - e3, e1])


def test_examples():
    assert smallest_eigenvalue(np.eye(2)) == 1.0
    assert smallest_eigenvalue([[2, 1], [1, 2]]) == pytest.approx(1.0, abs=1e-14)
    assert smallest_eigenvalue(np.diag([1.28125, 0])) == 0.0


def test_definiteness_examples():
    assert is_psd(np.diag([1.28125, 0])) and not is_pd(np.diag([1.28125, 0]))
    assert not is_psd(np.diag([-2.0, 0]))
    assert is_pd(np.diag([0.50343, 0.9375]))


def test_tolerance_scaling():
    big = np.diag([1e6, -1e-4])
    assert is_psd(big)  # -1e-4 >= -1e-9 * 1e6
    assert not is_psd(np.diag([1.0, -1e-4]))
    with pytest.raises(ValueError):
        is_psd(np.eye(2), tol=-1)


def test_congruence_examples():
    k, a, b = 0.25, 2.0, 3.0
    K = np.array([[0, 1], [1 - k, 0]])
    np.testing.assert_allclose(congruence(K, np.diag([a, b])), np.diag([b * (1 - k) ** 2, a]))
    np.testing.assert_array_equal(congruence(np.zeros((2, 2)), np.diag([a, b])), np.zeros((2, 2)))
    with pytest.raises(ValueError):
        congruence(np.zeros((3, 3)), np.eye(2))


def test_symmetrize_and_shape():
    np.testing.assert_array_equal(sym([[1, 2], [0, 1]]), [[1, 1], [1, 1]])
    with pytest.raises(ValueError):
        sym(np.zeros((2, 3)))


def test_random_2x2_and_3x3_against_analytic():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        a, b, c = rng.uniform(-10, 10, 3)
        lo, hi = analytic_2x2(a, b, c)
        w = jacobi_eigenvalues([[a, b], [b, c]])
        scale = max(1.0, np.sqrt(a * a + c * c + 2 * b * b))
        assert abs(w[0] - lo) <= 1e-10 * scale and abs(w[1] - hi) <= 1e-10 * scale
    for _ in range(1000):
        A = sym(rng.uniform(-10, 10, (3, 3)))
        scale = max(1.0, np.linalg.norm(A))
        assert np.max(np.abs(jacobi_eigenvalues(A) - analytic_3x3(A))) <= 1e-10 * scale


def test_batched_matches_single():
    rng = np.random.default_rng(2)
    stack = sym(rng.normal(size=(50, 5, 5)))
    batched = jacobi_eigenvalues(stack)
    for A, w in zip(stack, batched):
        np.testing.assert_allclose(w, jacobi_eigenvalues(A), atol=1e-12)
        np.testing.assert_allclose(w, np.linalg.eigvalsh(A), atol=1e-10 * max(1, np.linalg.norm(A)))


def test_nonconvergence_reports_residual():
    A = sym(np.random.default_rng(3).normal(size=(6, 6)))
    with pytest.raises(ConvergenceError) as info:
        jacobi_eigenvalues(A, max_sweeps=1)
    assert info.value.sweeps == 1 and info.value.residual > 0


@settings(max_examples=200, deadline=None)
@given(arrays(float, (4, 4), elements=st.floats(-100, 100)), arrays(float, 4, elements=st.floats(-1, 1)))
def test_rayleigh_quotient_bound(M, v):
    A = sym(M)
    if np.linalg.norm(v) < 1e-3:
        return
    lam = smallest_eigenvalue(A)
    rq = v @ A @ v / (v @ v)
    assert lam <= rq + 1e-10 * max(1.0, np.linalg.norm(A))


@settings(max_examples=100, deadline=None)
@given(arrays(float, (3, 3), elements=st.floats(-10, 10)), st.floats(0.01, 100))
def test_eigenvalues_scale(M, c):
    A = sym(M)
    np.testing.assert_allclose(jacobi_eigenvalues(c * A), c * jacobi_eigenvalues(A),
                               atol=1e-10 * max(1.0, c * np.linalg.norm(A)))
