import numpy as np
import numpy.testing as npt
import pytest

from cpproj.norms import dual_norm, in_dual_norm_cone, in_norm_cone, p_norm
from cpproj.polybasis import SymMatrix


def random_sym(rng, n):
    A = rng.standard_normal((n, n))
    return SymMatrix((A + A.T) / 2)


def test_known_values():
    A = SymMatrix(np.array([[1.0, -2.0], [-2.0, 3.0]]))
    npt.assert_allclose(p_norm(A, "one"), 5.0)
    npt.assert_allclose(p_norm(A, "inf"), 5.0)
    npt.assert_allclose(p_norm(A, "fro"), np.sqrt(1 + 4 + 4 + 9))
    # eigenvalues of [[1,-2],[-2,3]] are 2 +- sqrt(5)
    npt.assert_allclose(p_norm(A, "two"), 2 + np.sqrt(5.0), rtol=1e-12)
    npt.assert_allclose(dual_norm(A, "one"), 2.0 + 3.0)
    npt.assert_allclose(dual_norm(A, "two"), abs(2 + np.sqrt(5)) + abs(2 - np.sqrt(5)), rtol=1e-12)
    npt.assert_allclose(dual_norm(A, "fro"), p_norm(A, "fro"))


def test_one_equals_inf_on_symmetric():
    rng = np.random.default_rng(2)
    for _ in range(5):
        A = random_sym(rng, 5)
        npt.assert_allclose(p_norm(A, "one"), p_norm(A, "inf"), rtol=1e-13)
        npt.assert_allclose(dual_norm(A, "one"), dual_norm(A, "inf"), rtol=1e-13)


def test_two_norm_against_svd_oracle():
    rng = np.random.default_rng(4)
    for _ in range(5):
        A = random_sym(rng, 6)
        npt.assert_allclose(p_norm(A, "two"), np.linalg.svd(A.values, compute_uv=False)[0], rtol=1e-12)
        npt.assert_allclose(dual_norm(A, "two"), np.linalg.svd(A.values, compute_uv=False).sum(), rtol=1e-12)


def test_duality_inequality_sampled():
    # |<A, B>| <= ||A||_p ||B||_p* ; sampled supremum gets within 1% for the pairing
    rng = np.random.default_rng(8)
    for p in ("one", "two", "inf", "fro"):
        for _ in range(20):
            A, B = random_sym(rng, 4), random_sym(rng, 4)
            inner = abs(float(np.tensordot(A.values, B.values)))
            assert inner <= p_norm(A, p) * dual_norm(B, p) * (1 + 1e-12)


def test_norm_axioms_sampled():
    rng = np.random.default_rng(21)
    for p in ("one", "two", "inf", "fro"):
        A, B = random_sym(rng, 5), random_sym(rng, 5)
        assert p_norm(A + B, p) <= p_norm(A, p) + p_norm(B, p) + 1e-12
        npt.assert_allclose(p_norm(SymMatrix(-2.5 * A.values), p), 2.5 * p_norm(A, p), rtol=1e-12)
    Z = SymMatrix(np.zeros((3, 3)))
    for p in ("one", "two", "inf", "fro"):
        assert p_norm(Z, p) == 0.0


def test_cone_membership():
    A = SymMatrix(np.array([[1.0, 0.0], [0.0, -1.0]]))
    for p in ("one", "two", "inf", "fro"):
        g = p_norm(A, p)
        assert in_norm_cone(A, g + 1e-9, p)
        assert in_norm_cone(A, g - 1e-9, p)  # within default tol
        assert not in_norm_cone(A, g - 1e-3, p)
        assert not in_norm_cone(A, -1.0, p)
        assert in_dual_norm_cone(A, dual_norm(A, p), p)
        assert not in_dual_norm_cone(A, dual_norm(A, p) - 1e-3, p)


def test_unknown_norm_rejected():
    with pytest.raises(ValueError):
        p_norm(np.eye(2), "nuclear")
