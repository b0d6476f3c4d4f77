import numpy as np
import numpy.testing as npt
import pytest

from cpproj.conic import _dist_outside_cone, solve as conic_solve
from cpproj.norms import p_norm
from cpproj.relaxation import (
    LinearConstraint,
    ProblemSpec,
    assemble,
    check_weak_duality,
    lift_atomic_point,
    map_solution,
    project_dnn,
    solve_relaxation,
)


def _block_slices(blocks):
    out, at = [], 0
    for b in blocks:
        out.append(slice(at, at + b.size))
        at += b.size
    return out


def test_frobenius_assembly_sizes():
    prog = assemble(ProblemSpec(np.eye(2), norm="fro"), 2)
    assert prog.num_vars == 16  # 15 moments + gamma
    assert prog.eq_map.shape[0] == 6  # one sphere row per monomial of degree <= 2
    kinds = [(b.kind, b.order) for b in prog.cone_blocks]
    assert kinds == [("soc", 0), ("psd", 6), ("psd", 3), ("psd", 3)]
    assert prog.cone_blocks[0].size == 4  # gamma plus three weighted entries
    assert prog.layout["tms"] == slice(0, 15)
    assert prog.info["norm"] == "fro"


def test_one_and_inf_agree():
    C = np.array([[1.0, -1.0], [-1.0, 1.0]])
    progs = {}
    sols = {}
    for kind in ("one", "inf"):
        prog, sol = solve_relaxation(ProblemSpec(C, norm=kind), 2)
        progs[kind] = prog
        sols[kind] = map_solution(prog, sol)
    assert [
        (b.kind, b.size) for b in progs["one"].cone_blocks
    ] == [(b.kind, b.size) for b in progs["inf"].cone_blocks]
    npt.assert_allclose(sols["one"].gamma, sols["inf"].gamma, atol=1e-7)
    npt.assert_allclose(sols["one"].gamma, 1.0, atol=1e-6)


def test_identity_is_its_own_projection():
    prog, sol = solve_relaxation(ProblemSpec(np.eye(2), norm="fro"), 2)
    rs = map_solution(prog, sol)
    assert rs.status == "optimal"
    assert abs(rs.gamma) <= 1e-7
    npt.assert_allclose(rs.matrix.values, np.eye(2), atol=1e-6)
    assert check_weak_duality(rs)


def test_relaxation_value_meets_reference_projection():
    # for 2x2 matrices the completely positive cone equals the doubly
    # nonnegative cone, so the reference projection bounds the relaxation
    C = np.array([[1.0, -1.0], [-1.0, 1.0]])
    g_dnn, X_dnn = project_dnn(C, norm="fro")
    npt.assert_allclose(g_dnn, np.sqrt(2.0), atol=1e-6)
    npt.assert_allclose(X_dnn, np.eye(2), atol=1e-4)
    gammas = []
    for k in (2, 3):
        prog, sol = solve_relaxation(ProblemSpec(C, norm="fro"), k)
        assert sol.status == "optimal"
        gammas.append(map_solution(prog, sol).gamma)
    assert gammas[0] <= gammas[1] + 1e-7  # orders tighten monotonically
    assert gammas[1] <= g_dnn + 1e-6
    npt.assert_allclose(gammas[1], g_dnn, atol=1e-5)


def test_project_dnn_fixes_cp_matrices():
    rng = np.random.default_rng(5)
    B = rng.uniform(0.0, 1.0, size=(3, 5))
    C = B @ B.T
    g, X = project_dnn(C, norm="fro")
    assert g <= 1e-6 * (1 + np.linalg.norm(C))
    npt.assert_allclose(X, C, atol=1e-5)


def test_project_dnn_spectral_norm():
    C = np.array([[1.0, -1.0], [-1.0, 1.0]])
    g, X = project_dnn(C, norm="two")
    npt.assert_allclose(g, 1.0, atol=1e-6)
    with pytest.raises(ValueError):
        project_dnn(C, norm="one")


@pytest.mark.parametrize("norm", ["one", "two", "inf", "fro"])
def test_lifted_atomic_measures_are_feasible(norm):
    rng = np.random.default_rng(11)
    n, k = 3, 2
    atoms = np.abs(rng.normal(size=(3, n)))
    atoms /= np.linalg.norm(atoms, axis=1, keepdims=True)
    weights = rng.uniform(0.5, 2.0, size=3)
    X = (atoms.T * weights) @ atoms
    spec = ProblemSpec(
        np.eye(n),
        norm=norm,
        constraints=(
            LinearConstraint(np.eye(n), float(np.trace(X)), "eq"),
            LinearConstraint(np.eye(n), float(np.trace(X)) - 1.0, "ineq"),
        ),
    )
    prog = assemble(spec, k)
    xt = lift_atomic_point(spec, k, atoms, weights)
    assert xt.size == prog.num_vars
    resid = prog.eq_map @ xt - prog.eq_rhs
    assert np.abs(resid).max() <= 1e-9
    img = prog.cone_map @ xt + prog.cone_offset
    for b, sl in zip(prog.cone_blocks, _block_slices(prog.cone_blocks)):
        assert _dist_outside_cone(b, img[sl]) <= 1e-9
    assert xt[prog.layout["gamma"].start] == pytest.approx(
        p_norm(X - spec.C, norm), abs=1e-12
    )


def test_equality_constraint_is_enforced():
    # pinning the trace to its current value keeps the identity optimal
    spec = ProblemSpec(
        np.eye(2),
        norm="fro",
        constraints=(LinearConstraint(np.eye(2), 2.0, "eq"),),
    )
    prog, sol = solve_relaxation(spec, 2)
    rs = map_solution(prog, sol)
    assert rs.status == "optimal"
    assert abs(rs.gamma) <= 1e-6
    npt.assert_allclose(np.trace(rs.matrix.values), 2.0, atol=1e-7)


def test_inequality_constraint_pushes_projection():
    # forcing X11 >= 2 moves the projection of the identity to diag(2, 1)
    E11 = np.zeros((2, 2))
    E11[0, 0] = 1.0
    spec = ProblemSpec(
        np.eye(2),
        norm="fro",
        constraints=(LinearConstraint(E11, 2.0, "ineq"),),
    )
    prog, sol = solve_relaxation(spec, 2)
    rs = map_solution(prog, sol)
    assert rs.status == "optimal"
    assert rs.matrix.values[0, 0] >= 2.0 - 1e-7
    npt.assert_allclose(rs.gamma, 1.0, atol=1e-5)
    assert check_weak_duality(rs)


def test_invalid_inputs_are_rejected():
    with pytest.raises(ValueError):
        assemble(ProblemSpec(np.eye(2)), 1)
    with pytest.raises(ValueError):
        ProblemSpec(np.eye(2), norm="nuclear")
    with pytest.raises(ValueError):
        LinearConstraint(np.eye(2), 1.0, "le")
    with pytest.raises(ValueError):
        ProblemSpec(np.eye(2), constraints=(LinearConstraint(np.eye(3), 1.0),))
    with pytest.raises(ValueError):
        ProblemSpec(np.array([[0.0, 1.0], [0.0, 0.0]]))


def test_map_solution_requires_a_point():
    prog = assemble(ProblemSpec(np.eye(2)), 2)
    sol = conic_solve(prog)
    rs = map_solution(prog, sol)
    assert rs.tms.n == 2 and rs.tms.k == 2
    assert rs.xtilde.size == prog.num_vars
    assert rs.dual_objective is not None
