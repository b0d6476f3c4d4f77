import io

import numpy as np
import numpy.testing as npt
import pytest
import scipy.sparse as sp

from cpproj.conic import (
    ConeBlock,
    ConicProgram,
    ConicSolverError,
    SolverSettings,
    _dist_outside_cone,
    smat,
    solve,
    svec,
    verify_certificate,
)


def make_program(c, E, d, M, h, blocks, layout=None):
    c = np.asarray(c, dtype=float)
    if layout is None:
        layout = {"v": slice(0, c.size)}
    return ConicProgram(
        objective=c,
        eq_map=sp.csr_matrix(np.atleast_2d(E).reshape(len(d), c.size)),
        eq_rhs=np.asarray(d, dtype=float),
        cone_map=sp.csr_matrix(np.atleast_2d(M).reshape(len(h), c.size)),
        cone_offset=np.asarray(h, dtype=float),
        cone_blocks=tuple(blocks),
        layout=layout,
    )


def test_svec_roundtrip_preserves_inner_products():
    rng = np.random.default_rng(7)
    for p in (1, 2, 5, 9):
        A = rng.normal(size=(p, p))
        A = A + A.T
        B = rng.normal(size=(p, p))
        B = B + B.T
        npt.assert_allclose(smat(svec(A), p), A, atol=1e-13)
        npt.assert_allclose(svec(A) @ svec(B), np.sum(A * B), rtol=1e-12)


def test_cone_block_validation():
    with pytest.raises(ConicSolverError):
        ConeBlock("soc", 1)
    with pytest.raises(ConicSolverError):
        ConeBlock("psd", 5, 2)
    with pytest.raises(ConicSolverError):
        ConeBlock("spd", 3)
    assert ConeBlock.psd(4).size == 10


def test_program_validation():
    with pytest.raises(ConicSolverError):
        ConicProgram(
            objective=np.ones(1),
            eq_map=sp.csr_matrix((0, 1)),
            eq_rhs=np.zeros(0),
            cone_map=sp.csr_matrix([[1.0]]),
            cone_offset=np.zeros(1),
            cone_blocks=(ConeBlock("nonneg", 2),),
            layout={"v": slice(0, 1)},
        )
    with pytest.raises(ConicSolverError):
        make_program([1.0, 0.0], np.zeros((0, 2)), [], [[1.0, 0.0]], [0.0],
                     [ConeBlock("nonneg", 1)],
                     layout={"a": slice(0, 2), "b": slice(1, 2)})


def test_lp_scalar_bound():
    # minimize x subject to x >= 1
    prog = make_program([1.0], np.zeros((0, 1)), [], [[1.0]], [-1.0],
                        [ConeBlock("nonneg", 1)])
    sol = solve(prog)
    assert sol.status == "optimal"
    npt.assert_allclose(sol.primal, [1.0], atol=1e-7)
    npt.assert_allclose(sol.primal_obj, 1.0, atol=1e-7)
    npt.assert_allclose(sol.dual_obj, 1.0, atol=1e-7)
    npt.assert_allclose(sol.dual_cone, [1.0], atol=1e-6)


def test_soc_euclidean_norm():
    # minimize t subject to ||(3, 4)|| <= t
    prog = make_program([1.0], np.zeros((0, 1)), [],
                        [[1.0], [0.0], [0.0]], [0.0, 3.0, 4.0],
                        [ConeBlock("soc", 3)])
    sol = solve(prog)
    assert sol.status == "optimal"
    npt.assert_allclose(sol.primal_obj, 5.0, atol=1e-7)
    npt.assert_allclose(sol.dual_obj, 5.0, atol=1e-7)
    # dual certificate is the unit normal of the cone facet
    npt.assert_allclose(sol.dual_cone, [1.0, -0.6, -0.8], atol=1e-6)


def test_sdp_matrix_completion():
    # variables (x11, x12, x22); pin x11 = 1, x12 = 0.9, minimize the trace
    # over PSD completions.  The optimal x22 is 0.9^2.
    rt2 = np.sqrt(2.0)
    M = np.array([[1.0, 0.0, 0.0], [0.0, rt2, 0.0], [0.0, 0.0, 1.0]])
    E = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    prog = make_program([1.0, 0.0, 1.0], E, [1.0, 0.9], M, [0.0, 0.0, 0.0],
                        [ConeBlock.psd(2)])
    sol = solve(prog)
    assert sol.status == "optimal"
    npt.assert_allclose(sol.primal_obj, 1.81, atol=1e-6)
    npt.assert_allclose(sol.primal, [1.0, 0.9, 0.81], atol=1e-6)
    X = smat(sol.dual_cone * 0 + M @ sol.primal, 2)
    assert np.linalg.eigvalsh(X).min() >= -1e-8


def test_equality_only_program():
    prog = make_program([0.0], [[1.0]], [3.0], np.zeros((0, 1)), [], [])
    sol = solve(prog)
    assert sol.status == "optimal"
    npt.assert_allclose(sol.primal, [3.0], atol=1e-7)


def test_infeasible_bounds_yield_verified_certificate():
    # x >= 1 and x <= 0 cannot hold together
    prog = make_program([1.0], np.zeros((0, 1)), [],
                        [[1.0], [-1.0]], [-1.0, 0.0],
                        [ConeBlock("nonneg", 2)])
    sol = solve(prog)
    assert sol.status == "primal_infeasible"
    assert verify_certificate(prog, sol)
    assert sol.residuals["margin_error"] <= 1e-8
    z = sol.dual_cone
    assert z.min() >= -1e-8
    npt.assert_allclose(prog.cone_map.T @ z, [0.0], atol=1e-6)


def test_unbounded_objective_yields_ray():
    # minimize -x subject to x >= 0
    prog = make_program([-1.0], np.zeros((0, 1)), [], [[1.0]], [0.0],
                        [ConeBlock("nonneg", 1)])
    sol = solve(prog)
    assert sol.status == "dual_infeasible"
    assert verify_certificate(prog, sol)
    npt.assert_allclose(prog.objective @ sol.primal, -1.0, atol=1e-8)


def test_zero_block_matches_explicit_equality():
    # pin x = 2 once through a zero cone block, once as a plain equality
    pinned = make_program([1.0], np.zeros((0, 1)), [],
                          [[1.0], [1.0]], [-2.0, 0.0],
                          [ConeBlock("zero", 1), ConeBlock("nonneg", 1)])
    direct = make_program([1.0], [[1.0]], [2.0], [[1.0]], [0.0],
                          [ConeBlock("nonneg", 1)])
    a, b = solve(pinned), solve(direct)
    assert a.status == b.status == "optimal"
    npt.assert_allclose(a.primal, b.primal, atol=1e-7)
    npt.assert_allclose(a.primal_obj, 2.0, atol=1e-7)
    assert a.dual_cone.size == 2  # multiplier reported for the pinned row too


def _interior_point(kind, size, order, rng, dual=False):
    if kind == "zero":
        return np.zeros(size) if not dual else rng.normal(size=size)
    if kind == "nonneg":
        return rng.uniform(0.5, 2.0, size=size)
    if kind == "soc":
        tail = rng.normal(size=size - 1)
        return np.concatenate(([np.linalg.norm(tail) + rng.uniform(0.5, 2.0)], tail))
    A = rng.normal(size=(order, order))
    return svec(A @ A.T + (0.5 + rng.uniform()) * np.eye(order))


def _random_blocks(rng, allow_zero=True):
    blocks = []
    if allow_zero and rng.uniform() < 0.3:
        blocks.append(ConeBlock("zero", int(rng.integers(1, 3))))
    if rng.uniform() < 0.8:
        blocks.append(ConeBlock("nonneg", int(rng.integers(1, 6))))
    for _ in range(rng.integers(0, 3)):
        blocks.append(ConeBlock("soc", int(rng.integers(2, 6))))
    for _ in range(rng.integers(0, 3)):
        blocks.append(ConeBlock.psd(int(rng.integers(1, 7))))
    if not blocks:
        blocks.append(ConeBlock("nonneg", 2))
    return blocks


def _feasible_program(seed):
    """Program with a known strictly feasible primal-dual pair baked in."""
    rng = np.random.default_rng(seed)
    blocks = _random_blocks(rng)
    m_k = sum(b.size for b in blocks)
    n = int(rng.integers(3, 12))
    m_e = int(rng.integers(0, 4))
    E = rng.normal(size=(m_e, n))
    M = rng.normal(size=(m_k, n))
    x0 = rng.normal(size=n)
    y0 = rng.normal(size=m_e)
    s_parts, z_parts = [], []
    for b in blocks:
        s_parts.append(_interior_point(b.kind, b.size, b.order, rng))
        z_parts.append(_interior_point(b.kind, b.size, b.order, rng, dual=True))
    s0 = np.concatenate(s_parts)
    z0 = np.concatenate(z_parts)
    h = s0 - M @ x0
    d = E @ x0
    c = E.T @ y0 + M.T @ z0
    prog = make_program(c, E, d, M, h, blocks)
    return prog, x0, y0, z0


def _block_slices(blocks):
    out, at = [], 0
    for b in blocks:
        out.append(slice(at, at + b.size))
        at += b.size
    return out


@pytest.mark.parametrize("seed", range(100))
def test_random_feasible_programs(seed):
    prog, x0, y0, z0 = _feasible_program(seed)
    sol = solve(prog)
    assert sol.status == "optimal", f"seed {seed}: {sol.status} {sol.residuals}"
    x, y, z = sol.primal, sol.dual_eq, sol.dual_cone
    d, h, c = prog.eq_rhs, prog.cone_offset, prog.objective

    # recomputed optimality conditions, independent of solver bookkeeping
    assert np.abs(prog.eq_map @ x - d).max(initial=0.0) <= 1e-6 * (1 + np.abs(d).max(initial=0.0))
    img = prog.cone_map @ x + h
    for b, sl in zip(prog.cone_blocks, _block_slices(prog.cone_blocks)):
        assert _dist_outside_cone(b, img[sl]) <= 1e-6
        if b.kind != "zero":
            assert _dist_outside_cone(b, z[sl]) <= 1e-6
    adj = prog.eq_map.T @ y + prog.cone_map.T @ z
    assert np.abs(adj - c).max() <= 1e-6 * (1 + np.abs(c).max())
    assert abs(sol.primal_obj - sol.dual_obj) <= 1e-6 * max(1.0, abs(sol.primal_obj))
    assert max(sol.residuals["primal_feas"], sol.residuals["dual_feas"]) <= 1e-7
    assert sol.residuals["rel_gap"] <= 1e-7

    # the baked-in pair sandwiches the optimal value
    pobj0 = c @ x0
    dobj0 = d @ y0 - h @ z0
    scale = 1 + abs(pobj0) + abs(dobj0)
    assert sol.primal_obj <= pobj0 + 1e-6 * scale
    assert sol.dual_obj >= dobj0 - 1e-6 * scale


def _infeasible_program(seed):
    """Empty feasible set by construction, but a strictly feasible dual."""
    rng = np.random.default_rng(seed + 5000)
    blocks = _random_blocks(rng, allow_zero=False)
    m_k = sum(b.size for b in blocks)
    n = int(rng.integers(3, 9))
    z0 = np.concatenate(
        [_interior_point(b.kind, b.size, b.order, rng) for b in blocks]
    )
    M0 = rng.normal(size=(m_k, n))
    M = M0 - np.outer(z0, z0 @ M0) / (z0 @ z0)
    h0 = rng.normal(size=m_k)
    h = h0 - z0 * (z0 @ h0 + 1.0) / (z0 @ z0)
    # now z0 . (M x + h) == -1 for every x, so the cone rows are infeasible
    m_e = int(rng.integers(0, 3))
    E = rng.normal(size=(m_e, n))
    d = E @ rng.normal(size=n)
    z1 = np.concatenate(
        [_interior_point(b.kind, b.size, b.order, rng) for b in blocks]
    )
    c = E.T @ rng.normal(size=m_e) + M.T @ z1  # keeps the dual feasible
    return make_program(c, E, d, M, h, blocks)


@pytest.mark.parametrize("seed", range(20))
def test_random_infeasible_programs(seed):
    prog = _infeasible_program(seed)
    sol = solve(prog)
    assert sol.status == "primal_infeasible", f"seed {seed}: {sol.status}"
    assert verify_certificate(prog, sol)
    margin = prog.eq_rhs @ sol.dual_eq - prog.cone_offset @ sol.dual_cone
    npt.assert_allclose(margin, 1.0, atol=1e-6)


def test_large_psd_block():
    rng = np.random.default_rng(42)
    order = 25
    block = ConeBlock.psd(order)
    n = 10
    M = rng.normal(size=(block.size, n))
    x0 = rng.normal(size=n)
    A = rng.normal(size=(order, order))
    s0 = svec(A @ A.T + np.eye(order))
    B = rng.normal(size=(order, order))
    z0 = svec(B @ B.T + np.eye(order))
    h = s0 - M @ x0
    c = M.T @ z0
    prog = make_program(c, np.zeros((0, n)), [], M, h, [block])
    sol = solve(prog)
    assert sol.status == "optimal"
    assert max(sol.residuals["primal_feas"], sol.residuals["dual_feas"]) <= 1e-7
    assert sol.residuals["rel_gap"] <= 1e-7


def test_determinism_bitwise():
    prog, *_ = _feasible_program(3)
    a = solve(prog)
    b = solve(prog)
    assert np.array_equal(a.primal, b.primal)
    assert np.array_equal(a.dual_cone, b.dual_cone)
    assert a.iterations == b.iterations


def test_iteration_limit_reports_best_iterate():
    prog, *_ = _feasible_program(11)
    sol = solve(prog, SolverSettings(max_iters=2))
    assert sol.status == "iteration_limit"
    assert sol.primal is not None
    assert "primal_feas" in sol.residuals


def test_dump_is_plain_text():
    prog, *_ = _feasible_program(1)
    buf = io.StringIO()
    prog.dump(buf)
    text = buf.getvalue()
    assert text.startswith("vars ")
    assert "block" in text
