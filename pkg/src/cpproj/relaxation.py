"""Assembly of the order-k projection relaxation as a conic program.

An instance asks for the matrix nearest to C, in one of the matrix norms
handled by `cpproj.norms`, among completely positive matrices satisfying
affine trace constraints <A_i, X> = b_i or >= b_i.  Membership of X in the
completely positive cone is relaxed through the moment-sequence description
from `cpproj.moments`: X is identified with the degree-2 slice of a moment
vector s that satisfies the sphere equalities and the PSD block conditions of
order k.  The sequence of optimal values grows with k toward the exact
projection distance; certification at finite k happens downstream through
flat truncation and atom extraction.

The norm objective turns into standard conic epigraphs:

  fro        one second-order block (gamma, sqrt-2-weighted entry residuals)
  two        one PSD block [[gamma I, X - C], [X - C, gamma I]]
  one / inf  an entrywise split X - C = Y+ - Y- plus per-column sum bounds
             (the two norms coincide on symmetric matrices, so they share
             the same reformulation)
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .conic import (
    ConeBlock,
    ConicProgram,
    ConicSolution,
    SolverSettings,
    solve as conic_solve,
)
from .moments import moment_cone_constraints
from .norms import NORM_KINDS, p_norm
from .polybasis import (
    ETms,
    SymMatrix,
    Tms,
    basis_size,
    matrix_of_etms,
    moments_of_atoms,
    vech,
    vech_inv,
    weighted_vech,
)

__all__ = [
    "LinearConstraint",
    "ProblemSpec",
    "RelaxationSolution",
    "assemble",
    "assemble_witness",
    "map_solution",
    "solve_relaxation",
    "check_weak_duality",
    "project_dnn",
    "lift_atomic_point",
]

_SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True, eq=False)
class LinearConstraint:
    """<matrix, X> == rhs (kind "eq") or <matrix, X> >= rhs (kind "ineq")."""

    matrix: np.ndarray
    rhs: float
    kind: str = "eq"

    def __post_init__(self) -> None:
        if self.kind not in ("eq", "ineq"):
            raise ValueError(f"constraint kind must be 'eq' or 'ineq', got {self.kind!r}")
        A = SymMatrix(np.asarray(self.matrix, dtype=float)).values
        object.__setattr__(self, "matrix", A)
        object.__setattr__(self, "rhs", float(self.rhs))


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """Projection instance: target matrix, norm, affine constraints."""

    C: np.ndarray
    norm: str = "fro"
    constraints: tuple[LinearConstraint, ...] = ()

    def __post_init__(self) -> None:
        C = SymMatrix(np.asarray(self.C, dtype=float)).values
        object.__setattr__(self, "C", C)
        if self.norm not in NORM_KINDS:
            raise ValueError(f"unknown norm {self.norm!r}")
        object.__setattr__(self, "constraints", tuple(self.constraints))
        for con in self.constraints:
            if con.matrix.shape != C.shape:
                raise ValueError("constraint matrix shape differs from the target")

    @property
    def dim(self) -> int:
        return self.C.shape[0]

    @property
    def equalities(self) -> tuple[LinearConstraint, ...]:
        return tuple(c for c in self.constraints if c.kind == "eq")

    @property
    def inequalities(self) -> tuple[LinearConstraint, ...]:
        return tuple(c for c in self.constraints if c.kind == "ineq")


def _vech_index(n: int, i: int, j: int) -> int:
    if i > j:
        i, j = j, i
    return i * n - i * (i + 1) // 2 + j


def _triu_index(p: int, r: int, c: int) -> int:
    return r * p - r * (r + 1) // 2 + c


class _ConeRows:
    """Accumulates cone rows as triplets plus offsets and block descriptors."""

    def __init__(self, num_vars: int):
        self.num_vars = num_vars
        self.rows: list[int] = []
        self.cols: list[int] = []
        self.vals: list[float] = []
        self.offsets: list[float] = []
        self.blocks: list[ConeBlock] = []
        self.at = 0

    def add_row(self, cols, vals, offset=0.0):
        for c, v in zip(cols, vals):
            self.rows.append(self.at)
            self.cols.append(c)
            self.vals.append(float(v))
        self.offsets.append(float(offset))
        self.at += 1

    def add_sparse(self, mat: sp.csr_matrix, offsets=None):
        coo = mat.tocoo()
        self.rows.extend((coo.row + self.at).tolist())
        self.cols.extend(coo.col.tolist())
        self.vals.extend(coo.data.tolist())
        m = mat.shape[0]
        self.offsets.extend(
            [0.0] * m if offsets is None else [float(v) for v in offsets]
        )
        self.at += m

    def close_block(self, kind: str, order: int = 0):
        start = sum(b.size for b in self.blocks)
        size = self.at - start
        if size > 0:
            self.blocks.append(ConeBlock(kind, size, order))

    def matrices(self):
        mat = sp.csr_matrix(
            (self.vals, (self.rows, self.cols)), shape=(self.at, self.num_vars)
        )
        return mat, np.asarray(self.offsets), tuple(self.blocks)


def assemble(spec: ProblemSpec, k: int) -> ConicProgram:
    """Build the order-k conic relaxation of the projection instance."""
    if k < 2:
        raise ValueError("relaxation order must be at least 2")
    n = spec.dim
    nbar = n * (n + 1) // 2
    L = basis_size(n, 2 * k)
    system = moment_cone_constraints(n, k)
    e_off = 1 + n  # degree-2 monomials start right after degree <= 1

    layout: dict[str, slice] = {"tms": slice(0, L), "gamma": slice(L, L + 1)}
    cur = L + 1
    if spec.norm in ("one", "inf"):
        layout["y_pos"] = slice(cur, cur + nbar)
        cur += nbar
        layout["y_neg"] = slice(cur, cur + nbar)
        cur += nbar
    N = cur
    g = L  # gamma column

    objective = np.zeros(N)
    objective[g] = 1.0

    cvech = vech(spec.C)

    # --- equality rows ------------------------------------------------------
    eq_parts = [
        sp.hstack(
            [system.equality, sp.csr_matrix((system.equality.shape[0], N - L))],
            format="csr",
        )
    ]
    eq_rhs = [np.zeros(system.equality.shape[0])]

    rows, cols, vals, rhs = [], [], [], []
    r = 0
    for con in spec.equalities:
        w = weighted_vech(con.matrix)
        for m in range(nbar):
            if w[m] != 0.0:
                rows.append(r)
                cols.append(e_off + m)
                vals.append(w[m])
        rhs.append(con.rhs)
        r += 1
    if spec.norm in ("one", "inf"):
        yp, yn = layout["y_pos"].start, layout["y_neg"].start
        for m in range(nbar):
            rows.extend([r, r, r])
            cols.extend([e_off + m, yp + m, yn + m])
            vals.extend([1.0, -1.0, 1.0])
            rhs.append(cvech[m])
            r += 1
    if r:
        eq_parts.append(sp.csr_matrix((vals, (rows, cols)), shape=(r, N)))
        eq_rhs.append(np.asarray(rhs))
    eq_map = sp.vstack(eq_parts, format="csr")
    eq_vec = np.concatenate(eq_rhs)

    # --- cone rows ----------------------------------------------------------
    cone = _ConeRows(N)

    for con in spec.inequalities:
        w = weighted_vech(con.matrix)
        nz = np.nonzero(w)[0]
        cone.add_row(e_off + nz, w[nz], offset=-con.rhs)
    if spec.norm in ("one", "inf"):
        yp, yn = layout["y_pos"].start, layout["y_neg"].start
        for m in range(nbar):
            cone.add_row([yp + m], [1.0])
        for m in range(nbar):
            cone.add_row([yn + m], [1.0])
        pairs = [(a, b) for a in range(n) for b in range(a, n)]
        for j in range(n):
            cs, vs = [g], [1.0]
            for m, (a, b) in enumerate(pairs):
                if j in (a, b):
                    cs.extend([yp + m, yn + m])
                    vs.extend([-1.0, -1.0])
            cone.add_row(cs, vs)
    cone.close_block("nonneg")

    if spec.norm == "fro":
        cone.add_row([g], [1.0])
        for m, (a, b) in enumerate((a, b) for a in range(n) for b in range(a, n)):
            wgt = _SQRT2 if a != b else 1.0
            cone.add_row([e_off + m], [wgt], offset=-wgt * cvech[m])
        cone.close_block("soc")
    elif spec.norm == "two":
        p = 2 * n
        for rr in range(p):
            for cc in range(rr, p):
                if rr == cc:
                    cone.add_row([g], [1.0])
                elif rr < n <= cc:
                    i, j = rr, cc - n
                    m = _vech_index(n, i, j)
                    cone.add_row(
                        [e_off + m], [_SQRT2], offset=-_SQRT2 * spec.C[i, j]
                    )
                else:
                    cone.add_row([], [])
        cone.close_block("psd", order=p)

    _append_moment_blocks(cone, system, N)

    cone_map, cone_offset, blocks = cone.matrices()
    return ConicProgram(
        objective=objective,
        eq_map=eq_map,
        eq_rhs=eq_vec,
        cone_map=cone_map,
        cone_offset=cone_offset,
        cone_blocks=blocks,
        layout=layout,
        info={"n": n, "k": k, "norm": spec.norm},
    )


def _append_moment_blocks(cone: _ConeRows, system, num_vars: int) -> None:
    """Append the svec-scaled PSD blocks of the moment system to `cone`.

    The moment vector is assumed to occupy the leading columns; extra
    variables (epigraph, splits) just get zero columns.
    """
    for blk in system.psd_blocks:
        scale = np.array(
            [1.0 if a == b else _SQRT2
             for a in range(blk.order) for b in range(a, blk.order)]
        )
        scaled = sp.diags(scale) @ blk.entries
        pad = num_vars - scaled.shape[1]
        if pad:
            scaled = sp.hstack(
                [scaled, sp.csr_matrix((scaled.shape[0], pad))], format="csr"
            )
        cone.add_sparse(scaled)
        cone.close_block("psd", order=blk.order)


def assemble_witness(
    X: np.ndarray, k: int, seed: int = 0, slack: float = 0.0
) -> ConicProgram:
    """Build a program whose solution is an extraction-friendly certificate
    that the fixed matrix X is completely positive.

    The projection solve determines the optimal matrix but not the moment
    vector behind it: every sequence whose degree-2 slice equals vech(X) is
    equally optimal, and a path-following solver lands in the interior of
    that face, where flat truncation essentially never holds.  Minimizing a
    random positive definite functional of the order-k moment matrix over
    the same face pushes the iterates to an extreme point instead, and
    extreme points of this section come from atomic measures, so the rank
    plateau reappears whenever X admits a nonnegative factorization that is
    visible at order k.

    With `slack` zero the degree-2 slice is pinned by equalities.  That is
    the exact section, but when X itself came out of a solver at finite
    accuracy the section can miss the cone by a hair and has no interior, so
    the witness solve may stall or report infeasibility.  A positive slack
    relaxes the pin to a Euclidean ball of that radius, which restores a
    strictly feasible interior while moving the recovered factors by at most
    the same hair; callers verify the factorization against X afterwards.
    """
    if k < 2:
        raise ValueError("relaxation order must be at least 2")
    if slack < 0.0:
        raise ValueError("slack must be nonnegative")
    X = SymMatrix(np.asarray(X, dtype=float)).values
    n = X.shape[0]
    nbar = n * (n + 1) // 2
    L = basis_size(n, 2 * k)
    system = moment_cone_constraints(n, k)
    e_off = 1 + n

    unit = system.psd_blocks[0]
    rng = np.random.default_rng(seed)
    G = rng.standard_normal((unit.order, unit.order))
    R = G @ G.T + 0.1 * np.eye(unit.order)
    R = (R + R.T) / (2.0 * np.linalg.norm(R))
    # <R, M_k(s)> is linear in s; fold R through the triu entry map
    objective = unit.entries.T @ weighted_vech(R)

    xv = vech(X)
    cone = _ConeRows(L)
    _append_moment_blocks(cone, system, L)
    if slack > 0.0:
        eq_map = system.equality
        eq_rhs = np.zeros(system.equality.shape[0])
        cone.add_row([], [], offset=float(slack))
        for m in range(nbar):
            cone.add_row([e_off + m], [1.0], offset=-float(xv[m]))
        cone.close_block("soc")
    else:
        rows = list(range(nbar))
        cols = [e_off + m for m in range(nbar)]
        pins = sp.csr_matrix((np.ones(nbar), (rows, cols)), shape=(nbar, L))
        eq_map = sp.vstack([system.equality, pins], format="csr")
        eq_rhs = np.concatenate([np.zeros(system.equality.shape[0]), xv])

    cone_map, cone_offset, blocks = cone.matrices()
    return ConicProgram(
        objective=np.asarray(objective, dtype=float),
        eq_map=eq_map,
        eq_rhs=eq_rhs,
        cone_map=cone_map,
        cone_offset=cone_offset,
        cone_blocks=blocks,
        layout={"tms": slice(0, L)},
        info={"n": n, "k": k, "seed": seed, "slack": float(slack)},
    )


@dataclass(frozen=True, eq=False)
class RelaxationSolution:
    """Mapped-back solution of one relaxation order."""

    tms: Tms
    matrix: SymMatrix
    gamma: float
    xtilde: np.ndarray
    dual_objective: Optional[float]
    conic: ConicSolution

    @property
    def status(self) -> str:
        return self.conic.status


def map_solution(prog: ConicProgram, sol: ConicSolution) -> RelaxationSolution:
    """Split a conic solution back into moment sequence, matrix and distance."""
    if sol.primal is None:
        raise ValueError(f"solution with status {sol.status!r} carries no point")
    n = int(prog.info["n"])
    k = int(prog.info["k"])
    nbar = n * (n + 1) // 2
    xt = sol.primal
    s = xt[prog.layout["tms"]]
    gamma = float(xt[prog.layout["gamma"]][0])
    X = matrix_of_etms(ETms(n, s[1 + n : 1 + n + nbar].copy()))
    return RelaxationSolution(
        tms=Tms(n, k, s.copy()),
        matrix=X,
        gamma=gamma,
        xtilde=xt,
        dual_objective=sol.dual_obj,
        conic=sol,
    )


def solve_relaxation(
    spec: ProblemSpec, k: int, settings: SolverSettings | None = None
):
    """Assemble and solve one order; returns (program, conic solution)."""
    prog = assemble(spec, k)
    return prog, conic_solve(prog, settings)


def check_weak_duality(rsol: RelaxationSolution, tol: float = 1e-7) -> bool:
    """The primal distance bound should never undercut the dual objective."""
    if rsol.dual_objective is None:
        return True
    return rsol.gamma >= rsol.dual_objective - tol


def lift_atomic_point(
    spec: ProblemSpec, k: int, atoms: np.ndarray, weights: np.ndarray
) -> np.ndarray:
    """Decision vector of the order-k program evaluated at an atomic measure.

    Useful as a feasibility audit: the lift of any measure supported on the
    nonnegative unit sphere satisfies every moment-cone row, and gamma is set
    to the exact distance so the norm block is tight.
    """
    n = spec.dim
    tms = moments_of_atoms(np.atleast_2d(atoms), np.asarray(weights, float), k, n=n)
    X = matrix_of_etms(tms.to_etms()).values
    gamma = p_norm(X - spec.C, spec.norm)
    parts = [tms.s, [gamma]]
    if spec.norm in ("one", "inf"):
        y = vech(SymMatrix(X) - SymMatrix(spec.C))
        parts.extend([np.clip(y, 0.0, None), np.clip(-y, 0.0, None)])
    return np.concatenate([np.asarray(p, dtype=float) for p in parts])


def project_dnn(
    C: np.ndarray,
    norm: str = "fro",
    settings: SolverSettings | None = None,
) -> tuple[float, np.ndarray]:
    """Project C onto the doubly nonnegative cone (PSD with no negative
    entries) in the Frobenius or spectral norm.

    For matrices of size up to 4 the doubly nonnegative cone coincides with
    the completely positive cone, which makes this an independent reference
    for small projection instances.
    """
    C = SymMatrix(np.asarray(C, dtype=float)).values
    n = C.shape[0]
    nbar = n * (n + 1) // 2
    if norm not in ("fro", "two"):
        raise ValueError("reference projection supports norms 'fro' and 'two'")
    N = nbar + 1
    g = nbar
    cvech = vech(C)
    objective = np.zeros(N)
    objective[g] = 1.0

    cone = _ConeRows(N)
    for m in range(nbar):
        cone.add_row([m], [1.0])
    cone.close_block("nonneg")
    if norm == "fro":
        cone.add_row([g], [1.0])
        for m, (a, b) in enumerate((a, b) for a in range(n) for b in range(a, n)):
            wgt = _SQRT2 if a != b else 1.0
            cone.add_row([m], [wgt], offset=-wgt * cvech[m])
        cone.close_block("soc")
    else:
        p = 2 * n
        for rr in range(p):
            for cc in range(rr, p):
                if rr == cc:
                    cone.add_row([g], [1.0])
                elif rr < n <= cc:
                    i, j = rr, cc - n
                    cone.add_row(
                        [_vech_index(n, i, j)], [_SQRT2], offset=-_SQRT2 * C[i, j]
                    )
                else:
                    cone.add_row([], [])
        cone.close_block("psd", order=p)
    for i in range(n):
        for j in range(i, n):
            wgt = _SQRT2 if i != j else 1.0
            cone.add_row([_vech_index(n, i, j)], [wgt])
    cone.close_block("psd", order=n)

    cone_map, cone_offset, blocks = cone.matrices()
    prog = ConicProgram(
        objective=objective,
        eq_map=sp.csr_matrix((0, N)),
        eq_rhs=np.zeros(0),
        cone_map=cone_map,
        cone_offset=cone_offset,
        cone_blocks=blocks,
        layout={"vech": slice(0, nbar), "gamma": slice(nbar, N)},
    )
    sol = conic_solve(prog, settings)
    if sol.status != "optimal":
        raise RuntimeError(f"reference projection did not converge: {sol.status}")
    X = vech_inv(sol.primal[:nbar]).values
    return float(sol.primal[g]), X
