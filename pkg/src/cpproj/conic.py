"""Primal-dual interior-point solver for conic programs.

Programs are stored as

    minimize    c . v
    subject to  eq_map @ v == eq_rhs
                cone_map @ v + cone_offset  in  K,

where K is an ordered product of zero / nonnegative / second-order / PSD
blocks partitioning the cone image.  PSD blocks use the isometric upper
triangle vectorization (off-diagonal entries scaled by sqrt(2)) so that block
inner products equal plain dot products.

The algorithm embeds the primal-dual pair in a homogeneous self-dual model,
scales each cone block by its Nesterov-Todd point, and takes Mehrotra
predictor-corrector steps with a 0.99 fraction-to-boundary rule.  Both
infeasibility directions surface as convergence modes of the embedding; a
Farkas certificate or improving ray is only reported after it has been
re-verified against the raw program data.  The search direction comes from a
dense symmetric-indefinite factorization of the cone-eliminated KKT system
with static regularization and a couple of iterative-refinement sweeps, so
identical inputs produce identical iterates.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Mapping, Optional, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.linalg import lapack

__all__ = [
    "ConeBlock",
    "ConicProgram",
    "ConicSolution",
    "SolverSettings",
    "ConicSolverError",
    "solve",
    "verify_certificate",
]

KINDS = ("zero", "nonneg", "soc", "psd")

logger = logging.getLogger(__name__)


class ConicSolverError(RuntimeError):
    """Raised for malformed programs or unrecoverable numerical breakdowns."""


@dataclass(frozen=True)
class ConeBlock:
    """One factor of the cone product; `size` counts cone-image coordinates."""

    kind: str
    size: int
    order: int = 0  # matrix order for psd blocks, 0 otherwise

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ConicSolverError(f"unknown cone kind {self.kind!r}")
        if self.size < 1:
            raise ConicSolverError("cone blocks must be nonempty")
        if self.kind == "psd":
            if self.order < 1 or self.order * (self.order + 1) // 2 != self.size:
                raise ConicSolverError(
                    f"psd block size {self.size} does not match order {self.order}"
                )
        elif self.kind == "soc":
            if self.size < 2:
                raise ConicSolverError("second-order blocks need size >= 2")

    @staticmethod
    def psd(order: int) -> "ConeBlock":
        return ConeBlock("psd", order * (order + 1) // 2, order)


@dataclass(frozen=True, eq=False)
class ConicProgram:
    """Immutable conic program data; see the module docstring for semantics."""

    objective: np.ndarray
    eq_map: sp.csr_matrix
    eq_rhs: np.ndarray
    cone_map: sp.csr_matrix
    cone_offset: np.ndarray
    cone_blocks: tuple[ConeBlock, ...]
    layout: Mapping[str, slice]
    info: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self) -> None:
        c = np.asarray(self.objective, dtype=float).ravel()
        object.__setattr__(self, "objective", c)
        n = c.size
        eq = sp.csr_matrix(self.eq_map, dtype=float)
        cm = sp.csr_matrix(self.cone_map, dtype=float)
        object.__setattr__(self, "eq_map", eq)
        object.__setattr__(self, "cone_map", cm)
        object.__setattr__(self, "eq_rhs", np.asarray(self.eq_rhs, dtype=float).ravel())
        object.__setattr__(
            self, "cone_offset", np.asarray(self.cone_offset, dtype=float).ravel()
        )
        if eq.shape[1] != n or cm.shape[1] != n:
            raise ConicSolverError("map column counts disagree with the objective length")
        if self.eq_rhs.size != eq.shape[0]:
            raise ConicSolverError("equality right-hand side has the wrong length")
        if self.cone_offset.size != cm.shape[0]:
            raise ConicSolverError("cone offset has the wrong length")
        if sum(b.size for b in self.cone_blocks) != cm.shape[0]:
            raise ConicSolverError("cone blocks do not partition the cone image")
        covered = np.zeros(n, dtype=bool)
        for name, sl in self.layout.items():
            picked = covered[sl]
            if picked.any():
                raise ConicSolverError(f"layout slice {name!r} overlaps another slice")
            covered[sl] = True
        if not covered.all():
            raise ConicSolverError("layout does not cover every decision coordinate")

    @property
    def num_vars(self) -> int:
        return self.objective.size

    def dump(self, fh) -> None:
        """Plain-text dump: sizes, layout, blocks, then triplets of each map."""
        fh.write(f"vars {self.num_vars} eq_rows {self.eq_map.shape[0]} cone_rows {self.cone_map.shape[0]}\n")
        for name, sl in self.layout.items():
            fh.write(f"layout {name} {sl.start} {sl.stop}\n")
        for b in self.cone_blocks:
            fh.write(f"block {b.kind} {b.size} {b.order}\n")
        for label, mat, vec in (
            ("eq", self.eq_map, self.eq_rhs),
            ("cone", self.cone_map, self.cone_offset),
        ):
            coo = mat.tocoo()
            for r, c, v in zip(coo.row, coo.col, coo.data):
                fh.write(f"{label} {r} {c} {v!r}\n")
            for r, v in enumerate(vec):
                if v != 0.0:
                    fh.write(f"{label}_rhs {r} {v!r}\n")
        fh.write(f"objective {' '.join(repr(v) for v in self.objective)}\n")


@dataclass(frozen=True)
class SolverSettings:
    tol_feas: float = 1e-8
    tol_gap: float = 1e-8
    max_iters: int = 200
    infeas_threshold: float = 1e-8  # declare infeasibility once tau/kappa drops below
    static_reg: float = 1e-9
    refine_steps: int = 2
    cert_tol: float = 1e-6

    def __post_init__(self) -> None:
        if min(self.tol_feas, self.tol_gap, self.infeas_threshold, self.static_reg) <= 0:
            raise ConicSolverError("tolerances must be positive")
        if self.max_iters < 1:
            raise ConicSolverError("need at least one iteration")


@dataclass(frozen=True, eq=False)
class ConicSolution:
    """Solver outcome.

    For status "optimal", `primal`, `dual_eq`, `dual_cone` hold the scaled
    primal-dual point.  For "primal_infeasible" the pair (dual_eq, dual_cone)
    is a Farkas certificate normalized to eq_rhs . y - cone_offset . z == 1
    with adjoint eq_map^T y + cone_map^T z == 0 and z in the dual cone.  For
    "dual_infeasible" `primal` is an improving ray normalized to c . x == -1.
    """

    status: str
    primal: Optional[np.ndarray]
    dual_eq: Optional[np.ndarray]
    dual_cone: Optional[np.ndarray]
    primal_obj: Optional[float]
    dual_obj: Optional[float]
    residuals: Mapping[str, float]
    iterations: int


# ---------------------------------------------------------------------------
# svec helpers (isometric symmetric vectorization)


@lru_cache(maxsize=None)
def _svec_index(order: int):
    iu = np.triu_indices(order)
    scale = np.where(iu[0] == iu[1], 1.0, math.sqrt(2.0))
    scale.setflags(write=False)
    return iu, scale


def svec(U: np.ndarray) -> np.ndarray:
    iu, scale = _svec_index(U.shape[0])
    return U[iu] * scale


def smat(v: np.ndarray, order: int) -> np.ndarray:
    iu, scale = _svec_index(order)
    U = np.zeros((order, order))
    U[iu] = v / scale
    return U + np.triu(U, 1).T


# ---------------------------------------------------------------------------
# per-block Nesterov-Todd scalings

_SQRT_EPS = 1e-14


class _Breakdown(Exception):
    pass


class _NonnegScaling:
    def __init__(self, s, z):
        if s.min(initial=np.inf) <= 0 or z.min(initial=np.inf) <= 0:
            raise _Breakdown
        self.w = np.sqrt(s / z)
        self.lam = np.sqrt(s * z)
        self.deg = s.size

    def e(self):
        return np.ones(self.lam.size)

    def hinv_mat(self, cols: np.ndarray) -> np.ndarray:
        return cols / (self.w * self.w)[:, None]

    def hinv_vec(self, v):
        return v / (self.w * self.w)

    def winv_vec(self, v):
        return v / self.w

    def wtinv_vec(self, v):
        return v / self.w

    def w_vec(self, v):
        return v * self.w

    def lam_solve(self, d):
        return d / self.lam

    def lam_sq(self):
        return self.lam * self.lam

    def jordan(self, a, b):
        return a * b

    @staticmethod
    def max_step(u, du):
        neg = du < 0
        if not neg.any():
            return np.inf
        return float(np.min(-u[neg] / du[neg]))


def _soc_det(u):
    return u[0] * u[0] - u[1:] @ u[1:]


class _SocScaling:
    def __init__(self, s, z):
        ds, dz = _soc_det(s), _soc_det(z)
        if ds <= 0 or dz <= 0 or s[0] <= 0 or z[0] <= 0:
            raise _Breakdown
        ns, nz = math.sqrt(ds), math.sqrt(dz)
        sh, zh = s / ns, z / nz
        gamma = math.sqrt((1.0 + sh @ zh) / 2.0)
        wbar = (sh + np.concatenate(([zh[0]], -zh[1:]))) / (2.0 * gamma)
        # Jordan square root of wbar (its determinant is 1 by construction)
        v = wbar.copy()
        v[0] += 1.0
        v /= math.sqrt(2.0 * (wbar[0] + 1.0))
        eta = ns / nz
        q = s.size
        J = np.diag(np.concatenate(([1.0], -np.ones(q - 1))))
        self.W = math.sqrt(eta) * (2.0 * np.outer(v, v) - J)
        jv = np.concatenate(([v[0]], -v[1:]))
        self.Winv = (2.0 * np.outer(jv, jv) - J) / math.sqrt(eta)
        self.Hinv = self.Winv @ self.Winv
        self.lam = self.Winv @ s
        self.deg = 1

    def e(self):
        out = np.zeros(self.lam.size)
        out[0] = 1.0
        return out

    def hinv_mat(self, cols):
        return self.Hinv @ cols

    def hinv_vec(self, v):
        return self.Hinv @ v

    def winv_vec(self, v):
        return self.Winv @ v

    def wtinv_vec(self, v):
        return self.Winv @ v

    def w_vec(self, v):
        return self.W @ v

    def lam_solve(self, d):
        lam = self.lam
        det = _soc_det(lam)
        if abs(det) < _SQRT_EPS:
            raise _Breakdown
        u0 = (lam[0] * d[0] - lam[1:] @ d[1:]) / det
        u1 = (d[1:] - u0 * lam[1:]) / lam[0]
        return np.concatenate(([u0], u1))

    def lam_sq(self):
        return self.jordan(self.lam, self.lam)

    def jordan(self, a, b):
        return np.concatenate(([a @ b], a[0] * b[1:] + b[0] * a[1:]))

    @staticmethod
    def max_step(u, du):
        # first positive root of det(u + alpha du) = 0, if any
        a = _soc_det(du)
        b = 2.0 * (u[0] * du[0] - u[1:] @ du[1:])
        c0 = _soc_det(u)
        roots = []
        if abs(a) < 1e-300:
            if b < 0:
                roots.append(-c0 / b)
        else:
            disc = b * b - 4.0 * a * c0
            if disc >= 0:
                sq = math.sqrt(disc)
                roots.extend(((-b - sq) / (2 * a), (-b + sq) / (2 * a)))
        pos = [r for r in roots if r > 0]
        return float(min(pos)) if pos else np.inf


class _PsdScaling:
    def __init__(self, s, z, order):
        self.order = order
        S = smat(s, order)
        Z = smat(z, order)
        try:
            Ls = np.linalg.cholesky(S)
            Lz = np.linalg.cholesky(Z)
        except np.linalg.LinAlgError:
            raise _Breakdown from None
        U, sig, Vt = np.linalg.svd(Lz.T @ Ls)
        if sig.min(initial=np.inf) <= 0:
            raise _Breakdown
        isq = 1.0 / np.sqrt(sig)
        self.R = Ls @ (Vt.T * isq[None, :])
        self.Rinv = (U * isq[None, :]).T @ Lz.T
        self.lam_diag = sig
        self.lam = svec(np.diag(sig))
        G = self.Rinv.T @ self.Rinv  # (R R^T)^{-1}
        self.Ginv = G
        self.Ls = Ls
        self.Lz = Lz
        self.deg = order

    def e(self):
        return svec(np.eye(self.order))

    def _batch(self, cols):
        iu, scale = _svec_index(self.order)
        T = np.zeros((cols.shape[1], self.order, self.order))
        vals = (cols / scale[:, None]).T
        T[:, iu[0], iu[1]] = vals
        T[:, iu[1], iu[0]] = vals
        return T

    def hinv_mat(self, cols):
        iu, scale = _svec_index(self.order)
        T = self._batch(cols)
        out = self.Ginv @ T @ self.Ginv
        return (out[:, iu[0], iu[1]] * scale[None, :]).T

    def _congr(self, v, L, Rm):
        return svec(L @ smat(v, self.order) @ Rm)

    def hinv_vec(self, v):
        return self._congr(v, self.Ginv, self.Ginv)

    def winv_vec(self, v):
        return self._congr(v, self.Rinv.T, self.Rinv)

    def wtinv_vec(self, v):
        return self._congr(v, self.Rinv, self.Rinv.T)

    def w_vec(self, v):
        return self._congr(v, self.R.T, self.R)

    def lam_solve(self, d):
        D = smat(d, self.order)
        denom = 0.5 * (self.lam_diag[:, None] + self.lam_diag[None, :])
        return svec(D / denom)

    def lam_sq(self):
        return svec(np.diag(self.lam_diag * self.lam_diag))

    def jordan(self, a, b):
        A = smat(a, self.order)
        B = smat(b, self.order)
        return svec(0.5 * (A @ B + B @ A))

    def max_step(self, u, du):
        # largest alpha with U + alpha dU still PSD, via the cholesky of U
        U = smat(u, self.order)
        dU = smat(du, self.order)
        try:
            L = np.linalg.cholesky(U)
        except np.linalg.LinAlgError:
            raise _Breakdown from None
        A = sla.solve_triangular(L, dU, lower=True)
        B = sla.solve_triangular(L, A.T, lower=True).T
        lam_min = float(np.linalg.eigvalsh(0.5 * (B + B.T)).min())
        return np.inf if lam_min >= 0 else 1.0 / (-lam_min)


def _make_scaling(block: ConeBlock, s, z):
    if block.kind == "nonneg":
        return _NonnegScaling(s, z)
    if block.kind == "soc":
        return _SocScaling(s, z)
    if block.kind == "psd":
        return _PsdScaling(s, z, block.order)
    raise ConicSolverError(f"no scaling for kind {block.kind!r}")


def _unit_element(block: ConeBlock) -> np.ndarray:
    if block.kind == "nonneg":
        return np.ones(block.size)
    if block.kind == "soc":
        e = np.zeros(block.size)
        e[0] = 1.0
        return e
    if block.kind == "psd":
        return svec(np.eye(block.order))
    raise ConicSolverError(f"no unit element for kind {block.kind!r}")


def _cone_degree(block: ConeBlock) -> int:
    return {"nonneg": block.size, "soc": 1, "psd": block.order}[block.kind]


def _block_slices(blocks: Sequence[ConeBlock]) -> list[slice]:
    out, at = [], 0
    for b in blocks:
        out.append(slice(at, at + b.size))
        at += b.size
    return out


def _dist_outside_cone(block: ConeBlock, u: np.ndarray) -> float:
    """How far u sits outside the block's cone (0 when inside)."""
    if block.kind == "zero":
        return float(np.abs(u).max(initial=0.0))
    if block.kind == "nonneg":
        return float(max(0.0, -u.min(initial=0.0)))
    if block.kind == "soc":
        return float(max(0.0, np.linalg.norm(u[1:]) - u[0]))
    lam_min = float(np.linalg.eigvalsh(smat(u, block.order)).min())
    return max(0.0, -lam_min)


# ---------------------------------------------------------------------------
# zero-block folding: pinned cone rows become equality rows


def _fold_zero_blocks(prog: ConicProgram):
    if not any(b.kind == "zero" for b in prog.cone_blocks):
        return (
            prog.eq_map,
            prog.eq_rhs,
            prog.cone_map,
            prog.cone_offset,
            prog.cone_blocks,
            None,
        )
    slices = _block_slices(prog.cone_blocks)
    zero_rows, keep_rows, keep_blocks = [], [], []
    for b, sl in zip(prog.cone_blocks, slices):
        rows = list(range(sl.start, sl.stop))
        if b.kind == "zero":
            zero_rows.extend(rows)
        else:
            keep_rows.extend(rows)
            keep_blocks.append(b)
    E = sp.vstack([prog.eq_map, prog.cone_map[zero_rows]], format="csr")
    d = np.concatenate([prog.eq_rhs, -prog.cone_offset[zero_rows]])
    M = prog.cone_map[keep_rows].tocsr()
    h = prog.cone_offset[keep_rows]
    return E, d, M, h, tuple(keep_blocks), (zero_rows, keep_rows)


# ---------------------------------------------------------------------------
# the interior-point loop


class _Kkt:
    """Factorization of [[K11 + eps, E'], [E, -eps]] with refinement."""

    def __init__(self, K11, E, reg, refine):
        self.n = K11.shape[0]
        self.m = E.shape[0]
        self.E = E
        self.K11 = K11
        self.refine = refine
        dim = self.n + self.m
        full = np.zeros((dim, dim))
        full[: self.n, : self.n] = K11
        if self.m:
            Ed = E.toarray() if sp.issparse(E) else E
            full[self.n :, : self.n] = Ed
            full[: self.n, self.n :] = Ed.T
        # absolute regularization: the NT diagonal grows like 1/mu near
        # convergence, so scaling eps by the matrix magnitude would wreck
        # the late directions that refinement is supposed to rescue
        eps = reg
        for attempt in range(4):
            mat = full.copy()
            mat[np.arange(self.n), np.arange(self.n)] += eps
            mat[np.arange(self.n, dim), np.arange(self.n, dim)] -= eps
            ldu, ipiv, info = lapack.dsytrf(mat, lower=1)
            if info == 0:
                self.ldu, self.ipiv = ldu, ipiv
                return
            eps *= 100.0
        raise _Breakdown

    def _raw_solve(self, rhs):
        out, info = lapack.dsytrs(self.ldu, self.ipiv, rhs, lower=1)
        if info != 0:
            raise _Breakdown
        return out

    def _apply(self, xy):
        x, y = xy[: self.n], xy[self.n :]
        top = self.K11 @ x
        if self.m:
            top = top + self.E.T @ y
            bot = self.E @ x
            return np.concatenate([top, bot])
        return top

    def solve(self, rhs1, rhs2):
        rhs = np.concatenate([rhs1, rhs2])
        sol = self._raw_solve(rhs)
        scale = 1.0 + float(np.abs(rhs).max(initial=0.0))
        for _ in range(self.refine):
            resid = rhs - self._apply(sol)
            if np.abs(resid).max(initial=0.0) <= 1e-14 * scale:
                break
            sol = sol + self._raw_solve(resid)
        return sol[: self.n], sol[self.n :]


def solve(prog: ConicProgram, settings: SolverSettings | None = None) -> ConicSolution:
    """Run the interior-point method on `prog`."""
    st = settings or SolverSettings()
    E, d, M, h, blocks, fold = _fold_zero_blocks(prog)
    c = prog.objective
    n = c.size
    m_eq = E.shape[0]
    m_k = M.shape[0]
    slices = _block_slices(blocks)
    nu = sum(_cone_degree(b) for b in blocks)

    ET = E.T.tocsr()
    MT = M.T.tocsr()
    M_dense_blocks = {}
    for i, (b, sl) in enumerate(zip(blocks, slices)):
        if b.kind in ("soc", "psd"):
            M_dense_blocks[i] = M[sl].toarray()

    x = np.zeros(n)
    y = np.zeros(m_eq)
    s = np.concatenate([_unit_element(b) for b in blocks]) if blocks else np.zeros(0)
    z = s.copy()
    tau, kappa = 1.0, 1.0

    norm_c = 1.0 + np.linalg.norm(c)
    norm_d = 1.0 + np.linalg.norm(d)
    norm_h = 1.0 + np.linalg.norm(h)

    best = None
    best_score = np.inf
    status = "iteration_limit"
    iters_done = 0

    def scaled_residuals():
        r1 = -ET @ y - MT @ z + c * tau if m_eq else -(MT @ z) + c * tau
        r2 = E @ x - d * tau if m_eq else np.zeros(0)
        r3 = M @ x + h * tau - s
        r4 = -c @ x + (d @ y if m_eq else 0.0) - h @ z - kappa
        pres = max(
            np.linalg.norm(r2) / tau / norm_d if m_eq else 0.0,
            np.linalg.norm(r3) / tau / norm_h,
        )
        dres = np.linalg.norm(r1) / tau / norm_c
        pobj = c @ x / tau
        dobj = ((d @ y if m_eq else 0.0) - h @ z) / tau
        gap = (z @ s) / (tau * tau)
        relgap = gap / max(1.0, abs(pobj), abs(dobj))
        return r1, r2, r3, r4, pres, dres, pobj, dobj, gap, relgap

    def pack_optimal(pres, dres, pobj, dobj, gap, relgap, it):
        xs, ys, zs, ss = x / tau, y / tau, z / tau, s / tau
        dual_full = zs
        if fold is not None:
            zero_rows, keep_rows = fold
            dual_full = np.zeros(prog.cone_map.shape[0])
            dual_full[keep_rows] = zs
            dual_full[zero_rows] = ys[prog.eq_rhs.size :]
            ys = ys[: prog.eq_rhs.size]
        return ConicSolution(
            status="optimal",
            primal=xs,
            dual_eq=ys,
            dual_cone=dual_full,
            primal_obj=float(pobj),
            dual_obj=float(dobj),
            residuals={
                "primal_feas": float(pres),
                "dual_feas": float(dres),
                "gap": float(gap),
                "rel_gap": float(relgap),
            },
            iterations=it,
        )

    def try_certificates(it):
        # primal infeasibility: Farkas pair from the dual embedding variables
        margin = (d @ y if m_eq else 0.0) - h @ z
        if margin > 1e-300:
            yc, zc = y / margin, z / margin
            cert_full = zc
            yy = yc
            if fold is not None:
                zero_rows, keep_rows = fold
                cert_full = np.zeros(prog.cone_map.shape[0])
                cert_full[keep_rows] = zc
                cert_full[zero_rows] = yc[prog.eq_rhs.size :]
                yy = yc[: prog.eq_rhs.size]
            cand = ConicSolution(
                status="primal_infeasible",
                primal=None,
                dual_eq=yy,
                dual_cone=cert_full,
                primal_obj=None,
                dual_obj=None,
                residuals=_certificate_residuals(prog, yy, cert_full),
                iterations=it,
            )
            if verify_certificate(prog, cand, st.cert_tol):
                return cand
        # dual infeasibility: improving ray from the primal embedding variables
        cobj = c @ x
        if cobj < -1e-300:
            xc = x / (-cobj)
            cand = ConicSolution(
                status="dual_infeasible",
                primal=xc,
                dual_eq=None,
                dual_cone=None,
                primal_obj=None,
                dual_obj=None,
                residuals=_ray_residuals(prog, xc),
                iterations=it,
            )
            if verify_certificate(prog, cand, st.cert_tol):
                return cand
        return None

    mu0 = (s @ z + tau * kappa) / (nu + 1)
    tiny_steps = 0

    for it in range(st.max_iters + 1):
        iters_done = it
        r1, r2, r3, r4, pres, dres, pobj, dobj, gap, relgap = scaled_residuals()
        logger.debug(
            "iter %3d  pres %.3e  dres %.3e  relgap %.3e  tau %.3e  kappa %.3e",
            it, pres, dres, relgap, tau, kappa,
        )
        score = max(pres, dres, relgap)
        if score < best_score:
            best_score = score
            best = (pres, dres, pobj, dobj, gap, relgap, x.copy(), y.copy(), z.copy(), s.copy(), tau)

        if pres <= st.tol_feas and dres <= st.tol_feas and relgap <= st.tol_gap:
            return pack_optimal(pres, dres, pobj, dobj, gap, relgap, it)
        if kappa > 0 and tau / kappa < st.infeas_threshold:
            cert = try_certificates(it)
            if cert is not None:
                return cert
            status = "ill_posed"
            break
        if it == st.max_iters or tiny_steps >= 3:
            status = "iteration_limit"
            break

        try:
            scalings = [_make_scaling(b, s[sl], z[sl]) for b, sl in zip(blocks, slices)]

            # K11 = M' H^{-1} M assembled blockwise
            K11 = np.zeros((n, n))
            hinv_h = np.zeros(m_k)
            for i, (b, sl, sc) in enumerate(zip(blocks, slices, scalings)):
                hinv_h[sl] = sc.hinv_vec(h[sl])
                if b.kind == "nonneg":
                    Mb = M[sl]
                    scaled = Mb.multiply((1.0 / (sc.w * sc.w))[:, None])
                    K11 += (Mb.T @ scaled).toarray()
                else:
                    Mb = M_dense_blocks[i]
                    K11 += Mb.T @ sc.hinv_mat(Mb)
            mh = MT @ hinv_h
            hHh = float(h @ hinv_h)

            kkt = _Kkt(K11, E, st.static_reg, st.refine_steps)
            vx, vy = kkt.solve(-(c + mh), d)

            mu = (s @ z + tau * kappa) / (nu + 1)

            def direction(eta, d_c, d_kappa):
                g = np.zeros(m_k)
                w1 = np.zeros(m_k)
                hr3 = np.zeros(m_k)
                for sl, sc in zip(slices, scalings):
                    gb = sc.lam_solve(d_c[sl])
                    g[sl] = gb
                    w1[sl] = sc.winv_vec(gb)
                    hr3[sl] = sc.hinv_vec(r3[sl])
                p1 = -eta * r1 + MT @ w1 - eta * (MT @ hr3)
                ux, uy = kkt.solve(p1, -eta * r2)
                p4 = -eta * r4 + h @ w1 - eta * (h @ hr3) + d_kappa / tau
                lin = mh - c
                den = lin @ vx - (d @ vy if m_eq else 0.0) + hHh + kappa / tau
                num = p4 - lin @ ux + (d @ uy if m_eq else 0.0)
                dtau = num / den if abs(den) > 1e-300 else 0.0
                dx = ux + dtau * vx
                dy = -(uy + dtau * vy)
                ds = M @ dx + h * dtau + eta * r3
                dz = np.zeros(m_k)
                for sl, sc in zip(slices, scalings):
                    dz[sl] = w1[sl] - sc.hinv_vec(ds[sl])
                dkappa = (d_kappa - kappa * dtau) / tau
                return dx, dy, dz, ds, dtau, dkappa

            def max_step(dz, ds, dtau, dkappa):
                alpha = np.inf
                for b, sl, sc in zip(blocks, slices, scalings):
                    alpha = min(alpha, sc.max_step(s[sl], ds[sl]))
                    alpha = min(alpha, sc.max_step(z[sl], dz[sl]))
                if dtau < 0:
                    alpha = min(alpha, -tau / dtau)
                if dkappa < 0:
                    alpha = min(alpha, -kappa / dkappa)
                return alpha

            # predictor
            d_c = np.concatenate([-sc.lam_sq() for sc in scalings]) if blocks else np.zeros(0)
            dxa, dya, dza, dsa, dtaua, dkappaa = direction(1.0, d_c, -tau * kappa)
            alpha_aff = min(1.0, max_step(dza, dsa, dtaua, dkappaa))
            mu_aff = (
                (s + alpha_aff * dsa) @ (z + alpha_aff * dza)
                + (tau + alpha_aff * dtaua) * (kappa + alpha_aff * dkappaa)
            ) / (nu + 1)
            sigma = min(1.0, max(0.0, (mu_aff / mu) ** 3))

            # corrector
            d_c2 = np.zeros(m_k)
            for sl, sc in zip(slices, scalings):
                corr = sc.jordan(sc.wtinv_vec(dsa[sl]), sc.w_vec(dza[sl]))
                d_c2[sl] = sigma * mu * sc.e() - sc.lam_sq() - corr
            d_kappa2 = sigma * mu - tau * kappa - dtaua * dkappaa
            dx, dy, dz, ds, dtau, dkappa = direction(1.0 - sigma, d_c2, d_kappa2)

            alpha = min(1.0, 0.99 * max_step(dz, ds, dtau, dkappa))
            if alpha < 1e-8:
                tiny_steps += 1
            else:
                tiny_steps = 0
            x += alpha * dx
            y += alpha * dy
            z += alpha * dz
            s += alpha * ds
            tau += alpha * dtau
            kappa += alpha * dkappa
        except _Breakdown:
            status = "iteration_limit"
            break

    # no convergence: report the best iterate seen, or a late certificate
    cert = try_certificates(iters_done)
    if cert is not None:
        return cert
    if best is not None:
        pres, dres, pobj, dobj, gap, relgap, bx, by, bz, bs, btau = best
        dual_full = bz / btau
        ys = by / btau
        if fold is not None:
            zero_rows, keep_rows = fold
            full = np.zeros(prog.cone_map.shape[0])
            full[keep_rows] = dual_full
            full[zero_rows] = ys[prog.eq_rhs.size :]
            dual_full = full
            ys = ys[: prog.eq_rhs.size]
        return ConicSolution(
            status=status,
            primal=bx / btau,
            dual_eq=ys,
            dual_cone=dual_full,
            primal_obj=float(pobj),
            dual_obj=float(dobj),
            residuals={
                "primal_feas": float(pres),
                "dual_feas": float(dres),
                "gap": float(gap),
                "rel_gap": float(relgap),
            },
            iterations=iters_done,
        )
    return ConicSolution(status, None, None, None, None, None, {}, iters_done)


# ---------------------------------------------------------------------------
# certificate verification against the raw data


def _certificate_residuals(prog: ConicProgram, y, z) -> dict[str, float]:
    adj = prog.eq_map.T @ y + prog.cone_map.T @ z
    margin = prog.eq_rhs @ y - prog.cone_offset @ z
    dist = 0.0
    for b, sl in zip(prog.cone_blocks, _block_slices(prog.cone_blocks)):
        if b.kind == "zero":
            continue  # multipliers of pinned rows are unrestricted
        dist = max(dist, _dist_outside_cone(b, z[sl]))
    return {
        "adjoint": float(np.abs(adj).max(initial=0.0)),
        "cone_distance": float(dist),
        "margin_error": float(abs(margin - 1.0)),
    }


def _ray_residuals(prog: ConicProgram, x) -> dict[str, float]:
    eqv = prog.eq_map @ x
    img = prog.cone_map @ x
    dist = 0.0
    for b, sl in zip(prog.cone_blocks, _block_slices(prog.cone_blocks)):
        dist = max(dist, _dist_outside_cone(b, img[sl]))
    return {
        "equality": float(np.abs(eqv).max(initial=0.0)),
        "cone_distance": float(dist),
        "objective_error": float(abs(prog.objective @ x + 1.0)),
    }


def verify_certificate(prog: ConicProgram, sol: ConicSolution, tol: float = 1e-6) -> bool:
    """Recompute the Farkas / improving-ray conditions from the raw data."""
    if sol.status == "primal_infeasible":
        if sol.dual_eq is None or sol.dual_cone is None:
            return False
        res = _certificate_residuals(prog, sol.dual_eq, sol.dual_cone)
        scale = max(
            1.0,
            float(np.abs(sol.dual_eq).max(initial=0.0)),
            float(np.abs(sol.dual_cone).max(initial=0.0)),
        )
        return (
            res["adjoint"] <= tol * scale
            and res["cone_distance"] <= tol * scale
            and res["margin_error"] <= tol * scale
        )
    if sol.status == "dual_infeasible":
        if sol.primal is None:
            return False
        res = _ray_residuals(prog, sol.primal)
        scale = max(1.0, float(np.abs(sol.primal).max(initial=0.0)))
        return (
            res["equality"] <= tol * scale
            and res["cone_distance"] <= tol * scale
            and res["objective_error"] <= tol * scale
        )
    return False
