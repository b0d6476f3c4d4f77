"""cpproj: projection onto the completely positive cone under linear constraints.

The package solves, in the 1-, 2-, infinity-, or Frobenius norm,

    minimize ||X - C||  over completely positive X with  <A_i, X> = / >= b_i,

returning either the projection together with an explicit nonnegative rank-one
decomposition of it, or a certificate that no completely positive matrix
satisfies the constraints.  The computation runs a hierarchy of semidefinite
moment relaxations solved by the built-in conic interior-point method; exact
termination is detected through a moment-matrix rank condition and the measure
behind the solution is recovered atom by atom.

Entry points:

- `approximate(spec)` runs the full projection algorithm and returns a
  `Projected`, `Infeasible`, or `Inconclusive` outcome.
- `check_cp_membership(C)` decides whether C itself is completely positive.
- `ProblemSpec` / `LinearConstraint` describe the instance; `DriverSettings`
  tunes orders and tolerances.

The remaining exports are the layers those entry points are built from:
monomial bookkeeping and truncated moment sequences (`polybasis`), moment and
localizing matrices with the flatness test (`moments`), atom extraction and
factor handling (`extraction`), the semidefinite reformulations of the four
norms (`norms`, `relaxation`), and a self-contained homogeneous conic
interior-point solver (`conic`).
"""
from .conic import (
    ConeBlock,
    ConicProgram,
    ConicSolution,
    ConicSolverError,
    SolverSettings,
    solve,
    verify_certificate,
)
from .driver import (
    DriverSettings,
    Inconclusive,
    Infeasible,
    MembershipResult,
    Projected,
    SolverFailure,
    approximate,
    check_cp_membership,
)
from .extraction import (
    AtomicMeasure,
    CpDecomposition,
    ExtractionError,
    ExtractionTols,
    cp_decomposition,
    extract_atoms,
    polish_decomposition,
    sparsify_decomposition,
    verify_decomposition,
)
from .moments import (
    FlatnessReport,
    MomentConeSystem,
    check_flat,
    coordinate_spec,
    localizing_matrix,
    moment_cone_constraints,
    moment_matrix,
    sphere_residual_spec,
    unit_spec,
)
from .polybasis import (
    ETms,
    Monomial,
    MonomialBasis,
    SymMatrix,
    Tms,
    basis_size,
    etms_of_matrix,
    matrix_of_etms,
    moments_of_atoms,
    monomials_up_to,
    riesz,
    vech,
    vech_inv,
    weighted_vech,
)
from .relaxation import (
    LinearConstraint,
    ProblemSpec,
    RelaxationSolution,
    assemble,
    assemble_witness,
    check_weak_duality,
    lift_atomic_point,
    map_solution,
    project_dnn,
    solve_relaxation,
)

__version__ = "0.1.0"

__all__ = [
    "AtomicMeasure",
    "ConeBlock",
    "ConicProgram",
    "ConicSolution",
    "ConicSolverError",
    "CpDecomposition",
    "DriverSettings",
    "ETms",
    "ExtractionError",
    "ExtractionTols",
    "FlatnessReport",
    "Inconclusive",
    "Infeasible",
    "LinearConstraint",
    "MembershipResult",
    "MomentConeSystem",
    "Monomial",
    "MonomialBasis",
    "ProblemSpec",
    "Projected",
    "RelaxationSolution",
    "SolverFailure",
    "SolverSettings",
    "SymMatrix",
    "Tms",
    "approximate",
    "assemble",
    "assemble_witness",
    "basis_size",
    "check_cp_membership",
    "check_flat",
    "check_weak_duality",
    "coordinate_spec",
    "cp_decomposition",
    "etms_of_matrix",
    "extract_atoms",
    "lift_atomic_point",
    "localizing_matrix",
    "map_solution",
    "matrix_of_etms",
    "moment_cone_constraints",
    "moment_matrix",
    "moments_of_atoms",
    "monomials_up_to",
    "polish_decomposition",
    "project_dnn",
    "riesz",
    "solve",
    "solve_relaxation",
    "sparsify_decomposition",
    "sphere_residual_spec",
    "unit_spec",
    "vech",
    "vech_inv",
    "verify_decomposition",
    "weighted_vech",
    "__version__",
]
