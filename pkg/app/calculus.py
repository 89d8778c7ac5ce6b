"""Discrete exterior calculus on the quadratic complex.

A ``DeRhamComplex`` owns the three spaces of one mesh with their mass and
derivative matrices. ``ComplexOperators`` is the window ``V- -> V -> V+``
centred at one form degree; missing neighbours are ``None``.
"""

from functools import cached_property
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import scipy.linalg
import structlog
from scipy import sparse
from scipy.sparse.linalg import splu

from app.assembly import (
    SparseOperator,
    derivative_matrix,
    load_vector,
    mass_matrix,
    reference_quadrature,
)
from app.config import Config
from app.errors import CalculusError, SolverError
from app.fespace import FeSpace, FormFunction, interpolate, space_for_degree
from app.mesh import SimplicialMesh

logger = structlog.get_logger(__name__)

SpatialFunction = Callable[[np.ndarray], np.ndarray]


class LinearSolver:
    """Sparse LU factorization with residual refinement."""

    def __init__(self, matrix: sparse.spmatrix, name: str = "system"):
        self.matrix = sparse.csr_matrix(matrix)
        self.name = name
        try:
            self._lu = splu(sparse.csc_matrix(matrix))
        except RuntimeError as exc:
            raise SolverError(f"factorization of the {name} matrix failed: {exc}") from exc

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def solve(self, rhs: np.ndarray, tolerance: float = None) -> np.ndarray:
        tolerance = Config.SOLVER_TOLERANCE if tolerance is None else tolerance
        rhs = np.asarray(rhs, dtype=float)
        solution = self._lu.solve(rhs)
        scale = np.linalg.norm(rhs)
        for _ in range(Config.MAX_REFINEMENT_STEPS):
            residual = rhs - self.matrix @ solution
            if np.linalg.norm(residual) <= tolerance * scale:
                break
            solution = solution + self._lu.solve(residual)
        if not np.all(np.isfinite(solution)):
            raise SolverError(f"solve with the {self.name} matrix produced non-finite values")
        return solution


class DeRhamComplex:
    """Spaces, masses and derivatives of P2 -> RT -> P1dc on one mesh."""

    def __init__(
        self,
        mesh: SimplicialMesh,
        essential: bool = True,
        quadrature_degree: int = None,
    ):
        self.mesh = mesh
        self.essential = essential
        self.quad = reference_quadrature(quadrature_degree or Config.ASSEMBLY_QUADRATURE_DEGREE)
        self.spaces: List[FeSpace] = [space_for_degree(mesh, j, essential) for j in range(3)]
        self.masses: List[SparseOperator] = [mass_matrix(space, self.quad) for space in self.spaces]
        self.derivatives: List[SparseOperator] = [
            derivative_matrix(self.spaces[j], self.spaces[j + 1]) for j in range(2)
        ]
        self._solvers = {}
        self._windows = {}
        logger.info(
            "complex assembled",
            n=mesh.n,
            essential=essential,
            free_dofs=[space.nfree for space in self.spaces],
        )

    def space(self, j: int) -> Optional[FeSpace]:
        return self.spaces[j] if 0 <= j <= 2 else None

    def mass(self, j: int) -> Optional[sparse.csr_matrix]:
        return self.masses[j].matrix if 0 <= j <= 2 else None

    def derivative(self, j: int) -> Optional[sparse.csr_matrix]:
        """d from degree j to degree j + 1."""
        return self.derivatives[j].matrix if 0 <= j <= 1 else None

    def mass_solver(self, j: int) -> LinearSolver:
        if j not in self._solvers:
            self._solvers[j] = LinearSolver(self.mass(j), name=f"mass[{j}]")
        return self._solvers[j]

    def harmonic_degree(self) -> int:
        """The degree carrying the constants as discrete harmonic forms."""
        return 2 if self.essential else 0

    def harmonic_basis(self, j: int) -> np.ndarray:
        """Free-coefficient columns spanning the discrete harmonic j-forms."""
        space = self.spaces[j]
        if j != self.harmonic_degree():
            return np.zeros((space.nfree, 0))
        one = interpolate(space, lambda p: np.ones(p.shape[:-1]))
        return one.coefficients[:, None]

    def kernel_dimension(self, j: int) -> int:
        """dim ker d on V_j, from exactness of the complex."""
        harmonic = self.harmonic_basis(j).shape[1]
        if j == 0:
            return harmonic
        return self.spaces[j - 1].nfree - self.kernel_dimension(j - 1) + harmonic

    def window(self, k: int) -> "ComplexOperators":
        if k not in (0, 1, 2):
            raise CalculusError(f"form degree must be 0, 1 or 2, got {k}")
        if k not in self._windows:
            self._windows[k] = ComplexOperators(self, k)
        return self._windows[k]


class ComplexOperators:
    """The short sequence V- -> V -> V+ around form degree k."""

    def __init__(self, complex_: DeRhamComplex, k: int):
        self.complex = complex_
        self.k = k
        self.minus = complex_.space(k - 1)
        self.middle = complex_.space(k)
        self.plus = complex_.space(k + 1)
        self.M_minus = complex_.mass(k - 1)
        self.M = complex_.mass(k)
        self.M_plus = complex_.mass(k + 1)
        self.D_minus = complex_.derivative(k - 1)
        self.D = complex_.derivative(k)

    def neighbour(self, offset: int) -> "ComplexOperators":
        return self.complex.window(self.k + offset)

    @property
    def minus_solver(self) -> LinearSolver:
        return self.complex.mass_solver(self.k - 1)

    @property
    def solver(self) -> LinearSolver:
        return self.complex.mass_solver(self.k)

    @property
    def plus_solver(self) -> LinearSolver:
        return self.complex.mass_solver(self.k + 1)

    @cached_property
    def harmonic(self) -> np.ndarray:
        return self.complex.harmonic_basis(self.k)

    @cached_property
    def minus_has_kernel(self) -> bool:
        return self.minus is not None and self.complex.kernel_dimension(self.k - 1) > 0

    @cached_property
    def M_D_minus(self) -> sparse.csr_matrix:
        return (self.M @ self.D_minus).tocsr()

    @cached_property
    def exact_solver(self) -> LinearSolver:
        """(D-^T M D- + eps M-) for the exact part of a decomposition."""
        matrix = self.D_minus.T @ self.M_D_minus
        if self.minus_has_kernel:
            matrix = matrix + Config.KERNEL_SHIFT * self.M_minus
        return LinearSolver(matrix, name=f"exact-part[{self.k}]")

    @cached_property
    def coexact_solver(self) -> LinearSolver:
        """Saddle-point system characterising the K_h component."""
        stiffness = self.D.T @ self.M_plus @ self.D
        blocks = [[stiffness]]
        if self.minus is not None:
            shift = -Config.KERNEL_SHIFT * self.M_minus if self.minus_has_kernel else None
            blocks[0].append(self.M_D_minus)
            blocks.append([self.M_D_minus.T, shift])
        if self.harmonic.shape[1]:
            mh = sparse.csr_matrix(self.M @ self.harmonic)
            blocks[0].append(mh)
            for row in blocks[1:]:
                row.append(None)
            blocks.append([mh.T] + [None] * (len(blocks[0]) - 1))
        system = sparse.bmat(blocks, format="csc")
        return LinearSolver(system, name=f"coexact[{self.k}]")

    @cached_property
    def harmonic_gram(self) -> np.ndarray:
        return self.harmonic.T @ (self.M @ self.harmonic)

    def __repr__(self) -> str:
        sizes = [None if s is None else s.nfree for s in (self.minus, self.middle, self.plus)]
        return f"ComplexOperators(k={self.k}, free={sizes})"


def _check_space(fn: FormFunction, space: Optional[FeSpace], role: str) -> None:
    if space is None or fn.space is not space:
        raise CalculusError(f"form does not belong to the {role} space of this window")


def discrete_coderivative(ops: ComplexOperators, w: FormFunction) -> Optional[FormFunction]:
    """delta_h w in V-, the L2 adjoint of d-; ``None`` when V- is void."""
    _check_space(w, ops.middle, "middle")
    if ops.minus is None:
        return None
    rhs = ops.M_D_minus.T @ w.coefficients
    return FormFunction(space=ops.minus, coefficients=ops.minus_solver.solve(rhs))


def hodge_decompose(ops: ComplexOperators, v: FormFunction) -> Tuple[FormFunction, FormFunction]:
    """Split v = z + kappa with z in ker d and kappa M-orthogonal to ker d."""
    _check_space(v, ops.middle, "middle")
    if ops.plus is None:
        return v, FormFunction.zeros(ops.middle)

    coefficients = v.coefficients
    z = np.zeros_like(coefficients)
    if ops.minus is not None:
        potential = ops.exact_solver.solve(ops.M_D_minus.T @ coefficients)
        z = ops.D_minus @ potential
    if ops.harmonic.shape[1]:
        remainder = ops.M @ (coefficients - z)
        try:
            amplitudes = np.linalg.solve(ops.harmonic_gram, ops.harmonic.T @ remainder)
        except np.linalg.LinAlgError as exc:
            raise SolverError(f"harmonic Gram matrix of degree {ops.k} is singular: {exc}") from exc
        z = z + ops.harmonic @ amplitudes
    return (
        FormFunction(space=ops.middle, coefficients=z),
        FormFunction(space=ops.middle, coefficients=coefficients - z),
    )


def l2_project(
    space: FeSpace, f: SpatialFunction, complex_: Optional[DeRhamComplex] = None
) -> FormFunction:
    """Q_h f; reuses the factorized mass matrix of ``complex_`` when given."""
    if complex_ is None:
        quad = reference_quadrature(Config.ASSEMBLY_QUADRATURE_DEGREE)
        solver = LinearSolver(mass_matrix(space, quad).matrix, name="mass")
    else:
        j = space.form_degree
        if complex_.space(j) is not space:
            raise CalculusError("space is not part of the given complex")
        quad, solver = complex_.quad, complex_.mass_solver(j)
    rhs = load_vector(space, f, quad)
    return FormFunction(space=space, coefficients=solver.solve(rhs))


def quasi_interpolate(ops: ComplexOperators, v: SpatialFunction, dv: Optional[SpatialFunction]) -> FormFunction:
    """Projection-based quasi-interpolant I_h v.

    The kernel part is the L2 projection of v onto ker d; the complementary
    part kappa solves <d kappa, d phi> = <dv, d phi> on K_h, posed as a
    saddle-point problem with the exact forms and harmonic forms as
    constraints.
    """
    projected = l2_project(ops.middle, v, ops.complex)
    z, _ = hodge_decompose(ops, projected)
    if ops.plus is None:
        return z
    if dv is None:
        raise CalculusError(f"quasi-interpolation of {ops.k}-forms needs the exterior derivative")

    g = load_vector(ops.plus, dv, ops.complex.quad)
    solver = ops.coexact_solver
    rhs = np.zeros(solver.size)
    rhs[: ops.middle.nfree] = ops.D.T @ g
    try:
        solution = solver.solve(rhs)
    except SolverError as exc:
        raise CalculusError(f"coexact subproblem is singular: {exc}") from exc
    kappa = solution[: ops.middle.nfree]
    return FormFunction(space=ops.middle, coefficients=z.coefficients + kappa)


def poincare_constant(ops: ComplexOperators) -> float:
    """C_p = lambda_min^(-1/2) of the pencil (D^T M+ D, M) restricted to K_h."""
    if ops.plus is None:
        raise CalculusError("K_h is trivial for top-degree forms")
    if ops.middle.nfree > Config.MAX_DENSE_DOFS:
        raise CalculusError(
            f"{ops.middle.nfree} free DOFs exceed the dense eigensolve limit {Config.MAX_DENSE_DOFS}"
        )
    stiffness = (ops.D.T @ ops.M_plus @ ops.D).toarray()
    try:
        eigenvalues = scipy.linalg.eigh(stiffness, ops.M.toarray(), eigvals_only=True)
    except np.linalg.LinAlgError as exc:
        raise SolverError(f"Poincare pencil eigensolve failed: {exc}") from exc
    kernel = ops.complex.kernel_dimension(ops.k)
    smallest = eigenvalues[kernel]
    if smallest <= 0:
        raise CalculusError("non-positive eigenvalue on K_h: the discrete Poincare inequality fails")
    logger.debug("poincare pencil", k=ops.k, kernel=kernel, smallest=float(smallest))
    return float(smallest ** -0.5)


def identity_residuals(
    complex_: DeRhamComplex, rng: np.random.Generator, samples: int = 3
) -> Dict[str, float]:
    """Worst relative residuals of the complex identities on random coefficients.

    ``d_d`` is d o d, ``adjoint`` compares <delta_h w, q> with <w, d q>, and
    ``hodge_kernel`` / ``hodge_orthogonal`` measure d z and <kappa, z> of the
    discrete Hodge split.
    """
    residuals = {"d_d": 0.0, "adjoint": 0.0, "hodge_kernel": 0.0, "hodge_orthogonal": 0.0}

    def worst(key: str, value: float) -> None:
        residuals[key] = max(residuals[key], float(value))

    def norm(mass, x) -> float:
        return float(np.sqrt(max(x @ (mass @ x), 0.0)))

    for _ in range(samples):
        p = rng.standard_normal(complex_.space(0).nfree)
        dp = complex_.derivative(0) @ p
        worst("d_d", np.abs(complex_.derivative(1) @ dp).max() / max(np.abs(dp).max(), 1e-300))

        for k in (1, 2):
            ops = complex_.window(k)
            w = FormFunction(space=ops.middle, coefficients=rng.standard_normal(ops.middle.nfree))
            q = rng.standard_normal(ops.minus.nfree)
            dq = ops.D_minus @ q
            delta = discrete_coderivative(ops, w).coefficients
            scale = norm(ops.M, w.coefficients) * norm(ops.M, dq)
            worst("adjoint", abs(delta @ (ops.M_minus @ q) - w.coefficients @ (ops.M @ dq)) / scale)

        for k in (0, 1):
            ops = complex_.window(k)
            v = FormFunction(space=ops.middle, coefficients=rng.standard_normal(ops.middle.nfree))
            z, kappa = hodge_decompose(ops, v)
            scale = norm(ops.M, v.coefficients)
            worst("hodge_kernel", norm(ops.M_plus, ops.D @ z.coefficients) / scale)
            worst("hodge_orthogonal", abs(kappa.coefficients @ (ops.M @ z.coefficients)) / scale**2)

    logger.debug("identity residuals", n=complex_.mesh.n, essential=complex_.essential, **residuals)
    return residuals
