"""Energy-conserving full discretization of the Hodge wave equation.

Unknowns U = (sigma, mu, omega) in V- x V x V+ satisfy

    M_blk U_t + A_blk U = (0, <f, .>, 0)

with the skew block operator

    A_blk = [[0, -(M D-)^T, 0], [M D-, 0, (M+ D)^T], [0, -M+ D, 0]]

and are advanced by the Crank-Nicolson step

    (M_blk + dt/2 A_blk) U^i = (M_blk - dt/2 A_blk) U^{i-1} + int_{t_{i-1}}^{t_i} F dt.
"""

from typing import Callable, List, Optional

import numpy as np
import structlog
from scipy import sparse

from app.calculus import (
    ComplexOperators,
    LinearSolver,
    discrete_coderivative,
    quasi_interpolate,
)
from app.assembly import SparseOperator, Symmetry, load_vector
from app.config import Config
from app.errors import SolverError, WaveError
from app.fespace import FormFunction
from app.models import BlockState, EnergyRecord, FormField, RunResult

logger = structlog.get_logger(__name__)

SpaceTimeFunction = Callable[[np.ndarray, float], np.ndarray]
Observer = Callable[[int, BlockState, float, float], None]

RESIDUAL_LIMIT = 1e-10


class WaveSystem:
    def __init__(self, ops: ComplexOperators, dt: float, tolerance: float = None):
        if not dt > 0:
            raise WaveError(f"time step must be positive, got {dt}")
        self.ops = ops
        self.dt = float(dt)
        self.tolerance = Config.SOLVER_TOLERANCE if tolerance is None else tolerance

        present = [s for s in (ops.minus, ops.middle, ops.plus) if s is not None]
        self.sizes = [0 if s is None else s.nfree for s in (ops.minus, ops.middle, ops.plus)]
        self.mass = sparse.block_diag(
            [m for m in (ops.M_minus, ops.M, ops.M_plus) if m is not None], format="csr"
        )
        self.operator = SparseOperator(matrix=self._skew_blocks(), symmetry=Symmetry.SKEW)
        self.stiffness = self.operator.matrix
        self.implicit = (self.mass + 0.5 * self.dt * self.stiffness).tocsr()
        self.explicit = (self.mass - 0.5 * self.dt * self.stiffness).tocsr()
        self.solver = LinearSolver(self.implicit, name=f"crank-nicolson[k={ops.k}]")
        logger.info(
            "wave system assembled",
            k=ops.k,
            dt=self.dt,
            unknowns=sum(self.sizes),
            spaces=[str(s) for s in present],
        )

    def _skew_blocks(self) -> sparse.csr_matrix:
        ops = self.ops
        index = {}
        for name, space in zip(("sigma", "mu", "omega"), (ops.minus, ops.middle, ops.plus)):
            if space is not None:
                index[name] = len(index)
        blocks: List[List[Optional[sparse.spmatrix]]] = [[None] * len(index) for _ in index]
        mu = index["mu"]
        blocks[mu][mu] = sparse.csr_matrix((self.sizes[1], self.sizes[1]))
        if "sigma" in index:
            coupling = ops.M_D_minus
            blocks[mu][index["sigma"]] = coupling
            blocks[index["sigma"]][mu] = -coupling.T
        if "omega" in index:
            coupling = (ops.M_plus @ ops.D).tocsr()
            blocks[index["omega"]][mu] = -coupling
            blocks[mu][index["omega"]] = coupling.T
        return sparse.bmat(blocks, format="csr")

    def vector(self, state: BlockState) -> np.ndarray:
        x = state.vector()
        if len(x) != sum(self.sizes):
            raise WaveError(f"state of length {len(x)} does not match {sum(self.sizes)} unknowns")
        return x


def assemble_system(ops: ComplexOperators, dt: float, tolerance: float = None) -> WaveSystem:
    return WaveSystem(ops, dt, tolerance)


def _remove_mean(ops: ComplexOperators, degree: int, coefficients: np.ndarray) -> np.ndarray:
    one = ops.complex.harmonic_basis(degree)[:, 0]
    mass = ops.complex.mass(degree)
    weight = one @ (mass @ one)
    return coefficients - (one @ (mass @ coefficients)) / weight * one


def initial_state(
    ops: ComplexOperators,
    u0_delta: Optional[FormField],
    u1: Optional[FormField],
    u0_d: Optional[FormField],
    mean_correct: bool = True,
    t: float = 0.0,
) -> BlockState:
    """Quasi-interpolated initial data (I- delta u0, I u1, I+ d u0)."""

    def component(window: Optional[ComplexOperators], field: Optional[FormField]):
        if window is None:
            return None
        if field is None:
            return np.zeros(window.middle.nfree)
        coefficients = quasi_interpolate(window, field.value, field.derivative).coefficients
        if mean_correct and window.complex.essential and window.k == 2:
            coefficients = _remove_mean(window, 2, coefficients)
        return coefficients

    sigma = component(ops.neighbour(-1) if ops.minus is not None else None, u0_delta)
    mu = component(ops, u1)
    omega = component(ops.neighbour(+1) if ops.plus is not None else None, u0_d)
    return BlockState(k=ops.k, t=t, sigma=sigma, mu=mu, omega=omega)


def source_integral(
    sys: WaveSystem, f: Optional[SpaceTimeFunction], t0: float, t1: float
) -> np.ndarray:
    """Gauss-Legendre in time of the load (0, <f(t), v>, 0) over [t0, t1]."""
    total = np.zeros(sum(sys.sizes))
    if f is None:
        return total
    nodes, weights = np.polynomial.legendre.leggauss(Config.TIME_QUADRATURE_POINTS)
    half = 0.5 * (t1 - t0)
    load = np.zeros(sys.sizes[1])
    quad = sys.ops.complex.quad
    for node, weight in zip(nodes, weights):
        t = t0 + half * (node + 1.0)
        load += half * weight * load_vector(sys.ops.middle, lambda p, t=t: f(p, t), quad)
    total[sys.sizes[0] : sys.sizes[0] + sys.sizes[1]] = load
    return total


def cn_step(sys: WaveSystem, prev: BlockState, source_integral: Optional[np.ndarray] = None) -> BlockState:
    rhs = sys.explicit @ sys.vector(prev)
    if source_integral is not None:
        rhs = rhs + source_integral
    x = sys.solver.solve(rhs, sys.tolerance)
    scale = np.linalg.norm(rhs)
    residual = np.linalg.norm(rhs - sys.implicit @ x)
    if scale > 0 and residual > RESIDUAL_LIMIT * scale:
        raise SolverError(f"Crank-Nicolson solve left relative residual {residual / scale:.2e}")
    return prev.with_vector(x, prev.t + sys.dt)


def energy_E(sys: WaveSystem, state: BlockState) -> float:
    x = sys.vector(state)
    return float(np.sqrt(max(x @ (sys.mass @ x), 0.0)))


def energy_H(sys: WaveSystem, ops: ComplexOperators, state: BlockState) -> float:
    """(|d- sigma|^2 + |delta_h mu|^2 + |d mu|^2 + |delta_h+ omega|^2)^(1/2)."""
    total = 0.0
    if ops.minus is not None:
        d_sigma = ops.D_minus @ state.sigma
        total += d_sigma @ (ops.M @ d_sigma)
        delta_mu = discrete_coderivative(ops, FormFunction(space=ops.middle, coefficients=state.mu))
        total += delta_mu.coefficients @ (ops.M_minus @ delta_mu.coefficients)
    if ops.plus is not None:
        d_mu = ops.D @ state.mu
        total += d_mu @ (ops.M_plus @ d_mu)
        upper = ops.neighbour(+1)
        delta_omega = discrete_coderivative(upper, FormFunction(space=ops.plus, coefficients=state.omega))
        total += delta_omega.coefficients @ (ops.M @ delta_omega.coefficients)
    return float(np.sqrt(max(total, 0.0)))


def run(
    sys: WaveSystem,
    ops: ComplexOperators,
    init: BlockState,
    f: Optional[SpaceTimeFunction],
    T: float,
    dt: float,
    observer: Optional[Observer] = None,
    stride: int = 1,
) -> RunResult:
    steps = int(round(T / dt))
    if steps < 1 or abs(steps * dt - T) > 1e-9 * max(1.0, T):
        raise WaveError(f"T = {T} is not a positive integer multiple of dt = {dt}")
    if abs(sys.dt - dt) > 1e-15 * max(1.0, dt):
        raise WaveError(f"system factorized for dt = {sys.dt}, run requested dt = {dt}")

    t_start = init.t
    state = init
    records = []

    def record(i: int, current: BlockState) -> None:
        e, h = energy_E(sys, current), energy_H(sys, ops, current)
        if observer is not None:
            observer(i, current, e, h)
        if i % stride == 0 or i == steps:
            records.append(
                EnergyRecord(n=ops.complex.mesh.n, step=i, t=current.t, E=e, H=h)
            )

    record(0, state)
    for i in range(1, steps + 1):
        t0, t1 = t_start + (i - 1) * dt, t_start + i * dt
        state = cn_step(sys, state, source_integral(sys, f, t0, t1) if f is not None else None)
        state = state.model_copy(update={"t": t1})
        record(i, state)

    result = RunResult(records=records, final=state)
    logger.info(
        "time integration finished",
        k=ops.k,
        n=ops.complex.mesh.n,
        steps=steps,
        energy_drift=result.max_drift("E"),
        operator_energy_drift=result.max_drift("H"),
    )
    return result
