"""Time stepping for quasi-static poroelasticity in total-pressure form.

Unknowns per time level: displacement u (P2 vector), total pressure
xi = alpha*p - lam*div(u) (P1), fluid pressure p (P1).  Backward Euler in
time; three interchangeable update strategies over one set of assembled
blocks:

* ``step_coupled``      -- monolithic 3x3 block solve,
* ``step_te_decoupled`` -- generalized Stokes with the lagged pressure,
                           then the reaction-diffusion pressure update,
* ``step_iterative``    -- within each step, alternate the pressure solve
                           and the Stokes solve to a fixed count or an
                           increment tolerance.

The block systems are assembled in a symmetric signed form (mass-balance and
pressure rows multiplied by -1) so row/column Dirichlet elimination keeps
them symmetric.  All coefficient blocks are time-independent, so each
algorithm factors its matrix once and reuses it for every step/iteration;
loads and boundary data are separable profiles scaled by a time factor.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sparse

from .assembly import (BOUNDARY_FLUX, BOUNDARY_TRACTION, DIV_COUPLING, DIV_DIV,
                       ELASTICITY, MASS, P_STIFFNESS, VOLUME_LOAD, PhysParams,
                       assemble_form, assemble_functional, constrain_matrix,
                       dirichlet_columns)
from .fem import P1, P2_VECTOR, FieldVector, Space
from .linalg import Factorization, cg_solve, lu_factor
from .mesh import DIRICHLET_TAGS, NEUMANN_TAGS, TriMesh


def _static_time_factor(t: float) -> float:
    return 1.0


@dataclass
class LoadSet:
    """Problem data as spatial profiles times a shared scalar time factor.

    Any entry may be None (treated as zero).  Volume data are called as
    ``f(x, y)``, boundary data as ``f(x, y, normal)``, Dirichlet profiles as
    ``g(x, y)``; the actual datum at time t is profile * time_factor(t).
    """

    volume_force: Optional[Callable] = None
    traction: Optional[Callable] = None
    mass_source: Optional[Callable] = None
    flux: Optional[Callable] = None
    displacement_bc: Optional[Callable] = None
    pressure_bc: Optional[Callable] = None
    time_factor: Callable[[float], float] = _static_time_factor


@dataclass
class BiotState:
    """Discrete solution triple at one time level."""

    u: FieldVector
    xi: FieldVector
    p: FieldVector
    t: float

    def copy(self) -> "BiotState":
        return BiotState(self.u.copy(), self.xi.copy(), self.p.copy(), self.t)


class _ConstrainedSolver:
    """One block system: raw matrix, Dirichlet dofs, reusable factorization."""

    def __init__(self, matrix: sparse.csr_matrix, dofs: np.ndarray):
        self.dofs = dofs
        self.matrix = constrain_matrix(matrix, dofs)
        self._bc_cols = dirichlet_columns(matrix, dofs) if len(dofs) else None
        self.fact: Factorization = lu_factor(self.matrix)

    def constrain(self, b_raw: np.ndarray, bc_values: np.ndarray) -> np.ndarray:
        b = b_raw.copy()
        if self._bc_cols is not None:
            b -= self._bc_cols @ bc_values
            b[self.dofs] = bc_values
        return b

    def solve(self, b_raw: np.ndarray, bc_values: np.ndarray) -> np.ndarray:
        return self.fact.solve(self.constrain(b_raw, bc_values))


class DiscreteSystem:
    """Assembled operators, load profiles, and solver caches for one mesh.

    Blocks (unit coefficients, scaled on use):
      elasticity  (eps(u), eps(v))     vector x vector
      div_coupling (q, div v)          rows: vector dofs, cols: P1 dofs
      mass        (p, q)               P1 x P1
      stiffness   (grad p, grad q)     P1 x P1
    """

    def __init__(self, mesh: TriMesh, params: PhysParams, loads: LoadSet,
                 dirichlet_tags=DIRICHLET_TAGS, neumann_tags=NEUMANN_TAGS,
                 pressure_solver: str = "lu"):
        if pressure_solver not in ("lu", "cg"):
            raise ValueError(f"unknown pressure solver {pressure_solver!r}")
        self.mesh = mesh
        self.params = params
        self.loads = loads
        self.pressure_solver = pressure_solver

        self.V = Space(mesh, P2_VECTOR, tuple(dirichlet_tags))
        self.W = Space(mesh, P1)
        self.M = Space(mesh, P1, tuple(dirichlet_tags))

        self.elasticity = assemble_form(ELASTICITY, self.V, self.V)
        self.div_coupling = assemble_form(DIV_COUPLING, self.W, self.V)
        self.mass = assemble_form(MASS, self.W, self.W)
        self.stiffness = assemble_form(P_STIFFNESS, self.W, self.W)

        nv, nw = self.V.num_dofs, self.W.num_dofs
        self.offsets = (0, nv, nv + nw, nv + nw + self.M.num_dofs)

        self.fu_profile = np.zeros(nv)
        if loads.volume_force is not None:
            self.fu_profile += assemble_functional(VOLUME_LOAD, self.V, loads.volume_force)
        if loads.traction is not None and neumann_tags:
            self.fu_profile += assemble_functional(
                BOUNDARY_TRACTION, self.V, loads.traction, tags=neumann_tags)
        self.fq_profile = np.zeros(self.M.num_dofs)
        if loads.mass_source is not None:
            self.fq_profile += assemble_functional(VOLUME_LOAD, self.M, loads.mass_source)
        if loads.flux is not None and neumann_tags:
            self.fq_profile += assemble_functional(
                BOUNDARY_FLUX, self.M, loads.flux, tags=neumann_tags)

        self.bd_u = self.V.dirichlet_dofs()
        self.bd_p = self.M.dirichlet_dofs()
        self.gu_profile = self._bc_profile(self.V, loads.displacement_bc)
        self.gp_profile = self._bc_profile(self.M, loads.pressure_bc)

        self._solvers: dict[str, _ConstrainedSolver] = {}
        self._div_div = None
        self._mass_fact = None

    # -- assembly helpers -------------------------------------------------

    def _bc_profile(self, space: Space, g) -> np.ndarray:
        scalar = space.boundary_scalar_dofs(space.dirichlet_tags)
        size = space.components * len(scalar)
        if g is None:
            return np.zeros(size)
        coords = space.dof_coords()[scalar]
        out = g(coords[:, 0], coords[:, 1])
        if space.components == 1:
            return np.broadcast_to(np.asarray(out, dtype=float), (size,)).copy()
        gx, gy = out
        return np.concatenate([
            np.broadcast_to(np.asarray(gx, dtype=float), scalar.shape),
            np.broadcast_to(np.asarray(gy, dtype=float), scalar.shape)])

    @property
    def _coef(self):
        p = self.params
        return p.c0 + p.alpha ** 2 / p.lam, p.alpha / p.lam  # (c_p, c_xi)

    def _coupled(self) -> _ConstrainedSolver:
        if "coupled" not in self._solvers:
            p = self.params
            c_p, c_xi = self._coef
            A = sparse.bmat([
                [2 * p.mu * self.elasticity, -self.div_coupling, None],
                [-self.div_coupling.T, -(1 / p.lam) * self.mass, c_xi * self.mass],
                [None, c_xi * self.mass,
                 -(c_p * self.mass + p.K * p.dt * self.stiffness)],
            ], format="csr")
            dofs = np.concatenate([self.bd_u, self.offsets[2] + self.bd_p])
            self._solvers["coupled"] = _ConstrainedSolver(A, dofs)
        return self._solvers["coupled"]

    def _stokes(self) -> _ConstrainedSolver:
        if "stokes" not in self._solvers:
            p = self.params
            A = sparse.bmat([
                [2 * p.mu * self.elasticity, -self.div_coupling],
                [-self.div_coupling.T, -(1 / p.lam) * self.mass],
            ], format="csr")
            self._solvers["stokes"] = _ConstrainedSolver(A, self.bd_u)
        return self._solvers["stokes"]

    def _pressure(self) -> _ConstrainedSolver:
        if "pressure" not in self._solvers:
            p = self.params
            c_p, _ = self._coef
            A = (c_p * self.mass + p.K * p.dt * self.stiffness).tocsr()
            self._solvers["pressure"] = _ConstrainedSolver(A, self.bd_p)
        return self._solvers["pressure"]

    def _solve_pressure(self, b_raw: np.ndarray, bc_values: np.ndarray) -> np.ndarray:
        solver = self._pressure()
        if self.pressure_solver == "cg":
            x, _ = cg_solve(solver.matrix, solver.constrain(b_raw, bc_values), tol=1e-13)
            return x
        return solver.solve(b_raw, bc_values)

    # -- norms and diagnostics --------------------------------------------

    def l2_p1(self, values: np.ndarray) -> float:
        """L2 norm of a P1 coefficient vector."""
        return float(np.sqrt(max(values @ (self.mass @ values), 0.0)))

    def strain_norm(self, u_values: np.ndarray) -> float:
        """L2 norm of the symmetric gradient of a vector coefficient field."""
        return float(np.sqrt(max(u_values @ (self.elasticity @ u_values), 0.0)))

    def div_norm(self, u_values: np.ndarray) -> float:
        """L2 norm of the divergence of a vector coefficient field."""
        if self._div_div is None:
            self._div_div = assemble_form(DIV_DIV, self.V, self.V)
        return float(np.sqrt(max(u_values @ (self._div_div @ u_values), 0.0)))

    def max_solver_residual(self) -> float:
        return max((s.fact.max_rel_residual for s in self._solvers.values()),
                   default=0.0)

    def project_total_pressure(self, u_values: np.ndarray,
                               p_values: np.ndarray) -> np.ndarray:
        """xi = alpha*p - lam*Pi(div u) with Pi the L2 projection onto P1.

        This makes the mass-balance constraint equation hold exactly at the
        initial level, which the discrete energy identity requires.
        """
        p = self.params
        if self._mass_fact is None:
            self._mass_fact = lu_factor(self.mass.tocsr())
        rhs = p.alpha * (self.mass @ p_values) - p.lam * (self.div_coupling.T @ u_values)
        return self._mass_fact.solve(rhs)

    def state(self, u_values, xi_values, p_values, t: float) -> BiotState:
        return BiotState(FieldVector(self.V, u_values), FieldVector(self.W, xi_values),
                         FieldVector(self.M, p_values), t)

    # -- shared right-hand-side pieces ------------------------------------

    def _bc_values(self, t: float):
        tf = self.loads.time_factor(t)
        return tf * self.gu_profile, tf * self.gp_profile

    def _pressure_rhs_base(self, state: BiotState, t: float) -> np.ndarray:
        """dt*(Q_s + g2 terms) + (c0+a^2/lam)*M p_prev - (a/lam)*M xi_prev."""
        p = self.params
        c_p, c_xi = self._coef
        tf = self.loads.time_factor(t)
        return (p.dt * tf * self.fq_profile + c_p * (self.mass @ state.p.values)
                - c_xi * (self.mass @ state.xi.values))


def build_system(mesh: TriMesh, params: PhysParams, loads: LoadSet,
                 dirichlet_tags=DIRICHLET_TAGS, neumann_tags=NEUMANN_TAGS,
                 pressure_solver: str = "lu") -> DiscreteSystem:
    """Assemble all blocks and load profiles for one mesh level."""
    return DiscreteSystem(mesh, params, loads, dirichlet_tags, neumann_tags,
                          pressure_solver)


def step_coupled(sys: DiscreteSystem, state: BiotState) -> BiotState:
    """One backward-Euler step of the monolithic three-field system."""
    p = sys.params
    t = state.t + p.dt
    tf = sys.loads.time_factor(t)
    nv, nw = sys.offsets[1], sys.offsets[2] - sys.offsets[1]
    b = np.concatenate([
        tf * sys.fu_profile,
        np.zeros(nw),
        -sys._pressure_rhs_base(state, t),
    ])
    gu, gp = sys._bc_values(t)
    x = sys._coupled().solve(b, np.concatenate([gu, gp]))
    o = sys.offsets
    return sys.state(x[o[0]:o[1]], x[o[1]:o[2]], x[o[2]:o[3]], t)


def _solve_stokes(sys: DiscreteSystem, p_values: np.ndarray, t: float,
                  gu: np.ndarray):
    """Generalized Stokes solve for (u, xi) given a pressure field."""
    _, c_xi = sys._coef
    tf = sys.loads.time_factor(t)
    b = np.concatenate([tf * sys.fu_profile, -c_xi * (sys.mass @ p_values)])
    x = sys._stokes().solve(b, gu)
    nv = sys.offsets[1]
    return x[:nv], x[nv:]


def step_te_decoupled(sys: DiscreteSystem, state: BiotState) -> BiotState:
    """One time-extrapolated decoupled step: Stokes with the lagged pressure,
    then the reaction-diffusion update with the fresh total pressure."""
    p = sys.params
    t = state.t + p.dt
    gu, gp = sys._bc_values(t)
    u_new, xi_new = _solve_stokes(sys, state.p.values, t, gu)
    _, c_xi = sys._coef
    b_p = sys._pressure_rhs_base(state, t) + c_xi * (sys.mass @ xi_new)
    p_new = sys._solve_pressure(b_p, gp)
    return sys.state(u_new, xi_new, p_new, t)


def step_iterative(sys: DiscreteSystem, state: BiotState, iters: int | None = None,
                   tol: float | None = None, max_iters: int = 500,
                   start: BiotState | None = None):
    """One time step of the iteratively decoupled algorithm.

    Alternates the SPD pressure solve (source term (alpha/lam)*(xi_prev_iter -
    xi_prev_step)) with the Stokes solve, starting from the previous time
    level.  Exactly one of ``iters`` (fixed count) or ``tol`` (stop when the
    total-pressure increment drops below it) must be given.

    Returns (state_n, increments) where increments[i] is the L2 norm of
    xi^{n,i+1} - xi^{n,i}.
    """
    if (iters is None) == (tol is None):
        raise ValueError("give exactly one of iters or tol")
    if iters is not None and iters < 1:
        raise ValueError(f"iteration count must be >= 1, got {iters}")
    if tol is not None and tol <= 0:
        raise ValueError(f"tolerance must be positive, got {tol}")

    p = sys.params
    t = state.t + p.dt
    gu, gp = sys._bc_values(t)
    base = sys._pressure_rhs_base(state, t)
    _, c_xi = sys._coef

    it_state = (start or state)
    u_i, xi_i, p_i = (it_state.u.values.copy(), it_state.xi.values.copy(),
                      it_state.p.values.copy())
    increments: list[float] = []
    budget = iters if iters is not None else max_iters
    for _ in range(budget):
        p_i = sys._solve_pressure(base + c_xi * (sys.mass @ xi_i), gp)
        u_i, xi_new = _solve_stokes(sys, p_i, t, gu)
        increments.append(sys.l2_p1(xi_new - xi_i))
        xi_i = xi_new
        if tol is not None and increments[-1] <= tol:
            break
    else:
        if tol is not None:
            raise ConvergenceFailure(
                f"decoupling iteration did not reach tol={tol:g} within "
                f"{max_iters} iterations", increments)
    return sys.state(u_i, xi_i, p_i, t), increments


class ConvergenceFailure(RuntimeError):
    """Tol-mode iteration ran out of budget; carries the increment history."""

    def __init__(self, message, history):
        super().__init__(message)
        self.history = history


def advance(sys: DiscreteSystem, state: BiotState, num_steps: int,
            algorithm: str = "coupled", iters: int | None = None,
            tol: float | None = None, keep_states: bool = False):
    """March ``num_steps`` steps; returns the final state (and all states if asked)."""
    states = [state]
    for _ in range(num_steps):
        if algorithm == "coupled":
            state = step_coupled(sys, state)
        elif algorithm == "te":
            state = step_te_decoupled(sys, state)
        elif algorithm == "iterative":
            state, _ = step_iterative(sys, state, iters=iters, tol=tol)
        else:
            raise ValueError(f"unknown algorithm {algorithm!r}")
        if keep_states:
            states.append(state)
    return states if keep_states else state


# ---------------------------------------------------------------------------
# analysis checks: contraction of the split iteration, energy law, Korn-type
# divergence bound
# ---------------------------------------------------------------------------

@dataclass
class ContractionReport:
    """Per-iteration errors of the split iteration against the coupled oracle."""

    rho: float                    # (alpha^2/lam) / (c0 + alpha^2/lam)
    xi_errors: np.ndarray         # ||xi^{n,i} - xi^n||, i = 0..imax
    p_errors: np.ndarray          # ||p^{n,i} - p^n||, i = 1..imax
    strain_errors: np.ndarray     # ||eps(u^{n,i} - u^n)||, i = 1..imax
    ratios: np.ndarray            # xi_errors[i] / xi_errors[i-1] where defined
    mu: float
    alpha: float
    scale: float                  # ||xi^n||, sets the solver-noise floor

    @property
    def max_ratio(self) -> float:
        return float(self.ratios.max()) if len(self.ratios) else 0.0

    def power_bound_margins(self) -> np.ndarray:
        """rho^i * ||e_xi^0|| - ||e_xi^i|| for i >= 1 (nonnegative iff bound holds)."""
        i = np.arange(1, len(self.xi_errors))
        return self.rho ** i * self.xi_errors[0] - self.xi_errors[1:]

    def pressure_bound_ok(self, slack: float = 1e-9) -> bool:
        """||e_p^i|| <= (rho/alpha) ||e_xi^{i-1}|| per iteration."""
        bound = (self.rho / self.alpha) * self.xi_errors[:-1]
        return bool(np.all(self.p_errors <= bound * (1 + slack) + 1e-12 * self.scale))

    def strain_bound_ok(self, slack: float = 1e-9) -> bool:
        """||eps(e_u^i)|| <= sqrt(2)/(2 mu) ||e_xi^i|| per iteration."""
        bound = (np.sqrt(2.0) / (2.0 * self.mu)) * self.xi_errors[1:]
        return bool(np.all(self.strain_errors <= bound * (1 + slack) + 1e-12 * self.scale))


def contraction_monitor(sys: DiscreteSystem, state: BiotState, imax: int = 25,
                        start: BiotState | None = None) -> ContractionReport:
    """Run the split iteration for one step and measure its errors.

    The coupled solve of the same step is the oracle; errors are L2 norms of
    iterate minus oracle.  ``start`` overrides the iterate initialization
    (defaults to the previous time level, as the algorithm prescribes).
    """
    p = sys.params
    reference = step_coupled(sys, state)
    t = reference.t
    gu, gp = sys._bc_values(t)
    base = sys._pressure_rhs_base(state, t)
    _, c_xi = sys._coef

    it_state = start or state
    xi_i = it_state.xi.values.copy()
    xi_errors = [sys.l2_p1(xi_i - reference.xi.values)]
    p_errors, strain_errors = [], []
    for _ in range(imax):
        p_i = sys._solve_pressure(base + c_xi * (sys.mass @ xi_i), gp)
        u_i, xi_i = _solve_stokes(sys, p_i, t, gu)
        xi_errors.append(sys.l2_p1(xi_i - reference.xi.values))
        p_errors.append(sys.l2_p1(p_i - reference.p.values))
        strain_errors.append(sys.strain_norm(u_i - reference.u.values))

    xi_errors = np.array(xi_errors)
    # ratios are meaningful only while the previous error is above the noise
    # floor of the direct solves
    floor = max(1e-13 * sys.l2_p1(reference.xi.values), 1e-300)
    with np.errstate(divide="ignore", invalid="ignore"):
        raw = xi_errors[1:] / xi_errors[:-1]
    ratios = raw[xi_errors[:-1] > floor]
    return ContractionReport(rho=p.contraction_factor, xi_errors=xi_errors,
                             p_errors=np.array(p_errors),
                             strain_errors=np.array(strain_errors),
                             ratios=ratios, mu=p.mu, alpha=p.alpha,
                             scale=sys.l2_p1(reference.xi.values))


@dataclass
class EnergyReport:
    """Discrete energy balance J^l + S^l = J^0 along a coupled trajectory."""

    J: np.ndarray        # J[l], l = 0..N
    S: np.ndarray        # S[l], cumulative, S[0] = 0
    defects: np.ndarray  # |J[l] + S[l] - J[0]| / (|J[0]| + 1), l = 0..N

    @property
    def max_defect(self) -> float:
        return float(self.defects.max())


def energy_check(sys: DiscreteSystem, states: list[BiotState]) -> EnergyReport:
    """Evaluate the discrete energy identity along a trajectory.

    The identity is exact (up to solver residual) for trajectories produced
    by ``step_coupled`` with homogeneous Dirichlet data, time-independent
    loads, and an initial state whose total pressure satisfies the projected
    constraint (see ``DiscreteSystem.project_total_pressure``).

    J^l  = mu ||eps u^l||^2 + 1/(2 lam) ||alpha p^l - xi^l||^2
           + c0/2 ||p^l||^2 - (f, u^l) - <h, u^l>
    S^l  = dt * sum_{n<=l} [ dt (mu ||d_t eps u^n||^2
           + 1/(2 lam) ||d_t(alpha p^n - xi^n)||^2 + c0/2 ||d_t p^n||^2)
           + K ||grad p^n||^2 - (Q_s, p^n) - <g2, p^n> ]
    """
    p = sys.params

    def J(s: BiotState) -> float:
        tf = sys.loads.time_factor(s.t)
        d = p.alpha * s.p.values - s.xi.values
        return (p.mu * float(s.u.values @ (sys.elasticity @ s.u.values))
                + 0.5 / p.lam * float(d @ (sys.mass @ d))
                + 0.5 * p.c0 * float(s.p.values @ (sys.mass @ s.p.values))
                - tf * float(sys.fu_profile @ s.u.values))

    Js = np.array([J(s) for s in states])
    S = np.zeros(len(states))
    total = 0.0
    for n in range(1, len(states)):
        cur, prev = states[n], states[n - 1]
        tf = sys.loads.time_factor(cur.t)
        du = (cur.u.values - prev.u.values) / p.dt
        dd = (p.alpha * cur.p.values - cur.xi.values
              - p.alpha * prev.p.values + prev.xi.values) / p.dt
        dp = (cur.p.values - prev.p.values) / p.dt
        dissipation = (p.mu * float(du @ (sys.elasticity @ du))
                       + 0.5 / p.lam * float(dd @ (sys.mass @ dd))
                       + 0.5 * p.c0 * float(dp @ (sys.mass @ dp)))
        total += p.dt * (p.dt * dissipation
                         + p.K * float(cur.p.values @ (sys.stiffness @ cur.p.values))
                         - tf * float(sys.fq_profile @ cur.p.values))
        S[n] = total
    defects = np.abs(Js + S - Js[0]) / (abs(Js[0]) + 1.0)
    return EnergyReport(J=Js, S=S, defects=defects)


def korn_check(sys: DiscreteSystem, num_fields: int = 1000, seed: int = 0,
               rel_tol: float = 1e-12):
    """Check ||div u_h|| <= sqrt(2) ||eps(u_h)|| over random coefficient fields.

    Returns (max_ratio, violations): the largest measured ||div|| / ||eps||
    and how many fields broke the bound beyond ``rel_tol * ||eps(u_h)||``.
    """
    rng = np.random.default_rng(seed)
    bound = np.sqrt(2.0)
    max_ratio, violations = 0.0, 0
    for _ in range(num_fields):
        u = rng.standard_normal(sys.V.num_dofs)
        dn, en = sys.div_norm(u), sys.strain_norm(u)
        if en == 0.0:
            continue
        max_ratio = max(max_ratio, dn / en)
        if dn > bound * en + rel_tol * en:
            violations += 1
    return max_ratio, violations
