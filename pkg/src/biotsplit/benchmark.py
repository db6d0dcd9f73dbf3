"""Manufactured-solution convergence benchmark on the unit square.

Exact fields (all scaled by e^{-t}):

    u1 = sin(2 pi y)(cos(2 pi x) - 1) + sin(pi x) sin(pi y)/(mu + lam)
    u2 = sin(2 pi x)(1 - cos(2 pi y)) + sin(pi x) sin(pi y)/(mu + lam)
    p  = sin(pi x) sin(pi y)

with div u = pi sin(pi(x+y))/(mu+lam) and xi = alpha p - lam div u.  Dirichlet
data for u and p are imposed on the left/right sides, traction and flux data
on the bottom/top.  Errors are measured at the terminal time in the L2 norm
and the full H1 norm by element quadrature, and rates across a refinement
chain as log2(e_h / e_{h/2}).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import fem
from .assembly import PhysParams
from .biot import BiotState, DiscreteSystem, LoadSet, advance, build_system
from .fem import P1, affine_maps, eval_basis, interpolate, quadrature
from .mesh import CELL_SPLIT
from .mesh import TriMesh, build_uniform, refine

#: Named parameter presets; unlisted values fall back to PhysParams defaults.
PRESETS = {
    "nu03": dict(nu=0.3, c0=1.0, K=1.0),
    "nu0499": dict(nu=0.499, c0=1.0, K=1.0),
    "lowk": dict(nu=0.3, c0=1.0, K=1e-6),
    "c00": dict(nu=0.3, c0=0.0, K=1.0),
}

PI = math.pi


def make_case(preset: str | None = None, **overrides) -> "ManufacturedCase":
    """Build a case from a preset name and/or explicit parameter overrides."""
    values = dict(E=1.0, alpha=1.0, dt=1e-3, T=0.01)
    if preset is not None:
        if preset not in PRESETS:
            raise ValueError(f"unknown preset {preset!r} (have {sorted(PRESETS)})")
        values.update(PRESETS[preset])
    values.update(overrides)
    return ManufacturedCase(PhysParams(**values))


@dataclass(frozen=True)
class ManufacturedCase:
    """Closed-form solution, forcing, and boundary data, time-separable.

    Spatial profiles are the t = 0 fields; multiply by ``time_factor(t)``
    (= e^{-t}) for the field at time t.  All profile methods are vectorized
    over coordinate arrays.
    """

    params: PhysParams

    @staticmethod
    def time_factor(t: float) -> float:
        return math.exp(-t)

    # -- primary fields ----------------------------------------------------

    def u_profile(self, x, y):
        ml = self.params.mu + self.params.lam
        bump = np.sin(PI * x) * np.sin(PI * y) / ml
        return np.stack([
            np.sin(2 * PI * y) * (np.cos(2 * PI * x) - 1.0) + bump,
            np.sin(2 * PI * x) * (1.0 - np.cos(2 * PI * y)) + bump,
        ])

    def p_profile(self, x, y):
        return np.sin(PI * x) * np.sin(PI * y)

    def div_u_profile(self, x, y):
        return PI * np.sin(PI * (x + y)) / (self.params.mu + self.params.lam)

    def xi_profile(self, x, y):
        p = self.params
        return p.alpha * self.p_profile(x, y) - p.lam * self.div_u_profile(x, y)

    # -- gradients (profile part) ------------------------------------------

    def grad_u_profile(self, x, y):
        """(2, 2, ...) array, entry [i, j] = d u_i / d x_j."""
        ml = self.params.mu + self.params.lam
        cs = PI * np.cos(PI * x) * np.sin(PI * y) / ml
        sc = PI * np.sin(PI * x) * np.cos(PI * y) / ml
        return np.stack([
            np.stack([-2 * PI * np.sin(2 * PI * x) * np.sin(2 * PI * y) + cs,
                      2 * PI * np.cos(2 * PI * y) * (np.cos(2 * PI * x) - 1.0) + sc]),
            np.stack([2 * PI * np.cos(2 * PI * x) * (1.0 - np.cos(2 * PI * y)) + cs,
                      2 * PI * np.sin(2 * PI * x) * np.sin(2 * PI * y) + sc]),
        ])

    def grad_p_profile(self, x, y):
        return np.stack([PI * np.cos(PI * x) * np.sin(PI * y),
                         PI * np.sin(PI * x) * np.cos(PI * y)])

    def grad_xi_profile(self, x, y):
        p = self.params
        wave = p.lam * PI ** 2 * np.cos(PI * (x + y)) / (p.mu + p.lam)
        gp = self.grad_p_profile(x, y)
        return np.stack([p.alpha * gp[0] - wave, p.alpha * gp[1] - wave])

    # -- forcing and boundary data ------------------------------------------

    def volume_force_profile(self, x, y):
        p = self.params
        ml = p.mu + p.lam
        f1 = (4 * p.mu * PI ** 2 * np.sin(2 * PI * y) * (2 * np.cos(2 * PI * x) - 1.0)
              + (2 * p.mu * PI ** 2 / ml * np.sin(PI * x)
                 + p.alpha * PI * np.cos(PI * x)) * np.sin(PI * y)
              - PI ** 2 * np.cos(PI * (x + y)))
        f2 = (4 * p.mu * PI ** 2 * np.sin(2 * PI * x) * (1.0 - 2 * np.cos(2 * PI * y))
              + (2 * p.mu * PI ** 2 / ml * np.sin(PI * y)
                 + p.alpha * PI * np.cos(PI * y)) * np.sin(PI * x)
              - PI ** 2 * np.cos(PI * (x + y)))
        return np.stack([f1, f2])

    def mass_source_profile(self, x, y):
        p = self.params
        return ((-p.c0 + 2 * PI ** 2 * p.K) * np.sin(PI * x) * np.sin(PI * y)
                - p.alpha * PI * np.sin(PI * (x + y)) / (p.mu + p.lam))

    def traction_profile(self, x, y, normal):
        """(2 mu eps(u) - xi I) n on a side with outward normal n."""
        p = self.params
        g = self.grad_u_profile(x, y)
        xi = self.xi_profile(x, y)
        e11, e22 = g[0, 0], g[1, 1]
        e12 = 0.5 * (g[0, 1] + g[1, 0])
        t1 = (2 * p.mu * e11 - xi) * normal[0] + 2 * p.mu * e12 * normal[1]
        t2 = 2 * p.mu * e12 * normal[0] + (2 * p.mu * e22 - xi) * normal[1]
        return np.stack([t1, t2])

    def flux_profile(self, x, y, normal):
        """K grad(p) . n on a side with outward normal n."""
        gp = self.grad_p_profile(x, y)
        return self.params.K * (gp[0] * normal[0] + gp[1] * normal[1])

    # -- exact fields at a given time (for error norms) ----------------------

    def u_exact(self, x, y, t):
        return self.time_factor(t) * self.u_profile(x, y)

    def p_exact(self, x, y, t):
        return self.time_factor(t) * self.p_profile(x, y)

    def xi_exact(self, x, y, t):
        return self.time_factor(t) * self.xi_profile(x, y)

    def grad_u_exact(self, x, y, t):
        return self.time_factor(t) * self.grad_u_profile(x, y)

    def grad_p_exact(self, x, y, t):
        return self.time_factor(t) * self.grad_p_profile(x, y)

    def grad_xi_exact(self, x, y, t):
        return self.time_factor(t) * self.grad_xi_profile(x, y)

    # -- strong-form residuals (transcription guard) --------------------------

    def strong_form_residual(self, x, y, t):
        """Pointwise residuals of the momentum and mass-balance equations.

        Returns (r_mom1, r_mom2, r_mass); all should vanish identically for
        the closed-form fields, so any nonzero value beyond roundoff flags a
        transcription error in the formulas above.
        """
        p = self.params
        ml = p.mu + p.lam
        tf = self.time_factor(t)
        S = np.sin(PI * x) * np.sin(PI * y)
        CC = np.cos(PI * x) * np.cos(PI * y)
        # div(eps(u)) from the analytic second derivatives
        dive1 = (-2 * PI ** 2 * np.sin(2 * PI * y) * (2 * np.cos(2 * PI * x) - 1.0)
                 - 1.5 * PI ** 2 * S / ml + 0.5 * PI ** 2 * CC / ml)
        dive2 = (-2 * PI ** 2 * np.sin(2 * PI * x) * (1.0 - 2 * np.cos(2 * PI * y))
                 - 1.5 * PI ** 2 * S / ml + 0.5 * PI ** 2 * CC / ml)
        gxi = self.grad_xi_profile(x, y)
        f = self.volume_force_profile(x, y)
        r_mom1 = tf * (-2 * p.mu * dive1 + gxi[0] - f[0])
        r_mom2 = tf * (-2 * p.mu * dive2 + gxi[1] - f[1])
        # d/dt (c0 p + alpha div u) - K lap(p) - Q_s
        lap_p = -2 * PI ** 2 * S
        r_mass = tf * (-(p.c0 * self.p_profile(x, y)
                         + p.alpha * self.div_u_profile(x, y))
                       - p.K * lap_p - self.mass_source_profile(x, y))
        return r_mom1, r_mom2, r_mass


def benchmark_loads(case: ManufacturedCase) -> LoadSet:
    """Full manufactured data set: loads, Neumann data, Dirichlet profiles."""
    return LoadSet(
        volume_force=case.volume_force_profile,
        traction=case.traction_profile,
        mass_source=case.mass_source_profile,
        flux=case.flux_profile,
        displacement_bc=case.u_profile,
        pressure_bc=case.p_profile,
        time_factor=case.time_factor,
    )


def homogeneous_loads(case: ManufacturedCase) -> LoadSet:
    """Zero boundary data, static volume loads: the energy-identity setting."""
    return LoadSet(volume_force=case.volume_force_profile,
                   mass_source=case.mass_source_profile)


def initial_state(sys: DiscreteSystem, case: ManufacturedCase) -> BiotState:
    """Nodal interpolation of the exact fields at t = 0 (xi via its formula)."""
    u0 = interpolate(sys.V, case.u_profile)
    xi0 = interpolate(sys.W, case.xi_profile)
    p0 = interpolate(sys.M, case.p_profile)
    return BiotState(u0, xi0, p0, 0.0)


@dataclass(frozen=True)
class ErrorSet:
    """L2 and full-H1 errors of the three fields at the terminal time."""

    l2_u: float
    h1_u: float
    l2_xi: float
    h1_xi: float
    l2_p: float
    h1_p: float

    COLUMNS = ("l2_u", "h1_u", "l2_xi", "h1_xi", "l2_p", "h1_p")

    def as_tuple(self):
        return (self.l2_u, self.h1_u, self.l2_xi, self.h1_xi, self.l2_p, self.h1_p)


def compute_errors(state: BiotState, case: ManufacturedCase) -> ErrorSet:
    """Element-quadrature L2/H1 errors of (u, xi, p) against the exact fields."""
    mesh = state.u.space.mesh
    t = state.t
    rule = quadrature(fem.DEFAULT_DEGREE)
    w = rule.weights
    _, inv_t, det = affine_maps(mesh)

    p0 = mesh.vertices[mesh.triangles[:, 0]]
    p1v = mesh.vertices[mesh.triangles[:, 1]]
    p2v = mesh.vertices[mesh.triangles[:, 2]]
    l1, l2 = rule.points[:, 0], rule.points[:, 1]
    l0 = 1.0 - l1 - l2
    xq = np.outer(p0[:, 0], l0) + np.outer(p1v[:, 0], l1) + np.outer(p2v[:, 0], l2)
    yq = np.outer(p0[:, 1], l0) + np.outer(p1v[:, 1], l1) + np.outer(p2v[:, 1], l2)

    def scalar_errors(field, exact, grad_exact):
        vals, grads_ref = eval_basis(field.space.scalar_kind, rule.points)
        C = field.values[field.space.cell_dofs()]
        fh = np.einsum("ti,iq->tq", C, vals)
        g = np.einsum("tab,iqb->tiqa", inv_t, grads_ref)
        gh = np.einsum("ti,tiqa->tqa", C, g)
        diff = fh - exact(xq, yq, t)
        gdiff = gh - np.moveaxis(grad_exact(xq, yq, t), 0, -1)
        l2sq = float(np.einsum("q,tq,t->", w, diff ** 2, det))
        h1sq = l2sq + float(np.einsum("q,tqa,t->", w, gdiff ** 2, det))
        return np.sqrt(l2sq), np.sqrt(h1sq)

    def vector_errors(field):
        vals, grads_ref = eval_basis(field.space.scalar_kind, rule.points)
        sdofs = field.space.cell_dofs()
        g = np.einsum("tab,iqb->tiqa", inv_t, grads_ref)
        ue = case.u_exact(xq, yq, t)
        gue = case.grad_u_exact(xq, yq, t)
        l2sq = h1sq = 0.0
        for c in range(2):
            C = field.component(c)[sdofs]
            diff = np.einsum("ti,iq->tq", C, vals) - ue[c]
            gdiff = np.einsum("ti,tiqa->tqa", C, g) - np.moveaxis(gue[c], 0, -1)
            l2sq += float(np.einsum("q,tq,t->", w, diff ** 2, det))
            h1sq += float(np.einsum("q,tqa,t->", w, gdiff ** 2, det))
        return np.sqrt(l2sq), np.sqrt(l2sq + h1sq)

    l2u, h1u = vector_errors(state.u)
    l2xi, h1xi = scalar_errors(state.xi, case.xi_exact, case.grad_xi_exact)
    l2p, h1p = scalar_errors(state.p, case.p_exact, case.grad_p_exact)
    return ErrorSet(l2u, h1u, l2xi, h1xi, l2p, h1p)


@dataclass
class LevelResult:
    level: int              # 1-based level index
    inv_h: int              # cells per side (reciprocal grid spacing)
    errors: ErrorSet
    max_residual: float     # worst relative solver residual on this level
    steps: int


@dataclass
class StudyResult:
    algorithm: str
    case: ManufacturedCase
    rows: list
    iters: Optional[int] = None
    tol: Optional[float] = None

    def rates(self) -> list:
        """Per-level rate dict (None on the first level)."""
        out = [None]
        for prev, cur in zip(self.rows[:-1], self.rows[1:]):
            e0, e1 = prev.errors.as_tuple(), cur.errors.as_tuple()
            out.append({k: math.log2(a / b)
                        for k, a, b in zip(ErrorSet.COLUMNS, e0, e1)})
        return out

    @property
    def max_residual(self) -> float:
        return max(r.max_residual for r in self.rows)

    @property
    def tainted(self) -> bool:
        return self.max_residual > 1e-9


def run_study(algorithm: str, case: ManufacturedCase, levels: int, n0: int = 16,
              iters: int | None = None, tol: float | None = None,
              pressure_solver: str = "lu") -> StudyResult:
    """Time-march the benchmark on a refinement chain and collect errors.

    ``levels`` counts mesh levels (>= 2 for rates); the initial mesh has
    ``n0`` cells per side and each level halves h.  ``iters``/``tol`` apply
    to the iterative algorithm only.
    """
    if levels < 2:
        raise ValueError(f"need at least 2 levels for rates, got {levels}")
    if algorithm not in ("coupled", "te", "iterative"):
        raise ValueError(f"unknown algorithm {algorithm!r}")
    if algorithm == "iterative" and iters is None and tol is None:
        raise ValueError("iterative algorithm needs iters or tol")
    params = case.params
    num_steps = round(params.T / params.dt)
    if abs(num_steps * params.dt - params.T) > 1e-12 * max(params.T, 1.0):
        raise ValueError(f"T={params.T} is not an integer multiple of dt={params.dt}")

    loads = benchmark_loads(case)
    rows = []
    mesh = build_uniform(n0)
    for level in range(1, levels + 1):
        try:
            sys = build_system(mesh, params, loads, pressure_solver=pressure_solver)
            state = initial_state(sys, case)
            state = advance(sys, state, num_steps, algorithm, iters=iters, tol=tol)
        except Exception as exc:
            raise RuntimeError(
                f"level {level} (1/h={n0 * 2 ** (level - 1)}) failed: {exc}") from exc
        rows.append(LevelResult(level=level, inv_h=n0 * 2 ** (level - 1),
                                errors=compute_errors(state, case),
                                max_residual=sys.max_solver_residual(),
                                steps=num_steps))
        if level < levels:
            mesh = refine(mesh)
    return StudyResult(algorithm=algorithm, case=case, rows=rows,
                       iters=iters, tol=tol)


# ---------------------------------------------------------------------------
# report emission
# ---------------------------------------------------------------------------

CSV_HEADER = ("level,inv_h,"
              "err_L2_u,rate_L2_u,err_H1_u,rate_H1_u,"
              "err_L2_xi,rate_L2_xi,err_H1_xi,rate_H1_xi,"
              "err_L2_p,rate_L2_p,err_H1_p,rate_H1_p")


def study_csv(study: StudyResult) -> str:
    """Render the error table: 4-significant-digit errors, 2-decimal rates."""
    lines = [CSV_HEADER]
    rates = study.rates()
    for row, rate in zip(study.rows, rates):
        cells = [str(row.level), str(row.inv_h)]
        for key, err in zip(ErrorSet.COLUMNS, row.errors.as_tuple()):
            cells.append(f"{err:.3e}")
            cells.append("" if rate is None else f"{rate[key]:.2f}")
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def study_report(study: StudyResult, config_echo: dict | None = None,
                 checks: dict | None = None, failures: list | None = None) -> dict:
    """JSON-ready report with full run metadata and solver statistics."""
    p = study.case.params
    rates = study.rates()
    return {
        "algorithm": study.algorithm,
        "params": {k: getattr(p, k)
                   for k in ("E", "nu", "alpha", "c0", "K", "dt", "T", "mu", "lam")},
        "mesh": {"family": "uniform", "cell_split": CELL_SPLIT},
        "iter": study.iters,
        "tol": study.tol,
        "levels": [
            {
                "level": row.level,
                "inv_h": row.inv_h,
                "steps": row.steps,
                "errors": dict(zip(ErrorSet.COLUMNS, row.errors.as_tuple())),
                "rates": rates[i],
                "max_rel_residual": row.max_residual,
            }
            for i, row in enumerate(study.rows)
        ],
        "solver": {"max_rel_residual": study.max_residual,
                   "tainted": study.tainted},
        "config": config_echo or {},
        "checks": checks or {},
        "failures": failures or [],
    }


def write_csv(study: StudyResult, path: str) -> None:
    with open(path, "w") as f:
        f.write(study_csv(study))


def write_json(report: dict, path: str) -> None:
    with open(path, "w") as f:
        json.dump(report, f, indent=2, sort_keys=True)
        f.write("\n")
