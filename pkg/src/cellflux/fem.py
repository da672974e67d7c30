"""P1 finite elements for the two diffusion models.

Assembles consistent mass and stiffness matrices on a TriMesh and advances
the heat equation with backward Euler. Boundary data enters either as a line
integral of a prescribed flux along tagged edges (exclusion model) or as
Dirac loads spread onto the containing triangle's vertices with barycentric
weights (point-source model). Each implicit step is solved by Jacobi
preconditioned conjugate gradients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .mesh import DomainSpec, EdgeTag, TriMesh, generate_mesh, locate_points
from .sources import FluxSpec, IntensitySeries, SourceConfig

_GAUSS2 = (0.5 - 0.5 / math.sqrt(3.0), 0.5 + 0.5 / math.sqrt(3.0))


class SolverError(RuntimeError):
    """Linear solver failed to reach the requested residual."""

    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class TimeGrid:
    """Uniform time grid from 0 to T in steps of dt; T/dt must be integral."""

    dt: float
    T: float

    def __post_init__(self):
        if not self.dt > 0.0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.T < self.dt:
            raise ValueError(f"T={self.T} must be at least one step dt={self.dt}")
        ratio = self.T / self.dt
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError(f"T/dt = {ratio!r} is not integral")

    @property
    def n_steps(self) -> int:
        return round(self.T / self.dt)

    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps + 1)


@dataclass
class StepStats:
    iterations: int
    residuals: np.ndarray  # relative residual after each CG iteration


@dataclass
class SolverStats:
    iterations: list[int] = field(default_factory=list)
    final_residuals: list[float] = field(default_factory=list)

    def record(self, step: StepStats) -> None:
        self.iterations.append(step.iterations)
        self.final_residuals.append(
            float(step.residuals[-1]) if step.residuals.size else 0.0)


@dataclass
class FieldSolution:
    """Nodal concentration time series of one model run."""

    mesh: TriMesh
    times: np.ndarray
    values: list[np.ndarray] | None  # one vector per time, when stored
    final: np.ndarray
    diffusivity: float
    stats: SolverStats

    def __post_init__(self):
        if self.times[0] != 0.0 or np.any(np.diff(self.times) <= 0.0):
            raise ValueError("times must increase strictly from 0")
        if self.values is not None:
            if len(self.values) != len(self.times):
                raise ValueError("one value vector per time required")
            for v in self.values:
                if len(v) != self.mesh.num_vertices:
                    raise ValueError("value vector length must match vertex count")

    def snapshot_csv(self, path, time_index: int = -1) -> None:
        """Write ``vertex_index,x,y,value`` rows for one stored time."""
        u = self.values[time_index] if self.values is not None else self.final
        with open(path, "w") as fh:
            fh.write("vertex_index,x,y,value\n")
            for i, ((x, y), v) in enumerate(zip(self.mesh.vertices, u)):
                fh.write(f"{i},{float(x)!r},{float(y)!r},{float(v)!r}\n")


# ----------------------------------------------------------------------------
# assembly
# ----------------------------------------------------------------------------

def assemble_mass(mesh: TriMesh, lumped: bool = False) -> sp.csr_matrix:
    """Consistent P1 mass matrix (optionally lumped for diagnostics)."""
    tri = mesh.triangles
    nv = mesh.num_vertices
    areas = mesh.signed_areas
    if lumped:
        diag = np.zeros(nv)
        np.add.at(diag, tri.ravel(), np.repeat(areas / 3.0, 3))
        return sp.diags(diag).tocsr()
    local = (np.ones((3, 3)) + np.eye(3)) / 12.0
    data = areas[:, None, None] * local
    rows = np.repeat(tri[:, :, None], 3, axis=2)
    cols = np.repeat(tri[:, None, :], 3, axis=1)
    M = sp.coo_matrix((data.ravel(), (rows.ravel(), cols.ravel())), shape=(nv, nv))
    return M.tocsr()


def assemble_stiffness(mesh: TriMesh, diffusivity: float = 1.0) -> sp.csr_matrix:
    """Stiffness matrix of -D*Laplace with natural boundary conditions."""
    if diffusivity <= 0.0:
        raise ValueError(f"diffusivity must be positive, got {diffusivity}")
    tri = mesh.triangles
    nv = mesh.num_vertices
    p = mesh.vertices[tri]
    # b_i = y_j - y_k, c_i = x_k - x_j for (i, j, k) cyclic
    b = p[:, [1, 2, 0], 1] - p[:, [2, 0, 1], 1]
    c = p[:, [2, 0, 1], 0] - p[:, [1, 2, 0], 0]
    inv4a = diffusivity / (4.0 * mesh.signed_areas)
    data = (np.einsum("ti,tj->tij", b, b) + np.einsum("ti,tj->tij", c, c)) \
        * inv4a[:, None, None]
    rows = np.repeat(tri[:, :, None], 3, axis=2)
    cols = np.repeat(tri[:, None, :], 3, axis=1)
    A = sp.coo_matrix((data.ravel(), (rows.ravel(), cols.ravel())), shape=(nv, nv))
    return A.tocsr()


def assemble_neumann_load(mesh: TriMesh, flux, tag: EdgeTag) -> np.ndarray:
    """Line integral of a flux density against the P1 traces on tagged edges.

    ``flux`` is a FluxSpec or any callable of coordinate arrays (x, y). Uses
    two-point Gauss quadrature per edge, exact for the product of the linear
    trace with a linearised flux.
    """
    edges = mesh.tagged_edges(tag)
    if edges.size == 0:
        raise ValueError(f"mesh has no edges tagged {tag.value!r}")
    fn = flux.value_at if isinstance(flux, FluxSpec) else flux
    a = mesh.vertices[edges[:, 0]]
    b = mesh.vertices[edges[:, 1]]
    length = np.hypot(*(b - a).T)
    load = np.zeros(mesh.num_vertices)
    for xi in _GAUSS2:
        g = a + xi * (b - a)
        phi = np.asarray(fn(g[:, 0], g[:, 1]), dtype=float)
        np.add.at(load, edges[:, 0], 0.5 * length * phi * (1.0 - xi))
        np.add.at(load, edges[:, 1], 0.5 * length * phi * xi)
    return load


def assemble_dirac_load(mesh: TriMesh, sources) -> np.ndarray:
    """Point loads spread onto containing-triangle vertices by barycentric weight.

    ``sources`` is an iterable of (point, intensity). The load sum equals the
    intensity sum because the weights partition unity.
    """
    pts, vals = [], []
    for p, v in sources:
        pts.append(tuple(p))
        vals.append(float(v))
    if not pts:
        return np.zeros(mesh.num_vertices)
    tri, bary = locate_points(mesh, np.asarray(pts))
    if np.any(tri < 0):
        bad = pts[int(np.nonzero(tri < 0)[0][0])]
        raise ValueError(f"source point {bad} lies outside the mesh")
    load = np.zeros(mesh.num_vertices)
    np.add.at(load, mesh.triangles[tri].ravel(),
              (np.asarray(vals)[:, None] * bary).ravel())
    return load


# ----------------------------------------------------------------------------
# linear solver and time stepping
# ----------------------------------------------------------------------------

def jacobi_cr(A: sp.csr_matrix, b: np.ndarray, x0: np.ndarray | None = None,
              rtol: float = 1e-10, max_iter: int | None = None
              ) -> tuple[np.ndarray, np.ndarray]:
    """Conjugate residual iteration with symmetric Jacobi scaling.

    The residual-minimising member of the conjugate gradient family: on the
    diagonally scaled SPD system the recorded relative residual history is
    non-increasing by construction (plain conjugate gradients minimise the
    energy norm of the error instead, and their residual norms may wobble).
    Iteration stops once both the scaled and the unscaled relative residuals
    reach ``rtol``; raises SolverError when max_iter (default 10*sqrt(n))
    does not suffice.
    """
    n = len(b)
    if max_iter is None:
        max_iter = int(10.0 * math.sqrt(n)) + 10
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros(n), np.zeros(0)
    sq = np.sqrt(A.diagonal())
    inv_sq = 1.0 / sq
    scale = sp.diags(inv_sq)
    Ah = (scale @ A @ scale).tocsr()
    bh = inv_sq * b
    bh_norm = float(np.linalg.norm(bh))
    xh = np.zeros(n) if x0 is None else sq * x0

    def plain_res(rh: np.ndarray) -> float:
        return float(np.linalg.norm(sq * rh)) / bnorm

    r = bh - Ah @ xh
    history = [float(np.linalg.norm(r)) / bh_norm]
    if history[0] <= rtol and plain_res(r) <= rtol:
        return inv_sq * xh, np.asarray(history)
    Ar = Ah @ r
    rAr = float(r @ Ar)
    p = r.copy()
    Ap = Ar.copy()
    for _ in range(max_iter):
        ApAp = float(Ap @ Ap)
        if ApAp == 0.0 or rAr == 0.0:
            break
        alpha = rAr / ApAp
        xh += alpha * p
        r -= alpha * Ap
        history.append(float(np.linalg.norm(r)) / bh_norm)
        if history[-1] <= rtol and plain_res(r) <= rtol:
            return inv_sq * xh, np.asarray(history)
        Ar = Ah @ r
        rAr_new = float(r @ Ar)
        beta = rAr_new / rAr
        p = r + beta * p
        Ap = Ar + beta * Ap
        rAr = rAr_new
    raise SolverError(
        f"conjugate residual did not reach rtol={rtol:g} within {max_iter} "
        f"iterations (final residual {history[-1]:.3e})", history[-1])


def step_backward_euler(M: sp.csr_matrix, A: sp.csr_matrix, u_prev: np.ndarray,
                        load: np.ndarray, dt: float, *, rtol: float = 1e-10,
                        max_iter: int | None = None
                        ) -> tuple[np.ndarray, StepStats]:
    """One implicit step: solve (M + dt*A) u = M u_prev + dt*load."""
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    S = (M + dt * A).tocsr()
    rhs = M @ u_prev + dt * load
    u, history = jacobi_cr(S, rhs, x0=u_prev, rtol=rtol, max_iter=max_iter)
    return u, StepStats(iterations=max(len(history) - 1, 0), residuals=history)


class _ImplicitStepper:
    """Caches the system matrix of repeated backward Euler steps."""

    def __init__(self, mesh: TriMesh, diffusivity: float, dt: float,
                 rtol: float = 1e-10, max_iter: int | None = None):
        self.mesh = mesh
        self.dt = dt
        self.rtol = rtol
        self.max_iter = max_iter
        self.M = assemble_mass(mesh)
        self.A = assemble_stiffness(mesh, diffusivity)
        self.S = (self.M + dt * self.A).tocsr()

    def step(self, u: np.ndarray, load: np.ndarray) -> tuple[np.ndarray, StepStats]:
        rhs = self.M @ u + self.dt * load
        u_next, history = jacobi_cr(self.S, rhs, x0=u, rtol=self.rtol,
                                     max_iter=self.max_iter)
        return u_next, StepStats(iterations=max(len(history) - 1, 0),
                                 residuals=history)


def _initial_values(mesh: TriMesh, u0) -> np.ndarray:
    if u0 is None:
        return np.zeros(mesh.num_vertices)
    if callable(u0):
        return np.asarray(u0(mesh.vertices[:, 0], mesh.vertices[:, 1]), dtype=float)
    u = np.asarray(u0, dtype=float)
    if u.shape != (mesh.num_vertices,):
        raise ValueError(f"u0 has shape {u.shape}, expected ({mesh.num_vertices},)")
    return u.copy()


def _as_mesh(mesh_or_spec) -> TriMesh:
    if isinstance(mesh_or_spec, DomainSpec):
        return generate_mesh(mesh_or_spec)
    return mesh_or_spec


def _run(stepper: _ImplicitStepper, grid: TimeGrid, u0_values: np.ndarray,
         load_at, store_history: bool, on_step) -> FieldSolution:
    u = u0_values
    stats = SolverStats()
    values = [u.copy()] if store_history else None
    times = grid.times()
    for k in range(1, grid.n_steps + 1):
        t_k = times[k]
        u, step_stats = stepper.step(u, load_at(t_k))
        stats.record(step_stats)
        if store_history:
            values.append(u.copy())
        if on_step is not None:
            on_step(k, t_k, u)
    return FieldSolution(stepper.mesh, times, values, u, 0.0, stats)


def solve_exclusion_model(mesh_or_spec, flux, diffusivity: float, grid: TimeGrid,
                          u0=None, *, store_history: bool = True, on_step=None,
                          rtol: float = 1e-10) -> FieldSolution:
    """Diffusion outside the cell with the prescribed flux on the circle.

    The prescribed flux enters as a natural boundary load on the CELL-tagged
    edges; the outer square keeps the zero-flux condition. ``flux`` is a
    FluxSpec or a callable (x, y, t) evaluated at each step's end time.
    """
    mesh = _as_mesh(mesh_or_spec)
    if mesh.tagged_edges(EdgeTag.CELL).size == 0:
        raise ValueError("exclusion model needs a holed mesh with CELL-tagged edges")
    stepper = _ImplicitStepper(mesh, diffusivity, grid.dt, rtol=rtol)
    if isinstance(flux, FluxSpec) or not callable(flux):
        static = assemble_neumann_load(mesh, flux, EdgeTag.CELL)

        def load_at(_t: float) -> np.ndarray:
            return static
    else:
        def load_at(t: float) -> np.ndarray:
            return assemble_neumann_load(
                mesh, lambda x, y: flux(x, y, t), EdgeTag.CELL)
    solution = _run(stepper, grid, _initial_values(mesh, u0), load_at,
                    store_history, on_step)
    solution.diffusivity = diffusivity
    return solution


def solve_point_source_model(mesh_or_spec, config: SourceConfig, intensities,
                             diffusivity: float, grid: TimeGrid, u0=None, *,
                             store_history: bool = True, on_step=None,
                             rtol: float = 1e-10) -> FieldSolution:
    """Diffusion on the full domain driven by the configured Dirac points.

    ``intensities`` maps a time to per-point values (an IntensitySeries
    qualifies); backward Euler is implicit, so they are evaluated at each
    step's end time.
    """
    mesh = _as_mesh(mesh_or_spec)
    if mesh.domain is not None and mesh.domain.with_hole:
        raise ValueError("point-source model runs on the full (unholed) domain")
    locs = config.locations()
    tri, bary = locate_points(mesh, locs)
    if np.any(tri < 0):
        bad = locs[int(np.nonzero(tri < 0)[0][0])]
        raise ValueError(f"source point {tuple(bad)} lies outside the mesh")
    scatter_idx = mesh.triangles[tri]
    values_at = intensities.values if isinstance(intensities, IntensitySeries) \
        else intensities
    stepper = _ImplicitStepper(mesh, diffusivity, grid.dt, rtol=rtol)

    def load_at(t: float) -> np.ndarray:
        load = np.zeros(mesh.num_vertices)
        phi = np.asarray(values_at(t), dtype=float)
        np.add.at(load, scatter_idx.ravel(), (phi[:, None] * bary).ravel())
        return load

    solution = _run(stepper, grid, _initial_values(mesh, u0), load_at,
                    store_history, on_step)
    solution.diffusivity = diffusivity
    return solution


def discrete_mass(M: sp.csr_matrix, u: np.ndarray) -> float:
    """Total discrete mass 1^T M u."""
    return float((M @ u).sum())
