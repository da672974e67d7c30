import math

import numpy as np
import pytest

from cellflux import (DomainSpec, EdgeTag, Point2, SolverError, TimeGrid,
                      TriMesh, assemble_dirac_load, assemble_mass,
                      assemble_neumann_load, assemble_stiffness, discrete_mass,
                      generate_mesh, jacobi_cr, mirror_vertex_map,
                      solve_exclusion_model, solve_point_source_model,
                      step_backward_euler)
from cellflux.sources import (FluxSpec, IntensityRule, build_intensity_series,
                              place_sources, single_dirac_config)

UNIT_RIGHT = TriMesh(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]),
                     np.array([[0, 1, 2]]),
                     {(0, 1): EdgeTag.OUTER, (1, 2): EdgeTag.OUTER,
                      (0, 2): EdgeTag.OUTER}, 1.0)


def test_mass_single_element_matches_hand_integration():
    M = assemble_mass(UNIT_RIGHT).toarray()
    expected = (0.5 / 12.0) * np.array([[2, 1, 1], [1, 2, 1], [1, 1, 2]])
    assert np.abs(M - expected).max() < 1e-15


def test_mass_sum_equals_domain_area():
    mesh = generate_mesh(DomainSpec(1.0, Point2(0, 0), 0.5, False, 0.5))
    M = assemble_mass(mesh)
    assert abs(M.sum() - 4.0) < 1e-10


def test_mass_row_sums_against_accumulation_oracle(holed_small):
    M = assemble_mass(holed_small)
    row_sums = np.asarray(M.sum(axis=1)).ravel()
    # oracle: each row integrates the hat function, one third of adjacent area
    oracle = np.zeros(holed_small.num_vertices)
    for tri, area in zip(holed_small.triangles, holed_small.signed_areas):
        for v in tri:
            oracle[v] += area / 3.0
    assert np.abs(row_sums - oracle).max() < 1e-12
    assert row_sums.min() > 0.0


def test_mass_is_symmetric(holed_small):
    M = assemble_mass(holed_small)
    assert abs(M - M.T).max() <= 1e-12 * abs(M).max()


def test_lumped_mass_matches_row_sums(holed_small):
    M = assemble_mass(holed_small)
    Ml = assemble_mass(holed_small, lumped=True)
    assert np.abs(Ml.diagonal() - np.asarray(M.sum(axis=1)).ravel()).max() < 1e-12


def test_stiffness_single_element_hand_matrix():
    A = assemble_stiffness(UNIT_RIGHT, 1.0).toarray()
    expected = 0.5 * np.array([[2, -1, -1], [-1, 1, 0], [-1, 0, 1]])
    assert np.abs(A - expected).max() < 1e-15


def test_stiffness_annihilates_constants(holed_small):
    A = assemble_stiffness(holed_small, 3.7)
    c = 2.5 * np.ones(holed_small.num_vertices)
    assert np.abs(A @ c).max() < 1e-10
    assert abs(A - A.T).max() <= 1e-12 * abs(A).max()


def test_stiffness_linear_field_energy(holed_small):
    D = 2.0
    A = assemble_stiffness(holed_small, D)
    u = holed_small.vertices[:, 0]
    area = holed_small.signed_areas.sum()
    assert abs(u @ (A @ u) - D * area) < 1e-8 * D * area


def test_neumann_constant_flux_matches_polygon_perimeter(holed_small):
    phi0 = 1.3
    load = assemble_neumann_load(holed_small, lambda x, y: np.full_like(x, phi0),
                                 EdgeTag.CELL)
    m = len(holed_small.tagged_edges(EdgeTag.CELL))
    R = holed_small.domain.cell_radius
    perimeter = 2.0 * m * R * math.sin(math.pi / m)
    assert abs(load.sum() - phi0 * perimeter) < 1e-12 * phi0 * perimeter


def test_neumann_sinusoidal_total_flux(holed_small):
    # the sine component integrates to zero over the symmetric polygon
    spec = FluxSpec.from_rho(2.0, 0.5, 1, holed_small.domain.cell_center,
                             holed_small.domain.cell_radius)
    load = assemble_neumann_load(holed_small, spec, EdgeTag.CELL)
    m = len(holed_small.tagged_edges(EdgeTag.CELL))
    perimeter = 2.0 * m * spec.cell_radius * math.sin(math.pi / m)
    assert abs(load.sum() - spec.phi0 * perimeter) < 1e-12 * load.sum()


def test_neumann_quadrature_against_fine_oracle(holed_small):
    spec = FluxSpec.from_rho(1.0, 1.0, 1, holed_small.domain.cell_center,
                             holed_small.domain.cell_radius)
    load = assemble_neumann_load(holed_small, spec, EdgeTag.CELL)
    # oracle: 20-point Gauss-Legendre per edge, assembled independently
    xs, ws = np.polynomial.legendre.leggauss(20)
    xs = 0.5 * (xs + 1.0)
    ws = 0.5 * ws
    oracle = np.zeros(holed_small.num_vertices)
    for a, b in holed_small.tagged_edges(EdgeTag.CELL):
        pa, pb = holed_small.vertices[a], holed_small.vertices[b]
        ell = math.hypot(*(pb - pa))
        for xi, w in zip(xs, ws):
            g = pa + xi * (pb - pa)
            phi = spec.value_at(g[0], g[1])
            oracle[a] += ell * w * phi * (1.0 - xi)
            oracle[b] += ell * w * phi * xi
    assert np.abs(load - oracle).max() < 1e-6 * np.abs(oracle).max()


def test_neumann_zero_flux_gives_zero_vector(holed_small):
    load = assemble_neumann_load(holed_small, lambda x, y: np.zeros_like(x),
                                 EdgeTag.CELL)
    assert np.all(load == 0.0)


def test_neumann_missing_tag_errors(full_small):
    with pytest.raises(ValueError, match="cell"):
        assemble_neumann_load(full_small, lambda x, y: x, EdgeTag.CELL)


def test_dirac_at_vertex_is_single_entry(full_small):
    v = 7
    load = assemble_dirac_load(full_small, [(full_small.vertices[v], 3.25)])
    assert abs(load[v] - 3.25) < 1e-12
    load[v] = 0.0
    assert np.abs(load).max() < 1e-12


def test_dirac_at_centroid_splits_in_thirds(full_small):
    k = 11
    centroid = full_small.vertices[full_small.triangles[k]].mean(axis=0)
    load = assemble_dirac_load(full_small, [(centroid, 3.0)])
    for v in full_small.triangles[k]:
        assert abs(load[v] - 1.0) < 1e-12


def test_dirac_load_sum_is_total_intensity(full_small, rng):
    pts = rng.uniform(-1.5, 1.5, size=(10, 2))
    vals = rng.normal(size=10)
    load = assemble_dirac_load(full_small, list(zip(pts, vals)))
    assert abs(load.sum() - vals.sum()) < 1e-12 * max(1.0, np.abs(vals).sum())


def test_dirac_outside_mesh_names_the_point(full_small):
    with pytest.raises(ValueError, match=r"\(9\.0, 0\.0\)"):
        assemble_dirac_load(full_small, [((9.0, 0.0), 1.0)])


def test_timegrid_requires_integral_ratio():
    with pytest.raises(ValueError, match="not integral"):
        TimeGrid(0.16, 10.0)
    grid = TimeGrid(0.15625, 10.0)
    assert grid.n_steps == 64
    assert grid.times()[0] == 0.0 and abs(grid.times()[-1] - 10.0) < 1e-12
    with pytest.raises(ValueError):
        TimeGrid(-0.1, 1.0)
    with pytest.raises(ValueError):
        TimeGrid(0.5, 0.25)


def test_step_preserves_constants(full_small):
    M = assemble_mass(full_small)
    A = assemble_stiffness(full_small, 5.0)
    c = 4.2 * np.ones(full_small.num_vertices)
    u_next, stats = step_backward_euler(M, A, c, np.zeros_like(c), 0.1)
    assert np.abs(u_next - c).max() < 1e-9


def test_step_discrete_mass_balance(full_small, rng):
    M = assemble_mass(full_small)
    A = assemble_stiffness(full_small, 5.0)
    u = rng.uniform(0.0, 2.0, full_small.num_vertices)
    load = rng.normal(size=full_small.num_vertices)
    dt = 0.0625
    u_next, _ = step_backward_euler(M, A, u, load, dt, rtol=1e-12)
    gain = discrete_mass(M, u_next) - discrete_mass(M, u)
    assert abs(gain - dt * load.sum()) < 1e-9 * abs(discrete_mass(M, u))


def test_step_nonconvergence_carries_residual(full_small):
    M = assemble_mass(full_small)
    A = assemble_stiffness(full_small, 5.0)
    b = np.ones(full_small.num_vertices)
    with pytest.raises(SolverError) as err:
        step_backward_euler(M, A, b, b, 0.5, max_iter=2)
    assert err.value.residual > 0.0


def test_cr_monotone_residuals(full_small, rng):
    M = assemble_mass(full_small)
    A = assemble_stiffness(full_small, 5.0)
    S = (M + 0.15625 * A).tocsr()
    for _ in range(5):
        b = rng.normal(size=full_small.num_vertices)
        x, history = jacobi_cr(S, b)
        assert np.all(np.diff(history) <= 1e-14)
        assert history[-1] <= 1e-10
        assert np.linalg.norm(S @ x - b) <= 1.01e-10 * np.linalg.norm(b)


def _mms_l2_error(h: float, dt: float, diffusivity: float, T: float) -> float:
    """Backward Euler on the full square against exp(-2Dt)cos(x)cos(y).

    The manufactured solution solves the heat equation with zero volume
    source; the matching boundary flux D*grad(u).n is applied on the outer
    square at each step's end time.
    """
    L = 2.0
    mesh = generate_mesh(DomainSpec(L, Point2(0, 0), 0.5, False, h))
    M = assemble_mass(mesh)
    A = assemble_stiffness(mesh, diffusivity)
    x, y = mesh.vertices[:, 0], mesh.vertices[:, 1]

    def exact(t):
        return math.exp(-2.0 * diffusivity * t) * np.cos(x) * np.cos(y)

    def boundary_flux(px, py, t):
        decay = math.exp(-2.0 * diffusivity * t)
        gx = -decay * np.sin(px) * np.cos(py)
        gy = -decay * np.cos(px) * np.sin(py)
        nx = np.where(np.abs(px - L) < 1e-12, 1.0,
                      np.where(np.abs(px + L) < 1e-12, -1.0, 0.0))
        ny = np.where(np.abs(py - L) < 1e-12, 1.0,
                      np.where(np.abs(py + L) < 1e-12, -1.0, 0.0))
        corner = (nx != 0.0) & (ny != 0.0)
        nx = np.where(corner, nx / math.sqrt(2.0), nx)
        ny = np.where(corner, ny / math.sqrt(2.0), ny)
        return diffusivity * (gx * nx + gy * ny)

    u = exact(0.0)
    steps = round(T / dt)
    for k in range(1, steps + 1):
        t = k * dt
        load = assemble_neumann_load(
            mesh, lambda px, py: boundary_flux(px, py, t), EdgeTag.OUTER)
        u, _ = step_backward_euler(M, A, u, load, dt, rtol=1e-12)
    e = u - exact(steps * dt)
    return math.sqrt(float(e @ (M @ e)))


def test_manufactured_solution_second_order_in_h():
    errors = [_mms_l2_error(h, dt=5e-4, diffusivity=1.0, T=0.02)
              for h in (0.2, 0.1, 0.05)]
    rates = [math.log2(errors[i] / errors[i + 1]) for i in range(2)]
    assert min(rates) >= 1.8, (errors, rates)


def test_zero_data_runs_stay_identically_zero(holed_small, full_small, unit_flux):
    grid = TimeGrid(0.25, 1.0)
    spec = FluxSpec.from_rho(1.0, 0.0, 1, holed_small.domain.cell_center,
                             holed_small.domain.cell_radius)
    sol = solve_exclusion_model(holed_small, lambda x, y, t: np.zeros_like(x),
                                5.0, grid)
    assert all(np.all(v == 0.0) for v in sol.values)

    cfg = single_dirac_config(spec)
    zero_series = lambda t: np.zeros(1)
    solp = solve_point_source_model(full_small, cfg, zero_series, 5.0, grid)
    assert all(np.all(v == 0.0) for v in solp.values)


def test_zero_flux_conserves_initial_mass(full_small):
    # nonzero initial data, no sources: total discrete mass stays constant
    grid = TimeGrid(0.125, 1.0)
    spec = FluxSpec.from_rho(1.0, 0.0, 1, full_small.domain.cell_center,
                             full_small.domain.cell_radius)
    cfg = single_dirac_config(spec)
    u0 = lambda x, y: np.exp(-(x ** 2 + y ** 2))
    sol = solve_point_source_model(full_small, cfg, lambda t: np.zeros(1), 1.0,
                                   grid, u0=u0, rtol=1e-12)
    M = assemble_mass(full_small)
    masses = [discrete_mass(M, v) for v in sol.values]
    assert np.abs(np.diff(masses)).max() < 1e-9 * abs(masses[0])


def test_exclusion_total_mass_tracks_injected_flux(holed_small):
    spec = FluxSpec.from_rho(1.0, 1.0, 1, holed_small.domain.cell_center,
                             holed_small.domain.cell_radius)
    grid = TimeGrid(0.125, 2.0)
    sol = solve_exclusion_model(holed_small, spec, 5.0, grid, store_history=False)
    M = assemble_mass(holed_small)
    expected = 2.0 * math.pi * spec.cell_radius * spec.phi0 * grid.T
    assert abs(discrete_mass(M, sol.final) - expected) < 0.01 * expected


def test_point_source_mass_matches_injected_total(full_small, unit_flux):
    spec = FluxSpec.from_rho(1.0, 1.0, 1, full_small.domain.cell_center,
                             full_small.domain.cell_radius)
    cfg = single_dirac_config(spec)
    series = build_intensity_series(spec, cfg, 5.0)
    grid = TimeGrid(0.125, 2.0)
    sol = solve_point_source_model(full_small, cfg, series, 5.0, grid,
                                   store_history=False, rtol=1e-12)
    M = assemble_mass(full_small)
    expected = 2.0 * math.pi * spec.cell_radius * spec.phi0 * grid.T
    got = discrete_mass(M, sol.final)
    assert abs(got - expected) < 1e-8 * expected


def test_solutions_are_mirror_symmetric(holed_small, full_small):
    spec = FluxSpec.from_rho(1.0, 1.0, 1, holed_small.domain.cell_center,
                             holed_small.domain.cell_radius)
    grid = TimeGrid(0.25, 1.0)
    sol = solve_exclusion_model(holed_small, spec, 5.0, grid, store_history=False)
    partner = mirror_vertex_map(holed_small)
    err = np.abs(sol.final - sol.final[partner]).max() / np.abs(sol.final).max()
    assert err < 1e-6

    cfg = place_sources(spec, 0.1, IntensityRule.CLOSED_FORM_N1, epsilon=0.01)
    series = build_intensity_series(spec, cfg, 5.0)
    solp = solve_point_source_model(full_small, cfg, series, 5.0, grid,
                                    store_history=False)
    partner_f = mirror_vertex_map(full_small)
    errp = np.abs(solp.final - solp.final[partner_f]).max() / np.abs(solp.final).max()
    assert errp < 1e-6


def test_point_model_rejects_holed_mesh(holed_small, unit_flux):
    cfg = single_dirac_config(unit_flux)
    with pytest.raises(ValueError, match="full"):
        solve_point_source_model(holed_small, cfg, lambda t: np.zeros(1), 1.0,
                                 TimeGrid(0.5, 1.0))


def test_exclusion_model_requires_cell_edges(full_small, unit_flux):
    with pytest.raises(ValueError, match="holed"):
        solve_exclusion_model(full_small, unit_flux, 1.0, TimeGrid(0.5, 1.0))


def test_solver_stats_and_history_shapes(holed_small):
    spec = FluxSpec.from_rho(1.0, 0.5, 1, holed_small.domain.cell_center,
                             holed_small.domain.cell_radius)
    grid = TimeGrid(0.25, 1.0)
    sol = solve_exclusion_model(holed_small, spec, 5.0, grid)
    assert len(sol.values) == grid.n_steps + 1
    assert len(sol.stats.iterations) == grid.n_steps
    assert sol.times[0] == 0.0
    assert np.all(np.diff(sol.times) > 0.0)


def test_snapshot_csv_format(tmp_path, full_small, unit_flux):
    spec = FluxSpec.from_rho(1.0, 0.0, 1, full_small.domain.cell_center,
                             full_small.domain.cell_radius)
    cfg = single_dirac_config(spec)
    series = build_intensity_series(spec, cfg, 5.0)
    sol = solve_point_source_model(full_small, cfg, series, 5.0,
                                   TimeGrid(0.5, 1.0))
    path = tmp_path / "snap.csv"
    sol.snapshot_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "vertex_index,x,y,value"
    assert len(lines) == full_small.num_vertices + 1
    idx, x, y, val = lines[1].split(",")
    assert int(idx) == 0 and float(val) == sol.final[0]
