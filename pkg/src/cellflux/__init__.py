"""Single-cell diffusion models: spatial exclusion vs clustered point sources.

The package compares two descriptions of a cell releasing a compound into its
surroundings with an inhomogeneous boundary flux: a finite-element model on
the domain with the cell excluded and the prescribed flux on its boundary,
and a reduced model on the full domain where a small cluster of Dirac points
(sources and sinks) stands in for the cell.
"""

__version__ = "0.1.0"

from .fem import (FieldSolution, SolverError, TimeGrid, assemble_dirac_load,
                  assemble_mass, assemble_neumann_load, assemble_stiffness,
                  discrete_mass, jacobi_cr, solve_exclusion_model,
                  solve_point_source_model, step_backward_euler)
from .mesh import (DomainSpec, EdgeTag, MeshError, Point2, TriMesh,
                   cell_boundary_samples, generate_mesh, load_mesh,
                   locate_point, locate_points, mirror_vertex_map, save_mesh)
from .metrics import (BoundaryFluxProbe, CrossMeshMap, MetricSeries,
                      MetricsError, build_cross_mesh_map,
                      cumulative_flux_deviation, flux_deviation,
                      l2_h1_difference, recover_boundary_flux)
from .runner import (Approach, ConfigError, ExperimentConfig, RunManifest,
                     preset_config, run_flux_convergence, run_model_comparison,
                     serialize_config, validate_config)
from .sources import (FluxSpec, IntensityRule, IntensitySeries,
                      IntensitySystemError, QuadratureError, SourceConfig,
                      SourceKind, SourcePoint, build_intensity_series,
                      closed_form_intensities_n1, emergent_flux_convolution,
                      emergent_flux_tilde, extreme_angles, flux_at,
                      general_intensities, place_sources, single_dirac_config,
                      truncate_intensity)

__all__ = [name for name in dir() if not name.startswith("_")]
