"""Comparison metrics between the exclusion and point-source solutions.

The point-source solution is interpolated onto the holed mesh (the common
domain where both solutions exist), where L2 and H1 differences are evaluated
with exact P1 quadrature. The boundary flux of the point-source model is
post-processed from per-triangle gradients at circle sample points and
compared with the prescribed flux in the L2 norm over the circle, pointwise
in time and accumulated over time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

from .fem import assemble_mass, assemble_stiffness
from .mesh import TriMesh, locate_points
from .sources import FluxSpec, flux_at


class MetricsError(RuntimeError):
    pass


@dataclass
class CrossMeshMap:
    """Barycentric interpolation of full-mesh fields onto holed-mesh vertices."""

    holed_mesh: TriMesh
    full_mesh: TriMesh
    tri: np.ndarray      # containing full-mesh triangle per holed vertex
    weights: np.ndarray  # (nv_holed, 3) barycentric weights in [0, 1]

    @cached_property
    def interpolator(self) -> sp.csr_matrix:
        nh = self.holed_mesh.num_vertices
        cols = self.full_mesh.triangles[self.tri]
        rows = np.repeat(np.arange(nh), 3)
        P = sp.coo_matrix((self.weights.ravel(), (rows, cols.ravel())),
                          shape=(nh, self.full_mesh.num_vertices))
        return P.tocsr()

    @cached_property
    def _norm_matrices(self) -> tuple[sp.csr_matrix, sp.csr_matrix]:
        return (assemble_mass(self.holed_mesh),
                assemble_stiffness(self.holed_mesh, 1.0))

    def interpolate(self, u_full: np.ndarray) -> np.ndarray:
        return self.interpolator @ u_full


def build_cross_mesh_map(holed_mesh: TriMesh, full_mesh: TriMesh) -> CrossMeshMap:
    """Locate every holed-mesh vertex in the full mesh.

    Vertices on the circle lie strictly inside the full domain, so every
    vertex must be found; an unmappable vertex raises with its location.
    """
    tri, bary = locate_points(full_mesh, holed_mesh.vertices)
    if np.any(tri < 0):
        bad = holed_mesh.vertices[int(np.nonzero(tri < 0)[0][0])]
        raise MetricsError(f"holed-mesh vertex {tuple(bad)} not found in the full mesh")
    bary = np.clip(bary, 0.0, 1.0)
    bary /= bary.sum(axis=1, keepdims=True)
    return CrossMeshMap(holed_mesh, full_mesh, tri, bary)


class DiffNorms(NamedTuple):
    l2: float
    h1: float       # full norm: sqrt(l2^2 + seminorm^2)
    h1_semi: float


def l2_h1_difference(u_excl: np.ndarray, u_point: np.ndarray,
                     cmap: CrossMeshMap) -> DiffNorms:
    """L2 and H1 norms of the solution difference on the holed domain.

    ``u_excl`` lives on the holed mesh, ``u_point`` on the full mesh and is
    interpolated through the map first. Both integrals use exact quadrature
    for P1 fields.
    """
    if len(u_excl) != cmap.holed_mesh.num_vertices:
        raise ValueError("u_excl length does not match the holed mesh")
    if len(u_point) != cmap.full_mesh.num_vertices:
        raise ValueError("u_point length does not match the full mesh")
    e = u_excl - cmap.interpolate(u_point)
    M, K = cmap._norm_matrices
    l2sq = float(e @ (M @ e))
    semisq = float(e @ (K @ e))
    l2 = math.sqrt(max(l2sq, 0.0))
    semi = math.sqrt(max(semisq, 0.0))
    return DiffNorms(l2, math.hypot(l2, semi), semi)


class BoundaryFluxProbe:
    """Samples D*grad(u).n of a full-mesh field on the cell circle.

    ``normal="cell_inward"`` (default) points from the boundary toward the
    cell centre; this is the outward normal of the surrounding medium and the
    direction in which the prescribed flux is positive for outflow from the
    cell. ``"cell_outward"`` gives the opposite sign.

    ``mode="direct"`` samples the piecewise-constant gradient of the
    containing triangle; ``"patch"`` averages gradients over the triangles
    whose centroid lies within ``patch_radius`` (default: twice the mesh's
    characteristic size) of the sample, weighted by area times a hat kernel,
    which damps the O(h) jumps of raw P1 gradients by an order of magnitude.
    """

    def __init__(self, mesh: TriMesh, thetas: np.ndarray, points: np.ndarray,
                 diffusivity: float, normal: str = "cell_inward",
                 mode: str = "direct", patch_radius: float | None = None):
        if normal not in ("cell_inward", "cell_outward"):
            raise ValueError(f"unknown normal direction {normal!r}")
        if mode not in ("direct", "patch"):
            raise ValueError(f"unknown recovery mode {mode!r}")
        points = np.asarray(points, dtype=float)
        self.thetas = np.asarray(thetas, dtype=float)
        sign = -1.0 if normal == "cell_inward" else 1.0
        n_vec = sign * np.column_stack([np.cos(self.thetas), np.sin(self.thetas)])

        if mode == "direct":
            tri, _ = locate_points(mesh, points)
            if np.any(tri < 0):
                bad = points[int(np.nonzero(tri < 0)[0][0])]
                raise MetricsError(f"circle sample {tuple(bad)} not found in the mesh")
            sample_idx = np.arange(len(tri))
            tri_list = tri
            weights = np.ones(len(tri))
        else:
            from scipy.spatial import cKDTree
            radius = patch_radius if patch_radius is not None \
                else 2.0 * mesh.characteristic_size
            centroids = mesh.vertices[mesh.triangles].mean(axis=1)
            nearby = cKDTree(centroids).query_ball_point(points, radius)
            fallback, _ = locate_points(mesh, points)
            sample_l, tri_l, w_l = [], [], []
            for s, group in enumerate(nearby):
                if not group:
                    if fallback[s] < 0:
                        raise MetricsError(
                            f"circle sample {tuple(points[s])} has no triangles "
                            f"within {radius!r}")
                    group = [int(fallback[s])]
                d = np.hypot(*(centroids[group] - points[s]).T)
                w = mesh.signed_areas[group] * np.maximum(1.0 - d / radius, 0.0)
                if w.sum() <= 0.0:
                    w = mesh.signed_areas[group]
                sample_l.extend([s] * len(group))
                tri_l.extend(group)
                w_l.extend(w / w.sum())
            sample_idx = np.asarray(sample_l)
            tri_list = np.asarray(tri_l)
            weights = np.asarray(w_l)

        p = mesh.vertices[mesh.triangles[tri_list]]
        b = p[:, [1, 2, 0], 1] - p[:, [2, 0, 1], 1]
        c = p[:, [2, 0, 1], 0] - p[:, [1, 2, 0], 0]
        grads = np.stack([b, c], axis=2) \
            / (2.0 * mesh.signed_areas[tri_list])[:, None, None]
        data = diffusivity * weights[:, None] \
            * np.einsum("sid,sd->si", grads, n_vec[sample_idx])
        rows = np.repeat(sample_idx, 3)
        G = sp.coo_matrix((data.ravel(), (rows, mesh.triangles[tri_list].ravel())),
                          shape=(len(points), mesh.num_vertices))
        self._G = G.tocsr()

    def evaluate(self, u: np.ndarray) -> np.ndarray:
        return self._G @ u


def recover_boundary_flux(mesh: TriMesh, u: np.ndarray, thetas: np.ndarray,
                          points: np.ndarray, diffusivity: float,
                          normal: str = "cell_inward",
                          mode: str = "direct") -> np.ndarray:
    """One-off flux recovery at circle samples; see BoundaryFluxProbe."""
    return BoundaryFluxProbe(mesh, thetas, points, diffusivity, normal,
                             mode=mode).evaluate(u)


def flux_deviation(recovered: np.ndarray, spec: FluxSpec,
                   thetas: np.ndarray) -> float:
    """L2 norm over the circle of (prescribed - recovered) flux.

    Trapezoidal quadrature on the periodic uniform angle grid, which reduces
    to equal weights R*dtheta.
    """
    thetas = np.asarray(thetas, dtype=float)
    if len(thetas) < 64:
        raise ValueError(f"need at least 64 circle samples, got {len(thetas)}")
    diff = flux_at(spec, thetas) - np.asarray(recovered, dtype=float)
    dtheta = 2.0 * math.pi / len(thetas)
    return math.sqrt(float(np.sum(diff * diff)) * spec.cell_radius * dtheta)


def cumulative_flux_deviation(values, times) -> np.ndarray:
    """Running time integral of a deviation series by the trapezoid rule.

    When the series starts after t = 0 (the usual case: one value per time
    step), the leading panel [0, times[0]] is integrated with the first value
    extended backwards as a constant.
    """
    v = np.asarray(values, dtype=float)
    t = np.asarray(times, dtype=float)
    if v.shape != t.shape or v.ndim != 1:
        raise ValueError("values and times must be 1-d arrays of equal length")
    if np.any(np.diff(t) <= 0.0) or (t.size and t[0] < 0.0):
        raise ValueError("times must be non-negative and strictly increasing")
    out = np.empty_like(v)
    if v.size == 0:
        return out
    out[0] = v[0] * t[0]
    panels = 0.5 * (v[1:] + v[:-1]) * np.diff(t)
    out[1:] = out[0] + np.cumsum(panels)
    return out


@dataclass
class MetricSeries:
    """Per-step comparison quantities of one model pair."""

    times: np.ndarray
    l2: np.ndarray
    h1: np.ndarray
    h1_semi: np.ndarray
    flux_dev: np.ndarray
    c_star: np.ndarray

    def validate(self) -> None:
        n = len(self.times)
        for name in ("l2", "h1", "h1_semi", "flux_dev", "c_star"):
            arr = getattr(self, name)
            if len(arr) != n:
                raise MetricsError(f"{name} has {len(arr)} entries for {n} times")
            if np.any(arr < 0.0):
                raise MetricsError(f"{name} has negative entries")
        if np.any(np.diff(self.c_star) < -1e-12 * max(self.c_star.max(), 1.0)):
            raise MetricsError("cumulative deviation is not non-decreasing")
        if self.times.size and self.times[0] == 0.0 and self.c_star[0] != 0.0:
            raise MetricsError("cumulative deviation must start at zero")

    def to_csv(self, path) -> None:
        self.validate()
        with open(path, "w") as fh:
            fh.write("t,l2,h1,h1_semi,flux_dev,c_star\n")
            for row in zip(self.times, self.l2, self.h1, self.h1_semi,
                           self.flux_dev, self.c_star):
                fh.write(",".join(repr(float(v)) for v in row) + "\n")


def load_metric_series(path) -> MetricSeries:
    data = np.genfromtxt(path, delimiter=",", names=True)
    data = np.atleast_1d(data)
    return MetricSeries(times=data["t"].copy(), l2=data["l2"].copy(),
                        h1=data["h1"].copy(), h1_semi=data["h1_semi"].copy(),
                        flux_dev=data["flux_dev"].copy(),
                        c_star=data["c_star"].copy())
