"""Prescribed cell-boundary flux and the Dirac point-source surrogate.

The prescribed flux density over the circular cell boundary is a single
sinusoidal mode, phi(theta) = phi0 * (1 + rho*sin(n*theta)). A cluster of
point sources (one at the centre, n more toward the flux maxima at distance
r) reproduces it approximately: the centre source carries the homogeneous
part and the off-centre sources the angular variation. Intensities are
chosen so the emergent flux of the cluster matches phi exactly at the 2n
angles where phi attains its extremes, either through the closed-form n=1
expressions or by solving the matching system at the extreme angles.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable

import numpy as np

from .mesh import Point2, as_point

TWO_PI = 2.0 * math.pi
# exp(-x) underflows to a denormal around x ~ 745; beyond that a quadrature
# panel contributes nothing
_EXP_CUTOFF = 745.0


class IntensitySystemError(RuntimeError):
    """The extreme-point matching system could not be solved reliably."""


class QuadratureError(RuntimeError):
    """The convolution quadrature failed to converge under refinement."""


class SourceKind(Enum):
    CENTER = "center"
    OFF_CENTER = "off_center"


class IntensityRule(Enum):
    SINGLE_DIRAC_CONSTANT = "single_dirac_constant"
    CLOSED_FORM_N1 = "closed_form_n1"
    GENERAL_EXTREME_MATCH = "general_extreme_match"


@dataclass(frozen=True)
class FluxSpec:
    """Sinusoidal flux density phi0*(1 + rho*sin(mode*theta)) on the cell circle."""

    phi0: float
    amplitude: float
    mode: int
    cell_center: Point2
    cell_radius: float

    def __post_init__(self):
        object.__setattr__(self, "cell_center", as_point(self.cell_center))
        if not self.phi0 > 0.0:
            raise ValueError(f"phi0 must be positive, got {self.phi0}")
        if not 0.0 <= self.amplitude <= self.phi0:
            raise ValueError(
                f"amplitude must satisfy 0 <= A <= phi0 (rho <= 1), got A={self.amplitude}")
        if self.mode < 1 or int(self.mode) != self.mode:
            raise ValueError(f"mode must be a positive integer, got {self.mode}")
        if not self.cell_radius > 0.0:
            raise ValueError(f"cell_radius must be positive, got {self.cell_radius}")

    @property
    def rho(self) -> float:
        return self.amplitude / self.phi0

    @classmethod
    def from_rho(cls, phi0: float, rho: float, mode: int, cell_center, cell_radius: float):
        return cls(phi0, rho * phi0, mode, as_point(cell_center), cell_radius)

    def value_at(self, x, y):
        """Flux density at a boundary point given by coordinates.

        Evaluates sin(mode*theta) from the direction cosines through the
        Chebyshev recurrence, so mirror-image points get bit-equal values.
        """
        dx = np.asarray(x, dtype=float) - self.cell_center.x
        dy = np.asarray(y, dtype=float) - self.cell_center.y
        rr = np.hypot(dx, dy)
        c, s = dx / rr, dy / rr
        s_prev, s_cur = np.zeros_like(s), s
        for _ in range(self.mode - 1):
            s_prev, s_cur = s_cur, 2.0 * c * s_cur - s_prev
        return self.phi0 + self.amplitude * s_cur


def flux_at(spec: FluxSpec, theta):
    """Flux density at angle(s) theta on the cell circle."""
    return spec.phi0 + spec.amplitude * np.sin(spec.mode * np.asarray(theta, dtype=float))


def extreme_angles(n: int) -> tuple[np.ndarray, np.ndarray]:
    """The 2n angles theta_k = (k - 1/2)*pi/n where the flux variation peaks.

    Returns (angles, is_max); odd k (1-based) are maxima, even k minima.
    """
    if n < 1:
        raise ValueError(f"mode must be >= 1, got {n}")
    k = np.arange(1, 2 * n + 1)
    return (k - 0.5) * math.pi / n, k % 2 == 1


@dataclass(frozen=True)
class SourcePoint:
    location: Point2
    kind: SourceKind


@dataclass(frozen=True)
class SourceConfig:
    """Dirac point layout: the centre point first, then any off-centre points.

    ``r`` is the common centre distance of the off-centre points and
    ``epsilon`` the truncation time applied to the (singular at t=0)
    intensity functions before simulation.
    """

    points: tuple[SourcePoint, ...]
    intensity_rule: IntensityRule
    r: float
    epsilon: float

    def __post_init__(self):
        object.__setattr__(self, "points", tuple(self.points))
        kinds = [p.kind for p in self.points]
        if kinds.count(SourceKind.CENTER) != 1 or kinds[0] is not SourceKind.CENTER:
            raise ValueError("config needs exactly one centre point, listed first")
        if self.epsilon < 0.0:
            raise ValueError(f"epsilon must be non-negative, got {self.epsilon}")
        c = self.points[0].location
        for p in self.points[1:]:
            d = math.hypot(p.location.x - c.x, p.location.y - c.y)
            if abs(d - self.r) > 1e-12 * max(self.r, 1.0):
                raise ValueError(
                    f"off-centre point {tuple(p.location)} is at distance {d}, expected r={self.r}")

    @property
    def num_off_center(self) -> int:
        return len(self.points) - 1

    def locations(self) -> np.ndarray:
        return np.array([[p.location.x, p.location.y] for p in self.points])


def _direction(theta: float) -> tuple[float, float]:
    # exact axis directions keep on-axis sources bit-exactly on the axis
    frac = (theta / TWO_PI) % 1.0
    if frac == 0.25:
        return 0.0, 1.0
    if frac == 0.75:
        return 0.0, -1.0
    return math.cos(theta), math.sin(theta)


def place_sources(spec: FluxSpec, r: float, rule: IntensityRule = IntensityRule.CLOSED_FORM_N1,
                  epsilon: float = 0.0) -> SourceConfig:
    """Centre point plus ``mode`` off-centre points toward the flux maxima.

    All off-centre points sit at distance r from the centre on the rays to the
    maxima of the flux variation, and by symmetry share one intensity.
    """
    R = spec.cell_radius
    if not 0.0 < r < R:
        raise ValueError(
            f"off-centre distance r={r} must lie in (0, R={R}): at r=0 the matching "
            "system has no solution, and at r=R the off-centre intensity vanishes, "
            "so the extra point is redundant")
    if rule is IntensityRule.CLOSED_FORM_N1 and spec.mode != 1:
        raise ValueError("the closed-form intensities apply to mode n=1 only")
    if rule is IntensityRule.SINGLE_DIRAC_CONSTANT:
        raise ValueError("the single-Dirac baseline has no off-centre points; "
                         "use single_dirac_config")
    c = spec.cell_center
    angles, is_max = extreme_angles(spec.mode)
    pts = [SourcePoint(c, SourceKind.CENTER)]
    for th in angles[is_max]:
        ux, uy = _direction(float(th))
        pts.append(SourcePoint(Point2(c.x + r * ux, c.y + r * uy), SourceKind.OFF_CENTER))
    return SourceConfig(tuple(pts), rule, r, epsilon)


def single_dirac_config(spec: FluxSpec, epsilon: float = 0.0) -> SourceConfig:
    """One centred source carrying the homogeneous-flux intensity 2*pi*R*phi0."""
    return SourceConfig((SourcePoint(spec.cell_center, SourceKind.CENTER),),
                        IntensityRule.SINGLE_DIRAC_CONSTANT, 0.0, epsilon)


def closed_form_intensities_n1(spec: FluxSpec, r: float, t, diffusivity: float):
    """Closed-form intensities (off-centre, centre) for the n=1 configuration.

    Broadcasts over ``t``. The denominators are positive for 0 < r < R, so the
    off-centre intensity is non-negative for every t > 0; the centre intensity
    changes sign with rho and is negative throughout for rho = 1.
    """
    if spec.mode != 1:
        raise ValueError("closed-form intensities require mode n=1")
    R, A, phi0 = spec.cell_radius, spec.amplitude, spec.phi0
    if not 0.0 < r < R:
        raise ValueError(f"r={r} must lie in (0, R={R})")
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0.0):
        raise ValueError("t must be positive: the intensity functions are "
                         "singular (non-integrable) at t = 0")
    q = 4.0 * diffusivity * t
    # toward t = 0 the values blow up (they are not integrable there); the
    # overflow to inf is the honest limit and callers truncate before use
    with np.errstate(over="ignore", under="ignore"):
        denom_d = (R + r) * np.exp(-((R - r) ** 2) / q) \
            - (R - r) * np.exp(-((R + r) ** 2) / q)
        phi_d = 4.0 * math.pi * A * (R + r) * (R - r) / denom_d
        denom_c = (R + r) - (R - r) * np.exp(-R * r / (diffusivity * t))
        phi_c = TWO_PI * R * np.exp(R * R / q) \
            * (phi0 + A - 2.0 * A * (R + r) / denom_c)
    if np.isscalar(t) or t.ndim == 0:
        return float(phi_d), float(phi_c)
    return phi_d, phi_c


def _matching_system(spec: FluxSpec, config: SourceConfig, t: float,
                     diffusivity: float) -> tuple[np.ndarray, np.ndarray]:
    """Kernel matrix of the emergent flux at the 2n extreme angles and targets.

    Rows are scaled by 2*pi*R, which keeps the conditioning mild at large t
    without changing the solution.
    """
    R = spec.cell_radius
    c = spec.cell_center.as_array()
    angles, is_max = extreme_angles(spec.mode)
    xk = c + R * np.column_stack([np.cos(angles), np.sin(angles)])
    pts = config.locations()
    dx = xk[:, None, :] - pts[None, :, :]
    d2 = np.einsum("kij,kij->ki", dx, dx)
    radial = xk - c
    dot = np.einsum("kij,kj->ki", dx, radial)
    kernel = (dot / d2) * np.exp(-d2 / (4.0 * diffusivity * t))
    target = TWO_PI * R * np.where(is_max, spec.phi0 + spec.amplitude,
                                   spec.phi0 - spec.amplitude)
    return kernel, target


def general_intensities(spec: FluxSpec, config: SourceConfig, t: float,
                        diffusivity: float) -> np.ndarray:
    """Intensities matching the emergent flux to phi at all 2n extreme angles.

    For the symmetric layouts the off-centre points share one unknown; with
    2n freely placed points the full square system is solved. Raises
    IntensitySystemError when the system is ill conditioned (cond > 1e12).
    """
    if t <= 0.0:
        raise ValueError("t must be positive")
    kernel, target = _matching_system(spec, config, t, diffusivity)
    m = len(config.points)
    if m == 2 * spec.mode and config.num_off_center != spec.mode:
        # general placement: one unknown per point
        cond = np.linalg.cond(kernel)
        if not np.isfinite(cond) or cond > 1e12:
            raise IntensitySystemError(f"matching system condition number {cond:.3e}")
        return np.linalg.solve(kernel, target)
    # symmetric reduction: unknowns (centre, shared off-centre)
    cols = [kernel[:, :1].sum(axis=1)]
    if m > 1:
        cols.append(kernel[:, 1:].sum(axis=1))
    reduced = np.column_stack(cols)
    sol, _, rank, sv = np.linalg.lstsq(reduced, target, rcond=None)
    cond = sv[0] / sv[-1] if sv[-1] > 0 else np.inf
    if rank < reduced.shape[1] or cond > 1e12:
        raise IntensitySystemError(f"matching system condition number {cond:.3e}")
    residual = np.abs(reduced @ sol - target).max()
    if residual > 1e-9 * np.abs(target).max():
        raise IntensitySystemError(
            f"shared-intensity reduction is inconsistent (residual {residual:.3e}); "
            "the off-centre points are not placed symmetrically at the flux maxima")
    out = np.empty(m)
    out[0] = sol[0]
    if m > 1:
        out[1:] = sol[1]
    return out


@dataclass(frozen=True)
class IntensitySeries:
    """Per-point intensity values as a function of time.

    ``epsilon`` floors the evaluation time, which bounds the otherwise
    non-integrable behaviour near t = 0.
    """

    fn: Callable[[float], np.ndarray]
    num_points: int
    epsilon: float = 0.0

    def values(self, t: float) -> np.ndarray:
        te = max(float(t), self.epsilon) if self.epsilon > 0.0 else float(t)
        v = np.asarray(self.fn(te), dtype=float).reshape(-1)
        if v.size != self.num_points:
            raise ValueError(f"intensity rule produced {v.size} values for "
                             f"{self.num_points} points")
        return v

    def __call__(self, t: float) -> np.ndarray:
        return self.values(t)


def truncate_intensity(series: IntensitySeries, epsilon: float) -> IntensitySeries:
    """Replace values on (0, epsilon) by the value at epsilon."""
    if epsilon <= 0.0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    return dataclasses.replace(series, epsilon=max(epsilon, series.epsilon))


def build_intensity_series(spec: FluxSpec, config: SourceConfig,
                           diffusivity: float) -> IntensitySeries:
    """Intensity evaluator for a source configuration, truncated at its epsilon."""
    m = len(config.points)
    rule = config.intensity_rule
    if rule is IntensityRule.SINGLE_DIRAC_CONSTANT:
        const = np.array([TWO_PI * spec.cell_radius * spec.phi0])

        def fn(t: float) -> np.ndarray:
            return const
    elif rule is IntensityRule.CLOSED_FORM_N1:
        def fn(t: float) -> np.ndarray:
            phi_d, phi_c = closed_form_intensities_n1(spec, config.r, t, diffusivity)
            return np.concatenate([[phi_c], np.full(m - 1, phi_d)])
    elif rule is IntensityRule.GENERAL_EXTREME_MATCH:
        def fn(t: float) -> np.ndarray:
            return general_intensities(spec, config, t, diffusivity)
    else:  # pragma: no cover
        raise ValueError(f"unknown intensity rule {rule}")
    series = IntensitySeries(fn, m)
    return truncate_intensity(series, config.epsilon) if config.epsilon > 0 else series


def emergent_flux_tilde(spec: FluxSpec, config: SourceConfig, intensities,
                        theta, t: float, diffusivity: float):
    """Boundary flux produced on the circle by constant-in-time intensities.

    ``intensities`` may be an IntensitySeries (evaluated at t) or per-point
    values. Scalar theta in, scalar out.
    """
    if t <= 0.0:
        raise ValueError("t must be positive")
    phi_i = intensities.values(t) if isinstance(intensities, IntensitySeries) \
        else np.asarray(intensities, dtype=float)
    th = np.atleast_1d(np.asarray(theta, dtype=float))
    R = spec.cell_radius
    c = spec.cell_center.as_array()
    x = c + R * np.column_stack([np.cos(th), np.sin(th)])
    pts = config.locations()
    dx = x[:, None, :] - pts[None, :, :]
    d2 = np.einsum("kij,kij->ki", dx, dx)
    dot = np.einsum("kij,kj->ki", dx, x - c)
    val = (phi_i / (TWO_PI * R) * (dot / d2)
           * np.exp(-d2 / (4.0 * diffusivity * t))).sum(axis=1)
    return float(val[0]) if np.isscalar(theta) else val


def emergent_flux_convolution(config: SourceConfig, history, theta, t: float,
                              diffusivity: float, radius: float, *,
                              rtol: float = 1e-6, initial_panels: int = 64,
                              max_refinements: int = 12):
    """Boundary flux of the point-source model by time convolution.

    Integrates the heat-kernel flux of each source against its intensity
    history over s in [0, t], on the circle of ``radius`` around the config's
    centre point. The substitution s = t*(1 - exp(-w)) grades the panels
    toward s = t where the kernel concentrates; the composite midpoint rule is
    refined by doubling until successive values agree to ``rtol`` relative.

    ``history`` maps a time to per-point intensities (an IntensitySeries
    qualifies).
    """
    if t <= 0.0:
        raise ValueError("t must be positive")
    c = config.points[0].location.as_array()
    pts = config.locations()
    th = np.atleast_1d(np.asarray(theta, dtype=float))
    x = c + radius * np.column_stack([np.cos(th), np.sin(th)])
    dx = x[:, None, :] - pts[None, :, :]
    d2 = np.einsum("kij,kij->ki", dx, dx)
    dot = np.einsum("kij,kj->ki", dx, x - c)
    xc_norm = np.hypot(*(x - c).T)

    def constant_segment(values: np.ndarray, s_hi: float) -> np.ndarray:
        # exact kernel time integral over s in [0, s_hi] for constant
        # intensities: int tau^-2 exp(-a/tau) dtau = (1/a) exp(-a/tau)
        with np.errstate(under="ignore"):
            delta = np.exp(-d2 / (4.0 * diffusivity * t))
            if s_hi < t:
                delta = delta - np.exp(-d2 / (4.0 * diffusivity * (t - s_hi)))
        kern = dot / (TWO_PI * xc_norm[:, None] * d2) * delta
        return kern @ values

    total = np.zeros(len(th))
    s_lo = 0.0
    eps = getattr(history, "epsilon", 0.0)
    if eps > 0.0:
        # the truncated head is constant in time, integrate it in closed form
        s_lo = min(eps, t)
        total += constant_segment(np.asarray(history(0.0), dtype=float), s_lo)

    def finish() -> np.ndarray | float:
        return float(total[0]) if np.isscalar(theta) else total

    if s_lo >= t:
        return finish()
    # composite midpoint under a tanh-sinh map of [s_lo, t]: panels cluster at
    # both ends, resolving the kernel concentration at s -> t and the steep
    # intensity layer just above the truncation time
    span = t - s_lo
    u_max = 4.0

    def midpoint(n_panels: int) -> np.ndarray:
        width = 2.0 * u_max / n_panels
        u = -u_max + (np.arange(n_panels) + 0.5) * width
        g = 0.5 * math.pi * np.sinh(u)
        with np.errstate(over="ignore", under="ignore"):
            sigma_neg = 0.5 * (1.0 - np.tanh(g))     # complement, no cancellation
            dsdu = 0.25 * math.pi * np.cosh(u) / np.cosh(g) ** 2
        # below the cutoff scale the kernel is zero to machine precision;
        # clamping tau there avoids 0/0 without changing the sum
        tau = np.maximum(span * sigma_neg,
                         d2.min() / (4.0 * diffusivity * _EXP_CUTOFF))
        s = t - span * sigma_neg
        hist = np.stack([np.asarray(history(float(sv)), dtype=float) for sv in s])
        out = np.zeros(len(th))
        chunk = max(1, 2 ** 20 // max(len(th), 1))
        for lo in range(0, n_panels, chunk):
            hi = min(lo + chunk, n_panels)
            tau_c = tau[lo:hi]
            with np.errstate(under="ignore"):
                kern = (np.exp(-d2[:, :, None] / (4.0 * diffusivity * tau_c))
                        / (4.0 * math.pi * diffusivity * tau_c)
                        * (dot / (2.0 * xc_norm[:, None]))[:, :, None] / tau_c)
            out += np.einsum("kit,ti,t->k", kern, hist[lo:hi],
                             span * dsdu[lo:hi]) * width
        return out

    prev = midpoint(initial_panels)
    n = initial_panels
    for _ in range(max_refinements):
        n *= 2
        cur = midpoint(n)
        scale = max(float(np.abs(total + cur).max()), 1e-300)
        if float(np.abs(cur - prev).max()) <= rtol * scale:
            total += cur
            return finish()
        prev = cur
    raise QuadratureError(
        f"convolution quadrature did not converge within {n} panels")
