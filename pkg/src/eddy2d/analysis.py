"""Norms, averages, branch constants, current recovery and the closed-form
limit solutions.

Quadrature policy: region averages and integrals of P1 quantities use the
exact per-triangle formulas; weighted and absolute-value integrands use the
3-point edge-midpoint rule, which is degree-2 exact (so |P1|^2 is integrated
exactly and the smooth weight rho^2 is resolved to quadrature order 2).
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .fem import Field, region_load_vector
from .mesh import Mesh, Region

DEFAULT_EXCLUSION_FACTOR = 5.0  # exclusion ball radius = factor * h near a Dirac point


def weight_rho(x):
    """rho(x) = 1 / ((1 + |x|) log(2 + |x|)); positive, radially decreasing."""
    x = np.asarray(x, dtype=float)
    r = np.hypot(x[..., 0], x[..., 1])
    out = 1.0 / ((1.0 + r) * np.log(2.0 + r))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class Ball:
    center: tuple[float, float]
    radius: float


class NormKind(Enum):
    WEIGHTED_L2_RHO = "weighted_l2_rho"
    LP_GRADIENT = "lp_gradient"
    L2_REGION = "l2_region"
    L1_REGION = "l1_region"


@dataclass(frozen=True)
class NormSpec:
    """What to measure and where.

    subdomain: a Region tag, a Ball (triangles whose centroid lies inside),
    or "all".  exclude lists balls whose triangles (by centroid) are dropped,
    used around Dirac points.  gauge_mod subtracts the subdomain mean before
    measuring (for value norms; gradients are shift-invariant anyway).
    """

    kind: NormKind
    p: float = 2.0
    subdomain: object = "all"
    gauge_mod: bool = False
    exclude: tuple = ()

    def __post_init__(self):
        if self.kind == NormKind.LP_GRADIENT and not 1.0 <= self.p <= 2.0:
            raise ValueError(f"LP_GRADIENT needs p in [1, 2], got {self.p}")


def select_triangles(mesh, subdomain, exclude=()):
    """Boolean triangle mask for a subdomain choice; errors when empty."""
    if isinstance(subdomain, str):
        if subdomain != "all":
            raise ValueError(f"unknown subdomain {subdomain!r}")
        mask = np.ones(mesh.n_triangles, dtype=bool)
    elif isinstance(subdomain, Ball):
        d = mesh.centroids - np.asarray(subdomain.center)
        mask = np.hypot(d[:, 0], d[:, 1]) <= subdomain.radius
    else:
        mask = mesh.region == int(subdomain)
    for ball in exclude:
        d = mesh.centroids - np.asarray(ball.center)
        mask &= np.hypot(d[:, 0], d[:, 1]) > ball.radius
    if not mask.any():
        raise ValueError(f"subdomain {subdomain!r} selects no triangles")
    return mask


def _field_values(f):
    return f.values if isinstance(f, Field) else np.asarray(f)


def p1_midpoint_values(mesh, vals):
    """(M, 3) P1 values at the edge midpoints (opposite-vertex order)."""
    tri_vals = vals[mesh.triangles]
    s = tri_vals.sum(axis=1, keepdims=True)
    return (s - tri_vals) / 2.0


def triangle_gradients(mesh, vals):
    """(M, 2) constant gradient of the P1 interpolant per triangle."""
    p = mesh.nodes[mesh.triangles]
    v = vals[mesh.triangles]
    two_a = 2.0 * mesh.areas
    gx = (v[:, 0] * (p[:, 1, 1] - p[:, 2, 1])
          + v[:, 1] * (p[:, 2, 1] - p[:, 0, 1])
          + v[:, 2] * (p[:, 0, 1] - p[:, 1, 1])) / two_a
    gy = (v[:, 0] * (p[:, 2, 0] - p[:, 1, 0])
          + v[:, 1] * (p[:, 0, 0] - p[:, 2, 0])
          + v[:, 2] * (p[:, 1, 0] - p[:, 0, 0])) / two_a
    return np.stack([gx, gy], axis=-1)


def _subdomain_mean(mesh, vals, mask):
    """P1-exact mean of a nodal field over the masked triangles."""
    tri_vals = vals[mesh.triangles[mask]]
    a = mesh.areas[mask]
    total = (tri_vals.mean(axis=1) * a).sum()
    return total / a.sum()


def norm(mesh, f, spec):
    """Norm of a nodal field per NormSpec."""
    vals = _field_values(f)
    mask = select_triangles(mesh, spec.subdomain, spec.exclude)
    if spec.kind == NormKind.LP_GRADIENT:
        g = triangle_gradients(mesh, vals)[mask]
        mag = np.hypot(np.abs(g[:, 0]), np.abs(g[:, 1]))
        return float((mesh.areas[mask] @ mag ** spec.p) ** (1.0 / spec.p))
    if spec.gauge_mod:
        vals = vals - _subdomain_mean(mesh, vals, mask)
    mids = p1_midpoint_values(mesh, vals)[mask]
    w = (mesh.areas[mask] / 3.0)[:, None]
    if spec.kind == NormKind.WEIGHTED_L2_RHO:
        rho = weight_rho(mesh.edge_midpoints[mask])
        return float(np.sqrt(np.sum(w * (rho * np.abs(mids)) ** 2)))
    if spec.kind == NormKind.L2_REGION:
        return float(np.sqrt(np.sum(w * np.abs(mids) ** 2)))
    if spec.kind == NormKind.L1_REGION:
        return float(np.sum(w * np.abs(mids)))
    raise ValueError(f"unknown norm kind {spec.kind}")


def region_average(mesh, f, region):
    """P1-exact average over a region."""
    m = region_load_vector(mesh, region)
    a = m.sum()
    if a == 0:
        raise ValueError(f"region {Region(int(region)).name} is empty")
    return complex(m @ _field_values(f)) / a


@dataclass(frozen=True)
class BranchConstants:
    C0: complex
    C1: complex
    C2: complex


def branch_constants(params, averages, measures):
    """Constants of the per-conductor current law J = sigma (C_k - i omega u).

    averages = (mean over Omega_0, Omega_1, Omega_2) of the solved potential
    (0 for an absent Omega_0); measures = (|Omega_1|, |Omega_2|).  C0 uses
    the zero-net-current form i omega * mean_0.
    """
    u0, u1, u2 = averages
    a1, a2 = measures
    if a1 <= 0 or a2 <= 0:
        raise ValueError(f"inductor measures must be positive, got {measures}")
    iw = 1j * params.omega
    return BranchConstants(
        C0=iw * u0,
        C1=iw * u1 + params.current / (params.sigma * a1),
        C2=iw * u2 - params.current / (params.sigma * a2),
    )


def current_density(mesh, u, params, constants, rtol=1e-6):
    """(M, 3) nodal current density per triangle: sigma (C_k - i omega u) on
    conductor regions, zero elsewhere.

    Verifies that the constants are consistent with u's own averages before
    evaluating; a stale pairing would silently break current conservation.
    """
    vals = _field_values(u)
    expected = branch_constants(
        params,
        (region_average(mesh, u, Region.OMEGA0)
         if (mesh.region == int(Region.OMEGA0)).any() else 0j,
         region_average(mesh, u, Region.OMEGA1),
         region_average(mesh, u, Region.OMEGA2)),
        (region_load_vector(mesh, Region.OMEGA1).sum(),
         region_load_vector(mesh, Region.OMEGA2).sum()))
    for got, want in ((constants.C0, expected.C0), (constants.C1, expected.C1),
                      (constants.C2, expected.C2)):
        if abs(got - want) > rtol * max(1.0, abs(want)):
            raise ValueError(f"branch constant {got} does not match the field's "
                             f"own averages (expected {want})")
    J = np.zeros((mesh.n_triangles, 3), dtype=np.complex128)
    iw = 1j * params.omega
    for reg, c in ((Region.OMEGA0, constants.C0), (Region.OMEGA1, constants.C1),
                   (Region.OMEGA2, constants.C2)):
        sel = mesh.region == int(reg)
        if sel.any():
            J[sel] = params.sigma * (c - iw * vals[mesh.triangles[sel]])
    return J


def total_current(mesh, J, region):
    """Exact integral of a per-triangle P1 quantity over a region."""
    sel = mesh.region == int(region)
    if not sel.any():
        raise ValueError(f"region {Region(int(region)).name} is empty")
    return complex((mesh.areas[sel] / 3.0) @ J[sel].sum(axis=1))


def recover_magnetic_field(mesh, u, mu):
    """Piecewise-constant H = (1/mu) (du/dx2, -du/dx1) per triangle."""
    g = triangle_gradients(mesh, _field_values(u))
    return np.stack([g[:, 1], -g[:, 0]], axis=-1) / mu


def analytic_limit_solution(z1, z2, mu_I, x):
    """Free-space limit potential (mu I / 2 pi) log(|x - z2| / |x - z1|)."""
    x = np.asarray(x, dtype=float)
    d1 = np.hypot(x[..., 0] - z1[0], x[..., 1] - z1[1])
    d2 = np.hypot(x[..., 0] - z2[0], x[..., 1] - z2[1])
    if np.any(d1 == 0) or np.any(d2 == 0):
        raise ValueError("evaluation at a source point z1 or z2")
    out = (mu_I / (2.0 * np.pi)) * np.log(d2 / d1)
    return float(out) if out.ndim == 0 else out


def truncated_limit_solution(z1, z2, mu_I, R, x):
    """Exact limit potential on the Neumann-truncated disk of radius R.

    Adds to the free-space potential the image sources at R^2 z_k / |z_k|^2:
    each source-image pair has constant normal derivative 1/R on the circle,
    so the dipole difference has exactly zero Neumann data.  A source at the
    origin needs no image (its image term is an additive constant).
    """
    x = np.asarray(x, dtype=float)
    out = analytic_limit_solution(z1, z2, mu_I, x)
    coef = mu_I / (2.0 * np.pi)
    for z, sign in ((z1, -1.0), (z2, 1.0)):
        r2 = z[0] ** 2 + z[1] ** 2
        if r2 == 0:
            continue
        zs = (R * R / r2 * z[0], R * R / r2 * z[1])
        d = np.hypot(x[..., 0] - zs[0], x[..., 1] - zs[1])
        out = out + sign * coef * np.log(d)
    return float(out) if np.ndim(out) == 0 else out


def field_error(mesh, f, g, spec):
    """Norm of f - g per NormSpec.

    g may be a Field on the same mesh (nodal difference) or a callable
    sampled at the quadrature points (value norms only).  With gauge_mod the
    difference of subdomain means is subtracted first.  A non-finite sample
    of g raises, reporting the quadrature point; exclude singular
    neighborhoods via the spec.
    """
    f_vals = _field_values(f)
    if isinstance(g, (Field, np.ndarray)):
        g_vals = _field_values(g)
        if g_vals.shape != f_vals.shape:
            raise ValueError(f"nodal g has shape {g_vals.shape}, "
                             f"expected {f_vals.shape}")
        return norm(mesh, f_vals - g_vals, spec)
    if spec.kind == NormKind.LP_GRADIENT:
        raise ValueError("gradient error norms need g as a nodal Field")
    mask = select_triangles(mesh, spec.subdomain, spec.exclude)
    pts = mesh.edge_midpoints[mask]
    g_mid = np.asarray(g(pts.reshape(-1, 2)), dtype=np.complex128).reshape(pts.shape[:2])
    bad = ~np.isfinite(g_mid)
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise ValueError(f"g is not finite at quadrature point {tuple(pts[i, j])}")
    f_mid = p1_midpoint_values(mesh, f_vals)[mask]
    diff = f_mid - g_mid
    w = (mesh.areas[mask] / 3.0)[:, None]
    if spec.gauge_mod:
        area = mesh.areas[mask].sum()
        diff = diff - np.sum(w * diff) / area
    if spec.kind == NormKind.WEIGHTED_L2_RHO:
        rho = weight_rho(mesh.edge_midpoints[mask])
        return float(np.sqrt(np.sum(w * (rho * np.abs(diff)) ** 2)))
    if spec.kind == NormKind.L2_REGION:
        return float(np.sqrt(np.sum(w * np.abs(diff) ** 2)))
    if spec.kind == NormKind.L1_REGION:
        return float(np.sum(w * np.abs(diff)))
    raise ValueError(f"unknown norm kind {spec.kind}")