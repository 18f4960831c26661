"""Complex P1 finite elements for the eddy current potential.

Four problem kinds share two operators.  The epsilon-family operator is

    a(u, v) = int grad u . grad conj(v)
            + i*beta * sum_k int_{Omega_k} (u - avg_k u) conj(v)
            + i*beta * int_{Omega_0} u conj(v)

with avg_k the mean over inductor region k; the limit-family operator keeps
only the gradient and Omega_0 terms.  The nonlocal averages are encoded
sparsely with two auxiliary unknowns U_k tied to the nodal vector by the
constraint |Omega_k| U_k = m_k . u, giving a complex symmetric augmented
matrix.  Gauge constraints are appended as scaled symmetric border rows with
Lagrange multipliers.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import Mesh, Region

_FMT = "%.17g"


class SolverError(RuntimeError):
    """The linear solve failed or did not reach the requested tolerance."""


class GaugeError(ValueError):
    """Invalid gauge for the given system (missing region, singular setup)."""


@dataclass(frozen=True)
class MaterialParams:
    """Physical constants; beta = omega * mu * sigma is stored explicitly."""

    sigma: float
    mu: float
    omega: float
    current: float
    beta: float = field(init=False)

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not self.mu > 0:
            raise ValueError(f"mu must be positive, got {self.mu}")
        if self.omega < 0:
            raise ValueError(f"omega must be nonnegative, got {self.omega}")
        object.__setattr__(self, "beta", self.omega * self.mu * self.sigma)

    @property
    def mu_I(self):
        return self.mu * self.current


class GaugeMode(Enum):
    OMEGA0_MEAN = "omega0_mean"
    FAR_RING_MEAN = "far_ring_mean"
    NONE = "none"


class ProblemKind:
    """One of the four solved problems.

    The adjoint kinds reuse the forward operators and carry the source field
    psi; only the assembled load differs.
    """

    def __init__(self, family, adjoint=False, psi=None):
        if family not in ("epsilon", "limit"):
            raise ValueError(f"unknown problem family {family!r}")
        if adjoint and psi is None:
            raise ValueError("adjoint kinds require a psi field")
        self.family = family
        self.adjoint = adjoint
        self.psi = psi

    def __repr__(self):
        tag = "ADJOINT_" if self.adjoint else ""
        return f"{tag}{self.family.upper()}_PROBLEM"


EPSILON_PROBLEM = ProblemKind("epsilon")
LIMIT_PROBLEM = ProblemKind("limit")


def adjoint_epsilon(psi):
    return ProblemKind("epsilon", adjoint=True, psi=psi)


def adjoint_limit(psi):
    return ProblemKind("limit", adjoint=True, psi=psi)


@dataclass
class Field:
    """Nodal complex coefficients, with the auxiliary region averages when
    the solve carried them."""

    mesh: Mesh
    values: np.ndarray
    aux: tuple = ()  # ((k, complex value), ...) for U_k
    multipliers: tuple = ()

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.complex128)
        if self.values.shape != (self.mesh.n_nodes,):
            raise ValueError(f"field has {self.values.shape} values for "
                             f"{self.mesh.n_nodes} nodes")


@dataclass(frozen=True)
class SolveReport:
    relative_residual: float
    factorization: str
    n_unknowns: int
    far_field_constant_estimate: complex
    wall_time: float


def write_field(f, path):
    with open(path, "w") as out:
        out.write(f"field {len(f.values)}\n")
        for z in f.values:
            out.write(f"{_FMT % z.real} {_FMT % z.imag}\n")
        for k, z in f.aux:
            out.write(f"aux {k} {_FMT % z.real} {_FMT % z.imag}\n")


def read_field(mesh, path):
    with open(path) as src:
        head = src.readline().split()
        if len(head) != 2 or head[0] != "field":
            raise ValueError(f"{path}: not a field file")
        n = int(head[1])
        vals = np.empty(n, dtype=np.complex128)
        for i in range(n):
            re, im = src.readline().split()
            vals[i] = complex(float(re), float(im))
        aux = []
        for line in src:
            parts = line.split()
            if not parts:
                continue
            if parts[0] != "aux" or len(parts) != 4:
                raise ValueError(f"{path}: bad trailer line {line!r}")
            aux.append((int(parts[1]), complex(float(parts[2]), float(parts[3]))))
    return Field(mesh, vals, aux=tuple(aux))


def _triangle_geometry(mesh):
    """Per-triangle P1 shape data: areas and basis gradients (M, 3, 2)."""
    p = mesh.nodes[mesh.triangles]
    a = mesh.areas
    grads = np.empty((mesh.n_triangles, 3, 2))
    for loc, (j, k) in enumerate(((1, 2), (2, 0), (0, 1))):
        grads[:, loc, 0] = p[:, j, 1] - p[:, k, 1]
        grads[:, loc, 1] = p[:, k, 0] - p[:, j, 0]
    grads /= (2.0 * a)[:, None, None]
    return a, grads


def stiffness_matrix(mesh):
    """P1 stiffness matrix over the whole mesh, real CSR."""
    a, grads = _triangle_geometry(mesh)
    loc = np.einsum("tid,tjd->tij", grads, grads) * a[:, None, None]
    rows = np.repeat(mesh.triangles, 3, axis=1).reshape(-1)
    cols = np.tile(mesh.triangles, (1, 3)).reshape(-1)
    K = sp.coo_matrix((loc.reshape(-1), (rows, cols)),
                      shape=(mesh.n_nodes, mesh.n_nodes))
    return K.tocsr()

_MASS_LOC = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0


def region_mass_matrix(mesh, region):
    """Consistent P1 mass matrix of one region (exact for P1 integrands)."""
    sel = mesh.region == int(region)
    tris = mesh.triangles[sel]
    if len(tris) == 0:
        return sp.csr_matrix((mesh.n_nodes, mesh.n_nodes))
    loc = mesh.areas[sel][:, None, None] * _MASS_LOC[None, :, :]
    rows = np.repeat(tris, 3, axis=1).reshape(-1)
    cols = np.tile(tris, (1, 3)).reshape(-1)
    M = sp.coo_matrix((loc.reshape(-1), (rows, cols)),
                      shape=(mesh.n_nodes, mesh.n_nodes))
    return M.tocsr()


def region_load_vector(mesh, region):
    """m_k with (m_k)_i = int_{Omega_k} lambda_i dx (P1 exact)."""
    sel = mesh.region == int(region)
    m = np.zeros(mesh.n_nodes)
    np.add.at(m, mesh.triangles[sel].reshape(-1),
              np.repeat(mesh.areas[sel] / 3.0, 3))
    return m


class System:
    """Assembled operator for one problem kind on one mesh.

    The system is immutable after assembly; apply_gauge returns a new System
    sharing the component blocks.  Unknown layout of the augmented matrix:
    nodal values, then U_1, U_2 (epsilon family only), then one Lagrange
    multiplier per gauge row.
    """

    def __init__(self, mesh, params, kind, gauges=()):
        self.mesh = mesh
        self.params = params
        self.kind = kind
        self.gauges = tuple(gauges)
        self.assembled = True
        self.stiffness = stiffness_matrix(mesh)
        self.mass0 = region_mass_matrix(mesh, Region.OMEGA0)
        self.m0 = region_load_vector(mesh, Region.OMEGA0)
        if kind.family == "epsilon":
            for reg in (Region.OMEGA1, Region.OMEGA2):
                if not (mesh.region == int(reg)).any():
                    raise ValueError(f"{kind!r} requires region {reg.name} in the mesh")
            self.mass_k = tuple(region_mass_matrix(mesh, r)
                                for r in (Region.OMEGA1, Region.OMEGA2))
            self.m_k = tuple(region_load_vector(mesh, r)
                             for r in (Region.OMEGA1, Region.OMEGA2))
            self.measures = tuple(float(m.sum()) for m in self.m_k)
            self.n_aux = 2
        else:
            self.mass_k = ()
            self.m_k = ()
            self.measures = ()
            self.n_aux = 0
        self._matrix = None

    def _copy_with_gauges(self, gauges):
        new = object.__new__(System)
        new.__dict__.update(self.__dict__)
        new.gauges = tuple(gauges)
        new._matrix = None
        return new

    @property
    def n_unknowns(self):
        return self.mesh.n_nodes + self.n_aux + len(self.gauges)

    def gauge_vector(self, mode):
        """Unit-norm nodal weight vector of one gauge constraint."""
        if mode == GaugeMode.OMEGA0_MEAN:
            if not self.m0.any():
                raise GaugeError("OMEGA0_MEAN gauge requires a nonempty OMEGA0 region")
            w = self.m0
        elif mode == GaugeMode.FAR_RING_MEAN:
            w = np.zeros(self.mesh.n_nodes)
            w[self.mesh.far_nodes] = 1.0
        else:
            raise GaugeError(f"no constraint vector for gauge mode {mode}")
        return w / np.linalg.norm(w)

    def matrix(self):
        """Augmented sparse matrix, cached CSC."""
        if self._matrix is not None:
            return self._matrix
        n = self.mesh.n_nodes
        beta = self.params.beta
        A = (self.stiffness + 1j * beta * self.mass0).astype(np.complex128)
        if self.kind.family == "epsilon":
            A = A + 1j * beta * (self.mass_k[0] + self.mass_k[1])
        na = self.n_aux + len(self.gauges)
        if na == 0:
            self._matrix = A.tocsc()
            return self._matrix
        # auxiliary average unknowns: column -i beta m_k in the nodal rows,
        # constraint row m_k . u - |Omega_k| U_k = 0, scaled by -i beta when
        # beta > 0 so the augmented matrix stays complex symmetric
        B = np.zeros((n, na), dtype=np.complex128)
        C = np.zeros((na, n), dtype=np.complex128)
        D = np.zeros((na, na), dtype=np.complex128)
        for k in range(self.n_aux):
            mk = self.m_k[k]
            B[:, k] = -1j * beta * mk
            if beta > 0:
                C[k, :] = -1j * beta * mk
                D[k, k] = 1j * beta * self.measures[k]
            else:
                C[k, :] = mk
                D[k, k] = -self.measures[k]
        for g, mode in enumerate(self.gauges):
            w = self.gauge_vector(mode)
            j = self.n_aux + g
            B[:, j] = w
            C[j, :] = w
        self._matrix = sp.bmat([[A, sp.csc_matrix(B)],
                                [sp.csc_matrix(C), sp.csc_matrix(D)]], format="csc")
        return self._matrix


def assemble(mesh, params, kind):
    """Build the System for a problem kind; gauge is applied separately."""
    return System(mesh, params, kind)


def apply_gauge(system, mode):
    """Return a new System with one more gauge constraint row.

    NONE is accepted and returns the system unchanged; it is only valid when
    the ungauged operator is already injective (checked at solve time by the
    residual, not here).
    """
    if mode == GaugeMode.NONE:
        return system
    if mode == GaugeMode.OMEGA0_MEAN and not system.m0.any():
        raise GaugeError("OMEGA0_MEAN gauge requires a nonempty OMEGA0 region")
    if mode in system.gauges:
        raise GaugeError(f"gauge {mode} already applied")
    return system._copy_with_gauges(system.gauges + (mode,))


def default_gauges(kind, params, has_omega0):
    """Gauge policy: the epsilon family pins the Omega_0 mean when it can
    (the zero-average normalization), otherwise the far-ring mean; beta = 0
    requires both.  The limit family with Omega_0 and beta > 0 is already
    injective and gets no constraint."""
    if kind.family == "epsilon":
        if params.beta == 0:
            if not has_omega0:
                raise GaugeError("beta = 0 epsilon problem requires an OMEGA0 "
                                 "region for the double gauge")
            return (GaugeMode.OMEGA0_MEAN, GaugeMode.FAR_RING_MEAN)
        return (GaugeMode.OMEGA0_MEAN,) if has_omega0 else (GaugeMode.FAR_RING_MEAN,)
    if has_omega0 and params.beta > 0:
        return ()
    return (GaugeMode.FAR_RING_MEAN,)


def assemble_thin_source(mesh, params):
    """Load of the thin-inductor source: +mu I / |Omega_1| spread over
    Omega_1, the opposite over Omega_2.  Sums to zero by construction."""
    m1 = region_load_vector(mesh, Region.OMEGA1)
    m2 = region_load_vector(mesh, Region.OMEGA2)
    a1, a2 = m1.sum(), m2.sum()
    if a1 == 0 or a2 == 0:
        raise ValueError("thin source requires nonempty OMEGA1 and OMEGA2 regions")
    return params.mu_I * (m1 / a1 - m2 / a2).astype(np.complex128)


def assemble_dirac_load(mesh, z1, z2, mu_I):
    """Point-dipole load: mu I (lambda_i(z1) - lambda_i(z2))."""
    from .mesh import locate

    load = np.zeros(mesh.n_nodes, dtype=np.complex128)
    if mu_I == 0 or (tuple(z1) == tuple(z2)):
        return load
    for z, sign in ((z1, 1.0), (z2, -1.0)):
        t, lam = locate(mesh, z)
        load[mesh.triangles[t]] += sign * mu_I * lam
    return load


def assemble_weighted_source(mesh, psi):
    """Load of the adjoint problems: int rho^2 psi conj(v), by the degree-2
    edge-midpoint rule (psi is a P1 field, rho^2 is smooth)."""
    from .analysis import weight_rho

    vals = psi.values if isinstance(psi, Field) else np.asarray(psi, dtype=np.complex128)
    if vals.shape != (mesh.n_nodes,):
        raise ValueError("psi must be a nodal field on the same mesh")
    mids = mesh.edge_midpoints
    rho2 = weight_rho(mids.reshape(-1, 2)).reshape(mids.shape[:2]) ** 2
    psi_mid = vals[mesh.triangles].mean(axis=1)[:, None] * 3.0 / 2.0 \
        - vals[mesh.triangles] / 2.0  # P1 value at the opposite edge midpoint
    w = mesh.areas / 3.0
    # each edge midpoint carries weight A/3; P1 basis lambda_i at the three
    # midpoints is (0, 1/2, 1/2) with 0 at the opposite one
    contrib = rho2 * psi_mid * w[:, None]
    load = np.zeros(mesh.n_nodes, dtype=np.complex128)
    tot = contrib.sum(axis=1)
    for loc in range(3):
        np.add.at(load, mesh.triangles[:, loc], 0.5 * (tot - contrib[:, loc]))
    return load


def _check_epsilon_beta_zero_gauges(system):
    if system.kind.family == "epsilon" and system.params.beta == 0:
        need = {GaugeMode.OMEGA0_MEAN, GaugeMode.FAR_RING_MEAN}
        if set(system.gauges) != need:
            raise GaugeError("beta = 0 epsilon problem must carry both "
                             "OMEGA0_MEAN and FAR_RING_MEAN gauges")


def solve(system, load, tol=1e-10):
    """Direct sparse solve of the augmented system with iterative refinement.

    Returns the Field (with auxiliary averages) and a SolveReport.  The
    relative residual of the full augmented system is checked against tol;
    a GMRES fallback with diagonal scaling runs if refinement stalls.
    """
    t0 = time.perf_counter()
    _check_epsilon_beta_zero_gauges(system)
    n = system.mesh.n_nodes
    load = np.asarray(load, dtype=np.complex128)
    if load.shape != (n,):
        raise ValueError(f"load has shape {load.shape}, expected ({n},)")
    b = np.zeros(system.n_unknowns, dtype=np.complex128)
    b[:n] = load
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        rep = SolveReport(0.0, "trivial", system.n_unknowns, 0j,
                          time.perf_counter() - t0)
        return _make_field(system, b), rep
    A = system.matrix()
    try:
        lu = spla.splu(A)
        x = lu.solve(b)
        method = "splu"
        for _ in range(3):
            r = b - A @ x
            if np.linalg.norm(r) <= tol * bnorm:
                break
            x = x + lu.solve(r)
    except RuntimeError as err:
        raise SolverError(f"sparse factorization failed: {err}") from None
    res = np.linalg.norm(b - A @ x) / bnorm
    if not np.isfinite(res) or res > tol:
        d = A.diagonal()
        d = np.where(np.abs(d) > 0, d, 1.0)
        P = spla.LinearOperator(A.shape, matvec=lambda v: v / d)
        x2, info = spla.gmres(A, b, rtol=tol, atol=0.0, M=P, maxiter=2000)
        res2 = np.linalg.norm(b - A @ x2) / bnorm
        if info == 0 and res2 < res:
            x, res, method = x2, res2, "splu+gmres"
    if not np.isfinite(res) or res > tol:
        raise SolverError(f"relative residual {res:.3e} exceeds tolerance {tol:.3e} "
                          "(singular or ill-conditioned system?)")
    f = _make_field(system, x)
    for k in range(system.n_aux):
        gap = abs(system.m_k[k] @ f.values - system.measures[k] * f.aux[k][1])
        if gap > tol * max(1.0, bnorm):
            raise SolverError(f"auxiliary average U_{k + 1} violates its "
                              f"constraint by {gap:.3e}")
    far = f.values[system.mesh.far_nodes].mean() if len(system.mesh.far_nodes) else 0j
    rep = SolveReport(float(res), method, system.n_unknowns, complex(far),
                      time.perf_counter() - t0)
    return f, rep


def _make_field(system, x):
    n = system.mesh.n_nodes
    aux = tuple((k + 1, complex(x[n + k])) for k in range(system.n_aux))
    mult = tuple(complex(v) for v in x[n + system.n_aux:])
    return Field(system.mesh, x[:n].copy(), aux=aux, multipliers=mult)


def sesquilinear_apply(system, v, w):
    """a(v, w) of the ungauged form, auxiliary terms eliminated exactly."""
    for f in (v, w):
        if f.mesh is not system.mesh and not np.array_equal(f.mesh.nodes,
                                                            system.mesh.nodes):
            raise ValueError("field mesh does not match the system mesh")
    beta = system.params.beta
    vv, wv = v.values, w.values
    out = np.vdot(wv, system.stiffness @ vv)
    out += 1j * beta * np.vdot(wv, system.mass0 @ vv)
    for k in range(system.n_aux):
        mk, ak = system.m_k[k], system.measures[k]
        out += 1j * beta * (np.vdot(wv, system.mass_k[k] @ vv)
                            - np.conj(mk @ wv) * (mk @ vv) / ak)
    return complex(out)
