"""Domain description and graded mesh generation.

The computational domain is the disk |x| < R.  It contains two small
conducting inductor disks (centers z_k, radii epsilon * rhat_k) and an
optional third conductor disk Omega_0.  All circles are approximated by
inscribed regular polygons whose edges are mesh edges, so every triangle
lies in exactly one region.

Generation strategy: interface rings and structured polar interiors are
placed for each disk, a guard ring shields each interface, graded rings
grow geometrically outward until they reach the background size, and a
hexagonal lattice fills the rest.  A Delaunay triangulation of this point
set contains every interface edge (adjacent rings stay outside the edges'
diametral circles), which is re-verified after construction.  In symmetric
mode only the closed upper half plane is generated and the mesh is
completed by point reflection through the origin, so the node set is
exactly invariant under negation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import Delaunay, cKDTree

from .mesh import Mesh, MeshError, Region, validate

# tuning constants for the point generator
_GRADE = 0.4            # geometric growth of ring spacing
_RING_CLEAR = 0.60      # acceptance factor for graded ring points
_LATTICE_CLEAR = 0.70   # acceptance factor for lattice points
_GUARD_MARGIN = 1.75    # keep-out multiple of local h around foreign disks
_SMOOTH_ROUNDS = 3
MIN_ANGLE_GATE = 20.0   # degrees; quality contract of this mesher


class GeometryError(ValueError):
    """Invalid or unmeshable domain description."""


@dataclass(frozen=True)
class Disk:
    center: tuple[float, float]
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise GeometryError(f"disk radius must be positive, got {self.radius}")


@dataclass(frozen=True)
class DomainSpec:
    """Geometry of one problem instance.

    inductors hold the unit shapes: the physical disk k is centered at
    inductors[k].center with radius epsilon * inductors[k].radius.
    """

    inductors: tuple[Disk, Disk]
    epsilon: float
    omega0: Disk | None = None
    radius: float = 10.0
    segments: int = 32
    symmetric: bool = False

    def __post_init__(self):
        if len(self.inductors) != 2:
            raise GeometryError("exactly two inductors are required")
        if not self.epsilon > 0:
            raise GeometryError(f"epsilon must be positive, got {self.epsilon}")
        if not self.radius > 0:
            raise GeometryError(f"truncation radius must be positive, got {self.radius}")
        if self.segments < 16:
            raise GeometryError(f"segments must be at least 16, got {self.segments}")
        if self.symmetric:
            z1, z2 = self.inductors[0].center, self.inductors[1].center
            if z1[1] != 0.0 or z2[1] != 0.0 or z2[0] != -z1[0]:
                raise GeometryError("symmetric mode needs inductor centers (a, 0) and (-a, 0)")
            if self.inductors[0].radius != self.inductors[1].radius:
                raise GeometryError("symmetric mode needs equal inductor radii")
            if self.omega0 is not None and self.omega0.center != (0.0, 0.0):
                raise GeometryError("symmetric mode needs omega0 centered at the origin")

    def inductor_disks(self):
        """The physical epsilon-scaled inductor disks."""
        return tuple(Disk(d.center, self.epsilon * d.radius) for d in self.inductors)

    def with_epsilon(self, epsilon):
        return DomainSpec(self.inductors, epsilon, self.omega0, self.radius,
                          self.segments, self.symmetric)


class _Feature:
    """One meshed disk: region tag, polygon resolution and local size."""

    def __init__(self, region, center, rho, h_local, segments):
        n = max(segments, int(np.ceil(2 * np.pi * rho / h_local)))
        n += n % 2  # even counts so half arcs share exact axis endpoints
        self.region = region
        self.center = np.asarray(center, dtype=float)
        self.rho = float(rho)
        self.n = n
        self.h = min(h_local, 2 * np.pi * rho / n)
        self.m = max(2, int(round(rho / self.h)))

    def polygon_area(self):
        return 0.5 * self.n * self.rho ** 2 * np.sin(2 * np.pi / self.n)


def _features(spec, h):
    feats = []
    for k, disk in enumerate(spec.inductor_disks()):
        hk = min(h, disk.radius / 4.0)  # near-inductor resolution rule
        feats.append(_Feature(Region.OMEGA1 if k == 0 else Region.OMEGA2,
                              disk.center, disk.radius, hk, spec.segments))
    if spec.omega0 is not None:
        n0 = max(spec.segments, int(np.ceil(2 * np.pi * spec.omega0.radius / h)))
        h0 = 2 * np.pi * spec.omega0.radius / n0
        feats.append(_Feature(Region.OMEGA0, spec.omega0.center,
                              spec.omega0.radius, h0, spec.segments))
    return feats


def _check_meshable(spec, feats, h):
    R = spec.radius
    for i in range(len(feats)):
        fi = feats[i]
        reach = np.hypot(*fi.center) + fi.rho
        if reach >= R:
            raise GeometryError(f"region {fi.region.name} is not inside the truncation disk "
                                f"(extends to {reach:g} >= R = {R:g})")
        if R - reach < 2.0 * (fi.h + h):
            raise GeometryError(f"h = {h:g} too large to resolve the gap between "
                                f"{fi.region.name} and the outer boundary")
        for j in range(i + 1, len(feats)):
            fj = feats[j]
            gap = float(np.hypot(*(fi.center - fj.center))) - fi.rho - fj.rho
            if gap <= 0:
                raise GeometryError(f"regions {fi.region.name} and {fj.region.name} "
                                    "overlap or touch")
            if gap < 2.0 * (fi.h + fj.h):
                raise GeometryError(f"h/epsilon too large to resolve the gap between "
                                    f"{fi.region.name} and {fj.region.name} "
                                    f"(gap {gap:g}, need {2.0 * (fi.h + fj.h):g})")


def _ring(center, r, n, offset=0.0):
    th = offset + 2 * np.pi * np.arange(n) / n
    return center + r * np.column_stack([np.cos(th), np.sin(th)])


def _half_ring(cx, r, q):
    """Upper half arc around (cx, 0) with exact axis endpoints, q+1 points."""
    th = np.pi * np.arange(q + 1) / q
    p = np.column_stack([cx + r * np.cos(th), r * np.sin(th)])
    p[0] = (cx + r, 0.0)
    p[-1] = (cx - r, 0.0)
    return p


def _interior_ring_counts(f):
    counts = []
    for j in range(1, f.m):
        nj = max(6, int(round(f.n * j / f.m)))
        counts.append(nj + nj % 2)
    return counts


class _Acceptor:
    """Incremental spacing filter over already accepted points."""

    def __init__(self, blocks):
        self.blocks = list(blocks)
        self._tree = None

    def _all(self):
        return np.vstack(self.blocks)

    def filter(self, cand, min_dist):
        if len(cand) == 0:
            return cand
        tree = cKDTree(self._all())
        d, _ = tree.query(cand, k=1)
        return cand[d >= min_dist]

    def accept(self, pts):
        if len(pts):
            self.blocks.append(pts)


def _graded_rings(acc, feats, f, R, h, half):
    """Rings growing outward from feature f until the background takes over.

    In half mode the axis endpoints are stripped: the axis point set is
    produced separately so that it is exactly closed under negation.
    """
    out = []
    s = f.h * (1 + _GRADE)
    r = f.rho + f.h + s
    k = 0
    while r < R:
        n = max(8, int(np.ceil(2 * np.pi * r / s)))
        n += n % 2
        if half:
            cand = _half_ring(f.center[0], r, n // 2)
            cand = cand[cand[:, 1] > 0.0]
        else:
            cand = _ring(f.center, r, n, offset=(np.pi / n) * (k % 2))
        keep = np.hypot(cand[:, 0], cand[:, 1]) < R - 0.75 * h
        for g in feats:
            if g is f:
                continue
            keep &= np.hypot(cand[:, 0] - g.center[0], cand[:, 1] - g.center[1]) \
                > g.rho + _GUARD_MARGIN * g.h
        kept = acc.filter(cand[keep], _RING_CLEAR * s)
        acc.accept(kept)
        out.append(kept)
        r += s
        s = min(h, s * (1 + _GRADE))
        k += 1
        if s >= h and r > f.rho + f.h + 8 * h:
            break
    return np.vstack(out) if out else np.empty((0, 2))


def _size_field(feats, h):
    """Target edge length on the axis: local h near each disk, growing
    linearly with distance, capped by the background size."""

    def size(x):
        v = h
        for f in feats:
            d = abs(x - f.center[0]) - f.rho - f.h
            v = min(v, max(f.h, f.h + _GRADE * d))
        return v

    return size


def _fill_1d(A, B, size):
    """Interior points of the interval (A, B), graded by the size field."""
    steps = []
    x = A
    while x < B:
        st = size(min(x, B))
        steps.append(st)
        x += st
    if len(steps) <= 1:
        return np.empty(0)
    scale = (B - A) / sum(steps)
    return A + np.cumsum(np.array(steps[:-1])) * scale


def _lattice(acc, feats, R, h, half):
    """Hexagonal background lattice clipped to the unprotected area."""
    v = h * np.sqrt(3) / 2
    rows = []
    j0 = 1 if half else int(np.floor(-R / v)) - 1
    for j in range(j0, int(np.ceil(R / v)) + 2):
        y = j * v
        xs = np.arange(-R - h, R + 2 * h, h) + (h / 2) * (j % 2)
        rows.append(np.column_stack([xs, np.full_like(xs, y)]))
    cand = np.vstack(rows)
    keep = np.hypot(cand[:, 0], cand[:, 1]) < R - 0.75 * h
    for g in feats:
        keep &= np.hypot(cand[:, 0] - g.center[0], cand[:, 1] - g.center[1]) \
            > g.rho + _GUARD_MARGIN * g.h
    kept = acc.filter(cand[keep], _LATTICE_CLEAR * h)
    acc.accept(kept)
    return kept


def _axis_points(spec, feats, h):
    """All non-fixed axis nodes for symmetric mode.

    The gaps between disk footprints (and out to the truncation circle) are
    filled by a graded 1-D mesh.  Negative-side gaps are emitted as exact
    negations of their positive mirror, and a gap straddling the origin is
    filled from the center outward, so the set is closed under negation.
    """
    R = spec.radius
    size = _size_field(feats, h)
    foot = sorted((f.center[0] - f.rho - f.h, f.center[0] + f.rho + f.h) for f in feats)
    gaps = []
    prev = -R
    for lo, hi in foot:
        gaps.append((prev, lo))
        prev = hi
    gaps.append((prev, R))
    out = []
    for A, B in gaps:
        if A >= 0.0:
            pts = _fill_1d(A, B, size)
            out.extend([pts, -pts])
        elif A < 0.0 < B:
            if A != -B:
                raise MeshError("internal: axis gap straddling the origin is not symmetric")
            pts = _fill_1d(0.0, B, size)
            out.extend([np.zeros(1), pts, -pts])
    xs = np.concatenate(out) if out else np.empty(0)
    return np.column_stack([xs, np.zeros_like(xs)])


def _smooth(pts, n_fixed, rounds):
    """Jacobi smoothing of the free tail of the point set."""
    if len(pts) <= n_fixed:
        return pts
    for _ in range(rounds):
        tri = Delaunay(pts)
        e = np.concatenate([tri.simplices[:, [0, 1]], tri.simplices[:, [1, 2]],
                            tri.simplices[:, [2, 0]]])
        e = np.unique(np.sort(e, axis=1), axis=0)
        acc = np.zeros_like(pts)
        deg = np.zeros(len(pts))
        np.add.at(acc, e[:, 0], pts[e[:, 1]])
        np.add.at(acc, e[:, 1], pts[e[:, 0]])
        np.add.at(deg, e[:, 0], 1.0)
        np.add.at(deg, e[:, 1], 1.0)
        new = acc[n_fixed:] / deg[n_fixed:, None]
        if pts[n_fixed:, 1].min() > 0:  # half-plane mode: stay strictly above axis
            ok = new[:, 1] > 0
            pts = pts.copy()
            pts[n_fixed:][ok] = new[ok]
        else:
            pts = np.vstack([pts[:n_fixed], new])
    return pts


def _triangulate_ccw(pts):
    tri = Delaunay(pts)
    simp = tri.simplices.copy()
    a, b, c = pts[simp[:, 0]], pts[simp[:, 1]], pts[simp[:, 2]]
    cross = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    flip = cross < 0
    simp[flip] = simp[flip][:, [2, 1, 0]][:, [1, 0, 2]]  # swap last two vertices
    return simp


def _classify(pts, simp, feats):
    """Region of each triangle from its centroid, by exact polygon sector test."""
    cent = pts[simp].mean(axis=1)
    region = np.full(len(simp), int(Region.EXTERIOR), dtype=np.int8)
    for f in feats:
        d = cent - f.center
        phi = np.arctan2(d[:, 1], d[:, 0])
        sector = np.floor(phi / (2 * np.pi / f.n))
        mid = (sector + 0.5) * (2 * np.pi / f.n)
        proj = d[:, 0] * np.cos(mid) + d[:, 1] * np.sin(mid)
        inside = proj <= f.rho * np.cos(np.pi / f.n)
        region[inside] = int(f.region)
    return region


def _check_regions(pts, simp, region, feats):
    """Every disk region must tile its polygon exactly and meet only at circle nodes."""
    a, b, c = pts[simp[:, 0]], pts[simp[:, 1]], pts[simp[:, 2]]
    areas = 0.5 * np.abs((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1])
                         - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))
    for f in feats:
        got = areas[region == int(f.region)].sum()
        want = f.polygon_area()
        if abs(got - want) > 1e-9 * want:
            raise MeshError(f"region {f.region.name} does not tile its polygon: "
                            f"area {got!r} vs {want!r}; interface not conforming")
    # any edge between two different regions must lie on a feature circle
    e = np.concatenate([simp[:, [0, 1]], simp[:, [1, 2]], simp[:, [2, 0]]])
    owner = np.concatenate([region] * 3)
    key = np.sort(e, axis=1)
    order = np.lexsort((key[:, 1], key[:, 0]))
    key, owner = key[order], owner[order]
    same = (key[:-1] == key[1:]).all(axis=1)
    mism = same & (owner[:-1] != owner[1:])
    if mism.any():
        for idx in np.where(mism)[0]:
            i, j = key[idx]
            on_circle = False
            for f in feats:
                ri = np.hypot(*(pts[i] - f.center))
                rj = np.hypot(*(pts[j] - f.center))
                if abs(ri - f.rho) < 1e-9 * f.rho and abs(rj - f.rho) < 1e-9 * f.rho:
                    on_circle = True
                    break
            if not on_circle:
                raise MeshError(f"edge ({i}, {j}) separates two regions but is not "
                                "on a region circle")


def _boundary_edges(simp):
    e = np.concatenate([simp[:, [0, 1]], simp[:, [1, 2]], simp[:, [2, 0]]])
    key = np.sort(e, axis=1)
    uniq, counts = np.unique(key, axis=0, return_counts=True)
    return uniq[counts == 1]


def _generate_full(spec, feats, h):
    fixed = []
    for f in feats:
        fixed.append(_ring(f.center, f.rho, f.n))
        fixed.append(f.center[None, :])
        for j, nj in enumerate(_interior_ring_counts(f), start=1):
            fixed.append(_ring(f.center, f.rho * j / f.m, nj, offset=(np.pi / nj) * (j % 2)))
        fixed.append(_ring(f.center, f.rho + f.h, f.n))  # guard ring
    nR = max(spec.segments, int(np.ceil(2 * np.pi * spec.radius / h)))
    nR += nR % 2
    fixed.append(_ring(np.zeros(2), spec.radius, nR))
    fixed = np.vstack(fixed)

    acc = _Acceptor([fixed])
    free = []
    for f in feats:
        free.append(_graded_rings(acc, feats, f, spec.radius, h, half=False))
    free.append(_lattice(acc, feats, spec.radius, h, half=False))
    free = np.vstack([p for p in free if len(p)])
    pts = np.vstack([fixed, free])
    pts = _smooth(pts, len(fixed), _SMOOTH_ROUNDS)
    simp = _triangulate_ccw(pts)
    return pts, simp, None


def _generate_symmetric(spec, feats, h):
    axis_blocks, upper_blocks = [], []

    def split(p):
        ax = p[:, 1] == 0.0
        if ax.any():
            axis_blocks.append(p[ax])
        if (~ax).any():
            upper_blocks.append(p[~ax])

    for f in feats:
        split(_half_ring(f.center[0], f.rho, f.n // 2))
        axis_blocks.append(np.array([[f.center[0], 0.0]]))
        for j, nj in enumerate(_interior_ring_counts(f), start=1):
            split(_half_ring(f.center[0], f.rho * j / f.m, nj // 2))
        split(_half_ring(f.center[0], f.rho + f.h, f.n // 2))
    nR = max(spec.segments, int(np.ceil(2 * np.pi * spec.radius / h)))
    nR += nR % 2
    split(_half_ring(0.0, spec.radius, nR // 2))
    ax1d = _axis_points(spec, feats, h)
    if len(ax1d):
        axis_blocks.append(ax1d)

    axis = np.vstack(axis_blocks)
    na = len(axis)
    n_fixed_upper = sum(len(b) for b in upper_blocks)
    acc = _Acceptor([axis] + upper_blocks)
    free = []
    for f in feats:
        free.append(_graded_rings(acc, feats, f, spec.radius, h, half=True))
    free.append(_lattice(acc, feats, spec.radius, h, half=True))
    free = [b for b in free if len(b)]

    upper = np.vstack(upper_blocks + free)
    if not (upper[:, 1] > 0).all():
        raise MeshError("internal: upper half point on or below the axis")
    pts = np.vstack([axis, upper])
    pts = _smooth(pts, na + n_fixed_upper, _SMOOTH_ROUNDS)

    simp_up = _triangulate_ccw(pts)

    # pair axis nodes by exact negation of their x coordinate
    ax_x = pts[:na, 0]
    srt = np.argsort(ax_x, kind="stable")
    neg_pos = np.searchsorted(ax_x[srt], -ax_x[srt])
    neg_pos = np.minimum(neg_pos, na - 1)
    if not (ax_x[srt][neg_pos] == -ax_x[srt]).all():
        raise MeshError("axis node set is not closed under negation")
    nu = len(pts) - na
    pair = np.empty(na + 2 * nu, dtype=np.int64)
    pair[srt] = srt[neg_pos]
    pair[na:na + nu] = np.arange(na + nu, na + 2 * nu)
    pair[na + nu:] = np.arange(na, na + nu)

    full = np.vstack([pts, -pts[na:]])
    simp = np.vstack([simp_up, pair[simp_up]])
    return full, simp, pair


def build_domain(spec, h):
    """Mesh the domain at background size h.

    Local size near inductor k is min(h, epsilon * rhat_k / 4).  The result
    passes validate() with the 20 degree angle gate, every inductor region
    holds at least 8 triangles, and in symmetric mode the node set is exactly
    invariant under negation.
    """
    if not h > 0:
        raise GeometryError(f"h must be positive, got {h}")
    feats = _features(spec, h)
    _check_meshable(spec, feats, h)
    if spec.symmetric:
        pts, simp, pair = _generate_symmetric(spec, feats, h)
    else:
        pts, simp, pair = _generate_full(spec, feats, h)
    region = _classify(pts, simp, feats)
    _check_regions(pts, simp, region, feats)
    bnd = _boundary_edges(simp)
    mesh = Mesh(pts, simp, region, bnd, node_pair=pair)
    for reg in (Region.OMEGA1, Region.OMEGA2):
        n_tri = int((mesh.region == int(reg)).sum())
        if n_tri < 8:
            raise MeshError(f"region {reg.name} has only {n_tri} triangles")
    validate(mesh, min_angle_gate=MIN_ANGLE_GATE)
    return mesh
