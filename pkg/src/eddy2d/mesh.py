"""Triangle mesh container, refinement, point location and plain-text I/O.

Meshes are conforming P1 triangulations of a truncated disk.  Every triangle
carries a region tag; the outer boundary edges carry the FAR tag.  Nodes and
triangles are numpy arrays and are frozen after construction: all operations
that change a mesh return a new one.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from functools import cached_property

import numpy as np


class Region(IntEnum):
    OMEGA0 = 0
    OMEGA1 = 1
    OMEGA2 = 2
    EXTERIOR = 3


FAR = "FAR"

_FMT = "%.17g"


class MeshError(ValueError):
    """A structural defect in a mesh (non-conformity, orientation, tags)."""


@dataclass(frozen=True)
class MeshDiagnostics:
    min_angle_deg: float
    max_aspect_ratio: float
    region_areas: dict[str, float]
    n_nodes: int
    n_triangles: int


class Mesh:
    """Immutable triangulation.

    Parameters
    ----------
    nodes : (N, 2) float array
    triangles : (M, 3) int array, counter-clockwise vertex order
    region : (M,) int array of Region codes
    boundary_edges : (K, 2) int array, edges on the truncation circle (FAR)
    node_pair : optional (N,) int array; node_pair[i] = j with x_j = -x_i
        exactly.  Present only for meshes built in symmetric mode.
    """

    def __init__(self, nodes, triangles, region, boundary_edges, node_pair=None):
        self.nodes = np.ascontiguousarray(nodes, dtype=np.float64)
        self.triangles = np.ascontiguousarray(triangles, dtype=np.int32)
        self.region = np.ascontiguousarray(region, dtype=np.int8)
        self.boundary_edges = np.ascontiguousarray(boundary_edges, dtype=np.int32)
        self.node_pair = None if node_pair is None else np.ascontiguousarray(node_pair, dtype=np.int32)
        for a in (self.nodes, self.triangles, self.region, self.boundary_edges, self.node_pair):
            if a is not None:
                a.setflags(write=False)

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @cached_property
    def areas(self):
        """Signed triangle areas; positive for CCW triangles."""
        a = self.nodes[self.triangles[:, 0]]
        b = self.nodes[self.triangles[:, 1]]
        c = self.nodes[self.triangles[:, 2]]
        return 0.5 * ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1])
                      - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))

    @cached_property
    def edge_lengths(self):
        """(M, 3) lengths of edges opposite to local vertices 0, 1, 2."""
        p = self.nodes[self.triangles]
        out = np.empty((self.n_triangles, 3))
        for loc, (i, j) in enumerate(((1, 2), (2, 0), (0, 1))):
            d = p[:, i, :] - p[:, j, :]
            out[:, loc] = np.hypot(d[:, 0], d[:, 1])
        return out

    @cached_property
    def h_max(self):
        return float(self.edge_lengths.max())

    @cached_property
    def centroids(self):
        return self.nodes[self.triangles].mean(axis=1)

    @cached_property
    def edge_midpoints(self):
        """(M, 3, 2) midpoints of the edges opposite local vertices 0, 1, 2."""
        p = self.nodes[self.triangles]
        mids = np.empty((self.n_triangles, 3, 2))
        for loc, (i, j) in enumerate(((1, 2), (2, 0), (0, 1))):
            mids[:, loc, :] = 0.5 * (p[:, i, :] + p[:, j, :])
        return mids

    @cached_property
    def far_nodes(self):
        """Sorted unique node indices on the FAR boundary ring."""
        return np.unique(self.boundary_edges)

    @cached_property
    def _trifinder(self):
        import matplotlib.tri as mtri

        t = mtri.Triangulation(self.nodes[:, 0], self.nodes[:, 1], self.triangles)
        return t.get_trifinder()

    @cached_property
    def _centroid_tree(self):
        from scipy.spatial import cKDTree

        return cKDTree(self.centroids)

    def min_angles_deg(self):
        """Per-triangle smallest interior angle in degrees."""
        p = self.nodes[self.triangles]
        angs = []
        for i in range(3):
            u = p[:, (i + 1) % 3, :] - p[:, i, :]
            w = p[:, (i + 2) % 3, :] - p[:, i, :]
            cosv = (u * w).sum(axis=1) / np.sqrt((u * u).sum(axis=1) * (w * w).sum(axis=1))
            angs.append(np.degrees(np.arccos(np.clip(cosv, -1.0, 1.0))))
        return np.minimum(np.minimum(angs[0], angs[1]), angs[2])


def region_measure(mesh, region):
    """Total area of all triangles tagged with the given region."""
    return float(mesh.areas[mesh.region == int(region)].sum())


def region_areas(mesh):
    return {r.name: region_measure(mesh, r) for r in Region}


def triangle_aspect_ratios(mesh):
    """Longest edge over twice the inradius (sqrt(3) for equilateral)."""
    el = mesh.edge_lengths
    s = 0.5 * el.sum(axis=1)
    inradius = mesh.areas / s
    return el.max(axis=1) / (2.0 * inradius)


def _edge_counts(triangles):
    e = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    e.sort(axis=1)
    uniq, counts = np.unique(e, axis=0, return_counts=True)
    return uniq, counts


def validate(mesh, min_angle_gate=None):
    """Structural checks; returns MeshDiagnostics or raises MeshError.

    Verifies positive CCW orientation, edge conformity (every interior edge
    shared by exactly two triangles, so hanging nodes are impossible), that
    single-count edges coincide with the tagged FAR boundary, that all nodes
    are referenced, and region tag sanity.  Optionally gates on min angle.
    """
    if mesh.n_triangles == 0:
        raise MeshError("mesh has no triangles")
    bad = np.where(mesh.areas <= 0)[0]
    if len(bad):
        raise MeshError(f"triangle {bad[0]} is not counter-clockwise (area {mesh.areas[bad[0]]:g})")
    if mesh.triangles.min() < 0 or mesh.triangles.max() >= mesh.n_nodes:
        raise MeshError("triangle refers to a node outside the node table")
    used = np.zeros(mesh.n_nodes, dtype=bool)
    used[mesh.triangles] = True
    if not used.all():
        raise MeshError(f"node {np.where(~used)[0][0]} is not referenced by any triangle")
    if not np.isin(mesh.region, [int(r) for r in Region]).all():
        raise MeshError("unknown region code in region array")

    uniq, counts = _edge_counts(mesh.triangles)
    over = np.where(counts > 2)[0]
    if len(over):
        i, j = uniq[over[0]]
        raise MeshError(f"edge ({i}, {j}) is shared by more than two triangles")
    single = uniq[counts == 1]
    declared = np.sort(np.sort(mesh.boundary_edges, axis=1), axis=0) if len(mesh.boundary_edges) else np.empty((0, 2), int)
    single_sorted = np.sort(single, axis=0)
    if single_sorted.shape != declared.shape or not np.array_equal(single_sorted, declared):
        raise MeshError("single-count edges do not match the declared FAR boundary "
                        f"({len(single)} found, {len(mesh.boundary_edges)} declared)")

    if mesh.node_pair is not None:
        if not np.array_equal(mesh.nodes[mesh.node_pair], -mesh.nodes):
            raise MeshError("node_pair does not negate the node set exactly")

    mina = mesh.min_angles_deg()
    worst = int(np.argmin(mina))
    if min_angle_gate is not None and mina[worst] < min_angle_gate:
        raise MeshError(f"triangle {worst} has min angle {mina[worst]:.3f} deg "
                        f"< gate {min_angle_gate:g}")
    return MeshDiagnostics(
        min_angle_deg=float(mina[worst]),
        max_aspect_ratio=float(triangle_aspect_ratios(mesh).max()),
        region_areas=region_areas(mesh),
        n_nodes=mesh.n_nodes,
        n_triangles=mesh.n_triangles,
    )


def refine_uniform(mesh):
    """Split every triangle into four via edge midpoints.

    Region tags are inherited, boundary edges are split in place, and the
    node pairing of symmetric meshes is carried through (midpoints of paired
    edges are exact negations because negation is exact in IEEE arithmetic).
    """
    tris = mesh.triangles
    e = np.concatenate([tris[:, [1, 2]], tris[:, [2, 0]], tris[:, [0, 1]]])
    e_sorted = np.sort(e, axis=1)
    uniq, inverse = np.unique(e_sorted, axis=0, return_inverse=True)
    mid = 0.5 * (mesh.nodes[uniq[:, 0]] + mesh.nodes[uniq[:, 1]])
    n0 = mesh.n_nodes
    nodes = np.vstack([mesh.nodes, mid])
    midx = inverse.reshape(3, -1).T + n0  # (M, 3): midpoint opposite local vertex

    a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
    ma, mb, mc = midx[:, 0], midx[:, 1], midx[:, 2]
    children = np.concatenate([
        np.column_stack([a, mc, mb]),
        np.column_stack([b, ma, mc]),
        np.column_stack([c, mb, ma]),
        np.column_stack([ma, mb, mc]),
    ])
    region = np.concatenate([mesh.region] * 4)

    # packed int64 edge keys (int32 products overflow beyond ~46k nodes)
    order = np.lexsort((uniq[:, 1], uniq[:, 0]))
    keys = uniq[order, 0].astype(np.int64) * (n0 + 1) + uniq[order, 1]

    def edge_midpoint_node(edges):
        e2 = np.sort(np.asarray(edges, dtype=np.int64), axis=1)
        pos = np.searchsorted(keys, e2[:, 0] * (n0 + 1) + e2[:, 1])
        if (pos >= len(keys)).any() or \
                (keys[pos] != e2[:, 0] * (n0 + 1) + e2[:, 1]).any():
            raise MeshError("edge lookup failed during refinement")
        return order[pos] + n0

    bnd = []
    if len(mesh.boundary_edges):
        bmid = edge_midpoint_node(mesh.boundary_edges)
        bnd = np.concatenate([
            np.column_stack([mesh.boundary_edges[:, 0], bmid]),
            np.column_stack([bmid, mesh.boundary_edges[:, 1]]),
        ])
    pair = None
    if mesh.node_pair is not None:
        # the mirror image of each edge is an edge, so its midpoint exists
        pair = np.concatenate([mesh.node_pair,
                               edge_midpoint_node(mesh.node_pair[uniq])])
    return Mesh(nodes, children, region, bnd, node_pair=pair)


def locate(mesh, point):
    """Find the triangle containing a point.

    Returns (triangle_index, barycentric_coords).  Raises ValueError for
    points outside the mesh.
    """
    t, bary = _locate_many(mesh, np.asarray(point, dtype=float)[None, :], strict=True)
    return int(t[0]), bary[0]


def _barycentric(mesh, tri_idx, pts):
    tri = mesh.triangles[tri_idx]
    a = mesh.nodes[tri[:, 0]]
    b = mesh.nodes[tri[:, 1]]
    c = mesh.nodes[tri[:, 2]]
    v0 = b - a
    v1 = c - a
    v2 = pts - a
    den = v0[:, 0] * v1[:, 1] - v0[:, 1] * v1[:, 0]
    l1 = (v2[:, 0] * v1[:, 1] - v2[:, 1] * v1[:, 0]) / den
    l2 = (v0[:, 0] * v2[:, 1] - v0[:, 1] * v2[:, 0]) / den
    l0 = 1.0 - l1 - l2
    return np.column_stack([l0, l1, l2])


def _locate_many(mesh, pts, strict=True):
    pts = np.asarray(pts, dtype=float)
    t = np.asarray(mesh._trifinder(pts[:, 0], pts[:, 1]))
    miss = t < 0
    if miss.any():
        # points marginally outside the hull (polygonal boundary) snap to the
        # nearest triangle; genuinely outside points are an error
        _, cand = mesh._centroid_tree.query(pts[miss], k=1)
        bary = _barycentric(mesh, cand, pts[miss])
        off = np.maximum(-bary.min(axis=1), 0.0)
        scale = np.sqrt(np.abs(mesh.areas[cand]))
        ok = off * scale < 1e-9 * max(1.0, float(np.abs(mesh.nodes).max()))
        if strict and not ok.all():
            p = pts[miss][~ok][0]
            raise ValueError(f"point ({p[0]:g}, {p[1]:g}) is outside the mesh")
        t[miss] = np.where(ok, cand, cand)
    bary = _barycentric(mesh, t, pts)
    bary = np.clip(bary, 0.0, None)
    bary /= bary.sum(axis=1, keepdims=True)
    return t, bary


def interpolate(mesh, values, pts, strict=True):
    """Evaluate a nodal P1 field at arbitrary points."""
    t, bary = _locate_many(mesh, pts, strict=strict)
    return (np.asarray(values)[mesh.triangles[t]] * bary).sum(axis=1)


def write_mesh(mesh, path):
    with open(path, "w") as f:
        f.write(f"nodes {mesh.n_nodes}\n")
        for x, y in mesh.nodes:
            f.write(f"{x:.17g} {y:.17g}\n")
        f.write(f"triangles {mesh.n_triangles}\n")
        for (i, j, k), r in zip(mesh.triangles, mesh.region):
            f.write(f"{i} {j} {k} {Region(r).name}\n")
        f.write(f"boundary_edges {len(mesh.boundary_edges)}\n")
        for i, j in mesh.boundary_edges:
            f.write(f"{i} {j} {FAR}\n")


def read_mesh(path):
    with open(path) as f:
        tok = f.read().split("\n")
    pos = 0

    def expect(name):
        nonlocal pos
        parts = tok[pos].split()
        if len(parts) != 2 or parts[0] != name:
            raise MeshError(f"line {pos + 1}: expected '{name} <count>', got {tok[pos]!r}")
        pos += 1
        return int(parts[1])

    n = expect("nodes")
    nodes = np.array([[float(v) for v in tok[pos + i].split()] for i in range(n)])
    pos += n
    m = expect("triangles")
    tris = np.empty((m, 3), dtype=np.int32)
    region = np.empty(m, dtype=np.int8)
    for i in range(m):
        parts = tok[pos + i].split()
        tris[i] = [int(parts[0]), int(parts[1]), int(parts[2])]
        region[i] = Region[parts[3]]
    pos += m
    k = expect("boundary_edges")
    bnd = np.empty((k, 2), dtype=np.int32)
    for i in range(k):
        parts = tok[pos + i].split()
        if parts[2] != FAR:
            raise MeshError(f"line {pos + i + 1}: unknown boundary tag {parts[2]!r}")
        bnd[i] = [int(parts[0]), int(parts[1])]
    return Mesh(nodes, tris, region, bnd)
