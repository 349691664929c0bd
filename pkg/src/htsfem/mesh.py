"""Structured triangular meshes for the two reference geometries.

Two scenario builders are provided:

* :func:`build_stacked_bar_mesh` -- a superconducting bar below a
  ferromagnetic bar, both enclosed in an air box.  The bar boundary is
  tagged as the field-coupling interface ``GAMMA_M``.
* :func:`build_tape_mesh` -- a thin conducting tape collapsed to an
  interior horizontal polyline ``GAMMA_W`` inside an air box.

Meshes are generated from a tensor grid of mapped rectangles split into
two triangles each, so that uniform refinement produces exactly halved
element sizes and reproducible degree-of-freedom numberings.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum, IntEnum
from functools import cached_property
from pathlib import Path

import numpy as np

NODE_TOL = 1e-12


class Region(IntEnum):
    """Subdomain tags. The superconductor forms the h-side domain."""

    OMEGA_H_SC = 1
    OMEGA_A_FERRO = 2
    OMEGA_A_AIR = 3


class Boundary(IntEnum):
    GAMMA_E = 10
    GAMMA_H = 11


class Interface(IntEnum):
    GAMMA_M = 20
    GAMMA_W = 21


class Scenario(Enum):
    STACKED_BAR = "stacked_bar"
    SINGLE_TAPE = "single_tape"


class MeshError(ValueError):
    """Invalid mesh or mesh-generation input."""


class UnderResolvedError(MeshError):
    """Requested element size too coarse for the geometry."""


@dataclass(frozen=True)
class GeometryParams:
    """Geometry description for the two scenarios.

    Lengths are in meters.  ``delta`` is the target characteristic
    element size.  ``min_elements_across`` is the resolution guard for
    the bar scenario: generation is refused when fewer than this many
    elements would fit across the bar height.  Stability sweeps relax
    it to 1 to reach deliberately coarse meshes.
    """

    scenario: Scenario = Scenario.STACKED_BAR
    bar_width: float = 0.02
    bar_height: float = 0.01
    air_half: float = 0.04
    tape_width: float = 0.01
    tape_thickness: float = 1e-6
    delta: float = 0.002
    min_elements_across: int = 4

    def __post_init__(self):
        for name in ("bar_width", "bar_height", "air_half", "tape_width",
                     "tape_thickness", "delta"):
            if getattr(self, name) <= 0.0:
                raise MeshError(f"{name} must be positive")
        if self.delta >= self.bar_width / 2.0:
            raise MeshError("delta must be smaller than half the bar width")

    def with_delta(self, delta: float) -> "GeometryParams":
        return replace(self, delta=delta)


class Mesh2D:
    """Immutable triangulated 2D domain with tagged entities.

    Attributes
    ----------
    nodes : (N, 2) float array of coordinates.
    triangles : (T, 3) int array, counterclockwise node triples.
    tri_region : (T,) int array of :class:`Region` values.
    boundary_segments : (B, 2) int array of node pairs on the outer
        boundary, with tags in ``boundary_tags``.
    interface_segments : (S, 2) int array of oriented node pairs forming
        the coupling polyline(s), listed in traversal order; tags in
        ``interface_tags`` and unit normals in ``interface_normals``.
        For GAMMA_M the traversal is counterclockwise around the
        conductor and the normal points out of it.  For GAMMA_W the
        traversal runs from the minus end to the plus end and the
        normal is z-hat cross t-hat.
    delta : characteristic element size (m).
    w : tape thickness (m) for tape meshes, else None.
    tape_endpoints : dict with node ids under "minus"/"plus", or None.
    """

    def __init__(self, nodes, triangles, tri_region, boundary_segments,
                 boundary_tags, interface_segments, interface_tags,
                 interface_normals, delta, w=None, tape_endpoints=None):
        self.nodes = np.asarray(nodes, dtype=float)
        self.triangles = np.asarray(triangles, dtype=np.int64)
        self.tri_region = np.asarray(tri_region, dtype=np.int64)
        self.boundary_segments = np.asarray(boundary_segments, dtype=np.int64).reshape(-1, 2)
        self.boundary_tags = np.asarray(boundary_tags, dtype=np.int64)
        self.interface_segments = np.asarray(interface_segments, dtype=np.int64).reshape(-1, 2)
        self.interface_tags = np.asarray(interface_tags, dtype=np.int64)
        self.interface_normals = np.asarray(interface_normals, dtype=float).reshape(-1, 2)
        self.delta = float(delta)
        self.w = None if w is None else float(w)
        self.tape_endpoints = tape_endpoints

    # -- derived connectivity ------------------------------------------------

    @cached_property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @cached_property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    @cached_property
    def edges(self):
        """Unique mesh edges as sorted (min, max) node pairs, ordered
        lexicographically.  Edge ids are positions in this array."""
        e = np.vstack([self.triangles[:, [0, 1]],
                       self.triangles[:, [1, 2]],
                       self.triangles[:, [2, 0]]])
        e = np.sort(e, axis=1)
        return np.unique(e, axis=0)

    @cached_property
    def tri_edges(self):
        """(T, 3) edge ids for local edges (01, 12, 20) of each triangle."""
        e = np.vstack([self.triangles[:, [0, 1]],
                       self.triangles[:, [1, 2]],
                       self.triangles[:, [2, 0]]])
        ids = self._edge_lookup(np.sort(e, axis=1))
        return ids.reshape(3, -1).T

    @cached_property
    def _edge_index(self):
        key = self.edges[:, 0] * self.n_nodes + self.edges[:, 1]
        order = np.argsort(key)
        return key[order], order

    def _edge_lookup(self, pairs):
        pairs = np.sort(np.asarray(pairs, dtype=np.int64).reshape(-1, 2), axis=1)
        key = pairs[:, 0] * self.n_nodes + pairs[:, 1]
        skey, order = self._edge_index
        pos = np.searchsorted(skey, key)
        bad = (pos >= len(skey)) | (skey[np.minimum(pos, len(skey) - 1)] != key)
        if np.any(bad):
            raise MeshError("node pair is not a mesh edge")
        return order[pos]

    def edge_ids(self, pairs):
        """Edge ids for an array of node pairs (orientation ignored)."""
        return self._edge_lookup(pairs)

    @cached_property
    def edge_tri_count(self):
        counts = np.zeros(len(self.edges), dtype=np.int64)
        np.add.at(counts, self.tri_edges.ravel(), 1)
        return counts

    @cached_property
    def edge_tris(self):
        """(E, 2) triangle ids adjacent to each edge, -1 where absent."""
        out = np.full((len(self.edges), 2), -1, dtype=np.int64)
        flat = self.tri_edges.ravel()
        tri_of = np.repeat(np.arange(self.n_triangles), 3)
        order = np.argsort(flat, kind="stable")
        fe, ft = flat[order], tri_of[order]
        first = np.ones(len(fe), dtype=bool)
        first[1:] = fe[1:] != fe[:-1]
        out[fe[first], 0] = ft[first]
        out[fe[~first], 1] = ft[~first]
        return out

    @cached_property
    def signed_areas(self):
        p = self.nodes
        t = self.triangles
        d1 = p[t[:, 1]] - p[t[:, 0]]
        d2 = p[t[:, 2]] - p[t[:, 0]]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def region_tris(self, region) -> np.ndarray:
        return np.flatnonzero(self.tri_region == int(region))

    def interface(self, tag):
        """(segments, normals) restricted to one interface tag, in order."""
        m = self.interface_tags == int(tag)
        return self.interface_segments[m], self.interface_normals[m]

    def segment_lengths(self, segments) -> np.ndarray:
        segments = np.asarray(segments, dtype=np.int64).reshape(-1, 2)
        d = self.nodes[segments[:, 1]] - self.nodes[segments[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    def boundary_nodes(self, tag) -> np.ndarray:
        segs = self.boundary_segments[self.boundary_tags == int(tag)]
        return np.unique(segs)

    # -- validation ----------------------------------------------------------

    def validate(self):
        """Check structural invariants; raise MeshError on violation."""
        if np.any(self.signed_areas <= 0.0):
            raise MeshError("triangle with non-positive signed area")
        scale = max(self.nodes.max() - self.nodes.min(), 1.0)
        quant = np.round(self.nodes / (NODE_TOL * scale)).astype(np.int64)
        if len(np.unique(quant, axis=0)) != self.n_nodes:
            raise MeshError("duplicate nodes")
        if np.any(self.edge_tri_count > 2):
            raise MeshError("non-conforming mesh: edge shared by >2 triangles")
        nrm = np.hypot(self.interface_normals[:, 0], self.interface_normals[:, 1])
        if self.interface_segments.size and np.any(np.abs(nrm - 1.0) > 1e-12):
            raise MeshError("interface normal is not unit length")
        for tag in np.unique(self.interface_tags):
            segs, _ = self.interface(tag)
            # traversal order must chain within each polyline component;
            # GAMMA_M components must close into loops
            start = 0
            for k in range(len(segs)):
                if k + 1 == len(segs) or segs[k + 1, 0] != segs[k, 1]:
                    chain = segs[start:k + 1]
                    if tag == Interface.GAMMA_M and chain[-1, 1] != chain[0, 0]:
                        raise MeshError("GAMMA_M polyline is not closed")
                    if len(np.unique(chain[:, 0])) != len(chain):
                        raise MeshError("interface polyline revisits a node")
                    start = k + 1
            if tag == Interface.GAMMA_M:
                self._check_gamma_m(segs)
            if tag == Interface.GAMMA_W:
                self._check_gamma_w(segs)
        return self

    def _check_gamma_m(self, segs):
        ids = self.edge_ids(segs)
        sc = set(self.region_tris(Region.OMEGA_H_SC))
        for eid in ids:
            tris = np.flatnonzero(np.any(self.tri_edges == eid, axis=1))
            if len(tris) != 2:
                raise MeshError("GAMMA_M segment not shared by two triangles")
            sides = [t in sc for t in tris]
            if sides[0] == sides[1]:
                raise MeshError("GAMMA_M segment does not separate conductor from exterior")

    def _check_gamma_w(self, segs):
        ids = self.edge_ids(segs)
        air = set(np.concatenate([self.region_tris(Region.OMEGA_A_AIR),
                                  self.region_tris(Region.OMEGA_A_FERRO)]))
        for eid in ids:
            tris = np.flatnonzero(np.any(self.tri_edges == eid, axis=1))
            if len(tris) != 2 or not all(t in air for t in tris):
                raise MeshError("GAMMA_W segment must lie inside the air region")
        lens = self.segment_lengths(segs)
        if lens.size and lens.max() / lens.min() > 1.01:
            raise MeshError("tape mesh is not uniform (max/min segment length > 1.01)")


# -- structured generation ----------------------------------------------------


def _interval_points(breaks, delta, min_cells=None):
    """Subdivide consecutive break intervals into cells of size <= delta."""
    pts = [breaks[0]]
    for a, b in zip(breaks[:-1], breaks[1:]):
        n = max(1, math.ceil((b - a) / delta - 1e-9))
        if min_cells is not None:
            n = max(n, min_cells.get((a, b), 1))
        pts.extend(a + (b - a) * (k + 1) / n for k in range(n))
    return np.array(pts)


def _structured_mesh(x_breaks, y_breaks, delta, region_fn, w=None,
                     tape_span=None, min_cells_x=None, min_cells_y=None):
    """Tensor grid over the given break lines, each cell split into two
    CCW triangles.  ``region_fn(xc, yc)`` assigns a Region per cell.
    The conductor boundary is discovered from cell regions and tagged
    GAMMA_M; ``tape_span=(x0, x1, y)`` tags a GAMMA_W polyline.
    """
    xs = _interval_points(x_breaks, delta, min_cells_x)
    ys = _interval_points(y_breaks, delta, min_cells_y)
    nx, ny = len(xs), len(ys)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    def nid(i, j):
        return i * ny + j

    I, J = np.meshgrid(np.arange(nx - 1), np.arange(ny - 1), indexing="ij")
    I, J = I.ravel(), J.ravel()
    n00, n10 = nid(I, J), nid(I + 1, J)
    n01, n11 = nid(I, J + 1), nid(I + 1, J + 1)
    tris = np.empty((2 * len(I), 3), dtype=np.int64)
    tris[0::2] = np.column_stack([n00, n10, n11])
    tris[1::2] = np.column_stack([n00, n11, n01])

    xc = 0.5 * (xs[I] + xs[I + 1])
    yc = 0.5 * (ys[J] + ys[J + 1])
    cell_region = np.array([int(region_fn(x, y)) for x, y in zip(xc, yc)],
                           dtype=np.int64)
    tri_region = np.repeat(cell_region, 2)

    # outer boundary, counterclockwise starting at the lower-left corner
    bsegs = []
    for i in range(nx - 1):
        bsegs.append((nid(i, 0), nid(i + 1, 0)))
    for j in range(ny - 1):
        bsegs.append((nid(nx - 1, j), nid(nx - 1, j + 1)))
    for i in range(nx - 1, 0, -1):
        bsegs.append((nid(i, ny - 1), nid(i - 1, ny - 1)))
    for j in range(ny - 1, 0, -1):
        bsegs.append((nid(0, j), nid(0, j - 1)))
    bsegs = np.array(bsegs, dtype=np.int64)
    btags = np.full(len(bsegs), int(Boundary.GAMMA_E), dtype=np.int64)

    isegs, itags, inorms = _conductor_interface(xs, ys, cell_region, nid)
    tape_endpoints = None
    if tape_span is not None:
        tsegs, tnorms, tape_endpoints = _tape_interface(xs, ys, tape_span, nid)
        isegs = np.vstack([isegs, tsegs]) if len(isegs) else tsegs
        inorms = np.vstack([inorms, tnorms]) if len(itags) else tnorms
        itags = np.concatenate([itags, np.full(len(tsegs), int(Interface.GAMMA_W))])

    dx = np.diff(xs).max()
    dy = np.diff(ys).max()
    mesh = Mesh2D(nodes, tris, tri_region, bsegs, btags,
                  isegs if len(isegs) else np.empty((0, 2), dtype=np.int64),
                  itags if len(itags) else np.empty(0, dtype=np.int64),
                  inorms if len(isegs) else np.empty((0, 2)),
                  delta=max(dx, dy), w=w, tape_endpoints=tape_endpoints)
    return mesh.validate()


def _conductor_interface(xs, ys, cell_region, nid):
    """Chain grid edges separating conductor cells from the rest into
    closed counterclockwise loops (one per conductor component)."""
    nx, ny = len(xs), len(ys)
    ncx, ncy = nx - 1, ny - 1
    reg = cell_region.reshape(ncx, ncy)
    sc = reg == int(Region.OMEGA_H_SC)

    # oriented segments keyed by start node; conductor kept on the left
    seg_from = {}
    for i in range(ncx):
        for j in range(ncy):
            if not sc[i, j]:
                continue
            if j == 0 or not sc[i, j - 1]:      # bottom edge, walk +x
                seg_from[nid(i, j)] = (nid(i + 1, j), (0.0, -1.0))
            if j == ncy - 1 or not sc[i, j + 1]:  # top edge, walk -x
                seg_from[nid(i + 1, j + 1)] = (nid(i, j + 1), (0.0, 1.0))
            if i == 0 or not sc[i - 1, j]:      # left edge, walk -y
                seg_from[nid(i, j + 1)] = (nid(i, j), (-1.0, 0.0))
            if i == ncx - 1 or not sc[i + 1, j]:  # right edge, walk +y
                seg_from[nid(i + 1, j)] = (nid(i + 1, j + 1), (1.0, 0.0))

    segs, norms = [], []
    remaining = dict(seg_from)
    while remaining:
        start = min(remaining)
        node = start
        while True:
            nxt, nrm = remaining.pop(node)
            segs.append((node, nxt))
            norms.append(nrm)
            node = nxt
            if node == start:
                break
    if not segs:
        return (np.empty((0, 2), dtype=np.int64), np.empty(0, dtype=np.int64),
                np.empty((0, 2)))
    segs = np.array(segs, dtype=np.int64)
    tags = np.full(len(segs), int(Interface.GAMMA_M), dtype=np.int64)
    return segs, tags, np.array(norms)


def _tape_interface(xs, ys, tape_span, nid):
    x0, x1, y = tape_span
    j = int(np.argmin(np.abs(ys - y)))
    cols = np.flatnonzero((xs >= x0 - 1e-12) & (xs <= x1 + 1e-12))
    segs = np.column_stack([[nid(i, j) for i in cols[:-1]],
                            [nid(i, j) for i in cols[1:]]]).astype(np.int64)
    norms = np.tile([0.0, 1.0], (len(segs), 1))
    endpoints = {"minus": int(nid(cols[0], j)), "plus": int(nid(cols[-1], j))}
    return segs, norms, endpoints


def build_stacked_bar_mesh(params: GeometryParams) -> Mesh2D:
    """Superconducting bar below, ferromagnetic bar above, in air.

    The bars are ``bar_width`` wide and ``bar_height`` tall, stacked
    at y = 0 and centered in a square air box of half-size
    ``air_half``.  The conductor boundary is tagged GAMMA_M and the
    outer boundary GAMMA_E.
    """
    if params.scenario is not Scenario.STACKED_BAR:
        raise MeshError("params.scenario must be STACKED_BAR")
    hw, hb, L = params.bar_width / 2.0, params.bar_height, params.air_half
    if L <= hw or L <= hb:
        raise MeshError("air box must enclose the bars")
    n_across = math.floor(hb / params.delta + 1e-9)
    if n_across < params.min_elements_across:
        raise UnderResolvedError(
            f"delta={params.delta} resolves the bar height with "
            f"{n_across} < {params.min_elements_across} elements")

    def region(x, y):
        if -hw < x < hw and -hb < y < 0.0:
            return Region.OMEGA_H_SC
        if -hw < x < hw and 0.0 < y < hb:
            return Region.OMEGA_A_FERRO
        return Region.OMEGA_A_AIR

    return _structured_mesh([-L, -hw, hw, L], [-L, -hb, 0.0, hb, L],
                            params.delta, region)


def build_tape_mesh(params: GeometryParams) -> Mesh2D:
    """Thin tape as an interior GAMMA_W polyline in an air box.

    The tape spans ``tape_width`` horizontally at y = 0; its thickness
    ``tape_thickness`` is stored on the mesh, not represented
    geometrically.  The tape 1D mesh is uniform by construction.
    """
    if params.scenario is not Scenario.SINGLE_TAPE:
        raise MeshError("params.scenario must be SINGLE_TAPE")
    hw, L = params.tape_width / 2.0, params.air_half
    if L <= hw:
        raise MeshError("air box must enclose the tape")
    n_along = math.floor(params.tape_width / params.delta + 1e-9)
    if n_along < params.min_elements_across:
        raise UnderResolvedError(
            f"delta={params.delta} resolves the tape width with "
            f"{n_along} < {params.min_elements_across} elements")

    mesh = _structured_mesh([-L, -hw, hw, L], [-L, 0.0, L], params.delta,
                            lambda x, y: Region.OMEGA_A_AIR,
                            w=params.tape_thickness, tape_span=(-hw, hw, 0.0))
    return mesh


def refine(mesh: Mesh2D) -> Mesh2D:
    """Uniform refinement: each triangle into 4 via edge midpoints,
    each tagged segment into 2.  All tags and markers are inherited and
    the characteristic size halves exactly."""
    edges = mesh.edges
    mids = 0.5 * (mesh.nodes[edges[:, 0]] + mesh.nodes[edges[:, 1]])
    nodes = np.vstack([mesh.nodes, mids])
    off = mesh.n_nodes

    t = mesh.triangles
    m01 = off + mesh.tri_edges[:, 0]
    m12 = off + mesh.tri_edges[:, 1]
    m20 = off + mesh.tri_edges[:, 2]
    tris = np.empty((4 * len(t), 3), dtype=np.int64)
    tris[0::4] = np.column_stack([t[:, 0], m01, m20])
    tris[1::4] = np.column_stack([t[:, 1], m12, m01])
    tris[2::4] = np.column_stack([t[:, 2], m20, m12])
    tris[3::4] = np.column_stack([m01, m12, m20])
    tri_region = np.repeat(mesh.tri_region, 4)

    def split(segs):
        if len(segs) == 0:
            return np.empty((0, 2), dtype=np.int64)
        mid = off + mesh.edge_ids(segs)
        out = np.empty((2 * len(segs), 2), dtype=np.int64)
        out[0::2] = np.column_stack([segs[:, 0], mid])
        out[1::2] = np.column_stack([mid, segs[:, 1]])
        return out

    bsegs = split(mesh.boundary_segments)
    btags = np.repeat(mesh.boundary_tags, 2)
    isegs = split(mesh.interface_segments)
    itags = np.repeat(mesh.interface_tags, 2)
    inorms = np.repeat(mesh.interface_normals, 2, axis=0)

    out = Mesh2D(nodes, tris, tri_region, bsegs, btags, isegs, itags, inorms,
                 delta=mesh.delta / 2.0, w=mesh.w,
                 tape_endpoints=None if mesh.tape_endpoints is None
                 else dict(mesh.tape_endpoints))
    return out.validate()


# -- file formats --------------------------------------------------------------


def write_native(mesh: Mesh2D, path):
    """Write the native ASCII mesh format ($Nodes/$Triangles/$Segments/$Meta)."""
    lines = ["$Nodes", str(mesh.n_nodes)]
    for i, (x, y) in enumerate(mesh.nodes):
        lines.append(f"{i} {x:.17g} {y:.17g}")
    lines += ["$EndNodes", "$Triangles", str(mesh.n_triangles)]
    for i, (t, r) in enumerate(zip(mesh.triangles, mesh.tri_region)):
        lines.append(f"{i} {t[0]} {t[1]} {t[2]} {r}")
    lines += ["$EndTriangles", "$Segments",
              str(len(mesh.boundary_segments) + len(mesh.interface_segments))]
    k = 0
    for seg, tag in zip(mesh.boundary_segments, mesh.boundary_tags):
        lines.append(f"{k} {seg[0]} {seg[1]} {tag}")
        k += 1
    for seg, tag in zip(mesh.interface_segments, mesh.interface_tags):
        lines.append(f"{k} {seg[0]} {seg[1]} {tag}")
        k += 1
    lines += ["$EndSegments", "$Meta"]
    lines.append(f"delta {mesh.delta:.17g}")
    if mesh.w is not None:
        lines.append(f"w {mesh.w:.17g}")
    if mesh.tape_endpoints is not None:
        lines.append(f"dgw_minus {mesh.tape_endpoints['minus']}")
        lines.append(f"dgw_plus {mesh.tape_endpoints['plus']}")
    lines.append("$EndMeta")
    Path(path).write_text("\n".join(lines) + "\n")


def read_native(path) -> Mesh2D:
    text = Path(path).read_text().split("\n")
    it = iter(text)

    def until(tag):
        for line in it:
            if line.strip() == tag:
                return
        raise MeshError(f"section {tag} missing")

    until("$Nodes")
    n = int(next(it))
    nodes = np.empty((n, 2))
    for _ in range(n):
        i, x, y = next(it).split()
        nodes[int(i)] = (float(x), float(y))
    until("$Triangles")
    n = int(next(it))
    tris = np.empty((n, 3), dtype=np.int64)
    regions = np.empty(n, dtype=np.int64)
    for _ in range(n):
        i, a, b, c, r = next(it).split()
        tris[int(i)] = (int(a), int(b), int(c))
        regions[int(i)] = int(r)
    until("$Segments")
    n = int(next(it))
    segs = np.empty((n, 2), dtype=np.int64)
    tags = np.empty(n, dtype=np.int64)
    for _ in range(n):
        i, a, b, t = next(it).split()
        segs[int(i)] = (int(a), int(b))
        tags[int(i)] = int(t)
    until("$Meta")
    meta = {}
    for line in it:
        if line.strip() == "$EndMeta":
            break
        key, val = line.split()
        meta[key] = val
    return _assemble_imported(nodes, tris, regions, segs, tags, meta)


def read_msh22(path, w=None) -> Mesh2D:
    """Import the MSH v2.2 ASCII subset: $Nodes plus $Elements of type 1
    (2-node line) and 2 (3-node triangle) carrying physical tags that
    follow this package's Region/Boundary/Interface numbering."""
    text = Path(path).read_text().split("\n")
    it = iter(text)
    nodes = None
    lines_, tris_, ltags, ttags = [], [], [], []
    id_map = {}
    for line in it:
        s = line.strip()
        if s == "$MeshFormat":
            ver = next(it).split()[0]
            if not ver.startswith("2.2"):
                raise MeshError(f"unsupported MSH version {ver}")
        elif s == "$Nodes":
            n = int(next(it))
            nodes = np.empty((n, 2))
            for k in range(n):
                parts = next(it).split()
                id_map[int(parts[0])] = k
                nodes[k] = (float(parts[1]), float(parts[2]))
        elif s == "$Elements":
            n = int(next(it))
            for _ in range(n):
                parts = [int(p) for p in next(it).split()]
                etype, ntags = parts[1], parts[2]
                phys = parts[3] if ntags >= 1 else 0
                conn = parts[3 + ntags:]
                if etype == 1:
                    lines_.append([id_map[c] for c in conn])
                    ltags.append(phys)
                elif etype == 2:
                    tris_.append([id_map[c] for c in conn])
                    ttags.append(phys)
    if nodes is None or not tris_:
        raise MeshError("MSH file lacks nodes or triangles")
    meta = {}
    if w is not None:
        meta["w"] = w
    return _assemble_imported(np.asarray(nodes), np.asarray(tris_, dtype=np.int64),
                              np.asarray(ttags, dtype=np.int64),
                              np.asarray(lines_, dtype=np.int64).reshape(-1, 2),
                              np.asarray(ltags, dtype=np.int64), meta)


def _assemble_imported(nodes, tris, regions, segs, tags, meta):
    # enforce CCW orientation
    d1 = nodes[tris[:, 1]] - nodes[tris[:, 0]]
    d2 = nodes[tris[:, 2]] - nodes[tris[:, 0]]
    flip = (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]) < 0
    tris[flip] = tris[flip][:, [0, 2, 1]]

    b_mask = np.isin(tags, [int(Boundary.GAMMA_E), int(Boundary.GAMMA_H)])
    bsegs, btags = segs[b_mask], tags[b_mask]
    isegs_raw, itags_raw = segs[~b_mask], tags[~b_mask]

    isegs, itags, inorms = [], [], []
    tape_endpoints = None
    for tag in sorted(set(int(t) for t in itags_raw)):
        chain = _chain_polyline(isegs_raw[itags_raw == tag], nodes)
        if tag == int(Interface.GAMMA_M):
            chain = _orient_gamma_m(chain, nodes, tris, regions)
        for a, b in chain:
            t = nodes[b] - nodes[a]
            t = t / np.hypot(*t)
            if tag == int(Interface.GAMMA_M):
                inorms.append((t[1], -t[0]))    # conductor on the left
            else:
                inorms.append((-t[1], t[0]))    # z-hat cross t-hat
            isegs.append((a, b))
            itags.append(tag)
        if tag == int(Interface.GAMMA_W):
            tape_endpoints = {"minus": int(chain[0][0]), "plus": int(chain[-1][1])}
    if "dgw_minus" in meta:
        tape_endpoints = {"minus": int(meta["dgw_minus"]), "plus": int(meta["dgw_plus"])}

    if "delta" in meta:
        delta = float(meta["delta"])
    else:
        e = np.vstack([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
        d = nodes[e[:, 1]] - nodes[e[:, 0]]
        delta = float(np.hypot(d[:, 0], d[:, 1]).max())
    mesh = Mesh2D(nodes, tris, regions, bsegs, btags,
                  np.asarray(isegs, dtype=np.int64).reshape(-1, 2),
                  np.asarray(itags, dtype=np.int64),
                  np.asarray(inorms, dtype=float).reshape(-1, 2),
                  delta=delta, w=float(meta["w"]) if "w" in meta else None,
                  tape_endpoints=tape_endpoints)
    return mesh.validate()


def _chain_polyline(segs, nodes):
    """Order unoriented segments into a single chain (open or closed)."""
    if len(segs) == 0:
        return []
    adj = {}
    for a, b in segs:
        adj.setdefault(int(a), []).append(int(b))
        adj.setdefault(int(b), []).append(int(a))
    ends = sorted(n for n, ns in adj.items() if len(ns) == 1)
    if ends:
        # open chain: start at the lexicographically smaller endpoint
        coords = nodes[ends]
        start = ends[int(np.lexsort((coords[:, 1], coords[:, 0]))[0])]
    else:
        start = min(adj)
    chain, prev, node = [], None, start
    for _ in range(len(segs)):
        nbrs = [n for n in adj[node] if n != prev]
        nxt = nbrs[0] if nbrs else adj[node][0]
        chain.append((node, nxt))
        prev, node = node, nxt
    return chain


def _orient_gamma_m(chain, nodes, tris, regions):
    """Flip a closed conductor loop so the conductor lies on its left."""
    sc = tris[regions == int(Region.OMEGA_H_SC)]
    cx = nodes[sc].mean(axis=(0, 1))
    area2 = 0.0
    for a, b in chain:
        area2 += (nodes[a][0] - cx[0]) * (nodes[b][1] - cx[1]) \
            - (nodes[a][1] - cx[1]) * (nodes[b][0] - cx[0])
    if area2 < 0:
        chain = [(b, a) for a, b in reversed(chain)]
    return chain
