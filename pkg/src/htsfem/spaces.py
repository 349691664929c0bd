"""Discrete function spaces for the coupled formulations.

Three families are built on a shared DOF bookkeeping:

* ``H``: edge functions on the interior of each conducting component,
  gradients of nodal hats on the component boundary, one net-current
  degree of freedom per component carried by a cut function, and
  (order 2) gradients of edge bubbles on the coupling boundary.
* ``A``: one out-of-plane nodal value per node of the a-side domain,
  plus (order 2) one bubble per coupling-interface edge.
* ``T``: one nodal value per interior tape node, the plus-end value as
  a per-tape global degree of freedom, plus (order 2) one bubble per
  tape segment.  The minus end is fixed to zero strongly.

Degrees of freedom are numbered nodes, then edges, then bubbles, then
globals, so assembled matrices are reproducible.  Essential values are
applied by symmetric elimination downstream; here each constrained
degree of freedom carries its build-time value.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from ._geom import tri_geometry
from .mesh import Interface, Mesh2D, Region


class TopologyError(ValueError):
    """Conductor topology not supported by the cut construction."""


class SpaceError(ValueError):
    """Inconsistent space construction input."""


@dataclass(frozen=True)
class CutBasis:
    """Net-current basis function of one conducting component.

    ``edge_coeffs`` expresses the function as a sum of Whitney edge
    functions (canonical min-to-max node orientation); its support is
    the one-triangle-thick layer along the component boundary.  The
    circulation along the boundary loop equals one.
    """

    conductor_id: int
    layer_tris: np.ndarray
    edge_coeffs: dict


@dataclass(frozen=True)
class Conductor:
    id: int
    tris: np.ndarray
    ring_segments: np.ndarray      # ordered (start, end) pairs, ccw
    ring_nodes: np.ndarray         # loop order, = ring_segments[:, 0]
    ring_edge_ids: np.ndarray
    ring_edge_signs: np.ndarray    # +1 if canonical edge dir follows the loop
    cut: CutBasis
    ground_node: int
    mode: str                      # "current" | "voltage"
    value: float


@dataclass(frozen=True)
class Tape:
    id: int
    chain_nodes: np.ndarray        # ordered minus -> plus
    segments: np.ndarray
    minus: int
    plus: int
    mode: str
    value: float


class DofSpace:
    """Discrete space: DOF table, essential constraints, free indexing."""

    def __init__(self, family, enrichment, mesh, entries, essential, meta):
        self.family = family
        self.enrichment = int(enrichment)
        self.mesh = mesh
        self.entries = list(entries)
        self.index = {ent: k for k, ent in enumerate(self.entries)}
        self.essential = dict(essential)
        self.meta = meta
        self.n_dofs = len(self.entries)
        self.free = np.array([k for k in range(self.n_dofs)
                              if k not in self.essential], dtype=np.int64)
        self.n_free = len(self.free)
        self.full_to_free = np.full(self.n_dofs, -1, dtype=np.int64)
        self.full_to_free[self.free] = np.arange(self.n_free)

    def dof(self, kind, entity) -> int:
        return self.index[(kind, int(entity))]

    def essential_full(self) -> np.ndarray:
        """Full-length vector with build-time essential values."""
        x = np.zeros(self.n_dofs)
        for k, v in self.essential.items():
            x[k] = v
        return x

    def expand(self, x_free, x_essential=None) -> np.ndarray:
        """Scatter a free-DOF vector into a full-length vector."""
        x = self.essential_full() if x_essential is None else x_essential.copy()
        x[self.free] = x_free
        return x

    def dump_dof_table(self, path):
        """CSV dump: entityKind, entityId, dofIndex, essentialValue."""
        lines = ["entityKind,entityId,dofIndex,essentialValue"]
        for k, (kind, ent) in enumerate(self.entries):
            ess = f"{self.essential[k]:.17g}" if k in self.essential else ""
            lines.append(f"{kind},{ent},{k},{ess}")
        with open(path, "w") as f:
            f.write("\n".join(lines) + "\n")


# -- conductor discovery and cut construction ----------------------------------


def _conductor_components(mesh: Mesh2D):
    """Connected components of the conducting region, ordered by their
    smallest triangle index."""
    sc = mesh.region_tris(Region.OMEGA_H_SC)
    if len(sc) == 0:
        return []
    pos = {int(t): k for k, t in enumerate(sc)}
    rows, cols = [], []
    for eid in np.unique(mesh.tri_edges[sc].ravel()):
        t0, t1 = mesh.edge_tris[eid]
        if t0 in pos and t1 in pos:
            rows.append(pos[t0])
            cols.append(pos[t1])
    adj = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(sc),) * 2)
    n_comp, labels = connected_components(adj, directed=False)
    comps = [sc[labels == c] for c in range(n_comp)]
    comps.sort(key=lambda tris: int(tris.min()))
    return comps


def _ring_loops(mesh: Mesh2D):
    """Split the ordered GAMMA_M polyline into its closed loops."""
    segs, _ = mesh.interface(Interface.GAMMA_M)
    loops, start = [], 0
    for k in range(len(segs)):
        if segs[k, 1] == segs[start, 0]:
            loops.append(segs[start:k + 1])
            start = k + 1
    if start != len(segs):
        raise TopologyError("GAMMA_M does not decompose into closed loops")
    return loops


def build_cut_function(mesh: Mesh2D, conductor_id: int) -> CutBasis:
    """Cut function of a conducting component: uniform coefficients of
    1/B on the B oriented boundary-loop edges.  Its circulation along
    the component boundary is one; around any other conductor it is
    zero; its curl vanishes outside the boundary triangle layer."""
    comps = _conductor_components(mesh)
    if conductor_id >= len(comps):
        raise TopologyError(f"no conductor {conductor_id}")
    tris = comps[conductor_id]

    # simple connectedness via Euler characteristic V - E + F = 1
    nodes = np.unique(mesh.triangles[tris])
    edges = np.unique(mesh.tri_edges[tris])
    if len(nodes) - len(edges) + len(tris) != 1:
        raise TopologyError("conductor is not simply connected")

    loop = _loop_of_component(mesh, tris)
    eids = mesh.edge_ids(loop)
    signs = np.where(loop[:, 0] < loop[:, 1], 1.0, -1.0)
    coeffs = {int(e): float(s) / len(loop) for e, s in zip(eids, signs)}
    layer = np.unique(mesh.edge_tris[eids].ravel())
    layer = layer[(layer >= 0) & np.isin(layer, tris)]
    return CutBasis(conductor_id, layer, coeffs)


def _loop_of_component(mesh, tris):
    tri_set = set(int(t) for t in tris)
    for loop in _ring_loops(mesh):
        t0, t1 = mesh.edge_tris[mesh.edge_ids(loop[:1])[0]]
        if int(t0) in tri_set or int(t1) in tri_set:
            return loop
    raise TopologyError("component has no GAMMA_M boundary loop")


# -- space builders ------------------------------------------------------------


def build_h_space(mesh: Mesh2D, enrichment: int = 1, circuit=None) -> DofSpace:
    """Magnetic-field space on the conducting domain.

    ``circuit`` maps conductor component ids to ("current", I) or
    ("voltage", V); unlisted conductors default to zero imposed
    current.  One boundary-potential node per component is grounded to
    remove the constant-potential redundancy of the decomposition.
    """
    comps = _conductor_components(mesh)
    if not comps:
        raise SpaceError("mesh has no conducting region")
    circuit = dict(circuit or {})

    conductors = []
    ring_node_set, ring_edge_set = set(), set()
    for cid, tris in enumerate(comps):
        cut = build_cut_function(mesh, cid)
        loop = _loop_of_component(mesh, tris)
        eids = mesh.edge_ids(loop)
        signs = np.where(loop[:, 0] < loop[:, 1], 1.0, -1.0)
        mode, value = circuit.get(cid, ("current", 0.0))
        if mode not in ("current", "voltage"):
            raise SpaceError(f"unknown circuit mode {mode!r}")
        conductors.append(Conductor(
            id=cid, tris=tris, ring_segments=loop, ring_nodes=loop[:, 0],
            ring_edge_ids=eids, ring_edge_signs=signs, cut=cut,
            ground_node=int(loop[:, 0].min()), mode=mode, value=value))
        ring_node_set.update(int(n) for n in loop[:, 0])
        ring_edge_set.update(int(e) for e in eids)

    sc_tris = np.concatenate(comps)
    sc_edges = np.unique(mesh.tri_edges[sc_tris])
    interior_edges = np.array(sorted(set(int(e) for e in sc_edges) - ring_edge_set),
                              dtype=np.int64)

    entries = [("node", n) for n in sorted(ring_node_set)]
    entries += [("edge", int(e)) for e in interior_edges]
    if enrichment == 2:
        entries += [("bubble", int(e)) for e in sorted(ring_edge_set)]
    entries += [("global", c.id) for c in conductors]

    space = DofSpace("H", enrichment, mesh, entries, {}, {
        "conductors": conductors,
        "sc_tris": sc_tris,
        "interior_edges": interior_edges,
        "interface_tag": Interface.GAMMA_M,
    })
    essential = {}
    for c in conductors:
        essential[space.dof("node", c.ground_node)] = 0.0
        if c.mode == "current":
            essential[space.dof("global", c.id)] = c.value
    return DofSpace("H", enrichment, mesh, entries, essential, space.meta)


def build_a_space(mesh: Mesh2D, enrichment: int = 1, interface_tag=None,
                  a_trace=None) -> DofSpace:
    """Vector-potential space on the a-side domain (ferromagnet + air).

    ``a_trace(x, y)`` supplies the essential trace on the outer
    boundary; None means zero.  At order 2 one bubble is added per edge
    of the coupling interface given by ``interface_tag``.
    """
    a_tris = np.concatenate([mesh.region_tris(Region.OMEGA_A_FERRO),
                             mesh.region_tris(Region.OMEGA_A_AIR)])
    if len(a_tris) == 0:
        raise SpaceError("mesh has no a-side region")
    a_nodes = np.unique(mesh.triangles[a_tris])

    if interface_tag is None:
        tags = np.unique(mesh.interface_tags)
        if len(tags) != 1:
            raise SpaceError("interface_tag required when mesh has several interfaces")
        interface_tag = Interface(int(tags[0]))
    segs, _ = mesh.interface(interface_tag)
    if len(segs) == 0:
        raise SpaceError(f"mesh has no {interface_tag} interface")
    bubble_edges = np.sort(mesh.edge_ids(segs)) if enrichment == 2 else \
        np.empty(0, dtype=np.int64)

    entries = [("node", int(n)) for n in a_nodes]
    entries += [("bubble", int(e)) for e in bubble_edges]

    from .mesh import Boundary
    gamma_e = mesh.boundary_nodes(Boundary.GAMMA_E)
    gamma_e = gamma_e[np.isin(gamma_e, a_nodes)]
    space = DofSpace("A", enrichment, mesh, entries, {}, {
        "interface_tag": Interface(int(interface_tag)),
        "a_tris": a_tris,
        "a_nodes": a_nodes,
        "bubble_edges": bubble_edges,
        "gamma_e_nodes": gamma_e,
    })
    essential = {}
    for n in gamma_e:
        x, y = mesh.nodes[n]
        essential[space.dof("node", n)] = 0.0 if a_trace is None else float(a_trace(x, y))
    return DofSpace("A", enrichment, mesh, entries, essential, space.meta)


def build_t_space(mesh: Mesh2D, enrichment: int = 1, constraints=None) -> DofSpace:
    """Current-potential space on the tape polyline(s).

    ``constraints`` maps tape ids to ("current", I) or ("voltage", V);
    a tape must have exactly one of the two.  The minus end is fixed to
    zero strongly; a current constraint fixes the plus-end value to
    I/w, a voltage constraint leaves it free.
    """
    segs, _ = mesh.interface(Interface.GAMMA_W)
    if len(segs) == 0:
        raise SpaceError("mesh has no GAMMA_W interface")
    if mesh.w is None:
        raise SpaceError("tape mesh must store a thickness w")
    constraints = dict(constraints or {})

    # split ordered segments into chains (one per tape)
    chains, start = [], 0
    for k in range(len(segs)):
        if k + 1 == len(segs) or segs[k + 1, 0] != segs[k, 1]:
            chains.append(segs[start:k + 1])
            start = k + 1

    tapes, interior = [], set()
    for tid, chain in enumerate(chains):
        spec = constraints.get(tid, ("current", 0.0))
        if isinstance(spec, (list, tuple)) and len(spec) == 2:
            mode, value = spec
        else:
            raise SpaceError("tape constraint must be (mode, value)")
        if mode not in ("current", "voltage"):
            raise SpaceError(f"unknown tape constraint {mode!r}")
        nodes = np.concatenate([chain[:, 0], chain[-1:, 1]])
        tapes.append(Tape(tid, nodes, chain, int(nodes[0]), int(nodes[-1]),
                          mode, float(value)))
        interior.update(int(n) for n in nodes[1:-1])

    entries = [("node", n) for n in sorted(interior)]
    if enrichment == 2:
        entries += [("bubble", int(e)) for e in np.sort(mesh.edge_ids(segs))]
    entries += [("global", t.id) for t in tapes]

    space = DofSpace("T", enrichment, mesh, entries, {}, {
        "tapes": tapes,
        "interface_tag": Interface.GAMMA_W,
    })
    essential = {}
    for t in tapes:
        if t.mode == "current":
            essential[space.dof("global", t.id)] = t.value / mesh.w
    return DofSpace("T", enrichment, mesh, entries, essential, space.meta)


def essential_vector(space: DofSpace, *, currents=None, a_trace=None) -> np.ndarray:
    """Full-length essential-value vector for updated sources.

    ``currents`` maps conductor/tape ids to imposed net currents;
    ``a_trace(x, y)`` overrides the outer-boundary trace of an A space.
    Topology (which DOFs are constrained) is fixed at build time.
    """
    x = space.essential_full()
    if space.family == "H" and currents is not None:
        for c in space.meta["conductors"]:
            if c.mode == "current" and c.id in currents:
                x[space.dof("global", c.id)] = currents[c.id]
    if space.family == "T" and currents is not None:
        for t in space.meta["tapes"]:
            if t.mode == "current" and t.id in currents:
                x[space.dof("global", t.id)] = currents[t.id] / space.mesh.w
    if space.family == "A" and a_trace is not None:
        for n in space.meta["gamma_e_nodes"]:
            px, py = space.mesh.nodes[n]
            x[space.dof("node", n)] = a_trace(px, py)
    return x


# -- interface trace machinery --------------------------------------------------


def interface_chain(space: DofSpace, interface_tag=None):
    """Ordered interface segments, lengths and cumulative arclength."""
    tag = interface_tag if interface_tag is not None else space.meta["interface_tag"]
    segs, normals = space.mesh.interface(tag)
    lens = space.mesh.segment_lengths(segs)
    cum = np.concatenate([[0.0], np.cumsum(lens)])
    return segs, normals, lens, cum


def trace_functions(space: DofSpace, seg_idx: int, interface_tag=None):
    """Local trace basis on one interface segment.

    Returns a list of (dof, f) where f(u) evaluates the coupling trace
    at local coordinate u in [0, 1] along the oriented segment:
    the z-component of n x h for H spaces, the potential value for A
    spaces and the surface-current density curl t for T spaces.
    """
    segs, _, lens, _ = interface_chain(space, interface_tag)
    a, b = int(segs[seg_idx, 0]), int(segs[seg_idx, 1])
    L = lens[seg_idx]
    out = []
    if space.family == "H":
        for node, f in ((a, lambda u: -1.0 / L), (b, lambda u: 1.0 / L)):
            key = ("node", node)
            if key in space.index:
                out.append((space.index[key], f))
        eid = int(space.mesh.edge_ids(segs[seg_idx:seg_idx + 1])[0])
        if space.enrichment == 2:
            out.append((space.dof("bubble", eid),
                        lambda u: (1.0 - 2.0 * u) / L))
        for c in space.meta["conductors"]:
            coeff = c.cut.edge_coeffs.get(eid)
            if coeff is not None:
                sgn = 1.0 if a < b else -1.0
                val = coeff * sgn / L
                out.append((space.dof("global", c.id), lambda u, v=val: v))
    elif space.family == "A":
        for node, f in ((a, lambda u: 1.0 - u), (b, lambda u: u)):
            key = ("node", node)
            if key in space.index:
                out.append((space.index[key], f))
        if space.enrichment == 2:
            eid = int(space.mesh.edge_ids(segs[seg_idx:seg_idx + 1])[0])
            out.append((space.dof("bubble", eid), lambda u: u * (1.0 - u)))
    elif space.family == "T":
        for node, f in ((a, lambda u: -1.0 / L), (b, lambda u: 1.0 / L)):
            key = ("node", node)
            if key in space.index:
                out.append((space.index[key], f))
            else:
                for t in space.meta["tapes"]:
                    if node == t.plus:
                        out.append((space.dof("global", t.id), f))
        if space.enrichment == 2:
            eid = int(space.mesh.edge_ids(segs[seg_idx:seg_idx + 1])[0])
            out.append((space.dof("bubble", eid),
                        lambda u: (1.0 - 2.0 * u) / L))
    return out


def eval_trace(space: DofSpace, coeffs, interface_tag, s):
    """Interface trace at arclength s (scalar or array) along the
    oriented interface polyline; ``coeffs`` is a full-length vector."""
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape != (space.n_dofs,):
        raise SpaceError("coefficient vector does not match the space")
    segs, _, lens, cum = interface_chain(space, interface_tag)
    s_arr = np.atleast_1d(np.asarray(s, dtype=float))
    if np.any(s_arr < -1e-12) or np.any(s_arr > cum[-1] + 1e-12):
        raise SpaceError("arclength outside the interface")
    s_arr = np.clip(s_arr, 0.0, cum[-1])
    ks = np.minimum(np.searchsorted(cum, s_arr, side="right") - 1, len(segs) - 1)
    out = np.zeros_like(s_arr)
    for i, (k, sv) in enumerate(zip(ks, s_arr)):
        u = (sv - cum[k]) / lens[k]
        out[i] = sum(coeffs[dof] * f(u) for dof, f in trace_functions(space, int(k), interface_tag))
    return out if np.ndim(s) else float(out[0])


# -- field evaluation ------------------------------------------------------------


def whitney_transform(space: DofSpace):
    """Sparse map from H-space coefficients to Whitney edge circulations.

    Returns (sc_edge_ids, C) where C has one row per canonical
    (min, max) oriented edge of the conducting region and one column
    per degree of freedom.  Edge DOFs map identically; a node DOF n
    contributes the potential difference of its hat on each incident
    edge; the cut carries its stored edge coefficients.  Bubble
    gradients are outside the lowest-order span and have zero columns.
    """
    if space.family != "H":
        raise SpaceError("whitney expansion applies to H spaces")
    cached = getattr(space, "_whitney_transform", None)
    if cached is not None:
        return cached
    mesh = space.mesh
    sc_edges = np.unique(mesh.tri_edges[space.meta["sc_tris"]])
    rows, cols, data = [], [], []
    for pos, eid in enumerate(sc_edges):
        a, b = (int(v) for v in mesh.edges[eid])
        for node, sgn in ((a, -1.0), (b, 1.0)):
            dof = space.index.get(("node", node))
            if dof is not None:
                rows.append(pos)
                cols.append(dof)
                data.append(sgn)
        dof = space.index.get(("edge", int(eid)))
        if dof is not None:
            rows.append(pos)
            cols.append(dof)
            data.append(1.0)
    epos = {int(e): k for k, e in enumerate(sc_edges)}
    for c in space.meta["conductors"]:
        dof = space.dof("global", c.id)
        for eid, cc in sorted(c.cut.edge_coeffs.items()):
            rows.append(epos[eid])
            cols.append(dof)
            data.append(cc)
    C = coo_matrix((data, (rows, cols)), shape=(len(sc_edges), space.n_dofs)).tocsr()
    space._whitney_transform = (sc_edges, C)
    return sc_edges, C


def whitney_edge_coefficients(space: DofSpace, coeffs) -> tuple[np.ndarray, np.ndarray]:
    """Whitney edge circulations of the lowest-order part of an H field."""
    sc_edges, C = whitney_transform(space)
    return sc_edges, C @ np.asarray(coeffs, dtype=float)


def elementwise_curl_h(space: DofSpace, coeffs) -> tuple[np.ndarray, np.ndarray]:
    """Out-of-plane curl of an H-space field per conducting triangle.

    Returns (tri_ids, curl values).  Gradient-type contributions (node
    potentials and bubbles) are exactly curl-free and never enter."""
    mesh = space.mesh
    tris = space.meta["sc_tris"]
    sc_edges, vals = whitney_edge_coefficients(space, coeffs)
    pos = np.full(len(mesh.edges), -1, dtype=np.int64)
    pos[sc_edges] = np.arange(len(sc_edges))
    areas, grads = tri_geometry(mesh, tris)
    curl = np.zeros(len(tris))
    locals_ = ((0, 1), (1, 2), (2, 0))
    for le, (i, j) in enumerate(locals_):
        eids = mesh.tri_edges[tris, le]
        na, nb = mesh.triangles[tris, i], mesh.triangles[tris, j]
        sgn = np.where(na < nb, 1.0, -1.0)
        cross = 2.0 * (grads[:, i, 0] * grads[:, j, 1]
                       - grads[:, i, 1] * grads[:, j, 0])
        curl += vals[pos[eids]] * sgn * cross
    return tris, curl


def eval_h_field(space: DofSpace, coeffs, tri_id: int, bary,
                 _expanded=None) -> np.ndarray:
    """Vector value of an H-space field at barycentric point(s) of one
    conducting triangle; bary has shape (..., 3).  ``_expanded`` may
    pass a precomputed result of :func:`whitney_edge_coefficients`."""
    mesh = space.mesh
    bary = np.atleast_2d(np.asarray(bary, dtype=float))
    areas, grads = tri_geometry(mesh, np.array([tri_id]))
    g = grads[0]
    tri = mesh.triangles[tri_id]
    sc_edges, vals = _expanded if _expanded is not None else \
        whitney_edge_coefficients(space, coeffs)
    pos = {int(e): k for k, e in enumerate(sc_edges)}
    out = np.zeros(bary.shape[:-1] + (2,))
    for le, (i, j) in enumerate(((0, 1), (1, 2), (2, 0))):
        eid = int(mesh.tri_edges[tri_id, le])
        na, nb = int(tri[i]), int(tri[j])
        sgn = 1.0 if na < nb else -1.0
        c = vals[pos[eid]] * sgn
        out += c * (bary[..., i, None] * g[j] - bary[..., j, None] * g[i])
    if space.enrichment == 2:
        for le, (i, j) in enumerate(((0, 1), (1, 2), (2, 0))):
            key = ("bubble", int(mesh.tri_edges[tri_id, le]))
            if key in space.index:
                c = coeffs[space.index[key]]
                out += c * (bary[..., i, None] * g[j] + bary[..., j, None] * g[i])
    return out


def eval_a_curl(space: DofSpace, coeffs, tri_id: int, bary) -> np.ndarray:
    """Flux density b = curl(a z-hat) at barycentric point(s) of one
    a-side triangle: (da/dy, -da/dx)."""
    mesh = space.mesh
    bary = np.atleast_2d(np.asarray(bary, dtype=float))
    areas, grads = tri_geometry(mesh, np.array([tri_id]))
    g = grads[0]
    tri = mesh.triangles[tri_id]
    grad_a = np.zeros(bary.shape[:-1] + (2,))
    for i in range(3):
        key = ("node", int(tri[i]))
        if key in space.index:
            grad_a += coeffs[space.index[key]] * np.broadcast_to(g[i], grad_a.shape)
    if space.enrichment == 2:
        for le, (i, j) in enumerate(((0, 1), (1, 2), (2, 0))):
            key = ("bubble", int(mesh.tri_edges[tri_id, le]))
            if key in space.index:
                c = coeffs[space.index[key]]
                grad_a += c * (bary[..., i, None] * g[j] + bary[..., j, None] * g[i])
    out = np.empty_like(grad_a)
    out[..., 0] = grad_a[..., 1]
    out[..., 1] = -grad_a[..., 0]
    return out
