"""Finite-element assembly of the coupled systems, coupling matrices
and norm matrices.

Conventions.  The unknown vector of a coupled system concatenates the
field-side block V (h or t coefficients) and the potential block Q (a
coefficients).  With B the interface coupling matrix (rows Q, columns
V), one implicit-Euler iteration of the field/potential pair assembles
to the symmetric block form

    h-a:  [[ M + dt*K_rho,  B^T ],          t-a:  [[ -dt*K_rho,  -B^T ],
           [ B,            -K_nu ]]                [ -B,          K_nu ]]

where M is the conductor mass, K_rho the (differential-)resistivity
stiffness and K_nu the reluctivity stiffness.  Essential constraints
are eliminated symmetrically: constrained rows and columns are dropped
and their contributions moved to the right-hand side.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.io
import scipy.sparse as sp

from ._geom import LINE_QP, LINE_QW, TRI_QP, TRI_QW, tri_geometry
from .materials import MU0, Materials, de_dj, rho_power
from .mesh import Interface, Mesh2D, Region
from .spaces import DofSpace, trace_functions, interface_chain, whitney_transform


class AssemblyError(ValueError):
    pass


class SingularNormError(AssemblyError):
    """Norm matrix would be singular (no essential constraint)."""


@dataclass(frozen=True)
class NormSpec:
    """Characteristic constants of the stability norms.

    The field norm weights the mass term with mu0 and the curl term
    with dt0*rho0; the potential norm weights curls with nu0; the tape
    norm is additionally scaled by the (uniform) tape element size,
    which emulates the fractional trace norm discretely.
    """

    mu0: float = MU0
    rho0: float = 1.6e-8
    dt0: float = 1.0
    nu0: float = 1.0 / MU0
    mesh_dependent: bool = True

    def __post_init__(self):
        for name in ("mu0", "rho0", "dt0", "nu0"):
            if getattr(self, name) <= 0.0:
                raise AssemblyError(f"{name} must be positive")


@dataclass
class AssembledSystem:
    """One linear(ized) coupled system after symmetric elimination.

    ``K`` and ``s`` live on the free DOFs, V block first.  The
    unreduced operator ``K_full``/``s_full`` (on all DOFs of both
    spaces) is kept for residual evaluation and reaction extraction.
    """

    K: sp.csr_matrix
    s: np.ndarray
    v_space: DofSpace
    q_space: DofSpace
    dt: float
    K_full: sp.csr_matrix
    s_full: np.ndarray
    x_essential: np.ndarray

    @property
    def n_v_free(self) -> int:
        return self.v_space.n_free

    @property
    def v_slice(self) -> slice:
        return slice(0, self.v_space.n_free)

    @property
    def q_slice(self) -> slice:
        return slice(self.v_space.n_free, self.v_space.n_free + self.q_space.n_free)

    def free_indices(self) -> np.ndarray:
        nv = self.v_space.n_dofs
        return np.concatenate([self.v_space.free, nv + self.q_space.free])

    def expand(self, x_free) -> np.ndarray:
        x = self.x_essential.copy()
        x[self.free_indices()] = x_free
        return x

    def split(self, x_full):
        nv = self.v_space.n_dofs
        return x_full[:nv], x_full[nv:]

    def residual_full(self, x_full) -> np.ndarray:
        return self.K_full @ x_full - self.s_full


def export_matrix_market(M, path, symmetric=True):
    """MatrixMarket coordinate export for cross-checking."""
    scipy.io.mmwrite(str(path), sp.coo_matrix(M),
                     symmetry="symmetric" if symmetric else "general")


def import_matrix_market(path):
    return sp.csr_matrix(scipy.io.mmread(str(path)))


# -- low-level kernels ---------------------------------------------------------


def _scatter(rows, cols, vals, shape):
    return sp.coo_matrix((np.asarray(vals, dtype=float).ravel(),
                          (np.asarray(rows).ravel(), np.asarray(cols).ravel())),
                         shape=shape).tocsr()


def _whitney_local(mesh, tri_ids):
    """Whitney edge-function data on triangles: quadrature values
    (T, 6, 3, 2) in canonical edge orientation, constant curls (T, 3),
    areas (T,)."""
    areas, grads = tri_geometry(mesh, tri_ids)
    tris = mesh.triangles[tri_ids]
    T = len(tri_ids)
    vals = np.empty((T, len(TRI_QP), 3, 2))
    curls = np.empty((T, 3))
    for le, (i, j) in enumerate(((0, 1), (1, 2), (2, 0))):
        sgn = np.where(tris[:, i] < tris[:, j], 1.0, -1.0)
        lam_i = TRI_QP[:, i][None, :, None]
        lam_j = TRI_QP[:, j][None, :, None]
        v = lam_i * grads[:, None, j, :] - lam_j * grads[:, None, i, :]
        vals[:, :, le, :] = sgn[:, None, None] * v
        cr = 2.0 * (grads[:, i, 0] * grads[:, j, 1] - grads[:, i, 1] * grads[:, j, 0])
        curls[:, le] = sgn * cr
    return vals, curls, areas


def _whitney_mass(mesh, tri_ids, sc_edge_pos, n_rows):
    """Mass matrix of Whitney edge functions on the given triangles,
    indexed by position in the conducting edge list."""
    vals, _, areas = _whitney_local(mesh, tri_ids)
    # local mass: sum_q w_q A * psi_e . psi_f
    loc = np.einsum("q,tqei,tqfi->tef", TRI_QW, vals, vals) * areas[:, None, None]
    eids = sc_edge_pos[mesh.tri_edges[tri_ids]]          # (T, 3)
    rows = np.repeat(eids, 3, axis=1)
    cols = np.tile(eids, (1, 3))
    return _scatter(rows, cols, loc.reshape(len(tri_ids), 9), (n_rows, n_rows))


def _p1_stiffness(mesh, tri_ids, weights, node_dof, n_dofs):
    """Weighted scalar P1 stiffness scattered onto space DOF indices.
    For the out-of-plane potential, curl a . curl a' = grad a . grad a'.
    """
    areas, grads = tri_geometry(mesh, tri_ids)
    loc = np.einsum("t,tid,tjd->tij", weights * areas, grads, grads)
    dofs = node_dof[mesh.triangles[tri_ids]]             # (T, 3)
    rows = np.repeat(dofs, 3, axis=1)
    cols = np.tile(dofs, (1, 3))
    return _scatter(rows, cols, loc.reshape(len(tri_ids), 9), (n_dofs, n_dofs))


def _enriched_tri_map(space):
    """(tri, local_edge, bubble_dof) triples for interface bubbles."""
    mesh = space.mesh
    out = []
    if space.enrichment != 2:
        return out
    domain = set(int(t) for t in (space.meta["sc_tris"] if space.family == "H"
                                  else space.meta["a_tris"]))
    for kind, ent in space.entries:
        if kind != "bubble":
            continue
        dof = space.dof("bubble", ent)
        for t in mesh.edge_tris[ent]:
            if t < 0 or int(t) not in domain:
                continue
            le = int(np.flatnonzero(mesh.tri_edges[t] == ent)[0])
            out.append((int(t), le, dof))
    return out


def _bubble_grad(grads, le, qp=TRI_QP):
    """grad(lambda_i lambda_j) at the triangle quadrature points."""
    i, j = ((0, 1), (1, 2), (2, 0))[le]
    return qp[:, i, None] * grads[j] + qp[:, j, None] * grads[i]


def _space_cache(space) -> dict:
    cache = getattr(space, "_assembly_cache", None)
    if cache is None:
        cache = {}
        space._assembly_cache = cache
    return cache


def _h_mass(space, coeff):
    """Conductor mass matrix of the H space on all DOFs (coeff * I)."""
    cache = _space_cache(space)
    key = ("h_mass", float(coeff))
    if key in cache:
        return cache[key]
    mesh = space.mesh
    tri_ids = space.meta["sc_tris"]
    sc_edges, C = whitney_transform(space)
    pos = np.full(len(mesh.edges), -1, dtype=np.int64)
    pos[sc_edges] = np.arange(len(sc_edges))
    Mw = _whitney_mass(mesh, tri_ids, pos, len(sc_edges))
    K = C.T @ (coeff * Mw) @ C

    enriched = _enriched_tri_map(space)
    if enriched:
        rows, cols, vals = [], [], []
        brows, bcols, bvals = [], [], []
        bydof = {}
        for t, le, dof in enriched:
            bydof.setdefault(t, []).append((le, dof))
        for t, items in sorted(bydof.items()):
            areas, grads = tri_geometry(mesh, np.array([t]))
            A, g = areas[0], grads[0]
            wvals, _, _ = _whitney_local(mesh, np.array([t]))
            epos = pos[mesh.tri_edges[t]]
            for le, dof in items:
                gb = _bubble_grad(g, le)                  # (6, 2)
                # bubble x whitney
                m = np.einsum("q,qd,qed->e", TRI_QW, gb, wvals[0]) * A
                rows.extend(epos)
                cols.extend([dof] * 3)
                vals.extend(coeff * m)
                # bubble x bubble (same triangle)
                for le2, dof2 in items:
                    gb2 = _bubble_grad(g, le2)
                    m2 = np.einsum("q,qd,qd->", TRI_QW, gb, gb2) * A
                    brows.append(dof)
                    bcols.append(dof2)
                    bvals.append(coeff * m2)
        Mwb = _scatter(rows, cols, vals, (len(sc_edges), space.n_dofs))
        K = K + C.T @ Mwb + Mwb.T @ C
        K = K + _scatter(brows, bcols, bvals, (space.n_dofs,) * 2)
    cache[key] = K.tocsr()
    return cache[key]


def _h_stiffness(space, tri_weights):
    """Weighted curl-curl of the H space on all DOFs; bubbles are
    gradients and carry no curl."""
    mesh = space.mesh
    cache = _space_cache(space)
    if "h_stiff_geom" not in cache:
        tri_ids = space.meta["sc_tris"]
        sc_edges, C = whitney_transform(space)
        pos = np.full(len(mesh.edges), -1, dtype=np.int64)
        pos[sc_edges] = np.arange(len(sc_edges))
        _, curls, areas = _whitney_local(mesh, tri_ids)
        eids = pos[mesh.tri_edges[tri_ids]]
        rows = np.repeat(eids, 3, axis=1)
        cols = np.tile(eids, (1, 3))
        cache["h_stiff_geom"] = (curls, areas, rows, cols, len(sc_edges), C)
    curls, areas, rows, cols, n_rows, C = cache["h_stiff_geom"]
    w = np.asarray(tri_weights, dtype=float)
    loc = np.einsum("t,te,tf->tef", w * areas, curls, curls)
    Kw = _scatter(rows, cols, loc.reshape(len(areas), 9), (n_rows, n_rows))
    return (C.T @ Kw @ C).tocsr()


def _a_stiffness(space, nu_per_tri):
    """Weighted curl-curl of the A space (hats plus interface bubbles)."""
    cache = _space_cache(space)
    key = ("a_stiff", np.asarray(nu_per_tri).tobytes())
    if key in cache:
        return cache[key]
    mesh = space.mesh
    tri_ids = space.meta["a_tris"]
    node_dof = np.full(mesh.n_nodes, -1, dtype=np.int64)
    for k, (kind, ent) in enumerate(space.entries):
        if kind == "node":
            node_dof[ent] = k
    K = _p1_stiffness(mesh, tri_ids, np.asarray(nu_per_tri, dtype=float),
                      node_dof, space.n_dofs)

    enriched = _enriched_tri_map(space)
    if enriched:
        wmap = {int(t): w for t, w in zip(tri_ids, np.asarray(nu_per_tri, dtype=float))}
        rows, cols, vals = [], [], []
        bydof = {}
        for t, le, dof in enriched:
            bydof.setdefault(t, []).append((le, dof))
        for t, items in sorted(bydof.items()):
            areas, grads = tri_geometry(mesh, np.array([t]))
            A, g = areas[0], grads[0]
            nu = wmap[t]
            tdofs = node_dof[mesh.triangles[t]]
            for le, dof in items:
                gb = _bubble_grad(g, le)
                for i in range(3):
                    m = np.einsum("q,qd,d->", TRI_QW, gb, g[i]) * A * nu
                    rows += [dof, tdofs[i]]
                    cols += [tdofs[i], dof]
                    vals += [m, m]
                for le2, dof2 in items:
                    gb2 = _bubble_grad(g, le2)
                    m2 = np.einsum("q,qd,qd->", TRI_QW, gb, gb2) * A * nu
                    rows.append(dof)
                    cols.append(dof2)
                    vals.append(m2)
        K = K + _scatter(rows, cols, vals, (space.n_dofs,) * 2)
    cache[key] = K.tocsr()
    return cache[key]


def _t_trace_table(space):
    """Per-segment trace DOFs and Gauss-point values, cached."""
    cache = _space_cache(space)
    if "t_trace" not in cache:
        segs, _, lens, _ = interface_chain(space)
        table = []
        for k in range(len(segs)):
            fns = trace_functions(space, k)
            dofs = np.array([d for d, _ in fns], dtype=np.int64)
            vals = np.array([[f(u) for u in LINE_QP] for _, f in fns])
            table.append((dofs, vals, lens[k]))
        cache["t_trace"] = table
    return cache["t_trace"]


def _t_stiffness(space, qp_weights):
    """1D weighted curl-curl over the tape: entries
    int w(s) (dpsi_i/ds)(dpsi_j/ds) ds with qp_weights of shape
    (n_segments, 3) evaluated at the Gauss points of each segment."""
    qp_weights = np.asarray(qp_weights, dtype=float)
    if qp_weights.ndim == 1:
        qp_weights = np.repeat(qp_weights[:, None], len(LINE_QP), axis=1)
    rows, cols, vals = [], [], []
    for k, (dofs, fv, L) in enumerate(_t_trace_table(space)):
        loc = np.einsum("q,iq,jq->ij", LINE_QW * qp_weights[k], fv, fv) * L
        rows.append(np.repeat(dofs, len(dofs)))
        cols.append(np.tile(dofs, len(dofs)))
        vals.append(loc.ravel())
    return _scatter(np.concatenate(rows), np.concatenate(cols),
                    np.concatenate(vals), (space.n_dofs,) * 2)


def tape_element_size(mesh: Mesh2D) -> float:
    segs, _ = mesh.interface(Interface.GAMMA_W)
    lens = mesh.segment_lengths(segs)
    if lens.max() / lens.min() > 1.01:
        raise AssemblyError("tape mesh is not uniform")
    return float(lens.max())


def tape_current_density(space: DofSpace, coeffs, at_qp=False):
    """Surface current density dt/ds per tape segment (midpoint value)
    or at the Gauss points of each segment when ``at_qp``."""
    table = _t_trace_table(space)
    coeffs = np.asarray(coeffs, dtype=float)
    if at_qp:
        out = np.empty((len(table), len(LINE_QP)))
        for k, (dofs, fv, _) in enumerate(table):
            out[k] = coeffs[dofs] @ fv
        return out
    segs, _, lens, _ = interface_chain(space)
    out = np.empty(len(table))
    for k in range(len(table)):
        dofs, fv, L = table[k]
        fns = trace_functions(space, k)
        out[k] = sum(coeffs[d] * f(0.5) for d, f in fns)
    return out


# -- coupling and norms ----------------------------------------------------------


def _coupling_full(v_space: DofSpace, q_space: DofSpace, interface_tag, w=None):
    """Interface coupling on all DOFs: B[q, v] = int (trace_q)(trace_v),
    times the tape thickness for the surface-current pairing."""
    tag = Interface(int(interface_tag))
    cache = _space_cache(q_space)
    key = ("coupling", id(v_space), int(tag), None if w is None else float(w))
    if key in cache:
        return cache[key]
    segs, _, lens, _ = interface_chain(q_space, tag)
    factor = 1.0 if tag == Interface.GAMMA_M else float(w)
    rows, cols, vals = [], [], []
    for k in range(len(segs)):
        qf = trace_functions(q_space, k, tag)
        vf = trace_functions(v_space, k, tag)
        L = lens[k]
        for dq, fq in qf:
            vq = np.array([fq(u) for u in LINE_QP])
            for dv, fv in vf:
                vv = np.array([fv(u) for u in LINE_QP])
                vals.append(factor * float(np.sum(LINE_QW * vq * vv) * L))
                rows.append(dq)
                cols.append(dv)
    cache[key] = _scatter(rows, cols, vals, (q_space.n_dofs, v_space.n_dofs))
    return cache[key]


def assemble_coupling_matrix(v_space: DofSpace, q_space: DofSpace,
                             interface_tag=None, w=None) -> sp.csr_matrix:
    """Coupling matrix on free DOFs (rows: potential side, columns:
    field side), as used by the inf-sup pencil."""
    tag = interface_tag if interface_tag is not None else q_space.meta["interface_tag"]
    if v_space.family == "T" and w is None:
        w = v_space.mesh.w
    if v_space.family == "H" and int(tag) != int(Interface.GAMMA_M):
        raise AssemblyError("h-side coupling lives on GAMMA_M")
    B = _coupling_full(v_space, q_space, tag, w)
    return B[q_space.free][:, v_space.free].tocsr()


def assemble_norm_matrix(space: DofSpace, norms: NormSpec) -> sp.csr_matrix:
    """Stability-norm Gram matrix on the free DOFs (SPD)."""
    if space.family == "H":
        tri_w = np.full(len(space.meta["sc_tris"]), norms.dt0 * norms.rho0)
        N = _h_mass(space, norms.mu0) + _h_stiffness(space, tri_w)
    elif space.family == "A":
        if not space.essential:
            raise SingularNormError("potential norm needs an essential trace")
        nu = np.full(len(space.meta["a_tris"]), norms.nu0)
        N = _a_stiffness(space, nu)
    elif space.family == "T":
        delta = tape_element_size(space.mesh) if norms.mesh_dependent else 1.0
        segs, _, lens, _ = interface_chain(space)
        qp_w = np.full((len(segs), len(LINE_QP)),
                       delta * space.mesh.w * norms.dt0 * norms.rho0)
        N = _t_stiffness(space, qp_w)
    else:
        raise AssemblyError(f"unknown family {space.family}")
    return N[space.free][:, space.free].tocsr()


# -- coupled iteration systems ----------------------------------------------------


def _eliminate(K_full, s_full, v_space, q_space, x_essential):
    nv = v_space.n_dofs
    free = np.concatenate([v_space.free, nv + q_space.free])
    all_idx = np.arange(nv + q_space.n_dofs)
    ess = np.setdiff1d(all_idx, free, assume_unique=True)
    K_full = K_full.tocsr()
    s = s_full[free]
    if len(ess):
        s = s - K_full[free][:, ess] @ x_essential[ess]
    K = K_full[free][:, free].tocsr()
    return K, s


def _region_nu(mesh, a_space, materials: Materials) -> np.ndarray:
    """Per-triangle reluctivity of the a-side domain."""
    a_tris = a_space.meta["a_tris"]
    lut = np.full(int(max(Region)) + 1, np.nan)
    for reg in Region:
        lut[int(reg)] = materials.nu_of_region(reg)
    return lut[mesh.tri_region[a_tris]]


def _circuit_rhs(space, dt, voltages=None):
    """Voltage source terms on the global DOFs: the current functional
    of a basis function is 1 for a cut and w for a plus-end hat.
    ``voltages`` overrides the build-time values (weak-form sign
    convention)."""
    voltages = voltages or {}
    v = np.zeros(space.n_dofs)
    if space.family == "H":
        for c in space.meta["conductors"]:
            if c.mode == "voltage":
                v[space.dof("global", c.id)] = -dt * voltages.get(c.id, c.value)
    else:
        for t in space.meta["tapes"]:
            if t.mode == "voltage":
                v[space.dof("global", t.id)] = dt * voltages.get(t.id, t.value) * space.mesh.w
    return v


def assemble_ha_iteration(mesh: Mesh2D, h_space: DofSpace, a_space: DofSpace,
                          materials: Materials, state_prev, iterate, dt,
                          a_essential=None, h_essential=None,
                          voltages=None) -> AssembledSystem:
    """One Newton iteration of the implicit-Euler h-a system.

    ``state_prev`` and ``iterate`` are (h_full, a_full) coefficient
    pairs at the previous time step and previous Newton iterate.  The
    essential-value vectors hold the constrained values at the new
    time; they default to the build-time values.
    """
    from .spaces import elementwise_curl_h

    h_prev, a_prev = state_prev
    h_it, _ = iterate
    if len(h_prev) != h_space.n_dofs or len(a_prev) != a_space.n_dofs:
        raise AssemblyError("state vectors do not match the spaces")
    if np.any(~np.isfinite(h_it)):
        raise AssemblyError("non-finite Newton iterate")

    _, j = elementwise_curl_h(h_space, h_it)
    dedj = de_dj(j, materials.power)
    rho = rho_power(j, materials.power)
    if np.any(~np.isfinite(dedj)):
        raise AssemblyError("non-finite material evaluation")

    M = _h_mass(h_space, MU0)
    K_rho = _h_stiffness(h_space, dt * dedj)
    K_nu = _a_stiffness(a_space, _region_nu(mesh, a_space, materials))
    B = _coupling_full(h_space, a_space, Interface.GAMMA_M)

    K_full = sp.bmat([[M + K_rho, B.T], [B, -K_nu]], format="csr")

    s_h = B.T @ a_prev + M @ h_prev \
        - _h_stiffness(h_space, dt * (rho - dedj)) @ h_it \
        + _circuit_rhs(h_space, dt, voltages)
    s_a = np.zeros(a_space.n_dofs)      # linear magnetic laws
    s_full = np.concatenate([s_h, s_a])

    x_ess = np.concatenate([
        h_essential if h_essential is not None else h_space.essential_full(),
        a_essential if a_essential is not None else a_space.essential_full()])
    K, s = _eliminate(K_full, s_full, h_space, a_space, x_ess)
    return AssembledSystem(K, s, h_space, a_space, dt, K_full, s_full, x_ess)


def assemble_ta_iteration(mesh: Mesh2D, t_space: DofSpace, a_space: DofSpace,
                          materials: Materials, state_prev, iterate, dt,
                          a_essential=None, t_essential=None,
                          voltages=None) -> AssembledSystem:
    """One Newton iteration of the implicit-Euler t-a system."""
    t_prev, a_prev = state_prev
    t_it, _ = iterate
    if len(t_prev) != t_space.n_dofs or len(a_prev) != a_space.n_dofs:
        raise AssemblyError("state vectors do not match the spaces")
    w = mesh.w

    j_qp = tape_current_density(t_space, t_it, at_qp=True)
    dedj = de_dj(j_qp, materials.power)
    rho = rho_power(j_qp, materials.power)

    K_nu = _a_stiffness(a_space, _region_nu(mesh, a_space, materials))
    B = _coupling_full(t_space, a_space, Interface.GAMMA_W, w=w)
    D = _t_stiffness(t_space, dt * w * dedj)

    K_full = sp.bmat([[-D, -B.T], [-B, K_nu]], format="csr")

    s_t = -B.T @ a_prev \
        + _t_stiffness(t_space, dt * w * (rho - dedj)) @ t_it \
        + _circuit_rhs(t_space, dt, voltages)
    s_full = np.concatenate([s_t, np.zeros(a_space.n_dofs)])

    x_ess = np.concatenate([
        t_essential if t_essential is not None else t_space.essential_full(),
        a_essential if a_essential is not None else a_space.essential_full()])
    K, s = _eliminate(K_full, s_full, t_space, a_space, x_ess)
    return AssembledSystem(K, s, t_space, a_space, dt, K_full, s_full, x_ess)
