import numpy as np
import pytest
import scipy.sparse as sp

from htsfem._geom import LINE_QP, LINE_QW
from htsfem.assembly import (AssemblyError, NormSpec, SingularNormError,
                             assemble_coupling_matrix, assemble_ha_iteration,
                             assemble_norm_matrix, assemble_ta_iteration,
                             export_matrix_market, import_matrix_market,
                             tape_element_size, _coupling_full)
from htsfem.mesh import Interface, refine
from htsfem.spaces import (build_a_space, build_h_space, build_t_space,
                           eval_trace, interface_chain)

NORMS = NormSpec(dt0=0.0125)


def sym_defect(K):
    d = K - K.T
    return abs(d).max() / abs(K).max() if d.nnz else 0.0


def test_ha_zero_state_zero_solution(bar_mesh, bar_spaces_11, bar_materials_linear):
    from htsfem.linalg import solve_sparse
    h, a = bar_spaces_11
    z = (np.zeros(h.n_dofs), np.zeros(a.n_dofs))
    sys = assemble_ha_iteration(bar_mesh, h, a, bar_materials_linear, z, z, 0.0125)
    assert np.abs(sys.s).max() == 0.0
    x = solve_sparse(sys.K, sys.s)
    assert np.abs(x).max() == 0.0


def test_ha_symmetry(bar_mesh, bar_spaces_11, bar_materials_power):
    h, a = bar_spaces_11
    rng = np.random.default_rng(0)
    state = (rng.normal(size=h.n_dofs), rng.normal(size=a.n_dofs))
    sys = assemble_ha_iteration(bar_mesh, h, a, bar_materials_power,
                                state, state, 0.0125)
    assert sym_defect(sys.K) < 1e-12
    assert sym_defect(sys.K_full) < 1e-12


def test_ta_symmetry(tape_mesh, tape_spaces_11, tape_materials_power):
    t, a = tape_spaces_11
    rng = np.random.default_rng(1)
    state = (rng.normal(size=t.n_dofs) * 1e6, rng.normal(size=a.n_dofs) * 1e-6)
    sys = assemble_ta_iteration(tape_mesh, t, a, tape_materials_power,
                                state, state, 0.0125)
    assert sym_defect(sys.K) < 1e-12


def test_saddle_block_structure(bar_mesh, bar_spaces_11, bar_materials_linear):
    # K = [[A, B^T], [B, -C]] with A, C positive semi-definite
    h, a = bar_spaces_11
    z = (np.zeros(h.n_dofs), np.zeros(a.n_dofs))
    sys = assemble_ha_iteration(bar_mesh, h, a, bar_materials_linear, z, z, 0.0125)
    nv = sys.n_v_free
    K = sys.K.toarray()
    A = K[:nv, :nv]
    C = -K[nv:, nv:]
    Bt = K[:nv, nv:]
    B = K[nv:, :nv]
    assert np.abs(Bt - B.T).max() < 1e-12 * np.abs(B).max()
    assert np.linalg.eigvalsh(A).min() > -1e-10 * np.abs(A).max()
    assert np.linalg.eigvalsh(C).min() > -1e-10 * np.abs(C).max()


def test_coercivity_rayleigh_bounds(bar_mesh, bar_spaces_11, bar_materials_linear):
    # generalized Rayleigh quotient of the field block against its norm
    # matrix falls inside the material-ratio bounds
    import scipy.linalg
    h, a = bar_spaces_11
    z = (np.zeros(h.n_dofs), np.zeros(a.n_dofs))
    for dt_fac in (1.0, 2.0):
        dt = NORMS.dt0 * dt_fac
        sys = assemble_ha_iteration(bar_mesh, h, a, bar_materials_linear, z, z, dt)
        nv = sys.n_v_free
        A = sys.K.toarray()[:nv, :nv]
        NV = assemble_norm_matrix(h, NORMS).toarray()
        lam = scipy.linalg.eigh(A, NV, eigvals_only=True)
        lo = min(1.0, dt_fac)
        hi = max(1.0, dt_fac)
        assert lam.min() > lo - 1e-8
        assert lam.max() < hi + 1e-8


def test_ha_coupling_hand_values(bar_mesh):
    # one boundary-potential DOF against the neighbouring potential hats:
    # the tangential trace +-1/L against a rising/falling hat gives +-1/2
    h = build_h_space(bar_mesh, 1)
    a = build_a_space(bar_mesh, 1, Interface.GAMMA_M)
    B = _coupling_full(h, a, Interface.GAMMA_M)
    segs, _, lens, _ = interface_chain(h)
    k = 4
    n_prev, n_mid = int(segs[k][0]), int(segs[k][1])
    n_next = int(segs[k + 1][1])
    col = h.dof("node", n_mid)
    assert B[a.dof("node", n_prev), col] == pytest.approx(0.5, rel=1e-12)
    assert B[a.dof("node", n_next), col] == pytest.approx(-0.5, rel=1e-12)
    assert abs(B[a.dof("node", n_mid), col]) < 1e-14


def test_ha_coupling_constant_a_loop(bar_mesh, bar_spaces_11):
    # a constant along the closed interface pairs to zero with every
    # single-valued test field; the quadrature oracle gives the same
    h, a = bar_spaces_11
    B = _coupling_full(h, a, Interface.GAMMA_M)
    c = 2.5
    avec = np.zeros(a.n_dofs)
    segs, _, lens, cum = interface_chain(a)
    for n in np.unique(segs):
        avec[a.dof("node", int(n))] = c
    row = avec @ B          # functional over h-dofs
    scale = np.abs(B).max() * c
    for node in segs[:4, 0]:
        dof = h.dof("node", int(node))
        x = np.zeros(h.n_dofs)
        x[dof] = 1.0
        quad = 0.0
        for k in range(len(segs)):
            for u, w in zip(LINE_QP, LINE_QW):
                quad += w * lens[k] * c * eval_trace(h, x, Interface.GAMMA_M,
                                                     cum[k] + u * lens[k])
        assert row[dof] == pytest.approx(quad, abs=1e-12 * scale)
        assert abs(row[dof]) < 1e-12 * scale
    # the cut picks up the full circulation
    assert row[h.dof("global", 0)] == pytest.approx(c, rel=1e-12)


def test_ta_coupling_far_node_zero(tape_mesh, tape_spaces_11):
    t, a = tape_spaces_11
    B = _coupling_full(t, a, Interface.GAMMA_W, w=tape_mesh.w)
    # a node far from the tape has no coupling support
    far = int(np.argmax(np.abs(tape_mesh.nodes[:, 1])))
    assert B[a.dof("node", far)].nnz == 0


def test_ta_single_segment_hand_value(tape_mesh):
    # piecewise-constant j on one segment against the a-hat rising on it:
    # entry = w * (1/L) * L/2 = w/2 per adjacent segment
    t = build_t_space(tape_mesh, 1)
    a = build_a_space(tape_mesh, 1, Interface.GAMMA_W)
    B = _coupling_full(t, a, Interface.GAMMA_W, w=tape_mesh.w)
    segs, _, lens, _ = interface_chain(t)
    k = 3
    n_mid = int(segs[k][1])       # interior tape node
    col = t.dof("node", n_mid)
    w = tape_mesh.w
    assert B[a.dof("node", int(segs[k][0])), col] == pytest.approx(
        w * 0.5, rel=1e-12)
    assert B[a.dof("node", int(segs[k + 1][1])), col] == pytest.approx(
        -w * 0.5, rel=1e-12)


def test_coupling_nonzero_columns(bar_mesh, bar_spaces_11):
    h, a = bar_spaces_11
    B = assemble_coupling_matrix(h, a)
    csc = sp.csc_matrix(B)
    nonzero_cols = int(np.sum(np.diff(csc.indptr) > 0))
    segs, _ = bar_mesh.interface(Interface.GAMMA_M)
    # free V-DOFs with interface support: ring potentials minus the
    # grounded one (the cut is constrained at zero imposed current)
    assert nonzero_cols == len(segs) - 1


def test_coupling_hierarchical_nesting(bar_mesh):
    h1 = build_h_space(bar_mesh, 1, {0: ("current", 0.0)})
    a1 = build_a_space(bar_mesh, 1, Interface.GAMMA_M)
    a2 = build_a_space(bar_mesh, 2, Interface.GAMMA_M)
    B11 = assemble_coupling_matrix(h1, a1).toarray()
    B12 = assemble_coupling_matrix(h1, a2).toarray()
    # node DOFs come first in the A numbering, so the order-1 matrix is
    # the leading row block of the order-2 one
    assert np.allclose(B12[:B11.shape[0], :], B11, atol=1e-15)


def test_norm_matrices_spd(bar_mesh, bar_spaces_11):
    h, a = bar_spaces_11
    for space in (h, a):
        N = assemble_norm_matrix(space, NORMS)
        assert sym_defect(N) < 1e-12
        x = np.zeros(N.shape[0])
        assert x @ (N @ x) == 0.0
        rng = np.random.default_rng(5)
        for _ in range(3):
            y = rng.normal(size=N.shape[0])
            assert y @ (N @ y) > 0.0


def test_a_norm_uniform_gradient(tape_mesh):
    # analytic value: nu0 * b0^2 * domain area for a = -b0 y
    b0 = 0.7
    a = build_a_space(tape_mesh, 1, Interface.GAMMA_W,
                      a_trace=lambda x, y: -b0 * y)
    N = assemble_norm_matrix(a, NORMS)
    x_full = np.array([-b0 * tape_mesh.nodes[ent, 1] if kind == "node" else 0.0
                       for kind, ent in a.entries])
    # include the essential boundary in the quadratic form via the full matrix
    from htsfem.assembly import _a_stiffness
    K = _a_stiffness(a, np.full(len(a.meta["a_tris"]), NORMS.nu0))
    val = x_full @ (K @ x_full)
    area = (2 * 0.02) ** 2
    assert val == pytest.approx(NORMS.nu0 * b0 ** 2 * area, rel=1e-12)


def test_t_norm_delta_scaling(tape_mesh):
    t1 = build_t_space(tape_mesh, 1, {0: ("current", 0.0)})
    N1 = assemble_norm_matrix(t1, NORMS)
    fine = refine(tape_mesh)
    t2 = build_t_space(fine, 1, {0: ("current", 0.0)})
    N2 = assemble_norm_matrix(t2, NORMS)
    # same continuous linear ramp on both meshes
    def ramp_vec(space, mesh):
        x = space.essential_full()
        tape = space.meta["tapes"][0]
        xm = mesh.nodes[tape.minus, 0]
        for k, (kind, ent) in enumerate(space.entries):
            if kind == "node":
                x[k] = (mesh.nodes[ent, 0] - xm) / 0.01
        x[space.dof("global", 0)] = 1.0
        return x[space.free]

    v1 = ramp_vec(t1, tape_mesh)
    v2 = ramp_vec(t2, fine)
    q1 = v1 @ (N1 @ v1)
    q2 = v2 @ (N2 @ v2)
    assert q2 == pytest.approx(0.5 * q1, rel=1e-12)
    assert tape_element_size(fine) == pytest.approx(
        0.5 * tape_element_size(tape_mesh), rel=1e-12)


def test_a_norm_needs_essential(bar_mesh):
    a = build_a_space(bar_mesh, 1, Interface.GAMMA_M)
    free_space = type(a)("A", 1, bar_mesh, a.entries, {}, a.meta)
    with pytest.raises(SingularNormError):
        assemble_norm_matrix(free_space, NORMS)


def test_elimination_against_dense_oracle(tape_mesh, tape_materials_power):
    # reduced system equals the manual dense reduction of the full one
    t = build_t_space(tape_mesh, 1, {0: ("current", 2.0)})
    a = build_a_space(tape_mesh, 1, Interface.GAMMA_W)
    rng = np.random.default_rng(7)
    state = (rng.normal(size=t.n_dofs), rng.normal(size=a.n_dofs) * 1e-6)
    sys = assemble_ta_iteration(tape_mesh, t, a, tape_materials_power,
                                state, state, 0.0125)
    K_full = sys.K_full.toarray()
    free = sys.free_indices()
    ess = np.setdiff1d(np.arange(K_full.shape[0]), free)
    s_red = sys.s_full[free] - K_full[np.ix_(free, ess)] @ sys.x_essential[ess]
    K_red = K_full[np.ix_(free, free)]
    assert np.allclose(K_red, sys.K.toarray(), atol=1e-15)
    assert np.allclose(s_red, sys.s, atol=1e-15 * max(1.0, np.abs(sys.s).max()))


def test_gradv_coupling_vanishes_on_closed_loop(bar_mesh, bar_spaces_11):
    # the electric-scalar-potential part of the interface coupling
    # contributes only through the net-current functional: the loop
    # circulation of every single-valued basis trace vanishes
    h, _ = bar_spaces_11
    segs, _, lens, cum = interface_chain(h)
    scale = 1.0 / lens.min()
    for k, (kind, ent) in enumerate(h.entries):
        x = np.zeros(h.n_dofs)
        x[k] = 1.0
        circ = 0.0
        for ks in range(len(segs)):
            for u, w in zip(LINE_QP, LINE_QW):
                circ += w * lens[ks] * eval_trace(h, x, Interface.GAMMA_M,
                                                  cum[ks] + u * lens[ks])
        if kind == "global":
            assert circ == pytest.approx(1.0, abs=1e-12)
        else:
            assert abs(circ) < 1e-12 * scale


def test_matrix_market_roundtrip(tmp_path, bar_spaces_11):
    h, _ = bar_spaces_11
    N = assemble_norm_matrix(h, NORMS)
    path = tmp_path / "norm.mtx"
    export_matrix_market(N, path)
    header = path.read_text().split("\n")[0]
    assert header.startswith("%%MatrixMarket matrix coordinate real symmetric")
    back = import_matrix_market(path)
    assert abs(back - N).max() < 1e-15 * abs(N).max()


def test_state_size_mismatch(bar_mesh, bar_spaces_11, bar_materials_linear):
    h, a = bar_spaces_11
    bad = (np.zeros(3), np.zeros(a.n_dofs))
    with pytest.raises(AssemblyError):
        assemble_ha_iteration(bar_mesh, h, a, bar_materials_linear, bad, bad, 0.0125)
