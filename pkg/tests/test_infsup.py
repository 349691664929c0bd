import numpy as np
import pytest

from htsfem.assembly import NormSpec, assemble_coupling_matrix, assemble_norm_matrix
from htsfem.infsup import (InfSupReport, NotApplicableError, build_pairing,
                           coercivity_estimates, export_eigenmode,
                           run_infsup_sweep, _fit_slope, _verdict)
from htsfem.linalg import infsup_eigenpairs
from htsfem.materials import MagneticLaw, Materials, PowerLaw, VACUUM
from htsfem.mesh import Interface, Region

NORMS = NormSpec(dt0=0.0125)


def test_coercivity_homogeneous():
    mats = Materials(PowerLaw(e_c=NORMS.rho0 * 3e8, j_c=3e8, n=1),
                     {int(Region.OMEGA_A_AIR): VACUUM})
    alpha, gamma, a_up, c_up = coercivity_estimates(mats, NORMS, NORMS.dt0)
    assert alpha == pytest.approx(1.0)
    assert gamma == pytest.approx(1.0)
    assert a_up == pytest.approx(1.0)
    assert c_up == pytest.approx(1.0)


def test_coercivity_ferromagnet_deteriorates():
    mats = Materials(PowerLaw(e_c=NORMS.rho0 * 3e8, j_c=3e8, n=1),
                     {int(Region.OMEGA_A_FERRO): MagneticLaw(1000.0),
                      int(Region.OMEGA_A_AIR): VACUUM})
    _, gamma, _, _ = coercivity_estimates(mats, NORMS, NORMS.dt0)
    assert gamma == pytest.approx(1e-3, rel=1e-12)


def test_coercivity_time_step_ratio():
    mats = Materials(PowerLaw(e_c=NORMS.rho0 * 3e8, j_c=3e8, n=1),
                     {int(Region.OMEGA_A_AIR): VACUUM})
    alpha, _, a_up, _ = coercivity_estimates(mats, NORMS, 2.0 * NORMS.dt0)
    assert alpha == pytest.approx(1.0)
    assert a_up == pytest.approx(2.0)


def test_coercivity_rejects_power_law():
    mats = Materials(PowerLaw(e_c=1e-4, j_c=3e8, n=20),
                     {int(Region.OMEGA_A_AIR): VACUUM})
    with pytest.raises(NotApplicableError):
        coercivity_estimates(mats, NORMS, NORMS.dt0)


def test_sweep_requires_three_refinements(bar_params):
    with pytest.raises(ValueError):
        run_infsup_sweep(bar_params, "ha", (1, 1), 2, norms=NORMS)


def test_verdict_rules():
    assert _verdict(0.05, [0.4, 0.41, 0.42]) == "STABLE"
    assert _verdict(1.0, [0.4, 0.2, 0.1]) == "UNSTABLE"
    assert _verdict(0.5, [0.4, 0.3, 0.25]) == "INCONCLUSIVE"
    # flat slope but unbounded drop is not stable
    assert _verdict(0.1, [0.4, 0.1, 0.1]) != "STABLE"


def test_slope_fit_on_finest_half():
    deltas = [0.4, 0.2, 0.1, 0.05, 0.025]
    betas = [1.0, 0.5, 0.25, 0.125, 0.0625]  # exact slope 1
    slope, band = _fit_slope(deltas, betas)
    assert slope == pytest.approx(1.0, abs=1e-12)


def test_mode_rayleigh_quotient_and_normalization(bar_mesh):
    v_sp, q_sp = build_pairing(bar_mesh, "ha", (1, 1))
    B = assemble_coupling_matrix(v_sp, q_sp)
    NV = assemble_norm_matrix(v_sp, NORMS)
    NQ = assemble_norm_matrix(q_sp, NORMS)
    eig = infsup_eigenpairs(B, NV, NQ)
    assert eig.beta <= eig.b_norm
    # top mode: coupling Rayleigh quotient equals ||b||^2
    from htsfem.linalg import solve_sparse
    q = eig.eigenvectors[:, -1]
    Gq = B @ solve_sparse(NV, np.asarray(B.T @ q).ravel())
    quotient = float(q @ Gq) / float(q @ (NQ @ q))
    assert quotient == pytest.approx(eig.b_norm ** 2, rel=1e-8)
    assert float(q @ (NQ @ q)) == pytest.approx(1.0, abs=1e-8)


def test_unstable_smallest_mode_oscillates(tmp_path, bar_mesh):
    v_sp, q_sp = build_pairing(bar_mesh, "ha", (1, 1))
    B = assemble_coupling_matrix(v_sp, q_sp)
    NV = assemble_norm_matrix(v_sp, NORMS)
    NQ = assemble_norm_matrix(q_sp, NORMS)
    eig = infsup_eigenpairs(B, NV, NQ)
    q_full, v_full = export_eigenmode(bar_mesh, v_sp, q_sp, B, NV, eig, 0,
                                      tmp_path / "mode")
    segs, _ = bar_mesh.interface(Interface.GAMMA_M)
    vals = np.array([q_full[q_sp.dof("node", int(n))] for n in segs[:, 0]])
    s = np.sign(vals[np.abs(vals) > 1e-12 * np.abs(vals).max()])
    changes = int(np.sum(s[1:] != s[:-1])) + int(s[0] != s[-1])
    assert changes >= 0.5 * len(segs)
    # exported point clouds exist with one row per entity
    pot = (tmp_path / "mode_potential.csv").read_text().strip().split("\n")
    assert len(pot) == len(q_sp.meta["a_nodes"]) + 1
    sup = (tmp_path / "mode_supremizer.csv").read_text().strip().split("\n")
    assert len(sup) == len(v_sp.meta["sc_tris"]) + 1


def test_mode_rank_out_of_range(bar_mesh, tmp_path):
    v_sp, q_sp = build_pairing(bar_mesh, "ha", (1, 1))
    B = assemble_coupling_matrix(v_sp, q_sp)
    NV = assemble_norm_matrix(v_sp, NORMS)
    NQ = assemble_norm_matrix(q_sp, NORMS)
    eig = infsup_eigenpairs(B, NV, NQ)
    with pytest.raises(IndexError):
        export_eigenmode(bar_mesh, v_sp, q_sp, B, NV, eig, 10 ** 6,
                         tmp_path / "mode")


def test_hierarchical_nesting_beta(bar_mesh):
    # enlarging the field space cannot decrease the sup
    betas = {}
    for pair in [(1, 1), (2, 1)]:
        v_sp, q_sp = build_pairing(bar_mesh, "ha", pair)
        B = assemble_coupling_matrix(v_sp, q_sp)
        NV = assemble_norm_matrix(v_sp, NORMS)
        NQ = assemble_norm_matrix(q_sp, NORMS)
        betas[pair] = infsup_eigenpairs(B, NV, NQ).beta
    assert betas[(2, 1)] >= betas[(1, 1)] * (1.0 - 1e-10)


def test_report_serialization(tmp_path):
    rep = InfSupReport("ha", (1, 2))
    from htsfem.infsup import SweepRecord
    rep.records = [SweepRecord(0.1, 0.4, 1.5, 20), SweepRecord(0.05, 0.41, 1.5, 40)]
    rep.slope = 0.02
    rep.verdict = "STABLE"
    data = rep.to_json(tmp_path / "rep.json")
    assert data["verdict"] == "STABLE"
    rep.to_csv(tmp_path / "rep.csv")
    lines = (tmp_path / "rep.csv").read_text().strip().split("\n")
    assert lines[0] == "meshsize,beta,normb"
    assert len(lines) == 3
