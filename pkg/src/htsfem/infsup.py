"""Numerical inf-sup test over a mesh-refinement sequence.

For a formulation and a space pairing (i, j), each mesh contributes the
pair (beta, ||b||): the square roots of the smallest and largest
nonzero eigenvalues of the coupling pencil.  A log-log slope of beta
against the element size, fitted on the finer half of the sequence,
classifies the pairing: a bounded beta indicates a stable pairing,
beta shrinking linearly with the element size an unstable one.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .assembly import NormSpec, assemble_coupling_matrix, assemble_norm_matrix
from .linalg import EigenResult, infsup_eigenpairs, solve_sparse
from .materials import MU0, Materials
from .mesh import (GeometryParams, Interface, Scenario, build_stacked_bar_mesh,
                   build_tape_mesh, refine)
from .spaces import build_a_space, build_h_space, build_t_space

SLOPE_FLAT = 0.3
SLOPE_LINEAR = (0.7, 1.3)
BOUNDED_RATIO = 0.5


class NotApplicableError(ValueError):
    """Coercivity bounds require linear constitutive laws."""


@dataclass
class SweepRecord:
    delta_rel: float          # element size over the reference width
    beta: float
    b_norm: float
    n_nonzero: int


@dataclass
class InfSupReport:
    formulation: str
    pairing: tuple
    records: list = field(default_factory=list)
    slope: float = float("nan")
    slope_band: float = float("nan")   # 95% half-width
    verdict: str = "INCONCLUSIVE"
    alpha_lower: float | None = None
    gamma_lower: float | None = None

    def to_json(self, path=None):
        data = {
            "formulation": self.formulation,
            "pairing": list(self.pairing),
            "records": [{"meshsize": r.delta_rel, "beta": r.beta,
                         "normb": r.b_norm, "n_nonzero": r.n_nonzero}
                        for r in self.records],
            "slope": self.slope,
            "slope_95_band": self.slope_band,
            "verdict": self.verdict,
            "alpha_lower": self.alpha_lower,
            "gamma_lower": self.gamma_lower,
        }
        text = json.dumps(data, indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as f:
                f.write(text + "\n")
        return data

    def to_csv(self, path):
        lines = ["meshsize,beta,normb"]
        for r in self.records:
            lines.append(f"{r.delta_rel:.17g},{r.beta:.17g},{r.b_norm:.17g}")
        with open(path, "w") as f:
            f.write("\n".join(lines) + "\n")


def coercivity_estimates(materials: Materials, norms: NormSpec, dt: float):
    """Lower coercivity and upper continuity constants of the diagonal
    forms for linear laws: (alpha_lower, gamma_lower, a_upper, c_upper).
    """
    if materials.power.n != 1.0:
        raise NotApplicableError(
            "power-law differential resistivity is not bounded below; "
            "coercivity constants require n = 1")
    rho = materials.power.rho_c
    mu_ratio = 1.0                      # conductor permeability is mu0
    rho_ratio = (dt / norms.dt0) * (rho / norms.rho0)
    alpha_lower = min(mu_ratio, rho_ratio)
    a_upper = max(mu_ratio, rho_ratio)
    nu_ratios = [law.nu / norms.nu0 for law in materials.magnetic.values()]
    nu_ratios = nu_ratios or [1.0 / (MU0 * norms.nu0)]
    gamma_lower = min(nu_ratios)
    c_upper = max(nu_ratios)
    return alpha_lower, gamma_lower, a_upper, c_upper


def _fit_slope(deltas, betas):
    """OLS slope of log beta vs log delta on the finest half, with a
    95% confidence half-width."""
    n = len(deltas)
    k = max(2, -(-n // 2))              # ceil(n/2), at least 2 points
    x = np.log(np.asarray(deltas[-k:]))
    y = np.log(np.asarray(betas[-k:]))
    A = np.column_stack([x, np.ones_like(x)])
    coef, res, _, _ = np.linalg.lstsq(A, y, rcond=None)
    slope = float(coef[0])
    if k > 2 and res.size:
        sigma2 = float(res[0]) / (k - 2)
        sxx = float(np.sum((x - x.mean()) ** 2))
        band = 1.96 * np.sqrt(sigma2 / sxx)
    else:
        band = float("inf") if k <= 2 else 0.0
    return slope, float(band)


def _verdict(slope, betas):
    bounded = min(betas) > BOUNDED_RATIO * max(betas)
    if abs(slope) < SLOPE_FLAT and bounded:
        return "STABLE"
    if SLOPE_LINEAR[0] <= slope <= SLOPE_LINEAR[1]:
        return "UNSTABLE"
    return "INCONCLUSIVE"


def build_pairing(mesh, formulation: str, pairing, interface_tag=None):
    """Field/potential space pair for an inf-sup evaluation (test-space
    constraints: zero imposed currents, zero outer trace)."""
    i, j = pairing
    if formulation == "ha":
        v_space = build_h_space(mesh, enrichment=i, circuit={0: ("current", 0.0)})
        q_space = build_a_space(mesh, enrichment=j, interface_tag=Interface.GAMMA_M)
    elif formulation == "ta":
        v_space = build_t_space(mesh, enrichment=i, constraints={0: ("current", 0.0)})
        q_space = build_a_space(mesh, enrichment=j, interface_tag=Interface.GAMMA_W)
    else:
        raise ValueError("formulation must be 'ha' or 'ta'")
    return v_space, q_space


def run_infsup_sweep(params: GeometryParams, formulation: str, pairing,
                     n_refinements: int, norms: NormSpec | None = None,
                     materials: Materials | None = None) -> InfSupReport:
    """Inf-sup test on the base mesh plus ``n_refinements`` uniform
    refinements (n_refinements + 1 meshes, coarse to fine)."""
    if n_refinements < 3:
        raise ValueError("n_refinements must be >= 3")
    formulation = formulation.lower()
    if norms is None:
        norms = NormSpec()
    if params.scenario is Scenario.STACKED_BAR:
        mesh = build_stacked_bar_mesh(params)
        width_ref = params.bar_width
    else:
        mesh = build_tape_mesh(params)
        width_ref = params.tape_width

    report = InfSupReport(formulation, tuple(pairing))
    if materials is not None and materials.power.n == 1.0:
        alpha, gamma, _, _ = coercivity_estimates(materials, norms, norms.dt0)
        report.alpha_lower, report.gamma_lower = alpha, gamma

    for level in range(n_refinements + 1):
        if level > 0:
            mesh = refine(mesh)
        v_space, q_space = build_pairing(mesh, formulation, pairing)
        B = assemble_coupling_matrix(v_space, q_space)
        N_V = assemble_norm_matrix(v_space, norms)
        N_Q = assemble_norm_matrix(q_space, norms)
        eig = infsup_eigenpairs(B, N_V, N_Q)
        report.records.append(SweepRecord(mesh.delta / width_ref, eig.beta,
                                          eig.b_norm, len(eig.eigenvalues)))

    deltas = [r.delta_rel for r in report.records]
    betas = [r.beta for r in report.records]
    report.slope, report.slope_band = _fit_slope(deltas, betas)
    report.verdict = _verdict(report.slope, betas)
    return report


def supremizer(B, N_V, q_free) -> np.ndarray:
    """Field-side element achieving the sup for a potential eigenvector:
    v = N_V^{-1} B^T q on the free DOFs."""
    return solve_sparse(N_V, np.asarray(B.T @ q_free).ravel())


def export_eigenmode(mesh, v_space, q_space, B, N_V, eig: EigenResult,
                     mode_rank: int, out_prefix):
    """Write one eigenmode as point clouds: the potential eigenvector at
    the a-nodes and the supremizer field sampled on elements."""
    if not (0 <= mode_rank < len(eig.eigenvalues)):
        raise IndexError("mode rank out of range")
    q_free = eig.eigenvectors[:, mode_rank]
    q_full = np.zeros(q_space.n_dofs)
    q_full[q_space.free] = q_free

    lines = ["x,y,value"]
    for k, (kind, ent) in enumerate(q_space.entries):
        if kind == "node":
            x, y = mesh.nodes[ent]
            lines.append(f"{x:.17g},{y:.17g},{q_full[k]:.17g}")
    with open(f"{out_prefix}_potential.csv", "w") as f:
        f.write("\n".join(lines) + "\n")

    v_free = supremizer(B, N_V, q_free)
    v_full = np.zeros(v_space.n_dofs)
    v_full[v_space.free] = v_free
    lines = ["x,y,value"]
    if v_space.family == "H":
        from .spaces import eval_h_field, whitney_edge_coefficients
        expanded = whitney_edge_coefficients(v_space, v_full)
        center = np.full(3, 1.0 / 3.0)
        for t in v_space.meta["sc_tris"]:
            h = eval_h_field(v_space, v_full, int(t), center, _expanded=expanded)[0]
            cx, cy = mesh.nodes[mesh.triangles[t]].mean(axis=0)
            lines.append(f"{cx:.17g},{cy:.17g},{np.hypot(*h):.17g}")
    else:
        from .assembly import tape_current_density
        segs, _ = mesh.interface(Interface.GAMMA_W)
        j = tape_current_density(v_space, v_full)
        for k, seg in enumerate(segs):
            cx, cy = mesh.nodes[seg].mean(axis=0)
            lines.append(f"{cx:.17g},{cy:.17g},{j[k]:.17g}")
    with open(f"{out_prefix}_supremizer.csv", "w") as f:
        f.write("\n".join(lines) + "\n")
    return q_full, v_full
