"""Post-processing: interface flux profiles, tape current profiles and
a scalar oscillation measure.

Profiles are sampled element-locally, without interpolation smoothing,
so that discretization oscillations survive into the data.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._geom import tri_geometry
from .materials import MU0
from .mesh import Interface, Mesh2D, Region
from .spaces import (DofSpace, eval_a_curl, eval_h_field,
                     whitney_edge_coefficients)
from .assembly import tape_current_density


class SamplingError(ValueError):
    pass


@dataclass
class ProfileSample:
    """Sampled 1D profile: strictly increasing positions (m) and the
    sampled values; ``offset`` is the sampling-line distance from the
    interface."""

    positions: np.ndarray
    values: np.ndarray
    offset: float = 0.0
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if len(self.positions) < 3:
            raise SamplingError("a profile needs at least 3 samples")
        if np.any(np.diff(self.positions) <= 0.0):
            raise SamplingError("positions must be strictly increasing")

    def validate_report_quality(self):
        if len(self.positions) < 50:
            raise SamplingError("report profiles need at least 50 samples")
        return self

    def to_csv(self, path):
        lines = ["position,value"]
        for p, v in zip(self.positions, self.values):
            lines.append(f"{p:.17g},{v:.17g}")
        with open(path, "w") as f:
            f.write("\n".join(lines) + "\n")


def locate_points(mesh: Mesh2D, points, region=None):
    """Containing triangle and barycentric coordinates per point."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    cand = np.arange(mesh.n_triangles) if region is None else mesh.region_tris(region)
    areas, grads = tri_geometry(mesh, cand)
    p0 = mesh.nodes[mesh.triangles[cand][:, 0]]
    tri_ids = np.empty(len(points), dtype=np.int64)
    barys = np.empty((len(points), 3))
    for k, pt in enumerate(points):
        d = pt[None, :] - p0
        l1 = np.einsum("td,td->t", grads[:, 1, :], d)
        l2 = np.einsum("td,td->t", grads[:, 2, :], d)
        l0 = 1.0 - l1 - l2
        ok = (l0 >= -1e-10) & (l1 >= -1e-10) & (l2 >= -1e-10)
        hits = np.flatnonzero(ok)
        if len(hits) == 0:
            raise SamplingError(f"point {pt} lies outside the sampled region")
        t = hits[0]
        tri_ids[k] = cand[t]
        barys[k] = (l0[t], l1[t], l2[t])
    return tri_ids, barys


def _bar_extent(mesh: Mesh2D):
    segs, _ = mesh.interface(Interface.GAMMA_M)
    xs = mesh.nodes[np.unique(segs), 0]
    ys = mesh.nodes[np.unique(segs), 1]
    return xs.min(), xs.max(), ys.max()


def sample_bn_profile(mesh: Mesh2D, h_space: DofSpace, a_space: DofSpace,
                      solution, offset: float = 1e-4, side: str = "ABOVE",
                      n_samples: int = 200) -> ProfileSample:
    """Normal flux density along a horizontal line offset from the
    conductor/ferromagnet interface of the stacked-bar problem.

    ABOVE samples b = curl a in the a-side material; BELOW samples
    b = mu0 h inside the conductor.  The normal is the conductor's
    outward normal at the top face (+y).
    """
    h_full, a_full = solution
    x0, x1, y_top = _bar_extent(mesh)
    if offset <= 0.0:
        raise SamplingError("offset must be positive")
    side = side.upper()
    if side == "ABOVE":
        y = y_top + offset
        region = Region.OMEGA_A_FERRO
    elif side == "BELOW":
        y = y_top - offset
        region = Region.OMEGA_H_SC
    else:
        raise SamplingError("side must be ABOVE or BELOW")

    pad = 1e-9 * (x1 - x0)
    xs = np.linspace(x0 + pad, x1 - pad, n_samples)
    pts = np.column_stack([xs, np.full_like(xs, y)])
    tri_ids, barys = locate_points(mesh, pts, region=region)

    vals = np.empty(n_samples)
    if side == "ABOVE":
        for k in range(n_samples):
            b = eval_a_curl(a_space, a_full, int(tri_ids[k]), barys[k])[0]
            vals[k] = b[1]
    else:
        expanded = whitney_edge_coefficients(h_space, h_full)
        for k in range(n_samples):
            h = eval_h_field(h_space, h_full, int(tri_ids[k]), barys[k],
                             _expanded=expanded)[0]
            vals[k] = MU0 * h[1]
    return ProfileSample(xs, vals, offset=offset,
                         metadata={"side": side, "quantity": "b_n"})


def sample_tape_current(mesh: Mesh2D, t_space: DofSpace, t_full,
                        j_c: float | None = None) -> ProfileSample:
    """Current density per tape element at segment midpoints, divided
    by j_c when given (dimensionless profile)."""
    segs, _ = mesh.interface(Interface.GAMMA_W)
    j = tape_current_density(t_space, t_full)
    if j_c is not None:
        j = j / j_c
    mids = 0.5 * (mesh.nodes[segs[:, 0]] + mesh.nodes[segs[:, 1]])
    # abscissa along the tape; horizontal tapes sample by x
    s = np.concatenate([[0.0], np.cumsum(mesh.segment_lengths(segs))])
    pos = 0.5 * (s[:-1] + s[1:]) + mids[0, 0] - 0.5 * (s[1] - s[0])
    return ProfileSample(pos, j, metadata={"quantity": "j_z/j_c" if j_c else "j_z"})


def oscillation_metric(profile: ProfileSample) -> float:
    """Total variation of the profile over its range: 1 for monotone
    profiles, growing with every additional oscillation."""
    v = profile.values
    rng = v.max() - v.min()
    if rng == 0.0:
        return 1.0
    return float(np.abs(np.diff(v)).sum() / rng)


def sign_changes(values, tol_rel: float = 1e-9) -> int:
    """Count of strict sign alternations, ignoring near-zero samples."""
    v = np.asarray(values, dtype=float)
    scale = np.abs(v).max()
    if scale == 0.0:
        return 0
    s = np.sign(v[np.abs(v) > tol_rel * scale])
    return int(np.sum(s[1:] != s[:-1]))


def penetrated_area(mesh: Mesh2D, h_space: DofSpace, h_full, j_c: float,
                    threshold: float = 0.8) -> float:
    """Conductor area where |j| exceeds threshold * j_c."""
    from .spaces import elementwise_curl_h
    tris, curl = elementwise_curl_h(h_space, h_full)
    areas, _ = tri_geometry(mesh, tris)
    return float(areas[np.abs(curl) > threshold * j_c].sum())


def magnetization(mesh: Mesh2D, h_space: DofSpace, h_full) -> np.ndarray:
    """Magnetic moment per unit length of the conductor currents:
    m = 1/2 int r x (j z-hat) dA."""
    from .spaces import elementwise_curl_h
    tris, curl = elementwise_curl_h(h_space, h_full)
    areas, _ = tri_geometry(mesh, tris)
    cents = mesh.nodes[mesh.triangles[tris]].mean(axis=1)
    mx = 0.5 * np.sum(cents[:, 1] * curl * areas)
    my = -0.5 * np.sum(cents[:, 0] * curl * areas)
    return np.array([mx, my])
