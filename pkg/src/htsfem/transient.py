"""Implicit-Euler time stepping with Newton-Raphson iterations.

Sources are piecewise-linear ramps; the default experiment ramps the
drive over the first half of the simulation and holds it afterwards.
A step whose Newton loop fails is retried with a halved step size (at
most four halvings); the step size re-doubles towards the nominal one
after two consecutive easy steps.

Voltage conventions: drive and reported voltages are per unit length
and positive when driving a positive net current through a resistive
state (V = R I at DC).  The weak-form voltage has the opposite sign
and is handled internally.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .assembly import assemble_ha_iteration, assemble_ta_iteration
from .linalg import SingularSystemError, solve_sparse
from .materials import Materials
from .spaces import essential_vector


class NonConvergenceError(RuntimeError):
    def __init__(self, message, step=None, residuals=None):
        super().__init__(message)
        self.step = step
        self.residuals = residuals


@dataclass(frozen=True)
class Ramp:
    """Piecewise-linear source profile; constant extrapolation."""

    times: tuple
    values: tuple

    def __call__(self, t):
        return float(np.interp(t, self.times, self.values))


def ramp_then_hold(peak: float, t_ramp: float, t_end: float) -> Ramp:
    return Ramp((0.0, t_ramp, t_end), (0.0, peak, peak))


@dataclass(frozen=True)
class TimeConfig:
    """Time grid, Newton controls and source ramps.

    ``drives`` maps conductor/tape ids to ("current"|"voltage", Ramp);
    modes must match the ones the spaces were built with.
    """

    dt: float
    t_end: float
    b_ext: Ramp | None = None
    b_ext_dir: tuple = (1.0, 0.0)
    drives: dict = field(default_factory=dict)
    max_iter: int = 30
    rel_residual_tol: float = 1e-6
    rel_increment_tol: float = 1e-9
    max_halvings: int = 4

    def __post_init__(self):
        if self.dt <= 0.0 or self.t_end <= 0.0:
            raise ValueError("dt and t_end must be positive")
        if not (0.0 < self.rel_residual_tol < 1.0) or \
                not (0.0 < self.rel_increment_tol < 1.0):
            raise ValueError("tolerances must lie in (0, 1)")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


@dataclass
class TimeHistory:
    """Accepted steps of a transient run (full coefficient vectors)."""

    formulation: str
    times: list = field(default_factory=list)
    dts: list = field(default_factory=list)
    v: list = field(default_factory=list)
    q: list = field(default_factory=list)
    newton_iters: list = field(default_factory=list)
    final_residuals: list = field(default_factory=list)
    residual_traces: list = field(default_factory=list)
    reactions: dict = field(default_factory=dict)
    drive_values: dict = field(default_factory=dict)

    @property
    def n_steps(self) -> int:
        return len(self.times)


def _current_values(v_space, drives, t):
    out = {}
    items = v_space.meta["conductors"] if v_space.family == "H" else v_space.meta["tapes"]
    for c in items:
        mode, ramp = drives.get(c.id, (c.mode, None))
        if mode != c.mode:
            raise ValueError(f"drive mode for conductor {c.id} does not match the space")
        if c.mode == "current":
            out[c.id] = ramp(t) if ramp is not None else c.value
    return out


def _voltage_values(v_space, drives, t):
    """Weak-form voltages (sign-flipped from the reported convention)."""
    out = {}
    items = v_space.meta["conductors"] if v_space.family == "H" else v_space.meta["tapes"]
    for c in items:
        if c.mode == "voltage":
            mode, ramp = drives.get(c.id, (c.mode, None))
            out[c.id] = -(ramp(t) if ramp is not None else -c.value)
    return out


def run_transient(mesh, spaces, materials: Materials, time: TimeConfig,
                  formulation: str) -> TimeHistory:
    """Integrate the coupled system from a zero initial solution.

    ``spaces`` is (h_space, a_space) for "ha" or (t_space, a_space)
    for "ta".  Returns the accepted-step history; raises
    NonConvergenceError when a step fails after all halvings.
    """
    formulation = formulation.lower()
    if formulation not in ("ha", "ta"):
        raise ValueError("formulation must be 'ha' or 'ta'")
    v_space, q_space = spaces
    assemble = assemble_ha_iteration if formulation == "ha" else assemble_ta_iteration

    hist = TimeHistory(formulation)
    ids = [c.id for c in (v_space.meta["conductors"] if v_space.family == "H"
                          else v_space.meta["tapes"])]
    for cid in ids:
        hist.reactions[cid] = []
        hist.drive_values[cid] = []

    v_prev = np.zeros(v_space.n_dofs)
    q_prev = np.zeros(q_space.n_dofs)
    t = 0.0
    dt_cur = time.dt
    easy_run = 0
    step_idx = 0

    while t < time.t_end - 1e-12 * time.t_end:
        dt_cur = min(dt_cur, time.t_end - t)
        accepted = False
        halvings = 0
        while not accepted:
            t_new = t + dt_cur
            currents = _current_values(v_space, time.drives, t_new)
            voltages = _voltage_values(v_space, time.drives, t_new)
            v_ess = essential_vector(v_space, currents=currents)
            trace = None
            if time.b_ext is not None:
                bext = time.b_ext(t_new)
                dx, dy = time.b_ext_dir
                trace = lambda x, y, b=bext: -b * (dx * y - dy * x)
            q_ess = essential_vector(q_space, a_trace=trace)
            try:
                result = _newton_step(mesh, assemble, v_space, q_space, materials,
                                      (v_prev, q_prev), dt_cur, v_ess, q_ess,
                                      voltages, time)
            except (NonConvergenceError, SingularSystemError) as err:
                if halvings >= time.max_halvings:
                    trace_r = getattr(err, "residuals", None)
                    raise NonConvergenceError(
                        f"step {step_idx} failed after {halvings} halvings: {err}",
                        step=step_idx, residuals=trace_r) from err
                halvings += 1
                dt_cur *= 0.5
                continue
            accepted = True

        v_new, q_new, iters, res_trace, sys = result
        hist.times.append(t_new)
        hist.dts.append(dt_cur)
        hist.v.append(v_new)
        hist.q.append(q_new)
        hist.newton_iters.append(iters)
        hist.final_residuals.append(res_trace[-1])
        hist.residual_traces.append(res_trace)
        x_full = np.concatenate([v_new, q_new])
        r_full = sys.residual_full(x_full)
        for cid in ids:
            hist.reactions[cid].append(float(r_full[v_space.dof("global", cid)]))
            mode, ramp = time.drives.get(cid, (None, None))
            hist.drive_values[cid].append(ramp(t_new) if ramp is not None else 0.0)

        v_prev, q_prev = v_new, q_new
        t = t_new
        step_idx += 1
        easy_run = easy_run + 1 if iters <= 3 else 0
        if halvings == 0 and easy_run >= 2 and dt_cur < time.dt:
            dt_cur = min(2.0 * dt_cur, time.dt)
    return hist


def _newton_step(mesh, assemble, v_space, q_space, materials, prev, dt,
                 v_ess, q_ess, voltages, time: TimeConfig):
    v_prev, q_prev = prev
    ess_idx_v = np.array(sorted(v_space.essential), dtype=np.int64)
    ess_idx_q = np.array(sorted(q_space.essential), dtype=np.int64)
    v_it = v_prev.copy()
    q_it = q_prev.copy()
    if len(ess_idx_v):
        v_it[ess_idx_v] = v_ess[ess_idx_v]
    if len(ess_idx_q):
        q_it[ess_idx_q] = q_ess[ess_idx_q]

    v_key = "h_essential" if v_space.family == "H" else "t_essential"

    def reassemble(iterate):
        return assemble(mesh, v_space, q_space, materials, (v_prev, q_prev),
                        iterate, dt,
                        **{"a_essential": q_ess, v_key: v_ess,
                           "voltages": voltages})

    sys = reassemble((v_it, q_it))

    def rel_residual(system, v_full, q_full):
        # componentwise backward error: robust to the disparate block
        # scalings of the coupled systems (the tape block carries the
        # thickness factor)
        x = np.concatenate([v_full, q_full])
        F = system.residual_full(x)
        scale = abs(system.K_full) @ np.abs(x) + np.abs(system.s_full)
        free = system.free_indices()
        sc = scale[free]
        floor = sc.max() * 1e-14 + 1e-300
        return float((np.abs(F[free]) / np.maximum(sc, floor)).max())

    r = rel_residual(sys, v_it, q_it)
    trace = [r]
    iters = 0
    inc = np.inf
    while r > time.rel_residual_tol and iters < time.max_iter:
        x_free = solve_sparse(sys.K, sys.s)
        x_full = sys.expand(x_free)
        x_old = np.concatenate([v_it, q_it])
        # backtracking on the residual guards against power-law overshoot
        step = x_full - x_old
        damping = 1.0
        for _ in range(4):
            x_try = x_old + damping * step
            v_try, q_try = sys.split(x_try)
            sys_try = reassemble((v_try, q_try))
            r_try = rel_residual(sys_try, v_try, q_try)
            if r_try < r or damping <= 0.125:
                break
            damping *= 0.5
        inc = damping * np.linalg.norm(step) / max(np.linalg.norm(x_try), 1e-300)
        v_it, q_it = v_try, q_try
        sys, r = sys_try, r_try
        iters += 1
        trace.append(r)
        if inc < time.rel_increment_tol:
            break
    if r > time.rel_residual_tol and inc >= time.rel_increment_tol:
        raise NonConvergenceError(
            f"Newton stalled at residual {r:.3e} after {iters} iterations",
            residuals=trace)
    return v_it, q_it, iters, trace, sys


def circuit_post(history: TimeHistory, spaces, cid: int):
    """Complementary circuit quantity of conductor/tape ``cid``.

    Current-driven: the per-unit-length voltage recovered from the
    constrained-row reaction.  Voltage-driven: the net current read
    from the global degree of freedom.  Returns (times, values).
    """
    v_space, _ = spaces
    times = np.array(history.times)
    items = v_space.meta["conductors"] if v_space.family == "H" else v_space.meta["tapes"]
    item = next(c for c in items if c.id == cid)
    if item.mode == "current":
        reac = np.array(history.reactions[cid])
        dts = np.array(history.dts)
        if v_space.family == "H":
            vals = reac / dts
        else:
            vals = -reac / (dts * v_space.mesh.w)
        return times, vals
    dof = v_space.dof("global", cid)
    vals = np.array([v[dof] for v in history.v])
    if v_space.family == "T":
        vals = vals * v_space.mesh.w
    return times, vals


def write_history_csv(history: TimeHistory, quantity: str, values, path):
    """One tracked quantity as (time, value) rows."""
    lines = [f"time,{quantity}"]
    for t, v in zip(history.times, values):
        lines.append(f"{t:.17g},{v:.17g}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def write_snapshots(history: TimeHistory, path):
    """ASCII block dump of all coefficient vectors, one block per step."""
    lines = [f"# formulation {history.formulation}",
             f"# steps {history.n_steps}"]
    for k in range(history.n_steps):
        lines.append(f"step {k} time {history.times[k]:.17g} "
                     f"dt {history.dts[k]:.17g} "
                     f"nv {len(history.v[k])} nq {len(history.q[k])}")
        lines.extend(f"{x:.17g}" for x in history.v[k])
        lines.extend(f"{x:.17g}" for x in history.q[k])
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def read_snapshots(path):
    """Inverse of :func:`write_snapshots`; returns a list of
    (time, dt, v, q) tuples."""
    with open(path) as f:
        lines = [ln.strip() for ln in f if ln.strip()]
    out = []
    k = 0
    while k < len(lines):
        if lines[k].startswith("#"):
            k += 1
            continue
        head = lines[k].split()
        t, dt = float(head[3]), float(head[5])
        nv, nq = int(head[7]), int(head[9])
        v = np.array([float(x) for x in lines[k + 1:k + 1 + nv]])
        q = np.array([float(x) for x in lines[k + 1 + nv:k + 1 + nv + nq]])
        out.append((t, dt, v, q))
        k += 1 + nv + nq
    return out
