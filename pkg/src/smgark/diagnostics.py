"""Verification harness: map symplecticity and reversibility, convergence
orders, long-time energy behaviour, the stiffness sweep and a high-accuracy
reference solver.
"""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .composition import CompositionWeights, advanced_composition, compose_stepper, triple_jump
from .integrators import Stepper, StepStats, integrate, make_stepper, steps_for
from .systems import (FpuParams, PhaseState, SeparableSystem, _fpu_link_matrix, fpu_system,
                      momentum_reversal, oscillatory_energy, standard_initial_state)


def _call(stepper, sys, y, H):
    work = stepper.prepare(sys) if hasattr(stepper, "prepare") else sys
    return stepper(work, y, H)[0]


def structure_matrix(n: int) -> np.ndarray:
    """Canonical J for the ordering ``(p, q)`` with ``dp = -H_q``, ``dq = H_p``."""
    J = np.zeros((2 * n, 2 * n))
    J[:n, n:] = -np.eye(n)
    J[n:, :n] = np.eye(n)
    return J


def step_jacobian(stepper, sys, y: PhaseState, H: float, rel_step: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian of ``y -> Phi_H(y)``."""
    work = stepper.prepare(sys) if hasattr(stepper, "prepare") else sys
    x = y.as_vector()
    n = y.dim
    M = np.empty((x.size, x.size))
    for j in range(x.size):
        d = rel_step * (1.0 + abs(x[j]))
        xp = x.copy()
        xm = x.copy()
        xp[j] += d
        xm[j] -= d
        fp = stepper(work, PhaseState.from_vector(xp, n), H)[0].as_vector()
        fm = stepper(work, PhaseState.from_vector(xm, n), H)[0].as_vector()
        M[:, j] = (fp - fm) / (2 * d)
    return M


def symplecticity_residual(stepper, sys, y: PhaseState, H: float, rel_step: float = 1e-6) -> float:
    """``max |M^T J M - J|`` for the finite-difference step Jacobian M."""
    M = step_jacobian(stepper, sys, y, H, rel_step)
    J = structure_matrix(y.dim)
    return float(np.max(np.abs(M.T @ J @ M - J)))


def reversibility_residual(stepper, sys, y: PhaseState, H: float) -> float:
    """``|rho Phi_H rho Phi_H (y) - y|_inf`` with ``rho`` the momentum flip."""
    if H == 0:
        return 0.0
    y1 = _call(stepper, sys, y, H)
    y2 = momentum_reversal(_call(stepper, sys, momentum_reversal(y1), H))
    return float(np.max(np.abs(y2.as_vector() - y.as_vector())))


# ---------------------------------------------------------------- non-symplectic foils

def _full_field(sys, y: PhaseState) -> PhaseState:
    src = getattr(sys, "source", sys)
    return src.vector_field(y)


def forward_euler() -> Stepper:
    def fn(sys, y, H, cache=None, micro_observer=None):
        f = _full_field(sys, y)
        return PhaseState(y.p + H * f.p, y.q + H * f.q), StepStats(base_steps=1)
    return Stepper(fn, "forward-euler", 1)


def rk2() -> Stepper:
    """Explicit midpoint rule (second order, neither symplectic nor symmetric)."""
    def fn(sys, y, H, cache=None, micro_observer=None):
        k1 = _full_field(sys, y)
        ym = PhaseState(y.p + 0.5 * H * k1.p, y.q + 0.5 * H * k1.q)
        k2 = _full_field(sys, ym)
        return PhaseState(y.p + H * k2.p, y.q + H * k2.q), StepStats(base_steps=1)
    return Stepper(fn, "rk2", 1)


# ---------------------------------------------------------------- reference solver

class ReferenceError(RuntimeError):
    """The reference failed its half-step self-consistency check."""

    def __init__(self, msg: str, discrepancy: float):
        super().__init__(msg)
        self.discrepancy = discrepancy


def _kernel_data(sys):
    """(K, D) when the system has the form |p|^2/2 + sum K q^2/2 + sum (Dq)^4/4."""
    src = getattr(sys, "source", sys)
    name = getattr(src, "name", "")
    if name == "fpu":
        m, w = src.params["m"], src.params["omega"]
        K = np.zeros(2 * m)
        K[1::2] = w**2
        return K, _fpu_link_matrix(m)
    if name == "harmonic":
        n = src.params.get("dim", 1)
        return np.full(n, src.params["omega"] ** 2), np.zeros((0, n))
    return None


def _run_reference(sys, y0: PhaseState, h: float, n_steps: int, gammas: np.ndarray, every: int) -> np.ndarray:
    data = _kernel_data(sys)
    if data is not None:
        from ._kernels import composed_leapfrog
        K, D = data
        return composed_leapfrog(y0.p.copy(), y0.q.copy(), float(h), int(n_steps),
                                 np.ascontiguousarray(gammas, dtype=float), K, D, int(every))
    # generic (slow) path: Stormer-Verlet on the whole Hamiltonian
    src = getattr(sys, "source", sys)
    base = make_stepper("mr-lpfr", 1)
    st = compose_stepper(base, CompositionWeights(gammas))
    out = [y0.as_vector()]
    y = y0
    for k in range(1, n_steps + 1):
        y = st(src, y, h)[0]
        if k % every == 0:
            out.append(y.as_vector())
    return np.array(out)


def _reference_weights(order: int) -> np.ndarray:
    if order == 2:
        return np.array([1.0])
    if order == 4:
        return triple_jump(2).gammas
    return advanced_composition(order).gammas


def reference_trajectory(sys, y0: PhaseState, t_end: float, sample_dt: float | None = None,
                         h: float = 1e-5, order: int = 4, tol: float = 1e-10):
    """Composed singlerate leapfrog at fixed step h, checked against a run at h/2.

    Returns ``(times, states)`` on the grid ``0, sample_dt, ..., t_end``.
    The default order 4 is the triple-jump composition; orders 6 and 8 use
    the bundled advanced sets, which is what very stiff problems need.
    """
    if t_end < 0:
        raise ValueError("t_end must be nonnegative")
    if t_end == 0:
        return np.array([0.0]), [y0]
    sample_dt = t_end if sample_dt is None else sample_dt
    n_steps = steps_for(t_end, h)
    every = steps_for(sample_dt, h)
    if n_steps % every:
        raise ValueError("t_end must be a multiple of sample_dt")
    g = _reference_weights(order)
    coarse = _run_reference(sys, y0, h, n_steps, g, every)
    fine = _run_reference(sys, y0, h / 2, 2 * n_steps, g, 2 * every)
    gap = float(np.max(np.abs(coarse - fine)))
    if not np.isfinite(gap) or gap > tol:
        raise ReferenceError(f"reference not self-consistent: |y_h - y_h/2| = {gap:.3e} > {tol:.1e}", gap)
    n = y0.dim
    times = np.arange(fine.shape[0]) * sample_dt
    return times, [PhaseState.from_vector(r, n) for r in fine]


def reference_solution(sys, y0: PhaseState, t_end: float, h: float = 1e-5, order: int = 4,
                       tol: float = 1e-10) -> PhaseState:
    return reference_trajectory(sys, y0, t_end, None, h, order, tol)[1][-1]


# ---------------------------------------------------------------- convergence

def slow_mask(sys) -> np.ndarray:
    """Slow positions ``q_{0,j}`` of the FPU chain (every component otherwise)."""
    src = getattr(sys, "source", sys)
    n = src.dim
    m = np.zeros(2 * n, dtype=bool)
    if getattr(src, "name", "") == "fpu":
        m[n::2] = True
    else:
        m[:] = True
    return m


@dataclass
class ConvergenceResult:
    step_sizes: np.ndarray
    errors: np.ndarray
    slope: float
    component_mask: np.ndarray
    label: str = ""

    def to_csv(self, fh=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["H", "error"])
        for H, e in zip(self.step_sizes, self.errors):
            w.writerow([f"{H:.17g}", f"{e:.17g}"])
        w.writerow(["slope", f"{self.slope:.17g}"])
        text = buf.getvalue()
        if fh is not None:
            fh.write(text)
        return text


def fit_slope(H, err) -> float:
    H = np.asarray(H, dtype=float)
    err = np.asarray(err, dtype=float)
    ok = np.isfinite(err) & (err > 0)
    if ok.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(H[ok]), np.log(err[ok]), 1)[0])


def convergence_order(stepper, sys, y0: PhaseState, t_end: float, H_list: Sequence[float],
                      reference: PhaseState, mask: np.ndarray | None = None, label: str = "") -> ConvergenceResult:
    """Max-norm error over ``mask`` at t_end for each H and the log-log slope."""
    H_arr = np.array(sorted(H_list, reverse=True), dtype=float)
    if np.any(np.diff(H_arr) >= 0):
        raise ValueError("step sizes must be distinct")
    mask = slow_mask(sys) if mask is None else np.asarray(mask, dtype=bool)
    ref = reference.as_vector()
    errs = []
    for H in H_arr:
        n = steps_for(t_end, H)
        y = integrate(stepper, sys, y0, H, n, record=False).final
        errs.append(float(np.max(np.abs(y.as_vector()[mask] - ref[mask]))))
    errs = np.array(errs)
    return ConvergenceResult(H_arr, errs, fit_slope(H_arr, errs), mask, label)


# ---------------------------------------------------------------- long-time energy

@dataclass
class EnergySeries:
    times: np.ndarray
    hamiltonian: np.ndarray
    oscillatory: np.ndarray  # columns I_1..I_m, I
    drift_slope: float
    max_deviation: float
    failed_at: float | None = None
    stats: StepStats = field(default_factory=StepStats)

    @property
    def invariant_deviation(self) -> float:
        I = self.oscillatory[:, -1]
        return float(np.max(np.abs(I - I[0])))

    def to_csv(self, fh=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        m = self.oscillatory.shape[1] - 1
        w.writerow(["t", "H"] + [f"I{j + 1}" for j in range(m)] + ["I"])
        for t, Hv, row in zip(self.times, self.hamiltonian, self.oscillatory):
            w.writerow([f"{t:.17g}", f"{Hv:.17g}"] + [f"{x:.17g}" for x in row])
        text = buf.getvalue()
        if fh is not None:
            fh.write(text)
        return text


def energy_study(stepper, sys: SeparableSystem, y0: PhaseState, H: float, t_end: float,
                 every: int = 1) -> EnergySeries:
    """Record H(t) and the oscillatory energies; stop at the first non-finite state."""
    params = FpuParams(sys.params["m"], sys.params["omega"])
    work = stepper.prepare(sys) if hasattr(stepper, "prepare") else sys
    n_steps = steps_for(t_end, H)
    cache = {}
    total = StepStats()

    def sample(y):
        I, Itot = oscillatory_energy(y, params)
        return sys.hamiltonian(y), np.append(I, Itot)

    h0, o0 = sample(y0)
    times, Hs, Os = [0.0], [h0], [o0]
    y = y0
    failed = None
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n_steps):
            try:
                y, st = stepper(work, y, H, cache=cache)
            except Exception:  # noqa: BLE001 - a diverging Newton solve ends the run
                failed = k * H
                break
            total += st
            if not np.all(np.isfinite(y.as_vector())):
                failed = (k + 1) * H
                break
            if (k + 1) % every == 0 or k + 1 == n_steps:
                hv, ov = sample(y)
                times.append((k + 1) * H)
                Hs.append(hv)
                Os.append(ov)
    times = np.array(times)
    Hs = np.array(Hs)
    dev = Hs - Hs[0]
    if failed is not None:
        max_dev = math.inf
    else:
        max_dev = float(np.max(np.abs(dev))) if np.all(np.isfinite(dev)) else math.inf
    slope = float(np.polyfit(times, dev, 1)[0]) if times.size > 1 and np.all(np.isfinite(dev)) else math.nan
    return EnergySeries(times, Hs, np.array(Os), slope, max_dev, failed, total)


# ---------------------------------------------------------------- stiffness sweep

SWEEP_OMEGAS = (50.0, 500.0, 5000.0, 10000.0)
SWEEP_H = tuple(2.0 ** -k for k in range(5, 14))


@dataclass
class SweepCell:
    scheme: str
    omega: float
    H: float
    error: float
    reason: str = ""


def _ref_settings(omega: float) -> tuple[float, int]:
    # step and order that keep h*omega small enough for a 1e-10 self-consistent reference
    if omega <= 100:
        return 1e-5, 6
    return 2e-6, 8


def sweep_reference(omega: float, t_end: float = 3.0, m: int = 3) -> PhaseState:
    sys = fpu_system(FpuParams(m, omega))
    h, order = _ref_settings(omega)
    return reference_solution(sys, standard_initial_state(FpuParams(m, omega)), t_end, h=h, order=order)


def scheme_stepper(spec: str):
    """``"mr-imex2"`` or ``"mr-imex2+tj"`` (triple-jump composed), M = 1."""
    base, _, comp = spec.partition("+")
    st = make_stepper(base, 1)
    if comp:
        from .composition import compose_chain, weights_for
        st = compose_chain(st, weights_for(comp, 4))
    return st


def _sweep_cell(args):
    spec, omega, H, t_end, m, ref_vec = args
    sys = fpu_system(FpuParams(m, omega))
    y0 = standard_initial_state(FpuParams(m, omega))
    mask = slow_mask(sys)
    try:
        st = scheme_stepper(spec)
        y = integrate(st, sys, y0, H, steps_for(t_end, H), record=False).final
        err = float(np.max(np.abs(y.as_vector()[mask] - ref_vec[mask])))
        if not np.isfinite(err):
            return SweepCell(spec, omega, H, math.nan, "non-finite state")
        return SweepCell(spec, omega, H, err)
    except Exception as exc:  # noqa: BLE001 - recorded per cell, sweep continues
        return SweepCell(spec, omega, H, math.nan, f"{type(exc).__name__}: {exc}")


def stability_sweep(schemes: Sequence[str] = ("mr-imex2", "mr-imim2", "mr-imex2+tj", "mr-imim2+tj"),
                    omega_list: Sequence[float] = SWEEP_OMEGAS, H_list: Sequence[float] = SWEEP_H,
                    t_end: float = 3.0, m: int = 3, workers: int = 1,
                    references: dict | None = None) -> list[SweepCell]:
    """Global slow-component errors on a scheme x omega x H grid (rows in that order)."""
    refs = dict(references or {})
    for w in omega_list:
        if w not in refs:
            refs[w] = sweep_reference(w, t_end, m)
    jobs = [(s, float(w), float(H), t_end, m, refs[w].as_vector())
            for s in schemes for w in omega_list for H in H_list]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(_sweep_cell, jobs))
    return [_sweep_cell(j) for j in jobs]


def sweep_to_csv(cells: Sequence[SweepCell], fh=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["scheme", "omega", "H", "error", "reason"])
    for c in cells:
        w.writerow([c.scheme, f"{c.omega:.17g}", f"{c.H:.17g}", f"{c.error:.17g}", c.reason])
    text = buf.getvalue()
    if fh is not None:
        fh.write(text)
    return text


def sweep_slopes(cells: Sequence[SweepCell]) -> dict:
    """Fitted slope per (scheme, omega)."""
    groups: dict = {}
    for c in cells:
        groups.setdefault((c.scheme, c.omega), []).append((c.H, c.error))
    return {k: fit_slope(*zip(*v)) for k, v in groups.items()}


# ---------------------------------------------------------------- fast-variable trace

def micro_trace(stepper, sys, y0: PhaseState, H: float, t_end: float, component: int = 1):
    """Times and values of ``q[component]`` after every fast micro-step."""
    ts, vals = [0.0], [float(y0.q[component])]

    def obs(t, p, q):
        ts.append(t)
        vals.append(float(q[component]))

    integrate(stepper, sys, y0, H, steps_for(t_end, H), micro_observer=obs, record=False)
    if len(ts) == 1:
        raise ValueError(f"{getattr(stepper, 'name', 'stepper')} does not report micro-steps")
    return np.array(ts), np.array(vals)


def fast_trace_deviation(stepper, sys, y0: PhaseState, H: float, t_end: float,
                         component: int = 1, h_ref: float = 1e-5) -> float:
    """Max deviation of ``q[component]`` on the micro grid from the reference solution."""
    ts, vals = micro_trace(stepper, sys, y0, H, t_end, component)
    dt = float(np.min(np.diff(ts)))
    rt, rs = reference_trajectory(sys, y0, t_end, sample_dt=dt, h=h_ref)
    ref = np.array([s.q[component] for s in rs])
    idx = np.rint(ts / dt).astype(int)
    if np.max(np.abs(idx * dt - ts)) > 1e-9:
        raise ValueError("micro grid is not uniform")
    return float(np.max(np.abs(vals - ref[idx])))


__all__ = [
    "structure_matrix", "step_jacobian", "symplecticity_residual", "reversibility_residual",
    "forward_euler", "rk2", "ReferenceError", "reference_trajectory", "reference_solution",
    "slow_mask", "ConvergenceResult", "fit_slope", "convergence_order", "EnergySeries",
    "energy_study", "SWEEP_OMEGAS", "SWEEP_H", "SweepCell", "sweep_reference", "scheme_stepper",
    "stability_sweep", "sweep_to_csv", "sweep_slopes", "micro_trace", "fast_trace_deviation",
]
