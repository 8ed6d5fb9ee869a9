"""One-step maps and the integration driver.

Every stepper is a callable ``stepper(sys, y, H, cache=None, micro_observer=None)``
returning ``(PhaseState, StepStats)``. ``cache`` is a dict owned by the driver;
steppers that apply the slow potential as kicks at both ends of the macro-step
store the final slow force there, so consecutive steps can share it. The
``micro_observer(t_offset, p, q)`` hook sees the state after each fast
micro-step where that state exists.

Force evaluations are counted per call of the slow potential gradient
(``slow_force_evals``) and of the fast potential gradient (``fast_force_evals``).
Kinetic gradients are cheap in all shipped problems and are not counted.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import networkx as nx
import numpy as np

from .systems import (PhaseState, SeparableSystem, TwoWaySystem, as_separable, imex_split,
                      oscillatory_energy, FpuParams)
from .tableau import (AnyTableau, MgarkTableau, PartitionedMgarkTableau, as_partitioned,
                      build_mr_imex2, build_mr_imim2, build_mr_lpfr, flatten, stage_slices)


@dataclass(frozen=True)
class SolverConfig:
    newton_rel_tol: float = 1e-12
    newton_abs_tol: float = 1e-14
    max_iters: int = 50
    jacobian_mode: str = "analytic"  # or "fd"
    fd_step_scale: float = math.sqrt(np.finfo(float).eps)

    def __post_init__(self):
        if not (self.newton_rel_tol > 0 and self.newton_abs_tol > 0):
            raise ValueError("Newton tolerances must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.jacobian_mode not in ("analytic", "fd"):
            raise ValueError("jacobian_mode must be 'analytic' or 'fd'")


@dataclass
class StepStats:
    slow_force_evals: int = 0
    fast_force_evals: int = 0
    newton_iters: int = 0
    base_steps: int = 0

    def __iadd__(self, other: "StepStats") -> "StepStats":
        self.slow_force_evals += other.slow_force_evals
        self.fast_force_evals += other.fast_force_evals
        self.newton_iters += other.newton_iters
        self.base_steps += other.base_steps
        return self

    def __add__(self, other: "StepStats") -> "StepStats":
        out = StepStats(**vars(self))
        out += other
        return out

    def copy(self) -> "StepStats":
        return StepStats(**vars(self))


class NewtonError(RuntimeError):
    def __init__(self, msg: str, residual_norm: float, iters: int):
        super().__init__(f"{msg} (residual norm {residual_norm:.3e} after {iters} iterations)")
        self.residual_norm = residual_norm
        self.iters = iters


class StepError(RuntimeError):
    def __init__(self, step: int, t: float, cause: Exception):
        super().__init__(f"step {step} (t={t:.6g}) failed: {cause}")
        self.step = step
        self.t = t
        self.cause = cause


# ---------------------------------------------------------------- Newton

def fd_jacobian(fun: Callable, x: np.ndarray, scale: float, f0: np.ndarray | None = None) -> np.ndarray:
    """Forward-difference Jacobian with step ``scale * (1 + |x_i|)``."""
    f0 = fun(x) if f0 is None else f0
    J = np.empty((f0.size, x.size))
    for i in range(x.size):
        dx = scale * (1.0 + abs(x[i]))
        xp = x.copy()
        xp[i] += dx
        J[:, i] = (fun(xp) - f0) / dx
    return J


def newton_solve(residual: Callable, jacobian: Optional[Callable], guess, cfg: SolverConfig = SolverConfig(),
                 max_iters: int | None = None) -> tuple[np.ndarray, int]:
    """Damped Newton iteration; returns ``(x, iterations)``.

    Converged means ``|r(x)|_inf <= abs_tol + rel_tol * |x|_inf``. When that
    is first met with a residual clearly above rounding level, one more
    Newton step is taken so that the result is accurate to machine precision
    and depends smoothly on the data.
    """
    x = np.array(guess, dtype=float)
    max_iters = cfg.max_iters if max_iters is None else max_iters
    r = residual(x)
    nr = np.max(np.abs(r)) if r.size else 0.0
    it = 0
    polished = False
    while True:
        if not np.isfinite(nr):
            raise NewtonError("non-finite residual", float(nr), it)
        tol = cfg.newton_abs_tol + cfg.newton_rel_tol * np.max(np.abs(x), initial=0.0)
        if nr <= tol:
            noise = 64 * np.finfo(float).eps * (1.0 + np.max(np.abs(x), initial=0.0))
            if polished or nr <= noise or it >= max_iters:
                return x, it
            polished = True
        elif it >= max_iters:
            raise NewtonError("Newton iteration did not converge", float(nr), it)
        J = jacobian(x) if jacobian is not None else fd_jacobian(residual, x, cfg.fd_step_scale, r)
        try:
            dx = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError:
            dx = np.linalg.lstsq(J, -r, rcond=None)[0]
        it += 1
        alpha = 1.0
        best = None
        for _ in range(9):
            xn = x + alpha * dx
            rn = residual(xn)
            nrn = np.max(np.abs(rn))
            if best is None or nrn < best[2]:
                best = (xn, rn, nrn)
            if nrn < nr or nrn <= tol:
                break
            alpha *= 0.5
        x, r, nr = best


# ---------------------------------------------------------------- generic stepper

_PARTS = {("P", "s"): "T_slow", ("P", "f"): "T_fast", ("Q", "s"): "V_slow", ("Q", "f"): "V_fast"}


class _Plan:
    """Stage bookkeeping for one tableau and one pattern of present forces."""

    def __init__(self, t: PartitionedMgarkTableau, active_parts: frozenset):
        self.t = t
        M = t.M
        halves = {"Q": t.bar, "P": t.tilde}
        nodes = []
        for kind in "PQ":
            nodes += [(kind, "s", 0, i) for i in range(t.slow_stages)]
            for lam in range(1, M + 1):
                nodes += [(kind, "f", lam, i) for i in range(t.fast_stages[lam - 1])]
        self.nodes = [n for n in nodes if _PARTS[n[:2]] in active_parts]
        self.index = {n: k for k, n in enumerate(self.nodes)}
        self.part = [_PARTS[n[:2]] for n in self.nodes]
        other = {"P": "Q", "Q": "P"}

        # direct dependencies (fill of completed micro-steps is handled apart)
        self.deps: list[list[tuple[int, float, bool]]] = []
        for node in self.nodes:
            kind, tier, lam, i = node
            h = halves[kind]
            d = []
            for k2, (kj, tj, lj, j) in enumerate(self.nodes):
                if kj != other[kind]:
                    continue
                if tier == "s" and tj == "s":
                    c, macro = h.ss[i, j], True
                elif tier == "s":
                    c, macro = h.sf[lj - 1][i, j], False
                elif tj == "s":
                    c, macro = h.fs[lam - 1][i, j], True
                elif lj == lam:
                    c, macro = h.ff[lam - 1][i, j], False
                else:
                    continue
                if c != 0.0:
                    d.append((k2, float(c), macro))
            self.deps.append(d)

        # fill weights: consumer kind -> micro-step -> [(node, weight)]
        self.fill: dict[str, list[list[tuple[int, float]]]] = {"P": [], "Q": []}
        for kind in "PQ":
            h = halves[kind]
            for lam in range(1, M + 1):
                row = []
                for j in range(t.fast_stages[lam - 1]):
                    k2 = self.index.get((other[kind], "f", lam, j))
                    w = float(h.bf[lam - 1][j])
                    if k2 is not None and w != 0.0:
                        row.append((k2, w))
                self.fill[kind].append(row)

        g = nx.DiGraph()
        g.add_nodes_from(range(len(self.nodes)))
        for k, d in enumerate(self.deps):
            g.add_edges_from((j, k) for j, _, _ in d)
        for k, (kind, tier, lam, _) in enumerate(self.nodes):
            if tier == "f":
                for ell in range(lam - 1):
                    g.add_edges_from((j, k) for j, _ in self.fill[kind][ell])
        cond = nx.condensation(g)
        self.groups = []
        for c in nx.topological_sort(cond):
            members = sorted(cond.nodes[c]["members"])
            implicit = len(members) > 1 or g.has_edge(members[0], members[0])
            self.groups.append((members, implicit))

        # update weights: q1 += sum over P nodes, p1 -= sum over Q nodes
        self.final = []
        for k, (kind, tier, lam, i) in enumerate(self.nodes):
            h = halves["Q" if kind == "P" else "P"]
            w = h.bs[i] if tier == "s" else h.bf[lam - 1][i]
            if w != 0.0:
                self.final.append((k, float(w), tier == "s"))


_PLAN_CACHE: dict = {}


def _plan_for(t: PartitionedMgarkTableau, sys: SeparableSystem) -> _Plan:
    active = frozenset(p for p in ("T_slow", "T_fast", "V_slow", "V_fast") if sys.gradient(p) is not None)
    key = (id(t), active)
    hit = _PLAN_CACHE.get(key)
    if hit is not None and hit[0] is t:
        return hit[1]
    plan = _Plan(t, active)
    if len(_PLAN_CACHE) > 64:
        _PLAN_CACHE.clear()
    _PLAN_CACHE[key] = (t, plan)
    return plan


class _Forces:
    """Force evaluation with counters and Hessians (analytic or finite differences)."""

    def __init__(self, sys: SeparableSystem, cfg: SolverConfig, stats: StepStats):
        self.sys = sys
        self.cfg = cfg
        self.stats = stats

    def __call__(self, part: str, x: np.ndarray) -> np.ndarray:
        if part == "V_slow":
            self.stats.slow_force_evals += 1
        elif part == "V_fast":
            self.stats.fast_force_evals += 1
        return self.sys.gradient(part)(x)

    def hess(self, part: str, x: np.ndarray) -> np.ndarray:
        h = self.sys.hessian(part)
        if h is not None and self.cfg.jacobian_mode == "analytic":
            return h(x)
        return fd_jacobian(lambda z: self(part, z), x, self.cfg.fd_step_scale)


def step_pmgark(t: AnyTableau, sys, y0: PhaseState, H: float, cfg: SolverConfig = SolverConfig(),
                cache: dict | None = None, micro_observer=None) -> tuple[PhaseState, StepStats]:
    """One macro-step of the partitioned multirate GARK scheme in block form.

    Stage groups are visited in topological order of the stage dependency
    graph; single stages are evaluated explicitly and coupled groups are
    solved jointly by Newton's method. Stages whose force is absent from the
    system are skipped.
    """
    sys = as_separable(sys)
    t = as_partitioned(t)
    n = sys.dim
    if y0.p.size != n or y0.q.size != n:
        raise ValueError(f"state dimension mismatch: system has {n}, state has {y0.p.size}/{y0.q.size}")
    plan = _plan_for(t, sys)
    stats = StepStats(base_steps=1)
    force = _Forces(sys, cfg, stats)
    M = t.M
    h = H / M
    base = {"P": y0.p, "Q": y0.q}
    sign = {"P": -1.0, "Q": 1.0}
    N = len(plan.nodes)
    val: list = [None] * N
    F: list = [None] * N
    cum = {"P": [np.zeros(n)], "Q": [np.zeros(n)]}  # cum[k][l] = sum of micro-steps < l
    max_iters = cfg.max_iters * (2 if H < 0 else 1)

    def inc(kind, ell):  # ell is 0-based
        out = np.zeros(n)
        for j, w in plan.fill[kind][ell]:
            out += w * F[j]
        return out

    def prefix(kind, lam):  # fill sum over micro-steps 1..lam-1 (final ones only)
        c = cum[kind]
        while len(c) < lam:
            c.append(c[-1] + inc(kind, len(c) - 1))
        return c[lam - 1]

    def known(k, skip):
        kind, tier, lam, _ = plan.nodes[k]
        acc = np.zeros(n)
        for j, c, macro in plan.deps[k]:
            if j not in skip:
                acc += (c * (H if macro else h)) * F[j]
        return acc

    def fill_part(k, lo):
        kind, tier, lam, _ = plan.nodes[k]
        if tier == "s" or lam == 1:
            return 0.0
        acc = prefix(kind, min(lam, lo))
        for ell in range(min(lam, lo) - 1, lam - 1):
            acc = acc + inc(kind, ell)
        return h * acc

    for members, implicit in plan.groups:
        if not implicit:
            k = members[0]
            kind, tier, lam, _ = plan.nodes[k]
            v = base[kind] + sign[kind] * (known(k, ()) + (fill_part(k, lam) if tier == "f" else 0.0))
            val[k] = v
            F[k] = force(plan.part[k], v)
            continue
        mset = set(members)
        fast_lams = [plan.nodes[k][2] for k in members if plan.nodes[k][1] == "f"]
        lo = min(fast_lams) if fast_lams else M + 1
        pos = {k: a for a, k in enumerate(members)}
        rhs0 = []
        for k in members:
            kind, tier, lam, _ = plan.nodes[k]
            part = known(k, mset)
            if tier == "f" and lam > 1:
                part = part + h * prefix(kind, min(lam, lo))
            rhs0.append(part)
        # in-group coupling coefficients, including fill between grouped micro-steps
        couple = []
        for k in members:
            kind, tier, lam, _ = plan.nodes[k]
            row = [(pos[j], c * (H if macro else h)) for j, c, macro in plan.deps[k] if j in mset]
            if tier == "f":
                for ell in range(lo - 1, lam - 1):
                    for j, w in plan.fill[kind][ell]:
                        if j in mset:
                            row.append((pos[j], h * w))
                        else:
                            rhs0[pos[k]] = rhs0[pos[k]] + h * w * F[j]
            couple.append(row)

        guess = []
        for k in members:
            kind, tier, lam, i = plan.nodes[k]
            prev = plan.index.get((kind, tier, lam - 1, i)) if tier == "f" else None
            guess.append(val[prev] if prev is not None and val[prev] is not None else base[kind])
        x0 = np.concatenate(guess)
        parts = [plan.part[k] for k in members]
        kinds = [plan.nodes[k][0] for k in members]
        m = len(members)

        def unpack(x):
            return [x[a * n:(a + 1) * n] for a in range(m)]

        def residual(x):
            xs = unpack(x)
            Fs = [force(parts[a], xs[a]) for a in range(m)]
            out = np.empty_like(x)
            for a in range(m):
                acc = rhs0[a].copy()
                for b, c in couple[a]:
                    acc += c * Fs[b]
                out[a * n:(a + 1) * n] = xs[a] - base[kinds[a]] - sign[kinds[a]] * acc
            return out

        def jacobian(x):
            xs = unpack(x)
            Hs = [force.hess(parts[a], xs[a]) for a in range(m)]
            J = np.eye(m * n)
            for a in range(m):
                for b, c in couple[a]:
                    J[a * n:(a + 1) * n, b * n:(b + 1) * n] -= sign[kinds[a]] * c * Hs[b]
            return J

        x, iters = newton_solve(residual, jacobian, x0, cfg, max_iters)
        stats.newton_iters += iters
        for a, k in enumerate(members):
            val[k] = x[a * n:(a + 1) * n].copy()
            F[k] = force(plan.part[k], val[k])

    p1 = y0.p.copy()
    q1 = y0.q.copy()
    for k, w, macro in plan.final:
        step = (H if macro else h) * w
        if plan.nodes[k][0] == "Q":
            p1 -= step * F[k]
        else:
            q1 += step * F[k]
    return PhaseState(p1, q1), stats


def step_flat(t: AnyTableau, sys, y0: PhaseState, H: float, cfg: SolverConfig = SolverConfig(),
              cache: dict | None = None, micro_observer=None) -> tuple[PhaseState, StepStats]:
    """Oracle stepper: all stages of the flattened tableau in one Newton system."""
    sys = as_separable(sys)
    n = sys.dim
    bar, tilde = flatten(t)
    fsl, S = stage_slices(t)
    N = bar.s
    tier = ["f"] * S.start + ["s"] * (S.stop - S.start)
    stats = StepStats(base_steps=1)
    force = _Forces(sys, cfg, stats)
    parts_P = [_PARTS[("P", tr)] for tr in tier]
    parts_Q = [_PARTS[("Q", tr)] for tr in tier]

    def F(parts, xs):
        out = []
        for part, x in zip(parts, xs):
            g = sys.gradient(part)
            out.append(np.zeros(n) if g is None else force(part, x))
        return out

    def Hs(parts, xs):
        out = []
        for part, x in zip(parts, xs):
            out.append(np.zeros((n, n)) if sys.gradient(part) is None else force.hess(part, x))
        return out

    def split(x):
        P = x[:N * n].reshape(N, n)
        Q = x[N * n:].reshape(N, n)
        return P, Q

    def residual(x):
        P, Q = split(x)
        FT = np.array(F(parts_P, P))
        FV = np.array(F(parts_Q, Q))
        rP = P - y0.p + H * tilde.a @ FV
        rQ = Q - y0.q - H * bar.a @ FT
        return np.concatenate([rP.ravel(), rQ.ravel()])

    def jacobian(x):
        P, Q = split(x)
        HT = Hs(parts_P, P)
        HV = Hs(parts_Q, Q)
        J = np.eye(2 * N * n)
        for i in range(N):
            for j in range(N):
                if tilde.a[i, j]:
                    J[i * n:(i + 1) * n, (N + j) * n:(N + j + 1) * n] += H * tilde.a[i, j] * HV[j]
                if bar.a[i, j]:
                    J[(N + i) * n:(N + i + 1) * n, j * n:(j + 1) * n] -= H * bar.a[i, j] * HT[j]
        return J

    x0 = np.concatenate([np.tile(y0.p, N), np.tile(y0.q, N)])
    x, iters = newton_solve(residual, jacobian, x0, cfg, cfg.max_iters * (2 if H < 0 else 1))
    stats.newton_iters += iters
    P, Q = split(x)
    FT = np.array(F(parts_P, P))
    FV = np.array(F(parts_Q, Q))
    return PhaseState(y0.p - H * tilde.b @ FV, y0.q + H * bar.b @ FT), stats


# ---------------------------------------------------------------- specialized steppers

def _kick_force(sys: SeparableSystem, q, stats: StepStats, cache: dict | None, key="V_slow_q"):
    """Slow potential gradient at q, reusing the driver's cached value when it matches."""
    if cache is not None:
        hit = cache.get(key)
        if hit is not None and hit[0] is not None and np.array_equal(hit[0], q):
            return hit[1]
    g = sys.grad_V_slow
    if g is None:
        return None
    stats.slow_force_evals += 1
    return g(q)


def _store(cache, key, q, f):
    if cache is not None:
        cache[key] = (q.copy(), f)


def step_mr_lpfr(sys, y0: PhaseState, H: float, M: int, cfg: SolverConfig | None = None,
                 cache: dict | None = None, micro_observer=None) -> tuple[PhaseState, StepStats]:
    """Multirate leapfrog: kick, M/2 fast leapfrogs, slow drift, M/2 fast leapfrogs, kick.

    ``M=1`` is plain Stoermer-Verlet on the full Hamiltonian.
    """
    sys = as_separable(sys)
    M = int(M)
    if M != 1 and (M < 1 or M % 2):
        raise ValueError(f"M must be even (got M={M})")
    stats = StepStats(base_steps=1)
    p = y0.p.copy()
    q = y0.q.copy()
    gTs, gTf, gVf = sys.grad_T_slow, sys.grad_T_fast, sys.grad_V_fast

    def kick_fast(dt):
        nonlocal p
        if gVf is not None:
            stats.fast_force_evals += 1
            p -= dt * gVf(q)

    def drift(dt, g):
        nonlocal q
        if g is not None:
            q += dt * g(p)

    fs = _kick_force(sys, q, stats, cache)
    if M == 1:
        if fs is not None:
            p -= 0.5 * H * fs
        kick_fast(0.5 * H)
        drift(H, gTs)
        drift(H, gTf)
        fs = _kick_force(sys, q, stats, None)
        if fs is not None:
            p -= 0.5 * H * fs
        _store(cache, "V_slow_q", q, fs)
        kick_fast(0.5 * H)
        if micro_observer is not None:
            micro_observer(H, p, q)
        return PhaseState(p, q), stats

    h = H / M
    if fs is not None:
        p -= 0.5 * H * fs
    for half in range(2):
        for lam in range(M // 2):
            kick_fast(0.5 * h)
            drift(h, gTf)
            kick_fast(0.5 * h)
            if micro_observer is not None:
                micro_observer((half * (M // 2) + lam + 1) * h, p, q)
        if half == 0:
            drift(H, gTs)
    fs = _kick_force(sys, q, stats, None)
    if fs is not None:
        p -= 0.5 * H * fs
    _store(cache, "V_slow_q", q, fs)
    return PhaseState(p, q), stats


def _two_way(sys) -> TwoWaySystem:
    return sys if isinstance(sys, TwoWaySystem) else imex_split(sys)


def step_mr_imex2(sys, y0: PhaseState, H: float, M: int, cfg: SolverConfig = SolverConfig(),
                  cache: dict | None = None, micro_observer=None) -> tuple[PhaseState, StepStats]:
    """Impulse IMEX scheme: slow half-kick, M implicit midpoint micro-steps on the fast field, slow half-kick."""
    tw = _two_way(sys)
    M = int(M)
    if M < 1:
        raise ValueError("M must be a positive integer")
    n = tw.dim
    stats = StepStats(base_steps=1)
    src = tw.separable
    h = H / M
    p = y0.p.copy()
    q = y0.q.copy()
    fs = _kick_force(src, q, stats, cache)
    if fs is not None:
        p -= 0.5 * H * fs
    has_fast = src.grad_V_fast is not None
    max_iters = cfg.max_iters * (2 if H < 0 else 1)

    def f_fast(z):
        if has_fast:
            stats.fast_force_evals += 1
        dp, dq = tw.f_fast(z[:n], z[n:])
        return np.concatenate([dp, dq])

    if tw.jac_fast is not None and cfg.jacobian_mode == "analytic":
        def jf(z):
            return tw.jac_fast(z[:n], z[n:])
    else:
        def jf(z):
            return fd_jacobian(f_fast, z, cfg.fd_step_scale)

    eye = np.eye(2 * n)
    y = np.concatenate([p, q])
    for lam in range(M):
        y_old = y

        def residual(z):
            return z - y_old - 0.5 * h * f_fast(z)

        def jacobian(z):
            return eye - 0.5 * h * jf(z)

        z, iters = newton_solve(residual, jacobian, y_old, cfg, max_iters)
        stats.newton_iters += iters
        y = 2.0 * z - y_old
        if micro_observer is not None:
            micro_observer((lam + 1) * h, y[:n], y[n:])
    p = y[:n].copy()
    q = y[n:].copy()
    fs = _kick_force(src, q, stats, None)
    if fs is not None:
        p -= 0.5 * H * fs
    _store(cache, "V_slow_q", q, fs)
    return PhaseState(p, q), stats


def step_mr_imim2(sys, y0: PhaseState, H: float, M: int, cfg: SolverConfig = SolverConfig(),
                  cache: dict | None = None, micro_observer=None) -> tuple[PhaseState, StepStats]:
    """Implicit-implicit midpoint scheme through the generic stepper on the two-way split."""
    t = _imim2_tableau(int(M))
    return step_pmgark(t, _two_way(sys).separable, y0, H, cfg)


_TABLEAU_CACHE: dict = {}


def _cached(builder, M):
    key = (builder.__name__, M)
    if key not in _TABLEAU_CACHE:
        _TABLEAU_CACHE[key] = as_partitioned(builder(M))
    return _TABLEAU_CACHE[key]


def _imim2_tableau(M):
    return _cached(build_mr_imim2, M)


# ---------------------------------------------------------------- stepper objects

class Stepper:
    """A named one-step map ``(sys, y, H) -> (y_new, stats)``."""

    def __init__(self, fn: Callable, name: str, M: int, tableau: AnyTableau | None = None,
                 two_way: bool = False):
        self.fn = fn
        self.name = name
        self.M = M
        self.tableau = tableau
        self.two_way = two_way

    def prepare(self, sys):
        """Convert the system once to the form the scheme integrates."""
        if self.two_way:
            return _two_way(sys)
        return sys

    def __call__(self, sys, y, H, cache=None, micro_observer=None):
        return self.fn(sys, y, H, cache=cache, micro_observer=micro_observer)

    def __repr__(self):
        return f"Stepper({self.name}, M={self.M})"


def make_stepper(scheme: str, M: int, cfg: SolverConfig = SolverConfig(), generic: bool = False) -> Stepper:
    """Stepper for a named scheme; ``generic=True`` routes through :func:`step_pmgark`.

    The IMEX and IMIM schemes integrate the two-way split (all kinetic energy
    in the fast tier); the multirate leapfrog integrates the four-way split.
    """
    scheme = scheme.lower()
    if scheme == "mr-lpfr":
        t = _cached(build_mr_lpfr, M)
        if generic:
            return Stepper(lambda s, y, H, **kw: step_pmgark(t, s, y, H, cfg), scheme, M, t)
        return Stepper(lambda s, y, H, **kw: step_mr_lpfr(s, y, H, M, cfg, **kw), scheme, M, t)
    if scheme == "mr-imex2":
        t = _cached(build_mr_imex2, M)
        if generic:
            return Stepper(lambda s, y, H, **kw: step_pmgark(t, as_separable(s), y, H, cfg),
                           scheme, M, t, two_way=True)
        return Stepper(lambda s, y, H, **kw: step_mr_imex2(s, y, H, M, cfg, **kw), scheme, M, t, two_way=True)
    if scheme == "mr-imim2":
        t = _cached(build_mr_imim2, M)
        return Stepper(lambda s, y, H, **kw: step_pmgark(t, as_separable(s), y, H, cfg),
                       scheme, M, t, two_way=True)
    raise KeyError(f"unknown scheme {scheme!r}; available: mr-lpfr, mr-imex2, mr-imim2")


def tableau_stepper(t: AnyTableau, cfg: SolverConfig = SolverConfig(), two_way: bool = False,
                    name: str = "tableau") -> Stepper:
    """Generic stepper for an arbitrary tableau."""
    tp = as_partitioned(t)
    return Stepper(lambda s, y, H, **kw: step_pmgark(tp, as_separable(s), y, H, cfg), name, t.M, t,
                   two_way=two_way)


# ---------------------------------------------------------------- driver

@dataclass
class Trajectory:
    times: np.ndarray
    states: list
    stats: list  # cumulative StepStats after each sample
    system: object = None

    @property
    def final(self) -> PhaseState:
        return self.states[-1]

    def array(self) -> np.ndarray:
        return np.array([s.as_vector() for s in self.states])

    def to_csv(self, fh=None, params: FpuParams | None = None) -> str:
        """Rows ``t, p..., q..., H, I, slow_evals, fast_evals`` with 17 significant digits."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        n = self.states[0].dim
        w.writerow(["t"] + [f"p{i}" for i in range(n)] + [f"q{i}" for i in range(n)]
                   + ["H", "I", "slow_evals", "fast_evals"])
        sys = self.system
        if params is None and sys is not None and getattr(sys, "name", "") == "fpu":
            params = FpuParams(sys.params["m"], sys.params["omega"])
        for t, y, st in zip(self.times, self.states, self.stats):
            Hval = sys.hamiltonian(y) if sys is not None else float("nan")
            Ival = oscillatory_energy(y, params)[1] if params is not None else float("nan")
            w.writerow([f"{t:.17g}"] + [f"{x:.17g}" for x in y.as_vector()]
                       + [f"{Hval:.17g}", f"{Ival:.17g}", st.slow_force_evals, st.fast_force_evals])
        text = buf.getvalue()
        if fh is not None:
            fh.write(text)
        return text


def integrate(stepper, sys, y0: PhaseState, H: float, n_steps: int,
              observers: Sequence[Callable] = (), fuse_kicks: bool = False, t0: float = 0.0,
              micro_observer=None, record: bool = True) -> Trajectory:
    """Apply ``stepper`` n_steps times on the macro grid.

    Observers get ``(t, state, cumulative_stats)`` after every macro-step.
    With ``fuse_kicks`` the closing slow kick of one step and the opening slow
    kick of the next share a single slow force evaluation.
    """
    if n_steps < 0:
        raise ValueError("n_steps must be nonnegative")
    work = stepper.prepare(sys) if hasattr(stepper, "prepare") else sys
    cache = {} if fuse_kicks else None
    total = StepStats()
    times = [t0]
    states = [y0]
    hist = [total.copy()]
    y = y0
    for k in range(n_steps):
        t = t0 + k * H
        mo = None
        if micro_observer is not None:
            def mo(dt, p, q, _t=t):
                micro_observer(_t + dt, p, q)
        try:
            y, st = stepper(work, y, H, cache=cache, micro_observer=mo)
        except Exception as exc:  # noqa: BLE001 - re-raised with the step index
            raise StepError(k, t, exc) from exc
        total += st
        tn = t0 + (k + 1) * H
        for obs in observers:
            obs(tn, y, total)
        if record:
            times.append(tn)
            states.append(y)
            hist.append(total.copy())
    if not record:
        times, states, hist = [t0 + n_steps * H], [y], [total.copy()]
    return Trajectory(np.array(times), states, hist, sys)


def steps_for(t_end: float, H: float, tol: float = 1e-9) -> int:
    """Number of macro-steps covering ``t_end``; rejects non-integral ratios."""
    if H == 0:
        raise ValueError("H must be nonzero")
    ratio = t_end / H
    n = int(round(ratio))
    if abs(ratio - n) > tol * max(1.0, abs(ratio)) or n < 0:
        raise ValueError(f"t_end/H = {ratio!r} is not a nonnegative integer")
    return n


__all__ = [
    "SolverConfig", "StepStats", "NewtonError", "StepError", "fd_jacobian", "newton_solve",
    "step_pmgark", "step_flat", "step_mr_lpfr", "step_mr_imex2", "step_mr_imim2", "Stepper",
    "make_stepper", "tableau_stepper", "Trajectory", "integrate", "steps_for",
]
