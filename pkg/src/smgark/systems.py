"""Separable Hamiltonian test problems.

A :class:`SeparableSystem` splits ``H(p, q) = T_s(p) + T_f(p) + V_s(q) + V_f(q)``
into slow and fast kinetic and potential parts. A missing part (``None``) is
identically zero, which lets the steppers skip its stages.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

Grad = Optional[Callable[[np.ndarray], np.ndarray]]
Energy = Optional[Callable[[np.ndarray], float]]


@dataclass(frozen=True, eq=False)
class PhaseState:
    p: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "p", np.array(self.p, dtype=float).ravel())
        object.__setattr__(self, "q", np.array(self.q, dtype=float).ravel())

    @property
    def dim(self) -> int:
        return self.p.size

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.p, self.q])

    @classmethod
    def from_vector(cls, y, n_p: int | None = None) -> "PhaseState":
        y = np.asarray(y, dtype=float)
        n_p = y.size // 2 if n_p is None else n_p
        return cls(y[:n_p], y[n_p:])

    def allclose(self, other: "PhaseState", tol: float) -> bool:
        return bool(np.max(np.abs(self.as_vector() - other.as_vector())) <= tol)


@dataclass(frozen=True, eq=False)
class SeparableSystem:
    """Four-way split Hamiltonian with gradients, energies and optional Hessians."""

    dim: int
    grad_T_slow: Grad = None
    grad_T_fast: Grad = None
    grad_V_slow: Grad = None
    grad_V_fast: Grad = None
    T_slow: Energy = None
    T_fast: Energy = None
    V_slow: Energy = None
    V_fast: Energy = None
    hess_T_slow: Optional[Callable] = None
    hess_T_fast: Optional[Callable] = None
    hess_V_slow: Optional[Callable] = None
    hess_V_fast: Optional[Callable] = None
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def gradient(self, part: str) -> Grad:
        return getattr(self, f"grad_{part}")

    def hessian(self, part: str):
        return getattr(self, f"hess_{part}")

    def energies(self, y: PhaseState) -> dict:
        out = {}
        for part, arg in (("T_slow", y.p), ("T_fast", y.p), ("V_slow", y.q), ("V_fast", y.q)):
            fn = getattr(self, part)
            out[part] = 0.0 if fn is None else float(fn(arg))
        return out

    def hamiltonian(self, y: PhaseState) -> float:
        return float(sum(self.energies(y).values()))

    def vector_field(self, y: PhaseState) -> PhaseState:
        """``(dp/dt, dq/dt) = (-V_q, T_p)`` summed over both tiers."""
        dp = np.zeros(self.dim)
        dq = np.zeros(self.dim)
        for part in ("V_slow", "V_fast"):
            g = self.gradient(part)
            if g is not None:
                dp -= g(y.q)
        for part in ("T_slow", "T_fast"):
            g = self.gradient(part)
            if g is not None:
                dq += g(y.p)
        return PhaseState(dp, dq)


@dataclass(frozen=True, eq=False)
class TwoWaySystem:
    """Two-way split ``y' = f_slow(q) + f_fast(p, q)`` with a q-free slow field.

    ``separable`` is the same split regrouped as a four-way system (slow
    potential only in the slow tier, all kinetic energy in the fast tier), so
    the generic multirate stepper can integrate it.
    """

    dim: int
    f_slow: Callable
    f_fast: Callable
    jac_fast: Optional[Callable]
    separable: SeparableSystem
    source: SeparableSystem

    def hamiltonian(self, y: PhaseState) -> float:
        return self.source.hamiltonian(y)

    @property
    def name(self) -> str:
        return self.source.name

    @property
    def params(self) -> dict:
        return self.source.params


def _sum_callbacks(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return lambda x: a(x) + b(x)


def imex_split(s: SeparableSystem) -> TwoWaySystem:
    """Slow field ``(-V_q^s, 0)``; fast field ``(-V_q^f, T_p^s + T_p^f)``."""
    n = s.dim
    gT = _sum_callbacks(s.grad_T_slow, s.grad_T_fast)
    hT = _sum_callbacks(s.hess_T_slow, s.hess_T_fast)
    gV = s.grad_V_fast
    hV = s.hess_V_fast
    gVs = s.grad_V_slow

    def f_slow(q):
        dp = np.zeros(n) if gVs is None else -gVs(q)
        return dp, np.zeros(n)

    def f_fast(p, q):
        dp = np.zeros(n) if gV is None else -gV(q)
        dq = np.zeros(n) if gT is None else gT(p)
        return dp, dq

    have_hess = (gT is None or hT is not None) and (gV is None or hV is not None)

    def jac_fast(p, q):
        J = np.zeros((2 * n, 2 * n))
        if gV is not None:
            J[:n, n:] = -hV(q)
        if gT is not None:
            J[n:, :n] = hT(p)
        return J

    sep = SeparableSystem(
        dim=n,
        grad_T_slow=None, grad_T_fast=gT,
        grad_V_slow=gVs, grad_V_fast=gV,
        T_slow=None, T_fast=_sum_callbacks(s.T_slow, s.T_fast),
        V_slow=s.V_slow, V_fast=s.V_fast,
        hess_T_slow=None, hess_T_fast=hT,
        hess_V_slow=s.hess_V_slow, hess_V_fast=hV,
        name=s.name + "-imex", params=dict(s.params),
    )
    return TwoWaySystem(n, f_slow, f_fast, jac_fast if have_hess else None, sep, s)


def as_separable(sys) -> SeparableSystem:
    """The four-way view of a system (two-way systems use their regrouped split)."""
    return sys.separable if isinstance(sys, TwoWaySystem) else sys


def momentum_reversal(y: PhaseState) -> PhaseState:
    return PhaseState(-y.p, y.q.copy())


# ---------------------------------------------------------------- FPU chain

@dataclass(frozen=True)
class FpuParams:
    """Chain of 2m unit masses: m stiff springs of stiffness omega, soft quartic links."""

    m: int = 3
    omega: float = 50.0

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 1:
            raise ValueError("m must be a positive integer")
        if not self.omega > 0:
            raise ValueError("omega must be positive")

    @property
    def dim(self) -> int:
        return 2 * self.m


def _fpu_link_matrix(m: int) -> np.ndarray:
    """Map from interleaved coordinates to the m+1 soft-spring elongations."""
    D = np.zeros((m + 1, 2 * m))
    for i in range(m):
        x, y = 2 * i, 2 * i + 1
        # x_i - y_i enters link i, x_i + y_i enters link i+1 (with a minus sign
        # except at the right wall)
        D[i, x] += 1.0
        D[i, y] -= 1.0
        sgn = 1.0 if i == m - 1 else -1.0
        D[i + 1, x] += sgn
        D[i + 1, y] += sgn
    return D


def fpu_system(params: FpuParams = FpuParams()) -> SeparableSystem:
    """Fermi-Pasta-Ulam chain with interleaved layout ``(q_{0,1}, q_{1,1}, ...)``."""
    m, w2 = params.m, params.omega**2
    n = 2 * m
    D = _fpu_link_matrix(m)
    slow_mask = np.zeros(n)
    slow_mask[0::2] = 1.0
    fast_mask = 1.0 - slow_mask
    w2_mask = w2 * fast_mask

    def T_slow(p):
        return 0.5 * np.dot(p[0::2], p[0::2])

    def T_fast(p):
        return 0.5 * np.dot(p[1::2], p[1::2])

    def V_fast(q):
        return 0.5 * w2 * np.dot(q[1::2], q[1::2])

    def V_slow(q):
        d = D @ q
        return 0.25 * np.sum(d**4)

    def grad_V_slow(q):
        d = D @ q
        return D.T @ d**3

    def hess_V_slow(q):
        d = D @ q
        return D.T @ (3.0 * d[:, None] ** 2 * D)

    hT_s = np.diag(slow_mask)
    hT_f = np.diag(fast_mask)
    hV_f = np.diag(w2_mask)

    return SeparableSystem(
        dim=n,
        grad_T_slow=lambda p: slow_mask * p,
        grad_T_fast=lambda p: fast_mask * p,
        grad_V_slow=grad_V_slow,
        grad_V_fast=lambda q: w2_mask * q,
        T_slow=T_slow, T_fast=T_fast, V_slow=V_slow, V_fast=V_fast,
        hess_T_slow=lambda p: hT_s, hess_T_fast=lambda p: hT_f,
        hess_V_slow=hess_V_slow, hess_V_fast=lambda q: hV_f,
        name="fpu", params={"m": m, "omega": float(params.omega)},
    )


def standard_initial_state(params: FpuParams = FpuParams()) -> PhaseState:
    """Standard start: q_{0,1} = p_{0,1} = p_{1,1} = 1, q_{1,1} = 1/omega, rest zero."""
    n = params.dim
    p = np.zeros(n)
    q = np.zeros(n)
    q[0] = 1.0
    p[0] = 1.0
    p[1] = 1.0
    q[1] = 1.0 / params.omega
    return PhaseState(p, q)


def oscillatory_energy(y: PhaseState, params: FpuParams) -> tuple[np.ndarray, float]:
    """Energies ``I_j = (p_{1,j}^2 + omega^2 q_{1,j}^2) / 2`` of the stiff springs and their sum."""
    if y.dim != params.dim:
        raise ValueError(f"state has dimension {y.dim}, expected {params.dim}")
    I = 0.5 * (y.p[1::2] ** 2 + params.omega**2 * y.q[1::2] ** 2)
    return I, float(I.sum())


# ---------------------------------------------------------------- harmonic oscillator

def harmonic_system(omega: float = 1.0, dim: int = 1) -> SeparableSystem:
    """``H = p^2/2 + omega^2 q^2/2`` placed entirely in the fast tier."""
    if not omega > 0:
        raise ValueError("omega must be positive")
    w2 = float(omega) ** 2
    eye = np.eye(dim)
    return SeparableSystem(
        dim=dim,
        grad_T_fast=lambda p: p.copy(),
        grad_V_fast=lambda q: w2 * q,
        T_fast=lambda p: 0.5 * np.dot(p, p),
        V_fast=lambda q: 0.5 * w2 * np.dot(q, q),
        hess_T_fast=lambda p: eye,
        hess_V_fast=lambda q: w2 * eye,
        name="harmonic", params={"omega": float(omega), "dim": dim},
    )


def harmonic_flow(y: PhaseState, t: float, omega: float) -> PhaseState:
    """Exact solution of the harmonic oscillator after time t."""
    c, s = np.cos(omega * t), np.sin(omega * t)
    return PhaseState(c * y.p - omega * s * y.q, c * y.q + s / omega * y.p)


# ---------------------------------------------------------------- registry

PROBLEMS = ("fpu", "harmonic")


def make_problem(name: str, m: int = 3, omega: float = 50.0) -> SeparableSystem:
    name = name.lower()
    if name == "fpu":
        return fpu_system(FpuParams(int(m), float(omega)))
    if name == "harmonic":
        return harmonic_system(float(omega))
    raise KeyError(f"unknown problem {name!r}; available: {', '.join(PROBLEMS)}")


__all__ = [
    "PhaseState", "SeparableSystem", "TwoWaySystem", "imex_split", "as_separable",
    "momentum_reversal", "FpuParams", "fpu_system", "standard_initial_state",
    "oscillatory_energy", "harmonic_system", "harmonic_flow", "PROBLEMS", "make_problem",
]
