"""Symmetric composition of a second-order symmetric base scheme.

``Psi_H = Phi_{g_r H} o ... o Phi_{g_1 H}`` with symmetric weights. The
triple-jump and Suzuki weights raise the order by two; the bundled advanced
composition sets reach orders 4 to 10 in one composition.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from itertools import product

import numpy as np

from .integrators import StepStats
from .tableau import AnyTableau, Half, MgarkTableau, from_halves

FAMILIES = ("TripleJump", "Suzuki", "AdvancedComposition", "Custom")


@dataclass(frozen=True, eq=False)
class CompositionWeights:
    gammas: np.ndarray
    base_order: int = 2
    family: str = "Custom"
    order: int | None = None
    stay_in_window: bool = False

    def __post_init__(self):
        g = np.array(self.gammas, dtype=float).ravel()
        if g.size < 1:
            raise ValueError("need at least one weight")
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        g.setflags(write=False)
        object.__setattr__(self, "gammas", g)
        if self.order is None:
            object.__setattr__(self, "order", self.base_order + 2 if g.size > 1 else self.base_order)

    @property
    def r(self) -> int:
        return self.gammas.size

    def is_symmetric(self, tol: float = 1e-15) -> bool:
        return bool(np.max(np.abs(self.gammas - self.gammas[::-1])) <= tol)

    def prefix_sums(self) -> np.ndarray:
        return np.cumsum(self.gammas)

    def dumps(self) -> str:
        head = [f"# family = {self.family}", f"# base_order = {self.base_order}",
                f"# order = {self.order}", f"# r = {self.r}",
                f"# stay_in_window = {str(self.stay_in_window).lower()}"]
        return "\n".join(head + [f"{g:.17g}" for g in self.gammas]) + "\n"


def loads_weights(text: str) -> CompositionWeights:
    """Parse ``# key = value`` header lines followed by one weight per line."""
    meta = {}
    vals = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, eq, val = line[1:].partition("=")
            if eq:
                meta[key.strip()] = val.strip()
            continue
        try:
            vals.append(float(line.split()[0]))
        except ValueError:
            raise ValueError(f"line {lineno}: not a number: {line!r}") from None
    if "r" in meta and int(meta["r"]) != len(vals):
        raise ValueError(f"header says r = {meta['r']} but {len(vals)} weights follow")
    return CompositionWeights(
        np.array(vals),
        base_order=int(meta.get("base_order", 2)),
        family=meta.get("family", "Custom"),
        order=int(meta["order"]) if "order" in meta else None,
        stay_in_window=meta.get("stay_in_window", "false").lower() == "true",
    )


def _check_p(p: int) -> None:
    if int(p) != p or p < 2 or p % 2:
        raise ValueError(f"base order must be an even integer >= 2 (got {p})")


def triple_jump(p: int = 2) -> CompositionWeights:
    _check_p(p)
    c = 2.0 ** (1.0 / (p + 1))
    g1 = 1.0 / (2.0 - c)
    return CompositionWeights([g1, -c * g1, g1], p, "TripleJump")


def suzuki(p: int = 2) -> CompositionWeights:
    _check_p(p)
    c = 4.0 ** (1.0 / (p + 1))
    g1 = 1.0 / (4.0 - c)
    return CompositionWeights([g1, g1, -c * g1, g1, g1], p, "Suzuki")


AC_STAGES = {4: 3, 6: 7, 8: 15, 10: 31}
AC_WINDOW_STAGES = {4: 5, 6: 9, 8: 17, 10: 33}


@lru_cache(maxsize=None)
def advanced_composition(order: int, stay_in_window: bool = False) -> CompositionWeights:
    """Bundled symmetric weight set of the given order for a second-order base.

    ``stay_in_window=True`` selects the set whose partial sums all lie in
    [0, 1], so every intermediate time stays inside the macro-step.
    """
    table = AC_WINDOW_STAGES if stay_in_window else AC_STAGES
    if order not in table:
        raise ValueError(f"unsupported order {order}; choose from {sorted(table)}")
    r = table[order]
    name = f"{'acw' if stay_in_window else 'ac'}-order{order}-r{r}.txt"
    path = resources.files("smgark").joinpath("data", name)
    if not path.is_file():
        raise FileNotFoundError(f"no bundled weight set for order {order} ({name})")
    text = path.read_text()
    w = loads_weights(text)
    if w.r != r or w.order != order:
        raise ValueError(f"data file {name} is inconsistent")
    return w


def weights_for(family: str, order: int) -> list[CompositionWeights]:
    """Chain of weight sets reaching ``order`` from a second-order base.

    Triple jump and Suzuki are applied recursively (2 -> 4 -> 6 ...), the
    advanced sets in one go.
    """
    key = family.lower().replace("_", "-")
    if order < 2 or order % 2:
        raise ValueError("order must be even and >= 2")
    if key in ("tj", "triple-jump", "triplejump"):
        return [triple_jump(p) for p in range(2, order, 2)]
    if key in ("sf", "suzuki"):
        return [suzuki(p) for p in range(2, order, 2)]
    if key in ("ac", "advanced", "advanced-composition"):
        return [advanced_composition(order, False)] if order > 2 else []
    if key in ("ac*", "acw", "advanced-window"):
        return [advanced_composition(order, True)] if order > 2 else []
    raise KeyError(f"unknown composition family {family!r}; available: tj, sf, ac, ac*")


# ---------------------------------------------------------------- order conditions

_GENERATORS = (1, 3, 5, 7, 9)


class _TruncatedAlgebra:
    """Free associative algebra on Y1, Y3, Y5, ... truncated by total weight.

    A symmetric second-order method is ``exp(h Y1 + h^3 Y3 + h^5 Y5 + ...)``
    with generic Y_k. A composition has order p iff its product of
    exponentials matches ``exp(Y1)`` in every word of weight below p + 1.
    """

    def __init__(self, max_weight: int):
        gens = [g for g in _GENERATORS if g <= max_weight]
        words = [()]
        frontier = [()]
        while frontier:
            nxt = [w + (g,) for w in frontier for g in gens if sum(w) + g <= max_weight]
            words += nxt
            frontier = nxt
        self.words = words
        idx = {w: i for i, w in enumerate(words)}
        pairs = [(i, j, idx[u + v]) for (i, u), (j, v) in product(enumerate(words), repeat=2)
                 if sum(u) + sum(v) <= max_weight]
        self.I, self.J, self.T = (np.array(x) for x in zip(*pairs))
        self.n = len(words)
        self.weight = np.array([sum(w) for w in words])
        self.inv_fact = np.array([1.0 / math.factorial(len(w)) for w in words])
        self.target = np.array([1.0 / math.factorial(len(w)) if all(x == 1 for x in w) else 0.0
                                for w in words])

    def mul(self, a, b):
        return np.bincount(self.T, weights=a[self.I] * b[self.J], minlength=self.n)

    def exp_scaled(self, g: float):
        return g ** self.weight * self.inv_fact

    def defect(self, gammas) -> np.ndarray:
        P = self.exp_scaled(gammas[0])
        for g in gammas[1:]:
            P = self.mul(P, self.exp_scaled(g))
        return P - self.target


@lru_cache(maxsize=None)
def _algebra(max_weight: int) -> _TruncatedAlgebra:
    return _TruncatedAlgebra(max_weight)


def order_defect(gammas, order: int) -> float:
    """Largest violation of the order conditions for a symmetric second-order base.

    Zero (up to rounding) iff the composition has at least the given order.
    """
    alg = _algebra(order - 1)
    d = alg.defect(np.asarray(gammas, dtype=float))
    return float(np.max(np.abs(d[alg.weight >= 1]), initial=0.0))


def composition_order(gammas, tol: float = 1e-12, max_order: int = 10) -> int:
    """Highest even order up to ``max_order`` whose conditions hold to ``tol``."""
    best = 2
    for p in range(4, max_order + 1, 2):
        if order_defect(gammas, p) <= tol:
            best = p
        else:
            break
    return best


# ---------------------------------------------------------------- composed tableau

def _compose_half(h: Half, g: np.ndarray) -> Half:
    r = g.size
    ns = h.bs.size
    ss = np.zeros((r * ns, r * ns))
    for i in range(r):
        ss[i * ns:(i + 1) * ns, i * ns:(i + 1) * ns] = g[i] * h.ss
        for j in range(i):
            ss[i * ns:(i + 1) * ns, j * ns:(j + 1) * ns] = g[j] * np.outer(np.ones(ns), h.bs)
    bs = np.concatenate([gi * h.bs for gi in g])
    ff, bf, sf, fs = [], [], [], []
    for j in range(r):
        for lam in range(h.M):
            nf = h.bf[lam].size
            ff.append(r * g[j] * h.ff[lam])
            bf.append(r * g[j] * h.bf[lam])
            col = np.zeros((r * ns, nf))
            row = np.zeros((nf, r * ns))
            for i in range(r):
                if i == j:
                    col[i * ns:(i + 1) * ns] = r * g[i] * h.sf[lam]
                    row[:, i * ns:(i + 1) * ns] = g[i] * h.fs[lam]
                elif i > j:
                    col[i * ns:(i + 1) * ns] = r * g[j] * np.outer(np.ones(ns), h.bf[lam])
                else:
                    row[:, i * ns:(i + 1) * ns] = g[i] * np.outer(np.ones(nf), h.bs)
            sf.append(col)
            fs.append(row)
    return Half(ss, bs, tuple(ff), tuple(bf), tuple(sf), tuple(fs))


def compose_tableau(t: AnyTableau, w: CompositionWeights) -> AnyTableau:
    """Tableau of the composed method with r*M micro-steps.

    Copy i of the base scheme runs with macro-step g_i H; its micro-steps
    have size g_i h = r g_i H/(rM), and everything computed by earlier
    copies enters as fill.
    """
    g = np.asarray(w.gammas, dtype=float)
    if g.size == 1 and g[0] == 1.0:
        return t
    if isinstance(t, MgarkTableau):
        return from_halves(_compose_half(t.bar, g))
    return from_halves(_compose_half(t.bar, g), _compose_half(t.tilde, g))


class ComposedStepper:
    """``Psi_H = Phi_{g_r H} o ... o Phi_{g_1 H}`` for any stepper ``Phi``."""

    def __init__(self, base, w: CompositionWeights):
        self.base = base
        self.weights = w
        self.name = f"{getattr(base, 'name', 'base')}+{w.family}(r={w.r})"
        self.M = getattr(base, "M", None)

    def prepare(self, sys):
        return self.base.prepare(sys) if hasattr(self.base, "prepare") else sys

    def __call__(self, sys, y, H, cache=None, micro_observer=None):
        total = StepStats()
        elapsed = 0.0
        for g in self.weights.gammas:
            mo = None
            if micro_observer is not None:
                def mo(dt, p, q, _e=elapsed):
                    micro_observer(_e + dt, p, q)
            # the kick cache is keyed on q, so sharing it across substeps is safe
            y, st = self.base(sys, y, g * H, cache=cache, micro_observer=mo)
            elapsed += g * H
            total += st
        return y, total

    def __repr__(self):
        return f"ComposedStepper({self.name})"


def compose_stepper(base, w: CompositionWeights) -> ComposedStepper:
    return ComposedStepper(base, w)


def compose_chain(base, chain) -> object:
    """Apply a list of weight sets recursively (innermost first)."""
    out = base
    for w in chain:
        out = ComposedStepper(out, w)
    return out


__all__ = [
    "CompositionWeights", "loads_weights", "triple_jump", "suzuki", "advanced_composition",
    "AC_STAGES", "AC_WINDOW_STAGES", "weights_for", "order_defect", "composition_order",
    "compose_tableau", "ComposedStepper", "compose_stepper", "compose_chain",
]
