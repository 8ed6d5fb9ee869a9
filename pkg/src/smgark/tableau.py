"""Runge-Kutta and multirate GARK tableaus.

A partitioned multirate tableau holds two coefficient halves. The *bar* half
advances coordinate-like stages Q from kinetic forces, the *tilde* half
advances momentum-like stages P from potential forces. Each half is made of

* a slow base scheme ``(A^{ss}, b^s)`` used with the macro-step H,
* M fast base schemes ``(A^{ff,l}, b^{f,l})`` used with micro-step h = H/M,
* coupling blocks ``A^{sf,l}`` (slow rows, fast columns, scaled with h) and
  ``A^{fs,l}`` (fast rows, slow columns, scaled with H).

Blocks are stored per micro-step. :func:`flatten` builds the monolithic
matrices, which only the checkers and the oracle stepper use.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Union

import numpy as np


def _frozen(x, ndim: int, name: str) -> np.ndarray:
    arr = np.array(x, dtype=float)
    if arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class RkTableau:
    """Butcher coefficients ``(a, b)`` of an s-stage Runge-Kutta method."""

    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        a = _frozen(self.a, 2, "a")
        b = _frozen(self.b, 1, "b")
        if a.shape != (b.size, b.size) or b.size < 1:
            raise ValueError(f"inconsistent shapes a{a.shape}, b{b.shape}")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def s(self) -> int:
        return self.b.size

    def allclose(self, other: "RkTableau", tol: float = 1e-14) -> bool:
        return (self.s == other.s and np.allclose(self.a, other.a, rtol=0, atol=tol)
                and np.allclose(self.b, other.b, rtol=0, atol=tol))


@dataclass(frozen=True, eq=False)
class RkTableauPair:
    """Partitioned base scheme: ``bar`` for Q-stages, ``tilde`` for P-stages."""

    bar: RkTableau
    tilde: RkTableau

    def __post_init__(self):
        if self.bar.s != self.tilde.s:
            raise ValueError("bar and tilde halves need equal stage counts")

    @property
    def s(self) -> int:
        return self.bar.s


class Half(NamedTuple):
    """One coefficient half of a multirate tableau in block form."""

    ss: np.ndarray
    bs: np.ndarray
    ff: tuple
    bf: tuple
    sf: tuple
    fs: tuple

    @property
    def M(self) -> int:
        return len(self.ff)

    def scaled(self, c: float) -> "Half":
        return Half(c * self.ss, c * self.bs, tuple(c * x for x in self.ff),
                    tuple(c * x for x in self.bf), tuple(c * x for x in self.sf),
                    tuple(c * x for x in self.fs))


def _check_half(h: Half, label: str) -> None:
    ss = h.ss.shape[0]
    if h.M < 1:
        raise ValueError("M must be at least 1")
    for n, (ff, bf, sf, fs) in enumerate(zip(h.ff, h.bf, h.sf, h.fs), start=1):
        sfast = bf.size
        if ff.shape != (sfast, sfast):
            raise ValueError(f"{label}.ff lambda={n} has shape {ff.shape}")
        if sf.shape != (ss, sfast):
            raise ValueError(f"{label}.sf lambda={n} has shape {sf.shape}, expected {(ss, sfast)}")
        if fs.shape != (sfast, ss):
            raise ValueError(f"{label}.fs lambda={n} has shape {fs.shape}, expected {(sfast, ss)}")


@dataclass(frozen=True, eq=False)
class PartitionedMgarkTableau:
    """Multirate tableau with separate bar (Q) and tilde (P) halves."""

    M: int
    slow: RkTableauPair
    fast: tuple
    couple_sf_bar: tuple
    couple_sf_tilde: tuple
    couple_fs_bar: tuple
    couple_fs_tilde: tuple

    def __post_init__(self):
        for name in ("fast", "couple_sf_bar", "couple_sf_tilde", "couple_fs_bar", "couple_fs_tilde"):
            val = tuple(getattr(self, name))
            if name != "fast":
                val = tuple(_frozen(x, 2, name) for x in val)
            if len(val) != self.M:
                raise ValueError(f"{name} needs M={self.M} entries, got {len(val)}")
            object.__setattr__(self, name, val)
        _check_half(self.bar, "bar")
        _check_half(self.tilde, "tilde")

    @property
    def bar(self) -> Half:
        return Half(self.slow.bar.a, self.slow.bar.b,
                    tuple(f.bar.a for f in self.fast), tuple(f.bar.b for f in self.fast),
                    self.couple_sf_bar, self.couple_fs_bar)

    @property
    def tilde(self) -> Half:
        return Half(self.slow.tilde.a, self.slow.tilde.b,
                    tuple(f.tilde.a for f in self.fast), tuple(f.tilde.b for f in self.fast),
                    self.couple_sf_tilde, self.couple_fs_tilde)

    @property
    def slow_stages(self) -> int:
        return self.slow.s

    @property
    def fast_stages(self) -> tuple:
        return tuple(f.s for f in self.fast)


@dataclass(frozen=True, eq=False)
class MgarkTableau:
    """Multirate tableau with a single coefficient half (bar equal to tilde)."""

    M: int
    slow: RkTableau
    fast: tuple
    couple_sf: tuple
    couple_fs: tuple

    def __post_init__(self):
        for name in ("fast", "couple_sf", "couple_fs"):
            val = tuple(getattr(self, name))
            if name != "fast":
                val = tuple(_frozen(x, 2, name) for x in val)
            if len(val) != self.M:
                raise ValueError(f"{name} needs M={self.M} entries, got {len(val)}")
            object.__setattr__(self, name, val)
        _check_half(self.bar, "bar")

    @property
    def bar(self) -> Half:
        return Half(self.slow.a, self.slow.b, tuple(f.a for f in self.fast),
                    tuple(f.b for f in self.fast), self.couple_sf, self.couple_fs)

    tilde = bar

    @property
    def slow_stages(self) -> int:
        return self.slow.s

    @property
    def fast_stages(self) -> tuple:
        return tuple(f.s for f in self.fast)


AnyTableau = Union[PartitionedMgarkTableau, MgarkTableau]


def from_halves(bar: Half, tilde: Half | None = None) -> AnyTableau:
    """Assemble a tableau from block halves; a single half gives an MgarkTableau."""
    if tilde is None:
        return MgarkTableau(
            M=bar.M,
            slow=RkTableau(bar.ss, bar.bs),
            fast=tuple(RkTableau(a, b) for a, b in zip(bar.ff, bar.bf)),
            couple_sf=bar.sf,
            couple_fs=bar.fs,
        )
    if bar.M != tilde.M:
        raise ValueError("halves disagree on M")
    return PartitionedMgarkTableau(
        M=bar.M,
        slow=RkTableauPair(RkTableau(bar.ss, bar.bs), RkTableau(tilde.ss, tilde.bs)),
        fast=tuple(RkTableauPair(RkTableau(a, b), RkTableau(at, bt))
                   for a, b, at, bt in zip(bar.ff, bar.bf, tilde.ff, tilde.bf)),
        couple_sf_bar=bar.sf, couple_sf_tilde=tilde.sf,
        couple_fs_bar=bar.fs, couple_fs_tilde=tilde.fs,
    )


def as_partitioned(t: AnyTableau) -> PartitionedMgarkTableau:
    """View any tableau as partitioned (an MgarkTableau gets equal halves)."""
    if isinstance(t, PartitionedMgarkTableau):
        return t
    return from_halves(t.bar, t.bar)


# ---------------------------------------------------------------- base schemes

def leapfrog_pair() -> RkTableauPair:
    """Stoermer-Verlet as a two-stage partitioned Runge-Kutta pair."""
    return RkTableauPair(
        bar=RkTableau([[0.0, 0.0], [0.5, 0.5]], [0.5, 0.5]),
        tilde=RkTableau([[0.5, 0.0], [0.5, 0.0]], [0.5, 0.5]),
    )


def implicit_midpoint() -> RkTableau:
    return RkTableau([[0.5]], [1.0])


# ---------------------------------------------------------------- named schemes

def build_mr_lpfr(M: int) -> PartitionedMgarkTableau:
    """Multirate leapfrog (nested Stoermer-Verlet).

    Slow kick by H/2, M/2 fast leapfrog micro-steps, slow drift by H, M/2
    fast micro-steps, slow kick by H/2. The coupling blocks encode exactly
    this sequence: the slow drift sees the momentum after the first half of
    the micro-steps, and the second half of the micro-steps sees the drift.

    ``M=1`` is accepted as the singlerate Stoermer-Verlet method applied to
    the full Hamiltonian. Any other odd M is rejected.
    """
    M = int(M)
    if M < 1:
        raise ValueError("M must be a positive integer")
    lf = leapfrog_pair()
    zero = np.zeros((2, 2))
    full = np.full((2, 2), 0.5)
    if M == 1:
        return PartitionedMgarkTableau(
            M=1, slow=lf, fast=(lf,),
            couple_sf_bar=(lf.bar.a,), couple_sf_tilde=(lf.tilde.a,),
            couple_fs_bar=(lf.bar.a,), couple_fs_tilde=(lf.tilde.a,),
        )
    if M % 2:
        raise ValueError(f"M must be even (got M={M})")
    first = [lam <= M // 2 for lam in range(1, M + 1)]
    return PartitionedMgarkTableau(
        M=M, slow=lf, fast=(lf,) * M,
        couple_sf_bar=(lf.bar.a,) * M,
        couple_sf_tilde=tuple(full if f else zero for f in first),
        couple_fs_bar=tuple(zero if f else full for f in first),
        couple_fs_tilde=(lf.tilde.a,) * M,
    )


def build_mr_imex2(M: int) -> MgarkTableau:
    """Multirate IMEX impulse scheme: slow half kicks around M midpoint micro-steps."""
    M = int(M)
    if M < 1:
        raise ValueError("M must be a positive integer")
    slow = RkTableau([[0.25, 0.0], [0.5, 0.25]], [0.5, 0.5])
    return MgarkTableau(
        M=M, slow=slow, fast=(implicit_midpoint(),) * M,
        couple_sf=(np.array([[0.0], [1.0]]),) * M,
        couple_fs=(np.array([[0.5, 0.0]]),) * M,
    )


def build_mr_imim2(M: int) -> MgarkTableau:
    """Multirate implicit-implicit midpoint scheme.

    Implicit midpoint on both tiers. The slow stage sees the fast micro-steps
    of the first half of the macro-step, the fast micro-steps of the second
    half see the slow stage. For odd M the middle micro-step is shared with
    weight 1/2 each way. ``M=1`` is the implicit midpoint rule on the full
    system.
    """
    M = int(M)
    if M < 1:
        raise ValueError("M must be a positive integer")
    sf = []
    for lam in range(1, M + 1):
        if 2 * lam < M + 1:
            sf.append(1.0)
        elif 2 * lam == M + 1:
            sf.append(0.5)
        else:
            sf.append(0.0)
    return MgarkTableau(
        M=M, slow=implicit_midpoint(), fast=(implicit_midpoint(),) * M,
        couple_sf=tuple(np.array([[c]]) for c in sf),
        couple_fs=tuple(np.array([[1.0 - c]]) for c in sf),
    )


SCHEMES = {
    "mr-lpfr": build_mr_lpfr,
    "mr-imex2": build_mr_imex2,
    "mr-imim2": build_mr_imim2,
}


def build_scheme(name: str, M: int) -> AnyTableau:
    try:
        builder = SCHEMES[name.lower()]
    except KeyError:
        raise KeyError(f"unknown scheme {name!r}; available: {', '.join(SCHEMES)}") from None
    return builder(M)


# ---------------------------------------------------------------- flattening

def _flatten_half(h: Half) -> RkTableau:
    M = h.M
    nf = [b.size for b in h.bf]
    off = np.concatenate([[0], np.cumsum(nf)])
    nfast = off[-1]
    ns = h.bs.size
    n = nfast + ns
    a = np.zeros((n, n))
    b = np.zeros(n)
    S = slice(nfast, n)
    a[S, S] = h.ss
    b[S] = h.bs
    for lam in range(M):
        F = slice(off[lam], off[lam + 1])
        a[F, F] = h.ff[lam] / M
        for ell in range(lam):
            a[F, off[ell]:off[ell + 1]] = np.outer(np.ones(nf[lam]), h.bf[ell]) / M
        a[S, F] = h.sf[lam] / M
        a[F, S] = h.fs[lam]
        b[F] = h.bf[lam] / M
    return RkTableau(a, b)


def flatten(t: AnyTableau) -> tuple[RkTableau, RkTableau]:
    """Monolithic (bar, tilde) tableaus on the macro-step, fast stages first."""
    return _flatten_half(t.bar), _flatten_half(t.tilde)


def stage_slices(t: AnyTableau) -> tuple[list, slice]:
    """Index ranges of the fast micro-steps and the slow stages in :func:`flatten`."""
    nf = list(t.fast_stages)
    off = np.concatenate([[0], np.cumsum(nf)]).astype(int)
    fast = [slice(off[i], off[i + 1]) for i in range(len(nf))]
    return fast, slice(int(off[-1]), int(off[-1]) + t.slow_stages)


def _block_items(h: Half, label: str):
    yield f"{label}.ss", h.ss
    yield f"{label}.b.s", h.bs
    for n in range(h.M):
        yield f"{label}.ff lambda={n + 1}", h.ff[n]
        yield f"{label}.b.f lambda={n + 1}", h.bf[n]
        yield f"{label}.sf lambda={n + 1}", h.sf[n]
        yield f"{label}.fs lambda={n + 1}", h.fs[n]


def reduce_partitioned(t: AnyTableau, tol: float = 1e-14) -> MgarkTableau:
    """Collapse a partitioned tableau with equal halves to a single-half one."""
    if isinstance(t, MgarkTableau):
        return t
    for (name, x), (_, y) in zip(_block_items(t.bar, "bar"), _block_items(t.tilde, "tilde")):
        if x.shape != y.shape or not np.allclose(x, y, rtol=0, atol=tol):
            raise ValueError(f"halves differ in block {name.replace('bar.', '')}")
    return from_halves(t.bar)


def scale_tableau(t: AnyTableau, c: float) -> AnyTableau:
    if isinstance(t, MgarkTableau):
        return from_halves(t.bar.scaled(c))
    return from_halves(t.bar.scaled(c), t.tilde.scaled(c))


# ---------------------------------------------------------------- text format

class TableauParseError(ValueError):
    def __init__(self, msg: str, line: int, col: int = 1):
        super().__init__(f"line {line}, column {col}: {msg}")
        self.line = line
        self.col = col


def _fmt_row(row) -> str:
    return " ".join(f"{float(x):.17g}" for x in np.atleast_1d(row))


def dumps(t: AnyTableau) -> str:
    """Serialize to the plain-text block format (17 significant digits)."""
    out = [f"M = {t.M}", ""]
    halves = [("bar", t.bar)]
    if isinstance(t, PartitionedMgarkTableau):
        halves.append(("tilde", t.tilde))
    for label, h in halves:
        for name, x in _block_items(h, label):
            out.append(f"[{name}]")
            if x.ndim == 1:
                out.append(_fmt_row(x))
            else:
                # a row with no columns still needs a line to count rows
                out.extend(_fmt_row(r) if r.size else "" for r in x)
            out.append("")
    return "\n".join(out)


def save(t: AnyTableau, path) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(dumps(t))


def loads(text: str) -> AnyTableau:
    """Parse the plain-text block format. Errors carry line and column."""
    M = None
    blocks: dict[str, list] = {}
    where: dict[str, int] = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        stripped = line.strip()
        if stripped.startswith("["):
            if not stripped.endswith("]"):
                raise TableauParseError("unterminated block header", lineno, len(raw))
            current = " ".join(stripped[1:-1].split())
            if current in blocks:
                raise TableauParseError(f"duplicate block [{current}]", lineno)
            blocks[current] = []
            where[current] = lineno
            continue
        if current is None:
            key, eq, val = stripped.partition("=")
            if not eq or key.strip() != "M":
                raise TableauParseError("expected 'M = <int>' before blocks", lineno)
            try:
                M = int(val)
            except ValueError:
                raise TableauParseError(f"bad M value {val.strip()!r}", lineno,
                                        raw.index("=") + 2) from None
            continue
        row = []
        col = 1
        for tok in raw.split("#", 1)[0].split():
            col = raw.index(tok, col - 1) + 1
            try:
                row.append(float(tok))
            except ValueError:
                raise TableauParseError(f"not a number: {tok!r}", lineno, col) from None
            col += len(tok)
        blocks[current].append(row)
    if M is None:
        raise TableauParseError("missing 'M = <int>'", 1)

    def get(name, vector=False):
        if name not in blocks:
            raise TableauParseError(f"missing block [{name}]", len(text.splitlines()) or 1)
        rows = blocks[name]
        if vector:
            if len(rows) != 1:
                raise TableauParseError(f"[{name}] must be a single row", where[name])
            return np.array(rows[0])
        widths = {len(r) for r in rows}
        if len(widths) > 1:
            raise TableauParseError(f"[{name}] has ragged rows", where[name])
        return np.array(rows).reshape(len(rows), widths.pop() if widths else 0)

    def half(label):
        return Half(
            get(f"{label}.ss"), get(f"{label}.b.s", True),
            tuple(get(f"{label}.ff lambda={n}") for n in range(1, M + 1)),
            tuple(get(f"{label}.b.f lambda={n}", True) for n in range(1, M + 1)),
            tuple(get(f"{label}.sf lambda={n}") for n in range(1, M + 1)),
            tuple(get(f"{label}.fs lambda={n}") for n in range(1, M + 1)),
        )

    has_tilde = any(k.startswith("tilde.") for k in blocks)
    try:
        return from_halves(half("bar"), half("tilde") if has_tilde else None)
    except TableauParseError:
        raise
    except ValueError as exc:
        raise TableauParseError(str(exc), 1) from None


def load(path) -> AnyTableau:
    with open(path) as fh:
        return loads(fh.read())


def tableaus_close(a: AnyTableau, b: AnyTableau, tol: float = 0.0) -> bool:
    if type(a) is not type(b) or a.M != b.M:
        return False
    pa = [x for _, x in _block_items(a.bar, "bar")] + [x for _, x in _block_items(a.tilde, "t")]
    pb = [x for _, x in _block_items(b.bar, "bar")] + [x for _, x in _block_items(b.tilde, "t")]
    return all(x.shape == y.shape and np.allclose(x, y, rtol=0, atol=tol) for x, y in zip(pa, pb))


__all__ = [
    "RkTableau", "RkTableauPair", "Half", "PartitionedMgarkTableau", "MgarkTableau",
    "AnyTableau", "from_halves", "as_partitioned", "leapfrog_pair", "implicit_midpoint",
    "build_mr_lpfr", "build_mr_imex2", "build_mr_imim2", "SCHEMES", "build_scheme",
    "flatten", "stage_slices", "reduce_partitioned", "scale_tableau", "dumps", "loads",
    "save", "load", "TableauParseError", "tableaus_close",
]
