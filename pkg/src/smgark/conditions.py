"""Algebraic checks on multirate tableaus.

Order conditions up to order three (block form and a flattened oracle),
symplecticity, symmetry, explicitness, decoupling, positive weights and the
composition-weight residuals.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

import networkx as nx
import numpy as np

from .tableau import AnyTableau, Half, MgarkTableau, as_partitioned, flatten, stage_slices

DEFAULT_TOL = 1e-12


class ConditionEntry(NamedTuple):
    condition_id: str
    lhs: float
    rhs: float
    residual: float


@dataclass
class ConditionReport:
    entries: list = field(default_factory=list)
    tol: float = DEFAULT_TOL

    def add(self, cid: str, lhs: float, rhs: float, residual: float | None = None) -> None:
        res = float(lhs - rhs) if residual is None else float(residual)
        self.entries.append(ConditionEntry(cid, float(lhs), float(rhs), res))

    @property
    def max_residual(self) -> float:
        return max((abs(e.residual) for e in self.entries), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_residual <= self.tol

    def failing(self) -> list:
        return [e for e in self.entries if not abs(e.residual) <= self.tol]

    def ids(self) -> list:
        return [e.condition_id for e in self.entries]

    def __getitem__(self, cid: str) -> ConditionEntry:
        for e in self.entries:
            if e.condition_id == cid:
                return e
        raise KeyError(cid)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def merge(self, other: "ConditionReport") -> "ConditionReport":
        return ConditionReport(self.entries + other.entries, max(self.tol, other.tol))

    def to_csv(self, fh=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["condition_id", "lhs", "rhs", "residual", "pass"])
        for e in self.entries:
            w.writerow([e.condition_id, f"{e.lhs:.17g}", f"{e.rhs:.17g}", f"{e.residual:.17g}",
                        str(abs(e.residual) <= self.tol).lower()])
        text = buf.getvalue()
        if fh is not None:
            fh.write(text)
        return text


# ---------------------------------------------------------------- order conditions

def _halves(t):
    t = as_partitioned(t)
    return {"bar": (t.bar, t.tilde), "tilde": (t.tilde, t.bar)}


def uniform_micro_steps(t: AnyTableau, tol: float = DEFAULT_TOL) -> bool:
    """True when every micro-step has unit fast weight sum in both halves.

    The block-form rows of :func:`order_report` take the fill of completed
    micro-steps to be one per step, which needs exactly this. Composed
    tableaus violate it; use :func:`order_report_flat` for them.
    """
    return all(abs(b.sum() - 1.0) <= tol for W, _ in _halves(t).values() for b in W.bf)


def order_report(t: AnyTableau, p_max: int = 3, tol: float = DEFAULT_TOL) -> ConditionReport:
    """Evaluate the partitioned multirate order conditions in block form.

    For each weight half W (bar or tilde) the first matrix of a row comes from
    the other half O and the second from W. The fast rows carry the shift
    terms that the fill of completed micro-steps contributes.
    """
    if p_max not in (1, 2, 3):
        raise ValueError("p_max must be 1, 2 or 3")
    rep = ConditionReport(tol=tol)
    M = t.M
    lam_shift = np.arange(M)  # lambda - 1
    for w, (W, O) in _halves(t).items():
        rep.add(f"p1.slow.{w}", W.bs.sum(), 1.0)
    for w, (W, O) in _halves(t).items():
        rep.add(f"p1.fast.{w}", sum(b.sum() for b in W.bf), M)
    if p_max < 2:
        return rep
    for w, (W, O) in _halves(t).items():
        o = "tilde" if w == "bar" else "bar"
        sfO = sum(a.sum(axis=1) for a in O.sf)
        rep.add(f"p2.slow.{w}-{o}-ss", W.bs @ O.ss.sum(axis=1), 0.5)
        rep.add(f"p2.slow.{w}-{o}-sf", W.bs @ sfO, M / 2)
    for w, (W, O) in _halves(t).items():
        o = "tilde" if w == "bar" else "bar"
        rep.add(f"p2.fast.{w}-{o}-ff", sum(b @ a.sum(axis=1) for b, a in zip(W.bf, O.ff)), M / 2)
        rep.add(f"p2.fast.{w}-{o}-fs", sum(b @ a for b, a in zip(W.bf, O.fs)).sum(), M / 2)
    if p_max < 3:
        return rep
    for w, (W, O) in _halves(t).items():
        b = W.bs
        cO = O.ss.sum(axis=1)
        cW = W.ss.sum(axis=1)
        sfO = sum(a.sum(axis=1) for a in O.sf)
        sfW = sum(a.sum(axis=1) for a in W.sf)
        rep.add(f"p3.slow.{w}.diag(ss)ss", b @ (cO * cW), 1 / 3)
        rep.add(f"p3.slow.{w}.diag(ss)sf", b @ (cO * sfW), M / 3)
        rep.add(f"p3.slow.{w}.diag(sf)sf", b @ (sfO * sfW), M**2 / 3)
        rep.add(f"p3.slow.{w}.ss.ss", b @ O.ss @ cW, 1 / 6)
        rep.add(f"p3.slow.{w}.ss.sf", b @ O.ss @ sfW, M / 6)
        rep.add(f"p3.slow.{w}.sf.fs", b @ sum(o_ @ w_ for o_, w_ in zip(O.sf, W.fs)).sum(axis=1), M / 6)
        rep.add(f"p3.slow.{w}.sf.ff",
                b @ sum(o_ @ (w_.sum(axis=1) + k) for o_, w_, k in zip(O.sf, W.ff, lam_shift)),
                M**2 / 6)
    for w, (W, O) in _halves(t).items():
        wsum = np.array([bf.sum() for bf in W.bf])
        suffix = np.concatenate([np.cumsum(wsum[::-1])[::-1][1:], [0.0]])  # sum over mu > lambda
        sfW = sum(a.sum(axis=1) for a in W.sf)
        cWss = W.ss.sum(axis=1)
        r = dict.fromkeys(["dff", "dffs", "dfs", "ffff", "fffs", "fssf", "fsss"], 0.0)
        for lam in range(M):
            bl = W.bf[lam]
            cOff = O.ff[lam].sum(axis=1)
            cWff = W.ff[lam].sum(axis=1)
            cOfs = O.fs[lam].sum(axis=1)
            cWfs = W.fs[lam].sum(axis=1)
            r["dff"] += bl @ (cOff * cWff)
            r["dffs"] += bl @ ((cOff + lam_shift[lam]) * cWfs)
            r["dfs"] += bl @ (cOfs * cWfs)
            r["ffff"] += bl @ O.ff[lam] @ cWff
            r["fffs"] += bl @ O.ff[lam] @ cWfs + suffix[lam] * (bl @ cWfs)
            r["fssf"] += bl @ O.fs[lam] @ sfW
            r["fsss"] += bl @ O.fs[lam] @ cWss
        rep.add(f"p3.fast.{w}.diag(ff)ff", r["dff"], M / 3)
        rep.add(f"p3.fast.{w}.diag(ff)fs", r["dffs"], M**2 / 3)
        rep.add(f"p3.fast.{w}.diag(fs)fs", r["dfs"], M / 3)
        rep.add(f"p3.fast.{w}.ff.ff", r["ffff"], M / 6)
        rep.add(f"p3.fast.{w}.ff.fs", r["fffs"], M**2 / 6)
        rep.add(f"p3.fast.{w}.fs.sf", r["fssf"], M**2 / 6)
        rep.add(f"p3.fast.{w}.fs.ss", r["fsss"], M / 6)
    return rep


# Powers of M relating a flattened residual to its block-form counterpart. They
# hold whenever every micro-step base scheme is consistent on its own (unit
# weight sums, all half-by-half products b^T A 1 equal to 1/2).
FLAT_SCALE = {
    "p1.slow": 0, "p1.fast": 1,
    "p2.slow.ss": 0, "p2.slow.sf": 1, "p2.fast.ff": 2, "p2.fast.fs": 1,
    "p3.slow.diag(ss)ss": 0, "p3.slow.diag(ss)sf": 1, "p3.slow.diag(sf)sf": 2,
    "p3.slow.ss.ss": 0, "p3.slow.ss.sf": 1, "p3.slow.sf.fs": 1, "p3.slow.sf.ff": 2,
    "p3.fast.diag(ff)ff": 3, "p3.fast.diag(ff)fs": 2, "p3.fast.diag(fs)fs": 1,
    "p3.fast.ff.ff": 3, "p3.fast.ff.fs": 2, "p3.fast.fs.sf": 2, "p3.fast.fs.ss": 1,
}


def flat_scale(condition_id: str) -> int:
    """Exponent k with ``block residual = M**k * flat residual`` for a row id."""
    parts = condition_id.split(".")
    if parts[0] == "p1":
        return FLAT_SCALE[".".join(parts[:2])]
    if parts[0] == "p2":
        return FLAT_SCALE[f"p2.{parts[1]}.{parts[2].rsplit('-', 1)[1]}"]
    return FLAT_SCALE[".".join([parts[0], parts[1]] + parts[3:])]


def order_report_flat(t: AnyTableau, p_max: int = 3, tol: float = DEFAULT_TOL) -> ConditionReport:
    """Same rows as :func:`order_report`, evaluated on the flattened tableau.

    Right-hand sides are the singlerate values 1, 1/2, 1/3, 1/6. Use
    :func:`flat_scale` to map residuals back to block form.
    """
    if p_max not in (1, 2, 3):
        raise ValueError("p_max must be 1, 2 or 3")
    bar, tilde = flatten(t)
    _, S = stage_slices(t)
    F = slice(0, S.start)
    flat = {"bar": (bar, tilde), "tilde": (tilde, bar)}
    rep = ConditionReport(tol=tol)
    one_s = np.ones(S.stop - S.start)
    one_f = np.ones(F.stop)
    for w, (W, O) in flat.items():
        rep.add(f"p1.slow.{w}", W.b[S].sum(), 1.0)
    for w, (W, O) in flat.items():
        rep.add(f"p1.fast.{w}", W.b[F].sum(), 1.0)
    if p_max < 2:
        return rep

    def blocks(X):
        return X.a[S, S], X.a[S, F], X.a[F, S], X.a[F, F]

    for w, (W, O) in flat.items():
        o = "tilde" if w == "bar" else "bar"
        Oss, Osf, _, _ = blocks(O)
        rep.add(f"p2.slow.{w}-{o}-ss", W.b[S] @ Oss @ one_s, 0.5)
        rep.add(f"p2.slow.{w}-{o}-sf", W.b[S] @ Osf @ one_f, 0.5)
    for w, (W, O) in flat.items():
        o = "tilde" if w == "bar" else "bar"
        _, _, Ofs, Off = blocks(O)
        rep.add(f"p2.fast.{w}-{o}-ff", W.b[F] @ Off @ one_f, 0.5)
        rep.add(f"p2.fast.{w}-{o}-fs", W.b[F] @ Ofs @ one_s, 0.5)
    if p_max < 3:
        return rep
    for w, (W, O) in flat.items():
        Oss, Osf, Ofs, Off = blocks(O)
        Wss, Wsf, Wfs, Wff = blocks(W)
        b = W.b[S]
        rep.add(f"p3.slow.{w}.diag(ss)ss", b @ ((Oss @ one_s) * (Wss @ one_s)), 1 / 3)
        rep.add(f"p3.slow.{w}.diag(ss)sf", b @ ((Oss @ one_s) * (Wsf @ one_f)), 1 / 3)
        rep.add(f"p3.slow.{w}.diag(sf)sf", b @ ((Osf @ one_f) * (Wsf @ one_f)), 1 / 3)
        rep.add(f"p3.slow.{w}.ss.ss", b @ Oss @ Wss @ one_s, 1 / 6)
        rep.add(f"p3.slow.{w}.ss.sf", b @ Oss @ Wsf @ one_f, 1 / 6)
        rep.add(f"p3.slow.{w}.sf.fs", b @ Osf @ Wfs @ one_s, 1 / 6)
        rep.add(f"p3.slow.{w}.sf.ff", b @ Osf @ Wff @ one_f, 1 / 6)
    for w, (W, O) in flat.items():
        Oss, Osf, Ofs, Off = blocks(O)
        Wss, Wsf, Wfs, Wff = blocks(W)
        b = W.b[F]
        rep.add(f"p3.fast.{w}.diag(ff)ff", b @ ((Off @ one_f) * (Wff @ one_f)), 1 / 3)
        rep.add(f"p3.fast.{w}.diag(ff)fs", b @ ((Off @ one_f) * (Wfs @ one_s)), 1 / 3)
        rep.add(f"p3.fast.{w}.diag(fs)fs", b @ ((Ofs @ one_s) * (Wfs @ one_s)), 1 / 3)
        rep.add(f"p3.fast.{w}.ff.ff", b @ Off @ Wff @ one_f, 1 / 6)
        rep.add(f"p3.fast.{w}.ff.fs", b @ Off @ Wfs @ one_s, 1 / 6)
        rep.add(f"p3.fast.{w}.fs.sf", b @ Ofs @ Wsf @ one_f, 1 / 6)
        rep.add(f"p3.fast.{w}.fs.ss", b @ Ofs @ Wss @ one_s, 1 / 6)
    return rep


# ---------------------------------------------------------------- symplecticity

def _sympl(Abar, Atil, bbar_row, btil_row, bbar_col, btil_col):
    # A_bar^T B_tilde + B_bar A_tilde - b_bar b_tilde^T with rectangular blocks:
    # rows index the bar weights, columns the tilde weights.
    return Abar.T * btil_col[None, :] + bbar_row[:, None] * Atil - np.outer(bbar_row, btil_col)


def is_symplectic(t: AnyTableau, tol: float = DEFAULT_TOL) -> ConditionReport:
    """Symplecticity conditions (a) slow, and (b), (c), (d) per micro-step."""
    t = as_partitioned(t)
    B, T = t.bar, t.tilde
    rep = ConditionReport(tol=tol)
    r = np.abs(_sympl(B.ss, T.ss, B.bs, T.bs, B.bs, T.bs)).max()
    rep.add("symplectic.a", r, 0.0, r)
    for lam in range(t.M):
        k = lam + 1
        r = np.abs(_sympl(B.ff[lam], T.ff[lam], B.bf[lam], T.bf[lam], B.bf[lam], T.bf[lam])).max()
        rep.add(f"symplectic.b.lambda={k}", r, 0.0, r)
        # (c): slow bar weights against fast tilde weights
        c = B.fs[lam].T * T.bf[lam][None, :] + B.bs[:, None] * T.sf[lam] - np.outer(B.bs, T.bf[lam])
        r = np.abs(c).max()
        rep.add(f"symplectic.c.lambda={k}", r, 0.0, r)
        # (d): fast bar weights against slow tilde weights
        d = B.sf[lam].T * T.bs[None, :] + B.bf[lam][:, None] * T.fs[lam] - np.outer(B.bf[lam], T.bs)
        r = np.abs(d).max()
        rep.add(f"symplectic.d.lambda={k}", r, 0.0, r)
    return rep


def symplectic_flat_residual(t: AnyTableau) -> float:
    """``max|A_bar^T B_tilde + B_bar A_tilde - b_bar b_tilde^T|`` on the flattened pair."""
    bar, tilde = flatten(t)
    m = bar.a.T * tilde.b[None, :] + bar.b[:, None] * tilde.a - np.outer(bar.b, tilde.b)
    return float(np.abs(m).max())


# ---------------------------------------------------------------- symmetry

def _rev(x):
    return x[::-1, ::-1] if x.ndim == 2 else x[::-1]


def _symmetry_half(h: Half, label: str, rep: ConditionReport) -> None:
    M = h.M

    def put(cid, m):
        r = float(np.abs(m).max()) if m.size else 0.0
        rep.add(cid, r, 0.0, r)

    put(f"symmetric.{label}.ss", h.ss + _rev(h.ss) - np.outer(np.ones(h.bs.size), h.bs))
    put(f"symmetric.{label}.b.s", h.bs - _rev(h.bs))
    for lam in range(M):
        mir = M - 1 - lam
        k = lam + 1
        bl = h.bf[lam]
        put(f"symmetric.{label}.ff.lambda={k}", h.ff[lam] + _rev(h.ff[mir]) - np.outer(np.ones(bl.size), bl))
        put(f"symmetric.{label}.b.f.lambda={k}", bl - _rev(h.bf[mir]) if bl.shape == h.bf[mir].shape
            else np.array([np.inf]))
        put(f"symmetric.{label}.sf.lambda={k}", h.sf[lam] + _rev(h.sf[mir]) - np.outer(np.ones(h.bs.size), bl))
        put(f"symmetric.{label}.fs.lambda={k}", h.fs[lam] + _rev(h.fs[mir]) - np.outer(np.ones(bl.size), h.bs))


def is_symmetric(t: AnyTableau, tol: float = DEFAULT_TOL) -> ConditionReport:
    """Self-adjointness of each half: ``A + P A P = 1 b^T`` and ``b = P b``.

    P reverses the order of the stages within each tier (all fast stages of
    all micro-steps, and the slow stages), so micro-step l is mirrored to
    micro-step M+1-l.
    """
    rep = ConditionReport(tol=tol)
    _symmetry_half(t.bar, "bar", rep)
    if not isinstance(t, MgarkTableau):
        _symmetry_half(t.tilde, "tilde", rep)
    return rep


def symmetric_flat_residual(t: AnyTableau) -> float:
    """Symmetry residual computed on the flattened halves (oracle for :func:`is_symmetric`)."""
    _, S = stage_slices(t)
    nf, n = S.start, S.stop
    perm = np.concatenate([np.arange(nf)[::-1], np.arange(nf, n)[::-1]])
    worst = 0.0
    for X in flatten(t):
        PAP = X.a[np.ix_(perm, perm)]
        worst = max(worst, np.abs(X.a + PAP - np.outer(np.ones(n), X.b)).max(),
                    np.abs(X.b - X.b[perm]).max())
    return float(worst)


# ---------------------------------------------------------------- structure

def is_explicit(t: AnyTableau, tol: float = 0.0) -> bool:
    """True when the bar and tilde halves never couple a stage to itself implicitly.

    Checks ``A_bar * A_tilde^T == 0`` elementwise on the flattened halves.
    """
    bar, tilde = flatten(as_partitioned(t))
    return bool(np.abs(bar.a * tilde.a.T).max() <= tol)


def stage_graph(t: AnyTableau) -> nx.DiGraph:
    """Stage dependency graph; an edge ``j -> i`` means stage i needs stage j.

    Single-half tableaus get one node per stage. Partitioned tableaus get a
    P node and a Q node per stage: Q stages read P stages through the bar
    half and P stages read Q stages through the tilde half. Nodes are tuples
    ``(kind, tier, lambda, i)`` with lambda = 0 for the slow tier.
    """
    fsl, S = stage_slices(t)
    labels = []
    for lam, sl in enumerate(fsl, start=1):
        labels += [("f", lam, i) for i in range(sl.stop - sl.start)]
    labels += [("s", 0, i) for i in range(S.stop - S.start)]
    bar, tilde = flatten(t)
    g = nx.DiGraph()
    if isinstance(t, MgarkTableau):
        nodes = [("Y",) + lab for lab in labels]
        g.add_nodes_from(nodes)
        rows, cols = np.nonzero(bar.a)
        g.add_edges_from((nodes[j], nodes[i]) for i, j in zip(rows, cols))
        return g
    P = [("P",) + lab for lab in labels]
    Q = [("Q",) + lab for lab in labels]
    g.add_nodes_from(P + Q)
    rows, cols = np.nonzero(bar.a)
    g.add_edges_from((P[j], Q[i]) for i, j in zip(rows, cols))
    rows, cols = np.nonzero(tilde.a)
    g.add_edges_from((Q[j], P[i]) for i, j in zip(rows, cols))
    return g


def is_decoupled(t: AnyTableau) -> bool:
    """True iff no strongly connected stage group mixes slow and fast stages."""
    g = stage_graph(t)
    for comp in nx.strongly_connected_components(g):
        if len({node[1] for node in comp}) > 1:
            return False
    return True


def _weights(t: AnyTableau) -> Iterable[np.ndarray]:
    t = as_partitioned(t)
    for h in (t.bar, t.tilde):
        yield h.bs
        yield from h.bf


def positive_weights(t: AnyTableau) -> bool:
    return all(bool(np.all(b > 0)) for b in _weights(t))


def composition_order_residual(gammas, p: int) -> tuple[float, float]:
    """``(sum(g) - 1, sum(g**(p+1)))``; both vanish when the composition gains two orders."""
    g = np.asarray(gammas, dtype=float)
    if g.size == 0:
        raise ValueError("need at least one weight")
    return float(g.sum() - 1.0), float(np.sum(g ** (p + 1)))


def full_report(t: AnyTableau, p_max: int = 3, tol: float = DEFAULT_TOL) -> ConditionReport:
    """Order, symplecticity and symmetry rows in one report."""
    return order_report(t, p_max, tol).merge(is_symplectic(t, tol)).merge(is_symmetric(t, tol))


__all__ = [
    "DEFAULT_TOL", "ConditionEntry", "ConditionReport", "order_report", "order_report_flat",
    "uniform_micro_steps",
    "flat_scale", "is_symplectic", "symplectic_flat_residual", "is_symmetric",
    "symmetric_flat_residual", "is_explicit", "stage_graph", "is_decoupled",
    "positive_weights", "composition_order_residual", "full_report",
]
