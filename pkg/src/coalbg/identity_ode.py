"""Backward equations for a sample of two genes in a random background.

For the probabilities of identity f = (f_PP, f_PQ, f_QQ) the stationary system
reads, on 0 < p < 1 (q = 1 - p, a = pq/2, b the diffusion drift),

    0 = -2 nu f_PP + (1 - f_PP)/(2p) + (mu2 q/p + r q)(f_PQ - f_PP) + L f_PP
    0 = -2 nu f_PQ + (mu1 p/q + r p)/2 (f_PP - f_PQ)
                   + (mu2 q/p + r q)/2 (f_QQ - f_PQ) + L f_PQ
    0 = -2 nu f_QQ + (1 - f_QQ)/(2q) + (mu1 p/q + r p)(f_PQ - f_QQ) + L f_QQ

with L = b d/dp + (a/2) d^2/dp^2. The time-dependent distribution functions
F(t, p) of the coalescence time satisfy dF/dt = (same right-hand side with
nu = 0), F(0, .) = 0, and the mean times satisfy the same operator with a
unit source in place of the coalescence terms.

Discretisation
--------------
Second-order centred differences on a uniform grid. The coefficients 1/p and
1/q make the solutions behave like p log p at 0 (in f_PQ and, more weakly,
f_PP) and like q log q at 1, which limits plain differences to first order.
Each unknown field is therefore split as a smooth grid function plus a known
singular function times an unknown amplitude:

    f_PP = g_PP + k0 c0 phi0,  f_PQ = g_PQ + c0 phi0 + c1 phi1,  f_QQ = g_QQ + k1 c1 phi1,

with phi0 = p log(p) q^2, phi1 = q log(q) p^2, k0 = 2 mu2/(1 + mu2) and
k1 = 2 mu1/(1 + mu1) (the ratios forced by cancelling the log p terms of
the first equation). The two amplitudes are closed by the O(1) balance of
the second equation at each endpoint. Every problem is written as

    Mass dy/dt = A y + b

for the unknown vector y = (g on all nodes, c0, c1): identities solve
(A - 2 nu Mass) y = -b, mean times solve A T = -Mass 1, and the CDF system
is integrated in time.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spl
from scipy.interpolate import CubicSpline

from .core import FrequencyGrid, ModelParams, eval_selection, to_diffusion_scale
from .diffusion import StationaryDensity, stationary_density

__all__ = [
    "PP",
    "PQ",
    "QQ",
    "BoundaryRelation",
    "boundary_conditions",
    "DiscreteSystem",
    "assemble_system",
    "TripleField",
    "IdentityField",
    "TimeField",
    "CdfField",
    "IterativeResult",
    "solve_direct",
    "solve_iterative",
    "solve_time_dependent",
    "mean_coalescence_times",
    "average_over_stationarity",
    "Baseline",
    "constant_p_baseline",
    "SweepPoint",
    "selection_sweep",
]

PP, PQ, QQ = 0, 1, 2
_NAMES = ("PP", "PQ", "QQ")


# singular functions ----------------------------------------------------------------


def _xlogx(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    m = x > 0
    out[m] = x[m] * np.log(x[m])
    return out


def _log0(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    m = x > 0
    out[m] = np.log(x[m])
    return out


def _inv0(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    m = x > 0
    out[m] = 1.0 / x[m]
    return out


def singular_functions(p):
    """(value, first, second derivative) of phi0 = p log p q^2 and phi1 = q log q p^2."""
    p = np.asarray(p, dtype=float)
    q = 1.0 - p
    lp, lq = _log0(p), _log0(q)
    f0 = _xlogx(p) * q * q
    d0 = (lp + 1.0) * q * q - 2.0 * _xlogx(p) * q
    dd0 = _inv0(p) * q * q - 4.0 * (lp + 1.0) * q + 2.0 * _xlogx(p)
    f1 = _xlogx(q) * p * p
    d1 = -(lq + 1.0) * p * p + 2.0 * _xlogx(q) * p
    dd1 = _inv0(q) * p * p - 4.0 * (lq + 1.0) * p + 2.0 * _xlogx(q)
    return (f0, d0, dd0), (f1, d1, dd1)


# boundary relations ------------------------------------------------------------------


@dataclass(frozen=True)
class BoundaryRelation:
    """One endpoint closure, read as

        mass * dF_c/dt = sum_k values[k] F_k(e) + derivative * F_c'(e) + constant

    at endpoint ``e`` for component ``c``. Algebraic relations have
    ``mass = 0``; in the stationary identity problem the left side becomes
    2 nu mass F_c(e).
    """

    endpoint: int
    component: int
    mass: float
    values: tuple[tuple[int, float], ...]
    derivative: float = 0.0
    constant: float = 0.0

    @property
    def kind(self) -> str:
        return "differential" if self.mass else "algebraic"

    def residual(self, f_e: Sequence[float], df_e: float, nu: float = 0.0) -> float:
        """Residual of the stationary form given endpoint values and the derivative of F_c."""
        tot = -2.0 * nu * self.mass * f_e[self.component] + self.constant + self.derivative * df_e
        for k, a in self.values:
            tot += a * f_e[k]
        return float(tot)

    def solve_for_component(self, f_e: Sequence[float], df_e: float = 0.0, nu: float = 0.0) -> float:
        """Value of F_c(e) implied by the other entries (algebraic or derivative-given)."""
        own = -2.0 * nu * self.mass
        rest = self.constant + self.derivative * df_e
        for k, a in self.values:
            if k == self.component:
                own += a
            else:
                rest += a * f_e[k]
        return -rest / own


def boundary_conditions(params: ModelParams, pairing: str = "dominant", previous=None) -> tuple[BoundaryRelation, ...]:
    """The six endpoint closures of the coupled system.

    ``pairing='dominant'`` closes f_PQ with f_PQ(0) = f_QQ(0) and
    f_PQ(1) = f_PP(1); ``pairing='printed'`` uses f_PQ(0) = f_PP(0) and
    f_PQ(1) = f_QQ(1). With ``previous`` (a TripleField) every
    cross-component value is frozen at the previous iterate, giving the
    closures of the iterative scheme.
    """
    d = to_diffusion_scale(params)
    mu1, mu2 = d.mu1, d.mu2
    if pairing not in ("dominant", "printed"):
        raise ValueError("pairing must be 'dominant' or 'printed'")
    pq0 = QQ if pairing == "dominant" else PP
    pq1 = PP if pairing == "dominant" else QQ
    rels = (
        BoundaryRelation(0, PP, 0.0, ((PP, -(1.0 + 2.0 * mu2)), (PQ, 2.0 * mu2)), 0.0, 1.0),
        BoundaryRelation(0, PQ, 0.0, ((PQ, -1.0), (pq0, 1.0))),
        BoundaryRelation(0, QQ, 1.0, ((QQ, -0.5),), 0.5 * mu2, 0.5),
        BoundaryRelation(1, PP, 1.0, ((PP, -0.5),), -0.5 * mu1, 0.5),
        BoundaryRelation(1, PQ, 0.0, ((PQ, -1.0), (pq1, 1.0))),
        BoundaryRelation(1, QQ, 0.0, ((QQ, -(1.0 + 2.0 * mu1)), (PQ, 2.0 * mu1)), 0.0, 1.0),
    )
    if previous is None:
        return rels
    out = []
    for rel in rels:
        vals = previous.endpoint_values(rel.endpoint)
        const = rel.constant + sum(a * vals[k] for k, a in rel.values if k != rel.component)
        own = tuple((k, a) for k, a in rel.values if k == rel.component)
        out.append(BoundaryRelation(rel.endpoint, rel.component, rel.mass, own, rel.derivative, const))
    return tuple(out)


# assembly ------------------------------------------------------------------------------


@dataclass
class DiscreteSystem:
    """Sparse discretisation Mass dy/dt = A y + b on a uniform grid.

    Unknowns are ordered 3 k + c for node k and component c, followed by the
    two singular amplitudes. ``owner`` gives the component each unknown
    belongs to (the amplitudes belong to PQ).
    """

    params: ModelParams
    grid: FrequencyGrid
    pairing: str
    enriched: bool
    A: sp.csr_matrix
    mass: sp.csr_matrix
    b: np.ndarray
    kappa: tuple[float, float]

    @property
    def nodes(self) -> np.ndarray:
        return self.grid.nodes

    @property
    def size(self) -> int:
        return self.A.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.grid.intervals + 1

    @property
    def owner(self) -> np.ndarray:
        own = np.tile(np.arange(3), self.n_nodes)
        return np.concatenate((own, [PQ, PQ]))

    @property
    def algebraic_rows(self) -> np.ndarray:
        return np.flatnonzero(np.diff(self.mass.tocsr().indptr) == 0)

    def ones(self) -> np.ndarray:
        e = np.zeros(self.size)
        e[: 3 * self.n_nodes] = 1.0
        return e

    def operator(self, nu: float) -> sp.csc_matrix:
        return (self.A - 2.0 * nu * self.mass).tocsc()

    def smooth_parts(self, y: np.ndarray) -> np.ndarray:
        return y[: 3 * self.n_nodes].reshape(self.n_nodes, 3).T.copy()

    def amplitudes(self, y: np.ndarray) -> tuple[float, float]:
        if not self.enriched:
            return 0.0, 0.0
        return float(y[-2]), float(y[-1])

    def expand(self, y: np.ndarray, frozen: np.ndarray | None = None) -> np.ndarray:
        """Nodal values (3, n_nodes) of the three components.

        With ``frozen`` (a previous unknown vector), the singular parts of
        PP and QQ use the amplitudes of ``frozen``: in a decoupled stage
        those are the amplitudes the PP and QQ problems were solved with.
        """
        g = self.smooth_parts(y)
        c0, c1 = self.amplitudes(y)
        e0, e1 = (c0, c1) if frozen is None else self.amplitudes(frozen)
        (f0, _, _), (f1, _, _) = singular_functions(self.nodes)
        k0, k1 = self.kappa
        g[PP] += k0 * e0 * f0
        g[PQ] += c0 * f0 + c1 * f1
        g[QQ] += k1 * e1 * f1
        return g

    def field(self, y: np.ndarray, cls=None, **extra):
        cls = IdentityField if cls is None else cls
        c0, c1 = self.amplitudes(y)
        return cls(self.nodes, self.smooth_parts(y), c0, c1, self.kappa, **extra)


def _reaction(d: ModelParams, p):
    q = 1.0 - p
    m_pq = d.mu2 * q / p + d.r * q  # both lineages P, either one leaves
    m_qp = d.mu1 * p / q + d.r * p
    a1 = 0.5 * m_qp  # Q lineage of a PQ pair moves to P
    a2 = 0.5 * m_pq
    coef = {
        PP: {PP: -0.5 / p - m_pq, PQ: m_pq},
        PQ: {PP: a1, PQ: -a1 - a2, QQ: a2},
        QQ: {QQ: -0.5 / q - m_qp, PQ: m_qp},
    }
    src = {PP: 0.5 / p, PQ: np.zeros_like(p), QQ: 0.5 / q}
    return coef, src


def assemble_system(
    params: ModelParams,
    grid: FrequencyGrid | int | None = None,
    pairing: str = "dominant",
    enrich: bool | None = None,
) -> DiscreteSystem:
    """Assemble Mass, A and b for the coupled system on ``grid``."""
    d = to_diffusion_scale(params)
    if grid is None:
        grid = FrequencyGrid()
    elif isinstance(grid, int):
        grid = FrequencyGrid(grid)
    if enrich is None:
        enrich = pairing == "dominant"
    if enrich and pairing != "dominant":
        raise ValueError("the singular enrichment is derived for the dominant pairing only")
    M = grid.intervals
    h = grid.h
    nodes = grid.nodes
    n = 3 * (M + 1) + 2
    C0, C1 = n - 2, n - 1
    rows: list[np.ndarray] = []
    cols: list[np.ndarray] = []
    vals: list[np.ndarray] = []
    mrows: list[np.ndarray] = []
    mcols: list[np.ndarray] = []
    mvals: list[np.ndarray] = []
    b = np.zeros(n)

    def put(r, c, v):
        r, c, v = np.broadcast_arrays(np.asarray(r), np.asarray(c), np.asarray(v, dtype=float))
        rows.append(r.ravel())
        cols.append(c.ravel())
        vals.append(v.ravel())

    def putm(r, c, v):
        r, c, v = np.broadcast_arrays(np.asarray(r), np.asarray(c), np.asarray(v, dtype=float))
        mrows.append(r.ravel())
        mcols.append(c.ravel())
        mvals.append(v.ravel())

    k = np.arange(1, M)
    p = nodes[k]
    q = 1.0 - p
    drift = 0.5 * (eval_selection(d.selection, p) * p * q - d.mu1 * p + d.mu2 * q)
    diff = 0.25 * p * q
    coef, src = _reaction(d, p)
    phis = singular_functions(p)
    k0 = 2.0 * d.mu2 / (1.0 + d.mu2) if enrich else 0.0
    k1 = 2.0 * d.mu1 / (1.0 + d.mu1) if enrich else 0.0
    weights = {PP: ((C0, k0, 0),), PQ: ((C0, 1.0, 0), (C1, 1.0, 1)), QQ: ((C1, k1, 1),)}
    for c in (PP, PQ, QQ):
        row = 3 * k + c
        put(row, 3 * (k - 1) + c, diff / h**2 - drift / (2 * h))
        put(row, 3 * (k + 1) + c, diff / h**2 + drift / (2 * h))
        put(row, 3 * k + c, -2.0 * diff / h**2)
        putm(row, row, 1.0)
        b[row] = src[c]
        for X, cx in coef[c].items():
            put(row, 3 * k + X, cx)
            if not enrich:
                continue
            for col, w, j in weights[X]:
                F, Fd, Fdd = phis[j]
                v = cx * F
                if X == c:
                    v = v + drift * Fd + diff * Fdd
                    putm(row, col, w * F)
                put(row, col, w * v)
    # endpoint closures
    stencil = {0: ((0, -3.0), (1, 4.0), (2, -1.0)), 1: ((M, 3.0), (M - 1, -4.0), (M - 2, 1.0))}
    for rel in boundary_conditions(d, pairing):
        ke = 0 if rel.endpoint == 0 else M
        row = 3 * ke + rel.component
        if rel.mass:
            putm(row, row, rel.mass)
        for X, a in rel.values:
            put(row, 3 * ke + X, a)
        if rel.derivative:
            for kk, w in stencil[rel.endpoint]:
                put(row, 3 * kk + rel.component, rel.derivative * w / (2 * h))
        b[row] = rel.constant
    # amplitude closures: O(1) balance of the PQ equation at each endpoint
    if enrich:
        putm(C0, 3 * 0 + PQ, 1.0)
        put(C0, C0, 0.25 + 0.5 * d.mu2)
        for kk, w in stencil[0]:
            put(C0, 3 * kk + QQ, 0.5 * d.mu2 * w / (2 * h))
        putm(C1, 3 * M + PQ, 1.0)
        put(C1, C1, 0.25 + 0.5 * d.mu1)
        for kk, w in stencil[1]:
            put(C1, 3 * kk + PP, -0.5 * d.mu1 * w / (2 * h))
    else:
        put(C0, C0, 1.0)
        put(C1, C1, 1.0)
    A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    Mm = sp.csr_matrix((np.concatenate(mvals), (np.concatenate(mrows), np.concatenate(mcols))), shape=(n, n))
    A.sum_duplicates()
    Mm.sum_duplicates()
    return DiscreteSystem(d, grid, pairing, enrich, A, Mm, b, (k0, k1))


# fields ------------------------------------------------------------------------------


@dataclass
class TripleField:
    """Three fields on the grid nodes (including 0 and 1), stored as smooth
    parts plus singular amplitudes so they can be evaluated anywhere."""

    nodes: np.ndarray
    smooth: np.ndarray
    c0: float = 0.0
    c1: float = 0.0
    kappa: tuple[float, float] = (0.0, 0.0)
    columns = ("PP", "PQ", "QQ", "bar")

    def __post_init__(self) -> None:
        self.smooth = np.asarray(self.smooth, dtype=float)
        self._splines = None

    def values(self, p=None) -> np.ndarray:
        """Component values (3, len(p)) at ``p`` (the grid nodes by default)."""
        if p is None:
            p = self.nodes
            g = self.smooth
        else:
            p = np.asarray(p, dtype=float)
            if self._splines is None:
                self._splines = CubicSpline(self.nodes, self.smooth, axis=1)
            g = self._splines(p)
        (f0, _, _), (f1, _, _) = singular_functions(p)
        k0, k1 = self.kappa
        out = np.array(g, dtype=float, copy=True)
        out[PP] = out[PP] + k0 * self.c0 * f0
        out[PQ] = out[PQ] + self.c0 * f0 + self.c1 * f1
        out[QQ] = out[QQ] + k1 * self.c1 * f1
        return out

    def averaged(self, p=None) -> np.ndarray:
        """p^2 X_PP + 2pq X_PQ + q^2 X_QQ."""
        pp = self.nodes if p is None else np.asarray(p, dtype=float)
        v = self.values(p)
        qq = 1.0 - pp
        return pp * pp * v[PP] + 2.0 * pp * qq * v[PQ] + qq * qq * v[QQ]

    def endpoint_values(self, endpoint: int) -> np.ndarray:
        v = self.values()
        return v[:, 0] if endpoint == 0 else v[:, -1]

    def endpoint_derivative(self, endpoint: int, component: int) -> float:
        """One-sided second-order derivative of the smooth part (the singular parts have zero slope there)."""
        g = self.smooth[component]
        h = self.nodes[1] - self.nodes[0]
        if endpoint == 0:
            return float((-3 * g[0] + 4 * g[1] - g[2]) / (2 * h))
        return float((3 * g[-1] - 4 * g[-2] + g[-3]) / (2 * h))

    def __getitem__(self, name: str) -> np.ndarray:
        if name in ("bar", "fbar", "Tbar"):
            return self.averaged()
        idx = {"PP": PP, "PQ": PQ, "QQ": QQ}[name.split("_")[-1]]
        return self.values()[idx]

    def to_rows(self):
        v = self.values()
        bar = self.averaged()
        for i, x in enumerate(self.nodes):
            yield (x, v[PP, i], v[PQ, i], v[QQ, i], bar[i])


class IdentityField(TripleField):
    """Identity probabilities f_PP, f_PQ, f_QQ and their random-pair average fbar."""

    columns = ("p", "f_PP", "f_PQ", "f_QQ", "fbar")

    @property
    def f_PP(self) -> np.ndarray:
        return self.values()[PP]

    @property
    def f_PQ(self) -> np.ndarray:
        return self.values()[PQ]

    @property
    def f_QQ(self) -> np.ndarray:
        return self.values()[QQ]

    @property
    def fbar(self) -> np.ndarray:
        return self.averaged()


class TimeField(TripleField):
    """Mean coalescence times, in units of N generations."""

    columns = ("p", "T_PP", "T_PQ", "T_QQ", "Tbar")

    @property
    def T_PP(self) -> np.ndarray:
        return self.values()[PP]

    @property
    def T_PQ(self) -> np.ndarray:
        return self.values()[PQ]

    @property
    def T_QQ(self) -> np.ndarray:
        return self.values()[QQ]

    @property
    def Tbar(self) -> np.ndarray:
        return self.averaged()


# solvers -------------------------------------------------------------------------------


def solve_direct(
    params: ModelParams,
    grid: FrequencyGrid | int | None = None,
    pairing: str = "dominant",
    enrich: bool | None = None,
    system: DiscreteSystem | None = None,
) -> IdentityField:
    """Identity probabilities from one sparse solve of the coupled system.

    A prebuilt ``system`` may be passed to reuse the assembly across values
    of nu (the operator does not depend on nu); nu is taken from ``params``.
    """
    sysm = system if system is not None else assemble_system(params, grid, pairing, enrich)
    sysm.params.require_positive_mutation()
    nu = to_diffusion_scale(params).nu
    y = spl.spsolve(sysm.operator(nu), -sysm.b)
    if not np.all(np.isfinite(y)):
        raise np.linalg.LinAlgError("singular linear system")
    return sysm.field(y)


def mean_coalescence_times(
    params: ModelParams,
    grid: FrequencyGrid | int | None = None,
    system: DiscreteSystem | None = None,
) -> TimeField:
    """Mean coalescence times for each initial background configuration."""
    sysm = system if system is not None else assemble_system(params, grid)
    sysm.params.require_positive_mutation()
    y = spl.spsolve(sysm.A.tocsc(), -(sysm.mass @ sysm.ones()))
    if not np.all(np.isfinite(y)):
        raise np.linalg.LinAlgError("singular linear system")
    return sysm.field(y, TimeField)


@dataclass
class IterativeResult:
    field: IdentityField
    iterations: int
    changes: list[float]
    min_increments: list[float]
    iterates: list[np.ndarray] | None = None

    @property
    def monotone(self) -> bool:
        return min(self.min_increments, default=0.0) >= 0.0


def solve_iterative(
    params: ModelParams,
    grid: FrequencyGrid | int | None = None,
    n_max: int = 100_000,
    tol: float = 1e-10,
    pairing: str = "dominant",
    enrich: bool | None = None,
    keep_iterates: bool = False,
) -> IterativeResult:
    """Monotone iteration from f = 0.

    Each stage solves the three single-component problems with every
    cross-component term (interior couplings and endpoint closures) frozen at
    the previous iterate. Iteration stops when the sup-norm change of the
    nodal values falls below ``tol``.
    """
    sysm = assemble_system(params, grid, pairing, enrich)
    d = sysm.params
    d.require_positive_mutation()
    Afull = sysm.operator(d.nu).tocoo()
    owner = sysm.owner
    same = owner[Afull.row] == owner[Afull.col]
    D = sp.csc_matrix((Afull.data[same], (Afull.row[same], Afull.col[same])), shape=Afull.shape)
    C = sp.csr_matrix((Afull.data[~same], (Afull.row[~same], Afull.col[~same])), shape=Afull.shape)
    lu = spl.splu(D)
    y = np.zeros(sysm.size)
    f_prev = sysm.expand(y)
    changes: list[float] = []
    incs: list[float] = []
    iterates = [f_prev] if keep_iterates else None
    for it in range(1, n_max + 1):
        y_new = lu.solve(-sysm.b - C @ y)
        f = sysm.expand(y_new, frozen=y)
        y = y_new
        delta = f - f_prev
        changes.append(float(np.max(np.abs(delta))))
        incs.append(float(np.min(delta)))
        if keep_iterates:
            iterates.append(f)
        f_prev = f
        if changes[-1] < tol:
            return IterativeResult(sysm.field(y), it, changes, incs, iterates)
    raise RuntimeError(f"iteration did not converge in {n_max} steps")


@dataclass
class CdfField:
    """Distribution functions F_c(t, p) of the coalescence time on stored times.

    ``values`` has shape (len(times), 3, n_nodes). ``laplace`` maps each
    requested nu to the accumulated integral of exp(-2 nu t) dF over the
    whole run, taken on every time step.
    """

    nodes: np.ndarray
    times: np.ndarray
    values: np.ndarray
    laplace: dict[float, np.ndarray] = field(default_factory=dict)

    def at(self, t: float) -> np.ndarray:
        k = int(np.argmin(np.abs(self.times - t)))
        return self.values[k]

    def stieltjes(self, nu: float) -> np.ndarray:
        """Integral of exp(-2 nu t) dF over the stored frames (midpoint weights)."""
        mid = 0.5 * (self.times[1:] + self.times[:-1])
        dF = np.diff(self.values, axis=0)
        return np.tensordot(np.exp(-2.0 * nu * mid), dF, axes=(0, 0))


def solve_time_dependent(
    params: ModelParams,
    grid: FrequencyGrid | int | None = None,
    dt: float = 0.01,
    horizon: float = 200.0,
    laplace_nu: Sequence[float] = (),
    store_every: int = 10,
    startup_steps: int = 4,
) -> CdfField:
    """Integrate Mass dF/dt = A F + b from F = 0.

    Implicit trapezoidal steps with the algebraic closures imposed exactly at
    each new time level; the first ``startup_steps`` steps are backward Euler
    at half the step size to damp the start-up discontinuity.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    sysm = assemble_system(params, grid)
    A = sysm.A.tocsr()
    Mm = sysm.mass.tocsr()
    alg = np.zeros(sysm.size, dtype=bool)
    alg[sysm.algebraic_rows] = True
    Dalg = sp.diags(alg.astype(float))
    Ddif = sp.diags((~alg).astype(float))

    def factor(theta, h):
        lhs = Ddif @ (Mm - theta * h * A) - Dalg @ A
        return spl.splu(lhs.tocsc())

    def step(lu, theta, h, y):
        rhs = Ddif @ (Mm @ y + (1.0 - theta) * h * (A @ y) + h * sysm.b) + Dalg @ sysm.b
        return lu.solve(rhs)

    n_steps = int(round(horizon / dt))
    y = np.zeros(sysm.size)
    F = sysm.expand(y)
    t = 0.0
    times = [0.0]
    frames = [F]
    lap = {float(nu): np.zeros_like(F) for nu in laplace_nu}
    be = factor(1.0, 0.5 * dt)
    cn = factor(0.5, dt)

    def record(F_new, F_old, t_old, t_new):
        for nu, acc in lap.items():
            acc += math.exp(-nu * (t_old + t_new)) * (F_new - F_old)

    for _ in range(2 * startup_steps):
        y = step(be, 1.0, 0.5 * dt, y)
        F_new = sysm.expand(y)
        record(F_new, F, t, t + 0.5 * dt)
        F, t = F_new, t + 0.5 * dt
        times.append(t)
        frames.append(F)
    for n in range(startup_steps, n_steps):
        y = step(cn, 0.5, dt, y)
        F_new = sysm.expand(y)
        record(F_new, F, t, t + dt)
        F, t = F_new, (n + 1) * dt
        if (n + 1) % store_every == 0 or n + 1 == n_steps:
            times.append(t)
            frames.append(F)
    return CdfField(sysm.nodes, np.array(times), np.array(frames), lap)


# averages and baselines ----------------------------------------------------------------


def average_over_stationarity(values, density: StationaryDensity | ModelParams, nodes=None) -> float:
    """Integral of a frequency function against the stationary density.

    ``values`` may be a TripleField (its random-pair average is used), a
    vectorised callable, or an array of values on ``nodes`` (interpolated by a
    cubic spline).
    """
    dens = density if isinstance(density, StationaryDensity) else stationary_density(density)
    if isinstance(values, TripleField):
        func: Callable = values.averaged
    elif callable(values):
        func = values
    else:
        vals = np.asarray(values, dtype=float)
        if nodes is None or len(nodes) != len(vals):
            raise ValueError("incompatible grids: array values need matching nodes")
        func = CubicSpline(np.asarray(nodes, dtype=float), vals)
    return dens.expectation(func)


@dataclass(frozen=True)
class Baseline:
    """Structured-coalescent values with the frequency frozen at p0."""

    p0: float
    f_PP: float
    f_PQ: float
    f_QQ: float
    fbar: float
    T_PP: float
    T_PQ: float
    T_QQ: float
    Tbar: float


def constant_p_baseline(p0: float, params: ModelParams) -> Baseline:
    """Drop the frequency derivatives at p = p0 and solve the two 3x3 systems."""
    if not 0.0 < p0 < 1.0:
        raise ValueError("p0 must lie in (0, 1)")
    d = to_diffusion_scale(params)
    coef, src = _reaction(d, np.array([p0]))
    R = np.array([[float(coef[c].get(X, np.zeros(1))[0]) for X in (PP, PQ, QQ)] for c in (PP, PQ, QQ)])
    s = np.array([float(src[c][0]) for c in (PP, PQ, QQ)])
    try:
        f = np.linalg.solve(R - 2.0 * d.nu * np.eye(3), -s)
        T = np.linalg.solve(R, -np.ones(3))
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("singular 3x3 baseline system") from exc
    q0 = 1.0 - p0
    w = np.array([p0 * p0, 2.0 * p0 * q0, q0 * q0])
    return Baseline(float(p0), *map(float, f), float(w @ f), *map(float, T), float(w @ T))


@dataclass(frozen=True)
class SweepPoint:
    s0: float
    avg_fbar: float
    Tbar_scaled: float


def selection_sweep(params: ModelParams, s0_values: Sequence[float], grid: FrequencyGrid | int | None = None) -> list[SweepPoint]:
    """Stationary averages of fbar and of the mean time (in units of 2N generations) over s0."""
    d = to_diffusion_scale(params)
    out = []
    for s0 in s0_values:
        sel = d.selection
        pk = sel.__class__(sel.kind if sel.kind != "tabulated" else "balancing", float(s0), sel.p0)
        dd = d.with_(selection=pk)
        sysm = assemble_system(dd, grid)
        dens = stationary_density(dd)
        fbar = average_over_stationarity(solve_direct(dd, system=sysm), dens)
        Tbar = average_over_stationarity(mean_coalescence_times(dd, system=sysm), dens)
        out.append(SweepPoint(float(s0), fbar, Tbar / 2.0))
    return out
