"""Finite-N Moran model: jump-chain probabilities, the backward generator of
(p, n1, n2) for a sample of two, and an exact Gillespie simulator."""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spl

from .core import ModelParams, SampleState, eval_selection, moran_event_rates

__all__ = [
    "MoranJumpProbs",
    "RateTable",
    "GenealogyOutcome",
    "MoranTables",
    "moran_tables",
    "jump_probs",
    "backward_rates",
    "moran_stationary",
    "simulate_genealogy",
    "simulate_replicates",
    "exact_identity",
    "exact_mean_time",
    "label_probabilities",
    "TERM_SHIFTS",
]

# (di, dn1, dn2) of the ten generator terms, in order
TERM_SHIFTS = np.array(
    [
        (-1, -1, 0),
        (-1, -1, 1),
        (-1, 0, 0),
        (1, 0, -1),
        (1, 1, -1),
        (1, 0, 0),
        (0, -1, 0),
        (0, 0, -1),
        (0, -1, 1),
        (0, 1, -1),
    ],
    dtype=np.int64,
)


@dataclass(frozen=True)
class MoranJumpProbs:
    stay: float
    down: float
    up: float


@dataclass(frozen=True)
class MoranTables:
    """Per-lattice-state quantities shared by the rate kernel.

    Arrays are indexed by the copy number i = 0..2N; ``S`` is s/(2+s),
    ``down``/``up`` the jump-chain probabilities, ``c_minus``/``c_plus`` the
    reversal ratios (zero where the move cannot happen).
    """

    N: int
    mu1: float
    mu2: float
    r: float
    nu: float
    S: np.ndarray
    down: np.ndarray
    up: np.ndarray
    c_minus: np.ndarray
    c_plus: np.ndarray
    psi: np.ndarray


def _down_up(x, S, mu1, mu2):
    q = 1.0 - x
    down = x * (x * mu1 + q * (1.0 - S) * (1.0 - mu2))
    up = q * (q * mu2 + x * (1.0 + S) * (1.0 - mu1))
    return down, up


def _check_fitness(s) -> None:
    # S = s / (2 + s) is a probability bias and must stay in [-1, 1]
    if np.any(np.asarray(s) < -1.0):
        raise ValueError("per-event selection coefficient must be at least -1")


def moran_tables(params: ModelParams, N: int | None = None) -> MoranTables:
    mp = moran_event_rates(params, N)
    n2 = 2 * mp.N
    x = np.arange(n2 + 1) / n2
    s = np.asarray(eval_selection(mp.selection, x), dtype=float)
    _check_fitness(s)
    S = s / (2.0 + s)
    down, up = _down_up(x, S, mp.mu1, mp.mu2)
    down[0] = 0.0
    up[n2] = 0.0
    c_minus = np.zeros(n2 + 1)
    c_plus = np.zeros(n2 + 1)
    # ratios are short-circuited where the numerator move is impossible
    for i in range(1, n2 + 1):
        if down[i] > 0.0:
            if up[i - 1] <= 0.0:
                raise ValueError("zero transition probability in the reversal ratio")
            c_minus[i] = down[i] / up[i - 1]
    for i in range(n2):
        if up[i] > 0.0:
            if down[i + 1] <= 0.0:
                raise ValueError("zero transition probability in the reversal ratio")
            c_plus[i] = up[i] / down[i + 1]
    psi = _stationary_from_tables(up, down) if (mp.mu1 > 0 and mp.mu2 > 0) else np.full(n2 + 1, np.nan)
    return MoranTables(mp.N, mp.mu1, mp.mu2, mp.r, mp.nu, S, down, up, c_minus, c_plus, psi)


def _lattice_index(p: float, N: int) -> int:
    i = p * 2 * N
    k = int(round(i))
    if abs(i - k) > 1e-9 or not 0 <= k <= 2 * N:
        raise ValueError(f"frequency {p} is not on the 1/(2N) lattice")
    return k


def jump_probs(p: float, params: ModelParams, N: int | None = None) -> MoranJumpProbs:
    """Probabilities that one Moran event moves p down, up, or leaves it."""
    mp = moran_event_rates(params, N)
    _lattice_index(p, mp.N)
    s = float(eval_selection(mp.selection, p))
    _check_fitness(s)
    S = s / (2.0 + s)
    q = 1.0 - p
    stay = p * p * (1 - mp.mu1) + q * q * (1 - mp.mu2) + 2 * p * q * (
        0.5 * (1 + S) * mp.mu1 + 0.5 * (1 - S) * mp.mu2
    )
    down, up = _down_up(p, S, mp.mu1, mp.mu2)
    return MoranJumpProbs(float(stay), float(down), float(up))


@numba.njit(cache=True)
def _ratio(a, b):
    if a <= 0.0:
        return 0.0
    return a / b


@numba.njit(cache=True)
def _rate_terms(i, n1, n2, N, mu1, mu2, r, S, down, up, c_minus, c_plus, out):
    """Fill ``out`` with the ten backward rates of state (i, n1, n2).

    Rates are per unit of Moran time (N events per unit).
    """
    M = 2 * N
    Nf = float(N)
    Mf = float(M)
    p = i / Mf
    q = 1.0 - p
    pq4 = Mf * Mf * p * q
    c11 = _ratio(n1 * (n1 - 1) / 2.0, i * (i - 1) / 2.0)
    c22 = _ratio(n2 * (n2 - 1) / 2.0, (M - i) * (M - i - 1) / 2.0)
    x12 = _ratio(float(n1 * n2), pq4)
    for k in range(10):
        out[k] = 0.0
    if i > 0:
        pm = (i - 1) / Mf
        qm = 1.0 - pm
        Sm = S[i - 1]
        cm = c_minus[i]
        out[0] = Nf * (1.0 - r) * cm * (c11 * pm * qm * (1.0 + Sm) * (1.0 - mu1) + x12 * qm * q * mu2)
        # the r * n1 * n2 share of the mutation-birth event is a migration
        mig = _ratio(n1 * (M - i - n2) + r * n1 * n2, pq4)
        out[1] = Nf * cm * (
            mig * qm * q * mu2
            + r * _ratio(float(n1), float(i)) * pm * qm * (1.0 + Sm) * (1.0 - mu1)
            + _ratio(float(n1), float(i)) * qm * mu2 / Mf
        )
        out[2] = Nf * down[i] - out[0] - out[1]
    if i < M:
        pp = (i + 1) / Mf
        qp = 1.0 - pp
        Sp = S[i + 1]
        cp = c_plus[i]
        out[3] = Nf * (1.0 - r) * cp * (c22 * pp * qp * (1.0 - Sp) * (1.0 - mu2) + x12 * pp * p * mu1)
        mig = _ratio(n2 * (i - n1) + r * n1 * n2, pq4)
        out[4] = Nf * cp * (
            mig * pp * p * mu1
            + r * _ratio(float(n2), float(M - i)) * pp * qp * (1.0 - Sp) * (1.0 - mu2)
            + _ratio(float(n2), float(M - i)) * pp * mu1 / Mf
        )
        out[5] = Nf * up[i] - out[3] - out[4]
    s0 = S[i]
    out[6] = Nf * (1.0 - r) * (c11 * p * (i - 1) / Mf * (1.0 - mu1) + x12 * p * q * (1.0 - s0) * mu2)
    out[7] = Nf * (1.0 - r) * (c22 * q * (M - i - 1) / Mf * (1.0 - mu2) + x12 * p * q * (1.0 + s0) * mu1)
    out[8] = Nf * (1.0 - r) * _ratio(float(n1 * (M - i - n2)), pq4) * p * q * (1.0 - s0) * mu2
    out[9] = Nf * (1.0 - r) * _ratio(float(n2 * (i - n1)), pq4) * p * q * (1.0 + s0) * mu1
    # targets outside the feasible set only receive roundoff; drop and report it
    lost = 0.0
    for k in range(10):
        ti = i
        if k < 3:
            ti = i - 1
        elif k < 6:
            ti = i + 1
        a = n1
        b = n2
        if k == 0 or k == 6:
            a = n1 - 1
        elif k == 3 or k == 7:
            b = n2 - 1
        elif k == 1 or k == 8:
            a = n1 - 1
            b = n2 + 1
        elif k == 4 or k == 9:
            a = n1 + 1
            b = n2 - 1
        if ti < 0 or ti > M or a < 0 or b < 0 or a > ti or b > M - ti:
            lost += abs(out[k])
            out[k] = 0.0
    return lost


@dataclass(frozen=True)
class RateTable:
    """Nonzero generator entries of one state: (target, rate, term index)."""

    state: tuple[int, int, int]
    entries: tuple[tuple[tuple[int, int, int], float, int], ...]

    @property
    def total(self) -> float:
        return float(sum(r for _, r, _ in self.entries))

    def marginal_p_rates(self) -> tuple[float, float]:
        """Summed rates of moves to p - 1/(2N) and p + 1/(2N)."""
        i = self.state[0]
        down = sum(r for t, r, _ in self.entries if t[0] == i - 1)
        up = sum(r for t, r, _ in self.entries if t[0] == i + 1)
        return float(down), float(up)


def _raw_rates(i, n1, n2, tab: MoranTables) -> np.ndarray:
    out = np.zeros(10)
    lost = _rate_terms(i, n1, n2, tab.N, tab.mu1, tab.mu2, tab.r, tab.S, tab.down, tab.up, tab.c_minus, tab.c_plus, out)
    return out, lost


def backward_rates(p: float, state, params: ModelParams, N: int | None = None, tables: MoranTables | None = None) -> RateTable:
    """Backward-in-time jump rates out of (p, n1, n2), per unit of Moran time.

    ``state`` may hold zero lineages (``(0, 0)``), in which case only the
    frequency moves remain.
    """
    tab = tables if tables is not None else moran_tables(params, N)
    n1, n2 = (state.n1, state.n2) if isinstance(state, SampleState) else state
    i = _lattice_index(p, tab.N)
    M = 2 * tab.N
    if n1 < 0 or n2 < 0 or n1 > i or n2 > M - i:
        raise ValueError("infeasible sample state for this frequency")
    raw, lost = _raw_rates(i, n1, n2, tab)
    scale = tab.N * max(1.0, float(np.max(np.abs(raw))))
    if np.min(raw) < -1e-12 * scale:
        raise ArithmeticError(f"negative rate {np.min(raw)} at state {(i, n1, n2)}")
    if lost > 1e-12 * scale:
        raise ArithmeticError(f"rate {lost} assigned to an infeasible target from {(i, n1, n2)}")
    entries = []
    for k in range(10):
        rate = max(float(raw[k]), 0.0)
        if rate > 0.0:
            di, d1, d2 = TERM_SHIFTS[k]
            entries.append(((int(i + di), int(n1 + d1), int(n2 + d2)), rate, k))
    return RateTable((i, n1, n2), tuple(entries))


def _stationary_from_tables(up, down):
    n = len(up)
    logpsi = np.zeros(n)
    for i in range(n - 1):
        if up[i] <= 0.0 or down[i + 1] <= 0.0:
            raise ValueError("zero transition probability in the ratio chain")
        logpsi[i + 1] = logpsi[i] + np.log(up[i]) - np.log(down[i + 1])
    logpsi -= logpsi.max()
    psi = np.exp(logpsi)
    return psi / psi.sum()


def moran_stationary(params: ModelParams, N: int | None = None) -> np.ndarray:
    """Stationary law of the copy number, from detailed balance."""
    mp = moran_event_rates(params, N)
    mp.require_positive_mutation()
    return moran_tables(mp).psi


def label_probabilities(i: int, N: int) -> np.ndarray:
    """Probabilities of (2,0), (1,1), (0,2) for two distinct genes drawn at copy number i."""
    M = 2 * N
    tot = M * (M - 1) / 2.0
    return np.array([i * (i - 1) / 2.0, i * (M - i), (M - i) * (M - i - 1) / 2.0]) / tot


@dataclass(frozen=True)
class GenealogyOutcome:
    """One replicate: coalescence time (units of N generations), number of
    jumps, terminal background of the ancestor, and the initial condition."""

    coalescence_time: float
    jumps: int
    terminal_background: str
    p0: float
    initial: SampleState


# simulation kernels -----------------------------------------------------------


@numba.njit(cache=True)
def _draw_index(gen, cdf, lo, hi):
    """Index k in [lo, hi) with probability proportional to increments of ``cdf``."""
    a = cdf[lo - 1] if lo > 0 else 0.0
    b = cdf[hi - 1]
    u = a + gen.random() * (b - a)
    k = np.searchsorted(cdf, u, side="right")
    if k < lo:
        k = lo
    if k >= hi:
        k = hi - 1
    return k


@numba.njit(cache=True)
def _moran_replicate(gen, i, n1, n2, N, mu1, mu2, r, S, down, up, c_minus, c_plus, max_events):
    """Run one genealogy from (i, n1, n2); returns (moran_time, jumps, background, status)."""
    M = 2 * N
    rates = np.zeros(10)
    t = 0.0
    jumps = 0
    while n1 + n2 > 1:
        _rate_terms(i, n1, n2, N, mu1, mu2, r, S, down, up, c_minus, c_plus, rates)
        tot = 0.0
        for k in range(10):
            if rates[k] < 0.0:
                rates[k] = 0.0
            tot += rates[k]
        t += gen.standard_exponential() / tot
        u = gen.random() * tot
        k = 0
        acc = rates[0]
        while acc <= u and k < 9:
            k += 1
            acc += rates[k]
        while rates[k] == 0.0 and k > 0:
            k -= 1
        if k == 0 or k == 1 or k == 2:
            i -= 1
        elif k == 3 or k == 4 or k == 5:
            i += 1
        if k == 0 or k == 6:
            n1 -= 1
        elif k == 3 or k == 7:
            n2 -= 1
        elif k == 1 or k == 8:
            n1 -= 1
            n2 += 1
        elif k == 4 or k == 9:
            n1 += 1
            n2 -= 1
        jumps += 1
        if jumps >= max_events:
            return t, jumps, -1, 1
    return t, jumps, 0 if n1 == 1 else 1, 0


@numba.njit(cache=True)
def _moran_start(gen, psi_cdf, lo, hi, n1, n2, N):
    """Draw a copy number from the stationary law restricted to [lo, hi) and feasible for (n1, n2).

    With n1 < 0 the labels are drawn as well (two distinct genes).
    """
    M = 2 * N
    random_labels = n1 < 0
    a = lo
    b = hi
    if not random_labels:
        if a < n1:
            a = n1
        if b > M - n2 + 1:
            b = M - n2 + 1
    i = _draw_index(gen, psi_cdf, a, b)
    if random_labels:
        tot = M * (M - 1) / 2.0
        w0 = i * (i - 1) / 2.0 / tot
        w1 = i * (M - i) / tot
        u = gen.random()
        if u < w0:
            n1, n2 = 2, 0
        elif u < w0 + w1:
            n1, n2 = 1, 1
        else:
            n1, n2 = 0, 2
    return i, n1, n2


def simulate_genealogy(
    params: ModelParams,
    initial: SampleState | None,
    rng: np.random.Generator,
    N: int | None = None,
    p0_range: tuple[float, float] | None = None,
    max_events: int = 10**9,
    tables: MoranTables | None = None,
) -> GenealogyOutcome:
    """Simulate one sample genealogy backwards from a stationary start.

    p0 is drawn from the Moran stationary law, conditioned on feasibility of
    ``initial`` and on ``p0_range`` (half-open) when given. ``initial=None``
    draws the background labels of two distinct genes at random. Times are
    returned in units of N generations.
    """
    tab = tables if tables is not None else moran_tables(params, N)
    if not (tab.mu1 > 0 and tab.mu2 > 0):
        raise ValueError("mu1 and mu2 must both be strictly positive")
    M = 2 * tab.N
    lo, hi = _index_range(p0_range, M)
    cdf = np.cumsum(tab.psi)
    n1 = -1 if initial is None else initial.n1
    n2 = -1 if initial is None else initial.n2
    i, a, b = _moran_start(rng, cdf, lo, hi, n1, n2, tab.N)
    if a > i or b > M - i:
        raise ValueError("initial state is infeasible on the requested frequency range")
    t, jumps, bg, status = _moran_replicate(
        rng, i, a, b, tab.N, tab.mu1, tab.mu2, tab.r, tab.S, tab.down, tab.up, tab.c_minus, tab.c_plus, max_events
    )
    if status != 0:
        raise RuntimeError(f"event cap of {max_events} reached")
    return GenealogyOutcome(t / tab.N, int(jumps), "P" if bg == 0 else "Q", i / M, SampleState(a, b))


def _index_range(p0_range, M):
    if p0_range is None:
        return 0, M + 1
    plo, phi = p0_range
    lo = int(np.ceil(plo * M - 1e-9))
    hi = int(np.ceil(phi * M - 1e-9))
    if phi >= 1.0:
        hi = M + 1
    lo = max(lo, 0)
    if hi <= lo:
        raise ValueError("frequency range contains no lattice point")
    return lo, hi


@numba.njit(cache=True)
def _moran_batch(gens, psi_cdf, lo, hi, n1, n2, N, mu1, mu2, r, S, down, up, c_minus, c_plus, max_events, out_t, out_j, out_bg, out_i, out_n1, out_n2):
    for k in range(len(gens)):
        gen = gens[k]
        i, a, b = _moran_start(gen, psi_cdf, lo, hi, n1, n2, N)
        out_i[k] = i
        out_n1[k] = a
        out_n2[k] = b
        if a > i or b > 2 * N - i:
            return k, 2
        t, jumps, bg, status = _moran_replicate(gen, i, a, b, N, mu1, mu2, r, S, down, up, c_minus, c_plus, max_events)
        if status != 0:
            return k, 1
        out_t[k] = t / N
        out_j[k] = jumps
        out_bg[k] = bg
    return len(gens), 0


def simulate_replicates(
    params: ModelParams,
    initial: SampleState | None,
    generators,
    N: int | None = None,
    p0_range: tuple[float, float] | None = None,
    max_events: int = 10**9,
):
    """Vectorised driver over pre-assigned per-replicate generators.

    Returns arrays (T, jumps, background, p0, n1_0, n2_0).
    """
    tab = moran_tables(params, N)
    if not (tab.mu1 > 0 and tab.mu2 > 0):
        raise ValueError("mu1 and mu2 must both be strictly positive")
    M = 2 * tab.N
    lo, hi = _index_range(p0_range, M)
    cdf = np.cumsum(tab.psi)
    n = len(generators)
    out_t = np.zeros(n)
    out_j = np.zeros(n, dtype=np.int64)
    out_bg = np.zeros(n, dtype=np.int64)
    out_i = np.zeros(n, dtype=np.int64)
    out_n1 = np.zeros(n, dtype=np.int64)
    out_n2 = np.zeros(n, dtype=np.int64)
    n1 = -1 if initial is None else initial.n1
    n2 = -1 if initial is None else initial.n2
    gens = numba.typed.List(generators)
    done, status = _moran_batch(
        gens, cdf, lo, hi, n1, n2, tab.N, tab.mu1, tab.mu2, tab.r, tab.S, tab.down, tab.up,
        tab.c_minus, tab.c_plus, max_events, out_t, out_j, out_bg, out_i, out_n1, out_n2,
    )
    if status == 1:
        raise RuntimeError(f"event cap of {max_events} reached in replicate {done}")
    if status == 2:
        raise ValueError("initial state is infeasible on the requested frequency range")
    return out_t, out_j, out_bg, out_i / M, out_n1, out_n2


# exact generator solves (finite-N oracle) -----------------------------------------


def _pair_generator(tab: MoranTables):
    """Sparse generator restricted to two-lineage states plus absorption rates."""
    M = 2 * tab.N
    index = {}
    states = []
    for i in range(M + 1):
        for n1, n2 in ((2, 0), (1, 1), (0, 2)):
            if n1 <= i and n2 <= M - i:
                index[(i, n1, n2)] = len(states)
                states.append((i, n1, n2))
    rows, cols, vals = [], [], []
    absorb = np.zeros(len(states))
    for k, (i, n1, n2) in enumerate(states):
        raw = np.maximum(_raw_rates(i, n1, n2, tab)[0], 0.0) * tab.N  # diffusion time
        for term in range(10):
            rate = raw[term]
            if rate <= 0.0:
                continue
            di, d1, d2 = TERM_SHIFTS[term]
            tgt = (i + di, n1 + d1, n2 + d2)
            rows.append(k)
            cols.append(k)
            vals.append(-rate)
            if tgt[1] + tgt[2] == 1:
                absorb[k] += rate
            else:
                rows.append(k)
                cols.append(index[tgt])
                vals.append(rate)
    Q = sp.csr_matrix((vals, (rows, cols)), shape=(len(states), len(states)))
    return states, Q, absorb


def exact_identity(params: ModelParams, N: int | None = None, nu: float | None = None):
    """Laplace transform E[exp(-2 nu T)] of the finite-N Moran genealogy.

    Solves the backward equations on all two-lineage states; returns a dict
    mapping (i, n1, n2) to the identity probability. ``nu`` is in diffusion
    units (defaults to the diffusion-scale value implied by ``params``).
    """
    tab = moran_tables(params, N)
    nu_d = tab.nu * tab.N if nu is None else nu
    states, Q, absorb = _pair_generator(tab)
    A = (Q - 2.0 * nu_d * sp.identity(len(states))).tocsc()
    f = spl.spsolve(A, -absorb)
    return dict(zip(states, f))


def exact_mean_time(params: ModelParams, N: int | None = None):
    """Mean coalescence time (units of N generations) for every two-lineage state."""
    tab = moran_tables(params, N)
    states, Q, _ = _pair_generator(tab)
    T = spl.spsolve(Q.tocsc(), -np.ones(len(states)))
    return dict(zip(states, T))


def stationary_pair_average(values: dict, params: ModelParams, N: int | None = None) -> float:
    """Average of a state function over stationary p0 and randomly labelled distinct genes."""
    tab = moran_tables(params, N)
    M = 2 * tab.N
    tot = 0.0
    for i in range(M + 1):
        w = label_probabilities(i, tab.N)
        for wk, lab in zip(w, ((2, 0), (1, 1), (0, 2))):
            if wk > 0:
                tot += tab.psi[i] * wk * values[(i,) + lab]
    return float(tot)
