"""Monte Carlo for the genealogy of two genes in a fluctuating background.

Three engines generate coalescence times in diffusion units:

* ``MoranExact(N)``: the exact finite-N Moran chain (delegates to :mod:`moran`).
* ``Euler(dt)``: fixed-step frequency path with at most one lineage event
  per step, decided by thinning with rates frozen at the start of the step;
  biased at O(dt). The default frequency step is exact for the square-root
  diffusion near the endpoints; plain Euler-Maruyama is kept as an option but
  does not converge when an endpoint is accessible (2 mu < 1), since its
  reflecting collar removes stationary mass of order dt^(2 mu).
* ``Frozen(p0)``: frequency held at p0, i.e. the classical two-deme
  structured coalescent used as a baseline.

Replicate k always draws from ``replicate_stream(seed, k)``, so results do
not depend on chunking or on the number of worker processes.
"""
from __future__ import annotations

import math
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numba
import numpy as np

from . import moran
from .core import ModelParams, SampleState, replicate_stream, to_diffusion_scale
from .diffusion import _reflect, _sel_eval, _split_step, sample_stationary, selection_arrays, stationary_density

__all__ = [
    "CoalescentRates",
    "rates",
    "MoranExact",
    "Euler",
    "Frozen",
    "parse_engine",
    "ReplicateSet",
    "run_replicates",
    "simulate_coalescence",
    "McEstimate",
    "identity_estimate",
    "estimate_identity",
    "estimate_mean_time",
    "EmpiricalCdf",
    "empirical_cdf_of_T",
    "p0_bins",
]


@dataclass(frozen=True)
class CoalescentRates:
    """Jump rates of the limiting genealogy at frequency p.

    Coalescence rates are totals for the state; migration rates are per
    lineage (multiply by the number of lineages on the source background).
    """

    coal_PP: float
    coal_QQ: float
    migrate_QtoP: float
    migrate_PtoQ: float

    def total(self, state: SampleState) -> float:
        tot = self.coal_PP + self.coal_QQ
        if state.n1:
            tot += state.n1 * self.migrate_PtoQ
        if state.n2:
            tot += state.n2 * self.migrate_QtoP
        return tot


def rates(p: float, state: SampleState, params: ModelParams) -> CoalescentRates:
    """Limiting backward rates for ``state`` at frequency ``p``.

    A lineage moves Q -> P when forward mutation P -> Q (rate mu1) or
    recombination placed it there, hence mu1 drives Q -> P.
    """
    d = to_diffusion_scale(params)
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    if (p == 0.0 and state.n1 > 0) or (p == 1.0 and state.n2 > 0):
        raise ValueError("lineage stranded on a vanishing background")
    q = 1.0 - p
    n1, n2 = state.n1, state.n2
    coal_PP = n1 * (n1 - 1) / 2.0 / (2.0 * p) if n1 >= 2 else 0.0
    coal_QQ = n2 * (n2 - 1) / 2.0 / (2.0 * q) if n2 >= 2 else 0.0
    qp = 0.5 * d.mu1 * p / q + 0.5 * d.r * p if q > 0 else math.inf
    pq = 0.5 * d.mu2 * q / p + 0.5 * d.r * q if p > 0 else math.inf
    return CoalescentRates(coal_PP, coal_QQ, qp, pq)


# engines -------------------------------------------------------------------------


@dataclass(frozen=True)
class MoranExact:
    N: int

    def __post_init__(self) -> None:
        if self.N < 2:
            raise ValueError("N must be at least 2")

    def __str__(self) -> str:
        return f"moran_exact({self.N})"


@dataclass(frozen=True)
class Euler:
    """Fixed-step engine. ``scheme='split'`` (default) uses the boundary-exact
    frequency step; ``scheme='em'`` is plain Euler-Maruyama with a reflecting
    collar of width dt."""

    dt: float
    scheme: str = "split"
    max_time: float = 1.0e5

    def __post_init__(self) -> None:
        if not self.dt > 0.0:
            raise ValueError("dt must be positive")
        if self.scheme not in ("split", "em"):
            raise ValueError("scheme must be 'split' or 'em'")

    def __str__(self) -> str:
        if self.scheme == "em":
            return f"euler({self.dt!r},em)"
        return f"euler({self.dt!r})"


@dataclass(frozen=True)
class Frozen:
    p0: float

    def __post_init__(self) -> None:
        if not 0.0 < self.p0 < 1.0:
            raise ValueError("p0 must lie in (0, 1)")

    def __str__(self) -> str:
        return f"frozen({self.p0!r})"


Engine = MoranExact | Euler | Frozen


def parse_engine(text: str) -> Engine:
    """Parse ``moran_exact(N)``, ``euler(dt)`` or ``frozen(p0)``."""
    m = re.fullmatch(r"\s*(moran_exact|moran|euler|frozen)\s*\(\s*([^),]+)\s*(?:,\s*(\w+)\s*)?\)\s*", text)
    if not m:
        raise ValueError(f"unknown engine {text!r}")
    kind, arg, opt = m.groups()
    if kind in ("moran_exact", "moran"):
        return MoranExact(int(float(arg)))
    if kind == "euler":
        return Euler(float(arg), opt or "split")
    return Frozen(float(arg))


# compiled kernels ------------------------------------------------------------------


@numba.njit(cache=True)
def _labels(gen, p):
    u = gen.random()
    if u < p * p:
        return 2, 0
    if u < p * p + 2.0 * p * (1.0 - p):
        return 1, 1
    return 0, 2


@numba.njit(cache=True)
def _lineage_rates(p, q, n1, n2, mu1, mu2, r, out):
    """Event rates (coal PP, coal QQ, P -> Q, Q -> P); q is passed separately
    to keep full precision near p = 1."""
    out[0] = n1 * (n1 - 1) / 2.0 / (2.0 * p) if n1 >= 2 else 0.0
    out[1] = n2 * (n2 - 1) / 2.0 / (2.0 * q) if n2 >= 2 else 0.0
    out[2] = n1 * (0.5 * mu2 * q / p + 0.5 * r * q) if n1 > 0 else 0.0
    out[3] = n2 * (0.5 * mu1 * p / q + 0.5 * r * p) if n2 > 0 else 0.0
    return out[0] + out[1] + out[2] + out[3]


@numba.njit(cache=True)
def _pick(gen, w, tot):
    u = gen.random() * tot
    k = 0
    acc = w[0]
    while acc <= u and k < 3:
        k += 1
        acc += w[k]
    while w[k] == 0.0 and k > 0:
        k -= 1
    return k


@numba.njit(cache=True)
def _apply(k, n1, n2):
    if k == 0:
        return 1, 0
    if k == 1:
        return 0, 1
    if k == 2:
        return n1 - 1, n2 + 1
    return n1 + 1, n2 - 1


@numba.njit(cache=True)
def _frozen_batch(gens, p, n1_init, n2_init, mu1, mu2, r, out_t, out_j, out_bg, out_n1, out_n2):
    w = np.zeros(4)
    for k in range(len(gens)):
        gen = gens[k]
        if n1_init < 0:
            n1, n2 = _labels(gen, p)
        else:
            n1, n2 = n1_init, n2_init
        out_n1[k] = n1
        out_n2[k] = n2
        t = 0.0
        jumps = 0
        while n1 + n2 > 1:
            tot = _lineage_rates(p, 1.0 - p, n1, n2, mu1, mu2, r, w)
            t += gen.standard_exponential() / tot
            n1, n2 = _apply(_pick(gen, w, tot), n1, n2)
            jumps += 1
        out_t[k] = t
        out_j[k] = jumps
        out_bg[k] = 0 if n1 == 1 else 1
    return len(gens), 0


@numba.njit(cache=True)
def _euler_batch(gens, p0s, n1_init, n2_init, dt, split, max_steps, mu1, mu2, r, sel_kind, s0, p_eq, sel_x, sel_v,
                 out_t, out_j, out_bg, out_n1, out_n2):
    w = np.zeros(4)
    sq = math.sqrt(dt)
    for k in range(len(gens)):
        gen = gens[k]
        p = p0s[k]
        q = 1.0 - p
        if n1_init < 0:
            n1, n2 = _labels(gen, p)
        else:
            n1, n2 = n1_init, n2_init
        out_n1[k] = n1
        out_n2[k] = n2
        t = 0.0
        jumps = 0
        done = False
        for _ in range(max_steps):
            # an exactly vanishing frequency (underflow) is read as the smallest positive one
            tot = _lineage_rates(max(p, 1e-300), max(q, 1e-300), n1, n2, mu1, mu2, r, w)
            u = gen.random()
            if u < -math.expm1(-tot * dt):
                # given a jump in this step, u is uniform on [0, P): invert the truncated exponential
                tau = -math.log1p(-u) / tot
                e = _pick(gen, w, tot)
                jumps += 1
                if e <= 1:
                    out_t[k] = t + tau
                    out_bg[k] = e
                    done = True
                    break
                n1, n2 = _apply(e, n1, n2)
            s = _sel_eval(p, sel_kind, s0, p_eq, sel_x, sel_v)
            if split:
                p, q = _split_step(gen, p, q, dt, mu1, mu2, s)
            else:
                b = 0.5 * (s * p * q - mu1 * p + mu2 * q)
                p = _reflect(p + b * dt + math.sqrt(0.5 * p * q) * sq * gen.standard_normal(), dt)
                q = 1.0 - p
            t += dt
        out_j[k] = jumps
        if not done:
            return k, 1
    return len(gens), 0


# replicate driver ------------------------------------------------------------------


@dataclass
class ReplicateSet:
    """Raw replicate outcomes; ``times`` are in diffusion units (N generations)."""

    times: np.ndarray
    jumps: np.ndarray
    background: np.ndarray
    p0: np.ndarray
    n1: np.ndarray
    n2: np.ndarray
    seed: int
    engine: str
    p0_range: tuple[float, float] | None = None

    def __len__(self) -> int:
        return len(self.times)

    def subset(self, mask) -> ReplicateSet:
        m = np.asarray(mask)
        return ReplicateSet(self.times[m], self.jumps[m], self.background[m], self.p0[m], self.n1[m], self.n2[m],
                            self.seed, self.engine, self.p0_range)


def _run_chunk(args) -> tuple:
    params, initial, engine, seed, start, stop, p0_range, max_events = args
    gens = [replicate_stream(seed, k) for k in range(start, stop)]
    n = len(gens)
    if isinstance(engine, MoranExact):
        return moran.simulate_replicates(params, initial, gens, N=engine.N, p0_range=p0_range, max_events=max_events)
    d = to_diffusion_scale(params)
    out_t = np.zeros(n)
    out_j = np.zeros(n, dtype=np.int64)
    out_bg = np.zeros(n, dtype=np.int64)
    out_n1 = np.zeros(n, dtype=np.int64)
    out_n2 = np.zeros(n, dtype=np.int64)
    n1 = -1 if initial is None else initial.n1
    n2 = -1 if initial is None else initial.n2
    typed = numba.typed.List(gens)
    if isinstance(engine, Frozen):
        p0 = np.full(n, engine.p0)
        if p0_range is not None and not (p0_range[0] <= engine.p0 < p0_range[1]):
            raise ValueError("frozen frequency lies outside the requested range")
        if (n1 > 0 and engine.p0 <= 0) or (n2 > 0 and engine.p0 >= 1):
            raise ValueError("lineage stranded on a vanishing background")
        _frozen_batch(typed, engine.p0, n1, n2, d.mu1, d.mu2, d.r, out_t, out_j, out_bg, out_n1, out_n2)
    else:
        dens = stationary_density(d)
        # the starting frequency uses its own generator so the path noise is common across engines' options
        p0 = np.array([sample_stationary(dens, replicate_stream(seed, k, domain=1), p_range=p0_range)
                       for k in range(start, stop)])
        kind, s0, p_eq, xs, vs = selection_arrays(d.selection)
        max_steps = int(math.ceil(engine.max_time / engine.dt))
        done, status = _euler_batch(typed, p0, n1, n2, engine.dt, engine.scheme == "split", max_steps, d.mu1, d.mu2, d.r, kind, s0, p_eq, xs, vs,
                                    out_t, out_j, out_bg, out_n1, out_n2)
        if status == 1:
            raise RuntimeError(f"replicate {start + done} exceeded max_time={engine.max_time}")
    return out_t, out_j, out_bg, p0, out_n1, out_n2


def run_replicates(
    params: ModelParams,
    initial: SampleState | None,
    replicates: int,
    seed: int,
    engine: Engine | str = MoranExact(200),
    p0_range: tuple[float, float] | None = None,
    workers: int = 1,
    chunk: int = 4096,
    max_events: int = 10**9,
) -> ReplicateSet:
    """Simulate ``replicates`` independent genealogies.

    ``initial=None`` draws the background labels of a random pair of distinct
    genes; otherwise p0 is conditioned on the state being feasible. p0 is
    drawn from stationarity, restricted to the half-open ``p0_range``.
    """
    if replicates < 1:
        raise ValueError("replicates must be >= 1")
    if isinstance(engine, str):
        engine = parse_engine(engine)
    d = to_diffusion_scale(params)
    d.require_positive_mutation()
    bounds = list(range(0, replicates, chunk)) + [replicates]
    jobs = [(d, initial, engine, seed, a, b, p0_range, max_events) for a, b in zip(bounds[:-1], bounds[1:])]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run_chunk, jobs))
    else:
        parts = [_run_chunk(j) for j in jobs]
    cols = [np.concatenate([part[i] for part in parts]) for i in range(6)]
    return ReplicateSet(*cols, seed=int(seed), engine=str(engine), p0_range=p0_range)


def simulate_coalescence(
    params: ModelParams,
    initial: SampleState | None,
    engine: Engine | str,
    rng: np.random.Generator,
    p0_range: tuple[float, float] | None = None,
) -> moran.GenealogyOutcome:
    """One genealogy driven by ``rng``."""
    if isinstance(engine, str):
        engine = parse_engine(engine)
    d = to_diffusion_scale(params)
    d.require_positive_mutation()
    if isinstance(engine, MoranExact):
        return moran.simulate_genealogy(d, initial, rng, N=engine.N, p0_range=p0_range)
    n1 = -1 if initial is None else initial.n1
    n2 = -1 if initial is None else initial.n2
    out = [np.zeros(1), np.zeros(1, dtype=np.int64), np.zeros(1, dtype=np.int64),
           np.zeros(1, dtype=np.int64), np.zeros(1, dtype=np.int64)]
    typed = numba.typed.List([rng])
    if isinstance(engine, Frozen):
        p0 = engine.p0
        _frozen_batch(typed, p0, n1, n2, d.mu1, d.mu2, d.r, *out)
    else:
        p0 = float(sample_stationary(stationary_density(d), rng, p_range=p0_range))
        kind, s0, p_eq, xs, vs = selection_arrays(d.selection)
        _, status = _euler_batch(typed, np.array([p0]), n1, n2, engine.dt, engine.scheme == "split", int(math.ceil(engine.max_time / engine.dt)),
                                 d.mu1, d.mu2, d.r, kind, s0, p_eq, xs, vs, *out)
        if status:
            raise RuntimeError("Euler replicate failed to coalesce")
    t, j, bg, a, b = (x[0] for x in out)
    return moran.GenealogyOutcome(float(t), int(j), "P" if bg == 0 else "Q", float(p0), SampleState(int(a), int(b)))


# estimators -------------------------------------------------------------------------


@dataclass(frozen=True)
class McEstimate:
    estimand: str
    value: float
    std_error: float
    replicates: int
    seed: int
    p0_range: tuple[float, float] | None = None

    columns = ("estimand", "value", "std_error", "replicates", "seed")

    def row(self) -> tuple:
        return (self.estimand, self.value, self.std_error, self.replicates, self.seed)

    def z_score(self, target: float) -> float:
        if self.std_error == 0.0:
            return 0.0 if self.value == target else math.inf
        return (self.value - target) / self.std_error


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    n = len(x)
    mean = float(np.sum(x) / n)  # numpy sums float arrays pairwise
    if n < 2:
        return mean, 0.0
    var = float(np.sum((x - mean) ** 2) / (n - 1))
    return mean, math.sqrt(var / n)


def identity_estimate(reps: ReplicateSet, nu: float, estimand: str = "identity") -> McEstimate:
    """Mean and standard error of exp(-2 nu T) over a replicate set."""
    x = np.exp(-2.0 * nu * reps.times)
    v, se = _mean_se(x)
    return McEstimate(estimand, v, se, len(reps), reps.seed, reps.p0_range)


def estimate_identity(
    params: ModelParams,
    initial: SampleState | None,
    replicates: int,
    seed: int,
    engine: Engine | str = MoranExact(200),
    p0_range: tuple[float, float] | None = None,
    workers: int = 1,
) -> McEstimate:
    """Monte Carlo identity in state, E exp(-2 nu T)."""
    d = to_diffusion_scale(params)
    reps = run_replicates(d, initial, replicates, seed, engine, p0_range, workers)
    label = "fbar" if initial is None else f"f_{initial.label}"
    return identity_estimate(reps, d.nu, label)


def estimate_mean_time(
    params: ModelParams,
    initial: SampleState | None,
    replicates: int,
    seed: int,
    engine: Engine | str = MoranExact(200),
    p0_range: tuple[float, float] | None = None,
    workers: int = 1,
) -> McEstimate:
    """Monte Carlo mean coalescence time in units of N generations."""
    reps = run_replicates(params, initial, replicates, seed, engine, p0_range, workers)
    v, se = _mean_se(reps.times)
    label = "Tbar" if initial is None else f"T_{initial.label}"
    return McEstimate(label, v, se, len(reps), reps.seed, reps.p0_range)


def p0_bins(n_bins: int = 50) -> np.ndarray:
    """Edges of equal-width frequency bins."""
    return np.linspace(0.0, 1.0, n_bins + 1)


def bin_containing(x: float, n_bins: int = 50) -> tuple[float, float]:
    edges = p0_bins(n_bins)
    k = min(int(np.searchsorted(edges, x, side="right")) - 1, n_bins - 1)
    return float(edges[k]), float(edges[k + 1])


@dataclass
class EmpiricalCdf:
    """Empirical distribution of coalescence times, optionally stratified by p0.

    ``values[b, k]`` is the fraction of replicates in bin b with T <= times[k]
    (a single row when unstratified).
    """

    times: np.ndarray
    values: np.ndarray
    counts: np.ndarray
    edges: np.ndarray | None
    samples: ReplicateSet

    def stieltjes(self, nu: float, stratum: int | None = None) -> float:
        """Integral of exp(-2 nu t) against the empirical step distribution."""
        reps = self.samples
        if stratum is not None and self.edges is not None:
            lo, hi = self.edges[stratum], self.edges[stratum + 1]
            reps = reps.subset((reps.p0 >= lo) & (reps.p0 < hi))
        t, counts = np.unique(reps.times, return_counts=True)
        return float(np.sum(np.exp(-2.0 * nu * t) * (counts / len(reps))))


def empirical_cdf_of_T(
    params: ModelParams,
    initial: SampleState | None,
    replicates: int,
    times,
    seed: int,
    engine: Engine | str = MoranExact(200),
    n_bins: int | None = None,
    p0_range: tuple[float, float] | None = None,
    workers: int = 1,
) -> EmpiricalCdf:
    """Tabulate the empirical CDF of T on ``times``."""
    reps = run_replicates(params, initial, replicates, seed, engine, p0_range, workers)
    grid = np.asarray(times, dtype=float)
    if n_bins is None:
        groups = [reps.times]
        edges = None
    else:
        edges = p0_bins(n_bins)
        idx = np.clip(np.searchsorted(edges, reps.p0, side="right") - 1, 0, n_bins - 1)
        groups = [reps.times[idx == b] for b in range(n_bins)]
    vals = np.full((len(groups), len(grid)), np.nan)
    counts = np.array([len(g) for g in groups])
    for b, g in enumerate(groups):
        if len(g):
            vals[b] = np.searchsorted(np.sort(g), grid, side="right") / len(g)
    return EmpiricalCdf(grid, vals, counts, edges, reps)
