"""Cross-validation suites. Each check returns ``CheckResult`` records that
carry the measured value, the threshold it is held to, and the verdict."""
from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass

import numpy as np
from scipy import integrate

from . import coalescent_mc as mc
from . import identity_ode as ode
from . import moran, wf_exact
from .core import FrequencyGrid, ModelParams, SampleState, SelectionProfile, to_diffusion_scale, wf_generation_rates
from .diffusion import classify_boundary, stationary_density

__all__ = [
    "CheckResult",
    "FIG1",
    "FIG2",
    "FIG3",
    "NEUTRAL",
    "SUITES",
    "run_suite",
]

# per-generation Wright-Fisher values of the finite-population comparison
FIG1 = ModelParams(mu1=0.0005, mu2=0.0005, r=0.0, nu=0.002, selection=SelectionProfile.balancing(0.16, 0.5),
                   N=50, scale="wright_fisher")
FIG2 = ModelParams(mu1=0.025, mu2=0.025, r=0.0, nu=0.1, selection=SelectionProfile.balancing(0.16, 0.5))
FIG3 = FIG2.with_(selection=SelectionProfile.balancing(0.32, 0.5))
NEUTRAL = FIG2.with_(selection=SelectionProfile.neutral())
QUOTED_BASELINE_FBAR = 0.43
QUOTED_BASELINE_TIME_N = 6.0  # structured-coalescent level quoted in units of N generations
SWEEP_S0 = (0.0, 0.16, 0.32, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0, 200.0, 500.0, 1000.0, 5000.0)


@dataclass(frozen=True)
class CheckResult:
    criterion: int
    name: str
    measured: float
    threshold: float
    passed: bool
    detail: str = ""

    def line(self) -> str:
        verdict = "INFO" if self.informational else ("PASS" if self.passed else "FAIL")
        return f"[{verdict}] criterion {self.criterion}: {self.name}: measured={self.measured:.6g} threshold={self.threshold:.6g} {self.detail}".rstrip()

    @property
    def informational(self) -> bool:
        """Reported alongside the checks but not held to a threshold."""
        return math.isnan(self.threshold)

    def to_dict(self) -> dict:
        return asdict(self)


# 1 ------------------------------------------------------------------------------


def wf_vs_ode(N_values=(50, 100), tol: float = 0.02, grid: FrequencyGrid | None = None) -> list[CheckResult]:
    """Diffusion solution at p = j/(2N) against the exact WF fixed point.

    Pinned entries (a single P or Q copy) are boundary values of the
    recursion rather than its output and are reported separately.
    """
    out = []
    sups = {}
    limit = to_diffusion_scale(FIG1)
    for N in N_values:
        # same diffusion parameters, larger population
        wf = wf_generation_rates(limit, N)
        t0 = time.perf_counter()
        vec = wf_exact.identity_fixed_point(wf)
        field = ode.solve_direct(to_diffusion_scale(wf), grid)
        vals = field.values(vec.p)
        errs, pinned = [], []
        for c, (name, arr, defined, pin) in enumerate(
            (("f_PP", vec.f_PP, vec.defined_PP, vec.pinned_PP),
             ("f_PQ", vec.f_PQ, vec.defined_PQ, np.zeros_like(vec.defined_PQ)),
             ("f_QQ", vec.f_QQ, vec.defined_QQ, vec.pinned_QQ))
        ):
            m = defined & ~pin
            errs.append(float(np.max(np.abs(vals[c][m] - arr[m]))))
            if pin.any():
                pinned.append(float(np.max(np.abs(vals[c][pin] - arr[pin]))))
        sups[N] = errs
        wall = time.perf_counter() - t0
        if N == N_values[0]:
            for name, e in zip(("f_PP", "f_PQ", "f_QQ"), errs):
                out.append(CheckResult(1, f"wf_vs_ode N={N} sup|{name}|", e, tol, e <= tol,
                                       f"pinned_max={max(pinned):.4g} wall={wall:.1f}s"))
            out.append(CheckResult(1, f"wf_vs_ode N={N} runtime", wall, 60.0, wall < 60.0))
    for N in N_values[1:]:
        prev = N_values[0]
        worst = max(b / a for a, b in zip(sups[prev], sups[N]))
        out.append(CheckResult(1, f"wf_vs_ode discrepancy shrinks N={prev}->{N} (max ratio)", worst, 1.0, worst < 1.0,
                               "sups=" + ",".join(f"{e:.4g}" for e in sups[N])))
    return out


# 2 ------------------------------------------------------------------------------


def neutral(replicates: int = 100_000, seed: int = 20240101, N: int = 100, grid=None) -> list[CheckResult]:
    target = 1.0 / (1.0 + 4.0 * NEUTRAL.nu)
    dens = stationary_density(NEUTRAL)
    avg = ode.average_over_stationarity(ode.solve_direct(NEUTRAL, grid), dens)
    out = [CheckResult(2, "neutral averaged fbar, ODE route", abs(avg - target), 2e-3, abs(avg - target) <= 2e-3,
                       f"value={avg:.8f} target={target:.8f}")]
    est = mc.estimate_identity(NEUTRAL, None, replicates, seed, mc.MoranExact(N))
    z = abs(est.z_score(target))
    out.append(CheckResult(2, f"neutral fbar, Monte Carlo moran_exact({N}) |z|", z, 3.0, z <= 3.0,
                           f"value={est.value:.6f} se={est.std_error:.2e} n={est.replicates}"))
    return out


# 3 ------------------------------------------------------------------------------

GEN_PARAMS = ModelParams(mu1=0.3, mu2=0.5, r=0.4, nu=0.0, selection=SelectionProfile.balancing(2.0, 0.4))
GEN_POINTS = (0.1, 0.3, 0.5, 0.7, 0.9)
GEN_STATES = ((2, 0), (1, 1), (0, 2), (1, 0), (0, 1))


def _test_function(p, n1, n2):
    return np.exp(p * (1.0 + n1) - 0.5 * n2 * p * p) + 0.3 * n1 - 0.7 * n2


def _test_derivatives(p, n1, n2):
    a, b = 1.0 + n1, -n2
    e = np.exp(a * p + 0.5 * b * p * p)
    g1 = (a + b * p) * e
    g2 = (b + (a + b * p) ** 2) * e
    return g1, g2


def limit_generator(p: float, state: tuple[int, int], params: ModelParams) -> float:
    """Limiting generator of (p, n1, n2) applied to the fixed test function."""
    d = to_diffusion_scale(params)
    n1, n2 = state
    q = 1.0 - p
    rt = mc.rates(p, SampleState(n1, n2), d)
    g = _test_function(p, n1, n2)
    tot = 0.0
    if n1 >= 2:
        tot += rt.coal_PP * (_test_function(p, n1 - 1, n2) - g)
    if n2 >= 2:
        tot += rt.coal_QQ * (_test_function(p, n1, n2 - 1) - g)
    if n1 >= 1:
        tot += n1 * rt.migrate_PtoQ * (_test_function(p, n1 - 1, n2 + 1) - g)
    if n2 >= 1:
        tot += n2 * rt.migrate_QtoP * (_test_function(p, n1 + 1, n2 - 1) - g)
    s = float(d.selection(p))
    b = 0.5 * (s * p * q - d.mu1 * p + d.mu2 * q)
    g1, g2 = _test_derivatives(p, n1, n2)
    return tot + b * g1 + 0.25 * p * q * g2


def moran_generator(p: float, state: tuple[int, int], params: ModelParams, N: int, tables=None) -> float:
    """Moran backward generator in diffusion time (N x per-event time) on the test function."""
    tab = tables if tables is not None else moran.moran_tables(params, N)
    rt = moran.backward_rates(p, state, params, N, tables=tab)
    M = 2 * N
    g = _test_function(p, *state)
    return float(N * math.fsum(r * (_test_function(t[0] / M, t[1], t[2]) - g) for t, r, _ in rt.entries))


def generator_convergence(N_values=(100, 1000, 10_000), params: ModelParams = GEN_PARAMS) -> list[CheckResult]:
    errs = []
    for N in N_values:
        tab = moran.moran_tables(params, N)
        e = max(abs(moran_generator(p, s, params, N, tab) - limit_generator(p, s, params))
                for p in GEN_POINTS for s in GEN_STATES)
        errs.append(e)
    slope = float(np.polyfit(np.log(N_values), np.log(errs), 1)[0])
    return [CheckResult(3, "generator convergence log-log slope", slope, -1.0, abs(slope + 1.0) <= 0.2,
                        "(|slope+1| <= 0.2) errors=" + ",".join(f"{e:.3g}" for e in errs))]


# 4 ------------------------------------------------------------------------------


def jump_probability_identity(draws: int = 10_000, seed: int = 7) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    worst = 0.0
    outside = 0.0
    for _ in range(draws):
        N = int(rng.integers(1, 500))
        i = int(rng.integers(0, 2 * N + 1))
        mu1, mu2 = rng.uniform(0.0, 1.0, 2)
        kind = rng.integers(3)
        if kind == 0:
            sel = SelectionProfile.directional(float(rng.uniform(-1.0, 5.0)))
        elif kind == 1:
            # |p0 - p| <= 1, so s0 <= 1 keeps every per-event fitness at or above -1
            sel = SelectionProfile.balancing(float(rng.uniform(0.0, 1.0)), float(rng.uniform()))
        else:
            sel = SelectionProfile.neutral()
        prm = ModelParams(mu1=mu1, mu2=mu2, selection=sel, N=N, scale="per_generation")
        jp = moran.jump_probs(i / (2 * N), prm)
        worst = max(worst, abs(jp.stay + jp.down + jp.up - 1.0))
        outside = max(outside, -min(jp.stay, jp.down, jp.up), max(jp.stay, jp.down, jp.up) - 1.0)
    return [CheckResult(4, f"stay+down+up=1 over {draws} draws (max error)", worst, 1e-12, worst <= 1e-12),
            CheckResult(4, "each probability in [0, 1] (max excursion)", max(outside, 0.0), 1e-15, outside <= 1e-15)]


# 5 ------------------------------------------------------------------------------


def moran_jump_matrix(params: ModelParams, N: int) -> np.ndarray:
    """Jump-chain transition matrix of the Moran copy number on 0..2N."""
    M = 2 * N
    P = np.zeros((M + 1, M + 1))
    for i in range(M + 1):
        jp = moran.jump_probs(i / M, params, N)
        P[i, i] = jp.stay
        if i > 0:
            P[i, i - 1] = jp.down
        if i < M:
            P[i, i + 1] = jp.up
    return P


def reversibility() -> list[CheckResult]:
    out = []
    worst = 0.0
    for prm in (FIG2, FIG3, GEN_PARAMS.with_(r=0.0), NEUTRAL):
        for N in (2, 10, 50):
            P = moran_jump_matrix(prm, N)
            worst = max(worst, wf_exact.detailed_balance_residual(P, moran.moran_stationary(prm, N)))
    out.append(CheckResult(5, "Moran detailed balance residual", worst, 1e-12, worst <= 1e-12))
    P = moran_jump_matrix(FIG2, 2)
    psi_power = wf_exact.stationary_distribution(P, tol=1e-15)
    diff = float(np.max(np.abs(psi_power - moran.moran_stationary(FIG2, 2))))
    out.append(CheckResult(5, "Moran stationary law vs power iteration at 2N=4", diff, 1e-12, diff <= 1e-12))
    Pw = wf_exact.transition_matrix(FIG1)
    res = wf_exact.detailed_balance_residual(Pw, wf_exact.stationary_distribution(Pw))
    out.append(CheckResult(5, "WF chain violates detailed balance (residual > threshold)", res, 1e-6, res > 1e-6))
    return out


# 6 ------------------------------------------------------------------------------


def minimal_solution(tol: float = 1e-10, grid=None) -> list[CheckResult]:
    out = []
    for label, prm in (("s0=0.16", FIG2), ("s0=0.32", FIG3)):
        it = ode.solve_iterative(prm, grid, tol=tol)
        direct = ode.solve_direct(prm, grid)
        # roundoff floor for an increment that is exactly zero in exact arithmetic
        floor = -64 * np.finfo(float).eps
        worst = min(it.min_increments)
        out.append(CheckResult(6, f"iterates nondecreasing {label} (min increment)", worst, floor, worst >= floor,
                               f"iterations={it.iterations}"))
        gap = float(np.max(np.abs(it.field.values() - direct.values())))
        out.append(CheckResult(6, f"iterative limit vs direct {label}", gap, 10 * tol, gap <= 10 * tol))
    return out


# 7 ------------------------------------------------------------------------------


def boundary_grid(values=(0.4, 0.5, 0.6)) -> list[CheckResult]:
    bad = []
    for mu1 in values:
        for mu2 in values:
            prm = ModelParams(mu1=mu1, mu2=mu2, selection=SelectionProfile.balancing(1.0, 0.5))
            for e, mu in ((0, mu2), (1, mu1)):
                bc = classify_boundary(e, prm)
                rule = 2 * mu < 1
                if bc.accessible != rule or bc.diagnostic_accessible != rule:
                    bad.append((mu1, mu2, e))
    n = len(values) ** 2 * 2
    return [CheckResult(7, f"boundary classification on the {len(values)}x{len(values)} grid (mismatches)",
                        len(bad), 0, not bad, f"cases={n} " + (f"bad={bad}" if bad else ""))]


# 8 ------------------------------------------------------------------------------


def time_dependent(dt: float = 0.01, horizon: float = 200.0, grid=None) -> list[CheckResult]:
    direct = ode.solve_direct(FIG2, grid)
    cdf = ode.solve_time_dependent(FIG2, grid, dt=dt, horizon=horizon, laplace_nu=[FIG2.nu])
    gap = float(np.max(np.abs(cdf.laplace[FIG2.nu] - direct.values())))
    mono = float(np.min(np.diff(cdf.values, axis=0)))
    return [
        CheckResult(8, "Laplace transform of the CDF solver vs direct identity", gap, 2e-3, gap <= 2e-3,
                    f"dt={dt} horizon={horizon}"),
        CheckResult(8, "CDF nondecreasing in t (min increment)", mono, -1e-12, mono >= -1e-12),
    ]


# 9 ------------------------------------------------------------------------------


def mean_time_relation(nus=(1e-3, 1e-4), grid=None) -> list[CheckResult]:
    out = []
    ratio = nus[0] / nus[1]
    for label, prm in (("neutral", NEUTRAL), ("s0=0.16", FIG2)):
        dens = stationary_density(prm)
        sysm = ode.assemble_system(prm, grid)
        T = ode.average_over_stationarity(ode.mean_coalescence_times(prm, system=sysm), dens)
        est = []
        for nu in nus:
            fb = ode.average_over_stationarity(ode.solve_direct(prm.with_(nu=nu), system=sysm), dens)
            est.append((1.0 - fb) / (2.0 * nu))
        rich = (ratio * est[1] - est[0]) / (ratio - 1.0)
        rel = abs(rich - T) / T
        out.append(CheckResult(9, f"(1-fbar)/(2nu) extrapolation vs Tbar {label} (relative)", rel, 1e-3, rel <= 1e-3,
                               f"Tbar={T:.8f} extrapolated={rich:.8f}"))
    return out


# 10 -----------------------------------------------------------------------------


def baseline(replicates: int = 100_000, seed: int = 20240110) -> list[CheckResult]:
    b = ode.constant_p_baseline(0.5, FIG2)
    ef, et = abs(b.fbar - 5.0 / 11.0), abs(b.Tbar - 22.0)
    out = [
        CheckResult(10, "baseline fbar = 5/11", ef, 1e-10, ef <= 1e-10, f"value={b.fbar:.12f}"),
        CheckResult(10, "baseline Tbar = 22", et, 1e-10, et <= 1e-10, f"value={b.Tbar:.12f}"),
    ]
    reps = mc.run_replicates(FIG2, None, replicates, seed, mc.Frozen(0.5))
    fe = mc.identity_estimate(reps, FIG2.nu, "fbar")
    tv, tse = mc._mean_se(reps.times)
    zf, zt = abs(fe.z_score(b.fbar)), abs((tv - b.Tbar) / tse)
    out.append(CheckResult(10, "baseline fbar vs frozen-frequency Monte Carlo |z|", zf, 3.0, zf <= 3.0,
                           f"mc={fe.value:.5f} se={fe.std_error:.1e}"))
    out.append(CheckResult(10, "baseline Tbar vs frozen-frequency Monte Carlo |z|", zt, 3.0, zt <= 3.0,
                           f"mc={tv:.4f} se={tse:.2e}"))
    # published levels: reported, not gated
    out.append(CheckResult(10, "report: quoted constant-p identity vs oracle (difference)", b.fbar - QUOTED_BASELINE_FBAR,
                           math.nan, True, f"quoted={QUOTED_BASELINE_FBAR} oracle={b.fbar:.6f} (not gated)"))
    out.append(CheckResult(10, "report: quoted structured-coalescent time vs oracle (units of 2N)",
                           b.Tbar / 2.0 - QUOTED_BASELINE_TIME_N / 2.0, math.nan, True,
                           f"quoted={QUOTED_BASELINE_TIME_N / 2.0} oracle={b.Tbar / 2.0:.6f} (not gated)"))
    return out


# 11 -----------------------------------------------------------------------------


def qualitative(grid=None, s0_values=SWEEP_S0, near: float = 0.05) -> list[CheckResult]:
    f = ode.solve_direct(FIG2, grid)
    v = f.values()
    m = (f.nodes > 0.0) & (f.nodes <= near)
    slack = float(np.min(np.minimum(v[ode.PP][m] - v[ode.QQ][m], v[ode.QQ][m] - v[ode.PQ][m])))
    out = [CheckResult(11, f"ordering f_PP >= f_QQ >= f_PQ on (0, {near}] (min gap)", slack, 0.0, slack >= 0.0)]
    sweep = ode.selection_sweep(FIG2, s0_values, grid)
    base = ode.constant_p_baseline(0.5, FIG2).fbar
    vals = np.array([s.avg_fbar for s in sweep])
    steps = float(np.max(np.diff(vals)))
    out.append(CheckResult(11, "averaged fbar nonincreasing in s0 (max step)", steps, 0.0, steps <= 0.0))
    gaps = np.abs(vals - base)
    s0 = np.array(s0_values)
    at_figs = float(np.min(gaps[(s0 > 0) & (s0 <= 0.32)]))
    out.append(CheckResult(11, "gap to baseline at the s0 of the identity plots", at_figs, 0.2, at_figs > 0.2))
    close = s0[gaps < 0.01]
    first = float(close.min()) if close.size else math.inf
    out.append(CheckResult(11, "smallest s0 with |avg fbar - baseline| < 0.01", first, 50.0, first >= 50.0,
                           f"baseline={base:.6f} avg_at_max_s0={vals[-1]:.6f}"))
    return out


# cross-engine / cross-route Monte Carlo ----------------------------------------------


def engine_agreement(replicates: int = 20_000, seed: int = 20240103, N: int = 200, dt: float = 1e-3) -> list[CheckResult]:
    a = mc.estimate_mean_time(FIG2, None, replicates, seed, mc.MoranExact(N))
    b = mc.estimate_mean_time(FIG2, None, replicates, seed + 1, mc.Euler(dt))
    z = abs(a.value - b.value) / math.hypot(a.std_error, b.std_error)
    return [CheckResult(3, f"engines agree on Tbar: moran_exact({N}) vs euler({dt}) |z|", z, 3.0, z <= 3.0,
                        f"moran={a.value:.4f}+-{a.std_error:.3f} euler={b.value:.4f}+-{b.std_error:.3f}")]


def engines() -> list[CheckResult]:
    return generator_convergence() + engine_agreement()


def binned_identity(replicates: int = 20_000, seed: int = 20240104, dt: float = 1e-3, n_bins: int = 50) -> list[CheckResult]:
    """f_PP from a p0-conditioned Euler run against the ODE averaged over the same bin."""
    lo, hi = mc.bin_containing(0.5, n_bins)
    est = mc.estimate_identity(FIG2, SampleState(2, 0), replicates, seed, mc.Euler(dt), p0_range=(lo, hi))
    dens = stationary_density(FIG2)
    f = ode.solve_direct(FIG2)
    num = integrate.quad(lambda x: f.values(np.array([x]))[ode.PP][0] * dens(x), lo, hi)[0]
    den = integrate.quad(dens, lo, hi)[0]
    z = abs(est.z_score(num / den))
    return [CheckResult(2, f"f_PP on p0 bin [{lo:.2f},{hi:.2f}) vs bin-averaged ODE |z|", z, 3.0, z <= 3.0,
                        f"mc={est.value:.5f}+-{est.std_error:.1e} ode={num / den:.5f}")]


def mc_vs_ode() -> list[CheckResult]:
    return neutral()[1:] + binned_identity() + baseline()[2:4]


def moran_vs_wf() -> list[CheckResult]:
    return jump_probability_identity() + reversibility()


def ode_suite() -> list[CheckResult]:
    return minimal_solution() + boundary_grid() + time_dependent() + mean_time_relation() + qualitative()


def all_criteria() -> list[CheckResult]:
    return (wf_vs_ode() + neutral() + generator_convergence() + jump_probability_identity() + reversibility()
            + minimal_solution() + boundary_grid() + time_dependent() + mean_time_relation() + baseline() + qualitative())


SUITES = {
    "wf_vs_ode": wf_vs_ode,
    "moran_vs_wf": moran_vs_wf,
    "mc_vs_ode": mc_vs_ode,
    "engines": engines,
    "neutral": neutral,
    "ode": ode_suite,
    "all": all_criteria,
}


def run_suite(name: str) -> list[CheckResult]:
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; choose from {sorted(SUITES)}")
    return SUITES[name]()
