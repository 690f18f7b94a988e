"""The Wright-Fisher diffusion for the selected-allele frequency.

Generator: (1/2) a(p) f'' + b(p) f' with a = p(1-p)/2 and
b = (s(p) p (1-p) - mu1 p + mu2 (1-p)) / 2.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numba
import numpy as np
from scipy import integrate, special

from .core import ModelParams, eval_selection, selection_integral, to_diffusion_scale

__all__ = [
    "DiffusionCoefficients",
    "coefficients",
    "ScaleSpeed",
    "scale_speed",
    "BoundaryClassification",
    "classify_boundary",
    "hitting_probability",
    "StationaryDensity",
    "stationary_density",
    "sample_stationary",
    "simulate_path",
    "DiffusionPath",
]


@dataclass(frozen=True)
class DiffusionCoefficients:
    drift: np.ndarray | float
    variance: np.ndarray | float


def coefficients(p, params: ModelParams) -> DiffusionCoefficients:
    d = to_diffusion_scale(params)
    p = np.asarray(p, dtype=float)
    q = 1.0 - p
    s = eval_selection(d.selection, p)
    b = 0.5 * (s * p * q - d.mu1 * p + d.mu2 * q)
    a = 0.5 * p * q
    if p.ndim == 0:
        return DiffusionCoefficients(float(b), float(a))
    return DiffusionCoefficients(b, a)


# quadrature helpers ---------------------------------------------------------------


def _power_integral(h, lo: float, hi: float, e0: float, e1: float) -> float:
    """Integral over [lo, hi] of h(y) y^e0 (1-y)^e1 for smooth h, 0 <= lo <= hi <= 1.

    Pieces touching an endpoint use algebraic weights; pieces merely close
    to an endpoint use a logarithmic change of variable.
    """
    if hi <= lo:
        return -_power_integral(h, hi, lo, e0, e1) if hi < lo else 0.0
    total = 0.0
    mid = 0.5
    if lo < mid:
        total += _left_piece(h, lo, min(hi, mid), e0, e1)
    if hi > mid:
        total += _left_piece(lambda v: h(1.0 - v), 1.0 - hi, 1.0 - max(lo, mid), e1, e0)
    return total


def _left_piece(h, lo, hi, e0, e1):
    """Integral over [lo, hi] in [0, 1/2] of h(y) y^e0 (1-y)^e1."""
    if hi <= lo:
        return 0.0
    opts = dict(limit=200, epsabs=0.0, epsrel=1e-12)
    if lo == 0.0:
        if e0 <= -1.0:
            return math.inf
        val, _ = integrate.quad(lambda y: h(y) * (1.0 - y) ** e1, 0.0, hi, weight="alg", wvar=(e0, 0.0), **opts)
        return val

    def g(t):
        y = math.exp(t)
        return h(y) * math.exp(t * (e0 + 1.0)) * (1.0 - y) ** e1

    val, _ = integrate.quad(g, math.log(lo), math.log(hi), **opts)
    return val


# scale and speed ------------------------------------------------------------------


@dataclass(frozen=True)
class ScaleSpeed:
    """Scale n(x) and speed m(x) relative to the reference point ``c``.

    Both are evaluated by adaptive quadrature on demand; ``grid``,
    ``scale_values`` and ``speed_values`` hold a tabulation. When the scale
    integral converges at 0 it is shifted so that n(0) = 0.
    """

    params: ModelParams
    c: float
    grid: np.ndarray
    scale_values: np.ndarray
    speed_values: np.ndarray
    offset: float

    def _G(self, y):
        return selection_integral(self.params.selection, y) - self._Gc

    @cached_property
    def _Gc(self) -> float:
        return float(selection_integral(self.params.selection, self.c))

    def _raw_scale(self, x: float) -> float:
        d = self.params
        h = lambda y: math.exp(-self._G(y))
        return _power_integral(h, self.c, x, -2.0 * d.mu2, -2.0 * d.mu1)

    def scale(self, x) -> float | np.ndarray:
        if np.ndim(x):
            return np.array([self.scale(v) for v in np.asarray(x, dtype=float)])
        return self._raw_scale(float(x)) - self.offset

    def speed(self, x) -> float | np.ndarray:
        if np.ndim(x):
            return np.array([self.speed(v) for v in np.asarray(x, dtype=float)])
        d = self.params
        h = lambda y: 4.0 * math.exp(self._G(y))
        return _power_integral(h, self.c, float(x), 2.0 * d.mu2 - 1.0, 2.0 * d.mu1 - 1.0)

    def scale_density(self, x):
        d = self.params
        x = np.asarray(x, dtype=float)
        return np.exp(-self._G(x)) * x ** (-2.0 * d.mu2) * (1.0 - x) ** (-2.0 * d.mu1)

    def speed_density(self, x):
        d = self.params
        x = np.asarray(x, dtype=float)
        return 4.0 * np.exp(self._G(x)) * x ** (2.0 * d.mu2 - 1.0) * (1.0 - x) ** (2.0 * d.mu1 - 1.0)


def scale_speed(params: ModelParams, c: float = 0.5, grid=None) -> ScaleSpeed:
    """Scale and speed functions of the frequency diffusion."""
    d = to_diffusion_scale(params)
    if not 0.0 < c < 1.0:
        raise ValueError("reference point must lie in (0, 1)")
    if grid is None:
        grid = np.concatenate((np.logspace(-8, -2, 25), np.linspace(0.02, 0.98, 49), 1 - np.logspace(-2, -8, 25)))
    grid = np.asarray(grid, dtype=float)
    tmp = ScaleSpeed(d, c, grid, np.empty(0), np.empty(0), 0.0)
    offset = tmp._raw_scale(0.0) if d.mu2 < 0.5 else 0.0
    ss = ScaleSpeed(d, c, grid, np.empty(0), np.empty(0), offset)
    sv = ss.scale(grid)
    mv = ss.speed(grid)
    if not (np.all(np.isfinite(sv)) and np.all(np.isfinite(mv))):
        raise ArithmeticError("quadrature failure in scale/speed tabulation")
    return ScaleSpeed(d, c, grid, sv, mv, offset)


def hitting_probability(a: float, x: float, b: float, scale: ScaleSpeed) -> float:
    """Probability that the diffusion started at x reaches a before b."""
    if not (0.0 <= a < x < b <= 1.0):
        if a <= x <= b and a < b:
            return 1.0 if x == a else 0.0
        raise ValueError("need 0 <= a <= x <= b <= 1 with a < b")
    na, nx, nb = scale.scale(a), scale.scale(x), scale.scale(b)
    if math.isinf(na):
        return 0.0
    if math.isinf(nb):
        return 1.0
    return float((nb - nx) / (nb - na))


@dataclass(frozen=True)
class BoundaryClassification:
    """Exponent-rule verdict plus the quadrature diagnostic of u(e).

    ``collars`` are the distances eps to the endpoint, ``u_values`` the
    truncated integrals over [eps, c] (mirrored at 1) and ``tail_ratio`` the
    ratio of successive increments per decade in the far tail, which tends to
    10^(2 mu - 1): below 1 the integral converges, at or above 1 it grows
    without bound.
    """

    endpoint: int
    accessible: bool
    exponent: float
    collars: np.ndarray
    u_values: np.ndarray
    tail_ratio: float

    @property
    def label(self) -> str:
        return "accessible" if self.accessible else "inaccessible"

    @property
    def diagnostic_accessible(self) -> bool:
        return self.tail_ratio < 1.0 - 1e-6


def _u_diagnostic(d: ModelParams, endpoint: int, c: float, decades: int | None = None, per_decade: int = 40):
    """Truncated u(e) = int m dn over collars 10^-k, in a logarithmic variable."""
    if endpoint == 1:
        d = d.mirrored()
        c = 1.0 - c
    mu_near, mu_far = d.mu2, d.mu1
    if decades is None:
        decades = int(min(120, 250 / max(abs(2.0 * mu_near - 1.0), 1e-3)))
    G = lambda y: selection_integral(d.selection, y) - selection_integral(d.selection, c)
    ln10 = math.log(10.0)
    # decade k spans t in [-(k+1) ln10, -k ln10]; the first piece is [-ln10, ln c]
    edges = np.concatenate(([math.log(c)], -ln10 * np.arange(1, decades + 1)))
    pieces = [np.linspace(edges[k + 1], edges[k], per_decade + 1) for k in range(decades)]
    t = np.concatenate([pc[:-1] for pc in reversed(pieces)] + [edges[:1]])
    y = np.exp(t)
    # |m(y)| = int_y^c 4 e^G z^(2 mu_near - 1) (1-z)^(2 mu_far - 1) dz, with dz = z dt
    sp_int = 4.0 * np.exp(G(y)) * np.exp(2.0 * mu_near * t) * (1.0 - y) ** (2.0 * mu_far - 1.0)
    m_abs = integrate.cumulative_simpson(sp_int[::-1], x=-t[::-1], initial=0.0)[::-1]
    un = m_abs * np.exp(-G(y)) * np.exp((1.0 - 2.0 * mu_near) * t) * (1.0 - y) ** (-2.0 * mu_far)
    # per-decade increments integrated separately so tiny tails keep full precision
    inc = np.empty(decades)
    for k in range(decades):
        lo = len(t) - 1 - (k + 1) * per_decade
        hi = lo + per_decade + 1
        inc[k] = integrate.simpson(un[lo:hi], x=t[lo:hi])
    u_at = np.cumsum(inc)
    collars = 10.0 ** (-np.arange(1, decades + 1, dtype=float))
    tail_ratio = float(inc[-1] / inc[-2])
    return collars, u_at, tail_ratio


def classify_boundary(endpoint: int, params: ModelParams, c: float = 0.5) -> BoundaryClassification:
    """Feller classification of 0 or 1 by the exponent rule, with diagnostic."""
    d = to_diffusion_scale(params)
    d.require_positive_mutation()
    if endpoint not in (0, 1):
        raise ValueError("endpoint must be 0 or 1")
    mu = d.mu2 if endpoint == 0 else d.mu1
    collars, u, ratio = _u_diagnostic(d, endpoint, c)
    return BoundaryClassification(endpoint, mu < 0.5, 1.0 - 2.0 * mu, collars, u, ratio)


# stationary density -------------------------------------------------------------------


@dataclass(frozen=True)
class StationaryDensity:
    """Normalised stationary density beta p^(2mu2-1) (1-p)^(2mu1-1) exp(G(p)).

    G(p) is the integral of 2 s from 0 to p. Integrals against the density
    use Gauss-Jacobi rules whose weight function carries both endpoint
    singularities exactly.
    """

    params: ModelParams
    beta: float
    nodes: np.ndarray
    weights: np.ndarray
    _table_u: np.ndarray = field(repr=False)
    _table_H: np.ndarray = field(repr=False)

    @property
    def a(self) -> float:
        return 2.0 * self.params.mu2

    @property
    def b(self) -> float:
        return 2.0 * self.params.mu1

    def __call__(self, p):
        p = np.asarray(p, dtype=float)
        d = self.params
        with np.errstate(divide="ignore"):
            out = self.beta * p ** (self.a - 1.0) * (1.0 - p) ** (self.b - 1.0) * np.exp(selection_integral(d.selection, p))
        return float(out) if out.ndim == 0 else out

    def expectation(self, func) -> float:
        """Integral of func(p) m(p) dp (func vectorised)."""
        return float(np.sum(self.weights * func(self.nodes)))

    def mean(self) -> float:
        return self.expectation(lambda p: p)

    def cdf(self, x):
        u = special.betainc(self.a, self.b, np.asarray(x, dtype=float))
        return np.interp(u, self._table_u, self._table_H)

    def ppf(self, v):
        v = np.asarray(v, dtype=float)
        u = np.interp(v, self._table_H, self._table_u)
        p = special.betaincinv(self.a, self.b, u)
        return np.clip(p, np.finfo(float).tiny, 1.0 - np.finfo(float).epsneg)

    def to_rows(self, grid):
        grid = np.asarray(grid, dtype=float)
        return zip(grid, self(grid))


def stationary_density(params: ModelParams, n_nodes: int = 400, n_table: int = 4096) -> StationaryDensity:
    """Normalised stationary density of the frequency diffusion."""
    d = to_diffusion_scale(params)
    d.require_positive_mutation()
    a, b = 2.0 * d.mu2, 2.0 * d.mu1
    # scipy evaluates a 0/0 it then discards when the two exponents sum to -1
    with np.errstate(invalid="ignore", divide="ignore"):
        x, w = special.roots_jacobi(n_nodes, b - 1.0, a - 1.0)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(w))):
        raise ArithmeticError("Gauss-Jacobi rule failed")
    p = 0.5 * (1.0 + x)
    # (1-x)^(b-1) (1+x)^(a-1) dx = 2^(a+b-1) p^(a-1) q^(b-1) dp
    G = selection_integral(d.selection, p)
    Gmax = float(np.max(G)) if d.selection.kind != "directional" else max(0.0, 2.0 * d.selection.s0)
    raw = w * np.exp(G - Gmax) / 2.0 ** (a + b - 1.0)
    Z = float(np.sum(raw))
    weights = raw / Z
    beta = math.exp(-Gmax) / Z
    # inverse-cdf table in the Beta(a, b) probability scale u, where the
    # density becomes the smooth ratio exp(G) * B(a, b) * beta
    u_uni = np.linspace(0.0, 1.0, n_table + 1)
    p_uni = np.linspace(0.0, 1.0, n_table + 1)
    u = np.unique(np.concatenate((u_uni, special.betainc(a, b, p_uni))))
    pu = special.betaincinv(a, b, u)
    ratio = np.exp(selection_integral(d.selection, pu) - Gmax)
    H = integrate.cumulative_trapezoid(ratio, u, initial=0.0)
    H /= H[-1]
    return StationaryDensity(d, beta, p, weights, u, H)


def sample_stationary(density: StationaryDensity, rng: np.random.Generator, size=None, p_range=None):
    """Draw frequencies from the stationary law by inverse-cdf sampling.

    ``p_range`` restricts the draw to a half-open frequency interval.
    """
    lo, hi = (0.0, 1.0) if p_range is None else (float(density.cdf(p_range[0])), float(density.cdf(p_range[1])))
    v = lo + (hi - lo) * rng.random(size)
    out = density.ppf(v)
    return float(out) if np.ndim(out) == 0 else out


# path simulation ------------------------------------------------------------------


@dataclass(frozen=True)
class DiffusionPath:
    times: np.ndarray
    values: np.ndarray


@numba.njit(cache=True)
def _reflect(p, eps):
    if p < eps:
        p = 2.0 * eps - p
    if p > 1.0 - eps:
        p = 2.0 * (1.0 - eps) - p
    if p < 0.0:
        p = 0.0
    if p > 1.0:
        p = 1.0
    return p


@numba.njit(cache=True)
def _euler_path(gen, p0, dt, n_steps, record_every, mu1, mu2, sel_kind, s0, p_eq, sel_x, sel_v, noise):
    n_rec = n_steps // record_every + 1
    out = np.empty(n_rec)
    out[0] = p0
    p = p0
    sq = math.sqrt(dt)
    k = 1
    for step in range(1, n_steps + 1):
        s = _sel_eval(p, sel_kind, s0, p_eq, sel_x, sel_v)
        q = 1.0 - p
        b = 0.5 * (s * p * q - mu1 * p + mu2 * q)
        a = 0.5 * p * q
        p = p + b * dt + noise * math.sqrt(a) * sq * gen.standard_normal()
        p = _reflect(p, dt)
        if step % record_every == 0:
            out[k] = p
            k += 1
    return out


@numba.njit(cache=True)
def _cir_step(gen, x, dt, alpha, beta, sig2):
    """Exact transition of dX = (alpha - beta X) dt + sqrt(sig2 X) dW over dt."""
    if abs(beta) * dt > 1e-10:
        c = sig2 * (-math.expm1(-beta * dt)) / (4.0 * beta)
    else:
        c = sig2 * dt / 4.0
    d = 4.0 * alpha / sig2
    lam = x * math.exp(-beta * dt) / c
    k = gen.poisson(0.5 * lam) if lam > 0.0 else 0
    return c * 2.0 * gen.gamma(0.5 * d + k, 1.0)


@numba.njit(cache=True)
def _split_step(gen, p, q, dt, mu1, mu2, s):
    """Boundary-exact step for the frequency pair (p, q).

    The minor frequency is advanced by the exact square-root (CIR)
    transition with q (resp. p) frozen in the noise and selection terms, so
    the process keeps the p^(2 mu2 - 1) behaviour at the endpoints. Returns
    the new (p, q), each computed directly to keep full relative precision.
    """
    if p <= q:
        x = _cir_step(gen, p, dt, 0.5 * mu2, 0.5 * (mu1 + mu2) - 0.5 * s * q, 0.5 * q)
        if x > 1.0:
            x = 1.0
        return x, 1.0 - x
    x = _cir_step(gen, q, dt, 0.5 * mu1, 0.5 * (mu1 + mu2) + 0.5 * s * p, 0.5 * p)
    if x > 1.0:
        x = 1.0
    return 1.0 - x, x


@numba.njit(cache=True)
def _split_path(gen, p0, dt, n_steps, record_every, mu1, mu2, sel_kind, s0, p_eq, sel_x, sel_v):
    n_rec = n_steps // record_every + 1
    out = np.empty(n_rec)
    out[0] = p0
    p = p0
    q = 1.0 - p0
    k = 1
    for step in range(1, n_steps + 1):
        s = _sel_eval(p, sel_kind, s0, p_eq, sel_x, sel_v)
        p, q = _split_step(gen, p, q, dt, mu1, mu2, s)
        if step % record_every == 0:
            out[k] = p
            k += 1
    return out


@numba.njit(cache=True)
def _sel_eval(p, kind, s0, p_eq, xs, vs):
    if kind == 0:
        return s0
    if kind == 1:
        return s0 * (p_eq - p)
    return np.interp(p, xs, vs)


def selection_arrays(profile):
    """Numeric encoding of a selection profile for compiled kernels."""
    kind = {"directional": 0, "balancing": 1, "tabulated": 2}[profile.kind]
    if profile.kind == "tabulated":
        xs = np.array([x for x, _ in profile.breakpoints], dtype=float)
        vs = np.array([v for _, v in profile.breakpoints], dtype=float)
    else:
        xs = np.zeros(1)
        vs = np.zeros(1)
    return kind, float(profile.s0), float(profile.p0), xs, vs


def simulate_path(
    params: ModelParams,
    p0: float,
    dt: float,
    horizon: float,
    rng: np.random.Generator,
    record_every: int = 1,
    noise: bool = True,
    scheme: str = "em",
) -> DiffusionPath:
    """Approximate frequency path on a fixed time step.

    ``scheme='em'`` is Euler-Maruyama with reflection off an eps = dt
    collar; ``noise=False`` then integrates the drift flow. ``scheme='split'``
    advances the minor frequency by the exact square-root diffusion step with
    frozen coefficients, which resolves the endpoint behaviour that the
    collar cuts off when 2 mu < 1.
    """
    if scheme not in ("em", "split"):
        raise ValueError("scheme must be 'em' or 'split'")
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    d = to_diffusion_scale(params)
    n_steps = int(round(horizon / dt))
    kind, s0, p_eq, xs, vs = selection_arrays(d.selection)
    if scheme == "split":
        if not noise:
            raise ValueError("the split scheme is stochastic only")
        vals = _split_path(rng, float(p0), float(dt), n_steps, int(record_every), d.mu1, d.mu2, kind, s0, p_eq, xs, vs)
    else:
        vals = _euler_path(rng, float(p0), float(dt), n_steps, int(record_every), d.mu1, d.mu2, kind, s0, p_eq, xs, vs, 1.0 if noise else 0.0)
    times = np.arange(len(vals)) * dt * record_every
    return DiffusionPath(times, vals)
