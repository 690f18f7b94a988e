"""Shared parameter types, selection profiles, grids and random streams."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any, Mapping, Sequence

import numpy as np

__all__ = [
    "SelectionProfile",
    "ModelParams",
    "SampleState",
    "FrequencyGrid",
    "eval_selection",
    "selection_integral",
    "to_diffusion_scale",
    "wf_generation_rates",
    "moran_event_rates",
    "params_from_mapping",
    "params_to_mapping",
    "load_config",
    "replicate_stream",
    "SCALE_CONVENTIONS",
]

SCALE_CONVENTIONS = ("diffusion", "per_generation", "wright_fisher")
_SCALE_ALIASES = {"diffusion_scale": "diffusion", "moran": "per_generation", "wf": "wright_fisher"}


@dataclass(frozen=True)
class SelectionProfile:
    """Frequency-dependent selection coefficient s(p).

    ``kind`` is one of ``directional`` (constant ``s0``), ``balancing``
    (``s0 * (p0 - p)``) or ``tabulated`` (piecewise-linear through
    ``breakpoints``, held constant outside the first and last abscissa).
    """

    kind: str = "directional"
    s0: float = 0.0
    p0: float = 0.5
    breakpoints: tuple[tuple[float, float], ...] = ()

    def __post_init__(self) -> None:
        if self.kind not in ("directional", "balancing", "tabulated"):
            raise ValueError(f"unknown selection kind {self.kind!r}")
        if not math.isfinite(self.s0):
            raise ValueError("s0 must be finite")
        if self.kind == "balancing" and not 0.0 < self.p0 < 1.0:
            raise ValueError("balancing p0 must lie in (0, 1)")
        if self.kind == "tabulated":
            bp = tuple((float(x), float(v)) for x, v in self.breakpoints)
            if len(bp) < 1:
                raise ValueError("tabulated profile needs at least one breakpoint")
            xs = [x for x, _ in bp]
            if any(b <= a for a, b in zip(xs, xs[1:])):
                raise ValueError("breakpoint abscissae must be strictly increasing")
            if not all(math.isfinite(v) for _, v in bp):
                raise ValueError("breakpoint values must be finite")
            object.__setattr__(self, "breakpoints", bp)

    @classmethod
    def neutral(cls) -> SelectionProfile:
        return cls("directional", 0.0)

    @classmethod
    def directional(cls, s0: float) -> SelectionProfile:
        return cls("directional", float(s0))

    @classmethod
    def balancing(cls, s0: float, p0: float = 0.5) -> SelectionProfile:
        return cls("balancing", float(s0), float(p0))

    @classmethod
    def tabulated(cls, breakpoints: Sequence[tuple[float, float]]) -> SelectionProfile:
        return cls("tabulated", 0.0, 0.5, tuple(breakpoints))

    @property
    def is_neutral(self) -> bool:
        if self.kind == "tabulated":
            return all(v == 0.0 for _, v in self.breakpoints)
        return self.s0 == 0.0

    def scaled(self, factor: float) -> SelectionProfile:
        """Profile with every selection value multiplied by ``factor``."""
        if self.kind == "tabulated":
            return replace(self, breakpoints=tuple((x, v * factor) for x, v in self.breakpoints))
        return replace(self, s0=self.s0 * factor)

    def lipschitz_constant(self) -> float:
        if self.kind == "directional":
            return 0.0
        if self.kind == "balancing":
            return abs(self.s0)
        xs = np.array([x for x, _ in self.breakpoints])
        vs = np.array([v for _, v in self.breakpoints])
        if len(xs) < 2:
            return 0.0
        return float(np.max(np.abs(np.diff(vs) / np.diff(xs))))

    def __call__(self, p):
        return eval_selection(self, p)


def eval_selection(profile: SelectionProfile, p):
    """Evaluate s(p); accepts scalars or arrays."""
    p_arr = np.asarray(p, dtype=float)
    if profile.kind == "directional":
        out = np.full_like(p_arr, profile.s0)
    elif profile.kind == "balancing":
        out = profile.s0 * (profile.p0 - p_arr)
    else:
        xs = [x for x, _ in profile.breakpoints]
        vs = [v for _, v in profile.breakpoints]
        out = np.interp(p_arr, xs, vs)
    return float(out) if np.ndim(out) == 0 else out


def selection_integral(profile: SelectionProfile, p):
    """G(p) = integral of 2 s(y) dy from 0 to p, in closed form."""
    p_arr = np.asarray(p, dtype=float)
    if profile.kind == "directional":
        out = 2.0 * profile.s0 * p_arr
    elif profile.kind == "balancing":
        out = 2.0 * profile.s0 * (profile.p0 * p_arr - 0.5 * p_arr * p_arr)
    else:
        xs = np.array([x for x, _ in profile.breakpoints])
        vs = np.array([v for _, v in profile.breakpoints])
        # extend flat to cover [0, 1] so each piece is linear
        knots = np.concatenate(([min(0.0, xs[0])], xs, [max(1.0, xs[-1])]))
        vals = np.concatenate(([vs[0]], vs, [vs[-1]]))
        keep = np.concatenate(([True], np.diff(knots) > 0))
        knots, vals = knots[keep], vals[keep]
        seg = np.diff(knots)
        cum = np.concatenate(([0.0], np.cumsum(seg * (vals[:-1] + vals[1:]))))
        # shift so that G(0) = 0
        k = np.clip(np.searchsorted(knots, p_arr, side="right") - 1, 0, len(seg) - 1)
        slope = (vals[k + 1] - vals[k]) / seg[k]
        d = p_arr - knots[k]
        out = cum[k] + 2.0 * (vals[k] * d + 0.5 * slope * d * d)
        k0 = max(int(np.searchsorted(knots, 0.0, side="right")) - 1, 0)
        d0 = 0.0 - knots[k0]
        s0 = (vals[k0 + 1] - vals[k0]) / seg[k0]
        out = out - (cum[k0] + 2.0 * (vals[k0] * d0 + 0.5 * s0 * d0 * d0))
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class ModelParams:
    """Model rates, optional population size, selection profile and scale flag.

    ``scale`` selects how the numeric rates are to be read:

    * ``diffusion``: rates of the limiting diffusion, time in units of N
      generations;
    * ``per_generation``: per-event rates of the Moran model; the diffusion
      rates are N times larger for every parameter;
    * ``wright_fisher``: per-generation Wright-Fisher probabilities; the
      diffusion rates are 2N*mu1, 2N*mu2, 2N*r, 2N*s and N*nu.
    """

    mu1: float
    mu2: float
    r: float = 0.0
    nu: float = 0.0
    selection: SelectionProfile = field(default_factory=SelectionProfile.neutral)
    N: int | None = None
    scale: str = "diffusion"

    def __post_init__(self) -> None:
        scale = _SCALE_ALIASES.get(self.scale, self.scale)
        if scale not in SCALE_CONVENTIONS:
            raise ValueError(f"unknown scale convention {self.scale!r}")
        object.__setattr__(self, "scale", scale)
        for name in ("mu1", "mu2", "r", "nu"):
            v = float(getattr(self, name))
            if not (v >= 0.0 and math.isfinite(v)):
                raise ValueError(f"{name} must be a finite nonnegative number")
            object.__setattr__(self, name, v)
        if self.N is not None:
            if int(self.N) != self.N or self.N < 1:
                raise ValueError("N must be a positive integer")
            object.__setattr__(self, "N", int(self.N))
        if scale != "diffusion" and self.N is None:
            raise ValueError(f"scale {scale!r} requires N")

    @property
    def symmetric(self) -> bool:
        """True when relabelling P<->Q (p -> 1-p) maps the model to itself."""
        if self.mu1 != self.mu2:
            return False
        sel = self.selection
        if sel.kind == "directional":
            return sel.s0 == 0.0
        if sel.kind == "balancing":
            return sel.p0 == 0.5 or sel.s0 == 0.0
        grid = np.linspace(0.0, 1.0, 257)
        return bool(np.allclose(eval_selection(sel, grid), -eval_selection(sel, 1 - grid), atol=1e-14))

    def require_positive_mutation(self) -> None:
        if not (self.mu1 > 0.0 and self.mu2 > 0.0):
            raise ValueError("mu1 and mu2 must both be strictly positive")

    def with_(self, **changes: Any) -> ModelParams:
        return replace(self, **changes)

    def mirrored(self) -> ModelParams:
        """Parameters of the model seen with the labels P and Q exchanged."""
        sel = self.selection
        if sel.kind == "directional":
            msel = SelectionProfile.directional(-sel.s0)
        elif sel.kind == "balancing":
            msel = SelectionProfile.balancing(sel.s0, 1.0 - sel.p0)
        else:
            msel = SelectionProfile.tabulated([(1.0 - x, -v) for x, v in reversed(sel.breakpoints)])
        return replace(self, mu1=self.mu2, mu2=self.mu1, selection=msel)


def to_diffusion_scale(params: ModelParams) -> ModelParams:
    """Equivalent parameters in diffusion units; identity on diffusion input."""
    if params.scale == "diffusion":
        return params
    if params.N is None:
        raise ValueError("conversion to diffusion scale requires N")
    n = float(params.N)
    if params.scale == "per_generation":
        f_mu = f_r = f_s = f_nu = n
    else:
        f_mu = f_r = f_s = 2.0 * n
        f_nu = n
    return replace(
        params,
        mu1=params.mu1 * f_mu,
        mu2=params.mu2 * f_mu,
        r=params.r * f_r,
        nu=params.nu * f_nu,
        selection=params.selection.scaled(f_s),
        scale="diffusion",
    )


def _require_N(params: ModelParams, N: int | None) -> int:
    n = N if N is not None else params.N
    if n is None:
        raise ValueError("a population size N is required")
    return int(n)


def wf_generation_rates(params: ModelParams, N: int | None = None) -> ModelParams:
    """Per-generation Wright-Fisher probabilities for a finite population.

    Per-generation inputs are used as given; diffusion-scale inputs are
    mapped down with the Wright-Fisher factors (2N for mu, r, s and N for nu).
    """
    n = _require_N(params, N)
    if params.scale in ("per_generation", "wright_fisher"):
        return replace(params, N=n)
    return replace(
        params,
        mu1=params.mu1 / (2 * n),
        mu2=params.mu2 / (2 * n),
        r=params.r / (2 * n),
        nu=params.nu / n,
        selection=params.selection.scaled(1.0 / (2 * n)),
        N=n,
        scale="wright_fisher",
    )


def moran_event_rates(params: ModelParams, N: int | None = None) -> ModelParams:
    """Per-event Moran rates: diffusion-scale rates divided by N."""
    n = _require_N(params, N)
    if params.scale == "per_generation" and (N is None or N == params.N):
        return params
    d = to_diffusion_scale(params)
    return replace(
        d,
        mu1=d.mu1 / n,
        mu2=d.mu2 / n,
        r=d.r / n,
        nu=d.nu / n,
        selection=d.selection.scaled(1.0 / n),
        N=n,
        scale="per_generation",
    )


@dataclass(frozen=True)
class SampleState:
    """Number of sample lineages currently in background P (n1) and Q (n2)."""

    n1: int
    n2: int

    def __post_init__(self) -> None:
        if self.n1 < 0 or self.n2 < 0 or self.n1 + self.n2 not in (1, 2):
            raise ValueError(f"invalid sample state ({self.n1}, {self.n2})")

    @property
    def label(self) -> str:
        return "P" * self.n1 + "Q" * self.n2

    @classmethod
    def parse(cls, text: str) -> SampleState:
        t = text.strip().upper()
        if set(t) <= {"P", "Q"} and t:
            return cls(t.count("P"), t.count("Q"))
        a, b = (int(v) for v in t.replace("(", "").replace(")", "").split(","))
        return cls(a, b)


@dataclass(frozen=True)
class FrequencyGrid:
    """Uniform grid on [0, 1] with ``n_interior`` interior nodes."""

    n_interior: int = 400

    def __post_init__(self) -> None:
        if self.n_interior < 8:
            raise ValueError("grid too coarse: need at least 8 interior points")

    @property
    def intervals(self) -> int:
        return self.n_interior + 1

    @property
    def h(self) -> float:
        return 1.0 / self.intervals

    @property
    def nodes(self) -> np.ndarray:
        """All nodes including the two endpoints."""
        return np.linspace(0.0, 1.0, self.intervals + 1)

    @property
    def points(self) -> np.ndarray:
        return self.nodes[1:-1]

    def refined(self) -> FrequencyGrid:
        return FrequencyGrid(2 * self.intervals - 1)


def replicate_stream(seed: int, index: int, domain: int = 0) -> np.random.Generator:
    """Private random stream for replicate ``index`` under a master ``seed``.

    Streams depend only on (seed, domain, index), so results do not depend on
    how replicates are split between workers.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(domain), int(index)))
    return np.random.Generator(np.random.PCG64(ss))


# configuration -------------------------------------------------------------

_CONFIG_KEYS = ("mu1", "mu2", "r", "nu", "N", "scale", "selection.kind", "selection.s0", "selection.p0")


def _flatten(d: Mapping[str, Any], prefix: str = "") -> dict[str, Any]:
    out: dict[str, Any] = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, Mapping):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def params_from_mapping(data: Mapping[str, Any], base: ModelParams | None = None) -> ModelParams:
    """Build ModelParams from a flat or nested key-value mapping."""
    flat = _flatten(data)
    extra = set(flat) - set(_CONFIG_KEYS) - {"selection.breakpoints"}
    if extra:
        raise ValueError(f"unknown configuration keys: {sorted(extra)}")
    cur = params_to_mapping(base) if base is not None else {}
    cur.update(flat)
    kind = cur.get("selection.kind", "directional")
    if kind == "tabulated":
        sel = SelectionProfile.tabulated([tuple(x) for x in cur.get("selection.breakpoints", ())])
    elif kind == "neutral":
        sel = SelectionProfile.neutral()
    else:
        sel = SelectionProfile(kind, float(cur.get("selection.s0", 0.0)), float(cur.get("selection.p0", 0.5)))
    n = cur.get("N")
    return ModelParams(
        mu1=float(cur["mu1"]),
        mu2=float(cur["mu2"]),
        r=float(cur.get("r", 0.0)),
        nu=float(cur.get("nu", 0.0)),
        selection=sel,
        N=None if n in (None, "", "none", "None") else int(n),
        scale=str(cur.get("scale", "diffusion")),
    )


def params_to_mapping(params: ModelParams) -> dict[str, Any]:
    out: dict[str, Any] = {
        "mu1": params.mu1,
        "mu2": params.mu2,
        "r": params.r,
        "nu": params.nu,
        "N": params.N,
        "scale": params.scale,
        "selection.kind": params.selection.kind,
        "selection.s0": params.selection.s0,
        "selection.p0": params.selection.p0,
    }
    if params.selection.kind == "tabulated":
        out["selection.breakpoints"] = [list(b) for b in params.selection.breakpoints]
    return out


def load_config(path, base: ModelParams | None = None) -> ModelParams:
    """Read a YAML key-value file (flat dotted keys or nested) into ModelParams."""
    import yaml

    with open(path, encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, Mapping):
        raise ValueError("configuration must be a key-value mapping")
    return params_from_mapping(data, base)
