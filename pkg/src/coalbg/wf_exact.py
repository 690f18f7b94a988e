"""Exact finite-N Wright-Fisher chain for the selected locus and the
identity-in-state recursion for a sample of two neutral genes."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import binom

from .core import ModelParams, eval_selection, wf_generation_rates

__all__ = [
    "post_selection_freq",
    "post_mutation_freq",
    "transition_matrix",
    "stationary_distribution",
    "reversed_chain",
    "migration_fractions",
    "MigrationFractions",
    "identity_update",
    "identity_fixed_point",
    "WfIdentityVector",
    "detailed_balance_residual",
]


def post_selection_freq(p, s):
    """Frequency of P after one round of selection, p(1+s)/(1+sp)."""
    p = np.asarray(p, dtype=float)
    s = np.asarray(s, dtype=float)
    den = 1.0 + s * p
    if np.any(den <= 0.0):
        raise ValueError("degenerate selection denominator 1 + s p <= 0")
    out = p * (1.0 + s) / den
    return float(out) if out.ndim == 0 else out


def post_mutation_freq(p_star, mu1, mu2):
    """Frequency of P after mutation, (1 - mu1) p* + mu2 (1 - p*)."""
    p_star = np.asarray(p_star, dtype=float)
    out = (1.0 - mu1) * p_star + mu2 * (1.0 - p_star)
    return float(out) if out.ndim == 0 else out


def _frequencies(wf: ModelParams):
    n2 = 2 * wf.N
    p = np.arange(n2 + 1) / n2
    ps = post_selection_freq(p, eval_selection(wf.selection, p))
    pss = post_mutation_freq(ps, wf.mu1, wf.mu2)
    return p, ps, pss


def transition_matrix(params: ModelParams, N: int | None = None) -> np.ndarray:
    """Binomial transition matrix P[i, j] on copy numbers 0..2N."""
    wf = wf_generation_rates(params, N)
    n2 = 2 * wf.N
    _, _, pss = _frequencies(wf)
    j = np.arange(n2 + 1)
    P = binom.pmf(j[None, :], n2, np.clip(pss, 0.0, 1.0)[:, None])
    # remove the last few ulps of normalisation error
    return P / P.sum(axis=1, keepdims=True)


def stationary_distribution(P: np.ndarray, tol: float = 1e-12, max_iter: int = 5_000_000) -> np.ndarray:
    """Left fixed vector of ``P`` by power iteration, stopping at an l1 step below ``tol``."""
    n = P.shape[0]
    psi = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        nxt = psi @ P
        nxt /= nxt.sum()
        if np.abs(nxt - psi).sum() < tol:
            return nxt
        psi = nxt
    raise RuntimeError("power iteration did not converge")


def reversed_chain(P: np.ndarray, psi: np.ndarray) -> np.ndarray:
    """Time-reversed chain, G[j, i] = psi_i P[i, j] / psi_j."""
    psi = np.asarray(psi, dtype=float)
    if np.any(psi <= 0.0):
        raise ValueError("stationary distribution has a zero entry")
    return (psi[None, :] * P.T) / psi[:, None]


def detailed_balance_residual(P: np.ndarray, psi: np.ndarray) -> float:
    """max |psi_i P_ij - psi_j P_ji|; zero iff the chain is reversible."""
    F = psi[:, None] * P
    return float(np.max(np.abs(F - F.T)))


@dataclass(frozen=True)
class MigrationFractions:
    m_P: np.ndarray | float
    m_Q: np.ndarray | float
    mt_P: np.ndarray | float
    mt_Q: np.ndarray | float

    def __iter__(self):
        return iter((self.m_P, self.m_Q, self.mt_P, self.mt_Q))


def migration_fractions(p, params: ModelParams, N: int | None = None) -> MigrationFractions:
    """Fractions of P (Q) genes whose parental gene sat on the other background.

    ``m_P``, ``m_Q`` count mutation only; ``mt_P``, ``mt_Q`` also include
    recombination at rate r.
    """
    wf = wf_generation_rates(params, N) if (N is not None or params.N is not None) else params
    p = np.asarray(p, dtype=float)
    ps = post_selection_freq(p, eval_selection(wf.selection, p))
    qs = 1.0 - ps
    pss = post_mutation_freq(ps, wf.mu1, wf.mu2)
    qss = 1.0 - pss
    mu1, mu2, r = wf.mu1, wf.mu2, wf.r
    den_P = (1.0 - mu1) * ps + mu2 * qs
    den_Q = (1.0 - mu2) * qs + mu1 * ps
    if np.any(den_P <= 0.0) or np.any(den_Q <= 0.0):
        raise ValueError("migration fraction denominator vanishes")
    m_P = mu2 * qs / den_P
    m_Q = mu1 * ps / den_Q
    mt_P = r * (1.0 - m_Q) * qss + (1.0 - r * qss) * m_P
    mt_Q = r * pss * (1.0 - m_P) + (1.0 - r * pss) * m_Q
    conv = (lambda x: float(x)) if p.ndim == 0 else (lambda x: x)
    return MigrationFractions(conv(m_P), conv(m_Q), conv(mt_P), conv(mt_Q))


@dataclass(frozen=True)
class WfIdentityVector:
    """Identity probabilities indexed by copy number j = 0..2N.

    Undefined entries (configurations that cannot occur) hold NaN and are
    flagged False in the ``defined_*`` masks.
    """

    N: int
    f_PP: np.ndarray
    f_PQ: np.ndarray
    f_QQ: np.ndarray
    iterations: int
    psi: np.ndarray

    @property
    def j(self) -> np.ndarray:
        return np.arange(2 * self.N + 1)

    @property
    def p(self) -> np.ndarray:
        return self.j / (2 * self.N)

    @property
    def defined_PP(self) -> np.ndarray:
        return self.j >= 1

    @property
    def defined_PQ(self) -> np.ndarray:
        return (self.j >= 1) & (self.j <= 2 * self.N - 1)

    @property
    def defined_QQ(self) -> np.ndarray:
        return self.j <= 2 * self.N - 1

    @property
    def pinned_PP(self) -> np.ndarray:
        return self.j == 1

    @property
    def pinned_QQ(self) -> np.ndarray:
        return self.j == 2 * self.N - 1

    def components(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.f_PP, self.f_PQ, self.f_QQ

    def fbar(self) -> np.ndarray:
        """p^2 f_PP + 2pq f_PQ + q^2 f_QQ, with zero weight on undefined entries."""
        p = self.p
        q = 1.0 - p
        z = lambda a: np.nan_to_num(a, nan=0.0)
        return p * p * z(self.f_PP) + 2 * p * q * z(self.f_PQ) + q * q * z(self.f_QQ)

    def stationary_average(self) -> float:
        return float(np.sum(self.psi * self.fbar()))

    def to_rows(self):
        for k in range(2 * self.N + 1):
            yield (k, self.p[k], self.f_PP[k], self.f_PQ[k], self.f_QQ[k])


def _pre_weights(mt_P, mt_Q):
    """Coefficients of (f_PP, f_PQ, f_QQ) at the parent state in the starred sums."""
    a, b = mt_P, mt_Q
    w_PP = ((1 - a) ** 2, 2 * a * (1 - a), a * a)
    w_PQ = ((1 - a) * b, a * b + (1 - a) * (1 - b), a * (1 - b))
    w_QQ = (b * b, 2 * b * (1 - b), (1 - b) ** 2)
    return w_PP, w_PQ, w_QQ


def identity_update(f, Gamma, mt_P, mt_Q, nu, N):
    """One application of the two-step identity recursion.

    ``f`` holds (f_PP, f_PQ, f_QQ) with undefined entries set to 0; the
    returned triple has the same convention and the two pins applied.
    """
    n2 = 2 * N
    j = np.arange(n2 + 1)
    w_PP, w_PQ, w_QQ = _pre_weights(mt_P, mt_Q)
    PP, PQ, QQ = f
    s_PP = Gamma @ (w_PP[0] * PP + w_PP[1] * PQ + w_PP[2] * QQ)
    s_PQ = Gamma @ (w_PQ[0] * PP + w_PQ[1] * PQ + w_PQ[2] * QQ)
    s_QQ = Gamma @ (w_QQ[0] * PP + w_QQ[1] * PQ + w_QQ[2] * QQ)
    keep = (1.0 - nu) ** 2
    new_PP = np.zeros(n2 + 1)
    new_QQ = np.zeros(n2 + 1)
    jp = j[1:]
    new_PP[1:] = keep * (s_PP[1:] + (1.0 - s_PP[1:]) / jp)
    jq = n2 - j[:-1]
    new_QQ[:-1] = keep * (s_QQ[:-1] + (1.0 - s_QQ[:-1]) / jq)
    new_PQ = keep * s_PQ
    new_PQ[0] = new_PQ[n2] = 0.0
    new_PP[1] = 1.0
    new_QQ[n2 - 1] = 1.0
    return new_PP, new_PQ, new_QQ


def identity_fixed_point(
    params: ModelParams,
    tol: float = 1e-10,
    N: int | None = None,
    max_iter: int = 10_000_000,
) -> WfIdentityVector:
    """Fixed point of the identity recursion, iterated from zero.

    Parent-state weights are computed at the parent frequency i/(2N); their
    support on impossible configurations vanishes automatically, since the
    tilde migration fractions equal one at the monomorphic states.
    """
    wf = wf_generation_rates(params, N)
    wf.require_positive_mutation()
    n2 = 2 * wf.N
    P = transition_matrix(wf)
    psi = stationary_distribution(P)
    Gamma = reversed_chain(P, psi)
    p = np.arange(n2 + 1) / n2
    mf = migration_fractions(p, wf)
    f = (np.zeros(n2 + 1), np.zeros(n2 + 1), np.zeros(n2 + 1))
    for it in range(1, max_iter + 1):
        new = identity_update(f, Gamma, mf.mt_P, mf.mt_Q, wf.nu, wf.N)
        delta = max(float(np.max(np.abs(a - b))) for a, b in zip(new, f))
        f = new
        if delta < tol:
            break
    else:
        raise RuntimeError("identity recursion did not converge")
    PP, PQ, QQ = (x.copy() for x in f)
    PP[0] = np.nan
    PQ[0] = PQ[n2] = np.nan
    QQ[n2] = np.nan
    return WfIdentityVector(wf.N, PP, PQ, QQ, it, psi)
