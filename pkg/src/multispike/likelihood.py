"""Log-likelihood ratios of sample-covariance eigenvalues under spiked alternatives.

Two routes are provided.  The asymptotic route evaluates the closed-form
approximation of the log-likelihood ratio through the centred log spectral
statistic ``Δ_p``.  The Monte Carlo route estimates the exact ratio, which is a
Haar integral over the orthogonal group, by averaging over random orthonormal
r-frames.  The second route serves as an oracle for the first.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import DomainError, NumericalError
from .mp_law import MPLaw, in_omega, mp_log_integral, mp_r_transform, z0
from .spiked_sim import EigenData, haar_frames, stream

MC_CHUNK = 8192


@dataclass(frozen=True)
class ThetaSpec:
    """Spherical-integral parameters θ with ``v_j = R(2θ_j)``."""

    theta: np.ndarray
    v: np.ndarray
    admissible: bool

    @property
    def r(self) -> int:
        return self.theta.size

    @classmethod
    def from_theta(cls, law: MPLaw, theta: Sequence[float], eps: float = 1e-3, eta: float = 1e-3) -> "ThetaSpec":
        th = np.asarray(theta, dtype=float)
        v = np.array([mp_r_transform(law, 2.0 * t) for t in th])
        ok = all(in_omega(law, 2.0 * t, eps, eta) for t in th)
        return cls(th, v, ok)


def _spikes(h) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(h, dtype=float))
    if arr.ndim != 1 or not np.all(np.isfinite(arr)):
        raise DomainError(f"spike vector must be a finite 1-d sequence, got {h!r}")
    return arr


def theta_from_spikes(law: MPLaw, h) -> ThetaSpec:
    h = _spikes(h)
    if np.any(h <= 0.0) or np.any(h >= law.sqrt_c):
        raise DomainError(f"spikes must lie in (0, sqrt(c)) = (0, {law.sqrt_c}), got {h}")
    return ThetaSpec(h / (2.0 * law.c * (1.0 + h)), 1.0 + h, True)


def _sum_log_shifted(eig: EigenData, z: float) -> float:
    # Σ_i ln(z - λ_i) over all p eigenvalues, zeros included.
    s = float(np.sum(np.log(z - eig.lam)))
    return s + eig.n_zero * math.log(z)


def delta_p(eig: EigenData, law: MPLaw, h_j: float) -> float:
    """Centred statistic ``Σ ln(z0 - λ_i) - p ∫ ln(z0 - λ) dF``."""
    z = z0(law, h_j)
    if z <= eig.lam[0]:
        raise DomainError(
            f"z0(h={h_j})={z:.6g} does not exceed the largest eigenvalue {eig.lam[0]:.6g}"
        )
    return _sum_log_shifted(eig, z) - eig.p * mp_log_integral(law, h_j)


def _pair_term(h: np.ndarray, c: float) -> float:
    # ½ Σ_j Σ_{s<=j} ln(1 - h_j h_s / c)
    outer = np.log1p(-np.outer(h, h) / c)
    return 0.5 * float(np.sum(np.tril(outer)))


def loglik_lambda(eig: EigenData, law: MPLaw, h) -> float:
    """Asymptotic log-likelihood ratio of the eigenvalues λ at spikes ``h``."""
    h = _spikes(h)
    if np.any(h < 0.0):
        raise DomainError(f"spikes must be nonnegative, got {h}")
    h = h[h > 0.0]
    if h.size == 0:
        return 0.0
    if np.any(h >= law.sqrt_c):
        raise DomainError(f"spikes must be below sqrt(c)={law.sqrt_c}, got {h}")
    lead = sum(-0.5 * delta_p(eig, law, hj) for hj in h)
    return lead + _pair_term(h, law.c)


def loglik_mu(eig: EigenData, law: MPLaw, h) -> float:
    """Asymptotic log-likelihood ratio of the normalised eigenvalues μ.

    The λ-formula and the ``S_p`` correction are evaluated on eigenvalues
    rescaled to trace ``p``, which makes the result a function of μ alone
    (exactly invariant to the noise scale).  When the data already have
    ``S_p = p`` this coincides with the unnormalised expression.
    """
    h = _spikes(h)
    norm = eig if eig.S_p == eig.p else eig.scaled(eig.p / eig.S_p)
    base = loglik_lambda(norm, law, h)
    total = float(np.sum(h))
    return base + total**2 / (4.0 * law.c) - (norm.S_p - norm.p) / (2.0 * law.c) * total


def loglik_grid(eig: EigenData, law: MPLaw, points: np.ndarray, variant: str = "lambda") -> np.ndarray:
    """Vectorised :func:`loglik_lambda` / :func:`loglik_mu` over rows of ``points``.

    Grid points sharing axis values reuse each ``Δ_p`` evaluation.  Points whose
    ``z0`` falls at or below the largest eigenvalue evaluate to ``+inf``: the
    likelihood ratio there is unbounded relative to the asymptotic form.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if variant == "mu":
        work = eig if eig.S_p == eig.p else eig.scaled(eig.p / eig.S_p)
    elif variant == "lambda":
        work = eig
    else:
        raise DomainError(f"unknown likelihood variant {variant!r}")
    if np.any(pts < 0.0) or np.any(pts >= law.sqrt_c):
        raise DomainError("grid points must lie in [0, sqrt(c))")
    values, inverse = np.unique(pts, return_inverse=True)
    inverse = inverse.reshape(pts.shape)
    half_delta = np.zeros(values.size)
    for k, hv in enumerate(values):
        if hv == 0.0:
            continue
        z = z0(law, hv)
        if z <= work.lam[0]:
            half_delta[k] = np.inf
        else:
            half_delta[k] = -0.5 * (_sum_log_shifted(work, z) - work.p * mp_log_integral(law, hv))
    lead = half_delta[inverse].sum(axis=1)
    outer = np.log1p(-pts[:, :, None] * pts[:, None, :] / law.c)
    tri = np.tril(np.ones((pts.shape[1], pts.shape[1]), dtype=bool))
    pair = 0.5 * outer[:, tri].sum(axis=1)
    out = lead + pair
    if variant == "mu":
        total = pts.sum(axis=1)
        out = out + total**2 / (4.0 * law.c)
    return out


def spherical_log_asymptotic(theta: ThetaSpec, eig: EigenData, law: MPLaw) -> float:
    """Second-order asymptotic log of the Haar integral ``∫ exp(p tr(ΘQ'ΛQ)) dQ``."""
    th, v = theta.theta, theta.v
    if th.size == 0 or np.all(th == 0.0):
        return 0.0
    tv = th * v
    args = 1.0 + 2.0 * tv[:, None] - 2.0 * th[:, None] * eig.lam[None, :]
    zero_args = 1.0 + 2.0 * tv
    if np.any(args <= 0.0) or np.any(zero_args <= 0.0):
        raise DomainError("a logarithm argument 1 + 2θv - 2θλ is nonpositive")
    corr = (1.0 - 4.0 * np.outer(tv, tv) * law.c)[np.tril_indices(th.size)]
    if np.any(corr <= 0.0):
        raise DomainError("correction factor 1 - 4 θ_j v_j θ_s v_s c is nonpositive")
    log_sum = np.sum(np.log(args), axis=1) + eig.n_zero * np.log(zero_args)
    lead = eig.p * float(np.sum(tv)) - 0.5 * float(np.sum(log_sum))
    return lead + 0.5 * float(np.sum(np.log(corr)))


def _mc_exponents(theta: np.ndarray, lam: np.ndarray, p: int, draws: int, rng: np.random.Generator) -> np.ndarray:
    frames = haar_frames(p, theta.size, draws, rng)
    m = lam.size
    sq = frames[:, :m, :] ** 2
    quad = np.einsum("i,kij->kj", lam, sq)
    return p * (quad @ theta)


def spherical_integral_mc_log(theta: ThetaSpec, eig: EigenData, draws: int, seed: int) -> tuple[float, float]:
    """Log of the Monte Carlo Haar-integral estimate and its delta-method std. error.

    Draws are processed in fixed-size chunks, each with its own derived stream,
    and combined by log-sum-exp so large exponents never overflow.
    """
    if draws < 1:
        raise DomainError(f"draws must be >= 1, got {draws}")
    th = np.asarray(theta.theta, dtype=float)
    if th.size == 0 or np.all(th == 0.0):
        return 0.0, 0.0
    log_s1, log_s2 = [], []
    for k, start in enumerate(range(0, draws, MC_CHUNK)):
        size = min(MC_CHUNK, draws - start)
        e = _mc_exponents(th, eig.lam, eig.p, size, stream(seed, k))
        log_s1.append(logsumexp(e))
        log_s2.append(logsumexp(2.0 * e))
    ls1, ls2 = logsumexp(log_s1), logsumexp(log_s2)
    log_mean = ls1 - math.log(draws)
    if draws == 1:
        return float(log_mean), 0.0
    ratio = math.exp(ls2 - 2.0 * ls1)  # Σw² / (Σw)²
    rel_var = max(draws * ratio - 1.0, 0.0) / (draws - 1)
    return float(log_mean), math.sqrt(rel_var)


def spherical_integral_mc(theta: ThetaSpec, eig: EigenData, draws: int, seed: int) -> tuple[float, float]:
    """Monte Carlo estimate of ``∫ exp(p tr(ΘQ'ΛQ)) dQ`` and its standard error."""
    log_mean, rel_se = spherical_integral_mc_log(theta, eig, draws, seed)
    if log_mean > 700.0:
        raise NumericalError(
            f"Haar integral estimate exp({log_mean:.1f}) overflows; use spherical_integral_mc_log"
        )
    est = math.exp(log_mean)
    return est, est * rel_se


def exact_loglik_lambda_mc(eig: EigenData, law: MPLaw, h, draws: int, seed: int) -> tuple[float, float]:
    """Monte Carlo evaluation of the exact λ log-likelihood ratio.

    Returns the estimate and its standard error on the log scale.
    """
    theta = theta_from_spikes(law, h)
    log_int, se = spherical_integral_mc_log(theta, eig, draws, seed)
    return -0.5 * eig.n * float(np.sum(np.log1p(_spikes(h)))) + log_int, se
