"""Closed-form Marchenko-Pastur quantities.

All functions take an :class:`MPLaw` describing the limiting spectral
distribution of ``(1/n) X X'`` for white Gaussian data with aspect ratio
``c = p/n``.  The continuous part lives on ``[a, b]``; when ``c > 1`` there is
an additional point mass ``1 - 1/c`` at zero which the density never includes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate, optimize

from .errors import DomainError

# Gauss-Legendre nodes on [0, 1], used by the vectorised CDF.
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(64)
_GL_NODES = 0.5 * (_GL_NODES + 1.0)
_GL_WEIGHTS = 0.5 * _GL_WEIGHTS


@dataclass(frozen=True)
class MPLaw:
    """Marchenko-Pastur law with aspect ratio ``c``."""

    c: float
    a: float = field(init=False)
    b: float = field(init=False)
    atom: float = field(init=False)

    def __post_init__(self) -> None:
        c = float(self.c)
        if not (c > 0.0 and math.isfinite(c)):
            raise DomainError(f"aspect ratio must be positive and finite, got {self.c!r}")
        root = math.sqrt(c)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "a", (1.0 - root) ** 2)
        object.__setattr__(self, "b", (1.0 + root) ** 2)
        object.__setattr__(self, "atom", max(0.0, 1.0 - 1.0 / c))

    @classmethod
    def from_dims(cls, p: int, n: int) -> "MPLaw":
        return cls(p / n)

    @property
    def sqrt_c(self) -> float:
        return math.sqrt(self.c)


def mp_density(law: MPLaw, x):
    """Density of the continuous part; zero off ``(a, b)``. Accepts arrays."""
    x_arr = np.asarray(x, dtype=float)
    inside = (x_arr > law.a) & (x_arr < law.b)
    safe = np.where(inside, x_arr, 0.5 * (law.a + law.b))
    val = np.sqrt((law.b - safe) * (safe - law.a)) / (2.0 * np.pi * law.c * safe)
    out = np.where(inside, val, 0.0)
    return float(out) if out.ndim == 0 else out


def _edge_weight(law: MPLaw, t):
    # Density times dλ/dt under λ = a + (b - a) sin²t; the √ edge singularity cancels.
    s2 = np.asarray(np.sin(t) ** 2)
    width = law.b - law.a
    lam = law.a + width * s2
    # s2/lam tends to 1/width at t = 0 when the lower edge is 0 (c = 1).
    ratio = np.divide(s2, lam, out=np.full(s2.shape, 1.0 / width), where=lam > 0.0)
    return width**2 * ratio * np.cos(t) ** 2 / (np.pi * law.c)


def mp_expectation(law: MPLaw, f: Callable[[float], float], **quad_kw) -> float:
    """Return ``∫ f dF`` including the atom, by adaptive quadrature.

    Uses the substitution ``λ = a + (b - a) sin²t`` so the square-root edges
    of the density do not degrade Gauss-Kronrod convergence.
    """
    opts = {"epsabs": 1e-13, "epsrel": 1e-13, "limit": 400}
    opts.update(quad_kw)
    width = law.b - law.a

    def integrand(t: float) -> float:
        lam = law.a + width * math.sin(t) ** 2
        return f(lam) * float(_edge_weight(law, t))

    val, _ = integrate.quad(integrand, 0.0, math.pi / 2.0, **opts)
    if law.atom > 0.0:
        val += law.atom * f(0.0)
    return val


def mp_cdf(law: MPLaw, x):
    """Distribution function of the full law (atom included). Accepts arrays."""
    x_arr = np.atleast_1d(np.asarray(x, dtype=float))
    frac = np.clip((x_arr - law.a) / (law.b - law.a), 0.0, 1.0)
    t_hi = np.arcsin(np.sqrt(frac))
    nodes = t_hi[:, None] * _GL_NODES[None, :]
    cont = t_hi * (_edge_weight(law, nodes) @ _GL_WEIGHTS)
    out = np.where(x_arr >= law.b, 1.0 - law.atom, cont)
    out = out + np.where(x_arr >= 0.0, law.atom, 0.0)
    out = np.clip(out, 0.0, 1.0)
    return float(out[0]) if np.ndim(x) == 0 else out


def mp_quantile(law: MPLaw, q: float) -> float:
    """Generalised inverse of :func:`mp_cdf` (returns 0 inside the atom)."""
    if not 0.0 <= q <= 1.0:
        raise DomainError(f"quantile level must lie in [0, 1], got {q}")
    if q <= law.atom:
        return 0.0
    if q >= 1.0:
        return law.b
    return optimize.brentq(lambda x: mp_cdf(law, x) - q, law.a, law.b, xtol=1e-14)


def _in_support(law: MPLaw, x: float) -> bool:
    if law.a <= x <= law.b:
        return True
    return law.atom > 0.0 and x == 0.0


def mp_hilbert(law: MPLaw, x: float) -> float:
    """Real Stieltjes transform ``∫ (x - λ)^{-1} dF(λ)`` off the support."""
    x = float(x)
    if _in_support(law, x):
        raise DomainError(f"x={x} lies in the support [{law.a}, {law.b}] of the MP law")
    c = law.c
    # (x - c - 1)² - 4c factored as (x - a)(x - b) to avoid cancellation near x = 0.
    root = math.copysign(math.sqrt((x - law.a) * (x - law.b)), x - c - 1.0)
    # Rationalised form of (x + c - 1 - root) / (2 c x); finite at x = 0 for c < 1.
    return 2.0 / (x + c - 1.0 + root)


def hilbert_image(law: MPLaw) -> list[tuple[float, float]]:
    """Open intervals making up the range of :func:`mp_hilbert`."""
    c, root = law.c, law.sqrt_c
    upper = 1.0 / (root * (1.0 + root))
    if c > 1.0:
        return [(-math.inf, 0.0), (0.0, upper), (1.0 / (root * (root - 1.0)), math.inf)]
    if c < 1.0:
        return [(-1.0 / (root * (1.0 - root)), 0.0), (0.0, upper)]
    return [(-math.inf, 0.0), (0.0, 0.5)]


def in_hilbert_image(law: MPLaw, y: float) -> bool:
    return any(lo < y < hi for lo, hi in hilbert_image(law))


def mp_k_transform(law: MPLaw, y: float) -> float:
    """Functional inverse of :func:`mp_hilbert`."""
    y = float(y)
    if not in_hilbert_image(law, y):
        raise DomainError(f"y={y} is outside the image of the Hilbert transform (c={law.c})")
    # 1/y + 1/(1 - cy) over a common denominator; the two terms nearly cancel for large |y|.
    return (1.0 + (1.0 - law.c) * y) / (y * (1.0 - law.c * y))


def mp_r_transform(law: MPLaw, y: float) -> float:
    y = float(y)
    if law.c * y == 1.0:
        raise DomainError(f"R-transform has a pole at y = 1/c = {1.0 / law.c}")
    return 1.0 / (1.0 - law.c * y)


def in_omega(law: MPLaw, x: float, eps: float, eta: float) -> bool:
    """Membership in the compact admissibility set used for spherical integrals."""
    if eps <= 0.0 or eta <= 0.0:
        raise DomainError("eps and eta must be positive")
    if x == 0.0:
        return False
    c, root = law.c, law.sqrt_c
    right = 1.0 / (root * (1.0 + root)) - eps
    left = -1.0 / eta if c >= 1.0 else -1.0 / (root * (1.0 - root)) + eps
    return left <= x <= right


def _check_spike(law: MPLaw, h: float) -> float:
    h = float(h)
    if not 0.0 < h < law.sqrt_c:
        raise DomainError(f"spike h={h} must lie in (0, sqrt(c)) = (0, {law.sqrt_c})")
    return h


def z0(law: MPLaw, h: float) -> float:
    """Point ``K(2θ)`` at which the log spectral statistic is evaluated."""
    h = _check_spike(law, h)
    return (law.c + h) * (1.0 + h) / h


def mp_log_integral(law: MPLaw, h: float) -> float:
    """Closed form of ``∫ ln(z0(h) - λ) dF(λ)`` (atom included)."""
    h = _check_spike(law, h)
    c = law.c
    return h / c - math.log1p(h) / c + math.log((1.0 + h) * c / h)
