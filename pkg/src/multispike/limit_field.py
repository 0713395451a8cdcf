"""Gaussian limits of the log-likelihood processes and the sup-LR test.

Under the null the λ- and μ-log-likelihood processes converge to Gaussian
fields with mean ``-½ Var`` and an explicit covariance kernel.  Under a fixed
alternative ``h*`` the limit is the same field shifted by ``Cov(·, h*)``.
Critical values and powers of the sup-LR test come from simulating the field
on a finite grid.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .classic_tests import TestOutcome, tw_scaling
from .errors import DomainError, NumericalError
from .likelihood import loglik_grid
from .mp_law import MPLaw, z0
from .spiked_sim import EigenData, stream

VARIANTS = ("lambda", "mu")
JITTERS = (1e-12, 1e-11, 1e-10, 1e-9, 1e-8)
SIM_CHUNK = 4096
DEFAULT_CV_DRAWS = 200_000
# Minimum gap, in Tracy-Widom units, between z0 of any finite-sample grid point and the MP edge.
EDGE_MARGIN = 8.0
BOUNDARY_GAP = 1e-6
SAMPLE_DELTA = 0.05  # default δ/√c for finite-sample grids


@dataclass(frozen=True)
class FieldKernel:
    variant: str
    c: float

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise DomainError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if not self.c > 0.0:
            raise DomainError(f"c must be positive, got {self.c}")


def cov_matrix(kernel: FieldKernel, H, G) -> np.ndarray:
    """Kernel matrix between the rows of ``H`` (k x r) and ``G`` (l x r)."""
    H = np.atleast_2d(np.asarray(H, dtype=float))
    G = np.atleast_2d(np.asarray(G, dtype=float))
    x = H[:, None, :, None] * G[None, :, None, :] / kernel.c
    if np.any(x >= 1.0):
        raise DomainError("covariance undefined: some h_i g_j >= c")
    terms = np.log1p(-x)
    if kernel.variant == "mu":
        terms = terms + x
    return -0.5 * terms.sum(axis=(2, 3))


def cov(kernel: FieldKernel, h, g) -> float:
    return float(cov_matrix(kernel, np.atleast_1d(h), np.atleast_1d(g))[0, 0])


def field_mean(kernel: FieldKernel, h) -> float:
    return -0.5 * cov(kernel, h, h)


def cov_theta(variant: str, theta, phi) -> float:
    """Kernel in θ-coordinates, where it does not depend on ``c``.

    With ``u = 1 - e^{-θ²}`` the ratio ``h g / c`` is ``√(u_θ u_φ)`` and
    ``1 - √(u_θ u_φ)`` is formed without cancellation, so the result stays
    accurate where ``h`` itself is within rounding of ``√c``.
    """
    if variant not in VARIANTS:
        raise DomainError(f"variant must be one of {VARIANTS}, got {variant!r}")
    t = np.atleast_1d(np.asarray(theta, dtype=float))[:, None]
    s = np.atleast_1d(np.asarray(phi, dtype=float))[None, :]
    if np.any(t < 0.0) or np.any(s < 0.0):
        raise DomainError("theta coordinates must be nonnegative")
    et, es = np.exp(-t * t), np.exp(-s * s)
    x = np.sqrt(-np.expm1(-t * t) * -np.expm1(-s * s))
    one_minus = (et + es - et * es) / (1.0 + x)
    if np.any(one_minus <= 0.0):
        raise DomainError("covariance undefined at infinite theta")
    terms = np.log(one_minus)
    if variant == "mu":
        terms = terms + x
    return float(-0.5 * terms.sum())


def theta_of_h(h: float, c: float) -> float:
    """Local-parameter reparametrisation; maps ``[0, √c)`` onto ``[0, ∞)``."""
    if not 0.0 <= h < math.sqrt(c):
        raise DomainError(f"h={h} must lie in [0, sqrt(c)) = [0, {math.sqrt(c)})")
    return math.sqrt(-math.log1p(-h * h / c))


def h_of_theta(theta: float, c: float) -> float:
    if theta < 0.0:
        raise DomainError(f"theta must be nonnegative, got {theta}")
    return math.sqrt(-c * math.expm1(-theta * theta))


@dataclass
class FieldGrid:
    """Grid over spike space with the mean and Cholesky factor of the field."""

    kernel: FieldKernel
    points: np.ndarray
    mean: np.ndarray
    cov_factor: np.ndarray
    jitter: float
    delta: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def r(self) -> int:
        return self.points.shape[1]

    @property
    def size(self) -> int:
        return self.points.shape[0]

    def to_dict(self) -> dict:
        return {
            "variant": self.kernel.variant,
            "c": self.kernel.c,
            "r": self.r,
            "delta": self.delta,
            "jitter": self.jitter,
            "points": self.points.tolist(),
            "mean": self.mean.tolist(),
            **self.meta,
        }


def grid_from_points(kernel: FieldKernel, points, delta: float = 0.0) -> FieldGrid:
    """Factor the field kernel on an explicit list of spike vectors."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if np.any(pts < 0.0):
        raise DomainError("grid points must be nonnegative")
    root = math.sqrt(kernel.c)
    if np.any(pts >= root):
        raise DomainError(f"grid points must lie strictly below sqrt(c)={root}")
    # The kernel only sees the multiset of coordinates, so permuted copies are duplicates.
    keys = np.sort(pts, axis=1)
    _, counts = np.unique(keys, axis=0, return_counts=True)
    if np.any(counts > 1):
        raise NumericalError(
            f"kernel matrix is singular: {int(np.sum(counts - 1))} duplicate grid point(s)"
        )
    K = cov_matrix(kernel, pts, pts)
    K = 0.5 * (K + K.T)
    scale = max(float(np.max(np.abs(K))), 1e-300)
    eye = np.eye(K.shape[0])
    for jitter in JITTERS:
        try:
            L = np.linalg.cholesky(K + jitter * eye)
        except np.linalg.LinAlgError:
            continue
        if np.max(np.abs(L @ L.T - K)) <= 1e-6 * scale:
            return FieldGrid(kernel, pts, -0.5 * np.diag(K).copy(), L, jitter, delta)
    raise NumericalError(
        f"kernel factorization failed with jitter up to {JITTERS[-1]:g}; "
        "grid too fine or too close to the boundary"
    )


def build_grid(
    kernel: FieldKernel,
    r: int = 2,
    points_per_axis: int = 30,
    delta: float | None = None,
    theta_max: float = 3.0,
    theta_min: float = 0.05,
) -> FieldGrid:
    """Grid uniform in θ per axis, keeping points with ``h <= √c - δ``.

    By default ``δ`` only keeps ``h_i h_j <= c (1 - 1e-6)``, so the whole
    ``[θ_min, θ_max]`` range survives; the limit field is well defined up to
    the boundary and the sup-LR power depends on reaching large θ.

    Only ordered points ``h_1 >= h_2 >= ...`` are kept: the field is symmetric
    under permutations of the coordinates, so the full box would repeat each
    field value.
    """
    if points_per_axis < 2:
        raise DomainError(f"points_per_axis must be >= 2, got {points_per_axis}")
    if r < 1:
        raise DomainError(f"r must be >= 1, got {r}")
    if not 0.0 <= theta_min < theta_max:
        raise DomainError(f"need 0 <= theta_min < theta_max, got {theta_min}, {theta_max}")
    root = math.sqrt(kernel.c)
    delta = root * (1.0 - math.sqrt(1.0 - BOUNDARY_GAP)) if delta is None else float(delta)
    if not 0.0 < delta < root:
        raise DomainError(f"delta must lie in (0, sqrt(c)), got {delta}")
    thetas = np.linspace(theta_min, theta_max, points_per_axis)
    axis = np.array([h_of_theta(t, kernel.c) for t in thetas])
    axis = axis[axis <= root - delta]
    if axis.size == 0:
        raise DomainError("no grid point survives truncation at sqrt(c) - delta")
    pts = [p for p in itertools.product(axis[::-1], repeat=r) if all(a >= b for a, b in zip(p, p[1:]))]
    grid = grid_from_points(kernel, np.array(pts), delta)
    grid.meta.update(points_per_axis=points_per_axis, theta_min=theta_min, theta_max=theta_max)
    return grid


def edge_delta(p: int, n: int, margin: float = EDGE_MARGIN) -> float:
    """Distance from √c keeping ``z0(h)`` at least ``margin`` Tracy-Widom units above the edge.

    At desk-scale sample sizes the largest eigenvalue fluctuates on the scale
    ``1/σ_{n,c}`` around the upper MP edge; spikes whose ``z0`` falls within
    that band make the asymptotic log-likelihood unreliable or undefined.
    """
    law = MPLaw.from_dims(p, n)
    sigma, _ = tw_scaling(n, law.c)
    root = law.sqrt_c
    gap = lambda h: sigma * (z0(law, h) - law.b) - margin
    if gap(root * (1.0 - 1e-12)) >= 0.0:
        return root * 1e-12
    return root - optimize.brentq(gap, root * 1e-9, root * (1.0 - 1e-12), xtol=1e-14)


def sample_grid(
    variant: str,
    p: int,
    n: int,
    r: int = 2,
    points_per_axis: int = 30,
    delta: float | None = None,
    theta_max: float = 3.0,
    theta_min: float = 0.05,
    margin: float = EDGE_MARGIN,
) -> FieldGrid:
    """Grid for a finite-sample sup-LR test on ``p x n`` data.

    Same as :func:`build_grid` for ``c = p/n`` but with ``δ`` enlarged to
    :func:`edge_delta` when that is stricter.
    """
    c = p / n
    base = SAMPLE_DELTA * math.sqrt(c) if delta is None else float(delta)
    eff = max(base, edge_delta(p, n, margin))
    grid = build_grid(FieldKernel(variant, c), r, points_per_axis, eff, theta_max, theta_min)
    grid.meta.update(p=p, n=n, edge_margin=margin)
    return grid


def _shift(grid: FieldGrid, shift_at) -> np.ndarray:
    if shift_at is None:
        return np.zeros(grid.size)
    h_star = np.atleast_1d(np.asarray(shift_at, dtype=float))
    if h_star.size < grid.r:
        h_star = np.concatenate([h_star, np.zeros(grid.r - h_star.size)])
    return cov_matrix(grid.kernel, grid.points, h_star)[:, 0]


def _field_chunks(grid: FieldGrid, draws: int, seed: int, stream_id: int):
    for k, start in enumerate(range(0, draws, SIM_CHUNK)):
        size = min(SIM_CHUNK, draws - start)
        xi = stream(seed, stream_id, k).standard_normal((grid.size, size))
        yield grid.cov_factor @ xi


def simulate_sup(grid: FieldGrid, shift_at=None, draws: int = 10_000, seed: int = 0, stream_id: int = 0) -> np.ndarray:
    """Per-draw suprema of the limiting field over the grid.

    With ``shift_at = h*`` the field mean gains ``Cov(·, h*)``, which is the
    limit law of the log-likelihood process under the alternative ``h*``.
    """
    if draws < 1:
        raise DomainError(f"draws must be >= 1, got {draws}")
    centre = grid.mean + _shift(grid, shift_at)
    out = np.empty(draws)
    pos = 0
    for z in _field_chunks(grid, draws, seed, stream_id):
        out[pos : pos + z.shape[1]] = np.max(z + centre[:, None], axis=0)
        pos += z.shape[1]
    return out


def lr_critical_value(grid: FieldGrid, alpha: float, draws: int = DEFAULT_CV_DRAWS, seed: int = 0) -> float:
    """Simulated ``1 - α`` quantile of the null supremum."""
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    if draws < 100.0 / alpha:
        raise DomainError(f"need at least 100/alpha = {math.ceil(100 / alpha)} draws, got {draws}")
    sup = simulate_sup(grid, None, draws, seed, stream_id=0)
    return float(np.quantile(sup, 1.0 - alpha))


def lr_power_curve(
    grid: FieldGrid,
    critical: float,
    h_stars,
    draws: int = 20_000,
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Asymptotic sup-LR power at each row of ``h_stars`` for a given critical value.

    The same field draws are reused for every alternative (common random
    numbers), so differences between alternatives carry little MC noise.
    """
    H = np.atleast_2d(np.asarray(h_stars, dtype=float))
    if H.shape[1] < grid.r:
        H = np.hstack([H, np.zeros((H.shape[0], grid.r - H.shape[1]))])
    centres = grid.mean[None, :] + cov_matrix(grid.kernel, H, grid.points)
    hits = np.zeros(H.shape[0])
    for z in _field_chunks(grid, draws, seed, stream_id=1):
        for i, centre in enumerate(centres):
            hits[i] += np.count_nonzero(np.max(z + centre[:, None], axis=0) > critical)
    power = hits / draws
    return power, np.sqrt(power * (1.0 - power) / draws)


def lr_asymptotic_power(
    grid: FieldGrid,
    alpha: float,
    h_star,
    draws: int = 20_000,
    seed: int = 0,
    cv_draws: int = DEFAULT_CV_DRAWS,
) -> tuple[float, float]:
    """Power of the sup-LR test under ``h*`` and its binomial standard error.

    The critical value and the shifted draws use independent streams of ``seed``.
    """
    critical = lr_critical_value(grid, alpha, cv_draws, seed)
    power, se = lr_power_curve(grid, critical, [np.atleast_1d(h_star)], draws, seed)
    return float(power[0]), float(se[0])


def lr_statistic(eig: EigenData, grid: FieldGrid, law: MPLaw | None = None) -> float:
    """Supremum of the finite-sample log-likelihood process over the grid points."""
    law = law or MPLaw.from_dims(eig.p, eig.n)
    return float(np.max(loglik_grid(eig, law, grid.points, grid.kernel.variant)))


def lr_test(eig: EigenData, grid: FieldGrid, critical: float, alpha: float) -> TestOutcome:
    stat = lr_statistic(eig, grid)
    return TestOutcome(f"lr_{grid.kernel.variant}", stat, stat, critical, bool(stat > critical), alpha)
