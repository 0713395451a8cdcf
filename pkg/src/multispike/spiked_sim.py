"""Simulation of the spiked Gaussian model and eigenvalue extraction.

Random streams are Philox generators keyed by ``(seed, *keys)`` through a
:class:`numpy.random.SeedSequence`, so replicate ``i`` of an experiment draws
the same numbers no matter which worker runs it or in which order.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataFormatError, DomainError, NumericalError
from .mp_law import MPLaw, mp_cdf

SPIKE_BASES = ("canonical", "haar")


def stream(seed: int, *keys: int) -> np.random.Generator:
    """Independent counter-based generator for ``(seed, *keys)``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, keys)])))


@dataclass(frozen=True)
class SpikedParams:
    p: int
    n: int
    h: tuple[float, ...] = ()
    sigma2: float = 1.0
    spike_basis: str = "canonical"

    def __post_init__(self) -> None:
        object.__setattr__(self, "h", tuple(float(v) for v in self.h))
        if self.p < 1 or self.n < 1:
            raise DomainError(f"p and n must be positive, got p={self.p}, n={self.n}")
        if len(self.h) > self.p:
            raise DomainError(f"number of spikes r={len(self.h)} exceeds p={self.p}")
        if any(not math.isfinite(v) or v < 0.0 for v in self.h):
            raise DomainError(f"spikes must be finite and nonnegative, got {self.h}")
        if not self.sigma2 > 0.0:
            raise DomainError(f"sigma2 must be positive, got {self.sigma2}")
        if self.spike_basis not in SPIKE_BASES:
            raise DomainError(f"spike_basis must be one of {SPIKE_BASES}, got {self.spike_basis!r}")

    @property
    def c(self) -> float:
        return self.p / self.n

    @property
    def r(self) -> int:
        return len(self.h)


@dataclass(frozen=True)
class EigenData:
    """Nonzero sample-covariance eigenvalues and their trace-normalised version.

    ``lam`` holds the ``m = min(p, n)`` eigenvalues of ``(1/n) X X'`` in
    descending order; the remaining ``p - m`` eigenvalues are exactly zero.
    """

    lam: np.ndarray
    S_p: float
    p: int
    n: int
    mu: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        lam = np.asarray(self.lam, dtype=float)
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "mu", lam[:-1] / self.S_p)

    @property
    def m(self) -> int:
        return self.lam.size

    @property
    def c_p(self) -> float:
        return self.p / self.n

    @property
    def n_zero(self) -> int:
        return self.p - self.m

    def all_eigenvalues(self) -> np.ndarray:
        """All ``p`` eigenvalues, zeros appended."""
        return np.concatenate([self.lam, np.zeros(self.n_zero)])

    def scaled(self, k: float) -> "EigenData":
        return EigenData(self.lam * k, self.S_p * k, self.p, self.n)


def haar_orthogonal(p: int, seed: int | np.random.Generator) -> np.ndarray:
    """Haar-distributed ``p x p`` orthogonal matrix (QR with positive R diagonal)."""
    if p < 1:
        raise DomainError(f"p must be >= 1, got {p}")
    rng = seed if isinstance(seed, np.random.Generator) else stream(seed)
    q, r = np.linalg.qr(rng.standard_normal((p, p)))
    return q * np.sign(np.diag(r))


def haar_frames(p: int, r: int, draws: int, rng: np.random.Generator) -> np.ndarray:
    """``draws`` Haar orthonormal r-frames in R^p, shape ``(draws, p, r)``.

    These are distributed as the first ``r`` columns of a Haar orthogonal matrix.
    """
    g = rng.standard_normal((draws, p, r))
    q, rr = np.linalg.qr(g)
    signs = np.sign(np.diagonal(rr, axis1=1, axis2=2))
    return q * signs[:, None, :]


def spike_basis(params: SpikedParams, rng: np.random.Generator) -> np.ndarray:
    """The ``p x r`` matrix V with orthonormal columns."""
    if params.spike_basis == "canonical":
        return np.eye(params.p, params.r)
    return haar_frames(params.p, params.r, 1, rng)[0]


def generate_data(params: SpikedParams, seed: int | np.random.Generator) -> np.ndarray:
    """Draw a ``p x n`` matrix with i.i.d. N(0, σ²(I + V H V')) columns."""
    rng = seed if isinstance(seed, np.random.Generator) else stream(seed)
    z = rng.standard_normal((params.p, params.n))
    if params.r:
        scale = np.sqrt(1.0 + np.asarray(params.h)) - 1.0
        if params.spike_basis == "canonical":
            z[: params.r] *= (1.0 + scale)[:, None]
        else:
            v = spike_basis(params, rng)
            z += v @ (scale[:, None] * (v.T @ z))
    if params.sigma2 != 1.0:
        z *= math.sqrt(params.sigma2)
    return z


def eigen_data(X: np.ndarray) -> EigenData:
    """Eigenvalue summary of ``(1/n) X X'`` for a ``p x n`` data matrix."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise DomainError(f"expected a 2-d matrix, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise DomainError("data matrix contains non-finite entries")
    p, n = X.shape
    gram = X @ X.T if p <= n else X.T @ X
    try:
        lam = np.linalg.eigvalsh(gram / n)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"symmetric eigensolver failed: {exc}") from exc
    lam = np.clip(lam[::-1], 0.0, None)
    S_p = float(np.einsum("ij,ij->", X, X)) / n
    return EigenData(lam, S_p, p, n)


def esd_kolmogorov(eig: EigenData, law: MPLaw | None = None) -> float:
    """Kolmogorov distance between the empirical spectral distribution and MP."""
    law = law or MPLaw.from_dims(eig.p, eig.n)
    x = np.sort(eig.all_eigenvalues())
    F = mp_cdf(law, x)
    k = np.arange(1, x.size + 1) / x.size
    return float(max(np.max(np.abs(k - F)), np.max(np.abs(F - (k - 1.0 / x.size)))))


# --- matrix persistence -----------------------------------------------------

_HEADER = struct.Struct("<ii")


def write_matrix(X: np.ndarray, path: str | Path) -> None:
    """Write ``X`` as CSV (``.csv``) or headered little-endian float64 binary."""
    path = Path(path)
    X = np.asarray(X, dtype=float)
    if path.suffix.lower() == ".csv":
        np.savetxt(path, X, delimiter=",", fmt="%.17g")
        return
    p, n = X.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(p, n))
        fh.write(np.ascontiguousarray(X, dtype="<f8").tobytes())


def read_matrix(path: str | Path) -> np.ndarray:
    """Load a matrix written by :func:`write_matrix`; rows are variables."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        X = _read_csv(path)
    else:
        raw = path.read_bytes()
        if len(raw) < _HEADER.size:
            raise DataFormatError(f"{path}: file shorter than the 8-byte header")
        p, n = _HEADER.unpack_from(raw)
        if p < 1 or n < 1 or len(raw) != _HEADER.size + 8 * p * n:
            raise DataFormatError(f"{path}: header p={p}, n={n} inconsistent with file size {len(raw)}")
        X = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape(p, n).astype(float)
    bad = np.argwhere(~np.isfinite(X))
    if bad.size:
        i, j = bad[0]
        raise DataFormatError(f"{path}: non-finite entry at row {i + 1}, column {j + 1}")
    if X.shape[0] < 2 or X.shape[1] < 2:
        raise DataFormatError(f"{path}: need p >= 2 and n >= 2, got shape {X.shape}")
    return X


def _read_csv(path: Path) -> np.ndarray:
    rows: list[list[float]] = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append([float(tok) for tok in line.split(",")])
            except ValueError as exc:
                raise DataFormatError(f"{path}: line {lineno}: {exc}") from exc
            if len(rows[-1]) != len(rows[0]):
                raise DataFormatError(
                    f"{path}: line {lineno} has {len(rows[-1])} fields, expected {len(rows[0])}"
                )
    if not rows:
        raise DataFormatError(f"{path}: empty file")
    return np.array(rows, dtype=float)


def simulate_eigen(params: SpikedParams, seed: int, reps: Sequence[int]) -> list[EigenData]:
    """Eigen summaries for the given replicate indices, each on its own stream."""
    return [eigen_data(generate_data(params, stream(seed, i))) for i in reps]
