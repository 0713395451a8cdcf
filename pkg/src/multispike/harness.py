"""Seeded Monte Carlo experiments, figure data, and the data-test driver.

Every replicate draws from its own stream keyed by ``(seed, index)`` and
per-replicate results are stored by index before any reduction, so reports
are bit-identical for any number of workers.
"""

from __future__ import annotations

import hashlib
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Optional

import numpy as np
from scipy import optimize, stats

from . import __version__
from .classic_tests import (
    ASYMPTOTIC_POWER,
    TestOutcome,
    beta_clr,
    beta_john_lw_cm,
    caima_test,
    clr_test,
    envelope_lambda,
    envelope_mu,
    envelope_w,
    john_test,
    lw_test,
    tw_test,
)
from .errors import DomainError
from .likelihood import loglik_lambda, loglik_mu
from .limit_field import (
    DEFAULT_CV_DRAWS,
    EDGE_MARGIN,
    FieldGrid,
    FieldKernel,
    build_grid,
    cov,
    h_of_theta,
    lr_critical_value,
    lr_power_curve,
    lr_statistic,
    sample_grid,
    theta_of_h,
)
from .mp_law import MPLaw
from .spiked_sim import SpikedParams, eigen_data, esd_kolmogorov, generate_data, read_matrix, stream

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

KINDS = ("size", "power", "convergence", "figure")
TEST_NAMES = ("john", "lw", "clr", "caima", "tw", "lr_lambda", "lr_mu")
FIGURES = tuple(f"fig{i}" for i in range(1, 8))
BLOCK = 50


@dataclass
class ExperimentSpec:
    kind: str
    model: SpikedParams
    tests: list[str] = field(default_factory=lambda: list(TEST_NAMES))
    replications: int = 2000
    alpha: float = 0.05
    seed: int = 0
    grid: dict = field(default_factory=dict)
    output: Optional[str] = None
    workers: int = 1
    h_points: list[list[float]] = field(default_factory=list)
    esd_dims: list[int] = field(default_factory=lambda: [100, 200, 400])
    esd_replications: int = 100
    figure: Optional[str] = None
    figure_params: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise DomainError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.replications < 1:
            raise DomainError(f"replications must be >= 1, got {self.replications}")
        unknown = [t for t in self.tests if t not in TEST_NAMES]
        if unknown:
            raise DomainError(f"unknown tests {unknown}; known: {TEST_NAMES}")
        if not 0.0 < self.alpha < 1.0:
            raise DomainError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.kind == "figure" and self.figure not in FIGURES:
            raise DomainError(f"figure experiments need figure in {FIGURES}, got {self.figure!r}")

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentSpec":
        raw = dict(raw)
        model = raw.pop("model", {})
        if "h" in model:
            model["h"] = tuple(model["h"])
        return cls(model=SpikedParams(**model), **raw)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["model"]["h"] = list(self.model.h)
        return out


def load_spec(path: str | Path) -> ExperimentSpec:
    path = Path(path)
    if path.suffix.lower() == ".toml":
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    else:
        raw = json.loads(path.read_text())
    return ExperimentSpec.from_dict(raw)


def binomial_se(rate: float, reps: int) -> float:
    return math.sqrt(rate * (1.0 - rate) / reps)


def params_hash(params: dict) -> str:
    blob = json.dumps(params, sort_keys=True, default=float).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def report_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


def _write_report(report: dict, output: Optional[str]) -> None:
    if output:
        Path(output).write_text(report_json(report))


def _metadata(spec: ExperimentSpec) -> dict:
    # Worker count and output path do not affect results and are left out for byte-identity.
    described = {k: v for k, v in spec.to_dict().items() if k not in ("workers", "output")}
    return {"seed": spec.seed, "version": __version__, "numpy": np.__version__, "spec": described}


def _map_blocks(func, args: list, workers: int) -> list:
    if workers <= 1:
        return [func(a) for a in args]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, args))


def _blocks(reps: int) -> list[range]:
    return [range(s, min(s + BLOCK, reps)) for s in range(0, reps, BLOCK)]


# --- size and power ---------------------------------------------------------


@dataclass
class _TestJob:
    params: SpikedParams
    seed: int
    alpha: float
    tests: list[str]
    grids: dict[str, tuple[FieldGrid, float]]
    indices: range


def _run_tests_block(job: _TestJob) -> np.ndarray:
    out = np.zeros((len(job.indices), len(job.tests)), dtype=np.int8)
    for row, i in enumerate(job.indices):
        X = generate_data(job.params, stream(job.seed, i))
        eig = eigen_data(X)
        for col, name in enumerate(job.tests):
            out[row, col] = _apply_test(name, X, eig, job.alpha, job.grids).reject
    return out


def _apply_test(name: str, X, eig, alpha: float, grids: dict) -> TestOutcome:
    if name in grids:
        grid, critical = grids[name]
        stat = lr_statistic(eig, grid)
        return TestOutcome(name, stat, stat, critical, bool(stat > critical), alpha)
    if name == "caima":
        return caima_test(X, alpha)
    return {"john": john_test, "lw": lw_test, "clr": clr_test, "tw": tw_test}[name](eig, alpha)


def lr_grids(tests: Iterable[str], p: int, n: int, alpha: float, seed: int, grid_opts: dict) -> dict:
    """Finite-sample grids and limit-field critical values for requested LR tests."""
    opts = dict(grid_opts)
    cv_draws = int(opts.pop("cv_draws", DEFAULT_CV_DRAWS))
    opts.pop("power_draws", None)
    out = {}
    for name in tests:
        if not name.startswith("lr_"):
            continue
        grid = sample_grid(name[3:], p, n, **opts)
        out[name] = (grid, lr_critical_value(grid, alpha, cv_draws, seed))
    return out


def _rejection_experiment(spec: ExperimentSpec, params: SpikedParams) -> dict:
    tests = list(spec.tests)
    if "clr" in tests and params.p >= params.n:
        raise DomainError("the corrected LR test needs p < n")
    grids = lr_grids(tests, params.p, params.n, spec.alpha, spec.seed, spec.grid)
    jobs = [_TestJob(params, spec.seed, spec.alpha, tests, grids, b) for b in _blocks(spec.replications)]
    rejects = np.vstack(_map_blocks(_run_tests_block, jobs, spec.workers))
    c = params.c
    results = {}
    for col, name in enumerate(tests):
        count = int(rejects[:, col].sum())
        rate = count / spec.replications
        entry: dict[str, Any] = {
            "rejections": count,
            "rate": rate,
            "std_error": binomial_se(rate, spec.replications),
            "degenerate": spec.replications == 1,
        }
        entry["asymptotic"] = _asymptotic_prediction(name, params.h, c, spec, grids)
        if name in grids:
            entry["critical"] = grids[name][1]
            entry["grid_points"] = grids[name][0].size
            entry["grid_delta"] = grids[name][0].delta
        results[name] = entry
    return results


def _asymptotic_prediction(name: str, h, c: float, spec: ExperimentSpec, grids: dict) -> Optional[float]:
    h = list(h) or [0.0]
    if name in ASYMPTOTIC_POWER:
        if name == "clr" and not c < 1.0:
            return None
        return ASYMPTOTIC_POWER[name](h, c, spec.alpha)
    grid, critical = grids[name]
    draws = int(spec.grid.get("power_draws", 20_000))
    power, _ = lr_power_curve(grid, critical, [h], draws, spec.seed)
    return float(power[0])


def run_size_experiment(spec: ExperimentSpec) -> dict:
    """Empirical rejection rates under the null for each requested test."""
    params = replace(spec.model, h=())
    report = {"kind": "size", "metadata": _metadata(spec), "tests": _rejection_experiment(spec, params)}
    _write_report(report, spec.output)
    return report


def run_power_experiment(spec: ExperimentSpec) -> dict:
    """Empirical powers next to their asymptotic predictions and the envelopes."""
    params = spec.model
    report = {"kind": "power", "metadata": _metadata(spec), "tests": _rejection_experiment(spec, params)}
    h = list(params.h) or [0.0]
    report["envelope_lambda"] = envelope_lambda(h, params.c, spec.alpha)
    report["envelope_mu"] = envelope_mu(h, params.c, spec.alpha)
    _write_report(report, spec.output)
    return report


# --- weak convergence -------------------------------------------------------


@dataclass
class _LoglikJob:
    params: SpikedParams
    seed: int
    points: list[list[float]]
    indices: range


def _loglik_block(job: _LoglikJob) -> np.ndarray:
    law = MPLaw(job.params.c)
    out = np.empty((len(job.indices), len(job.points), 2))
    for row, i in enumerate(job.indices):
        eig = eigen_data(generate_data(job.params, stream(job.seed, i)))
        for k, h in enumerate(job.points):
            out[row, k] = loglik_lambda(eig, law, h), loglik_mu(eig, law, h)
    return out


def _esd_block(args: tuple[SpikedParams, int, range]) -> np.ndarray:
    params, seed, indices = args
    law = MPLaw(params.c)
    return np.array([esd_kolmogorov(eigen_data(generate_data(params, stream(seed, i))), law) for i in indices])


def normal_limit_summary(sample: np.ndarray, variance: float) -> dict:
    """Compare a sample with the N(-W/2, W) law of the limiting log-likelihood."""
    reps = sample.size
    mean, var = float(np.mean(sample)), float(np.var(sample, ddof=1))
    mean_se = math.sqrt(var / reps)
    var_se = var * math.sqrt(2.0 / (reps - 1))
    ratio = mean / var
    ratio_se = abs(ratio) * math.sqrt((mean_se / mean) ** 2 + (var_se / var) ** 2) if mean else math.inf
    ks = stats.kstest((sample - mean) / math.sqrt(var), "norm")
    return {
        "mean": mean,
        "mean_std_error": mean_se,
        "limit_mean": -0.5 * variance,
        "mean_z": (mean + 0.5 * variance) / mean_se,
        "variance": var,
        "variance_std_error": var_se,
        "limit_variance": variance,
        "variance_rel_error": var / variance - 1.0,
        "mean_variance_ratio": ratio,
        "ratio_std_error": ratio_se,
        "ks_pvalue": float(ks.pvalue),
    }


def run_convergence_experiment(spec: ExperimentSpec) -> dict:
    """Null distribution of the log-likelihood ratios versus their Gaussian limits."""
    params = replace(spec.model, h=())
    c = params.c
    points = spec.h_points or [[0.4 * math.sqrt(c), 0.2 * math.sqrt(c)]]
    jobs = [_LoglikJob(params, spec.seed, points, b) for b in _blocks(spec.replications)]
    values = np.concatenate(_map_blocks(_loglik_block, jobs, spec.workers))
    by_point = []
    for k, h in enumerate(points):
        entry = {"h": list(h)}
        for v, name in enumerate(("lambda", "mu")):
            w = cov(FieldKernel(name, c), h, h)
            entry[name] = normal_limit_summary(values[:, k, v], w)
        by_point.append(entry)
    esd = []
    for j, p in enumerate(spec.esd_dims):
        n = max(1, round(p / c))
        sub = SpikedParams(p, n)
        args = [(sub, spec.seed + 7919 * (j + 1), b) for b in _blocks(spec.esd_replications)]
        dist = np.concatenate(_map_blocks(_esd_block, args, spec.workers))
        esd.append({"p": p, "n": n, "mean_kolmogorov": float(dist.mean()), "max_kolmogorov": float(dist.max())})
    report = {"kind": "convergence", "metadata": _metadata(spec), "points": by_point, "esd": esd}
    _write_report(report, spec.output)
    return report


def run_experiment(spec: ExperimentSpec) -> dict:
    if spec.kind == "size":
        return run_size_experiment(spec)
    if spec.kind == "power":
        return run_power_experiment(spec)
    if spec.kind == "convergence":
        return run_convergence_experiment(spec)
    out = spec.output or f"{spec.figure}.csv"
    path = emit_figure(spec.figure, {"alpha": spec.alpha, "seed": spec.seed, **spec.figure_params}, out)
    return {"kind": "figure", "metadata": _metadata(spec), "figure": spec.figure, "path": str(path)}


# --- figure data ------------------------------------------------------------

FIGURE_DEFAULTS = {
    "alpha": 0.05,
    "seed": 0,
    "surface_steps": 34,
    "sections": [0.2, 0.5, 0.7, 0.9],
    "theta_points": 31,
    "theta_plot_max": 3.0,
    "ratio_points": 21,
    "levels": [0.25, 0.5, 0.75, 0.9],
    "points_per_axis": 30,
    "theta_max": 3.0,
    "cv_draws": DEFAULT_CV_DRAWS,
    "power_draws": 20_000,
    "clr_c": 0.5,
}


def _asym_grid(variant: str, r: int, prm: dict) -> tuple[FieldGrid, float]:
    # Figures live in θ-coordinates, where the limit experiment does not depend on c.
    grid = build_grid(FieldKernel(variant, 1.0), r, prm["points_per_axis"], None, prm["theta_max"])
    return grid, lr_critical_value(grid, prm["alpha"], prm["cv_draws"], prm["seed"])


def iso_envelope_point(level: float, ratio: float, alpha: float, variant: str = "lambda", c: float = 1.0) -> np.ndarray:
    """Spike vector ``s (1, ratio)`` with envelope exactly ``level``.

    Solved by bracketing in θ-coordinates, where the envelope is strictly
    increasing along each ray and spans ``(α, 1)``.
    """
    env = envelope_lambda if variant == "lambda" else envelope_mu
    if not alpha < level < 1.0:
        raise DomainError(f"level must lie in (alpha, 1), got {level}")
    direction = np.array([1.0, ratio])

    def gap(theta: float) -> float:
        h = h_of_theta(theta, c) * direction
        if h[0] >= math.sqrt(c):
            return 1.0 - level  # rounded onto the boundary, where the envelope tends to 1
        return env(h, c, alpha) - level

    hi = 1.0
    while gap(hi) < 0.0:
        hi *= 2.0
        if hi > 64.0:
            raise DomainError(f"envelope level {level} not reached along ratio {ratio}")
    theta = optimize.brentq(gap, 0.0, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    point = h_of_theta(theta, c) * direction
    if abs(env(point, c, alpha) - level) > 1e-8:
        raise DomainError(f"iso-envelope bisection did not converge at ratio {ratio}")
    return point


def _section_rows(prm: dict) -> list[tuple[float, float, np.ndarray]]:
    """(h1/√c, θ2, h) triples for profile figures at c = 1."""
    rows = []
    thetas = np.linspace(0.0, prm["theta_plot_max"], prm["theta_points"])
    for s in prm["sections"]:
        for t2 in thetas:
            rows.append((s, float(t2), np.array([s, h_of_theta(float(t2), 1.0)])))
    return rows


def _figure_rows(figure_id: str, prm: dict) -> list[tuple[float, float, str]]:
    alpha = prm["alpha"]
    rows: list[tuple[float, float, str]] = []
    if figure_id == "fig1":
        steps = np.linspace(0.0, 0.99, prm["surface_steps"])
        for h2 in steps:
            for h1 in steps:
                h = [h1, h2]
                rows.append((h1, envelope_lambda(h, 1.0, alpha), f"lambda;h2={h2:.4f}"))
                rows.append((h1, envelope_mu(h, 1.0, alpha), f"mu;h2={h2:.4f}"))
    elif figure_id in ("fig2", "fig3"):
        variant = "lambda" if figure_id == "fig2" else "mu"
        env = envelope_lambda if variant == "lambda" else envelope_mu
        grid, critical = _asym_grid(variant, 2, prm)
        sec = _section_rows(prm)
        power, _ = lr_power_curve(grid, critical, [h for _, _, h in sec], prm["power_draws"], prm["seed"])
        for (s, t2, h), pw in zip(sec, power):
            rows.append((t2, float(pw), f"lr;h1={s:.2f}"))
            rows.append((t2, env(h, 1.0, alpha), f"envelope;h1={s:.2f}"))
    elif figure_id == "fig4":
        ratios = np.linspace(0.0, 1.0, prm["ratio_points"])
        for variant in ("lambda", "mu"):
            grid, critical = _asym_grid(variant, 2, prm)
            for q in prm["levels"]:
                pts = [iso_envelope_point(q, float(t), alpha, variant) for t in ratios]
                power, _ = lr_power_curve(grid, critical, pts, prm["power_draws"], prm["seed"])
                rows.extend((float(t), float(pw), f"{variant};level={q:.2f}") for t, pw in zip(ratios, power))
    elif figure_id == "fig5":
        thetas = np.linspace(0.0, prm["theta_plot_max"], prm["theta_points"])
        pts = [[h_of_theta(float(t), 1.0)] for t in thetas]
        for variant in ("lambda", "mu"):
            for r in (1, 2):
                grid, critical = _asym_grid(variant, r, prm)
                power, _ = lr_power_curve(grid, critical, pts, prm["power_draws"], prm["seed"])
                rows.extend((float(t), float(pw), f"{variant};r={r}") for t, pw in zip(thetas, power))
    elif figure_id == "fig6":
        for s, t2, h in _section_rows(prm):
            rows.append((t2, beta_john_lw_cm(h, 1.0, alpha), f"john;h1={s:.2f}"))
            rows.append((t2, envelope_mu(h, 1.0, alpha), f"envelope_mu;h1={s:.2f}"))
    elif figure_id == "fig7":
        cc = prm["clr_c"]
        for s, t2, h in _section_rows(prm):
            rows.append((t2, beta_john_lw_cm(h, 1.0, alpha), f"lw_cm;h1={s:.2f}"))
            rows.append((t2, beta_clr(h * math.sqrt(cc), cc, alpha), f"clr_c{cc:g};h1={s:.2f}"))
            rows.append((t2, envelope_lambda(h, 1.0, alpha), f"envelope_lambda;h1={s:.2f}"))
    else:
        raise DomainError(f"unknown figure {figure_id!r}; expected one of {FIGURES}")
    return rows


def emit_figure(figure_id: str, params: Optional[dict] = None, output: str | Path | None = None) -> Path:
    """Write the curve data for one figure as CSV with columns x, y, series, params_hash.

    Spikes are expressed as ``h/√c`` (c = 1 internally) except in CLR curves,
    which depend on ``c`` and are evaluated at ``clr_c``.
    """
    prm = {**FIGURE_DEFAULTS, **(params or {})}
    if figure_id not in FIGURES:
        raise DomainError(f"unknown figure {figure_id!r}; expected one of {FIGURES}")
    rows = _figure_rows(figure_id, prm)
    tag = params_hash({"figure": figure_id, **prm})
    path = Path(output or f"{figure_id}.csv")
    with open(path, "w") as fh:
        fh.write("x,y,series,params_hash\n")
        for x, y, series in rows:
            fh.write(f"{x:.10g},{y:.12g},{series},{tag}\n")
    return path


# --- applying the battery to data -------------------------------------------


def run_data_test(
    input_path: str | Path,
    tests: Optional[list[str]] = None,
    alpha: float = 0.05,
    sigma2_known: Optional[float] = None,
    seed: int = 0,
    grid_opts: Optional[dict] = None,
    output: Optional[str | Path] = None,
) -> list[TestOutcome]:
    """Load a data matrix, run the requested tests and optionally write JSON outcomes."""
    X = read_matrix(input_path)
    if sigma2_known is not None:
        if not sigma2_known > 0.0:
            raise DomainError(f"sigma2_known must be positive, got {sigma2_known}")
        X = X / math.sqrt(sigma2_known)
    p, n = X.shape
    if tests is None:
        tests = [t for t in TEST_NAMES if t != "clr" or p < n]
    unknown = [t for t in tests if t not in TEST_NAMES]
    if unknown:
        raise DomainError(f"unknown tests {unknown}; known: {TEST_NAMES}")
    eig = eigen_data(X)
    grids = lr_grids(tests, p, n, alpha, seed, grid_opts or {})
    outcomes = [_apply_test(name, X, eig, alpha, grids) for name in tests]
    if output:
        Path(output).write_text(json.dumps([o.to_dict() for o in outcomes], indent=2) + "\n")
    return outcomes


__all__ = [
    "EDGE_MARGIN",
    "ExperimentSpec",
    "emit_figure",
    "envelope_w",
    "iso_envelope_point",
    "load_spec",
    "run_convergence_experiment",
    "run_data_test",
    "run_experiment",
    "run_power_experiment",
    "run_size_experiment",
    "theta_of_h",
]
