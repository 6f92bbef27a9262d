"""Sensitivity analysis, phase-plot extraction, model comparison, fitting.

The Sobol first-order index of parameter x_j for output Y is
S_j = Var[E(Y|x_j)] / Var(Y), estimated with the Saltelli paired-matrix
scheme: two independent sample matrices A and B plus the d hybrids AB_j
(A with column j replaced from B), for n_base * (d + 2) model evaluations
total.  Y is the incidence (or prevalence) at each output time, so the
indices drift over the course of the epidemic.

Phase plots pair a recorded state coordinate with its recorded
right-hand-side value; derivatives come from the RHS evaluations stored
during integration, never from differencing the outputs.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .abm import EnsembleSummary
from .errors import DomainError
from .ode import Trajectory

# relative variance below which an index is reported as undefined (NaN)
_VAR_FLOOR = 1e-12


@dataclass
class SobolResult:
    """First-order indices per output time point.

    ``indices[j, t]`` estimates S_j at times[t]; NaN marks time points whose
    output variance is too small to normalize by.  Negative estimates are
    reported as-is; ``noise_bound`` is three times the largest estimator
    standard error and bounds how far estimates can sit outside [0, 1].
    """

    parameters: tuple
    times: np.ndarray
    indices: np.ndarray
    standard_errors: np.ndarray
    noise_bound: float
    n_base: int

    def index_at(self, parameter: str, time_index: int) -> float:
        return float(self.indices[self.parameters.index(parameter), time_index])


def _evaluate(runner, rows, parameters, output, n_jobs):
    def one(row):
        traj = runner(dict(zip(parameters, row)))
        return getattr(traj, output)

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(one, rows))
    else:
        results = [one(row) for row in rows]
    return np.asarray(results)


def sobol_first_order(
    runner,
    ranges: dict,
    n_base: int,
    seed: int = 0,
    output: str = "incidence",
    n_jobs: int = 1,
) -> SobolResult:
    """Saltelli estimate of first-order Sobol indices over output time.

    ``runner`` maps a parameter dict to a Trajectory; ``ranges`` gives one
    uniform interval per parameter.  Evaluations are independent and may run
    in ``n_jobs`` threads; assembly order is fixed by sample index either
    way.
    """
    if n_base < 64:
        raise DomainError(f"n_base must be >= 64, got {n_base}")
    if not ranges:
        raise DomainError("at least one parameter range is required")
    if output not in ("incidence", "prevalence"):
        raise DomainError(f"output must be 'incidence' or 'prevalence', got {output!r}")
    parameters = tuple(ranges)
    lo = np.array([ranges[p][0] for p in parameters], dtype=float)
    hi = np.array([ranges[p][1] for p in parameters], dtype=float)
    if np.any(hi <= lo):
        raise DomainError("each range must have lower < upper")
    d = len(parameters)

    rng = np.random.default_rng(seed)
    a = lo + (hi - lo) * rng.random((n_base, d))
    b = lo + (hi - lo) * rng.random((n_base, d))

    f_a = _evaluate(runner, a, parameters, output, n_jobs)
    f_b = _evaluate(runner, b, parameters, output, n_jobs)
    times = runner(dict(zip(parameters, a[0]))).times

    variance = np.concatenate([f_a, f_b]).var(axis=0, ddof=1)
    defined = variance > _VAR_FLOOR * max(variance.max(), 1e-300)

    indices = np.full((d, f_a.shape[1]), np.nan)
    errors = np.full((d, f_a.shape[1]), np.nan)
    for j in range(d):
        ab = a.copy()
        ab[:, j] = b[:, j]
        f_ab = _evaluate(runner, ab, parameters, output, n_jobs)
        # Saltelli 2010 first-order estimator
        terms = f_b * (f_ab - f_a)
        with np.errstate(invalid="ignore", divide="ignore"):
            indices[j, defined] = terms.mean(axis=0)[defined] / variance[defined]
            errors[j, defined] = (
                terms.std(axis=0, ddof=1)[defined] / np.sqrt(n_base) / variance[defined]
            )
    noise = float(np.nanmax(errors)) * 3.0 if np.any(defined) else float("nan")
    return SobolResult(
        parameters=parameters, times=times.copy(), indices=indices,
        standard_errors=errors, noise_bound=noise, n_base=n_base,
    )


def phase_series(
    traj: Trajectory, m: int, n: int, variant: str = "infected", population: int = 1
) -> np.ndarray:
    """(T, 2) array pairing a state coordinate with its time derivative.

    variant="infected" pairs (rho_m(t), d rho_n / dt); variant="healthy"
    pairs the never-or-no-longer-infected fraction s + r per degree with its
    derivative.  Derivatives come from the recorded RHS evaluations.
    """
    if traj.derivs is None:
        raise DomainError("trajectory has no recorded RHS evaluations (agent-based run?)")
    if variant not in ("infected", "healthy"):
        raise DomainError(f"variant must be 'infected' or 'healthy', got {variant!r}")

    def pick(state, degree):
        degrees = state.degrees if population == 1 else state.degrees2
        if degrees is None:
            raise DomainError("trajectory has no second population")
        idx = np.flatnonzero(degrees == degree)
        if idx.size == 0:
            raise DomainError(f"degree {degree} outside trajectory support")
        i = int(idx[0])
        if population == 1:
            return float(state.rho[:, i].sum()), float(state.s[i] + state.removed_k[i])
        return float(state.rho2[:, i].sum()), float(state.s2[i] + state.removed_k2[i])

    out = np.empty((len(traj.states), 2))
    for row, (state, deriv) in enumerate(zip(traj.states, traj.derivs)):
        rho_m, healthy_m = pick(state, m)
        drho_n, dhealthy_n = pick(deriv, n)
        if variant == "infected":
            out[row] = (rho_m, drho_n)
        else:
            out[row] = (healthy_m, dhealthy_n)
    return out


@dataclass
class CoverageReport:
    """Agreement between an ODE trajectory and an ABM ensemble band."""

    band_sigmas: float
    coverage: float
    n_points: int
    covered: np.ndarray
    ode_peak: float
    ode_peak_time: float
    ensemble_peak: float
    ensemble_peak_time: float
    peak_relative_deviation: float
    peak_time_offset: float


def compare_ode_abm(ode: Trajectory, ens: EnsembleSummary, band_sigmas: float = 3.0) -> CoverageReport:
    """Fraction of time points where the ODE prevalence lies inside the
    ensemble mean +- band_sigmas * SE, plus peak comparison statistics.

    Time grids must align exactly (run the ODE with euler dt=1).  A 1e-12
    absolute slack keeps exact matches at zero-variance points covered.
    """
    if ode.times.shape != ens.times.shape or np.any(ode.times != ens.times):
        raise DomainError("ODE and ensemble time grids are not aligned")
    dev = np.abs(ode.prevalence - ens.mean_prevalence)
    covered = dev <= band_sigmas * ens.se_prevalence + 1e-12
    i_ode = int(np.argmax(ode.prevalence))
    i_ens = int(np.argmax(ens.mean_prevalence))
    ens_peak = float(ens.mean_prevalence[i_ens])
    rel = abs(float(ode.prevalence[i_ode]) - ens_peak) / ens_peak if ens_peak > 0 else float("inf")
    return CoverageReport(
        band_sigmas=band_sigmas,
        coverage=float(covered.mean()),
        n_points=len(covered),
        covered=covered,
        ode_peak=float(ode.prevalence[i_ode]),
        ode_peak_time=float(ode.times[i_ode]),
        ensemble_peak=ens_peak,
        ensemble_peak_time=float(ens.times[i_ens]),
        peak_relative_deviation=rel,
        peak_time_offset=float(ode.times[i_ode] - ens.times[i_ens]),
    )


@dataclass
class FitResult:
    """Outcome of a least-squares parameter fit."""

    parameters: dict
    residual: float
    iterations: int
    converged: bool


def fit_parameters(
    runner,
    observed_times,
    observed,
    free: dict,
    initial: dict,
    output: str = "incidence",
    max_iterations: int = 400,
) -> FitResult:
    """Minimize the sum of squared output residuals over ``free`` parameters.

    Derivative-free Nelder-Mead simplex descent with bound clipping;
    deterministic given the initial guess.  Observed times must land on the
    model output grid.  Never returns a point worse than the initial guess.
    """
    observed_times = np.asarray(observed_times, dtype=float)
    observed = np.asarray(observed, dtype=float)
    if observed.size == 0:
        raise DomainError("observed series must be nonempty")
    if observed_times.shape != observed.shape:
        raise DomainError("observed times and values must align")
    if not free:
        raise DomainError("at least one free parameter is required")
    names = tuple(free)
    lo = np.array([free[p][0] for p in names], dtype=float)
    hi = np.array([free[p][1] for p in names], dtype=float)
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))) or np.any(hi <= lo):
        raise DomainError("each bound must be a finite (lower, upper) pair")
    x0 = np.array([initial[p] for p in names], dtype=float)
    x0 = np.clip(x0, lo, hi)

    grid_index = None

    def residual(x):
        nonlocal grid_index
        traj = runner(dict(zip(names, np.clip(x, lo, hi))))
        series = getattr(traj, output)
        if grid_index is None:
            grid_index = _match_grid(traj.times, observed_times)
        return float(np.sum((series[grid_index] - observed) ** 2))

    r0 = residual(x0)
    result = minimize(
        residual, x0, method="Nelder-Mead",
        bounds=list(zip(lo, hi)),
        options={"maxiter": max_iterations, "xatol": 1e-8, "fatol": 1e-14},
    )
    if result.fun <= r0:
        best, fun = np.clip(result.x, lo, hi), float(result.fun)
    else:
        best, fun = x0, r0
    return FitResult(
        parameters=dict(zip(names, (float(v) for v in best))),
        residual=fun,
        iterations=int(result.nit),
        converged=bool(result.success),
    )


def _match_grid(model_times, observed_times):
    idx = np.searchsorted(model_times, observed_times)
    idx = np.clip(idx, 0, len(model_times) - 1)
    left = np.clip(idx - 1, 0, len(model_times) - 1)
    idx = np.where(
        np.abs(model_times[left] - observed_times) < np.abs(model_times[idx] - observed_times),
        left, idx,
    )
    if np.any(np.abs(model_times[idx] - observed_times) > 1e-9):
        raise DomainError("observed times do not lie on the model output grid")
    return idx
