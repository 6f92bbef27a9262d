"""Command-line front end.

    netepi run-ode|run-abm|compare|sensitivity|phase|fit
        --config FILE [--seed N] [--threads N] [--out DIR] [--plot]

Every command reads one JSON configuration, writes CSV/JSON artifacts into
the output directory, and prints a one-line summary.  Outputs are
deterministic: identical config and seed give byte-identical files.  On
failure partial outputs are removed and the exit code distinguishes config
errors (1), numerical/stability errors (2), and I/O errors (3).
"""

from __future__ import annotations

import csv
import json
import os
import sys
from pathlib import Path

import click
import numpy as np

from .abm import run_ensemble
from .analysis import compare_ode_abm, fit_parameters, phase_series, sobol_first_order
from .config import (
    SimulationSpec,
    build_distribution,
    build_spec_model,
    parse_config,
    run_trajectory,
)
from .degree import from_weights
from .errors import ConfigError, DomainError, NetepiError, StabilityError
from .ode import integrate

ABM_MODELS = ("classic", "stratified")


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return f"{float(value):.12g}"


def _write_csv(path: Path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _write_json(path: Path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _abm_setup(spec: SimulationSpec, seed):
    if spec.model not in ABM_MODELS:
        raise ConfigError("model", f"agent-based runs support {ABM_MODELS}, got {spec.model!r}")
    if spec.abm_n is None:
        raise ConfigError("abm.n", "required for agent-based runs")
    t0, t1 = spec.t_span
    steps = int(round(t1 - t0))
    if abs(t1 - t0 - steps) > 1e-9 or steps < 1:
        raise ConfigError("t_span", "agent-based runs need an integer number of unit steps")
    if spec.model == "classic":
        dist = from_weights(1, [1.0])
    else:
        dist = build_distribution(spec.distribution)
    return dist, steps, spec.abm_seed if seed is None else seed


def execute(spec: SimulationSpec, command: str, seed=None, threads: int = 1,
            out_dir=None, plot: bool = False, replicas=None):
    """Run one command against a validated spec.

    ``seed`` and ``replicas`` override the configured values for the
    stochastic commands.  Returns (summary line, list of written paths).
    Raises ConfigError / DomainError / StabilityError / OSError; any
    partially written outputs are removed first.
    """
    if replicas is not None and replicas < 2:
        raise ConfigError("abm.replicas", f"must be >= 2, got {replicas}")
    n_replicas = spec.abm_replicas if replicas is None else replicas
    out = Path(out_dir if out_dir is not None else spec.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    def target(name) -> Path:
        path = out / name
        written.append(path)
        return path

    try:
        if command == "run-ode":
            model = build_spec_model(spec)
            traj = integrate(model, spec.t_span, spec.dt, spec.method,
                             schedule=spec.treatment)
            header = ["t", "s_total", "i_total", "r", "incidence"]
            if spec.per_degree:
                header += model.state_labels()
            rows = []
            for i, t in enumerate(traj.times):
                row = [t, traj.susceptible[i], traj.prevalence[i], traj.removed[i],
                       traj.incidence[i]]
                if spec.per_degree:
                    row += model.state_columns(traj.states[i])
                rows.append(row)
            _write_csv(target("trajectory.csv"), header, rows)
            if plot:
                _emit_plot(target("plot_trajectory.py"), "trajectory.csv", _PLOT_TRAJECTORY)
            peak, peak_t = traj.peak()
            summary = (f"peak_prevalence={peak:.6g} peak_time={peak_t:g} "
                       f"final_size={traj.final_size():.6g}")

        elif command == "run-abm":
            dist, steps, abm_seed = _abm_setup(spec, seed)
            ens = run_ensemble(
                dist, spec.abm_n, spec.params, steps, replicas=n_replicas,
                base_seed=abm_seed, rewire=spec.abm_rewire, schedule=spec.treatment,
                n_jobs=threads,
            )
            rows = [
                [t, ens.mean_prevalence[i], ens.se_prevalence[i],
                 ens.mean_incidence[i], ens.se_incidence[i], ens.replicas]
                for i, t in enumerate(ens.times)
            ]
            _write_csv(target("ensemble.csv"),
                       ["t", "mean_prev", "se_prev", "mean_inc", "se_inc", "replicas"], rows)
            if plot:
                _emit_plot(target("plot_ensemble.py"), "ensemble.csv", _PLOT_ENSEMBLE)
            i = int(np.argmax(ens.mean_prevalence))
            summary = (f"peak_prevalence={ens.mean_prevalence[i]:.6g} peak_time={ens.times[i]:g} "
                       f"final_size={1.0 - ens.mean_susceptible[-1]:.6g}")

        elif command == "compare":
            dist, steps, abm_seed = _abm_setup(spec, seed)
            ode = run_trajectory(spec, method="euler", dt=1.0)
            ens = run_ensemble(
                dist, spec.abm_n, spec.params, steps, replicas=n_replicas,
                base_seed=abm_seed, rewire=spec.abm_rewire, schedule=spec.treatment,
                n_jobs=threads,
            )
            report = compare_ode_abm(ode, ens, spec.compare_band_sigmas)
            rows = [
                [t, ode.prevalence[i], ens.mean_prevalence[i], ens.se_prevalence[i],
                 report.covered[i]]
                for i, t in enumerate(ens.times)
            ]
            _write_csv(target("comparison.csv"),
                       ["t", "ode_prev", "mean_prev", "se_prev", "covered"], rows)
            _write_json(target("comparison.json"), {
                "band_sigmas": report.band_sigmas,
                "coverage": report.coverage,
                "n_points": report.n_points,
                "ode_peak": report.ode_peak,
                "ode_peak_time": report.ode_peak_time,
                "ensemble_peak": report.ensemble_peak,
                "ensemble_peak_time": report.ensemble_peak_time,
                "peak_relative_deviation": report.peak_relative_deviation,
                "peak_time_offset": report.peak_time_offset,
            })
            if plot:
                _emit_plot(target("plot_comparison.py"), "comparison.csv", _PLOT_COMPARISON)
            summary = (f"coverage={report.coverage:.4g} "
                       f"peak_rel_dev={report.peak_relative_deviation:.4g} "
                       f"peak_time_offset={report.peak_time_offset:g}")

        elif command == "sensitivity":
            if spec.sensitivity is None:
                raise ConfigError("sensitivity", "section required for the sensitivity command")
            sen = spec.sensitivity

            def runner(overrides):
                return run_trajectory(spec, overrides)

            result = sobol_first_order(
                runner, sen["ranges"], sen["n_base"],
                seed=sen["seed"] if seed is None else seed,
                output=sen["output"], n_jobs=threads,
            )
            header = ["t"] + [f"S_{p}" for p in result.parameters]
            rows = [[t, *result.indices[:, i]] for i, t in enumerate(result.times)]
            _write_csv(target("sobol.csv"), header, rows)
            if plot:
                _emit_plot(target("plot_sobol.py"), "sobol.csv", _PLOT_SOBOL)
            peak_j, peak_t = np.unravel_index(np.nanargmax(result.indices), result.indices.shape)
            summary = (f"max_index={result.parameters[peak_j]}@t={result.times[peak_t]:g} "
                       f"value={result.indices[peak_j, peak_t]:.4g} "
                       f"noise_bound={result.noise_bound:.4g}")

        elif command == "phase":
            if spec.phase is None:
                raise ConfigError("phase", "section required for the phase command")
            traj = run_trajectory(spec)
            series = phase_series(traj, spec.phase["m"], spec.phase["n"],
                                  variant=spec.phase["variant"],
                                  population=spec.phase["population"])
            prefix = "rho" if spec.phase["variant"] == "infected" else "healthy"
            _write_csv(target("phase.csv"),
                       [f"{prefix}_m", f"d{prefix}_n_dt"], series)
            if plot:
                _emit_plot(target("plot_phase.py"), "phase.csv", _PLOT_PHASE)
            summary = (f"points={len(series)} m={spec.phase['m']} n={spec.phase['n']} "
                       f"variant={spec.phase['variant']}")

        elif command == "fit":
            if spec.fit is None:
                raise ConfigError("fit", "section required for the fit command")
            ft = spec.fit
            if ft["observed"] is not None:
                observed = np.asarray(ft["observed"], dtype=float)
            else:
                observed = _read_observed_csv(ft["observed_csv"])

            def runner(overrides):
                return run_trajectory(spec, overrides)

            result = fit_parameters(
                runner, observed[:, 0], observed[:, 1],
                free=ft["free"], initial=ft["initial"], output=ft["output"],
            )
            _write_json(target("fit.json"), {
                "parameters": result.parameters,
                "residual": result.residual,
                "iterations": result.iterations,
                "converged": result.converged,
            })
            fitted = " ".join(f"{k}={v:.6g}" for k, v in result.parameters.items())
            summary = (f"{fitted} residual={result.residual:.6g} "
                       f"iterations={result.iterations} converged={result.converged}")

        else:
            raise ConfigError("", f"unknown command {command!r}")

    except BaseException:
        for path in written:
            try:
                path.unlink(missing_ok=True)
            except OSError:
                pass
        raise
    return summary, written


def _read_observed_csv(path):
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError:
        raise
    data = []
    for i, row in enumerate(rows):
        if not row:
            continue
        try:
            data.append((float(row[0]), float(row[1])))
        except (ValueError, IndexError):
            if i == 0:
                continue  # header line
            raise ConfigError("fit.observed_csv", f"bad row {i + 1} in {path}")
    if not data:
        raise ConfigError("fit.observed_csv", f"no data rows in {path}")
    return np.asarray(data, dtype=float)


# ---------------------------------------------------------------------------
# click wiring
# ---------------------------------------------------------------------------

_EXIT_CODES = ((ConfigError, 1), (DomainError, 1), (StabilityError, 2), (OSError, 3))


def _dispatch(command, config, seed, threads, out, plot, replicas=None):
    if threads is None:
        threads = int(os.environ.get("NETEPI_THREADS", "1"))
    try:
        spec = parse_config(config)
        summary, files = execute(spec, command, seed=seed, threads=threads,
                                 out_dir=out, plot=plot, replicas=replicas)
    except NetepiError as exc:
        code = next(c for t, c in _EXIT_CODES if isinstance(exc, t))
        click.echo(f"error: {exc}", err=True)
        sys.exit(code)
    except OSError as exc:
        click.echo(f"i/o error: {exc}", err=True)
        sys.exit(3)
    click.echo(summary)
    for path in files:
        click.echo(f"wrote {path}")


def _command(name, help_text):
    def wrap(fn):
        fn = click.option("--plot", is_flag=True, help="Also write a matplotlib plotting script.")(fn)
        fn = click.option("--out", type=click.Path(file_okay=False), default=None,
                          help="Output directory (default: out_dir from the config).")(fn)
        fn = click.option("--threads", type=int, default=None,
                          help="Worker parallelism (default: NETEPI_THREADS or 1).")(fn)
        fn = click.option("--seed", type=int, default=None,
                          help="Override the configured random seed.")(fn)
        fn = click.option("--config", required=True,
                          type=click.Path(exists=True, dir_okay=False),
                          help="JSON configuration file.")(fn)
        return main.command(name=name, help=help_text)(fn)
    return wrap


@click.group()
def main():
    """Deterministic epidemic models on rewiring heterogeneous networks."""


@_command("run-ode", "Integrate the configured ODE model and write the trajectory CSV.")
def run_ode(config, seed, threads, out, plot):
    _dispatch("run-ode", config, seed, threads, out, plot)


@_command("run-abm", "Run the agent-based ensemble and write the summary CSV.")
@click.option("--replicas", type=int, default=None,
              help="Override the configured replica count.")
def run_abm(config, seed, threads, out, plot, replicas):
    _dispatch("run-abm", config, seed, threads, out, plot, replicas)


@_command("compare", "Cross-validate the ODE against the agent-based ensemble.")
@click.option("--replicas", type=int, default=None,
              help="Override the configured replica count.")
def compare(config, seed, threads, out, plot, replicas):
    _dispatch("compare", config, seed, threads, out, plot, replicas)


@_command("sensitivity", "Sobol first-order sensitivity indices per output time.")
def sensitivity(config, seed, threads, out, plot):
    _dispatch("sensitivity", config, seed, threads, out, plot)


@_command("phase", "Extract a (state, state-derivative) phase series.")
def phase(config, seed, threads, out, plot):
    _dispatch("phase", config, seed, threads, out, plot)


@_command("fit", "Fit free parameters to an observed incidence series.")
def fit(config, seed, threads, out, plot):
    _dispatch("fit", config, seed, threads, out, plot)


# ---------------------------------------------------------------------------
# plot script templates (written next to the CSVs; not imported here)
# ---------------------------------------------------------------------------

_PLOT_HEADER = """\
#!/usr/bin/env python3
# Self-contained plot script; reads {csv} from its own directory.
import csv
from pathlib import Path

import matplotlib.pyplot as plt

rows = list(csv.reader(open(Path(__file__).parent / "{csv}")))
header, data = rows[0], [[float(v) for v in r] for r in rows[1:]]
col = {{name: i for i, name in enumerate(header)}}
"""

_PLOT_TRAJECTORY = """\
t = [r[col["t"]] for r in data]
for name in ("s_total", "i_total", "r", "incidence"):
    plt.plot(t, [r[col[name]] for r in data], label=name)
plt.xlabel("t"); plt.ylabel("fraction"); plt.legend(); plt.tight_layout()
plt.savefig("trajectory.png", dpi=150)
"""

_PLOT_ENSEMBLE = """\
t = [r[col["t"]] for r in data]
mean = [r[col["mean_prev"]] for r in data]
se = [r[col["se_prev"]] for r in data]
plt.plot(t, mean, label="mean prevalence")
plt.fill_between(t, [m - 3 * s for m, s in zip(mean, se)],
                 [m + 3 * s for m, s in zip(mean, se)], alpha=0.3, label="+-3 SE")
plt.xlabel("t"); plt.ylabel("prevalence"); plt.legend(); plt.tight_layout()
plt.savefig("ensemble.png", dpi=150)
"""

_PLOT_COMPARISON = """\
t = [r[col["t"]] for r in data]
mean = [r[col["mean_prev"]] for r in data]
se = [r[col["se_prev"]] for r in data]
plt.fill_between(t, [m - 3 * s for m, s in zip(mean, se)],
                 [m + 3 * s for m, s in zip(mean, se)], alpha=0.3, label="ABM +-3 SE")
plt.plot(t, [r[col["ode_prev"]] for r in data], "k-", label="ODE")
plt.xlabel("t"); plt.ylabel("prevalence"); plt.legend(); plt.tight_layout()
plt.savefig("comparison.png", dpi=150)
"""

_PLOT_SOBOL = """\
t = [r[col["t"]] for r in data]
for name in header[1:]:
    plt.plot(t, [r[col[name]] for r in data], label=name)
plt.xlabel("t"); plt.ylabel("first-order index"); plt.legend(); plt.tight_layout()
plt.savefig("sobol.png", dpi=150)
"""

_PLOT_PHASE = """\
plt.plot([r[0] for r in data], [r[1] for r in data])
plt.xlabel(header[0]); plt.ylabel(header[1]); plt.tight_layout()
plt.savefig("phase.png", dpi=150)
"""


def _emit_plot(path: Path, csv_name: str, body: str):
    path.write_text(_PLOT_HEADER.format(csv=csv_name) + body, encoding="utf-8")


if __name__ == "__main__":
    main()
