"""JSON run configuration: schema validation and model construction.

A configuration is one JSON object selecting a model and its parameters.
Unknown keys are rejected everywhere (typo safety) and every diagnostic
carries the dotted path of the offending field.  The canonical form emitted
by ``SimulationSpec.canonical_dict`` round-trips through ``parse_config``
unchanged.

Minimal example::

    {"model": "classic", "lambda": 0.05, "mu": 0.05, "rho0": 0.01,
     "t_span": [0, 200]}

Stratified and richer models add a "distribution" object, either
{"type": "power_law", "gamma": 3, "k_min": 1, "k_max": 60} or
{"type": "weights", "k_min": 1, "weights": [...]}.  Command-specific
sections ("abm", "compare", "sensitivity", "phase", "fit") are validated
when present.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .degree import DegreeDistribution, from_weights, truncated_power_law
from .errors import ConfigError, DomainError
from .ode import (
    MODEL_NAMES,
    EpidemicParams,
    TreatmentSchedule,
    build_model,
    integrate,
)

TWO_POP_MODELS = ("bipartite", "hiv_hetero")
HIV_MODELS = ("hiv_msm", "hiv_hetero")

# parameters the sensitivity and fit commands may vary
TUNABLE = ("lambda", "mu", "rho0", "d", "lambda2", "treatment_efficacy", "gamma")


def _expect(mapping, path, known):
    for key in mapping:
        if key not in known:
            raise ConfigError(f"{path}.{key}" if path else key, "unknown key")


def _get(mapping, path, key, kind, default=..., required=False):
    full = f"{path}.{key}" if path else key
    if key not in mapping:
        if required:
            raise ConfigError(full, "missing required field")
        return default
    value = mapping[key]
    if kind is float and isinstance(value, bool):
        raise ConfigError(full, "expected a number")
    if kind is float and isinstance(value, (int, float)):
        return float(value)
    if kind is int and isinstance(value, bool):
        raise ConfigError(full, "expected an integer")
    if kind is int and isinstance(value, int):
        return value
    if kind is not float and kind is not int and isinstance(value, kind):
        return value
    raise ConfigError(full, f"expected {kind.__name__}, got {type(value).__name__}")


def _check_range(path, value, lo, hi, lo_open=False, hi_open=False):
    ok = (value > lo if lo_open else value >= lo) and (value < hi if hi_open else value <= hi)
    if not ok:
        lo_b = "(" if lo_open else "["
        hi_b = ")" if hi_open else "]"
        raise ConfigError(path, f"out of {lo_b}{lo}, {hi}{hi_b}: {value}")
    return value


def _parse_distribution(obj, path):
    if not isinstance(obj, dict):
        raise ConfigError(path, "expected an object")
    kind = _get(obj, path, "type", str, required=True)
    if kind == "power_law":
        _expect(obj, path, {"type", "gamma", "k_min", "k_max"})
        gamma = _get(obj, path, "gamma", float, required=True)
        k_min = _get(obj, path, "k_min", int, default=1)
        k_max = _get(obj, path, "k_max", int, required=True)
        if gamma <= 0:
            raise ConfigError(f"{path}.gamma", f"must be > 0, got {gamma}")
        if k_min < 1 or k_max < k_min:
            raise ConfigError(f"{path}.k_min", f"invalid support [{k_min}, {k_max}]")
        return {"type": "power_law", "gamma": gamma, "k_min": k_min, "k_max": k_max}
    if kind == "weights":
        _expect(obj, path, {"type", "k_min", "weights"})
        k_min = _get(obj, path, "k_min", int, default=1)
        weights = _get(obj, path, "weights", list, required=True)
        if not weights or not all(isinstance(w, (int, float)) and not isinstance(w, bool) and w >= 0 for w in weights):
            raise ConfigError(f"{path}.weights", "expected nonnegative numbers")
        if sum(weights) <= 0:
            raise ConfigError(f"{path}.weights", "at least one weight must be positive")
        if k_min < 1:
            raise ConfigError(f"{path}.k_min", f"must be >= 1, got {k_min}")
        return {"type": "weights", "k_min": k_min, "weights": [float(w) for w in weights]}
    raise ConfigError(f"{path}.type", f"expected 'power_law' or 'weights', got {kind!r}")


def build_distribution(spec_dict) -> DegreeDistribution:
    if spec_dict["type"] == "power_law":
        return truncated_power_law(spec_dict["gamma"], spec_dict["k_min"], spec_dict["k_max"])
    return from_weights(spec_dict["k_min"], spec_dict["weights"])


def _parse_bounds_map(obj, path):
    if not isinstance(obj, dict) or not obj:
        raise ConfigError(path, "expected a nonempty object of parameter ranges")
    out = {}
    for name, pair in obj.items():
        full = f"{path}.{name}"
        if name not in TUNABLE:
            raise ConfigError(full, f"unknown parameter; expected one of {TUNABLE}")
        if (not isinstance(pair, list) or len(pair) != 2
                or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in pair)):
            raise ConfigError(full, "expected [lower, upper]")
        lo, hi = float(pair[0]), float(pair[1])
        if hi <= lo:
            raise ConfigError(full, f"lower {lo} must be below upper {hi}")
        out[name] = (lo, hi)
    return out


@dataclass
class SimulationSpec:
    """Fully validated run configuration."""

    model: str
    params: EpidemicParams
    t_span: tuple
    method: str = "rk4"
    dt: float = 0.1
    link_mode: str = "active"
    distribution: dict | None = None
    distribution2: dict | None = None
    split: object = "hazard"
    rho0_type2: float = 0.0
    asymmetry: float = 0.5
    side_fraction: float = 0.5
    stage_rates: list | None = None
    treatment: TreatmentSchedule | None = None
    per_degree: bool = False
    out_dir: str = "."
    abm_n: int | None = None
    abm_replicas: int = 100
    abm_seed: int = 0
    abm_rewire: str = "full"
    compare_band_sigmas: float = 3.0
    sensitivity: dict | None = None
    phase: dict | None = None
    fit: dict | None = None

    def canonical_dict(self) -> dict:
        """JSON-ready dict that parses back to an identical spec."""
        out = {
            "model": self.model,
            "lambda": self.params.lam,
            "mu": self.params.mu,
            "rho0": self.params.rho0,
            "d": self.params.d,
            "treatment_efficacy": self.params.treatment_efficacy,
            "t_span": list(self.t_span),
            "method": self.method,
            "dt": self.dt,
            "link_mode": self.link_mode,
            "per_degree": self.per_degree,
            "out_dir": self.out_dir,
            "abm": {
                "replicas": self.abm_replicas,
                "seed": self.abm_seed,
                "rewire": self.abm_rewire,
            },
            "compare": {"band_sigmas": self.compare_band_sigmas},
        }
        if self.params.lam2 is not None:
            out["lambda2"] = self.params.lam2
        if self.params.rho0_2 is not None:
            out["rho0_2"] = self.params.rho0_2
        if self.abm_n is not None:
            out["abm"]["n"] = self.abm_n
        if self.distribution is not None:
            out["distribution"] = dict(self.distribution)
        if self.distribution2 is not None:
            out["distribution2"] = dict(self.distribution2)
        if self.model == "two_type":
            out["split"] = self.split
            out["rho0_type2"] = self.rho0_type2
        if self.model == "hiv_hetero":
            out["asymmetry"] = self.asymmetry
        if self.model in TWO_POP_MODELS:
            out["side_fraction"] = self.side_fraction
        if self.stage_rates is not None:
            out["stage_rates"] = self.stage_rates
        if self.treatment is not None:
            out["treatment"] = {
                "initial_coverage": self.treatment.initial_coverage,
                "epochs": list(self.treatment.epochs),
                "coverages": list(self.treatment.coverages),
            }
        if self.sensitivity is not None:
            out["sensitivity"] = {
                "ranges": {k: list(v) for k, v in self.sensitivity["ranges"].items()},
                "n_base": self.sensitivity["n_base"],
                "seed": self.sensitivity["seed"],
                "output": self.sensitivity["output"],
            }
        if self.phase is not None:
            out["phase"] = dict(self.phase)
        if self.fit is not None:
            fit = {
                "free": {k: list(v) for k, v in self.fit["free"].items()},
                "initial": dict(self.fit["initial"]),
                "output": self.fit["output"],
            }
            if self.fit.get("observed") is not None:
                fit["observed"] = [list(pair) for pair in self.fit["observed"]]
            if self.fit.get("observed_csv") is not None:
                fit["observed_csv"] = self.fit["observed_csv"]
            out["fit"] = fit
        return out


_TOP_KEYS = {
    "model", "lambda", "mu", "rho0", "d", "lambda2", "rho0_2",
    "treatment_efficacy", "t_span", "method", "dt", "link_mode",
    "distribution", "distribution2", "split", "rho0_type2", "asymmetry",
    "side_fraction", "stage_rates", "treatment", "per_degree", "out_dir",
    "abm", "compare", "sensitivity", "phase", "fit",
}


def parse_config_data(data) -> SimulationSpec:
    """Validate a decoded JSON object into a SimulationSpec."""
    if not isinstance(data, dict):
        raise ConfigError("", "top-level config must be a JSON object")
    _expect(data, "", _TOP_KEYS)

    model = _get(data, "", "model", str, required=True)
    if model not in MODEL_NAMES:
        raise ConfigError("model", f"expected one of {MODEL_NAMES}, got {model!r}")

    lam = _check_range("lambda", _get(data, "", "lambda", float, required=True), 0, 1)
    mu = _check_range("mu", _get(data, "", "mu", float, default=0.0), 0, 1)
    rho0 = _check_range("rho0", _get(data, "", "rho0", float, required=True), 0, 1,
                        lo_open=True, hi_open=True)
    d = _check_range("d", _get(data, "", "d", float, default=0.0), 0, 1)
    efficacy = _check_range(
        "treatment_efficacy", _get(data, "", "treatment_efficacy", float, default=0.4), 0, 1)

    lam2 = _get(data, "", "lambda2", float, default=None)
    if model in ("two_type", "bipartite"):
        if lam2 is None:
            raise ConfigError("lambda2", f"required for model {model!r}")
        _check_range("lambda2", lam2, 0, 1)
    elif lam2 is not None:
        raise ConfigError("lambda2", f"not used by model {model!r}")

    rho0_2 = _get(data, "", "rho0_2", float, default=None)
    if rho0_2 is not None:
        if model not in TWO_POP_MODELS:
            raise ConfigError("rho0_2", f"not used by model {model!r}")
        _check_range("rho0_2", rho0_2, 0, 1, hi_open=True)

    if model in HIV_MODELS and mu != 0.0:
        raise ConfigError("mu", "hiv models remove through demography; mu must be 0")

    span = _get(data, "", "t_span", list, required=True)
    if (not isinstance(span, list) or len(span) != 2
            or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in span)):
        raise ConfigError("t_span", "expected [t0, t1]")
    t0, t1 = float(span[0]), float(span[1])
    if t1 <= t0:
        raise ConfigError("t_span", f"end {t1} must exceed start {t0}")

    method = _get(data, "", "method", str, default="rk4")
    if method not in ("euler", "rk4"):
        raise ConfigError("method", f"expected 'euler' or 'rk4', got {method!r}")
    dt = _get(data, "", "dt", float, default=0.1)
    if dt <= 0:
        raise ConfigError("dt", f"must be positive, got {dt}")
    link_mode = _get(data, "", "link_mode", str, default="active")
    if link_mode not in ("active", "fixed"):
        raise ConfigError("link_mode", f"expected 'active' or 'fixed', got {link_mode!r}")

    dist = dist2 = None
    if model == "classic":
        if "distribution" in data or "distribution2" in data:
            raise ConfigError("distribution", "classic model takes no distribution")
    else:
        if "distribution" not in data:
            raise ConfigError("distribution", f"required for model {model!r}")
        dist = _parse_distribution(data["distribution"], "distribution")
        if "distribution2" in data:
            if model not in TWO_POP_MODELS:
                raise ConfigError("distribution2", f"not used by model {model!r}")
            dist2 = _parse_distribution(data["distribution2"], "distribution2")

    split = data.get("split", "hazard")
    if "split" in data and model != "two_type":
        raise ConfigError("split", f"not used by model {model!r}")
    if split != "hazard":
        if isinstance(split, bool) or not isinstance(split, (int, float)):
            raise ConfigError("split", "expected 'hazard' or a fraction in [0, 1]")
        split = _check_range("split", float(split), 0, 1)

    rho0_type2 = _get(data, "", "rho0_type2", float, default=0.0)
    if "rho0_type2" in data and model != "two_type":
        raise ConfigError("rho0_type2", f"not used by model {model!r}")
    _check_range("rho0_type2", rho0_type2, 0, 1)

    asymmetry = _get(data, "", "asymmetry", float, default=0.5)
    if "asymmetry" in data and model != "hiv_hetero":
        raise ConfigError("asymmetry", f"not used by model {model!r}")
    _check_range("asymmetry", asymmetry, 0, 1)

    side_fraction = _get(data, "", "side_fraction", float, default=0.5)
    if "side_fraction" in data and model not in TWO_POP_MODELS:
        raise ConfigError("side_fraction", f"not used by model {model!r}")
    _check_range("side_fraction", side_fraction, 0, 1, lo_open=True, hi_open=True)

    stage_rates = None
    if "stage_rates" in data:
        if model == "classic":
            raise ConfigError("stage_rates", "not used by the classic model")
        stage_rates = data["stage_rates"]
        if not isinstance(stage_rates, list) or not stage_rates:
            raise ConfigError("stage_rates", "expected per-stage rates in [0, 1]")
        rows = stage_rates if isinstance(stage_rates[0], list) else [stage_rates]
        if (not all(isinstance(r, list) and r for r in rows)
                or not all(isinstance(v, (int, float)) and not isinstance(v, bool) and 0 <= v <= 1
                           for row in rows for v in row)):
            raise ConfigError("stage_rates", "expected per-stage rates in [0, 1]")
        if model not in HIV_MODELS and mu != 0.0:
            raise ConfigError("stage_rates", "stage_rates replaces mu; set mu=0")

    treatment = None
    if "treatment" in data:
        if model not in HIV_MODELS:
            raise ConfigError("treatment", f"not used by model {model!r}")
        tr = data["treatment"]
        if not isinstance(tr, dict):
            raise ConfigError("treatment", "expected an object")
        _expect(tr, "treatment", {"initial_coverage", "epochs", "coverages"})
        epochs = _get(tr, "treatment", "epochs", list, required=True)
        coverages = _get(tr, "treatment", "coverages", list, required=True)
        initial = _check_range(
            "treatment.initial_coverage",
            _get(tr, "treatment", "initial_coverage", float, default=0.0), 0, 1)
        if not all(isinstance(e, (int, float)) and not isinstance(e, bool) for e in epochs):
            raise ConfigError("treatment.epochs", "expected numbers")
        if not all(isinstance(c, (int, float)) and not isinstance(c, bool) and 0 <= c <= 1
                   for c in coverages):
            raise ConfigError("treatment.coverages", "expected fractions in [0, 1]")
        try:
            treatment = TreatmentSchedule(
                epochs=tuple(float(e) for e in epochs),
                coverages=tuple(float(c) for c in coverages),
                initial_coverage=initial,
            )
        except DomainError as exc:
            raise ConfigError("treatment", str(exc)) from exc

    per_degree = _get(data, "", "per_degree", bool, default=False)
    out_dir = _get(data, "", "out_dir", str, default=".")

    abm_n, abm_replicas, abm_seed, abm_rewire = None, 100, 0, "full"
    if "abm" in data:
        abm = data["abm"]
        if not isinstance(abm, dict):
            raise ConfigError("abm", "expected an object")
        _expect(abm, "abm", {"n", "replicas", "seed", "rewire"})
        abm_n = _get(abm, "abm", "n", int, default=None)
        if abm_n is not None and abm_n < 2:
            raise ConfigError("abm.n", f"must be >= 2, got {abm_n}")
        abm_replicas = _get(abm, "abm", "replicas", int, default=100)
        if abm_replicas < 2:
            raise ConfigError("abm.replicas", f"must be >= 2, got {abm_replicas}")
        abm_seed = _get(abm, "abm", "seed", int, default=0)
        abm_rewire = _get(abm, "abm", "rewire", str, default="full")
        if abm_rewire not in ("full", "none"):
            raise ConfigError("abm.rewire", f"expected 'full' or 'none', got {abm_rewire!r}")

    band = 3.0
    if "compare" in data:
        cmp_obj = data["compare"]
        if not isinstance(cmp_obj, dict):
            raise ConfigError("compare", "expected an object")
        _expect(cmp_obj, "compare", {"band_sigmas"})
        band = _get(cmp_obj, "compare", "band_sigmas", float, default=3.0)
        if band <= 0:
            raise ConfigError("compare.band_sigmas", f"must be positive, got {band}")

    sensitivity = None
    if "sensitivity" in data:
        sen = data["sensitivity"]
        if not isinstance(sen, dict):
            raise ConfigError("sensitivity", "expected an object")
        _expect(sen, "sensitivity", {"ranges", "n_base", "seed", "output"})
        ranges = _parse_bounds_map(_get(sen, "sensitivity", "ranges", dict, required=True),
                                   "sensitivity.ranges")
        n_base = _get(sen, "sensitivity", "n_base", int, default=512)
        if n_base < 64:
            raise ConfigError("sensitivity.n_base", f"must be >= 64, got {n_base}")
        output = _get(sen, "sensitivity", "output", str, default="incidence")
        if output not in ("incidence", "prevalence"):
            raise ConfigError("sensitivity.output", f"expected 'incidence' or 'prevalence', got {output!r}")
        sensitivity = {
            "ranges": ranges, "n_base": n_base,
            "seed": _get(sen, "sensitivity", "seed", int, default=0),
            "output": output,
        }

    phase = None
    if "phase" in data:
        ph = data["phase"]
        if not isinstance(ph, dict):
            raise ConfigError("phase", "expected an object")
        _expect(ph, "phase", {"m", "n", "variant", "population"})
        variant = _get(ph, "phase", "variant", str, default="infected")
        if variant not in ("infected", "healthy"):
            raise ConfigError("phase.variant", f"expected 'infected' or 'healthy', got {variant!r}")
        population = _get(ph, "phase", "population", int, default=1)
        if population not in (1, 2):
            raise ConfigError("phase.population", f"expected 1 or 2, got {population}")
        phase = {
            "m": _get(ph, "phase", "m", int, required=True),
            "n": _get(ph, "phase", "n", int, required=True),
            "variant": variant, "population": population,
        }

    fit = None
    if "fit" in data:
        ft = data["fit"]
        if not isinstance(ft, dict):
            raise ConfigError("fit", "expected an object")
        _expect(ft, "fit", {"free", "initial", "observed", "observed_csv", "output"})
        free = _parse_bounds_map(_get(ft, "fit", "free", dict, required=True), "fit.free")
        initial_obj = _get(ft, "fit", "initial", dict, required=True)
        initial = {}
        for name in free:
            if name not in initial_obj:
                raise ConfigError(f"fit.initial.{name}", "missing initial guess")
            v = initial_obj[name]
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ConfigError(f"fit.initial.{name}", "expected a number")
            initial[name] = float(v)
        for name in initial_obj:
            if name not in free:
                raise ConfigError(f"fit.initial.{name}", "no matching free parameter")
        observed = ft.get("observed")
        observed_csv = _get(ft, "fit", "observed_csv", str, default=None)
        if (observed is None) == (observed_csv is None):
            raise ConfigError("fit.observed", "provide exactly one of observed, observed_csv")
        if observed is not None:
            if (not isinstance(observed, list) or not observed
                    or not all(isinstance(p, list) and len(p) == 2
                               and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in p)
                               for p in observed)):
                raise ConfigError("fit.observed", "expected [[t, value], ...]")
            observed = [[float(t), float(v)] for t, v in observed]
        output = _get(ft, "fit", "output", str, default="incidence")
        if output not in ("incidence", "prevalence"):
            raise ConfigError("fit.output", f"expected 'incidence' or 'prevalence', got {output!r}")
        fit = {"free": free, "initial": initial, "observed": observed,
               "observed_csv": observed_csv, "output": output}

    try:
        params = EpidemicParams(
            lam=lam, mu=mu, rho0=rho0, d=d, lam2=lam2, rho0_2=rho0_2,
            treatment_efficacy=efficacy,
        )
    except DomainError as exc:
        raise ConfigError("", str(exc)) from exc

    return SimulationSpec(
        model=model, params=params, t_span=(t0, t1), method=method, dt=dt,
        link_mode=link_mode, distribution=dist, distribution2=dist2,
        split=split, rho0_type2=rho0_type2, asymmetry=asymmetry,
        side_fraction=side_fraction, stage_rates=stage_rates,
        treatment=treatment, per_degree=per_degree, out_dir=out_dir,
        abm_n=abm_n, abm_replicas=abm_replicas, abm_seed=abm_seed,
        abm_rewire=abm_rewire, compare_band_sigmas=band,
        sensitivity=sensitivity, phase=phase, fit=fit,
    )


def parse_config(path) -> SimulationSpec:
    """Load and validate a JSON configuration file."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"invalid JSON in {path}: {exc}") from exc
    return parse_config_data(data)


def build_spec_model(spec: SimulationSpec, overrides: dict | None = None):
    """Instantiate the configured model, optionally overriding tunables.

    Overrides may touch any of the TUNABLE parameters; "gamma" requires a
    power-law distribution.
    """
    overrides = dict(overrides or {})
    dist_dict = spec.distribution
    if "gamma" in overrides:
        if dist_dict is None or dist_dict["type"] != "power_law":
            raise DomainError("gamma can only be varied on a power_law distribution")
        dist_dict = {**dist_dict, "gamma": overrides.pop("gamma")}
    rename = {"lambda": "lam", "lambda2": "lam2"}
    fields = {
        "lam": spec.params.lam, "mu": spec.params.mu, "rho0": spec.params.rho0,
        "d": spec.params.d, "lam2": spec.params.lam2, "rho0_2": spec.params.rho0_2,
        "treatment_efficacy": spec.params.treatment_efficacy,
    }
    for name, value in overrides.items():
        fields[rename.get(name, name)] = float(value)
    params = EpidemicParams(**fields)

    dist = build_distribution(dist_dict) if dist_dict else None
    dist2 = build_distribution(spec.distribution2) if spec.distribution2 else None
    kwargs = {}
    if spec.model == "two_type":
        kwargs = {"split": spec.split, "rho0_type2": spec.rho0_type2,
                  "stage_rates": spec.stage_rates}
    elif spec.model == "stratified":
        kwargs = {"stage_rates": spec.stage_rates}
    elif spec.model == "bipartite":
        kwargs = {"side_fraction": spec.side_fraction, "stage_rates": spec.stage_rates}
    elif spec.model == "hiv_msm":
        kwargs = {"stage_rates": spec.stage_rates}
        if spec.treatment is not None:
            kwargs["coverage"] = spec.treatment.initial_coverage
    elif spec.model == "hiv_hetero":
        kwargs = {"asymmetry": spec.asymmetry, "side_fraction": spec.side_fraction,
                  "stage_rates": spec.stage_rates}
        if spec.treatment is not None:
            kwargs["coverage"] = spec.treatment.initial_coverage
    return build_model(spec.model, params, dist=dist, dist2=dist2,
                       link_mode=spec.link_mode, **kwargs)


def run_trajectory(spec: SimulationSpec, overrides: dict | None = None,
                   method: str | None = None, dt: float | None = None):
    """Integrate the configured model and return its Trajectory."""
    model = build_spec_model(spec, overrides)
    return integrate(
        model, spec.t_span, dt if dt is not None else spec.dt,
        method if method is not None else spec.method,
        schedule=spec.treatment,
    )
