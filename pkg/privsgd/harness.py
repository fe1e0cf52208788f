"""Experiment orchestration behind the `run`, `tau-sim`, `calibrate` and `audit` commands.

Every command writes into `<output_dir>/<name>/`; each CSV starts with a
`# config: <json>` line holding the resolved configuration, so a results
directory can be interpreted without the command line that produced it.
"""

import logging
import math
from concurrent import futures
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from dotenv import dotenv_values
from scipy import stats

from privsgd import config
from privsgd.errors import (
    EXIT_AUDIT_VIOLATION,
    EXIT_OK,
    ConfigurationError,
    StepBudgetExceeded,
)
from privsgd.exports import write_csv, write_json
from privsgd.geometry import Box, FeasibleSet, L2Ball, project
from privsgd.losses import (
    GeneratorKind,
    LossKind,
    LossOracle,
    PopulationSpec,
    draw_arrays,
    draw_dataset,
    loss_rows,
    make_oracle,
)
from privsgd.optimizer import (
    BaselineResult,
    RunConfig,
    baseline_minimizer,
    estimate_regret,
    private_sgd,
    regret_bound,
    sgd_step_size,
    utility_bound,
)
from privsgd.privacy import (
    AuditGrid,
    AuditResult,
    audit_single_step,
    calibrate_sigma,
    end_to_end,
    from_target,
    max_epsilon,
)
from privsgd.rng import derive_rng, fresh_seed
from privsgd.sampler import TauStats, expected_tau, simulate_tau, tau_tail_bound

logger = logging.getLogger(__name__)

# stream keys outside the (cell, repeat) range
_BASELINE_STREAM = 2**32
_EVAL_STREAM = 2**32 + 1

MAX_TOKEN = "max"

CELL_COLUMNS = [
    "cell", "n", "epsilon", "sigma", "eta", "repeats", "overruns", "degraded",
    "mean_excess_risk", "stderr", "run_stderr", "baseline_error",
    "bound_value", "bound_satisfied", "fitted_constant", "end_to_end_risk_bound",
    "mean_tau", "mean_regret", "regret_bound", "regret_satisfied",
    "privacy_epsilon", "privacy_delta",
]

# flat KEY=value config keys and their defaults (None = required or derived)
DEFAULTS: Dict[str, Optional[str]] = {
    "name": "experiment",
    "generator": GeneratorKind.LINEAR_MARGIN.value,
    "dimension": "2",
    "feature_bound": "1.0",
    "w_true": None,
    "noise_rate": "0.0",
    "noise_scale": "0.0",
    "population_seed": "0",
    "loss": LossKind.HINGE.value,
    "set": "l2ball",
    "radius": "0.5",
    "center": None,
    "lower": None,
    "upper": None,
    "n_values": "100",
    "epsilon_values": MAX_TOKEN,
    "delta": "1e-6",
    "delta_prime": None,
    "repeats": "10",
    "seed": None,
    "output_dir": None,
    "eval_samples": "20000",
    "baseline_steps": "20000",
    "baseline_holdout": "100000",
    "sigma_override": None,
    "max_steps_factor": "4",
    "workers": None,
}


# ---- Experiment spec ----

@dataclass(eq=False)
class ExperimentSpec:
    name: str
    population: PopulationSpec
    loss: LossKind
    feasible_set: FeasibleSet
    n_values: List[int]
    epsilon_values: List[Union[float, str]]
    delta: float
    delta_prime: float
    repeats: int
    seed: int
    output_dir: Path
    eval_samples: int = 20_000
    baseline_steps: int = 20_000
    baseline_holdout: int = 100_000
    sigma_override: Optional[float] = None
    max_steps_factor: int = 4
    workers: int = 1
    seed_source: str = "config"

    @property
    def run_dir(self) -> Path:
        return Path(self.output_dir) / self.name

    def oracle(self) -> LossOracle:
        return make_oracle(self.loss, self.population.feature_bound, self.feasible_set,
                           self.population.label_bound)

    def cells(self) -> List[Tuple[int, float]]:
        """Every (n, ε) pair; the `max` token resolves to 1/(2√n) per n."""
        out = []
        for n in self.n_values:
            for eps in self.epsilon_values:
                out.append((n, max_epsilon(n) if eps == MAX_TOKEN else float(eps)))
        return out

    def resolved(self) -> dict:
        return {
            "name": self.name,
            "population": self.population.describe(),
            "loss": self.loss.value,
            "set": self.feasible_set.describe(),
            "n_values": list(self.n_values),
            "epsilon_values": list(self.epsilon_values),
            "delta": self.delta,
            "delta_prime": self.delta_prime,
            "repeats": self.repeats,
            "seed": self.seed,
            "seed_source": self.seed_source,
            "eval_samples": self.eval_samples,
            "baseline_steps": self.baseline_steps,
            "baseline_holdout": self.baseline_holdout,
            "sigma_override": self.sigma_override,
            "max_steps_factor": self.max_steps_factor,
            "workers": self.workers,
        }


def _parse(values: Mapping[str, Optional[str]], key: str, cast):
    raw = values.get(key)
    if raw is None or str(raw).strip() == "":
        return None
    try:
        return cast(str(raw).strip())
    except ValueError as exc:
        raise ConfigurationError(f"{key}: cannot parse {raw!r} ({exc})", field=key) from None


def _required(values: Mapping[str, Optional[str]], key: str, cast):
    value = _parse(values, key, cast)
    if value is None:
        raise ConfigurationError(f"{key} must not be empty", field=key)
    return value


def _floats(text: str) -> List[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text: str) -> List[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _epsilons(text: str) -> List[Union[float, str]]:
    out: List[Union[float, str]] = []
    for token in (t.strip() for t in text.split(",")):
        if token:
            out.append(MAX_TOKEN if token.lower() == MAX_TOKEN else float(token))
    return out


def _build_set(values: Mapping[str, Optional[str]], dimension: int) -> FeasibleSet:
    kind = (values.get("set") or "l2ball").strip().lower()
    if kind == "l2ball":
        radius = _required(values, "radius", float)
        center = _parse(values, "center", _floats)
        if center is not None and len(center) != dimension:
            raise ConfigurationError(f"center has {len(center)} coordinates, dimension is {dimension}",
                                     field="center")
        return L2Ball(radius=radius, center=center, dimension=dimension)
    if kind == "box":
        lower = _parse(values, "lower", _floats)
        upper = _parse(values, "upper", _floats)
        if lower is None or upper is None:
            raise ConfigurationError("box needs both lower and upper", field="lower" if lower is None else "upper")
        if len(lower) != dimension:
            raise ConfigurationError(f"lower has {len(lower)} coordinates, dimension is {dimension}",
                                     field="lower")
        return Box(lower=lower, upper=upper)
    raise ConfigurationError(f"unknown set kind {kind!r} (expected l2ball or box)", field="set")


def spec_from_values(values: Mapping[str, Optional[str]]) -> ExperimentSpec:
    """Build an ExperimentSpec from flat string values (config file merged with flags)."""
    unknown = sorted(set(values) - set(DEFAULTS))
    if unknown:
        raise ConfigurationError(f"unknown config key {unknown[0]!r}", field=unknown[0])
    merged = dict(DEFAULTS)
    merged.update({k: v for k, v in values.items() if v is not None})

    dimension = _required(merged, "dimension", int)
    generator = merged["generator"].strip().lower()
    try:
        generator = GeneratorKind(generator)
    except ValueError:
        raise ConfigurationError(f"unknown generator {generator!r}", field="generator") from None
    w_true = _parse(merged, "w_true", _floats)
    if w_true is None and generator is not GeneratorKind.UNIFORM_BALL:
        w_true = [1.0] + [0.0] * (dimension - 1)
    population = PopulationSpec(
        generator=generator,
        dimension=dimension,
        feature_bound=_required(merged, "feature_bound", float),
        seed=_required(merged, "population_seed", int),
        w_true=w_true,
        noise_rate=_required(merged, "noise_rate", float),
        noise_scale=_required(merged, "noise_scale", float),
    )
    try:
        loss = LossKind(merged["loss"].strip().lower())
    except ValueError:
        raise ConfigurationError(f"unknown loss {merged['loss']!r}", field="loss") from None

    seed = _parse(merged, "seed", int)
    seed_source = "config"
    if seed is None:
        seed = fresh_seed()
        seed_source = "entropy"
        logger.warning("no seed given; drew %d from OS entropy (recorded in outputs)", seed)

    delta = _required(merged, "delta", float)
    delta_prime = _parse(merged, "delta_prime", float)
    spec = ExperimentSpec(
        name=merged["name"].strip(),
        population=population,
        loss=loss,
        feasible_set=_build_set(merged, dimension),
        n_values=_parse(merged, "n_values", _ints) or [],
        epsilon_values=_parse(merged, "epsilon_values", _epsilons) or [],
        delta=delta,
        delta_prime=delta if delta_prime is None else delta_prime,
        repeats=_required(merged, "repeats", int),
        seed=seed,
        output_dir=Path(merged["output_dir"] or config.OUTPUT_DIR),
        eval_samples=_required(merged, "eval_samples", int),
        baseline_steps=_required(merged, "baseline_steps", int),
        baseline_holdout=_required(merged, "baseline_holdout", int),
        sigma_override=_parse(merged, "sigma_override", float),
        max_steps_factor=_required(merged, "max_steps_factor", int),
        workers=_parse(merged, "workers", int) or config.WORKERS,
        seed_source=seed_source,
    )
    validate_spec(spec)
    return spec


def load_spec(path: Optional[Union[str, Path]] = None,
              overrides: Optional[Mapping[str, Optional[str]]] = None) -> ExperimentSpec:
    """Read a flat KEY=value file; `overrides` (CLI flags) win over file values."""
    values: Dict[str, Optional[str]] = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigurationError(f"config file not found: {path}", field="config")
        values.update({k.strip().lower(): v for k, v in dotenv_values(path).items()})
        logger.info("loaded experiment config %s", path)
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = str(value)
    return spec_from_values(values)


def validate_spec(spec: ExperimentSpec) -> None:
    if not spec.name or "/" in spec.name:
        raise ConfigurationError("name must be a non-empty directory name", field="name")
    if spec.repeats is None or spec.repeats < 1:
        raise ConfigurationError("repeats must be >= 1", field="repeats")
    if not spec.n_values:
        raise ConfigurationError("n_values must list at least one n", field="n_values")
    if not spec.epsilon_values:
        raise ConfigurationError("epsilon_values must list at least one value", field="epsilon_values")
    for name in ("delta", "delta_prime"):
        value = getattr(spec, name)
        if value is None or not 0.0 < value < 1.0:
            raise ConfigurationError(f"{name} must lie in (0, 1)", field=name)
    for n in spec.n_values:
        if n < 16:
            raise ConfigurationError(f"n={n} is below 16", field="n_values")
        for eps in spec.epsilon_values:
            if eps == MAX_TOKEN:
                continue
            if not eps > 0 or eps > max_epsilon(n) * (1.0 + 1e-12):
                raise ConfigurationError(
                    f"epsilon={eps} outside (0, 1/(2*sqrt(n))] for n={n}", field="epsilon_values"
                )
    if spec.sigma_override is not None and spec.sigma_override < 0:
        raise ConfigurationError("sigma_override must be >= 0", field="sigma_override")
    if spec.eval_samples is None or spec.eval_samples < 1:
        raise ConfigurationError("eval_samples must be >= 1", field="eval_samples")
    if spec.baseline_steps is None or spec.baseline_steps < 10_000:
        raise ConfigurationError("baseline_steps must be >= 10^4", field="baseline_steps")
    if spec.baseline_holdout is None or spec.baseline_holdout < 100_000:
        raise ConfigurationError("baseline_holdout must be >= 10^5", field="baseline_holdout")
    if spec.max_steps_factor is None or spec.max_steps_factor < 1:
        raise ConfigurationError("max_steps_factor must be >= 1", field="max_steps_factor")
    if spec.workers < 1:
        raise ConfigurationError("workers must be >= 1", field="workers")
    if spec.loss is LossKind.SQUARED and spec.population.generator is not GeneratorKind.LINEAR_REGRESSION:
        logger.warning("squared loss on a %s population", spec.population.generator.value)


# ---- run ----

@dataclass(eq=False)
class RunOutcome:
    repeat: int
    tau: int
    regret: float
    output: Optional[np.ndarray]
    overrun: bool = False


@dataclass(eq=False)
class CellRecord:
    cell: int
    n: int
    epsilon: float
    sigma: float
    eta: float
    repeats: int
    overruns: int
    degraded: bool
    mean_excess_risk: float
    stderr: float
    run_stderr: float
    baseline_error: float
    bound_value: float
    bound_satisfied: bool
    fitted_constant: float
    end_to_end_risk_bound: float
    mean_tau: float
    mean_regret: float
    regret_bound: float
    regret_satisfied: bool
    privacy_report: dict = field(default_factory=dict)

    def to_row(self) -> dict:
        row = {k: getattr(self, k) for k in CELL_COLUMNS if hasattr(self, k)}
        row["privacy_epsilon"] = self.privacy_report.get("epsilon")
        row["privacy_delta"] = self.privacy_report.get("delta_total")
        return row

    def to_dict(self) -> dict:
        out = self.to_row()
        out["privacy_report"] = self.privacy_report
        return out


@dataclass(eq=False)
class ExperimentResult:
    spec: ExperimentSpec
    cells: List[CellRecord]
    baseline: BaselineResult
    risk_curve: Optional[dict] = None

    @property
    def degraded(self) -> bool:
        return any(c.degraded for c in self.cells)

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame([c.to_row() for c in self.cells], columns=CELL_COLUMNS)

    def summary(self) -> dict:
        return {
            "command": "run",
            "config": self.spec.resolved(),
            "baseline": {"w": self.baseline.w, "error": self.baseline.error,
                         "budget_steps": self.baseline.budget_steps, "holdout": self.baseline.holdout},
            "cells": [c.to_dict() for c in self.cells],
            "risk_curve": self.risk_curve,
        }


def _run_repeat(job: tuple) -> RunOutcome:
    (population, oracle, feasible_set, n, eta, sigma, max_steps, seed, cell, repeat, comparator) = job
    rng = derive_rng(seed, cell, repeat)
    dataset = draw_dataset(population, n, rng)
    run_config = RunConfig(
        n=n,
        d=population.dimension,
        eta=eta,
        sigma=sigma,
        feasible_set=feasible_set,
        oracle=oracle,
        w1=project(feasible_set, np.zeros(population.dimension)),
        seed=seed,
        max_steps=max_steps,
    )
    try:
        trace = private_sgd(run_config, dataset, rng)
    except StepBudgetExceeded as exc:
        logger.debug("cell %d repeat %d overran max_steps=%d", cell, repeat, max_steps)
        return RunOutcome(repeat=repeat, tau=exc.partial_trace.tau, regret=math.nan, output=None, overrun=True)
    regret = estimate_regret(trace, dataset, comparator, run_config)
    return RunOutcome(repeat=repeat, tau=trace.tau, regret=regret, output=trace.output)


def fit_loglog_slope(xs: Sequence[float], ys: Sequence[float]) -> Tuple[float, float]:
    """Least-squares fit of log y = log C + slope·log x; returns (slope, C)."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    keep = (xs > 0) & (ys > 0) & np.isfinite(ys)
    if keep.sum() < 2:
        raise ConfigurationError("log-log fit needs at least two positive points", field="n_values")
    fit = stats.linregress(np.log(xs[keep]), np.log(ys[keep]))
    return float(fit.slope), float(math.exp(fit.intercept))


def _mean_or_nan(values: np.ndarray) -> float:
    return float(np.mean(values)) if values.size else math.nan


def _summarise_cell(k: int, n: int, eps: float, sigma: float, eta: float, plan, spec: ExperimentSpec,
                    oracle: LossOracle, outcomes: List[RunOutcome], baseline: BaselineResult,
                    X_eval: np.ndarray, y_eval: np.ndarray, baseline_losses: np.ndarray) -> Tuple[CellRecord, pd.DataFrame]:
    d = spec.population.dimension
    D = spec.feasible_set.diameter()
    L = oracle.lipschitz_L

    rows = []
    excess = []
    for o in outcomes:
        risk = math.nan
        if not o.overrun:
            risk = float(np.mean(loss_rows(oracle, o.output, X_eval, y_eval) - baseline_losses))
            excess.append(risk)
        row = {"repeat": o.repeat, "tau": o.tau, "regret": o.regret, "excess_risk": risk, "overrun": int(o.overrun)}
        for j in range(d):
            row[f"w_{j}"] = math.nan if o.output is None else float(o.output[j])
        rows.append(row)
    runs = pd.DataFrame(rows)

    excess = np.asarray(excess)
    completed = runs[runs["overrun"] == 0]
    overruns = int(runs["overrun"].sum())
    run_stderr = float(np.std(excess, ddof=1) / math.sqrt(excess.size)) if excess.size > 1 else 0.0
    stderr = run_stderr + baseline.error
    mean_excess = _mean_or_nan(excess)
    bound = utility_bound(D, L, sigma, d, n)
    r_bound = regret_bound(D, L, sigma, d, n)
    mean_regret = _mean_or_nan(completed["regret"].to_numpy())
    record = CellRecord(
        cell=k,
        n=n,
        epsilon=eps,
        sigma=sigma,
        eta=eta,
        repeats=spec.repeats,
        overruns=overruns,
        degraded=overruns > 0.01 * spec.repeats,
        mean_excess_risk=mean_excess,
        stderr=stderr,
        run_stderr=run_stderr,
        baseline_error=baseline.error,
        bound_value=bound,
        bound_satisfied=bool(mean_excess <= bound + 3.0 * stderr),
        fitted_constant=mean_excess * math.sqrt(n) / (D * (L + sigma * math.sqrt(d))),
        end_to_end_risk_bound=plan.risk_bound,
        mean_tau=_mean_or_nan(completed["tau"].to_numpy()),
        mean_regret=mean_regret,
        regret_bound=r_bound,
        regret_satisfied=bool(mean_regret <= r_bound),
        privacy_report=plan.report.to_dict(),
    )
    return record, runs


def cmd_run(spec: ExperimentSpec) -> ExperimentResult:
    """Run every (n, ε) cell `repeats` times and compare against the bounds."""
    validate_spec(spec)
    oracle = spec.oracle()
    d = spec.population.dimension
    D = spec.feasible_set.diameter()
    L = oracle.lipschitz_L
    logger.info("run %s: %d cells x %d repeats, L=%.4g D=%.4g d=%d",
                spec.name, len(spec.cells()), spec.repeats, L, D, d)

    baseline = baseline_minimizer(spec.population, oracle, spec.feasible_set, spec.baseline_steps,
                                  spec.baseline_holdout, derive_rng(spec.seed, _BASELINE_STREAM))
    X_eval, y_eval = draw_arrays(spec.population, spec.eval_samples, derive_rng(spec.seed, _EVAL_STREAM))
    baseline_losses = loss_rows(oracle, baseline.w, X_eval, y_eval)

    plans = []
    jobs = []
    for k, (n, eps) in enumerate(spec.cells()):
        plan = end_to_end(n, eps, spec.delta, spec.delta_prime, L, D, d)
        if spec.sigma_override is None:
            sigma, eta = plan.sigma, plan.eta
        else:
            sigma = spec.sigma_override
            eta = sgd_step_size(D, L, sigma, d, n)
        plans.append((n, eps, sigma, eta, plan))
        max_steps = spec.max_steps_factor * n
        jobs.append([
            (spec.population, oracle, spec.feasible_set, n, eta, sigma, max_steps, spec.seed, k, r, baseline.w)
            for r in range(spec.repeats)
        ])

    flat = [job for cell_jobs in jobs for job in cell_jobs]
    if spec.workers > 1:
        with futures.ProcessPoolExecutor(max_workers=spec.workers) as pool:
            outcomes = list(pool.map(_run_repeat, flat, chunksize=max(1, len(flat) // (4 * spec.workers))))
    else:
        outcomes = [_run_repeat(job) for job in flat]

    resolved = spec.resolved()
    run_dir = spec.run_dir
    records = []
    for k, (n, eps, sigma, eta, plan) in enumerate(plans):
        cell_outcomes = outcomes[k * spec.repeats:(k + 1) * spec.repeats]
        record, runs = _summarise_cell(k, n, eps, sigma, eta, plan, spec, oracle, cell_outcomes,
                                       baseline, X_eval, y_eval, baseline_losses)
        write_csv(run_dir / f"cell_{k}_runs.csv", runs, {**resolved, "cell": k, "n": n, "epsilon": eps})
        if record.degraded:
            logger.warning("cell %d (n=%d, eps=%.4g) degraded: %d/%d runs overran",
                           k, n, eps, record.overruns, spec.repeats)
        logger.info("cell %d n=%d eps=%.4g: excess risk %.4g (bound %.4g) regret %.4g (bound %.4g)",
                    k, n, eps, record.mean_excess_risk, record.bound_value,
                    record.mean_regret, record.regret_bound)
        records.append(record)

    result = ExperimentResult(spec=spec, cells=records, baseline=baseline)
    if spec.sigma_override == 0.0:
        result.risk_curve = _risk_curve(records, D, L)
    write_csv(run_dir / "cells.csv", result.frame(), resolved)
    write_json(run_dir / "summary.json", result.summary())
    logger.info("wrote %s", run_dir)
    return result


def _risk_curve(records: List[CellRecord], D: float, L: float) -> Optional[dict]:
    ns = sorted({r.n for r in records})
    if len(ns) < 2:
        return None
    # σ = 0 makes ε irrelevant; average duplicate cells per n
    means = [float(np.mean([r.mean_excess_risk for r in records if r.n == n])) for n in ns]
    try:
        slope, constant = fit_loglog_slope(ns, means)
    except ConfigurationError:
        logger.warning("excess risk not positive at enough n values for a log-log fit")
        return None
    return {"n_values": ns, "mean_excess_risk": means, "slope": slope, "constant": constant,
            "constant_over_DL": constant / (D * L)}


# ---- tau-sim ----

def cmd_tau_sim(n_values: Sequence[int], trials: int, seed: int, output_dir: Optional[Path] = None,
                name: str = "tau", workers: int = 1) -> Dict[int, TauStats]:
    if trials < 1000:
        raise ConfigurationError("tau-sim needs trials >= 10^3", field="trials")
    if not n_values or any(n < 1 for n in n_values):
        raise ConfigurationError("n_values must be positive", field="n_values")
    run_dir = Path(output_dir or config.OUTPUT_DIR) / name
    resolved = {"command": "tau-sim", "n_values": list(n_values), "trials": trials, "seed": seed,
                "workers": workers}
    results: Dict[int, TauStats] = {}
    summary = []
    for n in n_values:
        tau_stats = simulate_tau(n, trials, seed, workers=workers)
        results[n] = tau_stats
        write_csv(run_dir / f"tau_n{n}.csv", tau_stats.to_frame(), {**resolved, "n": n})
        row = tau_stats.summary()
        row["expected_tau"] = expected_tau(n)
        row["tail_bound"] = tau_tail_bound(n)
        summary.append(row)
    write_json(run_dir / "summary.json", {"command": "tau-sim", "config": resolved, "results": summary})
    return results


# ---- calibrate ----

def cmd_calibrate(n: Optional[int] = None, eps: Optional[float] = None, delta: Optional[float] = None,
                  delta_prime: Optional[float] = None, L: Optional[float] = None, D: Optional[float] = None,
                  d: Optional[int] = None, eps_bar: Optional[float] = None,
                  delta_bar: Optional[float] = None) -> dict:
    """σ, η, report and risk bound for either flag group; raises on out-of-regime inputs."""
    if eps_bar is not None or delta_bar is not None:
        for key, value in (("eps_bar", eps_bar), ("delta_bar", delta_bar), ("n", n)):
            if value is None:
                raise ConfigurationError(f"--{key.replace('_', '-')} is required with --eps-bar/--delta-bar",
                                         field=key)
        target = from_target(eps_bar, delta_bar, n, L, D, d)
        payload = {"target": {"eps_bar": eps_bar, "delta_bar": delta_bar, "n": n}, **target.to_dict()}
        if L is not None and D is not None and d is not None:
            plan = end_to_end(n, target.epsilon, target.delta, target.delta_prime, L, D, d)
            payload.update(plan.to_dict())
        return payload

    for key, value in (("n", n), ("eps", eps), ("delta", delta), ("L", L), ("D", D), ("d", d)):
        if value is None:
            raise ConfigurationError(f"--{key} is required (or use --eps-bar/--delta-bar)", field=key)
    delta_prime = delta if delta_prime is None else delta_prime
    plan = end_to_end(n, eps, delta, delta_prime, L, D, d)
    payload = {"n": n, "epsilon": eps, "delta": delta, "delta_prime": delta_prime, "L": L, "D": D, "d": d}
    payload.update(plan.to_dict())
    return payload


# ---- audit ----

@dataclass(eq=False)
class AuditRun:
    results: List[AuditResult]
    config: dict

    @property
    def violations(self) -> int:
        return sum(r.significant for r in self.results)

    @property
    def exit_code(self) -> int:
        return EXIT_AUDIT_VIOLATION if self.violations else EXIT_OK


def cmd_audit(L: float = 1.0, epsilon_tilde: float = 0.5, delta: float = 1e-6,
              sigma: Optional[float] = None, sigma_scale: float = 1.0, trials: int = 1_000_000,
              intervals: int = 500, repeats: int = 1, seed: int = 0,
              output_dir: Optional[Path] = None, name: str = "audit", workers: int = 1) -> AuditRun:
    """Repeat the single-step audit; σ defaults to the calibrated value times `sigma_scale`."""
    if repeats < 1:
        raise ConfigurationError("repeats must be >= 1", field="repeats")
    if not sigma_scale > 0:
        raise ConfigurationError("sigma_scale must be positive", field="sigma_scale")
    calibrated = calibrate_sigma(L, delta, epsilon_tilde)
    sigma = calibrated * sigma_scale if sigma is None else sigma
    grid = AuditGrid(intervals=intervals)
    resolved = {"command": "audit", "L": L, "epsilon_tilde": epsilon_tilde, "delta": delta,
                "sigma": sigma, "calibrated_sigma": calibrated, "trials": trials, "intervals": intervals,
                "repeats": repeats, "seed": seed, "workers": workers}
    results = [
        audit_single_step(sigma, L, epsilon_tilde, delta, trials=trials, grid=grid, seed=seed,
                          workers=workers, repetition=r)
        for r in range(repeats)
    ]
    worst = max(range(repeats), key=lambda r: results[r].max_violation)
    run_dir = Path(output_dir or config.OUTPUT_DIR) / name
    write_csv(run_dir / "audit.csv", results[worst].table, {**resolved, "repetition": worst})
    write_json(run_dir / "summary.json", {
        "command": "audit",
        "config": resolved,
        "violations": sum(r.significant for r in results),
        "repetitions": [r.summary() for r in results],
    })
    run = AuditRun(results=results, config=resolved)
    logger.info("audit sigma=%.4g: %d/%d repetitions significant", sigma, run.violations, repeats)
    return run

