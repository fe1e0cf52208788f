"""The private SGD loop, its trace, and regret / risk estimation.

Noise convention: ξ_t has per-coordinate standard deviation σ
(covariance σ²I) everywhere in this package.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from privsgd.errors import ConfigurationError, StepBudgetExceeded
from privsgd.geometry import EuclideanPotential, FeasibleSet, Potential, as_vector, mirror_step
from privsgd.losses import (
    DataPoint,
    LossKind,
    LossOracle,
    PopulationSpec,
    check_dataset,
    dataset_arrays,
    draw_arrays,
    loss_rows,
    subgradient_rows,
)
from privsgd.sampler import FreshSet, sample_index

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class RunConfig:
    n: int
    d: int
    eta: float
    sigma: float
    feasible_set: FeasibleSet
    oracle: LossOracle
    w1: np.ndarray
    seed: int = 0
    max_steps: Optional[int] = None
    eta_schedule: Optional[Callable[[int], float]] = None
    potential: Optional[Potential] = None

    def __post_init__(self) -> None:
        self.w1 = as_vector(self.w1, self.d, "w1")
        if self.max_steps is None:
            self.max_steps = 4 * self.n
        if self.potential is None:
            self.potential = EuclideanPotential(self.d)
        self.validate()

    def validate(self) -> None:
        if self.n < 1:
            raise ConfigurationError("n must be >= 1", field="n")
        if self.feasible_set.dimension != self.d:
            raise ConfigurationError("feasible set dimension differs from d", field="d")
        if not self.eta > 0:
            raise ConfigurationError("eta must be positive", field="eta")
        if not self.sigma >= 0:
            raise ConfigurationError("sigma must be nonnegative", field="sigma")
        if self.max_steps < self.n:
            raise ConfigurationError("max_steps must be >= n", field="max_steps")
        if not self.feasible_set.contains(self.w1):
            raise ConfigurationError("w1 lies outside the feasible set", field="w1")

    def step_size(self, t: int) -> float:
        return self.eta if self.eta_schedule is None else float(self.eta_schedule(t))

    def describe(self) -> dict:
        return {
            "n": self.n,
            "d": self.d,
            "eta": self.eta,
            "sigma": self.sigma,
            "set": self.feasible_set.describe(),
            "loss": self.oracle.kind.value,
            "lipschitz_L": self.oracle.lipschitz_L,
            "w1": self.w1.tolist(),
            "seed": self.seed,
            "max_steps": self.max_steps,
        }


@dataclass(eq=False)
class Step:
    t: int
    sampled_index: int
    was_fresh: bool
    iterate_before: np.ndarray
    noise_norm: float


@dataclass(eq=False)
class RunTrace:
    steps: List[Step] = field(default_factory=list)
    tau: int = 0
    fresh_step_times: List[int] = field(default_factory=list)
    output: Optional[np.ndarray] = None

    def fresh_steps(self) -> List[Step]:
        return [s for s in self.steps if s.was_fresh]

    def fresh_iterates(self) -> np.ndarray:
        return np.vstack([s.iterate_before for s in self.fresh_steps()])

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "t": [s.t for s in self.steps],
                "index": [s.sampled_index for s in self.steps],
                "fresh": [int(s.was_fresh) for s in self.steps],
                "noise_norm": [s.noise_norm for s in self.steps],
            }
        )


@dataclass
class RiskEstimate:
    mean: float
    stderr: float
    eval_samples: int


# ---- Private SGD ----

def private_sgd(config: RunConfig, dataset: Sequence[DataPoint],
                rng: Optional[np.random.Generator] = None) -> RunTrace:
    """Noisy projected SGD with fresh / stale steps until |F| > n/2.

    Each step draws the index first and then ξ_t, so the index stream does
    not depend on σ. Fresh steps move along ∇f(w_t, x_{y_t}) + ξ_t, stale
    steps along ξ_t only. The output averages w_t over fresh-step times.
    """
    if len(dataset) != config.n:
        raise ConfigurationError(f"dataset has {len(dataset)} points, config says n={config.n}", field="n")
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    X, y = dataset_arrays(dataset)
    if X.shape[1] != config.d:
        raise ConfigurationError("feature dimension differs from d", field="d")
    check_dataset(config.oracle, X, y)

    fresh = FreshSet(config.n)
    trace = RunTrace()
    w = config.w1.copy()
    fresh_sum = np.zeros(config.d)
    t = 0
    while not fresh.should_stop():
        if t >= config.max_steps:
            trace.tau = t
            raise StepBudgetExceeded(
                f"max_steps={config.max_steps} reached with {fresh.count} fresh indices (n={config.n})",
                partial_trace=trace,
            )
        t += 1
        idx = sample_index(rng, config.n)
        xi = config.sigma * rng.standard_normal(config.d)
        is_fresh = fresh.record(idx)
        trace.steps.append(Step(t, idx, is_fresh, w, float(np.linalg.norm(xi))))
        if is_fresh:
            trace.fresh_step_times.append(t)
            fresh_sum += w
            g = subgradient_rows(config.oracle, w, X[idx], y[idx : idx + 1])[0] + xi
        else:
            g = xi
        w = mirror_step(config.potential, config.feasible_set, w, g, config.step_size(t))

    trace.tau = t
    trace.output = fresh_sum / len(trace.fresh_step_times)
    logger.debug("private_sgd n=%d tau=%d fresh=%d", config.n, t, len(trace.fresh_step_times))
    return trace


def plain_projected_sgd(feasible_set: FeasibleSet, oracle: LossOracle, w1, eta: float,
                        stream: Iterable[Tuple[np.ndarray, float]]) -> np.ndarray:
    """Reference single-pass projected SGD; returns the iterates before each step."""
    w = np.array(w1, dtype=float)
    iterates = []
    for features, label in stream:
        iterates.append(w.copy())
        margin_or_pred = float(w @ features)
        if oracle.kind is LossKind.HINGE:
            g = -label * features if label * margin_or_pred <= 1.0 else np.zeros_like(w)
        elif oracle.kind is LossKind.ABSOLUTE:
            g = np.sign(margin_or_pred - label) * features
        else:
            g = (margin_or_pred - label) * features
        w = feasible_set.project(w - eta * g)
    return np.array(iterates)


# ---- Regret and risk ----

def estimate_regret(trace: RunTrace, dataset: Sequence[DataPoint], u, config: RunConfig) -> float:
    """Σ over fresh steps of f(w_t, x_{y_t}) − f(u, x_{y_t}).

    The ⟨ξ_t, ·⟩ terms have zero mean and are left out.
    """
    u = as_vector(u, config.d, "u")
    if not config.feasible_set.contains(u):
        raise ConfigurationError("comparator lies outside the feasible set", field="u")
    steps = trace.fresh_steps()
    if not steps:
        return 0.0
    X, y = dataset_arrays(dataset)
    idx = np.array([s.sampled_index for s in steps])
    W = np.vstack([s.iterate_before for s in steps])
    return float(np.sum(loss_rows(config.oracle, W, X[idx], y[idx]) - loss_rows(config.oracle, u, X[idx], y[idx])))


def empirical_risk(w, oracle: LossOracle, X: np.ndarray, y: np.ndarray) -> RiskEstimate:
    losses = loss_rows(oracle, w, X, y)
    m = losses.shape[0]
    stderr = float(np.std(losses, ddof=1) / math.sqrt(m)) if m > 1 else 0.0
    return RiskEstimate(mean=float(np.mean(losses)), stderr=stderr, eval_samples=m)


def estimate_risk(w, spec: PopulationSpec, oracle: LossOracle, eval_samples: int,
                  rng: np.random.Generator) -> RiskEstimate:
    """Monte-Carlo F(w) = E_x f(w, x) over fresh draws."""
    if eval_samples < 1:
        raise ConfigurationError("eval_samples must be >= 1", field="eval_samples")
    X, y = draw_arrays(spec, eval_samples, rng)
    return empirical_risk(w, oracle, X, y)


# ---- Non-private baseline ----

@dataclass(eq=False)
class BaselineResult:
    w: np.ndarray
    error: float
    budget_steps: int
    holdout: int


def baseline_minimizer(spec: PopulationSpec, oracle: LossOracle, feasible_set: FeasibleSet,
                       budget_steps: int, holdout: int = 100_000,
                       rng: Optional[np.random.Generator] = None) -> BaselineResult:
    """Averaged projected subgradient descent, η_t = D/(L√t), on a held-out sample.

    `error` = 1.5·D·L/√budget + D·L/√holdout bounds the oracle's own gap.
    """
    if budget_steps < 10_000:
        raise ConfigurationError("baseline needs budget_steps >= 10^4", field="baseline_steps")
    if holdout < 100_000:
        raise ConfigurationError("baseline needs a held-out sample of >= 10^5", field="baseline_holdout")
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    X, y = draw_arrays(spec, holdout, rng)
    picks = rng.integers(0, holdout, size=budget_steps)
    D = feasible_set.diameter()
    L = oracle.lipschitz_L
    w = feasible_set.project(np.zeros(feasible_set.dimension))
    total = np.zeros_like(w)
    for t in range(1, budget_steps + 1):
        total += w
        i = picks[t - 1]
        g = subgradient_rows(oracle, w, X[i], y[i : i + 1])[0]
        w = feasible_set.project(w - (D / (L * math.sqrt(t))) * g)
    error = 1.5 * D * L / math.sqrt(budget_steps) + D * L / math.sqrt(holdout)
    logger.info("baseline minimizer: %d steps, oracle error %.3g", budget_steps, error)
    return BaselineResult(w=total / budget_steps, error=error, budget_steps=budget_steps, holdout=holdout)


# ---- Guarantees ----

def regret_bound(D: float, L: float, sigma: float, d: int, n: int) -> float:
    return 2.0 * D * (L + sigma * math.sqrt(d)) * math.sqrt(n)


def utility_bound(D: float, L: float, sigma: float, d: int, n: int) -> float:
    return 2.5 * D * (L + sigma * math.sqrt(d)) / math.sqrt(n)


def sgd_step_size(D: float, L: float, sigma: float, d: int, n: int) -> float:
    """η = D / (√n (L + σ√d))."""
    return D / (math.sqrt(n) * (L + sigma * math.sqrt(d)))
