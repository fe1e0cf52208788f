"""Privacy accountant for private SGD, plus an empirical single-step audit.

All logarithms are natural. The accountant rejects out-of-regime parameters
instead of clamping them.
"""

import logging
import math
from concurrent import futures
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional

import numpy as np
import pandas as pd

from privsgd.errors import ConfigurationError, DomainError, PreconditionError
from privsgd.rng import derive_rng

logger = logging.getLogger(__name__)

# e^x − 1 ≤ 2x holds for x ≤ 1.256
LINEARIZATION_LIMIT = 1.256


class Stage(str, Enum):
    PER_STEP = "PerStep"
    SUBSAMPLED = "Subsampled"
    COMPOSED = "Composed"
    END_TO_END = "EndToEnd"


@dataclass(frozen=True)
class StepPrivacy:
    epsilon_tilde: float
    delta: float
    n: int
    m: int = 1


@dataclass(frozen=True)
class PrivacyReport:
    epsilon: float
    delta_total: float
    stage: Stage
    assumptions: List[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "stage": self.stage.value,
            "epsilon": self.epsilon,
            "delta_total": self.delta_total,
            "assumptions": list(self.assumptions),
        }


def _check_delta(value: float, name: str) -> None:
    if not 0.0 < value < 1.0:
        raise DomainError(f"{name} must lie in (0, 1), got {value}")


def _check_positive(value: float, name: str) -> None:
    if not value > 0.0:
        raise DomainError(f"{name} must be positive, got {value}")


# ---- Per-step calibration and amplification ----

def calibrate_sigma(L: float, delta: float, epsilon_tilde: float) -> float:
    """σ = L·√(3 ln(1/δ)) / ε̃ for an (ε̃, δ) Gaussian step with sensitivity L."""
    _check_positive(L, "L")
    _check_positive(epsilon_tilde, "epsilon_tilde")
    _check_delta(delta, "delta")
    return L * math.sqrt(3.0 * math.log(1.0 / delta)) / epsilon_tilde


def per_step_report(step: StepPrivacy) -> PrivacyReport:
    return PrivacyReport(step.epsilon_tilde, step.delta, Stage.PER_STEP,
                         [f"Gaussian step calibrated for ({step.epsilon_tilde}, {step.delta})"])


def amplify_by_subsampling(step: StepPrivacy) -> PrivacyReport:
    """((m/n)(e^ε̃ − 1), (m/n)δ) for a step on a uniform size-m subsample."""
    _check_positive(step.epsilon_tilde, "epsilon_tilde")
    _check_delta(step.delta, "delta")
    if step.n < 1 or step.m < 1:
        raise DomainError("n and m must be >= 1")
    if step.m > step.n:
        raise DomainError(f"subsample size m={step.m} exceeds n={step.n}")
    p = step.m / step.n
    return PrivacyReport(
        epsilon=p * math.expm1(step.epsilon_tilde),
        delta_total=p * step.delta,
        stage=Stage.SUBSAMPLED,
        assumptions=[f"uniform subsampling of m={step.m} out of n={step.n}"],
    )


# ---- Composition ----

def compose(step: StepPrivacy, tau: int, delta_prime: float) -> PrivacyReport:
    """Advanced composition over a fixed τ, linearised with e^ε̃ − 1 ≤ 2ε̃.

    ε = 2ε̃√(2τ ln(1/δ′))/n + 4τε̃²/n², δ = τδ/n + δ′.
    """
    _check_positive(step.epsilon_tilde, "epsilon_tilde")
    _check_delta(step.delta, "delta")
    _check_delta(delta_prime, "delta_prime")
    if step.m != 1:
        raise DomainError(f"compose covers single-index steps (m=1), got m={step.m}; use compose_exact")
    if tau < 0:
        raise DomainError("tau must be >= 0")
    if step.epsilon_tilde > LINEARIZATION_LIMIT:
        raise PreconditionError(
            f"epsilon_tilde={step.epsilon_tilde} exceeds {LINEARIZATION_LIMIT}; e^x - 1 <= 2x no longer holds",
            inequality=f"epsilon_tilde <= {LINEARIZATION_LIMIT}",
        )
    n, eps = step.n, step.epsilon_tilde
    epsilon = 2.0 * eps * math.sqrt(2.0 * tau * math.log(1.0 / delta_prime)) / n + 4.0 * tau * eps**2 / n**2
    return PrivacyReport(
        epsilon=epsilon,
        delta_total=tau * step.delta / n + delta_prime,
        stage=Stage.COMPOSED,
        assumptions=[
            f"epsilon_tilde <= {LINEARIZATION_LIMIT}",
            f"fixed number of steps tau={tau}",
        ],
    )


def compose_exact(step: StepPrivacy, tau: int, delta_prime: float) -> PrivacyReport:
    """Composition without the linearisation; valid for any ε̃ and m ≤ n.

    ε₀ = (m/n)(e^ε̃ − 1), ε₁ = e^ε₀ − 1, ε = ε₀√(2τ ln(1/δ′)) + τε₀ε₁.
    """
    _check_delta(delta_prime, "delta_prime")
    if tau < 0:
        raise DomainError("tau must be >= 0")
    amplified = amplify_by_subsampling(step)
    eps0 = amplified.epsilon
    eps1 = math.expm1(eps0)
    return PrivacyReport(
        epsilon=eps0 * math.sqrt(2.0 * tau * math.log(1.0 / delta_prime)) + tau * eps0 * eps1,
        delta_total=tau * amplified.delta_total + delta_prime,
        stage=Stage.COMPOSED,
        assumptions=[f"fixed number of steps tau={tau}", f"subsample size m={step.m}"],
    )


# ---- End-to-end parameters ----

@dataclass(frozen=True)
class EndToEndPlan:
    sigma: float
    eta: float
    report: PrivacyReport
    risk_bound: float
    epsilon_tilde: float
    composed: PrivacyReport

    def to_dict(self) -> dict:
        return {
            "sigma": self.sigma,
            "eta": self.eta,
            "risk_bound": self.risk_bound,
            "epsilon_tilde": self.epsilon_tilde,
            "report": self.report.to_dict(),
            "composed": self.composed.to_dict(),
        }


def max_epsilon(n: int) -> float:
    return 1.0 / (2.0 * math.sqrt(n))


def end_to_end(n: int, epsilon: float, delta: float, delta_prime: float,
               L: float, D: float, d: int) -> EndToEndPlan:
    """σ, η, the DP pair and the excess-risk bound for a run on n points.

    σ = 8L√(ln 1/δ)/(√n ε), η = D/(√n(L + σ√d)); the run is
    (4ε(√(ln 1/δ′) + 2), δ + δ′ + 2e^{−n/16})-DP, with the stopping-time
    overrun mass folded into δ, and its excess risk is at most
    5LD/√n + 20LD√(d ln(1/δ))/(εn).
    """
    if n < 16:
        raise PreconditionError(f"n={n} is below 16", inequality="n >= 16")
    _check_positive(epsilon, "epsilon")
    _check_delta(delta, "delta")
    _check_delta(delta_prime, "delta_prime")
    _check_positive(L, "L")
    _check_positive(D, "D")
    if d < 1:
        raise DomainError("d must be >= 1")
    limit = max_epsilon(n)
    if epsilon > limit * (1.0 + 1e-12):
        raise PreconditionError(
            f"epsilon={epsilon} exceeds 1/(2*sqrt(n))={limit:.6g}; the guarantee covers only "
            "the regime where epsilon shrinks like 1/sqrt(n)",
            inequality="epsilon <= 1/(2*sqrt(n))",
        )
    log_d = math.log(1.0 / delta)
    log_dp = math.log(1.0 / delta_prime)
    sigma = 8.0 * L * math.sqrt(log_d) / (math.sqrt(n) * epsilon)
    eta = D / (math.sqrt(n) * (L + sigma * math.sqrt(d)))

    # per-step ε̃ actually delivered by this σ, composed over τ = 2n
    eps_tilde = L * math.sqrt(3.0 * log_d) / sigma
    composed = compose(StepPrivacy(eps_tilde, delta, n), 2 * n, delta_prime)

    report = PrivacyReport(
        epsilon=4.0 * epsilon * (math.sqrt(log_dp) + 2.0),
        delta_total=delta + delta_prime + 2.0 * math.exp(-n / 16.0),
        stage=Stage.END_TO_END,
        assumptions=composed.assumptions[:1] + [
            "conditioned on tau <= 2n; overrun mass 2*exp(-n/16) folded into delta",
            "epsilon <= 1/(2*sqrt(n))",
            "loss convex and L-Lipschitz, feasible set of diameter D",
        ],
    )
    risk_bound = 5.0 * L * D / math.sqrt(n) + 20.0 * L * D * math.sqrt(d * log_d) / (epsilon * n)
    return EndToEndPlan(sigma, eta, report, risk_bound, eps_tilde, composed)


@dataclass(frozen=True)
class TargetParameters:
    epsilon: float
    delta: float
    delta_prime: float
    risk_bound: Optional[float] = None

    def to_dict(self) -> dict:
        return {"epsilon": self.epsilon, "delta": self.delta, "delta_prime": self.delta_prime,
                "risk_bound": self.risk_bound}


def from_target(eps_bar: float, delta_bar: float, n: int, L: Optional[float] = None,
                D: Optional[float] = None, d: Optional[int] = None) -> TargetParameters:
    """Internal (ε, δ, δ′) reaching an overall (ε̄, δ̄) target: δ = δ′ = δ̄/3, ε = ε̄/(8√ln(1/δ′)).

    Besides ε̄/√ln(3/δ̄) ≤ 8/√n, the mapped ε must satisfy ε ≤ 1/(2√n), which
    `end_to_end` enforces; together that caps ε̄/√ln(3/δ̄) at 4/√n. Targets in
    (4/√n, 8/√n] raise PreconditionError naming the 4/√n inequality.
    """
    _check_positive(eps_bar, "eps_bar")
    _check_delta(delta_bar, "delta_bar")
    lower, upper = 6.0 * math.exp(-n / 16.0), 3.0 * math.exp(-4.0)
    if not lower <= delta_bar <= upper:
        raise PreconditionError(
            f"delta_bar={delta_bar} outside [6*exp(-n/16), 3*exp(-4)] = [{lower:.6g}, {upper:.6g}]",
            inequality="6*exp(-n/16) <= delta_bar <= 3*exp(-4)",
        )
    ratio = eps_bar / math.sqrt(math.log(3.0 / delta_bar))
    if ratio > 8.0 / math.sqrt(n):
        raise PreconditionError(
            f"eps_bar/sqrt(ln(3/delta_bar))={ratio:.6g} exceeds 8/sqrt(n)={8.0 / math.sqrt(n):.6g}",
            inequality="eps_bar/sqrt(ln(3/delta_bar)) <= 8/sqrt(n)",
        )
    delta = delta_prime = delta_bar / 3.0
    epsilon = eps_bar / (8.0 * math.sqrt(math.log(1.0 / delta_prime)))
    if epsilon > max_epsilon(n) * (1.0 + 1e-12):
        raise PreconditionError(
            f"mapped epsilon={epsilon:.6g} exceeds 1/(2*sqrt(n))={max_epsilon(n):.6g}",
            inequality="eps_bar/sqrt(ln(3/delta_bar)) <= 4/sqrt(n)",
        )
    risk = None
    if L is not None and D is not None and d is not None:
        risk = 5.0 * L * D / math.sqrt(n) + 160.0 * L * D * math.sqrt(d) * math.log(3.0 / delta_bar) / (eps_bar * n)
    return TargetParameters(epsilon, delta, delta_prime, risk)


# ---- Single-step audit ----

class Direction(str, Enum):
    S_OVER_SPRIME = "S_over_Sprime"
    SPRIME_OVER_S = "Sprime_over_S"


@dataclass(frozen=True)
class AuditGrid:
    intervals: int = 500
    width_sigmas: float = 6.0


@dataclass(eq=False)
class AuditResult:
    max_violation: float
    stderr: float
    significant: bool
    direction: Direction
    event: tuple
    table: pd.DataFrame
    sigma: float

    def summary(self) -> dict:
        return {
            "max_violation": self.max_violation,
            "stderr": self.stderr,
            "significant": self.significant,
            "direction": self.direction.value,
            "event": list(self.event),
            "sigma": self.sigma,
        }


def predicted_violation_boundary(sigma: float, L: float, epsilon_tilde: float,
                                 direction: Direction) -> float:
    """Edge of the region where the Gaussian privacy loss exceeds ε̃.

    The audited step outputs −(g + ξ) from w = 0 with η = 1, g ∈ {L, 0}.
    S over S′ violates for outputs below −(σ²ε̃/L + L/2); S′ over S for
    outputs above σ²ε̃/L − L/2.
    """
    shift = sigma**2 * epsilon_tilde / L
    if Direction(direction) is Direction.S_OVER_SPRIME:
        return -(shift + L / 2.0)
    return shift - L / 2.0


def _audit_counts(seed: int, repetition: int, chunk: int, size: int, sigma: float, L: float,
                  edges: np.ndarray) -> tuple:
    rng = derive_rng(seed, repetition, chunk)
    out_s = -(L + sigma * rng.standard_normal(size))
    out_sp = -(sigma * rng.standard_normal(size))
    inner = edges[1:-1]
    # the outer intervals are open-ended
    c_s = np.bincount(np.searchsorted(inner, out_s, side="right"), minlength=len(edges) - 1)
    c_sp = np.bincount(np.searchsorted(inner, out_sp, side="right"), minlength=len(edges) - 1)
    return c_s, c_sp


def _best_event(p_a: np.ndarray, p_b: np.ndarray, trials: int, factor: float, delta: float):
    """Largest p_a(E) − factor·p_b(E) − δ over single intervals and tail unions."""
    candidates = []
    for kind, pa, pb in (
        ("interval", p_a, p_b),
        ("lower_tail", np.cumsum(p_a), np.cumsum(p_b)),
        ("upper_tail", np.cumsum(p_a[::-1])[::-1], np.cumsum(p_b[::-1])[::-1]),
    ):
        viol = pa - factor * pb - delta
        k = int(np.argmax(viol))
        se = math.sqrt((pa[k] * (1 - pa[k]) + factor**2 * pb[k] * (1 - pb[k])) / trials)
        candidates.append((float(viol[k]), se, kind, k))
    return max(candidates, key=lambda c: c[0] - 3.0 * c[1])


def audit_single_step(sigma: float, L: float, epsilon_tilde: float, delta: float,
                      trials: int = 1_000_000, grid: AuditGrid = AuditGrid(),
                      seed: int = 0, workers: int = 1, repetition: int = 0) -> AuditResult:
    """Monte-Carlo check of one noisy step on neighbouring single-point datasets.

    d = 1, w = 0, η = 1; S has gradient L and S′ gradient 0. Frequencies of
    every grid interval (and every tail union of intervals) are compared in
    both directions; the event with the largest violation beyond 3 binomial
    standard errors is returned.
    """
    if grid.intervals < 2 or grid.intervals > 500:
        raise ConfigurationError("grid must have between 2 and 500 intervals", field="intervals")
    if trials < 2000 * grid.intervals:
        raise ConfigurationError(
            f"trials={trials} too few for {grid.intervals} intervals (need >= {2000 * grid.intervals})",
            field="trials",
        )
    _check_positive(sigma, "sigma")
    _check_positive(L, "L")
    _check_positive(epsilon_tilde, "epsilon_tilde")
    _check_delta(delta, "delta")

    half = grid.width_sigmas * sigma
    edges = np.linspace(-L - half, half, grid.intervals + 1)
    sizes = [len(c) for c in np.array_split(np.arange(trials), max(1, workers))]
    if workers > 1:
        with futures.ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda a: _audit_counts(seed, repetition, a[0], a[1], sigma, L, edges), enumerate(sizes)))
    else:
        parts = [_audit_counts(seed, repetition, i, s, sigma, L, edges) for i, s in enumerate(sizes)]
    c_s = sum(p[0] for p in parts)
    c_sp = sum(p[1] for p in parts)
    p_s, p_sp = c_s / trials, c_sp / trials
    factor = math.exp(epsilon_tilde)
    # the outer bins also collect the tails beyond the grid
    bin_lo = np.concatenate([[-math.inf], edges[1:-1]])
    bin_hi = np.concatenate([edges[1:-1], [math.inf]])

    best = None
    for direction, pa, pb in ((Direction.S_OVER_SPRIME, p_s, p_sp), (Direction.SPRIME_OVER_S, p_sp, p_s)):
        viol, se, kind, k = _best_event(pa, pb, trials, factor, delta)
        if kind == "interval":
            event = (float(bin_lo[k]), float(bin_hi[k]))
        elif kind == "lower_tail":
            event = (-math.inf, float(bin_hi[k]))
        else:
            event = (float(bin_lo[k]), math.inf)
        cand = (viol, se, direction, event)
        if best is None or viol - 3.0 * se > best[0] - 3.0 * best[1]:
            best = cand

    table = pd.DataFrame({
        "interval_lo": bin_lo,
        "interval_hi": bin_hi,
        "p_S": p_s,
        "p_Sprime": p_sp,
        "violation": np.maximum(p_s - factor * p_sp, p_sp - factor * p_s) - delta,
    })
    viol, se, direction, event = best
    result = AuditResult(
        max_violation=viol,
        stderr=se,
        significant=viol > 3.0 * se,
        direction=direction,
        event=event,
        table=table,
        sigma=sigma,
    )
    if result.significant:
        logger.warning("audit violation %.3g > 3*%.3g on %s (%s)", viol, se, event, direction.value)
    return result
