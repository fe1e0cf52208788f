import math

import numpy as np
import pytest
from scipy import stats

from privsgd.errors import ConfigurationError, DomainError, PreconditionError
from privsgd.privacy import (
    LINEARIZATION_LIMIT,
    AuditGrid,
    Direction,
    Stage,
    StepPrivacy,
    amplify_by_subsampling,
    audit_single_step,
    calibrate_sigma,
    compose,
    compose_exact,
    end_to_end,
    from_target,
    max_epsilon,
    per_step_report,
    predicted_violation_boundary,
)

LN_1E6 = math.log(1e6)


class TestCalibration:
    def test_cancelling_example(self):
        assert calibrate_sigma(1.0, math.exp(-3.0), 3.0) == pytest.approx(1.0, rel=1e-12)

    def test_one_in_a_million(self):
        assert calibrate_sigma(1.0, 1e-6, 1.0) == pytest.approx(math.sqrt(3.0 * LN_1E6), rel=1e-12)

    def test_homogeneous_in_L(self):
        assert calibrate_sigma(2.0, 1e-5, 0.7) == pytest.approx(2.0 * calibrate_sigma(1.0, 1e-5, 0.7))

    @pytest.mark.parametrize("delta", [0.0, 1.0, 1.5, -0.1])
    def test_delta_domain(self, delta):
        with pytest.raises(DomainError):
            calibrate_sigma(1.0, delta, 1.0)

    def test_per_step_report(self):
        report = per_step_report(StepPrivacy(0.5, 1e-6, 100))
        assert report.stage is Stage.PER_STEP
        assert (report.epsilon, report.delta_total) == (0.5, 1e-6)


class TestAmplification:
    def test_full_batch_is_not_amplified(self):
        report = amplify_by_subsampling(StepPrivacy(0.5, 1e-6, n=50, m=50))
        assert report.epsilon == pytest.approx(math.expm1(0.5))
        assert report.delta_total == pytest.approx(1e-6)
        assert report.epsilon <= 2 * 0.5

    def test_single_index(self):
        report = amplify_by_subsampling(StepPrivacy(0.5, 1e-6, n=100))
        assert report.epsilon == pytest.approx(0.0064872, abs=1e-7)
        assert report.delta_total == pytest.approx(1e-8)
        assert report.stage is Stage.SUBSAMPLED

    def test_vanishing_epsilon(self):
        assert amplify_by_subsampling(StepPrivacy(1e-12, 1e-6, n=10)).epsilon < 1e-12

    def test_subsample_larger_than_dataset(self):
        with pytest.raises(DomainError):
            amplify_by_subsampling(StepPrivacy(0.5, 1e-6, n=10, m=11))


class TestComposition:
    def test_empty_composition(self):
        report = compose(StepPrivacy(0.5, 1e-8, 100), 0, 1e-6)
        assert report.epsilon == 0.0
        assert report.delta_total == pytest.approx(1e-6)

    def test_worked_example(self):
        report = compose(StepPrivacy(0.05, 1e-8, 100), 200, 1e-6)
        assert report.epsilon == pytest.approx(0.074538, rel=1e-4)
        assert report.delta_total == pytest.approx(1.02e-6, rel=1e-12)
        assert report.stage is Stage.COMPOSED
        assert any("1.256" in a for a in report.assumptions)

    def test_matches_independent_arithmetic(self):
        eps, tau, n, dp = 0.3, 57, 210, 1e-7
        expected = 2 * eps * math.sqrt(2 * tau * math.log(1 / dp)) / n + 4 * tau * eps**2 / n**2
        assert compose(StepPrivacy(eps, 1e-9, n), tau, dp).epsilon == pytest.approx(expected, rel=1e-12)

    def test_monotone(self, rng):
        for _ in range(10_000):
            n = int(rng.integers(1, 10_000))
            tau = int(rng.integers(0, 5 * n))
            eps = float(rng.uniform(1e-4, LINEARIZATION_LIMIT - 0.01))
            bump = float(rng.uniform(0.0, LINEARIZATION_LIMIT - eps))
            base = compose(StepPrivacy(eps, 1e-8, n), tau, 1e-6)
            more_steps = compose(StepPrivacy(eps, 1e-8, n), tau + 1, 1e-6)
            more_eps = compose(StepPrivacy(eps + bump, 1e-8, n), tau, 1e-6)
            assert base.epsilon <= more_steps.epsilon
            assert base.delta_total <= more_steps.delta_total
            assert base.epsilon <= more_eps.epsilon

    def test_rejects_nonlinear_regime(self):
        with pytest.raises(PreconditionError) as err:
            compose(StepPrivacy(1.3, 1e-8, 100), 10, 1e-6)
        assert "1.256" in err.value.inequality

    def test_rejects_minibatch(self):
        with pytest.raises(DomainError):
            compose(StepPrivacy(0.5, 1e-8, 100, m=4), 10, 1e-6)

    def test_exact_composition_is_tighter(self, rng):
        for _ in range(1000):
            n = int(rng.integers(10, 10_000))
            tau = int(rng.integers(1, 3 * n))
            step = StepPrivacy(float(rng.uniform(1e-3, 1.0)), 1e-8, n)
            exact = compose_exact(step, tau, 1e-6)
            linear = compose(step, tau, 1e-6)
            assert exact.epsilon <= linear.epsilon * (1 + 1e-12)
            assert exact.delta_total == pytest.approx(linear.delta_total, rel=1e-12)

    def test_exact_composition_handles_large_steps(self):
        report = compose_exact(StepPrivacy(3.0, 1e-8, 1000, m=10), 100, 1e-6)
        eps0 = 10 / 1000 * math.expm1(3.0)
        assert report.epsilon == pytest.approx(
            eps0 * math.sqrt(200 * LN_1E6) + 100 * eps0 * math.expm1(eps0), rel=1e-12
        )


def _oracle_end_to_end(n, eps, delta, delta_prime, L, D, d):
    sigma = 8 * L * math.sqrt(math.log(1 / delta)) / (math.sqrt(n) * eps)
    eta = D / (math.sqrt(n) * (L + sigma * math.sqrt(d)))
    reported = 4 * eps * (math.sqrt(math.log(1 / delta_prime)) + 2)
    delta_total = delta + delta_prime + 2 * math.exp(-n / 16)
    risk = 5 * L * D / math.sqrt(n) + 20 * L * D * math.sqrt(d * math.log(1 / delta)) / (eps * n)
    return sigma, eta, reported, delta_total, risk


class TestEndToEnd:
    def test_worked_example(self):
        plan = end_to_end(10_000, 0.005, 1e-6, 1e-6, 1.0, 1.0, 10)
        assert plan.sigma == pytest.approx(59.471, abs=1e-3)
        assert plan.eta == pytest.approx(5.289e-5, rel=1e-3)
        assert plan.risk_bound == pytest.approx(4.7512, rel=1e-3)
        assert plan.report.stage is Stage.END_TO_END

    @pytest.mark.parametrize("n, delta, delta_prime, L, D, d", [
        (16, 1e-6, 1e-6, 1.0, 1.0, 1),
        (400, 1e-5, 1e-7, 2.0, 0.5, 10),
        (10_000, 1e-8, 1e-6, 1.0, 3.0, 100),
        (123_457, 1e-10, 1e-10, 0.3, 1.0, 7),
    ])
    def test_formula_identities(self, n, delta, delta_prime, L, D, d):
        eps = max_epsilon(n)
        plan = end_to_end(n, eps, delta, delta_prime, L, D, d)
        sigma, eta, reported, delta_total, risk = _oracle_end_to_end(n, eps, delta, delta_prime, L, D, d)
        assert plan.sigma == pytest.approx(sigma, rel=1e-12)
        assert plan.eta == pytest.approx(eta, rel=1e-12)
        assert plan.report.epsilon == pytest.approx(reported, rel=1e-12)
        assert plan.report.delta_total == pytest.approx(delta_total, rel=1e-12)
        assert plan.risk_bound == pytest.approx(risk, rel=1e-12)
        # the stated pair dominates the composition it rests on
        assert plan.composed.epsilon <= plan.report.epsilon
        assert plan.epsilon_tilde <= LINEARIZATION_LIMIT

    def test_epsilon_above_regime(self):
        with pytest.raises(PreconditionError) as err:
            end_to_end(100, 0.051, 1e-6, 1e-6, 1.0, 1.0, 2)
        assert "1/(2*sqrt(n))" in err.value.inequality
        assert err.value.exit_code == 3

    def test_small_n(self):
        with pytest.raises(PreconditionError):
            end_to_end(15, 0.01, 1e-6, 1e-6, 1.0, 1.0, 2)


class TestFromTarget:
    def test_delta_split(self):
        target = from_target(0.1, 3e-6, 400)
        assert target.delta == pytest.approx(1e-6)
        assert target.delta_prime == pytest.approx(1e-6)

    def test_epsilon_mapping(self):
        assert from_target(0.1, 3e-6, 400).epsilon == pytest.approx(0.0033631, rel=1e-4)

    def test_risk_bound_when_geometry_given(self):
        target = from_target(0.1, 3e-6, 400, L=1.0, D=1.0, d=4)
        expected = 5 / 20 + 160 * 2 * math.log(1e6) / (0.1 * 400)
        assert target.risk_bound == pytest.approx(expected, rel=1e-12)
        assert from_target(0.1, 3e-6, 400).risk_bound is None

    def test_delta_bar_too_large(self):
        with pytest.raises(PreconditionError) as err:
            from_target(0.1, 0.1, 400)
        assert "delta_bar" in err.value.inequality

    def test_delta_bar_too_small_for_n(self):
        with pytest.raises(PreconditionError):
            from_target(0.1, 1e-6, 100)

    def test_eps_bar_too_large(self):
        with pytest.raises(PreconditionError):
            from_target(5.0, 3e-6, 400)

    def test_between_four_and_eight_over_root_n_is_rejected(self):
        n, delta_bar = 400, 3e-6
        eps_bar = 6.0 / math.sqrt(n) * math.sqrt(math.log(3.0 / delta_bar))
        with pytest.raises(PreconditionError) as err:
            from_target(eps_bar, delta_bar, n)
        assert "4/sqrt(n)" in err.value.inequality

    def test_round_trip_is_dominated_by_target(self, rng):
        for _ in range(1000):
            n = int(rng.integers(80, 100_000))
            # log-space bounds; e^(-n/16) underflows for large n, so floor at 1e-300
            lo, hi = max(math.log(6.0) - n / 16.0, math.log(1e-300)), math.log(3.0) - 4.0
            delta_bar = math.exp(rng.uniform(lo, hi))
            eps_cap = 4 * math.sqrt(math.log(3 / delta_bar)) / math.sqrt(n)
            eps_bar = float(rng.uniform(0.01, 1.0)) * eps_cap
            target = from_target(eps_bar, delta_bar, n)
            plan = end_to_end(n, target.epsilon, target.delta, target.delta_prime, 1.0, 1.0, 1)
            assert plan.report.epsilon <= eps_bar * (1 + 1e-12)
            assert plan.report.delta_total <= delta_bar * (1 + 1e-12)


class TestAudit:
    def test_boundary_is_where_privacy_loss_hits_epsilon(self):
        sigma, L, eps = 1.7, 1.0, 0.5
        for direction, (mean_a, mean_b) in ((Direction.S_OVER_SPRIME, (-L, 0.0)),
                                            (Direction.SPRIME_OVER_S, (0.0, -L))):
            t = predicted_violation_boundary(sigma, L, eps, direction)
            loss = stats.norm.logpdf(t, mean_a, sigma) - stats.norm.logpdf(t, mean_b, sigma)
            assert loss == pytest.approx(eps, rel=1e-9)

    def test_too_few_trials(self):
        with pytest.raises(ConfigurationError):
            audit_single_step(1.0, 1.0, 0.5, 1e-6, trials=10_000, grid=AuditGrid(intervals=50))

    def test_grid_too_fine(self):
        with pytest.raises(ConfigurationError):
            audit_single_step(1.0, 1.0, 0.5, 1e-6, trials=10**7, grid=AuditGrid(intervals=501))

    def test_table_layout(self):
        result = audit_single_step(1.0, 1.0, 0.5, 1e-6, trials=100_000, grid=AuditGrid(intervals=50))
        assert list(result.table.columns) == ["interval_lo", "interval_hi", "p_S", "p_Sprime", "violation"]
        assert len(result.table) == 50
        assert result.table["interval_lo"].iloc[0] == -math.inf
        assert result.table["interval_hi"].iloc[-1] == math.inf
        assert np.all(np.isfinite(result.table["interval_hi"].iloc[:-1]))
        assert result.table["p_S"].sum() == pytest.approx(1.0)

    @pytest.mark.parametrize("scale", [1.0, 10.0])
    def test_calibrated_noise_passes(self, scale):
        sigma = scale * calibrate_sigma(1.0, 1e-6, 0.5)
        result = audit_single_step(sigma, 1.0, 0.5, 1e-6, trials=100_000, grid=AuditGrid(intervals=50), seed=3)
        assert not result.significant

    def test_deflated_noise_is_caught_at_predicted_edge(self):
        sigma = calibrate_sigma(1.0, 1e-6, 0.5) / 10
        result = audit_single_step(sigma, 1.0, 0.5, 1e-6, trials=100_000, grid=AuditGrid(intervals=50), seed=5)
        assert result.significant
        assert abs(_event_edge(result.event) - predicted_violation_boundary(sigma, 1.0, 0.5, result.direction)) \
            <= 0.5 * sigma

    def test_workers_merge_histograms(self):
        a = audit_single_step(2.0, 1.0, 0.5, 1e-6, trials=100_000, grid=AuditGrid(intervals=50), seed=8,
                              workers=4)
        assert a.table["p_S"].sum() == pytest.approx(1.0)
        assert a.table["p_Sprime"].sum() == pytest.approx(1.0)

    @pytest.mark.slow
    def test_acceptance_repetitions(self):
        calibrated = calibrate_sigma(1.0, 1e-6, 0.5)
        clean = [audit_single_step(calibrated, 1.0, 0.5, 1e-6, seed=11, repetition=r) for r in range(20)]
        assert not any(r.significant for r in clean)

        sigma = calibrated / 10
        caught = 0
        for r in range(20):
            result = audit_single_step(sigma, 1.0, 0.5, 1e-6, seed=12, repetition=r)
            edge = predicted_violation_boundary(sigma, 1.0, 0.5, result.direction)
            if result.significant and abs(_event_edge(result.event) - edge) <= 0.5 * sigma:
                caught += 1
        assert caught >= 19


def _event_edge(event):
    lo, hi = event
    if math.isinf(lo):
        return hi
    if math.isinf(hi):
        return lo
    return 0.5 * (lo + hi)
