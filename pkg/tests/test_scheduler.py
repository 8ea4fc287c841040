"""Scheduler state, curve fitting and update-rule tests."""

import numpy as np
import pytest
from scipy.special import softmax

from domainmix.gradtrace import DecayFit, LossHistory
from domainmix.impact import ImpactMatrix
from domainmix.scheduler import (
    SamplingState,
    UtilityVector,
    append_schedule_log,
    fit_decay,
    loss_improvement,
    potential,
    should_update,
    uniform_state,
    update_probs,
    utilities,
)


def history(losses, step_gap=10, task_id=0):
    return LossHistory(task_id=task_id,
                       points=tuple((i * step_gap, float(l)) for i, l in enumerate(losses)))


def impact_matrix(normalized):
    normalized = np.asarray(normalized, float)
    return ImpactMatrix(raw=np.zeros_like(normalized), normalized=normalized,
                        metric="fim_kl")


class TestFitDecay:
    def test_constant_history(self):
        fit = fit_decay(history([2.0] * 6))
        assert fit.a == 0.0
        assert fit.b == 0.0
        assert fit.c == pytest.approx(2.0)
        assert fit.residual == pytest.approx(0.0, abs=1e-12)

    def test_noiseless_recovery(self):
        t = np.arange(0, 51, 5)
        losses = 2.0 * np.exp(-0.1 * t) + 0.5
        fit = fit_decay(LossHistory(0, tuple(zip(t.tolist(), losses.tolist()))))
        assert abs(fit.a - 2.0) < 1e-3
        assert abs(fit.b - 0.1) < 1e-3
        assert abs(fit.c - 0.5) < 1e-3

    def test_increasing_history_falls_back(self):
        fit = fit_decay(history([1.0, 1.4, 1.9, 2.3]))
        assert fit.b == 0.0
        assert fit.a == 0.0
        assert fit.c == pytest.approx(np.mean([1.0, 1.4, 1.9, 2.3]))

    def test_too_few_points(self):
        with pytest.raises(ValueError):
            fit_decay(history([2.0, 1.0]))

    def test_heldout_prediction(self):
        # fit on even samples, check odd-sample predictions against the generator
        t_all = np.arange(0, 40, 2)
        gen = lambda t: 1.5 * np.exp(-0.08 * t) + 0.3
        fit = fit_decay(LossHistory(0, tuple((int(t), float(gen(t))) for t in t_all[::2])))
        held = t_all[1::2]
        preds = np.array([fit.predict(t) for t in held])
        assert np.max(np.abs(preds - gen(held))) < 1e-3

    def test_noisy_fit_is_sane(self):
        rng = np.random.default_rng(0)
        t = np.arange(0, 100, 5)
        losses = 2.0 * np.exp(-0.05 * t) + 0.5 + rng.normal(0, 0.01, size=t.size)
        fit = fit_decay(LossHistory(0, tuple(zip(t.tolist(), np.abs(losses).tolist()))))
        assert 0.03 < fit.b < 0.07
        assert fit.residual < 0.05


class TestPotential:
    def test_constant_fit_no_headroom(self):
        fit = DecayFit(a=0.0, b=0.0, c=2.0, residual=0.0)
        assert potential(fit, t=5, tau=10, current_loss=2.0) == 0.0

    def test_decay_model_value(self):
        fit = DecayFit(a=2.0, b=0.1, c=0.5, residual=0.0)
        current = fit.predict(10)
        assert current == pytest.approx(1.2358, abs=1e-4)
        assert potential(fit, t=10, tau=10, current_loss=current) == pytest.approx(
            0.4651, abs=1e-4
        )

    def test_clamped_at_zero(self):
        fit = DecayFit(a=0.0, b=0.0, c=5.0, residual=0.0)
        assert potential(fit, t=0, tau=10, current_loss=1.0) == 0.0


class TestLossImprovement:
    def test_decrease(self):
        assert loss_improvement(history([2.5, 2.1])) == pytest.approx(0.4)

    def test_flat(self):
        assert loss_improvement(history([2.1, 2.1])) == 0.0

    def test_regression_clamped(self):
        assert loss_improvement(history([2.0, 2.4])) == 0.0

    def test_too_few_points(self):
        with pytest.raises(ValueError):
            loss_improvement(history([2.0]))


class TestUtilities:
    def test_symmetric_inputs_give_constant(self):
        m = impact_matrix(np.full((3, 2), 1 / 3))
        u = utilities(m, [0.5, 0.5], [0.1, 0.1], np.full(3, 1 / 3))
        assert np.ptp(u.values) == pytest.approx(0.0, abs=1e-12)

    def test_forced_arithmetic(self):
        m = impact_matrix([[0.8], [0.2]])
        u = utilities(m, [1.0], [0.0], np.array([0.5, 0.5]))
        np.testing.assert_allclose(u.values, [1.6, 0.4])

    def test_halving_prev_doubles_utility(self):
        m = impact_matrix([[0.8], [0.2]])
        base = utilities(m, [1.0], [0.0], np.array([0.5, 0.5]))
        bumped = utilities(m, [1.0], [0.0], np.array([0.25, 0.5]))
        assert bumped.values[0] == pytest.approx(2 * base.values[0])

    def test_zero_prev_rejected(self):
        m = impact_matrix([[1.0], [0.0]])
        with pytest.raises(ValueError):
            utilities(m, [1.0], [0.0], np.array([0.0, 1.0]))


class TestUpdateProbs:
    def test_beta_one_is_identity(self):
        state = uniform_state(4, beta=1.0)
        out = update_probs(state, UtilityVector(np.array([5.0, -1.0, 0.0, 2.0])))
        np.testing.assert_allclose(out.probs, state.probs, atol=1e-12)

    def test_beta_zero_constant_utilities_uniform(self):
        state = SamplingState(k=3, probs=np.array([0.7, 0.2, 0.1]),
                              prev_probs=np.full(3, 1 / 3), beta=0.0, tau=10,
                              floor=1e-5)
        out = update_probs(state, UtilityVector(np.full(3, 2.5)))
        np.testing.assert_allclose(out.probs, np.full(3, 1 / 3), atol=1e-12)

    def test_golden_case(self):
        state = SamplingState(k=2, probs=np.array([0.5, 0.5]),
                              prev_probs=np.array([0.5, 0.5]), beta=0.1, tau=10,
                              floor=5e-5)
        out = update_probs(state, UtilityVector(np.array([1.6, 0.4])), temperature=1.0)
        np.testing.assert_allclose(out.probs, [0.7417, 0.2583], atol=1e-4)
        np.testing.assert_array_equal(out.prev_probs, [0.5, 0.5])
        assert out.update_count == 1

    def test_ema_contraction(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            k = int(rng.integers(2, 6))
            state = uniform_state(k, beta=float(rng.uniform(0.1, 0.9)))
            probs = rng.dirichlet(np.ones(k) * 5)  # interior, floor stays inactive
            state = SamplingState(k=k, probs=probs, prev_probs=probs.copy(),
                                  beta=state.beta, tau=1, floor=state.floor)
            u = UtilityVector(rng.normal(size=k))
            out = update_probs(state, u)
            target = softmax(u.values)
            lhs = np.abs(out.probs - target).sum()
            rhs = state.beta * np.abs(probs - target).sum()
            assert lhs == pytest.approx(rhs, rel=1e-9)

    def test_argmax_utility_gets_argmax_target(self):
        rng = np.random.default_rng(2)
        for _ in range(30):
            k = int(rng.integers(2, 7))
            state = uniform_state(k, beta=0.0)
            u = UtilityVector(rng.normal(size=k))
            out = update_probs(state, u)
            assert np.argmax(out.probs) == np.argmax(u.values)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(3)
        for _ in range(30):
            k = int(rng.integers(2, 6))
            probs = rng.dirichlet(np.ones(k))
            probs = np.maximum(probs, 1e-3)
            probs = probs / probs.sum()
            u = rng.normal(size=k)
            perm = rng.permutation(k)
            state = SamplingState(k=k, probs=probs, prev_probs=probs.copy(),
                                  beta=0.3, tau=5, floor=1e-6)
            out = update_probs(state, UtilityVector(u))
            state_p = SamplingState(k=k, probs=probs[perm], prev_probs=probs[perm].copy(),
                                    beta=0.3, tau=5, floor=1e-6)
            out_p = update_probs(state_p, UtilityVector(u[perm]))
            np.testing.assert_allclose(out_p.probs, out.probs[perm], atol=1e-12)

    def test_uniform_fixed_point(self):
        state = uniform_state(5, beta=0.4)
        out = update_probs(state, UtilityVector(np.full(5, 3.3)))
        np.testing.assert_allclose(out.probs, state.probs, atol=1e-12)

    def test_simplex_closure_under_fuzz(self):
        rng = np.random.default_rng(4)
        state = uniform_state(6, beta=0.2)
        for _ in range(200):
            u = UtilityVector(rng.normal(scale=rng.uniform(0.1, 20), size=6))
            state = update_probs(state, u, temperature=float(rng.uniform(0.05, 5)))
            assert abs(state.probs.sum() - 1.0) <= 1e-9
            assert np.all(state.probs >= state.floor - 1e-15)

    def test_nonfinite_utilities_rejected(self):
        with pytest.raises(ValueError):
            UtilityVector(np.array([1.0, np.inf]))

    def test_bad_temperature(self):
        state = uniform_state(2)
        with pytest.raises(ValueError):
            update_probs(state, UtilityVector(np.zeros(2)), temperature=0.0)


class TestShouldUpdate:
    def test_period_boundary(self):
        state = uniform_state(3, tau=4000)
        assert should_update(state, 4000)

    def test_step_zero_never_updates(self):
        assert not should_update(uniform_state(3, tau=10), 0)

    def test_off_period(self):
        assert not should_update(uniform_state(3, tau=10), 25)


class TestStateAndLog:
    def test_default_floor(self):
        state = uniform_state(8)
        assert state.floor == pytest.approx(1e-4 / 8)

    def test_invalid_simplex_rejected(self):
        with pytest.raises(ValueError):
            SamplingState(k=2, probs=np.array([0.7, 0.7]),
                          prev_probs=np.array([0.5, 0.5]), beta=0.1, tau=1, floor=0.0)

    def test_schedule_log_append(self, tmp_path):
        path = tmp_path / "log.csv"
        append_schedule_log(path, 1, 200, np.array([0.6, 0.4]), np.array([1.0, 0.5]))
        append_schedule_log(path, 2, 400, np.array([0.7, 0.3]), np.array([2.0, 0.1]))
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "update_index,step,domain,prob,utility"
        assert len(lines) == 5
        assert lines[1].startswith("1,200,0,")
