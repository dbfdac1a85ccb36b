import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skidest.imm import (
    ImmBank,
    imm_mix,
    imm_step,
    init_bank,
    model_likelihood,
    run_imm,
    sticky_transition,
)
from skidest.kalman import FilterState, UpdateOutcome, run_kf
from skidest.sysid import LinearModel
from skidest.synth import SynthConfig, generate

from conftest import simulate_run, square_inputs

MODEL = LinearModel(a=0.85, b1=-0.03, b2=0.03, q=1e-4, r=4e-4)


def make_bank(models, states=None, weights=None, transition=None):
    m = len(models)
    states = states or tuple(FilterState(x=0.0, p=1.0) for _ in range(m))
    weights = np.full(m, 1.0 / m) if weights is None else np.asarray(weights, dtype=float)
    transition = sticky_transition(m) if transition is None else np.asarray(transition, dtype=float)
    return ImmBank(models=tuple(models), states=tuple(states), weights=weights, transition=transition)


class TestMixing:
    def test_single_model_passes_through(self):
        bank = make_bank([MODEL], states=(FilterState(x=0.4, p=0.2),), transition=[[1.0]])
        (mixed,) = imm_mix(bank)
        assert (mixed.x, mixed.p) == (0.4, 0.2)

    def test_identical_states_have_no_spread_term(self):
        state = FilterState(x=1.3, p=0.7)
        bank = make_bank([MODEL] * 3, states=(state,) * 3)
        for mixed in imm_mix(bank):
            assert mixed.x == pytest.approx(1.3, abs=1e-15)
            assert mixed.p == pytest.approx(0.7, abs=1e-15)

    def test_hand_evaluated_two_model_mixing(self):
        bank = make_bank(
            [MODEL, MODEL],
            states=(FilterState(x=0.0, p=1.0), FilterState(x=1.0, p=1.0)),
            weights=[0.5, 0.5],
            transition=[[0.9, 0.1], [0.1, 0.9]],
        )
        mixed = imm_mix(bank)
        # mixing probabilities per target are (0.9, 0.1) and (0.1, 0.9)
        assert mixed[0].x == pytest.approx(0.1, abs=1e-15)
        assert mixed[1].x == pytest.approx(0.9, abs=1e-15)
        assert mixed[0].p == pytest.approx(0.9 * (1 + 0.01) + 0.1 * (1 + 0.81), abs=1e-15)
        assert mixed[1].p == pytest.approx(1.09, abs=1e-15)


class TestLikelihood:
    def test_standard_normal_at_zero(self):
        outcome = UpdateOutcome(state=FilterState(0.0, 1.0), innovation=0.0, innovation_var=1.0)
        assert model_likelihood(outcome) == pytest.approx(1.0 / math.sqrt(2 * math.pi), abs=1e-12)

    def test_unit_innovation(self):
        outcome = UpdateOutcome(state=FilterState(0.0, 1.0), innovation=1.0, innovation_var=1.0)
        expected = math.exp(-0.5) / math.sqrt(2 * math.pi)
        assert model_likelihood(outcome) == pytest.approx(expected, abs=1e-12)
        assert expected == pytest.approx(0.24197, abs=1e-5)

    def test_huge_innovation_floors_without_nan(self):
        outcome = UpdateOutcome(state=FilterState(0.0, 1.0), innovation=1e6, innovation_var=0.5)
        assert model_likelihood(outcome) == 1e-300


class TestStep:
    def test_weight_update_uses_previous_weights(self):
        models = (
            LinearModel(a=1.0, b1=0.0, b2=0.0, q=1e-4, r=0.01),
            LinearModel(a=0.0, b1=0.0, b2=0.0, q=1e-4, r=0.01),
        )
        bank = make_bank(models, weights=[0.8, 0.2], transition=np.eye(2))
        new_bank, output = imm_step(bank, (0.0, 0.0), z=0.0)
        likelihoods = np.array([model_likelihood(o) for o in output.per_model])
        expected = likelihoods * np.array([0.8, 0.2])
        expected = expected / expected.sum()
        expected = np.maximum(expected, 1e-12)
        expected = expected / expected.sum()
        np.testing.assert_allclose(new_bank.weights, expected, atol=1e-15)

    def test_combined_variance_dominates_weighted_posteriors(self, rng):
        models = [
            LinearModel(a=a, b1=-0.02, b2=0.02, q=1e-4, r=4e-4) for a in (0.5, 0.8, 0.95)
        ]
        bank = init_bank(models, x0=0.1)
        for _ in range(50):
            bank, output = imm_step(bank, tuple(rng.uniform(-2, 2, size=2)), float(rng.normal()))
            floor = sum(w * o.state.p for w, o in zip(output.weights, output.per_model))
            assert output.combined.p >= floor - 1e-15

    def test_all_likelihoods_floored_carries_weights(self):
        model = LinearModel(a=1.0, b1=0.0, b2=0.0, q=1e-12, r=1e-12)
        bank = make_bank([model, model], weights=[0.7, 0.3])
        new_bank, output = imm_step(bank, (0.0, 0.0), z=1e9)
        assert output.likelihoods_floored
        np.testing.assert_array_equal(new_bank.weights, [0.7, 0.3])

    def test_non_finite_measurement_rejected(self):
        bank = make_bank([MODEL])
        with pytest.raises(ValueError, match="finite"):
            imm_step(bank, (0.0, 0.0), z=float("nan"))

    @settings(max_examples=60, deadline=None)
    @given(
        z=st.floats(-50, 50),
        u=st.tuples(st.floats(-10, 10), st.floats(-10, 10)),
        w0=st.floats(1e-9, 1.0 - 1e-9),
    )
    def test_weight_simplex_preserved(self, z, u, w0):
        models = (
            LinearModel(a=0.9, b1=0.01, b2=-0.01, q=1e-3, r=1e-2),
            LinearModel(a=0.4, b1=0.05, b2=0.05, q=1e-3, r=1e-2),
        )
        bank = make_bank(models, weights=[w0, 1.0 - w0])
        new_bank, output = imm_step(bank, u, z)
        assert np.all(new_bank.weights >= 0)
        assert abs(new_bank.weights.sum() - 1.0) <= 1e-12
        assert not np.any(np.isnan(output.weights))


class TestBankValidation:
    def test_weights_must_be_simplex(self):
        with pytest.raises(ValueError, match="simplex"):
            make_bank([MODEL, MODEL], weights=[0.7, 0.7])

    def test_transition_rows_must_be_stochastic(self):
        with pytest.raises(ValueError, match="row-stochastic"):
            make_bank([MODEL, MODEL], transition=[[0.9, 0.2], [0.1, 0.9]])

    def test_sticky_transition_rows_sum_to_one(self):
        for m in (1, 2, 5, 13):
            tr = sticky_transition(m, stay_prob=0.95)
            np.testing.assert_allclose(tr.sum(axis=1), np.ones(m), atol=1e-12)
            if m > 1:
                assert tr[0, 0] == 0.95


class TestRunImm:
    def test_single_model_bank_reduces_to_kalman(self):
        config = SynthConfig(
            regimes=((0.85, -0.03, 0.03),),
            dwell=1000,
            process_noise_std=0.01,
            measurement_noise_std=0.02,
            steps=500,
            runs=1,
            seed=5,
        )
        (traj,), _ = generate(config)
        kf_outcomes = run_kf(MODEL, traj)
        imm_outputs = run_imm([MODEL], traj)
        for kf_out, imm_out in zip(kf_outcomes, imm_outputs):
            assert imm_out.combined.x == pytest.approx(kf_out.state.x, abs=1e-12)
            assert imm_out.combined.p == pytest.approx(kf_out.state.p, abs=1e-12)
            assert imm_out.weights[0] == 1.0

    def test_identical_models_keep_uniform_weights(self):
        traj = simulate_run((0.85, -0.03, 0.03), square_inputs(300, seed=3), x0=0.1)
        kf_outcomes = run_kf(MODEL, traj)
        outputs = run_imm([MODEL, MODEL, MODEL], traj)
        for kf_out, output in zip(kf_outcomes, outputs):
            np.testing.assert_allclose(output.weights, np.full(3, 1 / 3), atol=1e-10)
            assert output.combined.x == pytest.approx(kf_out.state.x, abs=1e-10)

    def test_matching_model_wins_weight(self, rng):
        true = (0.9, -0.04, 0.04)
        wrong = LinearModel(a=0.4, b1=-0.04, b2=0.04, q=1e-4, r=1e-4)
        right = LinearModel(a=0.9, b1=-0.04, b2=0.04, q=1e-4, r=1e-4)
        traj = simulate_run(
            true, square_inputs(100, seed=6), x0=0.2, process_noise_std=0.005, rng=rng
        )
        outputs = run_imm([wrong, right], traj)
        assert outputs[-1].weights[1] > 0.9

    def test_permutation_equivariance(self, rng):
        models = [
            LinearModel(a=a, b1=b1, b2=b2, q=1e-4, r=4e-4)
            for a, b1, b2 in ((0.5, -0.08, 0.08), (0.85, -0.03, 0.03), (0.97, -0.006, 0.006))
        ]
        traj = simulate_run((0.85, -0.03, 0.03), square_inputs(120, seed=2), x0=0.1,
                            process_noise_std=0.01, rng=rng)
        forward = run_imm(models, traj)
        reversed_outputs = run_imm(models[::-1], traj)
        for fwd, rev in zip(forward, reversed_outputs):
            np.testing.assert_allclose(rev.weights, fwd.weights[::-1], atol=1e-12)
            assert rev.combined.x == pytest.approx(fwd.combined.x, abs=1e-12)
            assert rev.combined.p == pytest.approx(fwd.combined.p, abs=1e-12)

    def test_regime_matched_model_dominates_its_regime(self):
        regimes = ((0.5, -0.08, 0.08), (0.85, -0.03, 0.03), (0.97, -0.006, 0.006))
        config = SynthConfig(
            regimes=regimes,
            dwell=100,
            process_noise_std=0.005,
            measurement_noise_std=0.01,
            steps=600,
            runs=1,
            seed=21,
            fixed_dwell=True,
        )
        (traj,), (labels,) = generate(config)
        models = [LinearModel(a=a, b1=b1, b2=b2, q=2.5e-5, r=1e-4) for a, b1, b2 in regimes]
        outputs = run_imm(models, traj)
        weights = np.array([o.weights for o in outputs])
        for regime in np.unique(labels):
            mask = labels == regime
            assert weights[mask, regime].mean() > 1 / 3

    def test_needs_at_least_one_model(self):
        traj = simulate_run((0.9, 0.0, 0.0), square_inputs(10, seed=0), x0=0.1)
        with pytest.raises(ValueError, match="at least one model"):
            run_imm([], traj)
