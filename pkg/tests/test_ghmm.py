import math

import numpy as np
import pytest
from oracles import brute_force_log_density, stationary_distribution

from ncwfa.ghmm import (
    EmConfig,
    GaussianHmm,
    em_fit,
    log_density_factored,
    log_density_forward,
    log_density_forward_batch,
    random_hmm,
    sample,
    sample_dataset,
    shifting_hmm_log_density,
)
from ncwfa.prob_core import LOG_2PI, DiagGaussian, MixtureParams, log_mixture_density


class TestSample:
    def test_single_state_iid_mean(self):
        hmm = GaussianHmm([1.0], [[1.0]], (DiagGaussian([1.5], [2.0]),))
        rng = np.random.default_rng(0)
        obs = sample_dataset(hmm, 2000, 50, rng)  # 1e5 draws
        n = obs.size
        se = math.sqrt(2.0 / n)
        assert abs(obs.mean() - 1.5) < 3 * se

    def test_permutation_chain_is_deterministic_orbit(self):
        trans = np.roll(np.eye(3), 1, axis=1)  # 0 -> 1 -> 2 -> 0
        ems = tuple(DiagGaussian([float(i)], [1.0]) for i in range(3))
        hmm = GaussianHmm([0.0, 1.0, 0.0], trans, ems)
        rng = np.random.default_rng(1)
        _, states = sample(hmm, 7, rng, return_states=True)
        np.testing.assert_array_equal(states, (1 + np.arange(7)) % 3)

    def test_occupancy_matches_stationary_distribution(self):
        rng = np.random.default_rng(2)
        hmm = random_hmm(3, 1, rng)
        _, states = sample_dataset(hmm, 20000, 50, np.random.default_rng(3), return_states=True)
        occ = np.bincount(states.ravel(), minlength=3) / states.size
        pi = stationary_distribution(hmm.trans)
        assert np.max(np.abs(occ - pi)) < 0.01

    def test_deterministic_under_seed(self):
        hmm = random_hmm(3, 2, np.random.default_rng(4))
        a = sample_dataset(hmm, 5, 6, np.random.default_rng(7))
        b = sample_dataset(hmm, 5, 6, np.random.default_rng(7))
        np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(
            sample(hmm, 6, np.random.default_rng(8)), sample(hmm, 6, np.random.default_rng(8))
        )


class TestForward:
    def test_length_one_is_init_weighted_mixture(self):
        rng = np.random.default_rng(5)
        hmm = random_hmm(4, 2, rng)
        x = rng.normal(size=2)
        mix = MixtureParams.from_weights(hmm.init, hmm.emissions)
        assert np.isclose(log_density_forward(hmm, x[None, :]), log_mixture_density(x, mix), atol=1e-12)

    def test_path_enumeration_oracle(self):
        rng = np.random.default_rng(6)
        hmm = random_hmm(3, 1, rng)
        seq = sample(hmm, 3, rng)
        got = log_density_forward(hmm, seq)
        want = brute_force_log_density(hmm, seq)
        assert abs(got - want) < 1e-10 * abs(want)

    def test_path_enumeration_battery(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            k = int(rng.integers(1, 5))
            l = int(rng.integers(1, 5))
            cov = "full" if rng.random() < 0.5 else "diag"
            hmm = random_hmm(k, 2, rng, cov=cov)
            seq = sample(hmm, l, rng)
            got = log_density_forward(hmm, seq)
            want = brute_force_log_density(hmm, seq)
            assert abs(got - want) < 1e-10 * max(abs(want), 1.0)

    def test_frozen_chain_closed_form(self):
        rng = np.random.default_rng(8)
        ems = (DiagGaussian([-2.0], [0.5]), DiagGaussian([2.0], [1.5]))
        hmm = GaussianHmm([0.3, 0.7], np.eye(2), ems)
        seq = rng.normal(size=(4, 1))
        per_state = [
            sum(-0.5 * (LOG_2PI + np.log(g.var[0]) + (seq[t, 0] - g.mean[0]) ** 2 / g.var[0]) for t in range(4))
            for g in ems
        ]
        want = np.log(0.3 * np.exp(per_state[0]) + 0.7 * np.exp(per_state[1]))
        assert np.isclose(log_density_forward(hmm, seq), want, atol=1e-10)

    def test_batch_matches_single(self):
        rng = np.random.default_rng(9)
        hmm = random_hmm(3, 2, rng)
        X = sample_dataset(hmm, 6, 5, rng)
        batch = log_density_forward_batch(hmm, X)
        singles = [log_density_forward(hmm, x) for x in X]
        np.testing.assert_allclose(batch, singles, atol=1e-12)

    def test_dimension_mismatch(self):
        hmm = random_hmm(2, 2, np.random.default_rng(10))
        with pytest.raises(ValueError, match="dimension"):
            log_density_forward(hmm, np.zeros((3, 5)))


class TestFactored:
    def test_length_one_coincides_with_forward(self):
        rng = np.random.default_rng(11)
        hmm = random_hmm(3, 2, rng)
        x = rng.normal(size=(1, 2))
        assert np.isclose(log_density_factored(hmm, x), log_density_forward(hmm, x), atol=1e-12)

    def test_single_state_coincides_for_all_lengths(self):
        rng = np.random.default_rng(12)
        hmm = random_hmm(1, 2, rng)
        for l in (1, 2, 5, 20):
            seq = sample(hmm, l, rng)
            assert np.isclose(
                log_density_factored(hmm, seq), log_density_forward(hmm, seq), atol=1e-10
            )

    def test_direct_formula_oracle_and_forward_gap(self):
        rng = np.random.default_rng(13)
        hmm = random_hmm(2, 1, rng)
        seq = sample(hmm, 3, rng)
        # independent application of the displayed product formula
        w = hmm.init.copy()
        want = 0.0
        for t in range(3):
            dens = [
                math.exp(-0.5 * (LOG_2PI + np.log(g.var[0]) + (seq[t, 0] - g.mean[0]) ** 2 / g.var[0]))
                for g in hmm.emissions
            ]
            want += math.log(w @ np.array(dens))
            w = w @ hmm.trans
        got = log_density_factored(hmm, seq)
        assert np.isclose(got, want, atol=1e-10)
        assert not np.isclose(got, log_density_forward(hmm, seq), atol=1e-6)


class TestShifting:
    def test_at_the_mean(self):
        assert np.isclose(shifting_hmm_log_density([1.0]), -0.5 * LOG_2PI)

    def test_every_point_on_its_shifted_mean(self):
        assert np.isclose(shifting_hmm_log_density([1.0, 2.0, 3.0]), 3 * (-0.5 * LOG_2PI))

    def test_direct_formula(self):
        want = (-0.5 * LOG_2PI - 0.5) + (-0.5 * LOG_2PI - 2.0)
        assert np.isclose(shifting_hmm_log_density([0.0, 0.0]), want, atol=1e-12)


class TestEm:
    def test_single_state_is_moment_matching(self):
        rng = np.random.default_rng(14)
        data = rng.normal(loc=1.0, scale=1.3, size=(100, 3, 2))
        model = em_fit(list(data), 1, EmConfig(max_iters=1, restarts=1, seed=0))
        pooled = data.reshape(-1, 2)
        np.testing.assert_allclose(model.emissions[0].mean, pooled.mean(axis=0), atol=1e-10)
        # M-step adds the documented 1e-6 diagonal regularization
        np.testing.assert_allclose(
            model.emissions[0].var, pooled.var(axis=0) + 1e-6, atol=1e-10
        )

    def test_recovers_well_separated_two_state_model(self):
        gen = GaussianHmm(
            [0.6, 0.4],
            [[0.8, 0.2], [0.3, 0.7]],
            (DiagGaussian([-5.0], [0.1]), DiagGaussian([5.0], [0.1])),
        )
        rng = np.random.default_rng(15)
        train = sample_dataset(gen, 500, 7, rng)
        test = sample_dataset(gen, 300, 7, rng)
        model = em_fit(list(train), 2, EmConfig(seed=1))
        got = log_density_forward_batch(model, test).mean() / 7
        want = log_density_forward_batch(gen, test).mean() / 7
        assert abs(got - want) < 0.1

    def test_log_likelihood_trace_is_monotone(self):
        rng = np.random.default_rng(16)
        for run in range(10):
            gen = random_hmm(3, 2, rng)
            train = sample_dataset(gen, 60, 5, rng)
            _, history = em_fit(
                list(train), 3, EmConfig(max_iters=30, restarts=1, seed=run), return_history=True
            )
            diffs = np.diff(history)
            assert np.all(diffs >= -1e-9)

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValueError):
            em_fit([], 2, EmConfig())
