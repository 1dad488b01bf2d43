import numpy as np
import pytest

from ncwfa.ghmm import random_hmm, sample_dataset
from ncwfa.model import LinearCwfa, RnadeNcwfa, TanhFeatureMap
from ncwfa.spectral import (
    HankelSet,
    exact_hankel_trains,
    hankel_from_linear_cwfa,
    recover_density_model,
    recover_linear_cwfa,
    spectral_learn,
    trains_from_fit,
)
from ncwfa.tensor_core import tt_to_dense
from ncwfa.training import TrainConfig, fit_hankel, init_direct_params, model_from_direct_params


def random_cwfa(k, d, p, rng, scale=0.5):
    return LinearCwfa(
        alpha=rng.normal(size=k),
        A=scale * rng.normal(size=(k, d, k)),
        omega=rng.normal(size=(k, p)),
    )


def random_density_model(k, d, rng, m=2):
    cfg = TrainConfig(states=k, mixtures=m, seed=int(rng.integers(2**31)))
    graph = init_direct_params(cfg, d, rng)
    graph.params["A"] = 0.5 * rng.standard_normal((k, d, k))
    graph.params["alpha"] = rng.standard_normal(k)
    graph.params["W"] = rng.standard_normal((d, d))
    return model_from_direct_params(graph.params)


def hankel_set_for(cwfa, L):
    return HankelSet(
        hankel_from_linear_cwfa(cwfa, L),
        hankel_from_linear_cwfa(cwfa, 2 * L),
        hankel_from_linear_cwfa(cwfa, 2 * L + 1),
        L,
    )


class TestHankelFromLinearCwfa:
    def test_length_one_rows_are_basis_values(self):
        rng = np.random.default_rng(0)
        cwfa = random_cwfa(3, 2, 2, rng)
        dense = tt_to_dense(hankel_from_linear_cwfa(cwfa, 1))
        eye = np.eye(2)
        for i in range(2):
            np.testing.assert_allclose(dense[i], cwfa.apply(eye[i][None, :]), atol=1e-12)

    def test_basis_sequences_match_apply(self):
        rng = np.random.default_rng(1)
        cwfa = random_cwfa(3, 2, 2, rng)
        dense = tt_to_dense(hankel_from_linear_cwfa(cwfa, 3))
        eye = np.eye(2)
        for _ in range(10):
            idx = tuple(rng.integers(0, 2, size=3))
            seq = np.stack([eye[i] for i in idx])
            np.testing.assert_allclose(dense[idx], cwfa.apply(seq), atol=1e-12)

    def test_nilpotent_zero_transitions(self):
        rng = np.random.default_rng(2)
        cwfa = LinearCwfa(
            alpha=rng.normal(size=3), A=np.zeros((3, 2, 3)), omega=rng.normal(size=(3, 2))
        )
        for l in (2, 3):
            dense = tt_to_dense(hankel_from_linear_cwfa(cwfa, l))
            np.testing.assert_array_equal(dense, np.zeros_like(dense))


class TestRecoverLinearCwfa:
    def test_round_trip_function_equality(self):
        rng = np.random.default_rng(3)
        cwfa = random_cwfa(4, 3, 2, rng)
        recovered, info = recover_linear_cwfa(hankel_set_for(cwfa, 2), R=4)
        assert info.numerical_rank >= 4
        for _ in range(100):
            l = int(rng.integers(1, 7))
            seq = rng.normal(size=(l, 3))
            want = cwfa.apply(seq)
            got = recovered.apply(seq)
            assert np.linalg.norm(got - want) < 1e-6 * max(np.linalg.norm(want), 1e-6)

    def test_scalar_automaton_exact(self):
        rng = np.random.default_rng(4)
        cwfa = random_cwfa(1, 2, 1, rng)
        recovered, _ = recover_linear_cwfa(hankel_set_for(cwfa, 1), R=1)
        for _ in range(20):
            seq = rng.normal(size=(int(rng.integers(1, 5)), 2))
            assert abs(recovered.apply(seq)[0] - cwfa.apply(seq)[0]) < 1e-10 * max(
                abs(cwfa.apply(seq)[0]), 1.0
            )

    def test_overparameterized_rank_still_matches(self):
        rng = np.random.default_rng(5)
        cwfa = random_cwfa(2, 3, 2, rng)
        with pytest.warns(RuntimeWarning, match="numerical rank"):
            recovered, info = recover_linear_cwfa(hankel_set_for(cwfa, 2), R=5)
        assert info.numerical_rank < 5
        for _ in range(30):
            seq = rng.normal(size=(int(rng.integers(1, 6)), 3))
            want = cwfa.apply(seq)
            assert np.linalg.norm(recovered.apply(seq) - want) < 1e-6 * max(
                np.linalg.norm(want), 1e-6
            )

    def test_split_convention_invariance(self):
        rng = np.random.default_rng(6)
        cwfa = random_cwfa(3, 2, 2, rng)
        hs = hankel_set_for(cwfa, 2)
        m1, _ = recover_linear_cwfa(hs, R=3, split="psigma")
        m2, _ = recover_linear_cwfa(hs, R=3, split="sigmas")
        for _ in range(30):
            seq = rng.normal(size=(int(rng.integers(1, 6)), 2))
            np.testing.assert_allclose(m1.apply(seq), m2.apply(seq), atol=1e-8, rtol=1e-8)


class TestRecoverDensityModel:
    def test_recovery_only_round_trip(self):
        rng = np.random.default_rng(7)
        model = random_density_model(3, 2, rng)
        hankels = exact_hankel_trains(model, L=2)
        recovered, info = recover_density_model(
            hankels, model.feature_map.W, model.head, R=3
        )
        assert info.numerical_rank >= 3
        for _ in range(50):
            seq = rng.normal(size=(int(rng.integers(1, 11)), 2))
            want = model.sequence_log_density(seq)
            got = recovered.sequence_log_density(seq)
            assert abs(got - want) < 1e-6 * max(abs(want), 1.0)

    def test_hidden_state_readout_restores_head_coordinates(self):
        rng = np.random.default_rng(8)
        model = random_density_model(3, 2, rng)
        recovered, _ = recover_density_model(
            exact_hankel_trains(model, L=2), model.feature_map.W, model.head, R=3
        )
        seq = rng.normal(size=(5, 2))
        want = model.hidden_states(seq)
        got = recovered.hidden_states(seq) @ recovered.out_map
        np.testing.assert_allclose(got, want, atol=1e-8)

    def test_mismatched_trains_rejected(self):
        rng = np.random.default_rng(9)
        model = random_density_model(2, 2, rng)
        good = exact_hankel_trains(model, L=1)
        with pytest.raises(ValueError, match="lengths"):
            HankelSet(good.H_L, good.H_2L, good.H_2L, 1)


class TestSpectralLearn:
    def test_end_to_end_smoke(self):
        rng = np.random.default_rng(10)
        hmm = random_hmm(3, 2, rng)
        datasets = {l: sample_dataset(hmm, 100, l, rng) for l in (1, 2, 3)}
        # the (L, L+1) unfolding at L=1, d=2 has at most rank 2, so the
        # recovery rank cannot default to the state count here
        cfg = TrainConfig(
            states=3, mixtures=3, hankel_length=1, max_epochs=30, seed=0,
            learning_rate=0.01, rank=2,
        )
        model = spectral_learn(datasets, cfg)
        assert model.out_map is not None
        held_out = sample_dataset(hmm, 20, 50, rng)
        vals = model.batch_sequence_log_density(held_out)
        assert np.all(np.isfinite(vals))

    def test_full_output_reports_rank(self):
        rng = np.random.default_rng(11)
        hmm = random_hmm(2, 2, rng)
        datasets = {l: sample_dataset(hmm, 60, l, rng) for l in (1, 2, 3)}
        cfg = TrainConfig(
            states=2, mixtures=2, hankel_length=1, max_epochs=10, seed=1
        )
        model, info, history = spectral_learn(datasets, cfg, full_output=True)
        assert info.rank == 2
        assert info.singular_values.ndim == 1
        assert len(history) >= 1

    def test_tail_completion_fills_untrained_cores(self):
        rng = np.random.default_rng(12)
        hmm = random_hmm(2, 2, rng)
        datasets = {l: sample_dataset(hmm, 40, l, rng) for l in (2, 4, 5)}
        cfg = TrainConfig(states=2, mixtures=2, hankel_length=2, max_epochs=5, seed=2)
        fit, _ = fit_hankel(datasets, cfg)
        stationary = trains_from_fit(fit, "stationary")
        kept = trains_from_fit(fit, "keep")
        # raw final core is the untouched random initialization
        np.testing.assert_array_equal(kept.H_2L1.cores[-1], fit.cores[5][-1])
        np.testing.assert_array_equal(stationary.H_2L1.cores[-1], fit.cores[5][-2])
        np.testing.assert_array_equal(stationary.H_L.cores[-1], fit.cores[5][-2])
