import json

import numpy as np
import pytest

from filtermerge.errors import AbsoluteContinuityViolated, ZeroEvidence
from filtermerge.finite_pomp import (
    FiniteDist,
    FinitePOMP,
    build_channel_matrix,
    filter_init,
    filter_sequence,
    filter_update,
    load_model,
    model_from_dict,
    model_to_dict,
    predict,
    rn_identity_gap,
    sample_trajectory,
    smooth_x0,
)

from oracles import (
    enum_filter,
    enum_smooth_x0,
    full_support_dist,
    random_pomp_arrays,
)

# 4-state model with two observation classes and pairwise-identical rows of T
T4 = np.array([
    [0.0, 0.25, 0.25, 0.5],
    [0.5, 0.0, 0.0, 0.5],
    [0.0, 0.25, 0.25, 0.5],
    [0.5, 0.0, 0.0, 0.5],
])
Q4 = np.array([1.0])
H4 = np.array([[1], [1], [0], [0]])


@pytest.fixture
def model4():
    return FinitePOMP(T=T4, Q=Q4, H=H4, K=2)


def random_model(rng, n, m, K):
    T, Q, H = random_pomp_arrays(rng, n, m, K)
    return FinitePOMP(T=T, Q=Q, H=H, K=K)


class TestFiniteDist:
    def test_validates_sum(self):
        with pytest.raises(ValueError):
            FiniteDist(np.array([0.5, 0.6]))

    def test_validates_sign(self):
        with pytest.raises(ValueError):
            FiniteDist(np.array([1.5, -0.5]))

    def test_uniform_and_point_mass(self):
        u = FiniteDist.uniform(4)
        assert np.allclose(u.probs, 0.25)
        e = FiniteDist.point_mass(4, 2)
        assert e.probs[2] == 1.0 and e.probs.sum() == 1.0


class TestModel:
    def test_channel_deterministic_single_noise(self):
        B = build_channel_matrix(np.array([1.0]), np.array([[2]]), K=3)
        assert np.array_equal(B, [[0.0, 0.0, 1.0]])

    def test_channel_four_state(self, model4):
        assert np.array_equal(model4.B, [[0, 1], [0, 1], [1, 0], [1, 0]])

    def test_channel_split_noise(self):
        B = build_channel_matrix(np.array([0.5, 0.5]), np.array([[0, 1]]), K=2)
        assert np.array_equal(B, [[0.5, 0.5]])

    def test_channel_rows_sum_to_one(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            n, m, K = rng.integers(1, 6), rng.integers(1, 5), rng.integers(1, 4)
            T, Q, H = random_pomp_arrays(rng, n, m, K)
            B = build_channel_matrix(Q, H, K=K)
            assert np.allclose(B.sum(axis=1), 1.0, atol=1e-12)

    def test_rejects_bad_transition(self):
        with pytest.raises(ValueError):
            FinitePOMP(T=np.array([[0.5, 0.6]]), Q=Q4, H=np.array([[0]]), K=1)

    def test_rejects_out_of_range_output(self):
        with pytest.raises(ValueError):
            FinitePOMP(T=np.eye(2), Q=np.array([1.0]), H=np.array([[0], [5]]), K=2)

    def test_stored_channel_must_match_derived(self):
        with pytest.raises(ValueError):
            FinitePOMP(T=T4, Q=Q4, H=H4, K=2,
                       B=np.array([[0.1, 0.9]] * 4))

    def test_json_round_trip(self, model4, tmp_path):
        d = model_to_dict(model4)
        assert sorted(d) == ["H", "K", "Q", "T", "m", "n"]
        again = model_from_dict(d)
        assert np.array_equal(again.T, model4.T)
        assert np.array_equal(again.B, model4.B)
        path = tmp_path / "model.json"
        path.write_text(json.dumps(d))
        loaded = load_model(path)
        assert np.array_equal(loaded.B, model4.B)

    def test_optional_b_in_file_validated(self, model4, tmp_path):
        d = model_to_dict(model4)
        d["B"] = [[0.0, 1.0], [0.0, 1.0], [1.0, 0.0], [1.0, 0.0]]
        assert np.array_equal(model_from_dict(d).B, model4.B)
        d["B"] = [[0.2, 0.8], [0.0, 1.0], [1.0, 0.0], [1.0, 0.0]]
        with pytest.raises(ValueError):
            model_from_dict(d)


class TestFilterInit:
    def test_uniform_prior_hand_bayes(self, model4):
        pi0 = filter_init(model4, FiniteDist.uniform(4), 1)
        assert np.allclose(pi0.probs, [0.5, 0.5, 0.0, 0.0], atol=1e-15)

    def test_point_mass_prior_stays_put(self, model4):
        pi0 = filter_init(model4, FiniteDist.point_mass(4, 0), 1)
        assert np.array_equal(pi0.probs, [1.0, 0.0, 0.0, 0.0])

    def test_contradiction_raises(self, model4):
        with pytest.raises(ZeroEvidence):
            filter_init(model4, FiniteDist(np.array([0.0, 0.0, 1.0, 0.0])), 1)


class TestPredict:
    def test_invariant_distribution_is_fixed_point(self):
        T = np.array([[0.9, 0.1], [0.2, 0.8]])
        model = FinitePOMP(T=T, Q=np.array([1.0]), H=np.array([[0], [0]]), K=1)
        pi = FiniteDist(np.array([2.0 / 3.0, 1.0 / 3.0]))
        out = predict(model, pi)
        assert np.allclose(out.probs, pi.probs, atol=1e-15)

    def test_point_mass_gives_transition_row(self, model4):
        out = predict(model4, FiniteDist.point_mass(4, 0))
        assert np.allclose(out.probs, [0.0, 0.25, 0.25, 0.5], atol=1e-15)

    def test_doubly_stochastic_keeps_uniform(self):
        T = np.array([[0.5, 0.5], [0.5, 0.5]])
        model = FinitePOMP(T=T, Q=np.array([1.0]), H=np.array([[0], [0]]), K=1)
        out = predict(model, FiniteDist.uniform(2))
        assert np.allclose(out.probs, 0.5, atol=1e-15)

    def test_chapman_kolmogorov(self):
        rng = np.random.default_rng(11)
        for _ in range(10):
            n = int(rng.integers(2, 6))
            model = random_model(rng, n, 2, 2)
            model_sq = FinitePOMP(T=model.T @ model.T, Q=model.Q, H=model.H,
                                  K=model.K)
            pi = FiniteDist(full_support_dist(rng, n))
            twice = predict(model, predict(model, pi))
            once = predict(model_sq, pi)
            assert np.allclose(twice.probs, once.probs, atol=1e-12)


class TestFilterUpdate:
    def test_identity_dynamics_consistent_observation(self):
        model = FinitePOMP(T=np.eye(3), Q=np.array([1.0]),
                           H=np.array([[0], [1], [2]]), K=3)
        pi = FiniteDist.point_mass(3, 1)
        out = filter_update(model, pi, 1)
        assert np.array_equal(out.probs, pi.probs)

    def test_hand_bayes_step(self, model4):
        pi = FiniteDist(np.array([0.5, 0.5, 0.0, 0.0]))
        out = filter_update(model4, pi, 0)
        assert np.allclose(out.probs, [0.0, 0.0, 0.2, 0.8], atol=1e-15)

    def test_uninformative_channel_reduces_to_predict(self):
        rng = np.random.default_rng(3)
        T = rng.dirichlet(np.ones(3), size=3)
        # every state maps noise symbols to outputs the same way
        H = np.tile(np.array([[0, 1, 1]]), (3, 1))
        model = FinitePOMP(T=T, Q=np.array([0.3, 0.3, 0.4]), H=H, K=2)
        pi = FiniteDist(full_support_dist(rng, 3))
        assert np.allclose(filter_update(model, pi, 1).probs,
                           predict(model, pi).probs, atol=1e-14)

    def test_zero_normalizer_raises(self):
        model = FinitePOMP(T=np.eye(2), Q=np.array([1.0]),
                           H=np.array([[0], [0]]), K=2)
        with pytest.raises(ZeroEvidence):
            filter_update(model, FiniteDist.uniform(2), 1)

    def test_every_output_is_valid_dist(self):
        rng = np.random.default_rng(5)
        for _ in range(25):
            n, m, K = (int(rng.integers(2, 6)), int(rng.integers(1, 4)),
                       int(rng.integers(2, 4)))
            model = random_model(rng, n, m, K)
            traj = sample_trajectory(model, FiniteDist.uniform(n), 6,
                                     int(rng.integers(2 ** 32)))
            pi = filter_init(model, FiniteDist.uniform(n), traj.ys[0])
            for y in traj.ys[1:]:
                pi = filter_update(model, pi, y)
                assert np.all(pi.probs >= 0.0)
                assert abs(pi.probs.sum() - 1.0) <= 1e-12


class TestSampleTrajectory:
    def test_horizon_zero(self, model4):
        traj = sample_trajectory(model4, FiniteDist.uniform(4), 0, 42)
        assert len(traj.xs) == 1 and len(traj.ys) == 1
        assert traj.seed == 42

    def test_deterministic_given_seed(self, model4):
        a = sample_trajectory(model4, FiniteDist.uniform(4), 20, 99)
        b = sample_trajectory(model4, FiniteDist.uniform(4), 20, 99)
        assert np.array_equal(a.xs, b.xs) and np.array_equal(a.ys, b.ys)

    def test_deterministic_model_ignores_seed(self):
        # cyclic permutation dynamics, noise-free channel
        T = np.roll(np.eye(3), 1, axis=1)
        model = FinitePOMP(T=T, Q=np.array([1.0]),
                           H=np.array([[0], [1], [2]]), K=3)
        a = sample_trajectory(model, FiniteDist.point_mass(3, 0), 5, 1)
        b = sample_trajectory(model, FiniteDist.point_mass(3, 0), 5, 2)
        assert np.array_equal(a.xs, b.xs) and np.array_equal(a.ys, b.ys)
        assert np.array_equal(a.xs, [0, 1, 2, 0, 1, 2])

    def test_y0_frequency_matches_exact_law(self, model4):
        prior = FiniteDist(np.array([0.4, 0.1, 0.3, 0.2]))
        p_exact = float(prior.probs @ model4.B[:, 1])
        n_draws = 10 ** 5
        hits = sum(
            sample_trajectory(model4, prior, 0, seed).ys[0] == 1
            for seed in range(n_draws)
        )
        sigma = np.sqrt(p_exact * (1.0 - p_exact) / n_draws)
        assert abs(hits / n_draws - p_exact) < 3.0 * sigma


class TestSmoothing:
    def test_horizon_zero_equals_filter_init(self, model4):
        prior = FiniteDist(np.array([0.4, 0.1, 0.3, 0.2]))
        a = smooth_x0(model4, prior, [1])
        b = filter_init(model4, prior, 1)
        assert np.allclose(a.probs, b.probs, atol=1e-15)

    def test_invertible_dynamics_pin_down_start(self):
        T = np.roll(np.eye(3), 1, axis=1)
        model = FinitePOMP(T=T, Q=np.array([1.0]),
                           H=np.array([[0], [1], [2]]), K=3)
        post = smooth_x0(model, FiniteDist.uniform(3), [1, 2, 0])
        assert np.allclose(post.probs, [0.0, 1.0, 0.0], atol=1e-15)

    def test_matches_path_enumeration(self):
        rng = np.random.default_rng(17)
        for _ in range(15):
            model = random_model(rng, 3, 2, 2)
            prior = FiniteDist(full_support_dist(rng, 3))
            traj = sample_trajectory(model, prior, 4, int(rng.integers(2 ** 32)))
            got = smooth_x0(model, prior, traj.ys)
            want = enum_smooth_x0(model.T, model.B, prior.probs, traj.ys)
            assert np.allclose(got.probs, want, atol=1e-12)

    def test_pinned_end_state_matches_enumeration(self):
        rng = np.random.default_rng(23)
        for _ in range(15):
            model = random_model(rng, 3, 2, 2)
            prior = FiniteDist(full_support_dist(rng, 3))
            traj = sample_trajectory(model, prior, 3, int(rng.integers(2 ** 32)))
            x_n = traj.xs[-1]
            got = smooth_x0(model, prior, traj.ys, x_n=x_n)
            want = enum_smooth_x0(model.T, model.B, prior.probs, traj.ys,
                                  x_n=x_n)
            assert np.allclose(got.probs, want, atol=1e-12)

    def test_impossible_sequence_raises(self, model4):
        with pytest.raises(ZeroEvidence):
            smooth_x0(model4, FiniteDist(np.array([0.0, 0.0, 1.0, 0.0])), [1])


class TestFilterSequence:
    def test_matches_enumeration(self):
        rng = np.random.default_rng(29)
        model = random_model(rng, 3, 2, 2)
        prior = FiniteDist(full_support_dist(rng, 3))
        traj = sample_trajectory(model, prior, 4, 1234)
        filters, predictors = filter_sequence(model, prior, traj.ys)
        assert np.allclose(filters[-1].probs,
                           enum_filter(model.T, model.B, prior.probs, traj.ys),
                           atol=1e-12)
        # predictor at 0 is the prior itself, later ones push the filter forward
        assert np.array_equal(predictors[0].probs, prior.probs)
        for t in range(1, len(filters)):
            assert np.allclose(predictors[t].probs,
                               predict(model, filters[t - 1]).probs, atol=1e-15)

    def test_update_decomposes_through_predict(self):
        rng = np.random.default_rng(31)
        for _ in range(10):
            model = random_model(rng, 4, 2, 3)
            pi = FiniteDist(full_support_dist(rng, 4))
            y = int(rng.integers(0, 3))
            pred = predict(model, pi)
            w = model.B[:, y] * pred.probs
            if w.sum() == 0.0:
                continue
            assert np.allclose(filter_update(model, pi, y).probs, w / w.sum(),
                               atol=1e-15)


class TestRnIdentity:
    def test_equal_priors_gap_zero(self, model4):
        prior = FiniteDist.uniform(4)
        traj = sample_trajectory(model4, prior, 5, 7)
        assert rn_identity_gap(model4, prior, prior, traj.ys) < 1e-14

    def test_random_models_full_support(self):
        rng = np.random.default_rng(41)
        for _ in range(30):
            n = int(rng.integers(2, 5))
            model = random_model(rng, n, 2, 3)
            mu = FiniteDist(full_support_dist(rng, n))
            nu = FiniteDist(full_support_dist(rng, n))
            traj = sample_trajectory(model, mu, 6, int(rng.integers(2 ** 32)))
            assert rn_identity_gap(model, mu, nu, traj.ys) < 1e-10

    def test_point_mass_mu_inside_support(self):
        rng = np.random.default_rng(43)
        for _ in range(10):
            model = random_model(rng, 4, 2, 2)
            nu = FiniteDist(full_support_dist(rng, 4))
            mu = FiniteDist.point_mass(4, int(rng.integers(0, 4)))
            traj = sample_trajectory(model, mu, 5, int(rng.integers(2 ** 32)))
            assert rn_identity_gap(model, mu, nu, traj.ys) < 1e-10

    def test_absolute_continuity_enforced(self, model4):
        mu = FiniteDist.uniform(4)
        nu = FiniteDist(np.array([0.5, 0.5, 0.0, 0.0]))
        with pytest.raises(AbsoluteContinuityViolated):
            rn_identity_gap(model4, mu, nu, [1, 1])

    def test_horizon_argument_truncates(self, model4):
        mu = FiniteDist.uniform(4)
        nu = FiniteDist(np.array([0.7, 0.1, 0.1, 0.1]))
        traj = sample_trajectory(model4, mu, 6, 55)
        full = rn_identity_gap(model4, mu, nu, traj.ys[:4])
        cut = rn_identity_gap(model4, mu, nu, traj.ys, n=3)
        assert full == cut
