import json
import math

import numpy as np
import pytest

from birdnest import fit, kernels, synth
from birdnest.ingest import Histograms


def two_cluster_population(m=1000, seed=0):
    spec = synth.SynthSpec(
        m=m,
        pi=[0.5, 0.5],
        alphas=[[9, 1, 1, 1, 1], [1, 1, 1, 1, 9]],
        betas=[np.linspace(0.5, 4, 8), np.linspace(4, 0.5, 8)],
        ratings_per_user=30,
        seed=seed,
    )
    return synth.generate(spec)


def agreement_up_to_permutation(assigned, truth):
    same = np.mean((assigned == 1) == (truth == 1))
    return max(same, 1.0 - same)


class TestFitBird:
    def test_k1_degenerate_mixture(self):
        h, _ = two_cluster_population(m=80)
        model = fit.fit_bird(h, 1, seed=0)
        assert model.K == 1
        assert np.all(model.assignments == 1)
        assert model.clusters[0].pi == 1.0
        # total log-likelihood is the sum of both sides' marginals
        manual = (
            kernels.dirmult_log_marginal_rows(h.rating.astype(float), model.clusters[0].alpha).sum()
            + kernels.dirmult_log_marginal_rows(h.temporal.astype(float), model.clusters[0].beta).sum()
        )
        assert model.total_log_likelihood == pytest.approx(manual, abs=1e-6)
        assert model.total_log_likelihood == pytest.approx(fit.log_joint(model, h), abs=1e-6)

    def test_separated_clusters_recovered(self):
        h, truth = two_cluster_population(m=1000, seed=3)
        model = fit.fit_bird(h, 2, seed=0)
        idx = {u: i for i, u in enumerate(h.user_ids)}
        gt = truth.cluster[[idx[u] for u in model.user_ids]]
        assert agreement_up_to_permutation(model.assignments, gt) >= 0.95

    def test_identical_histograms_collapse_to_one_cluster(self):
        # With identical users, K=2 converges to one absorbing cluster; the
        # only likelihood cost vs K=1 is the mixture-weight term left by the
        # empty-cluster reseed, m*log((m-1)/m).
        m = 50
        h = Histograms(
            [f"u{i:03d}" for i in range(m)],
            np.tile([3, 1, 0, 2, 4], (m, 1)),
            np.tile([1, 2, 0, 1, 0, 0, 0, 0], (m, 1)),
        )
        m1 = fit.fit_bird(h, 1, seed=0)
        m2 = fit.fit_bird(h, 2, seed=0)
        sizes = np.bincount(m2.assignments, minlength=3)[1:]
        assert sizes.max() == m
        gap = m2.total_log_likelihood - m1.total_log_likelihood
        assert gap == pytest.approx(m * math.log((m - 1) / m), abs=1e-6)

    def test_k_larger_than_population_rejected(self):
        h, _ = two_cluster_population(m=10)
        with pytest.raises(ValueError):
            fit.fit_bird(h, 11, seed=0)
        with pytest.raises(ValueError):
            fit.fit_bird(h, 0, seed=0)

    def test_posterior_identity(self):
        h, _ = two_cluster_population(m=120, seed=5)
        model = fit.fit_bird(h, 2, seed=1)
        idx = {u: i for i, u in enumerate(h.user_ids)}
        for i, uid in enumerate(model.user_ids):
            k = model.assignments[i] - 1
            np.testing.assert_allclose(
                model.posterior_rating[i] - model.clusters[k].alpha,
                h.rating[idx[uid]],
                atol=1e-9,
            )
            np.testing.assert_allclose(
                model.posterior_temporal[i] - model.clusters[k].beta,
                h.temporal[idx[uid]],
                atol=1e-9,
            )

    def test_permutation_invariance(self):
        h, _ = two_cluster_population(m=200, seed=9)
        model_a = fit.fit_bird(h, 2, seed=4)
        rng = np.random.default_rng(0)
        perm = rng.permutation(len(h))
        shuffled = Histograms(
            [h.user_ids[i] for i in perm], h.rating[perm], h.temporal[perm]
        )
        model_b = fit.fit_bird(shuffled, 2, seed=4)
        assert model_a.user_ids == model_b.user_ids
        np.testing.assert_array_equal(model_a.assignments, model_b.assignments)
        assert model_a.total_log_likelihood == model_b.total_log_likelihood

    def test_hill_climb_trace_is_monotone(self):
        for seed in (0, 1):
            h, _ = two_cluster_population(m=300, seed=seed)
            model = fit.fit_bird(h, 2, seed=seed)
            trace = np.array(model.trace)
            breaks = set(model.trace_breaks)
            diffs = [
                trace[i + 1] - trace[i]
                for i in range(len(trace) - 1)
                if (i + 1) not in breaks
            ]
            assert min(diffs) >= -1e-7

    def test_assignment_invariant_to_per_user_constant(self):
        # The omitted multinomial coefficient is a per-user constant across
        # clusters: shifting every cluster's score for a user must not move
        # the argmax.
        rng = np.random.default_rng(1)
        scores = rng.normal(size=(50, 3))
        shifts = rng.normal(scale=100.0, size=50)
        np.testing.assert_array_equal(
            np.argmax(scores, axis=1), np.argmax(scores + shifts[:, None], axis=1)
        )


class TestLogJoint:
    def test_hand_example(self):
        h = Histograms(["u"], np.array([[1, 0]]), np.array([[0, 0]]))
        model = fit.BirdModel(
            K=1,
            clusters=[fit.ClusterParams(1.0, np.array([1.0, 1.0]), np.array([1.0, 1.0]))],
            user_ids=["u"],
            assignments=np.array([1]),
            posterior_rating=np.array([[2.0, 1.0]]),
            posterior_temporal=np.array([[1.0, 1.0]]),
            total_log_likelihood=0.0,
            bic=0.0,
        )
        assert fit.log_joint(model, h) == pytest.approx(math.log(0.5), abs=1e-9)

    def test_always_nonpositive(self):
        h, _ = two_cluster_population(m=60, seed=2)
        model = fit.fit_bird(h, 2, seed=0)
        assert fit.log_joint(model, h) <= 0.0
        assert np.isfinite(fit.log_joint(model, h))


class TestSelectK:
    def test_singleton_range_equals_fit(self):
        h, _ = two_cluster_population(m=100, seed=6)
        chosen = fit.select_k(h, [1], seed=0)
        direct = fit.fit_bird(h, 1, seed=0)
        assert chosen.K == 1
        assert chosen.total_log_likelihood == direct.total_log_likelihood
        assert chosen.bic == direct.bic

    def test_bic_formula(self):
        h, _ = two_cluster_population(m=100, seed=8)
        model = fit.fit_bird(h, 2, seed=0)
        rho = (2 - 1) + 2 * (h.num_stars + h.num_buckets)
        expected = -2 * model.total_log_likelihood + rho * math.log(len(h))
        assert model.bic == pytest.approx(expected, rel=1e-12)


class TestSerialization:
    def test_round_trip(self, tmp_path):
        h, _ = two_cluster_population(m=80, seed=7)
        model = fit.fit_bird(h, 2, seed=0)
        path = tmp_path / "model.json"
        bucketing = {"base": 2.0, "num_buckets": h.num_buckets, "min_gap": 1, "stars": 5}
        fit.save_model(model, path, bucketing=bucketing)
        loaded, loaded_bucketing = fit.load_model(path)

        assert loaded.K == model.K
        assert loaded.user_ids == model.user_ids
        np.testing.assert_array_equal(loaded.assignments, model.assignments)
        # JSON round-trips doubles exactly (shortest-repr encoding)
        assert loaded.total_log_likelihood == model.total_log_likelihood
        assert loaded.bic == model.bic
        for c_in, c_out in zip(model.clusters, loaded.clusters):
            assert c_out.pi == c_in.pi
            np.testing.assert_array_equal(c_out.alpha, c_in.alpha)
            np.testing.assert_array_equal(c_out.beta, c_in.beta)
        assert loaded_bucketing == bucketing

        fit.attach_posteriors(loaded, h)
        np.testing.assert_array_equal(loaded.posterior_rating, model.posterior_rating)

    def test_wire_schema_fields(self, tmp_path):
        h, _ = two_cluster_population(m=30, seed=1)
        model = fit.fit_bird(h, 1, seed=0)
        path = tmp_path / "model.json"
        fit.save_model(model, path)
        doc = json.loads(path.read_text())
        assert set(doc) >= {"K", "clusters", "assignments", "bic", "log_likelihood"}
        assert set(doc["clusters"][0]) == {"pi", "alpha", "beta"}
        assert all(isinstance(v, int) for v in doc["assignments"].values())
