import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from relic_lab.errors import ConfigError, ContractError, ShapeError
from relic_lab.nn import NetworkSpec, init_parameters
from relic_lab.objective import (
    ObjectiveConfig,
    ProxyDistribution,
    build_specs,
    contrastive_term,
    euclidean_objective,
    invariance_penalty,
    preset,
    proxy_distribution,
    relic_loss,
)
from relic_lab.tensor import Tensor

finite = st.floats(-20, 20, allow_nan=False)


def _setup(cfg, n=6, d=5, seed=0):
    rng = np.random.default_rng(seed)
    specs = build_specs(d, (7, 4), cfg)
    params = {name: init_parameters(spec, seed + i).leaves(False) for i, (name, spec) in enumerate(specs.networks().items())}
    views = [rng.normal(size=(n, d)) for _ in range(cfg.n_views)]
    return specs, params, views


class TestPresets:
    def test_simclr(self):
        cfg = preset("simclr")
        assert cfg.alpha == 0 and cfg.regularizer == "none" and cfg.critic_normalize and cfg.target_mode == "shared"

    def test_amdim_identity_critic(self):
        assert preset("amdim_style").critic_widths is None

    def test_relic(self):
        cfg = preset("relic")
        assert cfg.regularizer == "kl_symmetric" and cfg.alpha > 0

    def test_byol(self):
        cfg = preset("byol_style")
        assert not cfg.contrastive and cfg.regularizer == "predictive_l2" and cfg.target_mode == "ema"

    def test_unknown(self):
        with pytest.raises(ConfigError):
            preset("cpc")

    def test_invalid_fields(self):
        with pytest.raises(ConfigError) as info:
            ObjectiveConfig(tau=0.0, alpha=-1.0)
        assert set(info.value.keys) == {"tau", "alpha"}


class TestProxyDistribution:
    def test_identical_candidates_uniform(self):
        d = proxy_distribution(np.eye(3), np.ones((4, 3)), ObjectiveConfig(critic_widths=None))
        np.testing.assert_allclose(d.probs, 0.25, rtol=0, atol=1e-15)

    def test_two_candidates(self):
        d = proxy_distribution(np.array([[1.0, 0.0]]), np.eye(2), ObjectiveConfig(critic_widths=None, tau=1.0))
        e = math.e
        np.testing.assert_allclose(d.probs, [[e / (e + 1), 1 / (e + 1)]], rtol=1e-15)
        assert d.probs[0, 0] == pytest.approx(0.7311, abs=1e-4)

    def test_self_similarity_argmax(self):
        q, _ = np.linalg.qr(np.random.default_rng(0).normal(size=(4, 4)))
        d = proxy_distribution(q[2:3], q, ObjectiveConfig(critic_widths=None))
        assert d.probs.argmax() == 2

    def test_dim_mismatch(self):
        with pytest.raises(ShapeError):
            proxy_distribution(np.ones((2, 3)), np.ones((2, 4)), ObjectiveConfig(critic_widths=None))


class TestContrastive:
    def test_uniform_is_log_m(self):
        d = ProxyDistribution.from_probs(np.full((3, 4), 0.25))
        assert abs(contrastive_term(d, [0, 1, 2]).item() - math.log(4)) <= 1e-12

    def test_one_hot_is_zero(self):
        d = ProxyDistribution(Tensor(np.log(np.array([[1.0, 1e-300]]))))
        assert contrastive_term(d, [0]).item() == pytest.approx(0.0, abs=1e-15)

    def test_matches_dense_recomputation(self):
        s = np.random.default_rng(4).normal(size=(3, 5))
        from relic_lab.tensor import row_log_softmax

        d = ProxyDistribution(row_log_softmax(Tensor(s)))
        pos = [4, 0, 2]
        lse = np.log(np.exp(s).sum(axis=1))
        expected = float(np.mean([lse[i] - s[i, pos[i]] for i in range(3)]))
        assert contrastive_term(d, pos).item() == pytest.approx(expected, rel=1e-13)

    def test_bad_positive(self):
        d = ProxyDistribution.from_probs(np.full((2, 2), 0.5))
        with pytest.raises(ContractError):
            contrastive_term(d, [0, 2])


class TestPenalty:
    def test_identical_is_zero(self):
        p = ProxyDistribution.from_probs([[0.2, 0.8]])
        assert invariance_penalty([p, p]).item() == 0.0

    def test_floored_example(self):
        p = ProxyDistribution.from_probs([[1.0, 0.0]])
        q = ProxyDistribution.from_probs([[0.5, 0.5]])
        kl_pq = math.log(2)
        kl_qp = 0.5 * math.log(0.5 / 1.0) + 0.5 * math.log(0.5 / 1e-12)
        assert invariance_penalty([p, q]).item() == pytest.approx(0.5 * (kl_pq + kl_qp), rel=1e-9)

    def test_symmetric(self):
        p = ProxyDistribution.from_probs([[0.1, 0.6, 0.3]])
        q = ProxyDistribution.from_probs([[0.5, 0.25, 0.25]])
        assert invariance_penalty([p, q]).item() == invariance_penalty([q, p]).item()

    def test_shape_mismatch(self):
        with pytest.raises(ContractError):
            invariance_penalty([ProxyDistribution.from_probs([[0.5, 0.5]]), ProxyDistribution.from_probs([[1 / 3] * 3])])

    @settings(max_examples=80, deadline=None)
    @given(arrays(np.float64, (3, 4), elements=finite), arrays(np.float64, (3, 4), elements=finite))
    def test_nonnegative_and_zero_iff_equal(self, a, b):
        from relic_lab.tensor import row_log_softmax

        p = ProxyDistribution(row_log_softmax(Tensor(a)))
        q = ProxyDistribution(row_log_softmax(Tensor(b)))
        val = invariance_penalty([p, q]).item()
        assert val >= 0
        # closeness in log space: tiny probabilities can agree absolutely yet differ in ratio
        if np.allclose(p.log_probs.data, q.log_probs.data, rtol=0, atol=1e-6):
            assert val <= 1e-12
        assert invariance_penalty([p, p]).item() == 0.0


class TestRelicLoss:
    def test_alpha_zero_is_contrastive_sum(self):
        cfg = preset("simclr")
        specs, params, views = _setup(cfg)
        loss, diag = relic_loss(views, params, specs, cfg)
        assert loss.item() == diag["contrastive"]

    def test_identical_views_zero_penalty(self):
        cfg = preset("relic")
        specs, params, views = _setup(cfg)
        loss, diag = relic_loss([views[0], views[0]], params, specs, cfg)
        assert diag["penalty"] == pytest.approx(0.0, abs=1e-15)
        assert loss.item() == pytest.approx(diag["contrastive"], abs=1e-15)

    def test_penalty_added_with_alpha(self):
        cfg = preset("relic", alpha=2.5)
        specs, params, views = _setup(cfg)
        loss, diag = relic_loss(views, params, specs, cfg)
        assert loss.item() == pytest.approx(diag["contrastive"] + 2.5 * diag["penalty"], rel=1e-14)

    def test_uniform_scores_give_two_log_m(self):
        cfg = preset("amdim_style")
        specs, params, views = _setup(cfg)
        zero = {k: Tensor(np.zeros(v.shape)) for k, v in params["encoder"].items()}
        loss, _ = relic_loss(views, {"encoder": zero}, specs, cfg)
        assert abs(loss.item() - 2 * math.log(6)) <= 1e-12

    def test_batch_of_one_rejected(self):
        cfg = preset("relic")
        specs, params, views = _setup(cfg, n=1)
        with pytest.raises(ContractError):
            relic_loss(views, params, specs, cfg)

    def test_candidate_permutation_invariance(self):
        cfg = preset("amdim_style")
        specs, params, views = _setup(cfg, n=5)
        perm = np.array([3, 0, 4, 1, 2])
        a, _ = relic_loss(views, params, specs, cfg)
        b, _ = relic_loss([v[perm] for v in views], params, specs, cfg)
        assert a.item() == pytest.approx(b.item(), rel=1e-13)

    def test_byol_has_no_contrastive_term(self):
        cfg = preset("byol_style")
        specs, params, views = _setup(cfg)
        loss, diag = relic_loss(views, params, specs, cfg, target=params)
        assert diag["contrastive"] == 0.0 and loss.item() >= 0


class TestEuclidean:
    def _enc(self, d=4, k=3, seed=0):
        spec = NetworkSpec(d, (k,))
        return spec, init_parameters(spec, seed).leaves(False)

    def test_zero_gaps_give_log_one_plus_m(self):
        spec, _ = self._enc()
        zero = {"0.weight": Tensor(np.zeros((4, 3))), "0.bias": Tensor(np.ones(3))}
        x = np.random.default_rng(0).normal(size=(5, 4))
        _, diag = euclidean_objective(x, [x, x], zero, spec, 1.0)
        # two ordered view pairs, each contributing log(1 + 4)
        assert diag["contrastive"] == pytest.approx(2 * math.log(5), abs=1e-13)
        assert diag["penalty"] == 0.0

    def test_single_negative_matches_relic(self):
        rng = np.random.default_rng(7)
        spec, enc = self._enc(seed=3)
        views = [rng.normal(size=(2, 4)) for _ in range(2)]
        _, e = euclidean_objective(views[0], views, enc, spec, 1.0)
        cfg = ObjectiveConfig(tau=1.0, alpha=0.0, critic_widths=None, critic_normalize=False, regularizer="none")
        specs = build_specs(4, (3,), cfg)
        _, r = relic_loss(views, {"encoder": enc}, specs, cfg)
        assert e["contrastive"] == pytest.approx(r["contrastive"], rel=1e-12)
