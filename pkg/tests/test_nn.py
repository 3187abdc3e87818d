import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relic_lab.errors import AbortStepError, ConfigError, ContractError, ShapeError
from relic_lab.nn import (
    NetworkSpec,
    OptimizerConfig,
    Parameters,
    cosine_schedule,
    ema_tau,
    ema_update,
    encode,
    init_parameters,
    lars_step,
    zero_parameters,
)


class TestEncode:
    def test_zero_weights_give_zero_output(self):
        spec = NetworkSpec(3, (4, 2))
        out = encode(zero_parameters(spec), spec, np.random.default_rng(0).normal(size=(5, 3)))
        np.testing.assert_array_equal(out.data, 0)

    def test_identity_layer(self):
        spec = NetworkSpec(2, (2,))
        params = Parameters({"0.weight": np.eye(2), "0.bias": np.zeros(2)})
        np.testing.assert_array_equal(encode(params, spec, np.array([[1.0, 2.0]])).data, [[1, 2]])

    def test_seeded_output_is_bit_identical(self):
        spec = NetworkSpec(6, (8, 4), normalize_output=True)
        x = np.random.default_rng(1).normal(size=(7, 6))
        a = encode(init_parameters(spec, 7), spec, x).data
        b = encode(init_parameters(spec, 7), spec, x).data
        assert a.tobytes() == b.tobytes()

    def test_normalized_rows(self):
        spec = NetworkSpec(6, (8, 4), normalize_output=True)
        out = encode(init_parameters(spec, 2), spec, np.random.default_rng(1).normal(size=(7, 6))).data
        np.testing.assert_allclose(np.linalg.norm(out, axis=1), 1, atol=1e-12)

    def test_dimension_mismatch(self):
        spec = NetworkSpec(3, (2,))
        with pytest.raises(ShapeError):
            encode(init_parameters(spec, 0), spec, np.ones((2, 4)))

    def test_invalid_spec(self):
        with pytest.raises(ConfigError):
            NetworkSpec(3, ())
        with pytest.raises(ConfigError):
            NetworkSpec(3, (4, 0))

    def test_weight_shapes_chain(self):
        spec = NetworkSpec(5, (7, 3, 2))
        params = init_parameters(spec, 0)
        params.check_against(spec)
        assert [params.arrays[f"{i}.weight"].shape for i in range(3)] == [(5, 7), (7, 3), (3, 2)]


class TestLars:
    def test_zero_gradient_is_noop(self):
        cfg = OptimizerConfig(weight_decay=0.0)
        params = init_parameters(NetworkSpec(3, (2,)), 0)
        grads = {k: np.zeros_like(v) for k, v in params.arrays.items()}
        out = lars_step(params, grads, cfg, lr=0.5)
        for k in params.arrays:
            np.testing.assert_array_equal(out.arrays[k], params.arrays[k])
        assert out.step == params.step + 1

    def test_scalar_trust_ratio_hand_value(self):
        cfg = OptimizerConfig(weight_decay=0.0, lars_eta=0.001, momentum=0.0)
        params = Parameters({"0.weight": np.array([[2.0]]), "0.bias": np.zeros(1)})
        grads = {"0.weight": np.array([[1.0]]), "0.bias": np.zeros(1)}
        out = lars_step(params, grads, cfg, lr=1.0)
        assert out.arrays["0.weight"][0, 0] == pytest.approx(1.998, abs=1e-15)

    def test_excluded_bias_takes_plain_momentum_step(self):
        cfg = OptimizerConfig(weight_decay=0.1, momentum=0.9)
        params = Parameters({"0.weight": np.ones((1, 2)), "0.bias": np.array([1.0, -1.0])}, momentum={"0.bias": np.array([0.5, 0.5])})
        grads = {"0.weight": np.zeros((1, 2)), "0.bias": np.array([0.2, 0.4])}
        out = lars_step(params, grads, cfg, lr=0.1)
        v = 0.9 * np.array([0.5, 0.5]) + np.array([0.2, 0.4])
        np.testing.assert_allclose(out.arrays["0.bias"], np.array([1.0, -1.0]) - 0.1 * v, rtol=0, atol=1e-15)

    def test_nonfinite_gradient_names_layer(self):
        params = init_parameters(NetworkSpec(3, (2, 2)), 0)
        grads = {k: np.zeros_like(v) for k, v in params.arrays.items()}
        grads["1.weight"] = np.full_like(grads["1.weight"], np.nan)
        with pytest.raises(AbortStepError) as info:
            lars_step(params, grads, OptimizerConfig(), 0.1)
        assert info.value.layer_index == 1

    def test_trust_ratio_is_clipped(self):
        cfg = OptimizerConfig(weight_decay=0.0, lars_eta=1.0, momentum=0.0, trust_clip=10.0)
        params = Parameters({"0.weight": np.array([[1.0]]), "0.bias": np.zeros(1)})
        grads = {"0.weight": np.array([[1e-6]]), "0.bias": np.zeros(1)}
        out = lars_step(params, grads, cfg, lr=1.0)
        assert out.arrays["0.weight"][0, 0] == pytest.approx(1.0 - 10.0 * 1e-6, abs=1e-15)


class TestSchedules:
    def test_warmup_start_and_end(self):
        cfg = OptimizerConfig(warmup_steps=10, total_steps=100)
        assert cosine_schedule(0, cfg) == 0.0
        assert cosine_schedule(100, cfg) == pytest.approx(0.0, abs=1e-17)

    def test_peak_scaled_by_batch(self):
        cfg = OptimizerConfig(base_lr=0.3, batch_size=512, warmup_steps=10, total_steps=100)
        assert cosine_schedule(10, cfg) == pytest.approx(0.6, abs=1e-15)

    def test_continuity_at_warmup(self):
        cfg = OptimizerConfig(warmup_steps=100, total_steps=2000)
        ramp_end = cfg.peak_lr * 100 / 100
        assert abs(cosine_schedule(100, cfg) - ramp_end) <= 1e-12

    def test_out_of_range(self):
        with pytest.raises(ContractError):
            cosine_schedule(101, OptimizerConfig(warmup_steps=10, total_steps=100))

    def test_invalid_config_lists_keys(self):
        with pytest.raises(ConfigError) as info:
            OptimizerConfig(base_lr=0.0, warmup_steps=10, total_steps=5)
        assert set(info.value.keys) == {"base_lr", "total_steps"}

    def test_ema_tau_endpoints(self):
        assert ema_tau(0, 1000, 0.996) == 0.996
        assert ema_tau(1000, 1000, 0.996) == 1.0


class TestEma:
    def _pair(self):
        spec = NetworkSpec(3, (2,))
        return init_parameters(spec, 0), init_parameters(spec, 1)

    def test_endpoint_keeps_target(self):
        online, target = self._pair()
        out = ema_update(online, target, 10, 10, 0.996)
        for k in target.arrays:
            np.testing.assert_array_equal(out.arrays[k], target.arrays[k])

    def test_tau_zero_copies_online(self):
        online, target = self._pair()
        out = ema_update(online, target, 0, 10, 0.0)
        for k in target.arrays:
            np.testing.assert_array_equal(out.arrays[k], online.arrays[k])

    def test_interpolation(self):
        online, target = self._pair()
        out = ema_update(online, target, 0, 10, 0.996)
        k = "0.weight"
        np.testing.assert_allclose(out.arrays[k], 0.996 * target.arrays[k] + 0.004 * online.arrays[k], rtol=0, atol=1e-15)

    def test_shape_mismatch(self):
        online, _ = self._pair()
        other = init_parameters(NetworkSpec(4, (2,)), 0)
        with pytest.raises(ShapeError):
            ema_update(online, other, 0, 10, 0.996)


class TestProperties:
    @settings(max_examples=80, deadline=None)
    @given(st.integers(0, 500), st.integers(1, 500), st.floats(0.01, 5.0), st.integers(1, 1024))
    def test_schedule_continuous_and_bounded(self, warmup, extra, base_lr, batch):
        cfg = OptimizerConfig(base_lr=base_lr, batch_size=batch, warmup_steps=warmup, total_steps=warmup + extra)
        if warmup > 0:
            assert abs(cosine_schedule(warmup, cfg) - cfg.peak_lr * warmup / warmup) <= 1e-12
        for s in (0, warmup, warmup + extra // 2, warmup + extra):
            assert -1e-15 <= cosine_schedule(s, cfg) <= cfg.peak_lr + 1e-15

    @settings(max_examples=80, deadline=None)
    @given(st.integers(0, 1000), st.integers(1, 1000), st.floats(0.0, 1.0))
    def test_ema_tau_monotone_in_unit_interval(self, k, extra, base):
        K = k + extra
        t0, t1 = ema_tau(k, K, base), ema_tau(min(K, k + 1), K, base)
        assert base - 1e-15 <= t0 <= 1.0 and t1 >= t0 - 1e-15

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31), st.floats(1e-3, 1.0))
    def test_lars_zero_gradient_identity(self, seed, lr):
        params = init_parameters(NetworkSpec(4, (3, 2)), seed)
        out = lars_step(params, {k: np.zeros_like(v) for k, v in params.arrays.items()}, OptimizerConfig(weight_decay=0.0), lr)
        assert all(np.array_equal(out.arrays[k], params.arrays[k]) for k in params.arrays)


def test_train_step_bit_reproducible(tiny_config):
    from relic_lab.train import init_state, load_datasets, model_specs, train_step

    train, _ = load_datasets(tiny_config)
    specs = model_specs(tiny_config, int(np.prod(train.images.shape[1:])))
    outs = []
    for _ in range(2):
        state, rec = train_step(init_state(tiny_config, specs), train, tiny_config, specs)
        outs.append((state.online["encoder"].arrays["0.weight"].tobytes(), rec["loss"]))
    assert outs[0] == outs[1]
    assert math.isfinite(outs[0][1])
