import struct
from dataclasses import replace

import numpy as np
import pytest

from relic_lab.checkpoint import MAGIC, decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint
from relic_lab.config import RunConfig, parse, serialize, with_overrides
from relic_lab.errors import ConfigError, FormatError
from relic_lab.train import init_state, model_specs

from conftest import tiny


class TestConfig:
    def test_default_roundtrip(self):
        cfg = RunConfig()
        assert parse(serialize(cfg)) == cfg

    def test_tiny_roundtrip_and_digest(self):
        cfg = tiny(seed=3, alpha=0.5)
        back = parse(serialize(cfg))
        assert back == cfg and back.digest() == cfg.digest()

    def test_digest_ignores_out_dir_only(self):
        cfg = tiny()
        assert replace(cfg, out_dir="elsewhere").digest() == cfg.digest()
        assert replace(cfg, seed=1).digest() != cfg.digest()

    def test_partial_text_keeps_defaults(self):
        cfg = parse("[objective]\nalpha = 2.5\n")
        assert cfg.objective.alpha == 2.5 and cfg.optimizer == RunConfig().optimizer

    def test_unknown_key_named(self):
        with pytest.raises(ConfigError) as info:
            parse("[optimizer]\nbase_rate = 1.0\n")
        assert info.value.keys == ("optimizer.base_rate",)

    def test_unknown_section(self):
        with pytest.raises(ConfigError) as info:
            parse("[critic]\nwidth = 3\n")
        assert info.value.keys == ("critic",)

    def test_invalid_value_named(self):
        with pytest.raises(ConfigError) as info:
            parse("[objective]\ntau = -1.0\n")
        assert info.value.keys == ("objective.tau",)

    def test_not_json(self):
        with pytest.raises(ConfigError) as info:
            parse("[run]\nseed = seven\n")
        assert info.value.keys == ("run.seed",)

    def test_overrides(self):
        cfg = with_overrides(tiny(), seed=4, out_dir="x", preset_name="simclr", tau=0.2)
        assert cfg.seed == 4 and cfg.out_dir == "x" and cfg.objective.alpha == 0 and cfg.objective.tau == 0.2

    def test_override_error_keys(self):
        with pytest.raises(ConfigError) as info:
            with_overrides(tiny(), alpha=-1.0)
        assert info.value.keys == ("objective.alpha",)


def _state(cfg):
    specs = model_specs(cfg, 8 * 8 * 3)
    state = init_state(cfg, specs)
    for params in state.online.values():
        params.momentum = {k: np.full_like(v, 0.25) for k, v in params.arrays.items()}
    return state


class TestCheckpoint:
    HASH = bytes(range(32))

    def test_roundtrip_bitwise(self, tmp_path):
        cfg = tiny()
        state = _state(cfg)
        path = tmp_path / "c.rlck"
        save_checkpoint(path, state, self.HASH, {"seed": 0})
        back = load_checkpoint(path)
        assert back.config_hash == self.HASH and back.step == 0 and back.rng == {"seed": 0}
        for net, params in state.online.items():
            for k, v in params.arrays.items():
                assert back.state.online[net].arrays[k].tobytes() == v.tobytes()
                assert back.state.online[net].momentum[k].tobytes() == params.momentum[k].tobytes()
        assert back.state.target is None
        assert encode_checkpoint(back.state, self.HASH, back.rng) == path.read_bytes()

    def test_ema_target_roundtrip(self):
        cfg = replace(tiny(), objective=replace(tiny().objective, target_mode="ema"))
        state = _state(cfg)
        back = decode_checkpoint(encode_checkpoint(state, self.HASH, {}))
        assert set(back.state.target) == set(state.target)

    def test_header(self):
        blob = encode_checkpoint(_state(tiny()), self.HASH, {})
        assert blob[:4] == MAGIC and struct.unpack("<H", blob[4:6]) == (1,) and blob[6:38] == self.HASH

    def test_bad_magic_offset(self):
        blob = encode_checkpoint(_state(tiny()), self.HASH, {})
        with pytest.raises(FormatError) as info:
            decode_checkpoint(b"XXXX" + blob[4:])
        assert info.value.offset == 0

    def test_bad_version_offset(self):
        blob = bytearray(encode_checkpoint(_state(tiny()), self.HASH, {}))
        blob[4] = 7
        with pytest.raises(FormatError) as info:
            decode_checkpoint(bytes(blob))
        assert info.value.offset == 4

    @pytest.mark.parametrize("cut", [3, 20, 60, 200, -5])
    def test_truncated(self, cut):
        blob = encode_checkpoint(_state(tiny()), self.HASH, {"a": 1})
        with pytest.raises(FormatError) as info:
            decode_checkpoint(blob[:cut])
        assert info.value.offset is not None and 0 <= info.value.offset <= len(blob)

    def test_trailing_bytes(self):
        blob = encode_checkpoint(_state(tiny()), self.HASH, {})
        with pytest.raises(FormatError, match="trailing"):
            decode_checkpoint(blob + b"\0")

    def test_no_temp_file_left(self, tmp_path):
        save_checkpoint(tmp_path / "c.rlck", _state(tiny()), self.HASH, {})
        assert [p.name for p in tmp_path.iterdir()] == ["c.rlck"]


def test_shipped_benchmark_config_matches_helper():
    from pathlib import Path

    from relic_lab.config import benchmark_config, load

    path = Path(__file__).resolve().parent.parent / "configs" / "benchmark.ini"
    assert load(path) == benchmark_config()
