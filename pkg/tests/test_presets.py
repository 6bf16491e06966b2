import pytest

from vqforge.codec import compression_ratio
from vqforge.errors import ConfigError
from vqforge.presets import PRESET_ORDER, PRESETS, load_preset


class TestTableValues:
    # name -> (vector size, entries, residuals)
    TRIPLES = {
        "quip4": (8, 65536, 2),
        "aqlm3": (8, 4096, 2),
        "gptvq2": (4, 256, 1),
        "cq4": (2, 256, 1),
        "cq2": (4, 256, 1),
    }
    RATIOS = {"quip4": 0.25, "aqlm3": 0.1875, "gptvq2": 0.125,
              "cq4": 0.25, "cq2": 0.125}

    @pytest.mark.parametrize("name", PRESET_ORDER)
    def test_config_triples(self, name):
        cfg = PRESETS[name].config
        vec, entries, res = self.TRIPLES[name]
        assert cfg.vector_size == vec
        assert cfg.n_entries == entries
        assert cfg.residuals == res

    @pytest.mark.parametrize("name", PRESET_ORDER)
    def test_ratio_column(self, name):
        assert compression_ratio(PRESETS[name].config) == self.RATIOS[name]

    def test_targets(self):
        assert PRESETS["quip4"].target == "weight"
        assert PRESETS["aqlm3"].target == "weight"
        assert PRESETS["gptvq2"].target == "weight"
        assert PRESETS["cq4"].target == "kv_cache"
        assert PRESETS["cq2"].target == "kv_cache"

    def test_sharing(self):
        assert PRESETS["cq2"].config.sharing.kind == "channel_group"
        assert PRESETS["cq2"].config.sharing.group_width == 4
        assert PRESETS["gptvq2"].config.sharing.kind == "tile"
        assert PRESETS["gptvq2"].config.sharing.tile_rows == 256
        assert PRESETS["quip4"].config.sharing.kind == "whole"

    def test_quip_working_set(self):
        assert PRESETS["quip4"].working_entries == 256
        assert PRESETS["quip4"].effective_entries == 256
        assert PRESETS["aqlm3"].effective_entries == 4096

    def test_aqlm_codebook_per_block(self):
        assert PRESETS["aqlm3"].codebook_bytes_per_block == 128 * 1024

    def test_aqlm_needs_true_twelve_bit_packing(self):
        from vqforge.synth import synthetic_quantized

        cfg = PRESETS["aqlm3"].config
        assert cfg.log2_entries == 12
        q = synthetic_quantized((16, 64), cfg, seed=0)
        # misaligned width: 256 codes x 12 bits = 384 bytes exactly
        assert len(q.packed_codes()) == q.total_codes * 12 // 8


class TestLoading:
    def test_unknown(self):
        with pytest.raises(ConfigError):
            load_preset("int4")

    def test_case_insensitive(self):
        assert load_preset("CQ2").name == "cq2"

    def test_toml_roundtrip(self, tmp_path):
        path = tmp_path / "custom.toml"
        path.write_text(
            'name = "mini"\nvector_size = 4\nlog2_entries = 6\nresiduals = 1\n'
            'target = "weight"\n\n[sharing]\nkind = "channel_group"\n'
            "group_width = 8\n")
        p = load_preset(str(path))
        assert p.name == "mini"
        assert p.config.n_entries == 64
        assert p.config.sharing.group_width == 8
