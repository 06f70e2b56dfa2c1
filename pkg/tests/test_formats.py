import numpy as np
import pytest

from ditlab import formats
from ditlab.errors import ConfigError, FormatError


class TestConfigRoundTrip:
    def test_defaults_round_trip_fixed_point(self):
        cfg = formats.default_config()
        text = formats.serialize_config(cfg)
        again = formats.parse_config(text)
        assert again == cfg
        assert formats.serialize_config(again) == text

    def test_parse_serialize_parse_fixed_point_on_edits(self):
        cfg = formats.default_config()
        cfg["train"]["lr"] = 3e-4
        cfg["align"]["pairs"] = ((0, 1), (2, 3))
        cfg["schedule"]["probe_t_grid"] = (0.05, 0.5)
        cfg["train"]["log_timing"] = True
        text = formats.serialize_config(cfg)
        assert formats.parse_config(text) == cfg

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError):
            formats.parse_config("[train]\nlearning_rate = 0.1\n")

    def test_unknown_section_rejected(self):
        with pytest.raises(ConfigError):
            formats.parse_config("[optimizer]\nlr = 0.1\n")

    def test_bad_value_rejected(self):
        with pytest.raises(ConfigError):
            formats.parse_config("[train]\nsteps = many\n")

    def test_key_outside_section_rejected(self):
        with pytest.raises(ConfigError):
            formats.parse_config("steps = 3\n")

    def test_comments_and_blank_lines_ignored(self):
        cfg = formats.parse_config("# comment\n\n[train]\nsteps = 7\n")
        assert cfg["train"]["steps"] == 7

    def test_config_hash_tracks_content(self):
        a = formats.default_config()
        b = formats.default_config()
        assert formats.config_hash(a) == formats.config_hash(b)
        b["train"]["seed"] = 99
        assert formats.config_hash(a) != formats.config_hash(b)


class TestU64Limbs:
    @pytest.mark.parametrize("value", [0, 1, 0xFFFF, 123456789, 2**63 + 12345, 2**64 - 1])
    def test_round_trip(self, value):
        assert formats.limbs_to_u64(formats.u64_to_limbs(value)) == value


class TestCheckpoint:
    def entries(self):
        rng = np.random.default_rng(0)
        return [
            formats.TensorEntry("w", "param", rng.standard_normal((3, 4)).astype(np.float32)),
            formats.TensorEntry("w.m1", "moment1", rng.standard_normal((3, 4)).astype(np.float32)),
            formats.TensorEntry("rng.seed", "rng", formats.u64_to_limbs(77)),
            formats.TensorEntry("scalar", "meta", np.array(5.0, np.float32)),
        ]

    def test_round_trip_bit_exact(self, tmp_path):
        path = str(tmp_path / "c.hste")
        entries = self.entries()
        formats.write_checkpoint(path, entries, meta={"note": "x"})
        tensors, meta = formats.read_checkpoint(path)
        assert meta == {"note": "x"}
        for e in entries:
            kind, arr = tensors[e.name]
            assert kind == e.kind
            assert arr.tobytes() == np.asarray(e.array, np.float32).tobytes()

    def test_magic_and_layout(self, tmp_path):
        path = str(tmp_path / "c.hste")
        formats.write_checkpoint(path, self.entries())
        raw = open(path, "rb").read()
        assert raw[:4] == b"HSTE"
        assert int(np.frombuffer(raw[4:8], "<u4")[0]) == 1

    def test_truncated_payload_rejected(self, tmp_path):
        path = str(tmp_path / "c.hste")
        formats.write_checkpoint(path, self.entries())
        raw = open(path, "rb").read()
        with open(path, "wb") as fh:
            fh.write(raw[:-8])
        with pytest.raises(FormatError):
            formats.read_checkpoint(path)

    def test_truncated_header_rejected(self, tmp_path):
        path = str(tmp_path / "c.hste")
        formats.write_checkpoint(path, self.entries())
        raw = open(path, "rb").read()
        with open(path, "wb") as fh:
            fh.write(raw[:20])
        with pytest.raises(FormatError):
            formats.read_checkpoint(path)

    def test_bad_magic_rejected(self, tmp_path):
        path = str(tmp_path / "c.hste")
        with open(path, "wb") as fh:
            fh.write(b"NOPE" + b"\x00" * 64)
        with pytest.raises(FormatError):
            formats.read_checkpoint(path)

    def test_no_partial_file_on_interrupted_write(self, tmp_path):
        # atomic rename: the destination never exists with partial contents
        import os
        path = str(tmp_path / "c.hste")
        formats.write_checkpoint(path, self.entries())
        files = set(os.listdir(tmp_path))
        assert files == {"c.hste"}

    def test_unknown_kind_rejected(self, tmp_path):
        with pytest.raises(FormatError):
            formats.write_checkpoint(str(tmp_path / "c.hste"),
                                     [formats.TensorEntry("x", "weights", np.zeros(2, np.float32))])
