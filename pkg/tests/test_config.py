from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gradw.config import ConfigError, ExperimentConfig, dump_config, load_config, parse_config


class TestParse:
    def test_empty_is_default(self):
        assert parse_config("") == ExperimentConfig()

    def test_partial_override(self):
        cfg = parse_config("[train]\nepochs = 3\nwarmup_epochs = 1\nlearning_rate = 1e-3\n[eval]\nsnr_list = -5, clean\n")
        assert cfg.train.epochs == 3
        assert cfg.train.learning_rate == 1e-3
        assert cfg.eval.snr_list == ("-5", "clean")
        assert cfg.eval.conditions() == [-5.0, "clean"]
        assert cfg.data == ExperimentConfig().data

    @pytest.mark.parametrize("text, needle", [
        ("[train]\nepoch = 3\n", "unknown key train.epoch"),
        ("[training]\nepochs = 3\n", "unknown section"),
        ("[train]\nepochs = three\n", "train.epochs"),
        ("[run]\nvariants = grad_w,bogus\n", "bogus"),
        ("[eval]\nsnr_list = -5,loud\n", "loud"),
        ("[data]\nn_speakers = 6\n", "num_speakers"),
        ("[mel]\nn_mels = 40\n", "n_mels"),
        ("no section header\n", "malformed"),
    ])
    def test_rejects(self, text, needle):
        with pytest.raises(ConfigError, match=needle):
            parse_config(text)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_config(tmp_path / "absent.ini")


class TestRoundTrip:
    def test_default(self):
        cfg = ExperimentConfig()
        assert parse_config(dump_config(cfg)) == cfg

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**31), lr=st.floats(1e-6, 1.0), snr=st.floats(-30, 0), epochs=st.integers(5, 50))
    def test_random(self, seed, lr, snr, epochs):
        base = ExperimentConfig().with_seed(seed)
        cfg = replace(base, train=replace(base.train, learning_rate=lr, snr_low=snr, epochs=epochs))
        text = dump_config(cfg)
        assert parse_config(text) == cfg
        assert dump_config(parse_config(text)) == text

    def test_with_seed_sets_both(self):
        cfg = ExperimentConfig().with_seed(9)
        assert cfg.run.seed == cfg.train.seed == 9

    def test_load(self, tmp_path):
        p = tmp_path / "c.ini"
        p.write_text(dump_config(ExperimentConfig().with_seed(4)))
        assert load_config(p).run.seed == 4
