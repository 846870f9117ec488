import pytest

from desknmt.config import ConfigError, RunConfig


class TestRunConfig:
    def test_defaults_round_trip(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text(RunConfig().dump(), encoding="utf-8")
        assert RunConfig.load(p) == RunConfig()

    def test_file_then_overrides(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text("# comment\nrnn_size = 32\nepochs=3\n\nbidirectional=false\n", encoding="utf-8")
        cfg = RunConfig.load(p, {"epochs": 7})
        assert (cfg.rnn_size, cfg.epochs, cfg.bidirectional) == (32, 7, False)

    def test_unknown_key(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text("optimizer=adam\n", encoding="utf-8")
        with pytest.raises(ConfigError, match="optimizer"):
            RunConfig.load(p)

    def test_bad_value(self):
        with pytest.raises(ConfigError):
            RunConfig().update({"rnn_size": "big"})
        with pytest.raises(ConfigError):
            RunConfig().update({"bidirectional": "maybe"})

    def test_missing_equals(self):
        with pytest.raises(ConfigError, match=":2:"):
            RunConfig.parse_lines(["epochs=1", "oops"])

    def test_derived_configs(self):
        cfg = RunConfig().update({"num_layers": "3", "w_ga": "0.2", "learning_rate": "0.5"})
        assert cfg.model_config().num_layers == 3
        tc = cfg.train_config(epochs=2)
        assert (tc.w_ga, tc.learning_rate, tc.epochs) == (0.2, 0.5, 2)
