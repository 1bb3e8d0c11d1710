"Tests for the configuration layer"
import pytest  # type: ignore

from ouiqa import (
    CONFIG_ENV,
    DEFAULTS,
    ConfigError,
    config_lines,
    dataset_settings,
    load_config,
    loss_settings,
    optimizer_settings,
)
from .datapaths import PresetDataPaths

# pylint: disable=invalid-name


class TestLoadConfig(PresetDataPaths):
    """Defaults, files and flags"""

    def test_defaults(self, monkeypatch):
        monkeypatch.delenv(CONFIG_ENV, raising=False)
        config = load_config()
        for section, items in DEFAULTS.items():
            for key, default in items.items():
                assert config[section][key] == default.value
                assert config.origins[section][key] == "default"

    def test_file_values(self):
        path = self.get_config("desk.yaml")
        config = load_config(path)
        assert config.get("data.crop_size") == 32
        assert config.get("train.epochs") == 2
        assert config.get("loss.lambda_align") == 0.3
        assert config.origins["data"]["crop_size"] == path
        assert config.origins["loss"]["lambda_align"] == "default"

    def test_flags_win(self):
        config = load_config(self.get_config("desk.yaml"), {"train.epochs": 5, "eval.bins": None})
        assert config.get("train.epochs") == 5
        assert config.origins["train"]["epochs"] == "flag"
        assert config.get("eval.bins") == 20

    def test_environment_variable(self, monkeypatch):
        monkeypatch.setenv(CONFIG_ENV, self.get_config("desk.yaml"))
        assert load_config().get("data.variants") == 2

    @pytest.mark.parametrize("filename", ["unknown_key.yaml", "wrong_type.yaml"])
    def test_invalid_files(self, filename):
        with pytest.raises(ConfigError):
            load_config(self.get_config(filename))

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(str(tmp_path / "nothing.yaml"))

    def test_invalid_flags(self):
        with pytest.raises(ConfigError):
            load_config(overrides={"train.steps": 3})
        with pytest.raises(ConfigError):
            load_config(overrides={"train.epochs": 0})
        with pytest.raises(ConfigError):
            load_config(overrides={"loss.ranking": "listwise"})

    def test_config_error_is_a_value_error(self):
        assert issubclass(ConfigError, ValueError)


class TestConfigLines(PresetDataPaths):
    """Listing of the merged configuration"""

    def test_provenance(self, monkeypatch):
        monkeypatch.delenv(CONFIG_ENV, raising=False)
        lines = config_lines(load_config())
        assert len(lines) == sum(len(items) for items in DEFAULTS.values())
        assert "data.crop_size = 64  [desk, published: 384]" in lines
        assert "data.variants = 5  [published]" in lines
        assert "optim.total_steps = null  [desk, published: 7000]" in lines
        assert "loss.align = true  [published]" in lines

    def test_origins(self):
        path = self.get_config("desk.yaml")
        lines = config_lines(load_config(path, {"eval.bins": 10}))
        assert "data.crop_size = 32  [desk, published: 384]  (from {})".format(path) in lines
        assert "eval.bins = 10  [desk]  (from flag)" in lines


class TestSettings(PresetDataPaths):
    """Settings handed to the other modules"""

    def test_dataset_settings(self):
        settings = dataset_settings(load_config(self.get_config("desk.yaml")))
        assert (settings.crop_size, settings.grid_rows, settings.grid_cols) == (32, 4, 4)
        assert (settings.variants, settings.master_seed, settings.text_width) == (2, 11, 16)
        assert settings.max_steps == 7
        assert settings.registry is None

    def test_loss_settings(self):
        settings = loss_settings(load_config(self.get_config("desk.yaml")))
        assert settings.combo_cap == 64
        assert settings.lambda_emb == 0.5
        assert settings.ranking == "pair-of-pairs"
        assert settings.align and settings.embdist

    def test_optimizer_settings(self):
        config = load_config(self.get_config("desk.yaml"))
        settings = optimizer_settings(config, steps_per_epoch=3)
        assert settings.lr0 == 0.003
        assert settings.total_steps == 6
        config = load_config(self.get_config("desk.yaml"), {"optim.total_steps": 50})
        assert optimizer_settings(config, 3).total_steps == 50
