"""
Unit tests for configuration loading.

Tests the parameter schemas, YAML loading and the precedence of defaults,
environment, config file and command-line overrides.
"""
from pathlib import Path

import pytest
from pydantic import ValidationError

from granulite.errors import ConfigError
from granulite.schemas.config import CriterionParams, PipelineConfig, ReconstructionParams
from granulite.services.config_loader import (
    environment_overrides,
    load_pipeline_config,
    load_yaml_config,
    log_settings,
    parse_flat_config,
    require_file,
)


def _config_file(tmp_path, text):
    path = tmp_path / "run.yaml"
    path.write_text(text)
    return path


def test_defaults_match_schema():
    """Test that the packaged defaults load into a config equal to the schema defaults."""
    config = load_pipeline_config(environ={}, dotenv=False)
    assert config == PipelineConfig()
    assert config.threshold == 0.7
    assert config.grid_res == 64
    assert config.min_faces == 20
    assert config.snap_to_samples and not config.dump_grid


def test_parameter_ranges():
    """Test that out-of-range parameters are rejected by the schemas."""
    with pytest.raises(ValidationError):
        CriterionParams(threshold=2.5)
    with pytest.raises(ValidationError):
        ReconstructionParams(grid_res=4)
    with pytest.raises(ValidationError):
        PipelineConfig(sieves=[1.0, 0.5])


def test_calibration_lengths_come_in_pairs():
    """Test that one calibration length without the other is rejected."""
    with pytest.raises(ValidationError):
        PipelineConfig(true_length=10.0)
    assert PipelineConfig(true_length=10.0, measured_length=2.0).true_length == 10.0


def test_precedence(tmp_path):
    """Test that overrides beat the config file, which beats the environment and the defaults."""
    environ = {"GRANULITE_THREADS": "3", "GRANULITE_SEED": "5"}
    path = _config_file(tmp_path, "threads: 2\nthreshold: 0.5\n")
    config = load_pipeline_config(path, {"threshold": 0.9, "grid_res": None}, environ=environ, dotenv=False)
    assert config.threshold == 0.9
    assert config.threads == 2
    assert config.seed == 5
    assert config.grid_res == 64


def test_flat_config_file(tmp_path):
    """Test that `key = value` lines configure a run like the YAML form."""
    path = _config_file(tmp_path, "# segmentation\nthreshold = 0.5\nmin-faces = 5\nsieves = [0.5, 1, 2]\n\nbinary = false\n")
    config = load_pipeline_config(path, environ={}, dotenv=False)
    assert config.threshold == 0.5
    assert config.min_faces == 5
    assert config.sieves == [0.5, 1.0, 2.0]
    assert config.binary is False
    assert config.grid_res == 64


def test_flat_config_errors(tmp_path):
    """Test that mixed and misspelled flat settings are reported with their line."""
    assert parse_flat_config("threshold = 0.5  # looser\n") == {"threshold": 0.5}
    with pytest.raises(ConfigError, match=":2:"):
        parse_flat_config("threshold = 0.5\ngrid_res: 32\n", "run.cfg")
    with pytest.raises(ConfigError) as excinfo:
        load_pipeline_config(_config_file(tmp_path, "treshold = 0.5\n"), environ={}, dotenv=False)
    assert "treshold" in str(excinfo.value)


def test_environment_overrides_ignore_empty_values():
    """Test that only mapped, non-empty variables become overrides."""
    environ = {"GRANULITE_OUTPUT_DIR": "/tmp/out", "GRANULITE_SEED": "", "OTHER": "x"}
    assert environment_overrides(environ) == {"output_dir": "/tmp/out"}


def test_unknown_key_is_a_config_error(tmp_path):
    """Test that misspelled keys in a config file are reported."""
    path = _config_file(tmp_path, "treshold: 0.5\n")
    with pytest.raises(ConfigError) as excinfo:
        load_pipeline_config(path, environ={}, dotenv=False)
    assert "treshold" in str(excinfo.value)


def test_out_of_range_override_is_a_config_error():
    """Test that invalid values surface as ConfigError naming the field."""
    with pytest.raises(ConfigError) as excinfo:
        load_pipeline_config(overrides={"grid_res": 1000}, environ={}, dotenv=False)
    assert "grid_res" in str(excinfo.value)


def test_config_file_errors(tmp_path):
    """Test that missing, malformed and non-mapping config files are rejected."""
    with pytest.raises(ConfigError):
        load_pipeline_config(tmp_path / "absent.yaml", environ={}, dotenv=False)
    with pytest.raises(ConfigError):
        load_pipeline_config(_config_file(tmp_path, "threshold: [0.5\n"), environ={}, dotenv=False)
    with pytest.raises(ConfigError):
        load_pipeline_config(_config_file(tmp_path, "- 1\n- 2\n"), environ={}, dotenv=False)


def test_load_yaml_required_key(tmp_path):
    """Test that a missing required key and an empty file are reported."""
    path = _config_file(tmp_path, "a: 1\n")
    assert load_yaml_config(path, "a") == 1
    with pytest.raises(ConfigError):
        load_yaml_config(path, "b")
    with pytest.raises(ConfigError):
        load_yaml_config(_config_file(tmp_path, ""))


def test_log_settings_from_environment():
    """Test that the log level can be raised through the environment."""
    assert log_settings({})["level"] == "INFO"
    assert log_settings({"GRANULITE_LOG_LEVEL": "debug"})["level"] == "DEBUG"


def test_require_file(tmp_path):
    """Test that an unset or missing input path is a configuration error naming the path."""
    with pytest.raises(ConfigError, match="--input is required"):
        require_file(None)
    missing = tmp_path / "pile.ply"
    with pytest.raises(ConfigError, match="pile.ply"):
        require_file(missing)
    missing.write_text("ply\n")
    assert require_file(missing) == Path(missing)
