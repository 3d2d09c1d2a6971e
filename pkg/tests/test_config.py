"""
Tests for configuration parsing and validation.
"""

import json
import textwrap
from pathlib import Path

import pytest
from pydantic import ValidationError

from upscaled_ch.config import PipelineConfig, load_config, parse_config
from upscaled_ch.homogenization.errors import ConfigError

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


class TestDefaults:
    """Test the default configuration."""

    def test_empty_text_gives_defaults(self):
        config = parse_config("")
        assert config == PipelineConfig()
        assert config.geometry.kind == "channel"
        assert config.geometry.amplitude == 0.2
        assert config.geometry.cross_section == 0.46
        assert config.geometry.resolution == 128
        assert config.pe_mic == 0.04
        assert config.phase_field.lam == 1e-5
        assert config.macro.cells_x == 50 and config.macro.cells_y == 35
        assert config.macro.boundary == "inlet"

    def test_load_without_path(self):
        assert load_config(None) == PipelineConfig()

    def test_frozen(self):
        config = PipelineConfig()
        with pytest.raises(ValidationError):
            config.geometry.amplitude = 0.3


class TestParsing:
    """Test section-based key/value text."""

    def test_sections(self):
        text = textwrap.dedent(
            """
            [geometry]
            amplitude = 0.1
            resolution = 64

            [phase_field]
            mobility = [[2.0, 0.5], [0.5, 1.0]]
            """
        )
        config = parse_config(text)
        assert config.geometry.amplitude == 0.1
        assert config.geometry.resolution == 64
        assert config.phase_field.mobility == ((2.0, 0.5), (0.5, 1.0))

    def test_top_level_key_routed(self):
        config = parse_config("pe_mic = 0.08\nt_end = 0.1\n")
        assert config.pe_mic == 0.08
        assert config.macro.t_end == 0.1

    def test_unknown_top_level_key(self):
        with pytest.raises(ConfigError, match="line 2: unknown key 'colour'"):
            parse_config("pe_mic = 0.04\ncolour = 'red'\n")

    def test_unknown_section_key(self):
        text = "[geometry]\namplitude = 0.1\nwobble = 2\n"
        with pytest.raises(ConfigError) as info:
            parse_config(text)
        assert info.value.line == 3
        assert "geometry.wobble" in str(info.value)

    def test_range_violation(self):
        text = "[macro]\ndx = 0.01\n\n[geometry]\nresolution = 8\n"
        with pytest.raises(ConfigError) as info:
            parse_config(text)
        assert info.value.line == 5
        assert "geometry.resolution" in str(info.value)

    def test_mobility_must_be_spd(self):
        text = "[phase_field]\nmobility = [[1.0, 2.0], [2.0, 1.0]]\n"
        with pytest.raises(ConfigError, match="positive definite"):
            parse_config(text)

    def test_syntax_error_line(self):
        with pytest.raises(ConfigError) as info:
            parse_config("[geometry]\namplitude = = 0.1\n")
        assert info.value.line == 2

    def test_section_must_be_table(self):
        with pytest.raises(ConfigError, match="must be a section"):
            parse_config("geometry = 3\n")


class TestFiles:
    """Test loading TOML and commented JSON files."""

    def test_toml_file(self, tmp_path):
        path = tmp_path / "run.toml"
        path.write_text("[macro]\nboundary = 'periodic'\n")
        assert load_config(str(path)).macro.boundary == "periodic"

    def test_commented_json(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text(
            """
            {
                // straight channel
                "geometry": {"amplitude": 0.0},
                "pe_mic": 0.0
            }
            """
        )
        config = load_config(str(path))
        assert config.geometry.amplitude == 0.0
        assert config.pe_mic == 0.0

    def test_json_must_be_object(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text(json.dumps([1, 2]))
        with pytest.raises(ConfigError):
            load_config(str(path))

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config(str(tmp_path / "absent.toml"))


class TestHash:
    """Test the canonical configuration hash."""

    def test_stable(self):
        assert PipelineConfig().config_hash() == parse_config("").config_hash()

    def test_sensitive(self):
        assert (
            PipelineConfig().config_hash()
            != parse_config("pe_mic = 0.05").config_hash()
        )

    def test_toml_round_trip(self):
        config = parse_config("[geometry]\namplitude = 0.3\n")
        assert parse_config(config.to_toml()) == config


class TestShippedConfigs:
    """Test the configuration files in configs/."""

    @pytest.mark.parametrize("name", ["default.toml", "periodic.json"])
    def test_loads(self, name):
        config = load_config(str(CONFIGS / name))
        assert config.config_hash() != ""

    def test_default_matches_defaults(self):
        assert load_config(str(CONFIGS / "default.toml")) == PipelineConfig()
