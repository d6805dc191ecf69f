import os
import tempfile
import unittest
from pathlib import Path
from unittest import mock
from src.shared_enum_vars import SchedulerModes, IsolationStrategies
from src.config import (
    parse_config, parse_config_text, apply_overrides, load_settings, ConfigParseError, ConfigValidationError
)


CONFIG_TEXT = """
[geometry]
banks_per_rank = 4
subarrays_per_bank = 8
rows_per_subarray = 4

[scheduler]
mode = "BaselineREF"
tRefSlack_multiple = 4

[isolation]
strategy = "target-coverage"
target_coverage = 0.25
"""


class TestParseConfig(unittest.TestCase):
    def test_empty_text_gives_defaults(self) -> None:
        config = parse_config_text("")
        self.assertEqual(16, config.geometry.banks_per_rank)
        self.assertEqual(46250, config.timing.tRC)
        self.assertIs(SchedulerModes.HIRA, config.scheduler.mode)
        self.assertEqual(2 * 46250, config.scheduler.tRefSlack)

    def test_sections_parsed(self) -> None:
        config = parse_config_text(CONFIG_TEXT)
        self.assertEqual(32, config.geometry.rows_per_bank)
        self.assertIs(SchedulerModes.BASELINE_REF, config.scheduler.mode)
        self.assertEqual(4 * 46250, config.scheduler.tRefSlack)
        self.assertIs(IsolationStrategies.TARGET_COVERAGE, config.isolation.strategy)

    def test_no_path_gives_defaults(self) -> None:
        self.assertEqual(parse_config_text(""), parse_config(None))

    def test_file(self) -> None:
        with tempfile.TemporaryDirectory() as directory:
            path = Path(directory) / "experiment.toml"
            path.write_text(CONFIG_TEXT, encoding="utf-8")
            config = parse_config(path)
        self.assertEqual(4, config.geometry.banks_per_rank)

    def test_missing_file(self) -> None:
        self.assertRaises(ConfigParseError, parse_config, "/nonexistent/experiment.toml")

    def test_syntax_error_has_line(self) -> None:
        with self.assertRaises(ConfigParseError) as context:
            parse_config_text("[scheduler]\nmode = \n")
        self.assertEqual(2, context.exception.line)

    def test_negative_capacity_rejected(self) -> None:
        self.assertRaises(ConfigValidationError, parse_config_text, "[geometry]\nrows_per_subarray = -4\n")

    def test_unknown_key_rejected(self) -> None:
        with self.assertRaises(ConfigValidationError) as context:
            parse_config_text("[scheduler]\nfoo = 1\n")
        self.assertEqual(("scheduler", "foo"), context.exception.errors[0]["loc"])

    def test_all_violations_listed(self) -> None:
        with self.assertRaises(ConfigValidationError) as context:
            parse_config_text("[trace]\nsources = 0\n[simulation]\nmax_outstanding = 0\n")
        self.assertEqual(2, len(context.exception.errors))

    def test_overrides_win_over_file(self) -> None:
        config = parse_config_text(CONFIG_TEXT, ["scheduler.tRefSlack_multiple=8", "scheduler.mode=HiRA"])
        self.assertEqual(8 * 46250, config.scheduler.tRefSlack)
        self.assertIs(SchedulerModes.HIRA, config.scheduler.mode)


class TestApplyOverrides(unittest.TestCase):
    def test_literal_types(self) -> None:
        expected = {"scheduler": {"tRefSlack_multiple": 4, "para_enabled": True, "p_th": 0.5}}
        actual = apply_overrides({}, ["scheduler.tRefSlack_multiple=4", "scheduler.para_enabled=true",
                                      "scheduler.p_th=0.5"])
        self.assertEqual(expected, actual)

    def test_bare_word_kept_as_string(self) -> None:
        self.assertEqual({"trace": {"kind": "hammer"}}, apply_overrides({}, ["trace.kind=hammer"]))

    def test_malformed_override(self) -> None:
        self.assertRaises(ConfigParseError, apply_overrides, {}, ["tRefSlack_multiple=4"])
        self.assertRaises(ConfigParseError, apply_overrides, {}, ["scheduler.tRefSlack_multiple"])

    def test_override_of_plain_value(self) -> None:
        self.assertRaises(ConfigParseError, apply_overrides, {"seed": 1}, ["seed.value=2"])


class TestLoadSettings(unittest.TestCase):
    def test_environment_values(self) -> None:
        with mock.patch.dict(os.environ, {"HIRA_SIM_LOG_DIR": "/tmp/hira-log", "HIRA_SIM_DEBUG": "true",
                                          "HIRA_SIM_WORKERS": "3"}):
            settings = load_settings()
        self.assertEqual(Path("/tmp/hira-log"), settings.log_dir)
        self.assertTrue(settings.debug)
        self.assertEqual(3, settings.workers)

    def test_worker_count_must_be_positive(self) -> None:
        with mock.patch.dict(os.environ, {"HIRA_SIM_WORKERS": "0"}):
            self.assertRaises(ValueError, load_settings)


if __name__ == "__main__":
    unittest.main()
