import os
import re
from pathlib import Path
import psutil
import tomli
from dotenv import load_dotenv
from pydantic import BaseModel, ValidationError, Extra, validator
from src.schema import ExperimentConfig


project_path = Path(__file__).parent.parent.resolve()
load_dotenv(dotenv_path=project_path / ".env")


class ConfigParseError(Exception):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(message if line is None else f"line {line}: {message}")


class ConfigValidationError(Exception):
    def __init__(self, errors: list[dict]):
        self.errors = errors
        details = "; ".join(f"{'.'.join(str(part) for part in e['loc'])}: {e['msg']}" for e in errors)
        super().__init__(f"{len(errors)} invalid configuration value(s): {details}")


class Settings(BaseModel):
    """Process-wide switches read from the environment (.env at the project root)."""
    log_dir: Path
    debug: bool = False
    workers: int = 1

    @validator('workers')
    def at_least_one_worker(cls, v):
        if v < 1:
            raise ValueError("HIRA_SIM_WORKERS must be at least 1.")
        return v

    class Config:
        extra = Extra.forbid


def _flag(value: str | None) -> bool:
    return value is not None and value.strip().lower() in ("1", "true", "yes", "on")


def load_settings() -> Settings:
    workers = os.getenv('HIRA_SIM_WORKERS')
    return Settings(
        log_dir=Path(os.getenv('HIRA_SIM_LOG_DIR') or project_path / 'log'),
        debug=_flag(os.getenv('HIRA_SIM_DEBUG')),
        workers=int(workers) if workers else psutil.cpu_count(logical=False) or 1,
    )


def _parse_value(raw: str):
    # reuse the TOML grammar so overrides accept the same literals as the file
    try:
        return tomli.loads(f"value = {raw}")["value"]
    except tomli.TOMLDecodeError:
        return raw


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    """
    Apply "section.key=value" assignments on top of parsed file contents, e.g.
        >>> apply_overrides({}, ["scheduler.tRefSlack_multiple=4"])
        {'scheduler': {'tRefSlack_multiple': 4}}
    """
    for override in overrides:
        name, sep, raw = override.partition("=")
        section, dot, key = name.strip().partition(".")
        if not sep or not dot or not section or not key:
            raise ConfigParseError(f"override '{override}' is not of the form section.key=value.")
        data.setdefault(section, {})
        if not isinstance(data[section], dict):
            raise ConfigParseError(f"'{section}' is not a section.")
        data[section][key] = _parse_value(raw.strip())
    return data


def parse_config_text(text: str, overrides: list[str] | None = None) -> ExperimentConfig:
    """
    :raises ConfigParseError: malformed TOML, with the offending line
    :raises ConfigValidationError: every field that failed validation
    """
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as e:
        match = re.search(r"line (\d+)", str(e))
        raise ConfigParseError(str(e), int(match.group(1)) if match else None) from e

    apply_overrides(data, overrides or [])
    try:
        return ExperimentConfig.parse_obj(data)
    except ValidationError as e:
        raise ConfigValidationError(e.errors()) from e


def parse_config(path: str | Path | None = None, overrides: list[str] | None = None) -> ExperimentConfig:
    """Load an experiment config file; no path means all defaults."""
    if path is None:
        return parse_config_text("", overrides)
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigParseError(f"cannot read {path}: {e.strerror}") from e
    return parse_config_text(text, overrides)
