import json
from pathlib import Path
from typing import Any, Dict, Optional, Sequence

from pydantic import BaseModel, BaseSettings, ValidationError

from src.exceptions import ConfigurationError
from src.schemas import RunConfig


class Settings(BaseSettings):
    llm_endpoint: str = "http://127.0.0.1:8000"
    llm_api_key: str = ""
    sqlalchemy_database_url: str = "sqlite:///./rally_samples.db"
    server_host: str = "127.0.0.1"
    server_port: int = 8000
    log_level: str = "INFO"

    class Config:
        env_prefix = "RALLY_"
        env_file = ".env"
        env_file_encoding = "utf-8"


settings = Settings()

_ENV_OVERRIDES = {"llm_endpoint": "endpoint", "llm_api_key": "api_key"}


def _parse_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def _apply_override(data: Dict[str, Any], model: type, dotted: str, raw: str) -> None:
    keys = dotted.split(".")
    node = data
    for depth, key in enumerate(keys):
        field = model.__fields__.get(key) if model is not None else None
        if field is None:
            raise ConfigurationError(f"unknown configuration key '{dotted}'")
        if depth == len(keys) - 1:
            node[key] = _parse_value(raw)
            return
        model = field.outer_type_ if isinstance(field.outer_type_, type) and issubclass(field.outer_type_,
                                                                                           BaseModel) else None
        child = node.get(key)
        if not isinstance(child, dict):
            child = {}
            node[key] = child
        node = child


def load_run_config(path: Optional[str | Path] = None, overrides: Sequence[str] = (),
                    env: Optional[Settings] = None) -> RunConfig:
    """
    The load_run_config function resolves a run configuration in three layers: the JSON file,
    then command-line overrides of the form section.key=value, then the environment, which may
    only replace the remote endpoint and its credential.

    :param path: str | Path: JSON configuration file, or None for the defaults
    :param overrides: Sequence[str]: Dotted key=value overrides; values are parsed as JSON when possible
    :param env: Settings: Environment settings, read fresh when omitted
    :return: A fully validated RunConfig
    """
    data: Dict[str, Any] = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as error:
            raise ConfigurationError(f"cannot read configuration {path}: {error}") from error
        if not isinstance(data, dict):
            raise ConfigurationError(f"configuration {path} must hold a JSON object")
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigurationError(f"override '{item}' is not of the form key=value")
        _apply_override(data, RunConfig, key.strip(), raw.strip())
    env = env or Settings()
    for setting, key in _ENV_OVERRIDES.items():
        if setting in env.__fields_set__:
            data.setdefault("policy", {})[key] = getattr(env, setting)
    try:
        return RunConfig.parse_obj(data)
    except ValidationError as error:
        raise ConfigurationError(f"invalid configuration: {error}") from error


def dump_run_config(config: RunConfig, directory: str | Path) -> Path:
    """Writes the resolved configuration as config.json with sorted keys; the API key is masked."""
    data = json.loads(config.json())
    if data["policy"]["api_key"]:
        data["policy"]["api_key"] = "***"
    path = Path(directory) / "config.json"
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
