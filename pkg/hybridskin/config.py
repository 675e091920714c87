import json
import os
from pathlib import Path
from typing import Any, Dict, Optional, Union

from pydantic import ValidationError

from .errors import DataError, UsageError
from .models import RunConfig


PATH_KEYS = ("mesh", "graph", "trajectory", "targets", "gaussians", "rotations", "deformed", "out")


def _key(raw: str) -> str:
    return raw.strip().lower().replace("-", "_")


def parse_config_text(text: str) -> Dict[str, str]:
    """Plain `key = value` lines; `#` starts a comment."""
    values: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"config line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = line.split("=", 1)
        key = _key(key)
        if not key:
            raise UsageError(f"config line {lineno}: empty key")
        if key in values:
            raise UsageError(f"config line {lineno}: duplicate key {key!r}")
        values[key] = value.strip()
    return values


def validate_run_config(data: Dict[str, Any]) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        errors = e.errors()
        missing = [err for err in errors if "path does not exist" in str(err.get("msg", ""))]
        if missing and len(missing) == len(errors):
            raise DataError(str(missing[0]["msg"]).replace("Value error, ", "")) from None
        raise UsageError(f"invalid configuration: {e}") from None


def load_run_config(
    path: Optional[Union[str, Path]] = None,
    overrides: Optional[Dict[str, Any]] = None,
) -> RunConfig:
    """Model defaults, then the config file, then command-line overrides."""
    data: Dict[str, Any] = {}
    if path is not None:
        if not os.path.exists(path):
            raise DataError(f"config file does not exist: {path}")
        try:
            with open(path, "r", encoding="utf-8") as f:
                text = f.read()
        except UnicodeDecodeError as e:
            raise DataError(f"{path}: config file is not UTF-8 text: {e}") from None
        data = parse_config_text(text)
        base = Path(path).parent
        for key in PATH_KEYS:
            if key in data and not Path(data[key]).is_absolute():
                data[key] = str(base / data[key])
    for key, value in (overrides or {}).items():
        if value is not None:
            data[_key(key)] = value
    return validate_run_config(data)


def save_run_config(path: Union[str, Path], cfg: RunConfig) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(cfg.model_dump(mode="json"), f, indent=2)
