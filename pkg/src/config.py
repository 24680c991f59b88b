import os
from collections.abc import Mapping
from dataclasses import dataclass
from pathlib import Path

ENV_PREFIX = "CHROMA_"


class ConfigError(RuntimeError):
    pass


def read_dotenv(path: Path) -> dict[str, str]:
    """CHROMA_* assignments from a .env file; comments and other keys are skipped."""
    if not path.is_file():
        return {}
    values = {}
    for raw in path.read_text(encoding="utf-8").splitlines():
        name, sep, value = raw.partition("=")
        name = name.strip()
        if not sep or not name.startswith(ENV_PREFIX):
            continue
        values[name] = value.strip().strip("\"'")
    return values


def _int_value(env: Mapping[str, str], name: str, default: int) -> int:
    raw = env.get(name, "").strip()
    if not raw:
        return default
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"{name} must be an integer, got {raw!r}.") from None
    if value < 1:
        raise ConfigError(f"{name} must be >= 1, got {value}.")
    return value


def _path_value(env: Mapping[str, str], name: str, default: str) -> Path:
    return Path(env.get(name, "").strip() or default)


@dataclass
class Settings:
    data_dir: Path
    out_dir: Path
    threads: int
    progress: bool

    @classmethod
    def from_env(cls, env: Mapping[str, str] | None = None) -> "Settings":
        # process environment wins over ./.env
        if env is None:
            env = {**read_dotenv(Path.cwd() / ".env"), **os.environ}
        return cls(
            data_dir=_path_value(env, "CHROMA_DATA_DIR", "data/raw"),
            out_dir=_path_value(env, "CHROMA_OUT_DIR", "runs"),
            threads=_int_value(env, "CHROMA_THREADS", 1),
            progress=env.get("CHROMA_PROGRESS", "").strip().lower() in {"1", "true", "yes"},
        )
