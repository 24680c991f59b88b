import os
from pathlib import Path

import pytest

from config import ConfigError, Settings, read_dotenv

pytestmark = pytest.mark.usefixtures("clean_env")


def test_defaults():
    settings = Settings.from_env()
    assert settings.data_dir == Path("data/raw")
    assert settings.out_dir == Path("runs")
    assert settings.threads == 1
    assert settings.progress is False


def test_environment_overrides(monkeypatch):
    monkeypatch.setenv("CHROMA_DATA_DIR", "/srv/idx")
    monkeypatch.setenv("CHROMA_THREADS", "4")
    monkeypatch.setenv("CHROMA_PROGRESS", "yes")
    settings = Settings.from_env()
    assert settings.data_dir == Path("/srv/idx")
    assert settings.threads == 4
    assert settings.progress is True


def test_dotenv_fills_missing_values(monkeypatch, tmp_path):
    (tmp_path / ".env").write_text('# local\nCHROMA_OUT_DIR="out/here"\nCHROMA_THREADS=2\n')
    monkeypatch.setenv("CHROMA_THREADS", "3")
    settings = Settings.from_env()
    assert settings.out_dir == Path("out/here")
    assert settings.threads == 3


@pytest.mark.parametrize("raw", ["many", "0", "-2"])
def test_bad_thread_count(monkeypatch, raw):
    monkeypatch.setenv("CHROMA_THREADS", raw)
    with pytest.raises(ConfigError, match="CHROMA_THREADS"):
        Settings.from_env()


def test_dotenv_is_parsed_without_touching_the_environment(tmp_path):
    (tmp_path / ".env").write_text(
        "# comment\nCHROMA_PROGRESS = 'true'\nOTHER_KEY=1\nCHROMA_DATA_DIR\nCHROMA_OUT_DIR=a=b\n"
    )
    assert read_dotenv(tmp_path / ".env") == {"CHROMA_PROGRESS": "true", "CHROMA_OUT_DIR": "a=b"}
    assert read_dotenv(tmp_path / "missing.env") == {}
    assert Settings.from_env().progress is True
    assert "CHROMA_PROGRESS" not in os.environ


def test_explicit_mapping():
    settings = Settings.from_env({"CHROMA_THREADS": "6", "CHROMA_OUT_DIR": " "})
    assert settings.threads == 6
    assert settings.out_dir == Path("runs")
