from pathlib import Path

import pytest

from manalyzer.gateway import Gateway, ScriptedProvider

CORPUS_DIR = Path(__file__).resolve().parent.parent / "corpus"


@pytest.fixture(scope="session")
def corpus_dir() -> Path:
    assert CORPUS_DIR.is_dir(), "bundled corpus missing; run: python -m manalyzer.synth --out corpus"
    return CORPUS_DIR


@pytest.fixture
def scripted():
    """A ScriptedProvider plus a Gateway that never sleeps on retry."""

    def _make(**gateway_kwargs):
        provider = ScriptedProvider()
        gateway = Gateway(provider, sleep=lambda s: None, **gateway_kwargs)
        return provider, gateway

    return _make
