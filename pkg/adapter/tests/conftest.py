import os
import sys
from pathlib import Path

import pytest

TESTS_DIR = Path(__file__).parent


@pytest.fixture(autouse=True)
def predictors_on_path(monkeypatch):
    """Make the test predictor module importable by adapter subprocesses."""
    existing = os.environ.get("PYTHONPATH", "")
    parts = [str(TESTS_DIR)] + ([existing] if existing else [])
    monkeypatch.setenv("PYTHONPATH", os.pathsep.join(parts))


def adapter_cmd(*args):
    return [sys.executable, "-m", "neo_oracle_adapter", *map(str, args)]
