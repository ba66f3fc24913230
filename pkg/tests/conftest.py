from pathlib import Path

import pytest

from knobtune.knobspace import load_catalog

DATA_DIR = Path(__file__).resolve().parents[1] / "src" / "knobtune" / "data"


@pytest.fixture(scope="session")
def bundled_catalog_path():
    return DATA_DIR / "knobs_postgres.jsonl"


@pytest.fixture(scope="session")
def bundled_space(bundled_catalog_path):
    return load_catalog(bundled_catalog_path)
