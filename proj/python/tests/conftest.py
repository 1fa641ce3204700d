import os
from pathlib import Path

import pytest

import tacit

SOURCE = Path(os.environ.get("TACIT_SOURCE_DIR", Path(__file__).resolve().parents[2]))
FIXTURES = SOURCE / "tests" / "fixtures"


@pytest.fixture(scope="session")
def corpus():
    return tacit.load_bird(FIXTURES / "bird")


@pytest.fixture
def cassettes():
    return FIXTURES / "cassettes"
