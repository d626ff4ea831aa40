from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parent.parent
SCENARIOS = ROOT / "scenarios"
FIXTURES = ("corridor", "slalom", "street", "open_field", "wall")


@pytest.fixture
def scenario_dir():
    return SCENARIOS
