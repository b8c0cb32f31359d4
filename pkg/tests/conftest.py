"""Shared fixtures and deterministic hypothesis settings."""

from __future__ import annotations

from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from gridimpact.dynamics import default_machine_models
from gridimpact.model import load_case

settings.register_profile(
    "ci",
    deadline=None,
    derandomize=True,
    max_examples=100,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("ci")

REPO_ROOT = Path(__file__).resolve().parent.parent
CASE_PATH = REPO_ROOT / "src" / "gridimpact" / "data" / "ieee118.grid"


@pytest.fixture(scope="session")
def case118():
    return load_case(CASE_PATH)


@pytest.fixture(scope="session")
def models118(case118):
    return default_machine_models(case118)
