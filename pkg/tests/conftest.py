from __future__ import annotations

import pytest

from skillgraph import world as W
from skillgraph.planner import Planner
from skillgraph.skills import default_library
from skillgraph.taskspec import DESIGNS, load_design

DESIGN_SIZES = {"Faucet": 14, "Fish": 29, "Vessel": 36, "Guitar": 24}


@pytest.fixture(scope="session")
def library():
    return default_library()


@pytest.fixture(scope="session")
def z0():
    return W.default_world()


@pytest.fixture(scope="session")
def golden_plans(library, z0):
    """Plans for the packaged designs, grounded the same way the CLI does."""
    out = {}
    for name in DESIGNS:
        planner = Planner(library=library, weight=10.0, max_expansions=1500)
        out[name] = planner.plan(load_design(name), z0)
    return out


@pytest.fixture(scope="session")
def faucet_plan(golden_plans):
    return golden_plans["Faucet"]
