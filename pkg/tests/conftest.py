"""Shared session fixtures for the heavy modal machinery.

Building the order-20 Fourier-Zernike field stack takes about a minute
and each coronagraph extraction against it several minutes, so both are
session scoped.  Extractions are additionally cached as JSON under
``~/.cache/artifact-tests``; delete that directory to force a rebuild.
"""

import os

import pytest

from artifact.coronagraph import (
    extract_operator,
    load_operator,
    perfect_plan,
    piaacmc_plan,
    save_operator,
    vortex_plan,
)
from artifact.modebasis import FourierZernikeBasis, mode_field_stack
from artifact.optics import GridSpec

CACHE_DIR = os.path.expanduser("~/.cache/artifact-tests")


@pytest.fixture(scope="session")
def grid():
    return GridSpec()


@pytest.fixture(scope="session")
def stack6(grid):
    return mode_field_stack(FourierZernikeBasis(6), grid)


@pytest.fixture(scope="session")
def stack20(grid):
    return mode_field_stack(FourierZernikeBasis(20), grid)


@pytest.fixture(scope="session")
def plan_perfect20(stack20, grid):
    return perfect_plan(stack20.field(0), grid)


@pytest.fixture(scope="session")
def plan_piaacmc(grid):
    return piaacmc_plan(grid)


@pytest.fixture(scope="session")
def plan_vortex(grid):
    return vortex_plan(grid)


def _cached_operator(name, plan, stack):
    path = os.path.join(CACHE_DIR, "op_%s_n%d.json" % (name, stack.basis.n_max))
    if os.path.exists(path):
        try:
            return load_operator(path, stack)
        except (ValueError, KeyError):
            pass
    op = extract_operator(plan, stack)
    os.makedirs(CACHE_DIR, exist_ok=True)
    save_operator(path, op)
    return op


@pytest.fixture(scope="session")
def op_perfect20(plan_perfect20, stack20):
    return _cached_operator("perfect", plan_perfect20, stack20)


@pytest.fixture(scope="session")
def op_piaacmc20(plan_piaacmc, stack20):
    return _cached_operator("piaacmc", plan_piaacmc, stack20)


@pytest.fixture(scope="session")
def op_vortex20(plan_vortex, stack20):
    return _cached_operator("vortex", plan_vortex, stack20)
