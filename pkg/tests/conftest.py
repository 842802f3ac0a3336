"""Shared, session-scoped fixtures: the desk dimension-7 stage and its handle.

Building a stage (construction plus deformation certificates) takes about
15 s and the boundary product about 25 s, so every test module reuses them.
"""

from __future__ import annotations

import re
from dataclasses import replace
from pathlib import Path

import pytest

from pscmoduli.handles import collar_monotonicity_check, make_boundary_product
from pscmoduli.pipeline import _build_handle, load_config, plan_iterated_surgeries, run_stage

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"


@pytest.fixture(scope="session")
def configs_dir() -> Path:
    return CONFIGS


@pytest.fixture(scope="session")
def desk_cfg(tmp_path_factory):
    out = tmp_path_factory.mktemp("desk")
    return load_config(CONFIGS / "dim7_desk.cfg", out_dir=str(out))


@pytest.fixture(scope="session")
def desk_plan(desk_cfg):
    """Single-stage plan (R/N = 1, n = 4, m = 3)."""
    return plan_iterated_surgeries(replace(desk_cfg, stages=1))


@pytest.fixture(scope="session")
def desk_construction(desk_plan):
    return desk_plan.constructions[0]


@pytest.fixture(scope="session")
def desk_stage(desk_plan, desk_cfg):
    return run_stage(desk_plan.stages[0], desk_plan.constructions[0], desk_cfg,
                     desk_plan.c, desk_plan.delta)


@pytest.fixture(scope="session")
def desk_handle(desk_stage, desk_cfg):
    return _build_handle(desk_stage, desk_cfg)


@pytest.fixture(scope="session")
def desk_monotonicity(desk_handle):
    return collar_monotonicity_check(desk_handle)


@pytest.fixture(scope="session")
def desk_product(desk_handle):
    return make_boundary_product(desk_handle)


# -- acceptance summary ---------------------------------------------------------
#
# Tests named ``test_criterion_<N>_...`` in test_acceptance.py report one line
# each at the end of the session; ``criterion_detail`` attaches the measured
# figures to that line.

_ACCEPTANCE: dict = {}
_CRITERION = re.compile(r"test_acceptance\.py::test_criterion_(\d+)")


def _criterion_number(nodeid: str):
    m = _CRITERION.search(nodeid)
    return int(m.group(1)) if m else None


@pytest.fixture
def criterion_detail(request):
    n = _criterion_number(request.node.nodeid)
    entry = _ACCEPTANCE.setdefault(n, {"status": "FAIL", "detail": ""})

    def record(text: str) -> None:
        entry["detail"] = text
        print(f"criterion {n}: {text}")

    return record


def pytest_runtest_logreport(report):
    n = _criterion_number(report.nodeid)
    if n is None:
        return
    entry = _ACCEPTANCE.setdefault(n, {"status": "FAIL", "detail": ""})
    if report.when == "call":
        entry["status"] = "PASS" if report.passed else "FAIL"
    elif report.failed:
        entry["status"] = "FAIL"
        entry["detail"] = entry["detail"] or f"error during {report.when}"


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        e = _ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {e['status']:4s}  {e['detail']}")
