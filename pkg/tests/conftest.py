import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

from anhp import AnhpModel, EventSequence, TimeEncodingConfig  # noqa: E402

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

ACCEPTANCE = []


@pytest.fixture
def acceptance_report():
    def report(number: int, title: str, ok: bool, detail: str = ""):
        line = f"criterion {number:2d} [{'PASS' if ok else 'FAIL'}] {title}" + (f": {detail}" if detail else "")
        print(line)
        ACCEPTANCE.append(line)
        return ok
    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)


def flat_model(E=3, D=4, L=1, Dt=None, seed=0, m=0.25, M=16.0, **kw):
    types = [chr(ord("a") + i) for i in range(E)]
    return AnhpModel(types, D, TimeEncodingConfig(m, M, Dt or D), L, seed=seed, **kw)


def toy_sequence(model, n=5, seed=0, T=None):
    rng = np.random.default_rng(seed)
    times = np.sort(rng.uniform(0.1, 4.0, size=n))
    types = [model.types[k] for k in rng.integers(0, len(model.types), size=n)]
    return EventSequence(times, types, T if T is not None else 5.0)


PROGRAMS = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "programs")


def read_program(name):
    with open(os.path.join(PROGRAMS, name), encoding="utf-8") as fh:
        return fh.read()


FORUM = read_program("forum.dtt")
TEAM_FORUMS = read_program("team_forums.dtt")
