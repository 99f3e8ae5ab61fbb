import itertools

import numpy as np
import pytest
from hypothesis import HealthCheck, settings, strategies as st

from loglin.model import build_model, lattice_model

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture
def edge_model():
    return build_model([2, 2], edges=[(0, 1)], labels=(1, 2))


@pytest.fixture
def cycle4():
    return lattice_model(2, 2)


@pytest.fixture
def path3():
    return build_model([2, 2, 2], edges=[(0, 1), (1, 2)], labels=(1, 2, 3))


@st.composite
def small_models(draw, max_cells=32, max_vars=5):
    """Random graphical or hierarchical models with at most ``max_cells`` cells."""
    p = draw(st.integers(1, max_vars))
    levels = []
    for _ in range(p):
        room = max_cells // max(int(np.prod(levels)) if levels else 1, 1)
        if room < 2:
            break
        levels.append(draw(st.integers(2, min(3, room))))
    p = len(levels)
    pairs = list(itertools.combinations(range(p), 2))
    if draw(st.booleans()):
        mask = draw(st.lists(st.booleans(), min_size=len(pairs), max_size=len(pairs)))
        edges = [e for e, keep in zip(pairs, mask) if keep]
        return build_model(levels, edges=edges)
    sets = draw(st.lists(st.sets(st.integers(0, p - 1), min_size=1, max_size=min(p, 3)), max_size=4))
    gen = [{v} for v in range(p)] + [set(s) for s in sets]
    closure = set()
    for s in gen:
        for r in range(1, len(s) + 1):
            closure.update(frozenset(c) for c in itertools.combinations(sorted(s), r))
    return build_model(levels, generating_class=closure)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[k])
