"""Shared builders and independent oracles used across the suite.

Oracles here are deliberately naive (python loops, direct formulas) so they
stay independent of the vectorized code paths they check.
"""

from __future__ import annotations

import math
import time

import numpy as np
import pytest

from corrseg.core import FeatureGrid, PixelFeatureMap

SESSION_STARTED = time.monotonic()
_ACCEPTANCE_RESULTS: dict = {}


def pytest_collection_modifyitems(session, config, items):
    # acceptance criteria run last so their suite-runtime bound covers everything
    items.sort(key=lambda item: item.fspath.basename == "test_acceptance.py")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if item.fspath.basename == "test_acceptance.py":
        if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
            _ACCEPTANCE_RESULTS[item.name] = report.outcome


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for name, outcome in _ACCEPTANCE_RESULTS.items():
        status = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"{status} {name}")


def random_unit_map(p, q, c, rng) -> PixelFeatureMap:
    """Per-pixel random unit vectors."""
    data = rng.normal(size=(p, q, c))
    norms = np.sqrt((data ** 2).sum(axis=-1, keepdims=True))
    return PixelFeatureMap(data / norms, normalized=True)


def random_map(p, q, c, rng, scale=1.0) -> PixelFeatureMap:
    return PixelFeatureMap(rng.normal(size=(p, q, c)) * scale)


def random_grid(hp, wp, d, rng, stride=4, dtype=np.float32) -> FeatureGrid:
    p = (hp - 1) * stride + 1
    q = (wp - 1) * stride + 1
    return FeatureGrid(
        rng.normal(size=(hp, wp, d)).astype(dtype),
        stride_y=stride, stride_x=stride, offset_y=0.0, offset_x=0.0,
        source_dims=(p, q),
    )


def oracle_normalize(vec):
    """Scalar-loop L2 normalization, zero-safe."""
    norm = math.sqrt(sum(float(x) * float(x) for x in vec))
    if norm < 1e-12:
        return [0.0] * len(vec)
    return [float(x) / norm for x in vec]


def oracle_cosine(u, v):
    un = oracle_normalize(u)
    vn = oracle_normalize(v)
    return sum(a * b for a, b in zip(un, vn))


def oracle_argmax_match(template_map, point, target_map):
    """Exhaustive double-loop argmax with first-wins tie-break.

    Returns ((row, col), similarity) for one template point.
    """
    r, c = point
    vec = template_map.data[r, c]
    p, q, _ = target_map.data.shape
    best_pos, best_sim = None, -math.inf
    for i in range(p):
        for j in range(q):
            sim = oracle_cosine(vec, target_map.data[i, j])
            if sim > best_sim:
                best_pos, best_sim = (i, j), sim
    return best_pos, best_sim
