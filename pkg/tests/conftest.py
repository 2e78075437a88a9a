import warnings

import numpy as np
import pytest

from pleass.datamodel import LabeledSubject, SparseDataset, SparseTrajectory


def make_dataset(times, values, responses, prefix="s"):
    subs = [
        LabeledSubject(SparseTrajectory(f"{prefix}{i}", t, v), y)
        for i, (t, v, y) in enumerate(zip(times, values, responses))
    ]
    return SparseDataset(tuple(subs))


def dense_dataset(rng, n, L, curve, noise=0.0, response=None):
    """``n`` subjects observed on a common regular design of ``L`` points."""
    t = np.linspace(0.0, 1.0, L)
    times, values, ys = [], [], []
    for i in range(n):
        x = curve(i, t, rng)
        times.append(t)
        values.append(x + noise * rng.standard_normal(L))
        ys.append(response(i, x, rng) if response else float(rng.standard_normal()))
    return make_dataset(times, values, ys)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(autouse=True)
def _quiet_bandwidth_warnings():
    from pleass.smoother import BandwidthWarning

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", BandwidthWarning)
        yield


ACCEPTANCE = {}  # criterion number -> (passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
