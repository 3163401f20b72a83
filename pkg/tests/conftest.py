import numpy as np
import pytest

from masc.panel import PanelDataset


def convex_panel(weights=(0.3, 0.7), n_donors=4, n_pre=12, n_post=4, shift=2.0, seed=0):
    """Treated unit is an exact donor combination before the intervention.

    After the intervention its outcome gains ``shift`` while its mediator
    stays on the combination, so total and direct effects both equal
    ``shift`` and the indirect effect is zero.
    """
    rng = np.random.default_rng(seed)
    T = n_pre + n_post
    Yd = rng.normal(size=(n_donors, T)).cumsum(axis=1) + 10.0
    Md = rng.normal(size=(n_donors, T)) + 3.0
    c = np.zeros(n_donors)
    c[: len(weights)] = weights
    y1 = c @ Yd
    y1[n_pre:] += shift
    units = ("T1",) + tuple(f"D{i + 1}" for i in range(n_donors))
    return PanelDataset(
        units=units,
        periods=tuple(range(2000, 2000 + T)),
        outcome=np.vstack([y1, Yd]),
        mediator=np.vstack([c @ Md, Md]),
        intervention=2000 + n_pre,
        treated=("T1",),
        donors=units[1:],
    )


@pytest.fixture
def convex():
    return convex_panel()


def random_panel(n_units=8, n_pre=10, n_post=3, seed=0, n_treated=1):
    rng = np.random.default_rng(seed)
    T = n_pre + n_post
    units = tuple(f"T{i + 1}" for i in range(n_treated)) + tuple(f"D{i + 1}" for i in range(n_units - n_treated))
    return PanelDataset(
        units=units,
        periods=tuple(range(1, T + 1)),
        outcome=rng.normal(size=(n_units, T)) + np.linspace(0, 2, T),
        mediator=rng.normal(size=(n_units, T)),
        covariates={"x1": rng.normal(size=(n_units, T))},
        intervention=n_pre + 1,
        treated=units[:n_treated],
        donors=units[n_treated:],
    )


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("[")[1].split("]")[0])):
            terminalreporter.write_line(line)
