import numpy as np
import pytest

from contractlab import auxfun, model


def degenerate_profile(kbar2=1.0, q=1.0):
    return model.DissipativityProfile(model.Kbar1({"kind": "zero"}), kbar2, 0.0, q)


@pytest.fixture
def deg_profile():
    return degenerate_profile()


@pytest.fixture
def deg_cert():
    return auxfun.certificate(degenerate_profile(), 1.0, 1.0, auxfun.FeasiblePoint(1.0, 1.0))


@pytest.fixture
def ou():
    return model.builtin_example("ou", a=1.0)


@pytest.fixture
def cubic():
    doc = {"label": "cubic", "dimension": 1, "drift": {"kind": "cubic", "params": {"a": 1.0, "c": 1.0}},
           "diffusion": {"kind": "constant", "sigma0": 1.0, "params": {"sigma": 1.0}}}
    return model.load_problem(doc)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if mod is None or not getattr(mod, "RESULTS", None):
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[k])
