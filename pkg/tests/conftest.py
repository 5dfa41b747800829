import numpy as np
import pytest

from tclevy.levy import CompoundPoissonNormal, Zero
from tclevy.likelihood import ModelParams
from tclevy.timechange import IndependentFactors, VolSpec


def reference_params(**kw) -> ModelParams:
    """Gamma-OU clocks (a=2, b=1, lam=1) with Gaussian-jump compound Poisson returns."""
    base = dict(mu=0.0, beta=0.2, rho=-0.3, delta=1.0, levy1=CompoundPoissonNormal(0.5, 0.0, 0.3),
                levy2=Zero(), vol=VolSpec(1.0, 2.0, 1.0, IndependentFactors(1.0, 2.0, 1.0)))
    base.update(kw)
    return ModelParams(**base)


@pytest.fixture(scope="session")
def ref_params():
    return reference_params()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def report(label: str, passed: bool, detail: str) -> bool:
    """Record one PASS/FAIL line for the acceptance summary."""
    line = f"{'PASS' if passed else 'FAIL'} {label}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
