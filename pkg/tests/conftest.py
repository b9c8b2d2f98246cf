import numpy as np
import pytest

from carleman_verify.discretization import MaskSpec, make_grid
from carleman_verify.fields import WeightRecipe, exp_weight, identity_metric, neg_abs2, sin_perturbed_metric


@pytest.fixture(scope="session")
def eye2():
    return identity_metric(2)


@pytest.fixture(scope="session")
def wavy():
    return sin_perturbed_metric(0.2)


@pytest.fixture(scope="session")
def phi8():
    return exp_weight(WeightRecipe(neg_abs2(2), 8.0))


@pytest.fixture(scope="session")
def ball129():
    return make_grid(2, 1.0, 129, MaskSpec.ball(1.0))


@pytest.fixture(scope="session")
def annulus129():
    return make_grid(2, 1.0, 129, MaskSpec.annulus(0.5, 1.0))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance verdicts, printed once per criterion in the terminal summary
VERDICTS = {}


class Verdict:
    def __init__(self, number, title):
        self.number, self.title, self.notes = number, title, []

    def note(self, text):
        self.notes.append(text)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        ok = exc_type is None
        if not ok:
            self.notes.append(f"{exc_type.__name__}: {str(exc).splitlines()[0] if str(exc) else ''}")
        line = f"criterion {self.number:>2} {'PASS' if ok else 'FAIL'}  {self.title}: {'; '.join(self.notes)}"
        VERDICTS[self.number] = line
        print(line)
        return False


@pytest.fixture
def criterion():
    return Verdict


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(VERDICTS):
            terminalreporter.write_line(VERDICTS[n])
