import numpy as np
import pytest

from koopman_reach.koopman import fit_edmd_derivative
from koopman_reach.models import generate_snapshots, quartic_decay
from koopman_reach.numerics import IntervalBox

from test_observables import quartic_dictionary

QUARTIC_INIT = [[0.9, 1.1], [0.9, 1.1]]
QUARTIC_H = 0.5


@pytest.fixture(scope="session")
def quartic_model():
    """Derivative-variant EDMD on the exact-lift fixture (mu=-0.05, lam=-1)."""
    ode = quartic_decay()
    data = generate_snapshots(ode, IntervalBox.from_bounds(QUARTIC_INIT), 40, QUARTIC_H, 5.0)
    fitted = fit_edmd_derivative(quartic_dictionary(), data, rhs=ode.rhs)
    return fitted


@pytest.fixture(scope="session")
def quartic_ode():
    return quartic_decay()
