import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from multicate import MultiTrialDataset


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def two_trial_data(rng):
    """Small two-trial dataset with a linear effect in x1."""
    n = 240
    X = rng.normal(size=(n, 3))
    trial = np.repeat([1, 2], n // 2)
    a = (rng.random(n) < 0.5).astype(int)
    tau = 1.5 * X[:, 0]
    y = X[:, 1] + (a - 0.5) * tau + 0.05 * rng.normal(size=n)
    return MultiTrialDataset(
        trial=trial, covariates=X, treatment=a, outcome=y,
        covariate_names=("x1", "x2", "x3"),
    )
