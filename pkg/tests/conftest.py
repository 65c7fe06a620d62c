import os
import tempfile

import numpy as np
import pytest

# The API engine reads its URL at import time.
_DB_DIR = tempfile.mkdtemp(prefix="sic-tests-")
os.environ.setdefault("SIC_DATABASE_URL", f"sqlite+aiosqlite:///{_DB_DIR}/experiments.db")
os.environ.setdefault("SIC_OUTPUT_DIR", os.path.join(_DB_DIR, "results"))

from app.models.schemas import CpanParams  # noqa: E402
from app.utils.rng import RngStreams  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def streams():
    return RngStreams(2024)


@pytest.fixture
def cpan_params():
    """Peak-power surrogate parameters of the fitted link table"""
    return CpanParams.from_stationary(sigma_theta2=5.678e-3, mu_delta=0.9975, sigma_n2=5.036e-7)
