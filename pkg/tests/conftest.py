import numpy as np
import pytest

from slpt.diffcore import set_default_dtype


@pytest.fixture(autouse=True)
def _float64_default():
    """Tests run in double precision unless they opt out."""
    set_default_dtype(np.float64)
    yield
    set_default_dtype(np.float64)


def pytest_addoption(parser):
    parser.addoption(
        "--artifact-dir", default=None,
        help="directory for cached acceptance artifacts (trained checkpoints)")
