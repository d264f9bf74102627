import numpy as np
import pytest

from app import create_app
from config import Config
from services.markov import example1_family
from services.recurrence import RecurrenceFamily


@pytest.fixture
def chebyshev():
    return RecurrenceFamily.constant_family(1.0, 0.0, 1.0, name='chebyshev')


@pytest.fixture
def shifted_chebyshev():
    return RecurrenceFamily.constant_family(1.0, 3.0, 1.0, name='shifted_chebyshev')


@pytest.fixture
def example1():
    return example1_family()


@pytest.fixture
def shifted_example1():
    return example1_family(shift=5.0)


@pytest.fixture
def nevai():
    return RecurrenceFamily.sequence_family(1.0, 0.0, 1.0, dA=0.5, dB=0.5, dC=0.5, name='nevai')


@pytest.fixture
def three_by_three():
    A = np.array([[1.0, 0.0, 0.0], [0.3, 1.0, 0.0], [0.0, 0.3, 1.0]])
    B = np.array([[-4.0, 0.5, 0.0], [0.5, 0.0, 0.5], [0.0, 0.5, 4.0]])
    C = np.array([[1.0, 0.2, 0.0], [0.0, 1.0, 0.2], [0.0, 0.0, 1.0]])
    return RecurrenceFamily.constant_family(A, B, C, name='three_by_three')


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def app(tmp_path):
    class TestConfig(Config):
        OUTPUT_DIR = str(tmp_path / 'results')
        LOG_LEVEL = 'WARNING'
        MAX_WORKERS = 2

    return create_app(TestConfig)
