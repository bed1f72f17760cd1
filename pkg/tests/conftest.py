"""Shared fixtures for the QuMERA tests."""

import numpy as np
import pytest

from src.network.mera import random_network
from src.services.observable_service import PAULI


@pytest.fixture
def rng():
    return np.random.default_rng(7)


@pytest.fixture
def pauli():
    return dict(PAULI)


@pytest.fixture
def finite8():
    """Random N = 8, D = 2 network with distinct tensors per position."""
    return random_network(n=3, D=2, seed=11)


@pytest.fixture
def finite16():
    return random_network(n=4, D=2, seed=12)


@pytest.fixture
def scale_invariant():
    return random_network(D=2, seed=21, scale_invariant=True)


@pytest.fixture
def symmetric_si():
    """Reflection-symmetric scale-invariant network (L and R families related by the swap)."""
    return random_network(D=2, seed=22, scale_invariant=True, symmetric=True)
