import numpy as np
import pytest

from fewmode.lattice import ForcingSpec
from fewmode.spectral import SpectralField, Truncation

# The standard saturating four-mode forcing used throughout.
FOUR_MODES = ((0, 1), (0, -1), (1, 1), (-1, -1))
# Modes first reached after one cascade step from FOUR_MODES.
FIRST_GENERATION = ((1, 2), (1, 0), (-1, 0), (-1, -2))
# Equal-norm negative control: generates the lattice but cannot cascade.
EQUAL_NORMS = ((1, 0), (0, 1), (-1, 0), (0, -1))
# Sublattice negative control: index-4 subgroup of the lattice.
SUBLATTICE = ((2, 0), (-2, 0), (0, 2), (0, -2))


@pytest.fixture(scope="session")
def four_mode_forcing():
    return ForcingSpec.uniform(FOUR_MODES)


@pytest.fixture(scope="session")
def trunc3():
    return Truncation(3)


@pytest.fixture(scope="session")
def trunc4():
    return Truncation(4)


def random_field(trunc: Truncation, rng: np.random.Generator, scale: float = 1.0) -> SpectralField:
    return SpectralField(trunc, scale * rng.standard_normal(trunc.dim))
