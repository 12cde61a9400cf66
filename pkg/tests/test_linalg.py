import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from malt.errors import ConfigError
from malt.linalg import (
    SeededRng,
    SubspaceBasis,
    child_seed,
    norm,
    project_complement,
    sample_gaussian,
    sample_sign,
)


def test_project_complement_axis():
    basis = SubspaceBasis.from_vectors([[1.0, 0.0]])
    assert np.array_equal(project_complement(np.array([1.0, 1.0]), basis), [0.0, 1.0])


def test_project_complement_annihilates_span():
    rng = SeededRng(4)
    basis = SubspaceBasis.random(8, 3, rng)
    x = np.array([0.3, -1.2, 2.0]) @ basis.vectors
    assert np.linalg.norm(project_complement(x, basis)) <= 1e-12


def test_pythagoras_d8():
    rng = SeededRng(11)
    basis = SubspaceBasis.random(8, 3, rng)
    x = rng.gaussian(8)
    comp = project_complement(x, basis)
    proj = x - comp
    assert abs(x @ x - (proj @ proj + comp @ comp)) <= 1e-10


def test_dimension_mismatch():
    basis = SubspaceBasis.from_vectors([[1.0, 0.0, 0.0]])
    with pytest.raises(ConfigError):
        project_complement(np.ones(4), basis)


def test_basis_orthonormal_after_gram_schmidt():
    # nearly parallel inputs exercise the re-orthogonalization pass
    v = np.array([[1.0, 1e-7, 0, 0, 0], [1.0, 2e-7, 1e-7, 0, 0], [0, 0, 0, 1.0, 1.0]])
    b = SubspaceBasis.from_vectors(v)
    gram = b.vectors @ b.vectors.T
    assert np.max(np.abs(gram - np.eye(3))) <= 1e-10


def test_basis_rejects_dependent_and_full_rank():
    with pytest.raises(ConfigError):
        SubspaceBasis.from_vectors([[1.0, 0, 0], [2.0, 0, 0]])
    with pytest.raises(ConfigError):
        SubspaceBasis.from_vectors(np.eye(3))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32), p=st.integers(1, 7))
def test_projection_idempotent_and_orthogonal(seed, p):
    rng = SeededRng(seed)
    basis = SubspaceBasis.random(8, p, rng)
    x = rng.gaussian(8, 3.0)
    once = project_complement(x, basis)
    assert np.max(np.abs(project_complement(once, basis) - once)) <= 1e-12
    assert np.max(np.abs(basis.vectors @ once)) <= 1e-10


@pytest.mark.parametrize("x, kind, expected", [((3, 4), "l2", 5.0), ((3, -4), "linf", 4.0),
                                               ((0, 0), "l2", 0.0), ((0, 0), "linf", 0.0)])
def test_norm(x, kind, expected):
    assert norm(np.array(x, dtype=float), kind) == expected


def test_seeded_streams_identical():
    assert np.array_equal(sample_gaussian(SeededRng(0), 16), sample_gaussian(SeededRng(0), 16))
    assert np.array_equal(sample_sign(SeededRng(0), 16, 0.5), sample_sign(SeededRng(0), 16, 0.5))


def test_gaussian_moments():
    g = sample_gaussian(SeededRng(123), 100_000, 1.0)
    assert abs(g.mean()) < 0.02
    assert abs(g.var() - 1.0) < 0.05


def test_sign_entries():
    s = sample_sign(SeededRng(5), 1000, 0.25)
    assert set(np.unique(s)) == {-0.25, 0.25}


def test_child_seeds_are_stable_and_distinct():
    assert child_seed(1, 2) == child_seed(1, 2)
    assert len({child_seed(1, i) for i in range(100)}) == 100
