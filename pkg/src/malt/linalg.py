"""Dense fp64 helpers: norms, subspace projections and seeded randomness.

Vectors are 1-D ``numpy.float64`` arrays and matrices are 2-D arrays. Random
streams come from numpy's PCG64 bit generator, which is bit-stable across
platforms for a given seed.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

RNG_ALGORITHM = "PCG64"


def as_vector(x, name="x"):
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise ConfigError(f"{name} must be 1-D, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ConfigError(f"{name} has non-finite entries")
    return v


def as_matrix(a, name="matrix"):
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ConfigError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ConfigError(f"{name} has non-finite entries")
    return m


def frozen(a):
    """Return a read-only fp64 copy of ``a``."""
    out = np.array(a, dtype=np.float64, copy=True)
    out.flags.writeable = False
    return out


def norm(x, kind="l2"):
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        return 0.0
    if kind == "l2":
        return float(np.linalg.norm(x))
    if kind == "linf":
        return float(np.max(np.abs(x)))
    raise ConfigError(f"unknown norm kind {kind!r}")


@dataclass(frozen=True)
class SubspaceBasis:
    """Orthonormal basis of a linear subspace P of R^d (rows of ``vectors``)."""

    ambient_dim: int
    vectors: np.ndarray

    @property
    def dim(self):
        return self.vectors.shape[0]

    @property
    def complement_dim(self):
        return self.ambient_dim - self.dim

    @classmethod
    def from_vectors(cls, vectors, tol=1e-10):
        """Orthonormalize ``vectors`` with two passes of Gram-Schmidt."""
        raw = as_matrix(vectors, "basis vectors")
        p, d = raw.shape
        if p == 0 or p >= d:
            raise ConfigError(f"basis count must be in [1, {d - 1}], got {p}")
        out = np.zeros((p, d))
        for k in range(p):
            v = raw[k].copy()
            for _ in range(2):
                v -= out[:k].T @ (out[:k] @ v)
            n = np.linalg.norm(v)
            if n <= tol * max(1.0, np.linalg.norm(raw[k])):
                raise ConfigError(f"basis vector {k} is linearly dependent on the others")
            out[k] = v / n
        return cls(d, frozen(out))

    @classmethod
    def random(cls, ambient_dim, dim, rng):
        if not 1 <= dim < ambient_dim:
            raise ConfigError("data_dim must be < ambient_dim")
        g = rng.generator.standard_normal((dim, ambient_dim))
        return cls.from_vectors(g)

    def project(self, x):
        x = np.asarray(x, dtype=np.float64)
        self._check(x)
        return (x @ self.vectors.T) @ self.vectors

    def _check(self, x):
        if x.shape[-1] != self.ambient_dim:
            raise ConfigError(
                f"dimension mismatch: got {x.shape[-1]}, basis lives in R^{self.ambient_dim}"
            )


def project_complement(x, basis):
    """Orthogonal projection of ``x`` (or of each row of ``x``) onto P-perp."""
    x = np.asarray(x, dtype=np.float64)
    return x - basis.project(x)


class SeededRng:
    """Seeded random stream backed by ``numpy.random.Generator(PCG64(seed))``."""

    def __init__(self, seed):
        self.seed = int(seed)
        self.generator = np.random.Generator(np.random.PCG64(self.seed))

    def child(self, index):
        return SeededRng(child_seed(self.seed, index))

    def gaussian(self, dim, std=1.0):
        return sample_gaussian(self, dim, std)

    def sign(self, dim, magnitude=1.0):
        return sample_sign(self, dim, magnitude)


def child_seed(parent_seed, index):
    """Deterministic 63-bit child seed derived from ``(parent_seed, index)``."""
    ss = np.random.SeedSequence([int(parent_seed) & 0xFFFFFFFFFFFFFFFF, int(index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def sample_gaussian(rng, dim, std=1.0):
    if dim < 1 or std <= 0:
        raise ConfigError("sample_gaussian needs dim >= 1 and std > 0")
    return std * rng.generator.standard_normal(dim)


def sample_sign(rng, dim, magnitude=1.0):
    if dim < 1 or magnitude <= 0:
        raise ConfigError("sample_sign needs dim >= 1 and magnitude > 0")
    signs = rng.generator.integers(0, 2, size=dim) * 2 - 1
    return magnitude * signs.astype(np.float64)
