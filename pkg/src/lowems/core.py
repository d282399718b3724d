"""Numeric primitives shared across the package: keyed random streams and
small dense-matrix helpers.

Reproducibility contract
------------------------
Every stochastic routine in this package receives a :class:`RandomStream`
instead of touching global RNG state.  A stream is an immutable
``(seed, stream)`` pair of 64-bit integers feeding a counter-based Philox4x64
bit generator keyed by exactly that pair, so the same pair always replays the
same variates on any platform.  Independent substreams are derived with
``child(k)``, which mixes the index into the stream id with a splitmix64-style
finalizer; no generator state is ever shared or advanced between call sites.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1
# Fixed key for internal deterministic helpers (power iteration start vectors).
_INTERNAL_KEY = 0x1D872B41B5D5C43D


def _mix64(a: int, b: int) -> int:
    """Stable 64-bit hash of an integer pair (splitmix64 finalizer)."""
    x = (a * 0x9E3779B97F4A7C15 + b + 0xD1B54A32D192ED03) & _MASK64
    x ^= x >> 30
    x = (x * 0xBF58476D1CE4E5B9) & _MASK64
    x ^= x >> 27
    x = (x * 0x94D049BB133111EB) & _MASK64
    x ^= x >> 31
    return x


@dataclass(frozen=True)
class RandomStream:
    """Immutable handle for one reproducible stream of random variates.

    ``seed`` identifies the experiment, ``stream`` the substream within it.
    Two handles with the same pair produce identical draws; handles differing
    in either component are statistically independent (distinct Philox keys).
    """

    seed: int
    stream: int = 0

    def __post_init__(self) -> None:
        for name in ("seed", "stream"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)):
                raise TypeError(f"{name} must be an integer")
            if not 0 <= int(value) < 2**64:
                raise ValueError(f"{name} must fit in an unsigned 64-bit int")
            object.__setattr__(self, name, int(value))

    def generator(self) -> np.random.Generator:
        """Fresh generator positioned at the start of this stream."""
        key = np.array([self.seed, self.stream], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def child(self, index: int) -> "RandomStream":
        """Derive the ``index``-th substream of this stream."""
        if not isinstance(index, (int, np.integer)) or index < 0:
            raise ValueError("child index must be a nonnegative integer")
        return RandomStream(self.seed, _mix64(self.stream, int(index)))


def check_matrix(m, name: str = "matrix") -> np.ndarray:
    """Validate a dense real matrix (2-D, nonempty, finite) and return it
    as a float64 array."""
    a = np.asarray(m, dtype=float)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {a.shape}")
    if a.size == 0:
        raise ValueError(f"{name} must be nonempty")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    return a


def frobenius_norm(m) -> float:
    """Square root of the sum of squared entries."""
    a = np.asarray(m, dtype=float)
    return float(np.linalg.norm(a.ravel()))


def top_r_svd(m, rank: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Best rank-``rank`` factorization ``(U, s, V)`` of a matrix.

    ``U`` is ``n1 x rank``, ``s`` the leading singular values, ``V`` is
    ``n2 x rank`` (so the approximation is ``U @ diag(s) @ V.T``).  Singular
    values below ``1e-12`` times the largest are zeroed.  LAPACK
    non-convergence surfaces as ``numpy.linalg.LinAlgError``.
    """
    a = check_matrix(m, "matrix")
    if not 1 <= rank <= min(a.shape):
        raise ValueError(f"rank must be in [1, {min(a.shape)}], got {rank}")
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    s = s.copy()
    if s[0] > 0.0:
        s[s < 1e-12 * s[0]] = 0.0
    return u[:, :rank], s[:rank], vt[:rank].T


def spectral_norm(m, max_iter: int = 500, tol: float = 1e-13) -> float:
    """Largest singular value, estimated by power iteration on ``A^T A``.

    Deterministic: the start vector comes from a fixed internal stream.  The
    Rayleigh-quotient estimate converges from below, so callers comparing
    against it should allow a small relative slack.
    """
    a = check_matrix(m, "matrix")
    scale = np.max(np.abs(a))
    if scale == 0.0:
        return 0.0
    gen = RandomStream(_INTERNAL_KEY, a.shape[0] * 2**32 + a.shape[1]).generator()
    x = gen.standard_normal(a.shape[1])
    x /= np.linalg.norm(x)
    estimate = 0.0
    for _ in range(max_iter):
        y = a.T @ (a @ x)
        norm_y = np.linalg.norm(y)
        if norm_y == 0.0:
            return 0.0
        new_estimate = float(x @ y)  # Rayleigh quotient for A^T A
        x = y / norm_y
        if abs(new_estimate - estimate) <= tol * max(abs(new_estimate), 1e-300):
            estimate = new_estimate
            break
        estimate = new_estimate
    return float(np.sqrt(max(estimate, 0.0)))
