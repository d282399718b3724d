"""Ground-truth generator for a slowly drifting low-rank matrix.

The column space is held fixed while the coefficient factor performs a
Gaussian random walk: ``X_t = U @ V_t.T`` with ``U`` orthonormal,
``V_1`` standard normal, and ``V_t = V_{t-1} + drift_std * E_t`` for iid
standard-normal increments ``E_t``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import RandomStream


@dataclass(frozen=True, eq=False)
class DynamicGroundTruth:
    """A planted sequence of low-rank matrices sharing one column space.

    ``U`` is ``n1 x rank`` with orthonormal columns, ``V_seq`` holds the
    ``d`` coefficient factors (``n2 x rank`` each), ``X_seq`` the products
    ``U @ V_t.T``.  ``drift_std`` is the per-entry standard deviation of the
    random-walk increments that produced ``V_seq``.
    """

    U: np.ndarray
    V_seq: tuple[np.ndarray, ...] = field(repr=False)
    X_seq: tuple[np.ndarray, ...] = field(repr=False)
    drift_std: float

    def __post_init__(self) -> None:
        if self.U.ndim != 2:
            raise ValueError("U must be 2-D")
        if not self.V_seq or len(self.V_seq) != len(self.X_seq):
            raise ValueError("V_seq and X_seq must be nonempty and equal length")
        if self.drift_std < 0:
            raise ValueError("drift_std must be nonnegative")

    @property
    def n1(self) -> int:
        return self.U.shape[0]

    @property
    def n2(self) -> int:
        return self.V_seq[0].shape[0]

    @property
    def rank(self) -> int:
        return self.U.shape[1]

    @property
    def d(self) -> int:
        return len(self.V_seq)


def random_orthonormal(n: int, rank: int, rng: RandomStream) -> np.ndarray:
    """Haar-ish random ``n x rank`` matrix with orthonormal columns.

    QR of an iid standard-normal matrix, with column signs fixed so the
    factorization is canonical (diagonal of R nonnegative).
    """
    if rank > n:
        raise ValueError(f"rank {rank} exceeds dimension {n}")
    if rank < 1:
        raise ValueError("rank must be positive")
    g = rng.generator().standard_normal((n, rank))
    q, r = np.linalg.qr(g)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs


def generate_truth(
    n1: int,
    n2: int,
    rank: int,
    d: int,
    drift_std: float,
    rng: RandomStream,
) -> DynamicGroundTruth:
    """Draw a planted drifting sequence of ``d`` rank-``rank`` matrices.

    The first coefficient factor has iid standard-normal entries; each later
    one adds iid ``N(0, drift_std**2)`` increments.  Distinct substreams feed
    U, the initial factor, and every increment, so any prefix of the sequence
    is reproducible independently of ``d``.
    """
    if min(n1, n2) < 1:
        raise ValueError("matrix dimensions must be positive")
    if not 1 <= rank <= min(n1, n2):
        raise ValueError(f"rank must be in [1, {min(n1, n2)}], got {rank}")
    if d < 1:
        raise ValueError("d must be at least 1")
    if drift_std < 0:
        raise ValueError("drift_std must be nonnegative")

    u = random_orthonormal(n1, rank, rng.child(0))
    v = rng.child(1).generator().standard_normal((n2, rank))
    v_seq = [v]
    for t in range(1, d):
        step = rng.child(1 + t).generator().standard_normal((n2, rank))
        v_seq.append(v_seq[-1] + drift_std * step)
    x_seq = tuple(u @ v.T for v in v_seq)
    return DynamicGroundTruth(u, tuple(v_seq), x_seq, float(drift_std))
