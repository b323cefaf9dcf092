"""Block-model networks, spectral embeddings and subspace accuracy."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

__all__ = [
    "SbmSpec",
    "SpectralEmbedding",
    "planted_partition_spec",
    "generate_sbm",
    "spectral_embed",
    "subspace_distance",
    "row_normalize",
    "scree",
    "membership_basis",
    "check_adjacency",
]

# relative tolerance used to treat eigenvalue magnitudes as tied
_TIE_RTOL = 1e-10


@dataclass(frozen=True)
class SbmSpec:
    """Stochastic block model parameterized by membership ``theta`` and connectivity ``q``."""

    theta: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float)
        q = np.asarray(self.q, dtype=float)
        if theta.ndim != 2:
            raise ValidationError("membership matrix must be 2-D (N x K)")
        if q.shape != (theta.shape[1], theta.shape[1]):
            raise ValidationError(
                f"connectivity matrix must be {theta.shape[1]}x{theta.shape[1]}, got {q.shape}"
            )
        if not np.all((theta == 0) | (theta == 1)) or not np.all(theta.sum(axis=1) == 1):
            raise ValidationError("every row of the membership matrix must be one-hot")
        if not np.allclose(q, q.T, rtol=0, atol=1e-12):
            raise ValidationError("connectivity matrix must be symmetric")
        if np.any(q < 0) or np.any(q > 1) or not np.all(np.isfinite(q)):
            raise ValidationError("connectivity entries must lie in [0, 1]")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "q", q)

    @classmethod
    def from_labels(cls, labels, q) -> "SbmSpec":
        labels = np.asarray(labels, dtype=int)
        q = np.asarray(q, dtype=float)
        k = q.shape[0]
        if labels.ndim != 1 or np.any(labels < 0) or np.any(labels >= k):
            raise ValidationError(f"labels must be integers in [0, {k})")
        theta = np.zeros((labels.size, k))
        theta[np.arange(labels.size), labels] = 1.0
        return cls(theta, q)

    @property
    def n(self) -> int:
        return self.theta.shape[0]

    @property
    def k(self) -> int:
        return self.theta.shape[1]

    @property
    def labels(self) -> np.ndarray:
        return np.argmax(self.theta, axis=1)

    @property
    def sizes(self) -> np.ndarray:
        return self.theta.sum(axis=0).astype(int)

    def edge_probabilities(self) -> np.ndarray:
        """P = Theta Q Theta^T (diagonal included)."""
        return self.theta @ self.q @ self.theta.T


@dataclass(frozen=True)
class SpectralEmbedding:
    u_hat: np.ndarray
    eigvals: np.ndarray
    full_spectrum: np.ndarray = field(repr=False)

    @property
    def k(self) -> int:
        return self.u_hat.shape[1]


def planted_partition_spec(n_per_block, alpha_n: float, rho: float) -> SbmSpec:
    """Planted partition with within-block probability ``alpha_n`` and
    between-block probability ``alpha_n * (1 - rho)``.

    Blocks are assigned contiguously in the order of ``n_per_block``.
    """
    sizes = [int(s) for s in n_per_block]
    if len(sizes) == 0 or any(s <= 0 for s in sizes):
        raise ValidationError("block sizes must be a non-empty list of positive integers")
    if not 0 < alpha_n <= 1:
        raise ValidationError("alpha_n must lie in (0, 1]")
    if not 0 <= rho <= 1:
        raise ValidationError("rho must lie in [0, 1]")
    k = len(sizes)
    q0 = rho * np.eye(k) + (1 - rho) * np.ones((k, k))
    labels = np.repeat(np.arange(k), sizes)
    return SbmSpec.from_labels(labels, alpha_n * q0)


def generate_sbm(spec: SbmSpec, rng=None) -> np.ndarray:
    """Sample a symmetric 0/1 adjacency matrix with zero diagonal from ``spec``.

    Upper-triangle entries are independent Bernoulli(q[k_i, k_j]).
    """
    if np.any(spec.sizes == 0):
        raise ValidationError("every community must have at least one member")
    rng = np.random.default_rng(rng)
    n = spec.n
    prob = spec.edge_probabilities()
    draws = rng.random((n, n))
    upper = np.triu(draws < prob, k=1)
    a = (upper | upper.T).astype(float)
    return a


def check_adjacency(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValidationError(f"adjacency matrix must be square, got shape {a.shape}")
    if not np.array_equal(a, a.T):
        raise ValidationError("adjacency matrix must be symmetric")
    return a


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    """Flip columns so that each column's largest-magnitude entry is positive."""
    if vectors.size == 0:
        return vectors
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def _magnitude_order(vals: np.ndarray) -> np.ndarray:
    """Order by decreasing |value|, ties by decreasing signed value, then index."""
    scale = max(float(np.max(np.abs(vals))), 1.0) * _TIE_RTOL
    mag_key = np.round(np.abs(vals) / scale)
    signed_key = np.round(vals / scale)
    return np.lexsort((np.arange(vals.size), -signed_key, -mag_key))


def spectral_embed(a, k: int) -> SpectralEmbedding:
    """Leading ``k`` eigenvectors of a symmetric matrix by absolute eigenvalue."""
    a = check_adjacency(a)
    n = a.shape[0]
    if not 1 <= k <= n:
        raise ValidationError(f"k must satisfy 1 <= k <= N={n}, got {k}")
    vals, vecs = np.linalg.eigh(a)
    order = _magnitude_order(vals)
    vals = vals[order]
    vecs = _fix_signs(vecs[:, order[:k]])
    return SpectralEmbedding(u_hat=vecs, eigvals=vals[:k].copy(), full_spectrum=vals)


def scree(spectrum, k_max: int) -> tuple[np.ndarray, int]:
    """Absolute eigenvalue sequence and the largest-ratio suggestion.

    Returns ``(abs_values, k)`` where ``k`` maximizes ``|l_k| / |l_{k+1}|`` over
    ``k <= k_max``. This is only a heuristic; callers choose K themselves.
    """
    if isinstance(spectrum, SpectralEmbedding):
        spectrum = spectrum.full_spectrum
    mags = np.sort(np.abs(np.asarray(spectrum, dtype=float)))[::-1]
    if not 1 <= k_max < mags.size:
        raise ValidationError(f"k_max must lie in [1, {mags.size - 1}]")
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = mags[:k_max] / mags[1 : k_max + 1]
    ratios = np.where(np.isnan(ratios), -np.inf, ratios)
    return mags, int(np.argmax(ratios)) + 1


def subspace_distance(u1, u2) -> float:
    """min over orthogonal H of ||u1 - u2 H||_F (orthogonal Procrustes)."""
    u1 = np.asarray(u1, dtype=float)
    u2 = np.asarray(u2, dtype=float)
    if u1.ndim == 1:
        u1 = u1[:, None]
    if u2.ndim == 1:
        u2 = u2[:, None]
    if u1.shape != u2.shape:
        raise ValidationError(f"shape mismatch: {u1.shape} vs {u2.shape}")
    left, _, right = np.linalg.svd(u2.T @ u1)
    h = left @ right
    return float(np.linalg.norm(u1 - u2 @ h))


def row_normalize(a) -> np.ndarray:
    """Divide each row by its degree; isolated nodes keep an all-zero row."""
    a = np.asarray(a, dtype=float)
    deg = a.sum(axis=1)
    safe = np.where(deg > 0, deg, 1.0)
    return a / safe[:, None]


def membership_basis(theta) -> np.ndarray:
    """Orthonormal basis Theta D^{-1/2} spanning the membership column space."""
    theta = np.asarray(theta, dtype=float)
    sizes = theta.sum(axis=0)
    if np.any(sizes == 0):
        raise ValidationError("every community must have at least one member")
    return theta / np.sqrt(sizes)
