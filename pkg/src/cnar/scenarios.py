"""Data-generating presets for the five simulation examples.

Every example shares the covariate, factor and coefficient settings below and
differs only in how the network and the network coefficient are produced.
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import networkx as nx
import numpy as np

from .errors import ValidationError
from .model import CnarParams, FactorNoiseSpec, PanelSeries, simulate_cnar, simulate_nar, nar_equivalent_b
from .net import SbmSpec, generate_sbm, membership_basis, planted_partition_spec, row_normalize

__all__ = [
    "ExamplePreset",
    "PRESETS",
    "Scenario",
    "community_effects",
    "fixed_loadings",
    "make_scenario",
    "DEFAULT_GAMMA",
]

ALPHA_N = 0.9
RHO = 8 / 9
BETA2 = 0.3
DEFAULT_GAMMA = (-0.1, 0.2, -0.3, 0.0, 0.0)
N_FACTORS = 3
NAR_BETA1 = 0.5
FORGE_ALPHA = 0.95
POWERLAW_DEGREE_FRACTION = 0.8
POWERLAW_TRIANGLE_PROB = 0.5
MAX_BRIDGE_EDGES = 10
PARTITION_P_IN = 0.9
PARTITION_P_OUT = 0.1


@dataclass(frozen=True)
class ExamplePreset:
    example_id: int
    name: str
    description: str
    n: int = 200
    t: int = 200
    k: int = 2


PRESETS: dict[int, ExamplePreset] = {
    1: ExamplePreset(1, "sbm-cnar", "planted-partition SBM (alpha=0.9, rho=8/9), CNAR dynamics"),
    2: ExamplePreset(2, "lowrank-cnar", "low-rank spectral filter of an SBM draw (alpha=0.95), CNAR dynamics"),
    3: ExamplePreset(3, "sbm-nar", "planted-partition SBM, NAR dynamics with beta1=0.5"),
    4: ExamplePreset(4, "powerlaw-cnar", "Holme-Kim power-law clusters joined by Uniform{0..10} bridges, CNAR dynamics"),
    5: ExamplePreset(5, "partition-cnar", "random partition graph (p_in=0.9, p_out=0.1, unequal sizes), CNAR dynamics"),
}


def community_effects(k: int) -> np.ndarray:
    """Diagonal community effects 0.1, -0.1, 0.2, -0.2, ... (first k terms)."""
    mags = 0.1 * (np.arange(k) // 2 + 1)
    signs = np.where(np.arange(k) % 2 == 0, 1.0, -1.0)
    return np.diag(mags * signs)


def fixed_loadings(n: int, m: int = N_FACTORS, seed: int = 0, cache_dir=None) -> np.ndarray:
    """N(1, 1) loadings that are fixed for each (n, m) pair.

    The draw depends only on ``(seed, n, m)``. With ``cache_dir`` the matrix is
    stored as ``loadings_n{n}_m{m}_s{seed}.npy`` and reused on later calls.
    """
    path = None
    if cache_dir is not None:
        path = Path(cache_dir) / f"loadings_n{n}_m{m}_s{seed}.npy"
        if path.exists():
            return np.load(path)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0x4C41, n, m)))
    lam = rng.normal(1.0, 1.0, size=(n, m))
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".npy")
        with os.fdopen(fd, "wb") as fh:
            np.save(fh, lam)
        os.replace(tmp, path)
    return lam


@dataclass(frozen=True)
class Scenario:
    """One realized network plus the coefficients that drive the responses."""

    example_id: int
    adjacency: np.ndarray
    membership: SbmSpec
    u_true: np.ndarray
    params: CnarParams
    noise: FactorNoiseSpec
    beta1: float | None = None
    a_tilde: np.ndarray = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @property
    def k(self) -> int:
        return self.params.k

    @property
    def generator(self) -> str:
        return "nar" if self.beta1 is not None else "cnar"

    def phi_cnar(self) -> np.ndarray:
        """Target of the CNAR coefficient U B1 U^T."""
        return self.params.phi(self.u_true)

    def phi_nar(self) -> np.ndarray | None:
        return None if self.beta1 is None else self.beta1 * self.a_tilde

    def phi_true(self) -> np.ndarray:
        return self.phi_cnar() if self.beta1 is None else self.phi_nar()

    def simulate(self, t_len: int, rng=None, burn_in: int = 200) -> PanelSeries:
        if self.beta1 is None:
            return simulate_cnar(self.u_true, self.params, self.noise, t_len, burn_in, rng)
        return simulate_nar(
            self.a_tilde, self.beta1, self.params.beta2, self.params.gamma,
            self.noise, t_len, burn_in, rng,
        )


def _equal_sizes(n: int, k: int) -> list[int]:
    base, extra = divmod(n, k)
    return [base + (1 if i < extra else 0) for i in range(k)]


def _forge_lowrank(a0: np.ndarray, alpha: float, rng) -> np.ndarray:
    """Keep the round(alpha*N) largest-|lambda| eigenpairs of ``a0``, clip to
    [0, 1] and resample edges from the filtered probabilities."""
    n = a0.shape[0]
    level = int(round(n * alpha))
    vals, vecs = np.linalg.eigh(a0)
    keep = np.argsort(np.abs(vals))[::-1][:level]
    prob = (vecs[:, keep] * vals[keep]) @ vecs[:, keep].T
    prob = np.clip(prob, 0.0, 1.0)
    np.fill_diagonal(prob, 0.0)
    upper = np.triu(rng.random((n, n)) < prob, k=1)
    return (upper | upper.T).astype(float)


def _powerlaw_clusters(sizes: list[int], rng) -> np.ndarray:
    n = sum(sizes)
    a = np.zeros((n, n))
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    for c, size in enumerate(sizes):
        m = max(1, min(size - 1, int(POWERLAW_DEGREE_FRACTION * size)))
        g = nx.powerlaw_cluster_graph(size, m, POWERLAW_TRIANGLE_PROB, seed=int(rng.integers(2**31 - 1)))
        block = nx.to_numpy_array(g, nodelist=range(size))
        sl = slice(offsets[c], offsets[c + 1])
        a[sl, sl] = block
    for i in range(len(sizes)):
        for j in range(i + 1, len(sizes)):
            n_edges = int(rng.integers(0, MAX_BRIDGE_EDGES + 1))
            if n_edges == 0:
                continue
            pairs = rng.choice(sizes[i] * sizes[j], size=min(n_edges, sizes[i] * sizes[j]), replace=False)
            src = offsets[i] + pairs // sizes[j]
            dst = offsets[j] + pairs % sizes[j]
            a[src, dst] = 1.0
            a[dst, src] = 1.0
    return a


def _unequal_sizes(n: int, k: int, rng) -> list[int]:
    floor = max(1, n // (2 * k))
    extra = rng.multinomial(n - floor * k, np.full(k, 1.0 / k))
    return [int(floor + e) for e in extra]


def make_scenario(
    example_id: int,
    n: int,
    k: int = 2,
    rng=None,
    loadings=None,
    *,
    sigma_e: float = 1.0,
    gamma=DEFAULT_GAMMA,
) -> Scenario:
    """Build the network and coefficients for one replication of an example."""
    if example_id not in PRESETS:
        raise ValidationError(f"unknown example id {example_id}; choose from {sorted(PRESETS)}")
    if n < 2 * k or k < 1:
        raise ValidationError(f"need at least two nodes per community (N={n}, K={k})")
    rng = np.random.default_rng(rng)
    lam = fixed_loadings(n) if loadings is None else np.asarray(loadings, dtype=float)
    if lam.shape[0] != n:
        raise ValidationError(f"loadings have {lam.shape[0]} rows, expected {n}")
    noise = FactorNoiseSpec(lam, sigma_e=sigma_e)
    gamma = np.asarray(gamma, dtype=float)
    b1 = community_effects(k)

    if example_id in (1, 3):
        spec = planted_partition_spec(_equal_sizes(n, k), ALPHA_N, RHO)
        a = generate_sbm(spec, rng)
    elif example_id == 2:
        spec = planted_partition_spec(_equal_sizes(n, k), ALPHA_N, RHO)
        a = _forge_lowrank(generate_sbm(spec, rng), FORGE_ALPHA, rng)
    elif example_id == 4:
        sizes = _equal_sizes(n, k)
        spec = SbmSpec.from_labels(np.repeat(np.arange(k), sizes), np.eye(k))
        a = _powerlaw_clusters(sizes, rng)
    else:
        sizes = _unequal_sizes(n, k, rng)
        q = PARTITION_P_OUT * np.ones((k, k)) + (PARTITION_P_IN - PARTITION_P_OUT) * np.eye(k)
        spec = SbmSpec.from_labels(np.repeat(np.arange(k), sizes), q)
        a = generate_sbm(spec, rng)

    u_true = membership_basis(spec.theta)
    a_tilde = row_normalize(a)
    if example_id == 3:
        # CNAR target is the block average of beta1 * A_tilde, expressed in u_true
        b = nar_equivalent_b(NAR_BETA1, a_tilde, spec)
        sizes = spec.theta.sum(axis=0)
        b1_equiv = np.sqrt(sizes)[:, None] * b * np.sqrt(sizes)[None, :]
        params = CnarParams(b1_equiv, BETA2, gamma)
        return Scenario(example_id, a, spec, u_true, params, noise, beta1=NAR_BETA1, a_tilde=a_tilde)
    params = CnarParams(b1, BETA2, gamma)
    return Scenario(example_id, a, spec, u_true, params, noise, a_tilde=a_tilde)
