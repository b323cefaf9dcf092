"""CNAR / NAR parameters, stationarity checks and panel simulation.

Coefficients are packed as ``theta = (vec(B1), beta2, gamma)`` with ``vec``
stacking the columns of ``B1``. The response recursion used throughout is::

    y_t = Phi y_{t-1} + beta2 y_{t-1} + Z_{t-1} gamma + Lambda f_t + e_t

with ``Phi = U B1 U^T`` for CNAR and ``Phi = beta1 * A_tilde`` for NAR.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ValidationError

__all__ = [
    "CnarParams",
    "FactorNoiseSpec",
    "PanelSeries",
    "StationarityReport",
    "pack_theta",
    "unpack_theta",
    "check_stationarity",
    "build_design",
    "simulate_cnar",
    "simulate_nar",
    "nar_equivalent_b",
    "community_totals",
    "DEFAULT_BURN_IN",
]

DEFAULT_BURN_IN = 200


@dataclass(frozen=True)
class CnarParams:
    b1: np.ndarray
    beta2: float
    gamma: np.ndarray

    def __post_init__(self):
        b1 = np.atleast_2d(np.asarray(self.b1, dtype=float))
        gamma = np.asarray(self.gamma, dtype=float).reshape(-1)
        if b1.shape[0] != b1.shape[1] or b1.shape[0] < 1:
            raise ValidationError(f"B1 must be square with K >= 1, got {b1.shape}")
        beta2 = float(self.beta2)
        if not (np.all(np.isfinite(b1)) and np.isfinite(beta2) and np.all(np.isfinite(gamma))):
            raise ValidationError("parameters must be finite")
        object.__setattr__(self, "b1", b1)
        object.__setattr__(self, "beta2", beta2)
        object.__setattr__(self, "gamma", gamma)

    @property
    def k(self) -> int:
        return self.b1.shape[0]

    @property
    def p(self) -> int:
        return self.gamma.size

    def phi(self, u) -> np.ndarray:
        """Dense N x N network coefficient U B1 U^T."""
        u = np.asarray(u, dtype=float)
        return u @ self.b1 @ u.T


def pack_theta(params: CnarParams) -> np.ndarray:
    return np.concatenate([params.b1.ravel(order="F"), [params.beta2], params.gamma])


def unpack_theta(theta, k: int, p: int) -> CnarParams:
    theta = np.asarray(theta, dtype=float).reshape(-1)
    if theta.size != k * k + p + 1:
        raise ValidationError(
            f"theta has length {theta.size}, expected K^2+p+1 = {k * k + p + 1}"
        )
    b1 = theta[: k * k].reshape((k, k), order="F")
    return CnarParams(b1=b1, beta2=theta[k * k], gamma=theta[k * k + 1 :])


@dataclass(frozen=True)
class StationarityReport:
    spectral_radius: float
    largest_singular_value: float
    spectral_radius_margin: float
    singular_value_margin: float

    @property
    def is_stationary(self) -> bool:
        return self.spectral_radius_margin > 0

    @property
    def meets_estimation_condition(self) -> bool:
        return self.singular_value_margin > 0


def check_stationarity(params: CnarParams) -> StationarityReport:
    """rho(B1) + |beta2| < 1 gives a stationary solution; sigma_1(B1) + |beta2| < 1
    is the stronger condition assumed by the estimation theory."""
    rho = float(np.max(np.abs(np.linalg.eigvals(params.b1))))
    sigma = float(np.linalg.norm(params.b1, 2))
    ab = abs(params.beta2)
    return StationarityReport(
        spectral_radius=rho,
        largest_singular_value=sigma,
        spectral_radius_margin=1.0 - (rho + ab),
        singular_value_margin=1.0 - (sigma + ab),
    )


@dataclass(frozen=True)
class FactorNoiseSpec:
    """Noise Lambda f_t + e_t with f_t ~ N(0, sigma_f), e_t ~ N(0, sigma_e I).

    ``sigma_e = 0`` is accepted and produces noiseless idiosyncratic terms.
    """

    loadings: np.ndarray
    sigma_f: np.ndarray | None = None
    sigma_e: float = 1.0

    def __post_init__(self):
        lam = np.asarray(self.loadings, dtype=float)
        if lam.ndim == 1:
            lam = lam[:, None]
        if lam.ndim != 2:
            raise ValidationError("loadings must be an N x M matrix")
        m = lam.shape[1]
        sf = np.eye(m) if self.sigma_f is None else np.atleast_2d(np.asarray(self.sigma_f, dtype=float))
        if sf.shape != (m, m):
            raise ValidationError(f"sigma_f must be {m}x{m}")
        if m and (not np.allclose(sf, sf.T) or np.min(np.linalg.eigvalsh(sf)) < -1e-12):
            raise ValidationError("sigma_f must be symmetric positive semidefinite")
        if not self.sigma_e >= 0:
            raise ValidationError("sigma_e must be non-negative")
        object.__setattr__(self, "loadings", lam)
        object.__setattr__(self, "sigma_f", sf)
        object.__setattr__(self, "sigma_e", float(self.sigma_e))

    @property
    def n(self) -> int:
        return self.loadings.shape[0]

    @property
    def m(self) -> int:
        return self.loadings.shape[1]

    def covariance(self) -> np.ndarray:
        lam = self.loadings
        return lam @ self.sigma_f @ lam.T + self.sigma_e * np.eye(self.n)

    @classmethod
    def zero(cls, n: int) -> "FactorNoiseSpec":
        return cls(loadings=np.zeros((n, 0)), sigma_e=0.0)


@dataclass(frozen=True)
class PanelSeries:
    """Panel of responses ``y`` (T x N) and covariates ``z`` (T x N x p).

    Row ``t`` of ``y`` is regressed on row ``t-1`` of ``y`` and ``z``.
    ``signal`` (T x N), when present, is the noiseless part of each response.
    """

    y: np.ndarray
    z: np.ndarray
    signal: np.ndarray | None = None

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        if y.ndim != 2:
            raise ValidationError("y must be T x N")
        z = np.asarray(self.z, dtype=float)
        if z.ndim == 2 and z.size == 0:
            z = z.reshape(y.shape[0], y.shape[1], 0)
        if z.ndim != 3 or z.shape[:2] != y.shape:
            raise ValidationError(f"z must be T x N x p matching y {y.shape}, got {z.shape}")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(z))):
            raise ValidationError("panel contains non-finite values")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "z", z)
        if self.signal is not None:
            s = np.asarray(self.signal, dtype=float)
            if s.shape != y.shape:
                raise ValidationError("signal must match y in shape")
            object.__setattr__(self, "signal", s)

    @property
    def t_len(self) -> int:
        return self.y.shape[0]

    @property
    def n(self) -> int:
        return self.y.shape[1]

    @property
    def p(self) -> int:
        return self.z.shape[2]

    def window(self, start: int, stop: int) -> "PanelSeries":
        sig = None if self.signal is None else self.signal[start:stop]
        return PanelSeries(self.y[start:stop], self.z[start:stop], sig)


def build_design(y_prev, z_prev, u) -> np.ndarray:
    """Regressor block X_{t-1} = ((y^T U) kron U, y, Z) of shape N x (K^2+p+1).

    Column ``j*K + i`` of the Kronecker block multiplies ``B1[i, j]``, matching
    the column-major layout of :func:`pack_theta`.
    """
    y_prev = np.asarray(y_prev, dtype=float).reshape(-1)
    u = np.asarray(u, dtype=float)
    z_prev = np.asarray(z_prev, dtype=float)
    n = y_prev.size
    if z_prev.ndim == 1 and z_prev.size == 0:
        z_prev = z_prev.reshape(n, 0)
    if u.ndim != 2 or u.shape[0] != n:
        raise ValidationError(f"U must have {n} rows, got shape {u.shape}")
    if z_prev.ndim != 2 or z_prev.shape[0] != n:
        raise ValidationError(f"Z must have {n} rows, got shape {z_prev.shape}")
    proj = y_prev @ u
    return np.hstack([np.kron(proj[None, :], u), y_prev[:, None], z_prev])


def _simulate(
    apply_phi: Callable[[np.ndarray], np.ndarray],
    beta2: float,
    gamma: np.ndarray,
    noise: FactorNoiseSpec,
    t_len: int,
    burn_in: int,
    rng,
    y0,
) -> PanelSeries:
    n, p = noise.n, gamma.size
    if t_len < 1:
        raise ValidationError("t_len must be positive")
    if burn_in < 0:
        raise ValidationError("burn_in must be non-negative")
    rng = np.random.default_rng(rng)
    total = burn_in + t_len
    # draw order is fixed (covariates, factors, idiosyncratic) so that simulators
    # sharing a seed see the same shocks
    z = rng.standard_normal((total + 1, n, p))
    f = rng.standard_normal((total, noise.m))
    e = rng.standard_normal((total, n))
    if noise.m and not np.array_equal(noise.sigma_f, np.eye(noise.m)):
        f = f @ _psd_sqrt(noise.sigma_f).T
    eps = f @ noise.loadings.T + np.sqrt(noise.sigma_e) * e

    y_prev = np.zeros(n) if y0 is None else np.broadcast_to(np.asarray(y0, dtype=float), (n,)).copy()
    ys = np.empty((t_len, n))
    sig = np.empty((t_len, n))
    for s in range(total):
        signal = apply_phi(y_prev) + beta2 * y_prev + z[s] @ gamma
        y_prev = signal + eps[s]
        if s >= burn_in:
            ys[s - burn_in] = y_prev
            sig[s - burn_in] = signal
    return PanelSeries(y=ys, z=z[burn_in + 1 :], signal=sig)


def _psd_sqrt(mat: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(mat)
    return vecs * np.sqrt(np.clip(vals, 0, None))


def simulate_cnar(
    u,
    params: CnarParams,
    noise: FactorNoiseSpec,
    t_len: int,
    burn_in: int = DEFAULT_BURN_IN,
    rng=None,
    *,
    y0=None,
    allow_nonstationary: bool = False,
) -> PanelSeries:
    """Simulate the CNAR recursion with Phi = U B1 U^T.

    The state starts at ``y0`` (zeros by default) and the first ``burn_in``
    steps are discarded. Raises :class:`ValidationError` for non-stationary
    parameters unless ``allow_nonstationary`` is set.
    """
    u = np.asarray(u, dtype=float)
    if u.ndim != 2 or u.shape[1] != params.k or u.shape[0] != noise.n:
        raise ValidationError(f"U must be {noise.n} x {params.k}, got {u.shape}")
    report = check_stationarity(params)
    if not report.is_stationary and not allow_nonstationary:
        raise ValidationError(
            f"non-stationary parameters: rho(B1)+|beta2| = {1 - report.spectral_radius_margin:.6g} >= 1"
        )
    b1 = params.b1
    return _simulate(
        lambda y: u @ (b1 @ (u.T @ y)),
        params.beta2, params.gamma, noise, t_len, burn_in, rng, y0,
    )


def simulate_nar(
    a_tilde,
    beta1: float,
    beta2: float,
    gamma,
    noise: FactorNoiseSpec,
    t_len: int,
    burn_in: int = DEFAULT_BURN_IN,
    rng=None,
    *,
    y0=None,
) -> PanelSeries:
    """Simulate the NAR recursion with Phi = beta1 * A_tilde."""
    a_tilde = np.asarray(a_tilde, dtype=float)
    if a_tilde.shape != (noise.n, noise.n):
        raise ValidationError(f"A_tilde must be {noise.n}x{noise.n}")
    if abs(beta1) + abs(beta2) >= 1:
        raise ValidationError(f"|beta1|+|beta2| = {abs(beta1) + abs(beta2):.6g} must be < 1")
    gamma = np.asarray(gamma, dtype=float).reshape(-1)
    return _simulate(
        lambda y: beta1 * (a_tilde @ y), float(beta2), gamma, noise, t_len, burn_in, rng, y0
    )


def nar_equivalent_b(beta1: float, a_tilde, membership) -> np.ndarray:
    """Block-averaged NAR coefficient beta1 D^{-1} Theta^T A_tilde Theta D^{-1}."""
    theta = getattr(membership, "theta", membership)
    theta = np.asarray(theta, dtype=float)
    sizes = theta.sum(axis=0)
    if np.any(sizes == 0):
        raise ValidationError("every community must have at least one member")
    inv = 1.0 / sizes
    return beta1 * (inv[:, None] * (theta.T @ np.asarray(a_tilde, dtype=float) @ theta) * inv[None, :])


def community_totals(y_t, membership) -> np.ndarray:
    theta = np.asarray(getattr(membership, "theta", membership), dtype=float)
    return theta.T @ np.asarray(y_t, dtype=float)
