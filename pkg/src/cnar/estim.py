"""Two-step CNAR estimation and the NAR baseline.

Step one is ordinary least squares on the stacked design. Its residuals feed a
principal-component factor fit with a diagonal idiosyncratic part, whose
inverse (applied with the Woodbury identity) weights the second-step
generalized least squares problem.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import EstimationError, ValidationError
from .model import CnarParams, PanelSeries, unpack_theta
from .net import SpectralEmbedding, _fix_signs

__all__ = [
    "FitResult",
    "ErrCov",
    "SmwPrecision",
    "NarFit",
    "FactorSelection",
    "cnar_design",
    "nar_design",
    "fit_first_step",
    "fit_second_step",
    "fit_poet",
    "precision_smw",
    "fit_nar",
    "select_num_factors",
    "normal_equations",
    "MAX_CONDITION",
    "VARIANCE_FLOOR",
]

logger = logging.getLogger(__name__)

MAX_CONDITION = 1e12
VARIANCE_FLOOR = 1e-8


@dataclass(frozen=True)
class FitResult:
    theta_hat: np.ndarray
    params: CnarParams
    residuals: np.ndarray
    step: int
    gram_condition: float

    @property
    def k(self) -> int:
        return self.params.k

    @property
    def p(self) -> int:
        return self.params.p


@dataclass(frozen=True)
class ErrCov:
    """Factor-structured error covariance Lambda Lambda^T + diag(sigma_e).

    Factors are normalized so that ``factors_hat.T @ factors_hat / T = I``.
    """

    lambda_hat: np.ndarray
    sigma_e_diag: np.ndarray
    factors_hat: np.ndarray
    eigvals_resid: np.ndarray

    def __post_init__(self):
        lam = np.asarray(self.lambda_hat, dtype=float)
        if lam.ndim == 1:
            lam = lam[:, None]
        sig = np.asarray(self.sigma_e_diag, dtype=float).reshape(-1)
        if sig.size != lam.shape[0]:
            raise ValidationError("sigma_e_diag length must equal the number of loading rows")
        if np.any(sig <= 0) or not np.all(np.isfinite(sig)):
            raise ValidationError("idiosyncratic variances must be positive and finite")
        object.__setattr__(self, "lambda_hat", lam)
        object.__setattr__(self, "sigma_e_diag", sig)

    @property
    def n(self) -> int:
        return self.lambda_hat.shape[0]

    @property
    def m(self) -> int:
        return self.lambda_hat.shape[1]

    def covariance(self) -> np.ndarray:
        return self.lambda_hat @ self.lambda_hat.T + np.diag(self.sigma_e_diag)

    @classmethod
    def from_parts(cls, lambda_hat, sigma_e_diag) -> "ErrCov":
        lam = np.asarray(lambda_hat, dtype=float)
        if lam.ndim == 1:
            lam = lam[:, None]
        return cls(lam, sigma_e_diag, np.zeros((0, lam.shape[1])), np.zeros(0))


class SmwPrecision:
    """Inverse of Lambda Lambda^T + D applied through the Woodbury identity.

    Only the M x M capacitance matrix I + Lambda^T D^{-1} Lambda is factorized.
    """

    def __init__(self, lambda_hat, sigma_e_diag):
        self.lambda_hat = np.asarray(lambda_hat, dtype=float)
        self.d_inv = 1.0 / np.asarray(sigma_e_diag, dtype=float)
        m = self.lambda_hat.shape[1]
        scaled = self.d_inv[:, None] * self.lambda_hat
        cap = np.eye(m) + self.lambda_hat.T @ scaled
        try:
            self._cap_factor = scipy.linalg.cho_factor(cap, lower=True)
        except np.linalg.LinAlgError as exc:
            raise EstimationError("capacitance matrix is not positive definite") from exc
        self._scaled = scaled

    @property
    def n(self) -> int:
        return self.d_inv.size

    def apply(self, x) -> np.ndarray:
        """Compute Omega @ x for x of shape (N,) or (N, r)."""
        x = np.asarray(x, dtype=float)
        dx = self.d_inv[:, None] * x if x.ndim == 2 else self.d_inv * x
        if self.lambda_hat.shape[1] == 0:
            return dx
        inner = scipy.linalg.cho_solve(self._cap_factor, self.lambda_hat.T @ dx)
        return dx - self._scaled @ inner

    def apply_stack(self, xs) -> np.ndarray:
        """Apply along the node axis of a (T, N, d) or (T, N) array."""
        xs = np.asarray(xs, dtype=float)
        if xs.ndim == 2:
            return np.ascontiguousarray(self.apply(xs.T).T)
        t, n, d = xs.shape
        flat = xs.transpose(1, 0, 2).reshape(n, t * d)
        return np.ascontiguousarray(self.apply(flat).reshape(n, t, d).transpose(1, 0, 2))

    def dense(self) -> np.ndarray:
        return self.apply(np.eye(self.n))


def precision_smw(cov: ErrCov) -> SmwPrecision:
    return SmwPrecision(cov.lambda_hat, cov.sigma_e_diag)


def _as_basis(u_hat) -> np.ndarray:
    if isinstance(u_hat, SpectralEmbedding):
        return u_hat.u_hat
    u = np.asarray(u_hat, dtype=float)
    if u.ndim == 1:
        u = u[:, None]
    return u


def cnar_design(y, z, u) -> np.ndarray:
    """Stacked regressors X_1..X_{T-1} for responses y_2..y_T, shape (T-1, N, K^2+p+1)."""
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    u = _as_basis(u)
    if u.shape[0] != y.shape[1]:
        raise ValidationError(f"U has {u.shape[0]} rows but the panel has N={y.shape[1]}")
    lag = y[:-1]
    proj = lag @ u
    t1, n = lag.shape
    k = u.shape[1]
    kron = np.einsum("tj,ni->tnji", proj, u).reshape(t1, n, k * k)
    return np.concatenate([kron, lag[:, :, None], z[:-1]], axis=2)


def nar_design(y, z, a_tilde) -> np.ndarray:
    """Stacked NAR regressors (A_tilde y_{t-1}, y_{t-1}, Z_{t-1}), shape (T-1, N, p+2)."""
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    a_tilde = np.asarray(a_tilde, dtype=float)
    if a_tilde.shape != (y.shape[1], y.shape[1]):
        raise ValidationError(f"A_tilde must be {y.shape[1]}x{y.shape[1]}")
    lag = y[:-1]
    return np.concatenate([(lag @ a_tilde.T)[:, :, None], lag[:, :, None], z[:-1]], axis=2)


def normal_equations(xs, ys, weight: SmwPrecision | None = None):
    """Gram matrix and right-hand side summed over time, optionally weighted."""
    wx = xs if weight is None else weight.apply_stack(xs)
    gram = np.einsum("tnd,tne->de", xs, wx)
    rhs = np.einsum("tnd,tn->d", wx, ys)
    return gram, rhs


def _solve(gram: np.ndarray, rhs: np.ndarray) -> tuple[np.ndarray, float]:
    if not np.all(np.isfinite(gram)):
        raise EstimationError("Gram matrix has non-finite entries", condition=np.inf)
    cond = float(np.linalg.cond(gram))
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise EstimationError(
            f"Gram matrix is singular or ill-conditioned (condition {cond:.3e})", condition=cond
        )
    try:
        theta = scipy.linalg.cho_solve(scipy.linalg.cho_factor(gram, lower=True), rhs)
    except np.linalg.LinAlgError:
        logger.debug("Cholesky failed, falling back to QR")
        q, r = np.linalg.qr(gram)
        theta = scipy.linalg.solve_triangular(r, q.T @ rhs)
    return theta, cond


def _check_panel(panel: PanelSeries, n_coef: int) -> None:
    if panel.t_len < 2:
        raise ValidationError("at least two time points are required (one seeds the lag)")
    if n_coef > panel.n * (panel.t_len - 1):
        raise ValidationError(
            f"{n_coef} coefficients cannot be identified from N*(T-1) = {panel.n * (panel.t_len - 1)} observations"
        )


def _fit_cnar(panel: PanelSeries, u_hat, weight: SmwPrecision | None, step: int) -> FitResult:
    u = _as_basis(u_hat)
    k, p = u.shape[1], panel.p
    _check_panel(panel, k * k + p + 1)
    xs = cnar_design(panel.y, panel.z, u)
    ys = panel.y[1:]
    gram, rhs = normal_equations(xs, ys, weight)
    theta, cond = _solve(gram, rhs)
    resid = ys - xs @ theta
    return FitResult(
        theta_hat=theta,
        params=unpack_theta(theta, k, p),
        residuals=resid,
        step=step,
        gram_condition=cond,
    )


def fit_first_step(panel: PanelSeries, u_hat) -> FitResult:
    """Least squares over t = 2..T; residuals are y_t - X_{t-1} theta."""
    return _fit_cnar(panel, u_hat, None, step=1)


def fit_second_step(panel: PanelSeries, u_hat, cov: ErrCov) -> FitResult:
    """Generalized least squares weighted by the inverse factor covariance."""
    if cov.n != panel.n:
        raise ValidationError(f"covariance is for N={cov.n}, panel has N={panel.n}")
    return _fit_cnar(panel, u_hat, precision_smw(cov), step=2)


def _residual_pca(resid: np.ndarray):
    """Eigenpairs of E E^T / (T N) through whichever Gram side is smaller.

    Returns (eigenvalues descending, factors F with F^T F / T = I for each
    positive eigenvalue direction).
    """
    t, n = resid.shape
    scale = 1.0 / (t * n)
    if t <= n:
        vals, vecs = np.linalg.eigh(scale * (resid @ resid.T))
        order = np.argsort(vals)[::-1]
        vals, vecs = vals[order], vecs[:, order]
        factors = np.sqrt(t) * vecs
    else:
        vals, vecs = np.linalg.eigh(scale * (resid.T @ resid))
        order = np.argsort(vals)[::-1]
        vals, vecs = vals[order], vecs[:, order]
        with np.errstate(divide="ignore", invalid="ignore"):
            factors = (resid @ vecs) / np.sqrt(n * np.clip(vals, 0, None))
    return np.clip(vals, 0, None), factors


def fit_poet(residuals, m: int) -> ErrCov:
    """Principal-component factor fit of residuals with diagonal idiosyncratic variance."""
    resid = np.asarray(residuals, dtype=float)
    if resid.ndim != 2:
        raise ValidationError("residuals must be a T x N matrix")
    t, n = resid.shape
    if not 1 <= m < min(t, n):
        raise ValidationError(f"factor count must satisfy 1 <= m < min(T, N) = {min(t, n)}, got {m}")
    if not np.all(np.isfinite(resid)):
        raise ValidationError("residuals contain non-finite values")
    vals, factors = _residual_pca(resid)
    factors = _fix_signs(factors[:, :m])
    if not np.all(np.isfinite(factors)):
        raise EstimationError("residual matrix has rank below the requested factor count")
    lam = resid.T @ factors / t
    idio = resid - factors @ lam.T
    sig = np.mean(idio**2, axis=0)
    if np.any(sig < VARIANCE_FLOOR):
        warnings.warn(
            f"{int(np.sum(sig < VARIANCE_FLOOR))} idiosyncratic variances floored at {VARIANCE_FLOOR}",
            RuntimeWarning,
            stacklevel=2,
        )
        sig = np.maximum(sig, VARIANCE_FLOOR)
    return ErrCov(lambda_hat=lam, sigma_e_diag=sig, factors_hat=factors, eigvals_resid=vals)


@dataclass(frozen=True)
class FactorSelection:
    eigvals: np.ndarray
    ratios: np.ndarray
    suggested_m: int


def select_num_factors(residuals, m_max: int) -> FactorSelection:
    """Eigenvalue-ratio choice of the factor count, argmax_k l_k / l_{k+1} for k <= m_max."""
    resid = np.asarray(residuals, dtype=float)
    t, n = resid.shape
    if not 1 <= m_max < min(t, n) / 2:
        raise ValidationError(f"m_max must satisfy 1 <= m_max < min(T, N)/2 = {min(t, n) / 2}")
    vals, _ = _residual_pca(resid)
    lead = vals[: m_max + 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = lead[:-1] / lead[1:]
    ratios = np.where(np.isnan(ratios), 1.0, ratios)
    if np.allclose(ratios, 1.0, rtol=1e-9, atol=0):
        warnings.warn("residual eigenvalues are all equal; defaulting to one factor", RuntimeWarning, stacklevel=2)
        return FactorSelection(eigvals=lead, ratios=ratios, suggested_m=1)
    return FactorSelection(eigvals=lead, ratios=ratios, suggested_m=int(np.argmax(ratios)) + 1)


@dataclass(frozen=True)
class NarFit:
    beta1: float
    beta2: float
    gamma: np.ndarray
    residuals: np.ndarray
    gram_condition: float
    weighted: bool = False

    @property
    def coef(self) -> np.ndarray:
        return np.concatenate([[self.beta1, self.beta2], self.gamma])


def fit_nar(panel: PanelSeries, a_tilde, weighting: ErrCov | None = None) -> NarFit:
    """(Weighted) least squares for y_t = beta1 A_tilde y_{t-1} + beta2 y_{t-1} + Z_{t-1} gamma."""
    _check_panel(panel, panel.p + 2)
    xs = nar_design(panel.y, panel.z, a_tilde)
    ys = panel.y[1:]
    weight = None if weighting is None else precision_smw(weighting)
    gram, rhs = normal_equations(xs, ys, weight)
    coef, cond = _solve(gram, rhs)
    return NarFit(
        beta1=float(coef[0]),
        beta2=float(coef[1]),
        gamma=coef[2:],
        residuals=ys - xs @ coef,
        gram_condition=cond,
        weighted=weighting is not None,
    )
