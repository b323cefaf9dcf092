"""Forecasting, error metrics, rolling backtests and the Monte-Carlo benchmark."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from itertools import product
from typing import Iterable, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .errors import ValidationError
from .estim import (
    FitResult,
    NarFit,
    _as_basis,
    cnar_design,
    fit_first_step,
    fit_nar,
    fit_poet,
    fit_second_step,
    nar_design,
)
from .model import PanelSeries, build_design
from .net import spectral_embed, subspace_distance
from .scenarios import N_FACTORS, PRESETS, fixed_loadings, make_scenario

__all__ = [
    "METHODS",
    "METRICS",
    "RollingConfig",
    "WindowResult",
    "McReport",
    "predict_one_step",
    "predict_nar",
    "remse",
    "remspe",
    "backtest_windows",
    "rolling_backtest",
    "backtest_to_csv",
    "run_benchmark",
    "run_replication",
]

logger = logging.getLogger(__name__)

METHODS = ("CNAR1", "CNAR2", "NAR")
METRICS = ("remse_phi", "remse_beta2", "remse_gamma", "remse_lambda", "remse_pred")


def predict_one_step(fit: FitResult, u_hat, y_last, z_last) -> np.ndarray:
    """Signal forecast U B1 U^T y + beta2 y + Z gamma."""
    u = _as_basis(u_hat)
    if u.shape[1] != fit.k:
        raise ValidationError(f"embedding has K={u.shape[1]}, fit has K={fit.k}")
    z_last = np.asarray(z_last, dtype=float)
    if z_last.ndim == 2 and z_last.shape[1] != fit.p:
        raise ValidationError(f"covariates have p={z_last.shape[1]}, fit has p={fit.p}")
    return build_design(y_last, z_last, u) @ fit.theta_hat


def predict_nar(fit: NarFit, a_tilde, y_last, z_last) -> np.ndarray:
    y_last = np.asarray(y_last, dtype=float)
    z_last = np.asarray(z_last, dtype=float).reshape(y_last.size, -1)
    return fit.beta1 * (np.asarray(a_tilde) @ y_last) + fit.beta2 * y_last + z_last @ fit.gamma


def remse(estimate, truth) -> float:
    """Relative Frobenius error ||estimate - truth|| / ||truth||."""
    estimate = np.asarray(estimate, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if estimate.shape != truth.shape:
        raise ValidationError(f"shape mismatch: {estimate.shape} vs {truth.shape}")
    denom = np.linalg.norm(truth)
    if denom == 0:
        raise ValidationError("relative error is undefined for a zero truth")
    return float(np.linalg.norm(estimate - truth) / denom)


# ---------------------------------------------------------------------------
# rolling backtest


@dataclass(frozen=True)
class RollingConfig:
    t_train: int = 150
    t_test: int = 25
    stride: int | None = None

    def __post_init__(self):
        if self.t_train < 2:
            raise ValidationError("t_train must be at least 2")
        if self.t_test < 1:
            raise ValidationError("t_test must be at least 1")
        if self.stride is not None and self.stride < 1:
            raise ValidationError("stride must be at least 1")

    @property
    def step(self) -> int:
        return self.t_test if self.stride is None else self.stride


@dataclass(frozen=True)
class WindowResult:
    method: str
    window: int
    train_start: int
    train_stop: int
    test_start: int
    test_stop: int
    mspe: float
    mspe0: float
    remspe: float


def backtest_windows(t_len: int, cfg: RollingConfig) -> list[tuple[range, range]]:
    """(train, test) index ranges; test windows start right after training."""
    if t_len < cfg.t_train + cfg.t_test:
        raise ValidationError(
            f"panel length {t_len} is shorter than t_train + t_test = {cfg.t_train + cfg.t_test}"
        )
    out = []
    start = 0
    while start + cfg.t_train + cfg.t_test <= t_len:
        train = range(start, start + cfg.t_train)
        test = range(train.stop, train.stop + cfg.t_test)
        out.append((train, test))
        start += cfg.step
    return out


def remspe(mspe: float, mspe0: float) -> float:
    if mspe0 == 0:
        warnings.warn("baseline MSPE is zero; ReMSPE reported as missing", RuntimeWarning, stacklevel=2)
        return math.nan
    return mspe / mspe0


def _normalize_methods(method) -> tuple[str, ...]:
    if isinstance(method, str):
        method = METHODS if method.lower() == "all" else (method,)
    methods = tuple(m.upper() for m in method)
    for m in methods:
        if m not in METHODS:
            raise ValidationError(f"unknown method {m!r}; choose from {METHODS} or 'all'")
    return methods


def _window_predictions(panel, train, test, u, methods, m, a_tilde) -> dict[str, np.ndarray]:
    fit_panel = panel.window(train.start, train.stop)
    # lags for the test points end at test.stop - 2, so the slice below stops at test.stop - 1
    lag_y = panel.y[test.start - 1 : test.stop]
    lag_z = panel.z[test.start - 1 : test.stop]
    preds = {}
    if "CNAR1" in methods or "CNAR2" in methods:
        xs = cnar_design(lag_y, lag_z, u)
        first = fit_first_step(fit_panel, u)
        if "CNAR1" in methods:
            preds["CNAR1"] = xs @ first.theta_hat
        if "CNAR2" in methods:
            second = fit_second_step(fit_panel, u, fit_poet(first.residuals, m))
            preds["CNAR2"] = xs @ second.theta_hat
    if "NAR" in methods:
        if a_tilde is None:
            raise ValidationError("NAR backtests need the row-normalized adjacency matrix")
        nar1 = fit_nar(fit_panel, a_tilde)
        nar2 = fit_nar(fit_panel, a_tilde, fit_poet(nar1.residuals, m))
        preds["NAR"] = nar_design(lag_y, lag_z, a_tilde) @ nar2.coef
    return preds


def _run_window(args):
    panel, idx, train, test, u, methods, m, a_tilde = args
    with threadpool_limits(1):
        preds = _window_predictions(panel, train, test, u, methods, m, a_tilde)
    actual = panel.y[test.start : test.stop]
    mu = panel.y[train.start : train.stop].mean(axis=0)
    mspe0 = float(np.mean((actual - mu) ** 2))
    rows = []
    for meth in methods:
        mspe = float(np.mean((preds[meth] - actual) ** 2))
        rows.append(WindowResult(meth, idx, train.start, train.stop, test.start, test.stop,
                                 mspe, mspe0, remspe(mspe, mspe0)))
    return rows


def rolling_backtest(
    panel: PanelSeries,
    u_hat,
    cfg: RollingConfig = RollingConfig(),
    method="CNAR2",
    m: int = 3,
    *,
    a_tilde=None,
    workers: int = 1,
) -> list[WindowResult]:
    """Fit on each training window and score one-step forecasts over the test window.

    Forecasts use observed lags, so every test point is predicted from the
    previous observation. The baseline is the per-node training mean.
    """
    methods = _normalize_methods(method)
    u = _as_basis(u_hat)
    tasks = [
        (panel, i, train, test, u, methods, m, a_tilde)
        for i, (train, test) in enumerate(backtest_windows(panel.t_len, cfg))
    ]
    results = _map(_run_window, tasks, workers)
    return [row for rows in results for row in rows]


def backtest_to_csv(rows: Sequence[WindowResult]) -> str:
    """One line per window with mspe/remspe columns for every method present."""
    methods = [m for m in METHODS if any(r.method == m for r in rows)]
    by_window: dict[int, dict[str, WindowResult]] = {}
    for r in rows:
        by_window.setdefault(r.window, {})[r.method] = r
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(
        ["window", "train_start", "train_stop", "test_start", "test_stop", "mspe0"]
        + [f"{kind}_{m}" for m in methods for kind in ("mspe", "remspe")]
    )
    for w in sorted(by_window):
        cells = by_window[w]
        first = next(iter(cells.values()))
        line = [w, first.train_start, first.train_stop, first.test_start, first.test_stop, first.mspe0]
        for m in methods:
            line += [cells[m].mspe, cells[m].remspe]
        writer.writerow([_fmt(v) for v in line])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Monte-Carlo benchmark


def _fmt(value) -> str:
    if isinstance(value, float):
        return "nan" if math.isnan(value) else repr(value)
    return str(value)


def _map(func, tasks: list, workers: int) -> list:
    if workers <= 1 or len(tasks) <= 1:
        return [func(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, tasks))


def _relative(est, truth) -> float:
    truth = np.atleast_1d(np.asarray(truth, dtype=float))
    if np.linalg.norm(truth) == 0:
        return float(np.linalg.norm(np.atleast_1d(est)))
    return remse(np.atleast_1d(np.asarray(est, dtype=float)), truth)


def run_replication(task) -> list[dict]:
    """All three fits for one (example, N, T, K, replication) cell; see :func:`run_benchmark`."""
    example_id, n, t_len, k, rep, seed, loadings, m = task
    root = np.random.SeedSequence(seed, spawn_key=(example_id, n, t_len, k))
    net_seq, sim_seq = root.spawn(2)
    with threadpool_limits(1):
        scen = make_scenario(example_id, n, k, np.random.default_rng(net_seq), loadings)
        # one extra period supplies the held-out signal s_{T+1}
        full = scen.simulate(t_len + 1, np.random.default_rng(sim_seq))
        panel = full.window(0, t_len)
        target = full.signal[t_len]
        y_last, z_last = panel.y[-1], panel.z[-1]

        emb = spectral_embed(scen.adjacency, k)
        u = emb.u_hat
        lam_true = scen.noise.loadings
        llt = lam_true @ lam_true.T
        phi_c = scen.phi_cnar()

        first = fit_first_step(panel, u)
        cov1 = fit_poet(first.residuals, m)
        second = fit_second_step(panel, u, cov1)
        cov2 = fit_poet(second.residuals, m)
        nar1 = fit_nar(panel, scen.a_tilde)
        nar_cov = fit_poet(nar1.residuals, m)
        nar2 = fit_nar(panel, scen.a_tilde, nar_cov)

        phi_nar_truth = scen.phi_true()
        out = []
        for meth, fit, cov in (("CNAR1", first, cov1), ("CNAR2", second, cov2)):
            out.append({
                "method": meth,
                "remse_phi": remse(fit.params.phi(u), phi_c),
                "remse_beta2": _relative(fit.params.beta2, scen.params.beta2),
                "remse_gamma": _relative(fit.params.gamma, scen.params.gamma),
                "remse_lambda": remse(cov.lambda_hat @ cov.lambda_hat.T, llt),
                "remse_pred": remse(predict_one_step(fit, u, y_last, z_last), target),
            })
        out.append({
            "method": "NAR",
            "remse_phi": remse(nar2.beta1 * scen.a_tilde, phi_nar_truth),
            "remse_beta2": _relative(nar2.beta2, scen.params.beta2),
            "remse_gamma": _relative(nar2.gamma, scen.params.gamma),
            "remse_lambda": remse(nar_cov.lambda_hat @ nar_cov.lambda_hat.T, llt),
            "remse_pred": remse(predict_nar(nar2, scen.a_tilde, y_last, z_last), target),
        })
        subdist = subspace_distance(u, scen.u_true)
    for row in out:
        row.update({"example": example_id, "n": n, "t": t_len, "k": k, "rep": rep, "seed": seed,
                    "subspace_distance": subdist})
    return out


@dataclass
class McReport:
    example_id: int
    seed0: int
    reps: int
    records: list[dict] = field(default_factory=list)

    COLUMNS = ("example", "method", "n", "t", "k", "rep", "seed") + METRICS + ("subspace_distance",)

    def cells(self) -> list[tuple[str, int, int, int]]:
        seen = []
        for r in self.records:
            key = (r["method"], r["n"], r["t"], r["k"])
            if key not in seen:
                seen.append(key)
        return seen

    def values(self, method: str, n: int, t: int, k: int, metric: str) -> np.ndarray:
        return np.array([
            r[metric] for r in self.records
            if (r["method"], r["n"], r["t"], r["k"]) == (method, n, t, k)
        ])

    def summary(self) -> list[dict]:
        rows = []
        for method, n, t, k in self.cells():
            row = {"method": method, "n": n, "t": t, "k": k}
            for metric in METRICS:
                v = self.values(method, n, t, k, metric)
                row[metric] = {
                    "mean": float(np.mean(v)),
                    "sd": float(np.std(v, ddof=1)) if v.size > 1 else 0.0,
                    "median": float(np.median(v)),
                }
            rows.append(row)
        return rows

    def median(self, method: str, n: int, t: int, k: int, metric: str = "remse_phi") -> float:
        return float(np.median(self.values(method, n, t, k, metric)))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.COLUMNS)
        for r in self.records:
            writer.writerow([_fmt(r[c]) for c in self.COLUMNS])
        return buf.getvalue()

    def summary_json(self) -> str:
        payload = {
            "example": self.example_id,
            "seed0": self.seed0,
            "reps": self.reps,
            "cells": self.summary(),
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"

    def table(self) -> str:
        """Summary table with mean(sd) of each metric scaled by 100."""
        lines = []
        header = f"{'method':<6} {'N':>5} {'T':>5} {'K':>3}  " + "  ".join(f"{m:>18}" for m in METRICS)
        lines.append(header)
        for row in self.summary():
            cells = "  ".join(
                f"{format_mean_sd(row[m]['mean'], row[m]['sd']):>18}" for m in METRICS
            )
            lines.append(f"{row['method']:<6} {row['n']:>5} {row['t']:>5} {row['k']:>3}  {cells}")
        return "\n".join(lines) + "\n"


def format_mean_sd(mean: float, sd: float, scale: float = 100.0) -> str:
    return f"{mean * scale:.3f}({sd * scale:.3f})"


def _validate_grid(grid: dict, m: int) -> tuple[list[int], list[int], list[int]]:
    try:
        ns = [int(v) for v in grid["n"]]
        ts = [int(v) for v in grid["t"]]
        ks = [int(v) for v in grid["k"]]
    except (KeyError, TypeError) as exc:
        raise ValidationError("grid must provide lists 'n', 't' and 'k'") from exc
    if not ns or not ts or not ks:
        raise ValidationError("grid lists must be non-empty")
    for n, t, k in product(ns, ts, ks):
        if k < 1 or n < 2 * k:
            raise ValidationError(f"invalid cell N={n}, K={k}: need at least two nodes per community")
        if t < 2:
            raise ValidationError(f"invalid cell T={t}: need at least two periods")
        if not 1 <= m < min(t - 1, n):
            raise ValidationError(f"invalid cell N={n}, T={t}: too small for {m} factors")
    return ns, ts, ks


def run_benchmark(
    example_id: int,
    grid: dict,
    reps: int,
    seed0: int = 0,
    *,
    workers: int = 1,
    m: int = N_FACTORS,
    loadings_seed: int = 0,
    loadings_cache=None,
) -> McReport:
    """Replicate an example over a grid of (N, T, K) cells.

    Replication ``r`` of every cell is seeded with ``seed0 + r``. Results are
    merged in (cell, replication) order, so the report does not depend on
    ``workers``. Factor loadings are drawn once per (N, M) from
    ``loadings_seed`` and shared by every replication.
    """
    if example_id not in PRESETS:
        raise ValidationError(f"unknown example id {example_id}; choose from {sorted(PRESETS)}")
    if reps < 1:
        raise ValidationError("reps must be positive")
    ns, ts, ks = _validate_grid(grid, m)
    loadings = {n: fixed_loadings(n, m, loadings_seed, loadings_cache) for n in ns}
    tasks = [
        (example_id, n, t, k, r, seed0 + r, loadings[n], m)
        for n, t, k in product(ns, ts, ks)
        for r in range(reps)
    ]
    logger.info("running %d replications with %d worker(s)", len(tasks), workers)
    results = _map(run_replication, tasks, workers)
    records = [row for rows in results for row in rows]
    return McReport(example_id=example_id, seed0=seed0, reps=reps, records=records)
