"""Reading and writing networks, panels and fitted models.

Every writer goes through :func:`atomic_write`, so a crash never leaves a
half-written file behind.
"""

from __future__ import annotations

import csv
import json
import os
import re
import tempfile
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .estim import ErrCov, FitResult
from .model import PanelSeries

__all__ = [
    "atomic_write",
    "read_edge_list",
    "write_edge_list",
    "read_dense_adjacency",
    "write_dense_adjacency",
    "read_adjacency",
    "read_membership",
    "write_membership",
    "read_panel",
    "write_panel",
    "fit_to_dict",
    "errcov_to_dict",
    "write_json",
    "read_json",
]

_SPLIT = re.compile(r"[\s,]+")
_N_HEADER = re.compile(r"#\s*N=(\d+)")
_Z_HEADER = re.compile(r"#\s*T=(\d+)\s*,?\s*N=(\d+)\s*,?\s*p=(\d+)")

THETA_LAYOUT = "vec(B1) column-major (K*K entries), then beta2, then gamma (p entries)"


def atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _require(path) -> Path:
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"file not found: {path}")
    return path


def _fmt_row(values) -> str:
    return ",".join(repr(float(v)) for v in values)


def _matrix_csv(mat: np.ndarray) -> str:
    return "".join(_fmt_row(row) + "\n" for row in np.atleast_2d(mat))


def _read_matrix(path) -> np.ndarray:
    path = _require(path)
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or row[0].lstrip().startswith("#"):
                continue
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise ValidationError(f"{path}:{lineno}: non-numeric entry") from exc
    if not rows:
        raise ValidationError(f"{path}: no data rows")
    width = len(rows[0])
    for i, r in enumerate(rows):
        if len(r) != width:
            raise ValidationError(f"{path}: row {i + 1} has {len(r)} columns, expected {width}")
    mat = np.array(rows)
    if not np.all(np.isfinite(mat)):
        raise ValidationError(f"{path}: missing or non-finite values are not supported")
    return mat


# ---------------------------------------------------------------------------
# networks


def read_edge_list(path, n: int | None = None) -> np.ndarray:
    """Undirected 0-based edge list, one ``i j`` pair per line.

    Whitespace or commas separate the two indices, ``#`` starts a comment,
    duplicate edges are ignored and self-loops are rejected. ``n`` defaults to
    a leading ``# N=<n>`` header when present, else one plus the largest
    index seen.
    """
    path = _require(path)
    edges = []
    declared = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            header = _N_HEADER.match(line.strip())
            if header and declared is None and not edges:
                declared = int(header.group(1))
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = [p for p in _SPLIT.split(line) if p]
            if len(parts) != 2:
                raise ValidationError(f"{path}:{lineno}: expected two node indices")
            try:
                i, j = int(parts[0]), int(parts[1])
            except ValueError as exc:
                raise ValidationError(f"{path}:{lineno}: node indices must be integers") from exc
            if i < 0 or j < 0:
                raise ValidationError(f"{path}:{lineno}: node indices must be non-negative")
            if i == j:
                raise ValidationError(f"{path}:{lineno}: self-loops are not allowed")
            edges.append((i, j))
    size = (max(max(e) for e in edges) + 1) if edges else 0
    n = declared if n is None else n
    if n is not None:
        if size > n:
            raise ValidationError(f"{path}: node index {size - 1} out of range for N={n}")
        size = n
    a = np.zeros((size, size))
    for i, j in edges:
        a[i, j] = a[j, i] = 1.0
    return a


def write_edge_list(path, a) -> None:
    a = np.asarray(a)
    i, j = np.nonzero(np.triu(a, k=1))
    header = f"# N={a.shape[0]}\n"
    atomic_write(path, header + "".join(f"{s} {d}\n" for s, d in zip(i, j)))


def read_dense_adjacency(path) -> np.ndarray:
    a = _read_matrix(path)
    if a.shape[0] != a.shape[1]:
        raise ValidationError(f"{path}: adjacency must be square, got {a.shape}")
    if not np.array_equal(a, a.T):
        raise ValidationError(f"{path}: adjacency must be symmetric")
    return a


def write_dense_adjacency(path, a) -> None:
    atomic_write(path, _matrix_csv(np.asarray(a, dtype=float)))


def read_adjacency(path, n: int | None = None) -> np.ndarray:
    """Dense CSV when the first data line has more than two fields, else an edge list."""
    path = _require(path)
    fields: list[str] = []
    with open(path) as fh:
        for line in fh:
            stripped = line.split("#", 1)[0].strip()
            if stripped:
                fields = [f for f in _SPLIT.split(stripped) if f]
                break
    if len(fields) <= 2:
        return read_edge_list(path, n)
    a = read_dense_adjacency(path)
    if n is not None and a.shape[0] != n:
        raise ValidationError(f"{path}: adjacency has N={a.shape[0]}, expected {n}")
    return a


def read_membership(path) -> np.ndarray:
    path = _require(path)
    labels = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            try:
                labels.append(int(line))
            except ValueError as exc:
                raise ValidationError(f"{path}:{lineno}: community index must be an integer") from exc
    labels = np.array(labels, dtype=int)
    if labels.size and labels.min() < 0:
        raise ValidationError(f"{path}: community indices must be non-negative")
    return labels


def write_membership(path, labels) -> None:
    atomic_write(path, "".join(f"{int(c)}\n" for c in labels))


# ---------------------------------------------------------------------------
# panels


def write_panel(directory, panel: PanelSeries) -> None:
    directory = Path(directory)
    atomic_write(directory / "y.csv", _matrix_csv(panel.y))
    if panel.p > 0:
        header = f"# T={panel.t_len},N={panel.n},p={panel.p}\n"
        atomic_write(directory / "z.csv", header + _matrix_csv(panel.z.reshape(-1, panel.p)))
    if panel.signal is not None:
        atomic_write(directory / "signal.csv", _matrix_csv(panel.signal))


def read_panel(directory, p: int | None = None) -> PanelSeries:
    """Load ``y.csv``, ``z.csv`` and the optional ``signal.csv`` from ``directory``.

    ``z.csv`` may be absent only when ``p`` is 0. When ``p`` is None it is
    taken from the z.csv header, or 0 when the file does not exist.
    """
    directory = Path(directory)
    y = _read_matrix(directory / "y.csv")
    t_len, n = y.shape
    z_path = directory / "z.csv"
    if not z_path.is_file():
        if p:
            raise ValidationError(f"covariate file {z_path} is required when p={p}")
        z = np.zeros((t_len, n, 0))
    else:
        with open(z_path) as fh:
            match = _Z_HEADER.match(fh.readline().strip())
        if match is None:
            raise ValidationError(f"{z_path}: missing header line '# T=..,N=..,p=..'")
        zt, zn, zp = (int(g) for g in match.groups())
        if (zt, zn) != (t_len, n):
            raise ValidationError(f"{z_path}: header says T={zt}, N={zn} but y.csv is {t_len}x{n}")
        if p is not None and zp != p:
            raise ValidationError(f"{z_path}: header says p={zp}, expected {p}")
        flat = _read_matrix(z_path) if zp > 0 else np.zeros((t_len * n, 0))
        if flat.shape != (t_len * n, zp):
            raise ValidationError(f"{z_path}: expected {t_len * n} rows x {zp} columns, got {flat.shape}")
        z = flat.reshape(t_len, n, zp)
    signal = None
    s_path = directory / "signal.csv"
    if s_path.is_file():
        signal = _read_matrix(s_path)
        if signal.shape != y.shape:
            raise ValidationError(f"{s_path}: shape {signal.shape} differs from y.csv {y.shape}")
    return PanelSeries(y, z, signal)


# ---------------------------------------------------------------------------
# fitted models


def fit_to_dict(fit: FitResult, provenance: dict | None = None) -> dict:
    return {
        "theta": [float(v) for v in fit.theta_hat],
        "theta_layout": THETA_LAYOUT,
        "k": fit.k,
        "p": fit.p,
        "step": fit.step,
        "b1": fit.params.b1.tolist(),
        "beta2": float(fit.params.beta2),
        "gamma": fit.params.gamma.tolist(),
        "gram_condition": float(fit.gram_condition),
        "provenance": provenance or {},
    }


def errcov_to_dict(cov: ErrCov) -> dict:
    return {
        "m": int(cov.lambda_hat.shape[1]),
        "n": int(cov.lambda_hat.shape[0]),
        "lambda": cov.lambda_hat.tolist(),
        "sigma_e_diag": cov.sigma_e_diag.tolist(),
        "eigvals_resid": cov.eigvals_resid.tolist(),
    }


def write_json(path, payload: dict) -> None:
    atomic_write(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def read_json(path) -> dict:
    path = _require(path)
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from exc
