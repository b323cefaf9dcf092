"""Command-line entry point: ``cnar simulate | fit | backtest | benchmark``.

Each subcommand reads an optional ``--config`` file (JSON or TOML) whose keys
match the long option names with dashes replaced by underscores. Flags given
on the command line override config values. Exit status is 0 on success,
2 for invalid input and 1 for runtime failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io as cio
from .errors import EstimationError, ValidationError
from .estim import fit_first_step, fit_poet, fit_second_step
from .evaluation import METHODS, RollingConfig, backtest_to_csv, backtest_windows, rolling_backtest, run_benchmark
from .model import DEFAULT_BURN_IN, pack_theta
from .net import membership_basis, row_normalize, spectral_embed
from .scenarios import N_FACTORS, PRESETS, fixed_loadings, make_scenario

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

logger = logging.getLogger("cnar")

CONFIG_SCHEMA = 1

DEFAULTS = {
    "simulate": {
        "example": 1, "n": None, "t": None, "k": None, "seed": 0, "out": ".",
        "burn_in": DEFAULT_BURN_IN, "sigma_e": 1.0, "factors": N_FACTORS,
        "loadings_seed": 0, "noiseless": False, "adjacency_format": "edges",
    },
    "fit": {
        "data": ".", "adjacency": None, "membership": None, "k": None, "p": None,
        "step": 2, "factors": N_FACTORS, "out": ".", "seed": None,
    },
    "backtest": {
        "data": ".", "adjacency": None, "k": None, "p": None, "method": "CNAR2",
        "t_train": 150, "t_test": 25, "stride": None, "factors": N_FACTORS,
        "workers": 1, "out": ".",
    },
    "benchmark": {
        "example": 1, "n": [200], "t": [200], "k": [2], "reps": 20, "seed": 0,
        "workers": 1, "factors": N_FACTORS, "loadings_seed": 0, "out": ".", "list": False,
    },
}


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _u64(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cnar", description="Community network autoregression toolkit")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    S = argparse.SUPPRESS

    def common(p, seed=True):
        p.add_argument("--config", type=Path, help="JSON or TOML file with default option values")
        p.add_argument("--out", type=Path, default=S, help="output directory")
        if seed:
            p.add_argument("--seed", type=_u64, default=S, help="64-bit root seed")

    p = sub.add_parser("simulate", help="generate a network and a panel from an example preset")
    common(p)
    p.add_argument("--example", type=int, choices=sorted(PRESETS), default=S)
    p.add_argument("--n", type=int, default=S, help="number of nodes")
    p.add_argument("--t", type=int, default=S, help="number of periods")
    p.add_argument("--k", type=int, default=S, help="number of communities")
    p.add_argument("--burn-in", type=int, default=S)
    p.add_argument("--sigma-e", type=float, default=S, help="idiosyncratic noise variance")
    p.add_argument("--factors", type=int, default=S, help="number of latent factors M")
    p.add_argument("--loadings-seed", type=int, default=S)
    p.add_argument("--noiseless", action="store_true", default=S, help="drop all noise (exact-recovery preset)")
    p.add_argument("--adjacency-format", choices=("edges", "dense"), default=S)

    p = sub.add_parser("fit", help="estimate CNAR coefficients from a panel")
    common(p)
    p.add_argument("--data", type=Path, default=S, help="directory with y.csv, z.csv")
    p.add_argument("--adjacency", type=Path, default=S, help="edge list or dense CSV (default DATA/adjacency.txt)")
    p.add_argument("--membership", type=Path, default=S, help="use known communities instead of the spectral embedding")
    p.add_argument("--k", type=int, default=S)
    p.add_argument("--p", type=int, default=S, help="number of covariates (default from truth.json or z.csv)")
    p.add_argument("--step", type=int, choices=(1, 2), default=S)
    p.add_argument("--factors", type=int, default=S)

    p = sub.add_parser("backtest", help="rolling-window out-of-sample evaluation")
    common(p, seed=False)
    p.add_argument("--data", type=Path, default=S)
    p.add_argument("--adjacency", type=Path, default=S)
    p.add_argument("--k", type=int, default=S)
    p.add_argument("--p", type=int, default=S)
    p.add_argument("--method", choices=METHODS + ("all",), type=lambda s: s if s == "all" else s.upper(), default=S)
    p.add_argument("--t-train", type=int, default=S)
    p.add_argument("--t-test", type=int, default=S)
    p.add_argument("--stride", type=int, default=S)
    p.add_argument("--factors", type=int, default=S)
    p.add_argument("--workers", type=int, default=S)

    p = sub.add_parser("benchmark", help="Monte-Carlo replication of a simulation example")
    common(p)
    p.add_argument("--example", type=int, default=S)
    p.add_argument("--list", action="store_true", default=S, help="print the example presets and exit")
    p.add_argument("--n", type=_int_list, default=S, help="comma-separated N grid")
    p.add_argument("--t", type=_int_list, default=S, help="comma-separated T grid")
    p.add_argument("--k", type=_int_list, default=S, help="comma-separated K grid")
    p.add_argument("--reps", type=int, default=S)
    p.add_argument("--workers", type=int, default=S)
    p.add_argument("--factors", type=int, default=S)
    p.add_argument("--loadings-seed", type=int, default=S)
    return parser


def load_config(path: Path | None) -> dict:
    if path is None:
        return {}
    if not path.is_file():
        raise ValidationError(f"config file not found: {path}")
    try:
        if path.suffix.lower() == ".toml":
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        else:
            with open(path) as fh:
                data = json.load(fh)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ValidationError(f"{path}: cannot parse config ({exc})") from exc
    if not isinstance(data, dict):
        raise ValidationError(f"{path}: config must be a key-value table")
    schema = data.pop("schema", CONFIG_SCHEMA)
    if schema != CONFIG_SCHEMA:
        raise ValidationError(f"{path}: unsupported config schema {schema}")
    return data


def resolve(command: str, args: argparse.Namespace) -> dict:
    """Merge built-in defaults, config file values and command-line flags."""
    cfg = dict(DEFAULTS[command])
    file_cfg = load_config(getattr(args, "config", None))
    unknown = set(file_cfg) - set(cfg)
    if unknown:
        raise ValidationError(f"unknown config keys for {command}: {sorted(unknown)}")
    cfg.update(file_cfg)
    flags = {k: v for k, v in vars(args).items() if k in cfg}
    cfg.update(flags)
    for key in ("out", "data", "adjacency", "membership"):
        if cfg.get(key) is not None:
            cfg[key] = Path(cfg[key])
    if command == "benchmark":
        for key in ("n", "t", "k"):
            if isinstance(cfg[key], int):
                cfg[key] = [cfg[key]]
    return cfg


def _positive(cfg: dict, *keys: str) -> None:
    for key in keys:
        value = cfg.get(key)
        if value is not None and (not isinstance(value, int) or value < 1):
            raise ValidationError(f"{key} must be a positive integer, got {value!r}")


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(cfg: dict) -> int:
    preset = PRESETS.get(cfg["example"])
    if preset is None:
        raise ValidationError(f"unknown example id {cfg['example']}; choose from {sorted(PRESETS)}")
    n = cfg["n"] if cfg["n"] is not None else preset.n
    t_len = cfg["t"] if cfg["t"] is not None else preset.t
    k = cfg["k"] if cfg["k"] is not None else preset.k
    _positive({"n": n, "t": t_len, "k": k, "factors": cfg["factors"]}, "n", "t", "k", "factors")
    if t_len < 2:
        raise ValidationError("T must be at least 2: every response needs a lagged value")
    if n < 2 * k:
        raise ValidationError(f"need at least two nodes per community (N={n}, K={k})")
    if cfg["burn_in"] < 0:
        raise ValidationError("burn_in must be non-negative")
    noiseless = bool(cfg["noiseless"])
    sigma_e = 0.0 if noiseless else float(cfg["sigma_e"])
    if sigma_e < 0:
        raise ValidationError("sigma_e must be non-negative")
    m = cfg["factors"]
    lam = np.zeros((n, m)) if noiseless else fixed_loadings(n, m, cfg["loadings_seed"])

    net_seq, sim_seq = np.random.SeedSequence(cfg["seed"]).spawn(2)
    scen = make_scenario(cfg["example"], n, k, np.random.default_rng(net_seq), lam, sigma_e=sigma_e)
    panel = scen.simulate(t_len, np.random.default_rng(sim_seq), burn_in=cfg["burn_in"])

    out = cfg["out"]
    adj_name = "adjacency.txt" if cfg["adjacency_format"] == "edges" else "adjacency.csv"
    if cfg["adjacency_format"] == "edges":
        cio.write_edge_list(out / adj_name, scen.adjacency)
    else:
        cio.write_dense_adjacency(out / adj_name, scen.adjacency)
    cio.write_membership(out / "membership.txt", scen.membership.labels)
    cio.write_panel(out, panel)
    truth = {
        "example": preset.example_id,
        "generator": scen.generator,
        "n": n, "t": t_len, "k": k, "p": scen.params.p, "m": m,
        "seed": cfg["seed"],
        "loadings_seed": cfg["loadings_seed"],
        "burn_in": cfg["burn_in"],
        "sigma_e": sigma_e,
        "theta": pack_theta(scen.params).tolist(),
        "theta_layout": cio.THETA_LAYOUT,
        "theta_basis": "membership columns scaled by community size^(-1/2)",
        "b1": scen.params.b1.tolist(),
        "beta1": scen.beta1,
        "beta2": scen.params.beta2,
        "gamma": scen.params.gamma.tolist(),
        "lambda": lam.tolist(),
        "adjacency": adj_name,
    }
    cio.write_json(out / "truth.json", truth)
    print(f"wrote example {preset.example_id} (N={n}, T={t_len}, K={k}) to {out}")
    return 0


# ---------------------------------------------------------------------------
# fit / backtest


def _default_adjacency(data: Path) -> Path:
    for name in ("adjacency.txt", "adjacency.csv"):
        if (data / name).is_file():
            return data / name
    raise ValidationError(f"no adjacency file given and none found in {data}")


def _truth(data: Path) -> dict:
    path = data / "truth.json"
    return cio.read_json(path) if path.is_file() else {}


def _load_inputs(cfg: dict):
    data = cfg["data"]
    if not (data / "y.csv").is_file():
        raise ValidationError(f"response file {data / 'y.csv'} not found")
    truth = _truth(data)
    p = cfg["p"] if cfg["p"] is not None else truth.get("p")
    k = cfg["k"] if cfg["k"] is not None else truth.get("k")
    if k is None:
        raise ValidationError("number of communities unknown: pass --k")
    _positive({"k": k}, "k")
    panel = cio.read_panel(data, p)
    if panel.t_len < 2:
        raise ValidationError("panel needs at least two periods")
    adj_path = cfg["adjacency"] or _default_adjacency(data)
    a = cio.read_adjacency(adj_path, panel.n)
    return panel, a, k, adj_path


def cmd_fit(cfg: dict) -> int:
    _positive(cfg, "factors")
    panel, a, k, adj_path = _load_inputs(cfg)
    if cfg["membership"] is not None:
        labels = cio.read_membership(cfg["membership"])
        if labels.size != panel.n or labels.max() >= k:
            raise ValidationError(f"{cfg['membership']}: expected {panel.n} labels in [0, {k})")
        theta = np.zeros((panel.n, k))
        theta[np.arange(panel.n), labels] = 1.0
        u = membership_basis(theta)
        basis = "membership"
    else:
        u = spectral_embed(a, k).u_hat
        basis = "spectral"
    if cfg["step"] == 2 and not 1 <= cfg["factors"] < min(panel.t_len - 1, panel.n):
        raise ValidationError(f"factors must lie in [1, min(T-1, N)), got {cfg['factors']}")

    fit = fit_first_step(panel, u)
    cov = None
    if cfg["step"] == 2:
        cov = fit_poet(fit.residuals, cfg["factors"])
        fit = fit_second_step(panel, u, cov)
    provenance = {
        "data": str(cfg["data"]),
        "adjacency": str(adj_path),
        "basis": basis,
        "factors": cfg["factors"] if cfg["step"] == 2 else None,
        "seed": cfg["seed"] if cfg["seed"] is not None else _truth(cfg["data"]).get("seed"),
    }
    out = cfg["out"]
    cio.write_json(out / "fit.json", cio.fit_to_dict(fit, provenance))
    if cov is not None:
        cio.write_json(out / "errcov.json", cio.errcov_to_dict(cov))
    print(f"step-{fit.step} fit: beta2={fit.params.beta2:.6f}, gamma={np.round(fit.params.gamma, 6).tolist()}")
    return 0


def cmd_backtest(cfg: dict) -> int:
    _positive(cfg, "t_train", "t_test", "stride", "factors", "workers")
    rolling = RollingConfig(cfg["t_train"], cfg["t_test"], cfg["stride"])
    panel, a, k, _ = _load_inputs(cfg)
    windows = backtest_windows(panel.t_len, rolling)
    u = spectral_embed(a, k).u_hat
    rows = rolling_backtest(panel, u, rolling, cfg["method"], cfg["factors"],
                            a_tilde=row_normalize(a), workers=cfg["workers"])
    cio.atomic_write(cfg["out"] / "report.csv", backtest_to_csv(rows))
    for meth in sorted({r.method for r in rows}):
        vals = np.array([r.remspe for r in rows if r.method == meth])
        print(f"{meth:<6} windows={len(windows)} median ReMSPE={np.nanmedian(vals):.4f}")
    return 0


# ---------------------------------------------------------------------------
# benchmark


def list_presets() -> str:
    return "".join(
        f"{p.example_id}  {p.name:<15} {p.description} [N={p.n}, T={p.t}, K={p.k}]\n"
        for p in PRESETS.values()
    )


def cmd_benchmark(cfg: dict) -> int:
    if cfg["list"]:
        sys.stdout.write(list_presets())
        return 0
    if cfg["example"] not in PRESETS:
        raise ValidationError(f"unknown example id {cfg['example']}; choose from {sorted(PRESETS)}")
    _positive(cfg, "reps", "workers", "factors")
    grid = {"n": cfg["n"], "t": cfg["t"], "k": cfg["k"]}
    report = run_benchmark(cfg["example"], grid, cfg["reps"], cfg["seed"], workers=cfg["workers"],
                           m=cfg["factors"], loadings_seed=cfg["loadings_seed"])
    cio.atomic_write(cfg["out"] / "mc_report.csv", report.to_csv())
    cio.atomic_write(cfg["out"] / "summary.json", report.summary_json())
    sys.stdout.write(report.table())
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "backtest": cmd_backtest,
    "benchmark": cmd_benchmark,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(args.command, args)
        return COMMANDS[args.command](cfg)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (EstimationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - report any other failure as a runtime error
        logger.debug("unexpected failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
