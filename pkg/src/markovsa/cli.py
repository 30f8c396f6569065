"""Declarative experiment runner.

    markovsa --config run.json [--out-dir ./out] [--threads K] [--seed N]

Writes summary.json, trajectory.csv and (for tail runs) tails.csv.  Exit code
0 means every comparison passed, 2 that some comparison failed, 1 an
execution error (also recorded in summary.json).
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import traceback
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from . import chain as chain_mod
from .chain import FiniteChain, QueueChain, ergodicity_check, mm1_stationary_mean
from .covtheory import (eigen_report, lyapunov_residual, optimal_scalar_gain, predict,
                        predicted_covariance)
from .engine import (LinearSAProblem, TDProblem, random_linear_problem, run_snr_lstd, run_td0,
                     run_td0_error_form, td_matrices)
from .errors import ConfigError
from .harness import (EnsembleSpec, compare_to_oracle, compare_to_theory, coupling_experiment,
                      fit_rate, linear_sa_experiment, mcmc_experiment, run_ensemble,
                      tail_report)
from .oracle import geometric_checkpoints, propagate_coupled, propagate_linear, propagate_random_linear
from .poisson import noise_stats, sigma_delta_sum

log = logging.getLogger("markovsa")

KINDS = ("theory", "simulate", "oracle", "compare", "couple", "td", "tails")
NEEDS_SEED = {"simulate", "compare", "couple", "tails"}

_matrix = {"type": "array", "items": {"type": "array", "items": {"type": "number"}}}
_vector = {"type": "array", "items": {"type": "number"}}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["experiment", "chain"],
    "properties": {
        "experiment": {"enum": list(KINDS)},
        "chain": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "transition": _matrix,
                "mm1": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["arrival_prob"],
                    "properties": {
                        "arrival_prob": {"type": "number"},
                        "truncation": {"type": "integer", "minimum": 1},
                    },
                },
            },
            "oneOf": [{"required": ["transition"]}, {"required": ["mm1"]}],
        },
        "noise": {
            "oneOf": [
                _vector,
                _matrix,
                {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["poly"],
                    "properties": {"poly": _vector},
                },
            ]
        },
        "A": {"oneOf": [{"type": "number"}, _matrix]},
        "random_matrix": {
            "type": "object",
            "additionalProperties": False,
            "required": ["Amap", "bmap"],
            "properties": {
                "Amap": {"type": "array"},
                "bmap": {"oneOf": [_vector, _matrix]},
            },
        },
        "td": {
            "type": "object",
            "additionalProperties": False,
            "required": ["cost", "discount", "basis"],
            "properties": {
                "cost": _vector,
                "discount": {"type": "number"},
                "basis": {"oneOf": [_vector, _matrix]},
                "snr_gain": {"type": "number", "exclusiveMinimum": 0},
                "ridge": {"type": "number", "minimum": 0},
            },
        },
        "gain": {"type": "number", "exclusiveMinimum": 0},
        "theta0": _vector,
        "initial": {"oneOf": [{"const": "stationary"}, {"type": "integer", "minimum": 0}]},
        "horizon": {"type": "integer", "minimum": 1},
        "checkpoints": {
            "oneOf": [
                {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
                {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "ratio": {"type": "number", "exclusiveMinimum": 1},
                        "start": {"type": "integer", "minimum": 1},
                    },
                },
            ]
        },
        "trials": {"type": "integer", "minimum": 2},
        "master_seed": {"type": "integer", "minimum": 0, "maximum": 2 ** 64 - 1},
        "output_dir": {"type": "string"},
        "block_size": {"type": "integer", "minimum": 1},
        "eps_grid_sd": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0},
                        "minItems": 1},
        "fit_window": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0},
                       "minItems": 2, "maxItems": 2},
        "coupling_rho": {"type": "number", "exclusiveMinimum": 0},
        "tolerances": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "z_max": {"type": "number", "exclusiveMinimum": 0},
                "rel_tol": {"type": "number", "exclusiveMinimum": 0},
                "rate_tol": {"type": "number", "exclusiveMinimum": 0},
                "sigma_v_tol": {"type": "number", "exclusiveMinimum": 0},
                "identity_tol": {"type": "number", "exclusiveMinimum": 0},
                "residual_tol": {"type": "number", "exclusiveMinimum": 0},
            },
        },
    },
}

DEFAULT_TOLERANCES = {
    "z_max": 4.0,
    "rel_tol": 0.05,
    "rate_tol": 0.1,
    "sigma_v_tol": 1e-8,
    "identity_tol": 1e-10,
    "residual_tol": 1e-10,
}


@dataclass
class ExperimentConfig:
    kind: str
    model: FiniteChain | QueueChain
    noise: object = None              # (S, d) array, or callable for the queue
    noise_poly: list | None = None
    A: np.ndarray | None = None
    random_matrix: dict | None = None
    td: dict | None = None
    gain: float = 1.0
    theta0: np.ndarray | None = None
    initial: object = "stationary"
    horizon: int = 10_000
    checkpoints: np.ndarray = None
    trials: int = 1000
    master_seed: int | None = None
    output_dir: str | None = None
    block_size: int = 500
    eps_grid_sd: list = field(default_factory=lambda: [1.5, 2.0, 2.5, 3.0, 3.5])
    fit_window: tuple | None = None
    coupling_rho: float | None = None
    tolerances: dict = field(default_factory=lambda: dict(DEFAULT_TOLERANCES))
    raw: dict = field(default_factory=dict)

    @property
    def config_hash(self) -> str:
        canon = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    @property
    def is_queue(self) -> bool:
        return isinstance(self.model, QueueChain)


def _schema_error_path(err) -> str:
    return "/".join(str(p) for p in err.absolute_path) or "<root>"


def parse_config(text: str, seed_override: int | None = None) -> ExperimentConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from exc
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        raise ConfigError(err.message, _schema_error_path(err))
    if seed_override is not None:
        raw = dict(raw, master_seed=int(seed_override))
    kind = raw["experiment"]
    if kind in NEEDS_SEED and "master_seed" not in raw:
        raise ConfigError(f"'{kind}' runs draw random paths and require master_seed "
                          "(no implicit randomness)", "master_seed")

    ch = raw["chain"]
    if "transition" in ch:
        try:
            model = FiniteChain(np.array(ch["transition"], dtype=float))
        except ValueError as exc:
            raise ConfigError(str(exc), "chain/transition") from exc
    else:
        mm1 = ch["mm1"]
        try:
            model = QueueChain(mm1["arrival_prob"], mm1.get("truncation", 200))
        except ValueError as exc:
            raise ConfigError(str(exc), "chain/mm1") from exc

    cfg = ExperimentConfig(kind=kind, model=model, raw=raw)
    cfg.tolerances.update(raw.get("tolerances", {}))
    for key in ("gain", "horizon", "trials", "master_seed", "output_dir", "block_size",
                "coupling_rho", "eps_grid_sd"):
        if key in raw:
            setattr(cfg, key, raw[key])
    if "initial" in raw:
        cfg.initial = raw["initial"]
    if "fit_window" in raw:
        cfg.fit_window = tuple(raw["fit_window"])

    S = None if cfg.is_queue else model.num_states
    noise = raw.get("noise")
    if isinstance(noise, dict):
        if not cfg.is_queue:
            raise ConfigError("polynomial noise is only defined for the mm1 chain", "noise")
        cfg.noise_poly = list(noise["poly"])
    elif noise is not None:
        if cfg.is_queue:
            raise ConfigError("mm1 noise must be given as {'poly': [...]}", "noise")
        F = np.array(noise, dtype=float)
        F = F[:, None] if F.ndim == 1 else F
        if F.shape[0] != S:
            raise ConfigError(f"noise has {F.shape[0]} rows but the chain has {S} states", "noise")
        cfg.noise = F
    if "A" in raw:
        cfg.A = np.atleast_2d(np.array(raw["A"], dtype=float))
        if cfg.A.shape[0] != cfg.A.shape[1]:
            raise ConfigError(f"A must be square, got {cfg.A.shape}", "A")
    if "theta0" in raw:
        cfg.theta0 = np.array(raw["theta0"], dtype=float)
    if "random_matrix" in raw:
        cfg.random_matrix = raw["random_matrix"]
    if "td" in raw:
        cfg.td = raw["td"]

    d = _dimension(cfg)
    if cfg.A is not None and cfg.noise is not None and cfg.A.shape[0] != cfg.noise.shape[1]:
        raise ConfigError(f"A is {cfg.A.shape[0]}x{cfg.A.shape[0]} but noise has dimension "
                          f"{cfg.noise.shape[1]}", "A")
    if cfg.theta0 is not None and d is not None and cfg.theta0.shape != (d,):
        raise ConfigError(f"theta0 must have length {d}", "theta0")
    if cfg.initial != "stationary" and S is not None and cfg.initial >= S:
        raise ConfigError(f"initial state {cfg.initial} out of range", "initial")
    _check_required(cfg)

    cps = raw.get("checkpoints")
    if isinstance(cps, list):
        arr = np.array(sorted(set(cps)), dtype=np.int64)
        if arr[-1] > cfg.horizon:
            raise ConfigError(f"checkpoint {arr[-1]} exceeds horizon {cfg.horizon}", "checkpoints")
        cfg.checkpoints = arr
    else:
        opts = cps or {}
        cfg.checkpoints = geometric_checkpoints(cfg.horizon, opts.get("ratio", 2 ** 0.25),
                                                opts.get("start", 1))
    return cfg


def _dimension(cfg):
    if cfg.noise is not None:
        return cfg.noise.shape[1]
    if cfg.A is not None:
        return cfg.A.shape[0]
    if cfg.random_matrix is not None:
        return np.atleast_2d(np.array(cfg.random_matrix["bmap"], dtype=float).T).shape[0]
    return None


def _check_required(cfg):
    k = cfg.kind
    if k in ("theory", "simulate", "oracle", "compare"):
        if cfg.noise is None and cfg.noise_poly is None:
            raise ConfigError(f"'{k}' runs need a noise function", "noise")
        if cfg.A is None and not cfg.is_queue:
            raise ConfigError(f"'{k}' runs need A", "A")
    if k in ("oracle", "compare") and cfg.is_queue:
        raise ConfigError("exact moments are only available for finite chains", "chain")
    if k == "couple":
        if cfg.random_matrix is None:
            raise ConfigError("'couple' runs need random_matrix", "random_matrix")
        if cfg.is_queue:
            raise ConfigError("coupling runs need a finite chain", "chain")
    if k == "td":
        if cfg.td is None:
            raise ConfigError("'td' runs need a td block", "td")
        if cfg.is_queue:
            raise ConfigError("TD runs need a finite chain", "chain")
    if k == "tails" and cfg.noise is None and cfg.noise_poly is None:
        raise ConfigError("'tails' runs need a noise function", "noise")


# ------------------------------------------------------------ output


def _fmt(x) -> str:
    return format(float(x), ".17g")


class TrajectoryWriter:
    HEADER = ["n", "source", "stat", "row", "col", "value"]

    def __init__(self):
        self.rows = []

    def matrix(self, n, source, stat, M):
        M = np.atleast_2d(M)
        for i in range(M.shape[0]):
            for j in range(M.shape[1]):
                self.rows.append([int(n), source, stat, i, j, _fmt(M[i, j])])

    def vector(self, n, source, stat, v):
        for i, x in enumerate(np.atleast_1d(v)):
            self.rows.append([int(n), source, stat, i, 0, _fmt(x)])

    def scalar(self, n, source, stat, x):
        self.rows.append([int(n), source, stat, 0, 0, _fmt(x)])

    def write(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.HEADER)
            w.writerows(self.rows)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        if np.iscomplexobj(x):
            return {"real": _jsonable(x.real), "imag": _jsonable(x.imag)}
        return _jsonable(x.tolist())
    if isinstance(x, complex):
        return {"real": x.real, "imag": x.imag}
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if np.isfinite(x) else str(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


# ------------------------------------------------------------ dispatch


def _noise_on(cfg, levels):
    """Queue noise F(z) = sum_k poly[k] z^k as an (L, 1) array."""
    z = np.asarray(levels, dtype=float)
    return np.polynomial.polynomial.polyval(z, cfg.noise_poly)[..., None]


def _analysis_chain_and_noise(cfg):
    if cfg.is_queue:
        N = cfg.model.analysis_truncation
        return cfg.model.truncated(N), _noise_on(cfg, np.arange(N + 1))
    return cfg.model, cfg.noise


def _queue_theta_star(cfg):
    q = cfg.model
    if cfg.noise_poly == [0, 1] or cfg.noise_poly == [0.0, 1.0]:
        return np.array([mm1_stationary_mean(q)])
    N = q.analysis_truncation
    levels = np.arange(N + 1)
    w = chain_mod.mm1_stationary(q, levels)
    return (w / w.sum()) @ _noise_on(cfg, levels)


def _A_for(cfg):
    if cfg.A is not None:
        return cfg.A
    return -np.eye(1)        # the queue runs are MCMC averages: A = -I


def _theory(cfg, summary, writer):
    ch, F = _analysis_chain_and_noise(cfg)
    A = _A_for(cfg)
    tol = cfg.tolerances
    erg = ergodicity_check(ch)
    stats = noise_stats(ch, F)
    pred = predict(A, stats, cfg.gain)
    eig = eigen_report(cfg.gain * A, cfg.gain ** 2 * stats.sigma_delta, tol["sigma_v_tol"])
    checks = {}
    theory = {
        "stationary": stats.pi,
        "ergodicity": {"irreducible": erg.irreducible, "aperiodic": erg.aperiodic,
                       "second_eigenvalue_modulus": erg.second_eigenvalue_modulus},
        "sigma_delta": stats.sigma_delta,
        "sigma_z": stats.sigma_z,
        "cross_m_mhat": stats.cross_m_mhat,
        "cross_m_zhat": stats.cross_m_zhat,
        "poisson_residuals": [stats.first.residual_norm, stats.second.residual_norm],
        "eigen": {"eigenvalues": eig.eigenvalues, "rho0": eig.rho0,
                  "leading_left_eigenvector": eig.leading_left_eigenvector,
                  "half_condition": eig.half_condition, "one_condition": eig.one_condition,
                  "sigma_v_nonzero": eig.sigma_v_nonzero},
        "gain": cfg.gain,
        "rate_exponent": pred.rate_exponent,
        "sigma_theta": pred.sigma_theta,
        "sigma_theta_2": pred.sigma_theta_2,
    }
    # residuals relative to the size of each right-hand side
    rel = [sol.residual_norm / max(1.0, float(np.abs(rhs).max()))
           for sol, rhs in ((stats.first, F), (stats.second, stats.first.fhat))]
    checks["poisson_residual"] = max(rel) <= tol["residual_tol"]
    I = np.eye(A.shape[0])
    if pred.sigma_theta is not None:
        M = 0.5 * I + cfg.gain * A
        res = lyapunov_residual(M, pred.sigma_theta, cfg.gain ** 2 * stats.sigma_delta)
        theory["lyapunov_residual"] = res
        checks["lyapunov_residual"] = res <= tol["residual_tol"] * max(1.0, np.linalg.norm(stats.sigma_delta) * cfg.gain ** 2)
    try:
        g_star, val = optimal_scalar_gain(A, stats.sigma_delta, np.geomspace(0.05, 50, 200) / max(eig.rho0 / cfg.gain, 1e-12))
        theory["optimal_scalar_gain"] = {"g": g_star, "trace": val}
    except ValueError as exc:
        theory["optimal_scalar_gain"] = {"error": str(exc)}
    if not cfg.is_queue:
        lam2 = erg.second_eigenvalue_modulus
        K = int(min(10_000, max(50, np.ceil(np.log(1e-16) / np.log(max(lam2, 1e-3))))))
        sds = sigma_delta_sum(ch, F, K)
        theory["sigma_delta_autocov_sum"] = {"lag_cut": K, "value": sds}
        checks["sigma_delta_agreement"] = bool(
            np.abs(sds - stats.sigma_delta).max() <= 1e-8 * max(1.0, np.abs(stats.sigma_delta).max()))
    summary["theory"] = theory
    for n in cfg.checkpoints:
        if n < 1:
            continue
        if pred.sigma_theta is not None:
            C = predicted_covariance(pred, int(n))
            writer.matrix(n, "theory", "cov", C)
            writer.scalar(n, "theory", "trace_cov", np.trace(C))
    return pred, stats, checks


def _initial(cfg):
    return None if cfg.initial == "stationary" else int(cfg.initial)


def _centered_problem(cfg, stats):
    F = cfg.noise - stats.pi @ cfg.noise
    return LinearSAProblem(cfg.A, F, cfg.gain, cfg.theta0)


def _write_oracle(writer, res):
    for k, n in enumerate(res.checkpoints):
        writer.vector(n, "oracle", "mean", res.mean[k])
        writer.matrix(n, "oracle", "cov", res.cov[k])
        writer.scalar(n, "oracle", "trace_cov", np.trace(res.cov[k]))


def _write_empirical(writer, emp):
    for k, n in enumerate(emp.checkpoints):
        writer.vector(n, "empirical", "mean", emp.mean[k])
        writer.matrix(n, "empirical", "cov", emp.cov[k])
        writer.scalar(n, "empirical", "trace_cov", emp.trace_cov[k])


def _oracle_checks(cfg, pred, res, checks, summary):
    tol = cfg.tolerances
    n = int(res.checkpoints[-1])
    out = {"n": n}
    if pred.sigma_theta is not None and n >= 1:
        lead = n * np.trace(res.cov[-1])
        target = np.trace(pred.sigma_theta)
        out["n_trace_cov"] = lead
        out["trace_sigma_theta"] = target
        checks["oracle_leading_order"] = abs(lead - target) <= tol["rel_tol"] * abs(target)
        if pred.sigma_theta_2 is not None:
            sec = n * n * (res.cov[-1] - pred.sigma_theta / n)
            out["second_order_estimate"] = sec
            scale = max(np.abs(pred.sigma_theta_2).max(), 1e-12)
            checks["oracle_second_order"] = bool(
                np.abs(sec - pred.sigma_theta_2).max() <= tol["rel_tol"] * scale)
    elif pred.sigma_theta is None:
        v = pred.eigen.leading_left_eigenvector
        vals = res.projected(v)
        window = cfg.fit_window or (n / 100.0, n)
        fit = fit_rate(res.checkpoints, vals, window)
        out["projected_rate"] = fit.exponent
        out["predicted_rate"] = -pred.rate_exponent
        checks["oracle_degraded_rate"] = abs(fit.exponent + pred.rate_exponent) <= tol["rate_tol"]
    summary["oracle"] = out


def run_command(cfg: ExperimentConfig, out_dir, threads: int | None = None) -> int:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = {
        "experiment": cfg.kind,
        "config_hash": cfg.config_hash,
        "master_seed": cfg.master_seed,
    }
    writer = TrajectoryWriter()
    checks = {}
    try:
        code = _dispatch(cfg, summary, writer, checks, out, threads)
    except Exception as exc:  # serialized for the caller, exit code 1
        log.error("run failed: %s", exc)
        summary["error"] = {"type": type(exc).__name__, "message": str(exc),
                            "traceback": traceback.format_exc()}
        summary["checks"] = _jsonable(checks)
        summary["passed"] = False
        _dump(out / "summary.json", summary)
        writer.write(out / "trajectory.csv")
        return 1
    summary["checks"] = _jsonable(checks)
    summary["passed"] = code == 0
    _dump(out / "summary.json", summary)
    writer.write(out / "trajectory.csv")
    return code


def _dump(path, summary):
    with open(path, "w") as fh:
        json.dump(_jsonable(summary), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _dispatch(cfg, summary, writer, checks, out, threads):
    k = cfg.kind
    tol = cfg.tolerances
    if k == "td":
        _td(cfg, summary, writer, checks)
    elif k == "couple":
        _couple(cfg, summary, writer, checks, threads)
    else:
        pred, stats, theory_checks = _theory(cfg, summary, writer)
        checks.update(theory_checks)
        if k in ("oracle", "compare"):
            prob = _centered_problem(cfg, stats)
            res = propagate_linear(cfg.model, prob, cfg.horizon, cfg.checkpoints,
                                   init_dist=_initial(cfg))
            _write_oracle(writer, res)
            _oracle_checks(cfg, pred, res, checks, summary)
        if k in ("simulate", "compare"):
            emp = _simulate(cfg, stats, threads)
            _write_empirical(writer, emp)
            if k == "compare":
                cmp = compare_to_oracle(emp, res, tol["z_max"])
                checks["empirical_vs_oracle"] = cmp.passed
                summary["comparison"] = {"against": "oracle", "worst_z": cmp.worst,
                                         "z_max": cmp.z_max}
            elif pred.sigma_theta is not None:
                cmp = compare_to_theory(emp, pred, tol["z_max"])
                checks["empirical_vs_theory"] = cmp.passed
                summary["comparison"] = {"against": "theory", "worst_z": cmp.worst,
                                         "z_max": cmp.z_max}
        if k == "tails":
            _tails(cfg, summary, checks, out, threads)
    return 0 if all(bool(v) for v in checks.values()) else 2


def _ensemble_experiment(cfg, stats):
    if cfg.is_queue:
        theta_star = _queue_theta_star(cfg)
        poly = cfg.noise_poly
        F = lambda z: np.polynomial.polynomial.polyval(np.asarray(z, dtype=float), poly)
        init = None if cfg.initial == "stationary" else int(cfg.initial)
        return mcmc_experiment(cfg.model, F, theta_star, init)
    return linear_sa_experiment(cfg.model, _centered_problem(cfg, stats), _initial(cfg))


def _simulate(cfg, stats, threads, keep=False):
    spec = EnsembleSpec(cfg.trials, cfg.horizon, cfg.checkpoints, cfg.master_seed,
                        _ensemble_experiment(cfg, stats), cfg.block_size)
    return run_ensemble(spec, threads, keep_samples=keep)


def _tails(cfg, summary, checks, out, threads):
    emp = _simulate(cfg, None if cfg.is_queue else noise_stats(cfg.model, cfg.noise), threads,
                    keep=True)
    x = emp.samples[-1, :, 0]
    sd = float(x.std(ddof=1))
    rep = tail_report(x, np.asarray(cfg.eps_grid_sd) * sd)
    with open(out / "tails.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epsilon", "side", "count", "trials"])
        for e, lo, up in zip(rep.eps, rep.lower_exceed, rep.upper_exceed):
            w.writerow([_fmt(e), "lower", int(lo), rep.trials])
            w.writerow([_fmt(e), "upper", int(up), rep.trials])
    summary["tails"] = {"n": int(emp.checkpoints[-1]), "sample_sd": sd,
                        "eps": rep.eps, "lower": rep.lower_exceed, "upper": rep.upper_exceed,
                        "ratios": rep.ratios()}
    checks["upper_tail_heavier"] = rep.upper_heavier()


def _couple(cfg, summary, writer, checks, threads):
    rm = cfg.random_matrix
    prob = random_linear_problem(cfg.model, rm["Amap"], rm["bmap"], cfg.theta0, cfg.gain)
    eig = eigen_report(cfg.gain * prob.A)
    oracle_res, err2_exact = propagate_coupled(cfg.model, prob, cfg.horizon, cfg.checkpoints,
                                               init_dist=_initial(cfg))
    out = {"A": prob.A, "theta_star": prob.theta_star, "rho0": eig.rho0}
    for n, v in zip(cfg.checkpoints, err2_exact):
        writer.scalar(n, "oracle", "coupling_err", v)
    window = cfg.fit_window or (cfg.checkpoints[-1] / 10.0, cfg.checkpoints[-1])
    if cfg.master_seed is not None:
        spec = EnsembleSpec(cfg.trials, cfg.horizon, cfg.checkpoints, cfg.master_seed,
                            coupling_experiment(cfg.model, prob, _initial(cfg)), cfg.block_size)
        emp = run_ensemble(spec, threads)
        for n, v in zip(emp.checkpoints, emp.sq_norm):
            writer.scalar(n, "empirical", "coupling_err", v)
        sel = emp.checkpoints >= 1
        fit = fit_rate(emp.checkpoints[sel], emp.sq_norm[sel], window)
        out["empirical_rate"] = fit.exponent
    fit_exact = fit_rate(cfg.checkpoints[cfg.checkpoints >= 1],
                         err2_exact[cfg.checkpoints >= 1], window)
    out["oracle_rate"] = fit_exact.exponent
    slack = cfg.tolerances["rate_tol"]
    if eig.rho0 > 1:
        bound = -2.0
    else:
        rho = cfg.coupling_rho if cfg.coupling_rho is not None else eig.rho0
        if rho > eig.rho0:
            raise ConfigError("coupling_rho must not exceed rho0", "coupling_rho")
        bound = -2.0 * rho
    out["rate_bound"] = bound
    if "empirical_rate" in out:
        checks["coupling_rate_empirical"] = out["empirical_rate"] <= bound + slack
    checks["coupling_rate_oracle"] = fit_exact.exponent <= bound + slack
    summary["coupling"] = out


def _td(cfg, summary, writer, checks):
    td = cfg.td
    basis = np.array(td["basis"], dtype=float)
    problem = TDProblem(cfg.model, np.array(td["cost"], dtype=float), td["discount"], basis)
    mats = td_matrices(problem)
    eig = eigen_report(cfg.gain * mats.A)
    tol = cfg.tolerances
    seed = cfg.master_seed if cfg.master_seed is not None else 0
    init = chain_mod.stationary_dist(cfg.model) if cfg.initial == "stationary" else int(cfg.initial)
    sampler = chain_mod.ChainSampler(cfg.model, seed, init)
    x = chain_mod.sample_path(sampler, cfg.horizon)
    theta0 = cfg.theta0
    direct = run_td0(problem, x, cfg.checkpoints, theta0=theta0, gain=cfg.gain)
    err_form = run_td0_error_form(mats, x, cfg.checkpoints, theta0=theta0, gain=cfg.gain)
    gap = float(np.abs(direct.values - err_form.values).max())
    snr = run_snr_lstd(problem, x, cfg.checkpoints, ridge=td.get("ridge", 1e-8),
                       gain=td.get("snr_gain", cfg.gain), theta0=theta0)
    snr_gap = snr.equivalence_gap()
    checks["td_error_form"] = gap <= 1e-12 * max(1.0, np.abs(direct.values).max())
    if np.isfinite(snr_gap):
        checks["snr_equals_lstd"] = snr_gap <= tol["identity_tol"]
    # covariance theory on the pair chain, Delta = A_{n+1} theta* - b_{n+1}
    prob = mats.random_linear(None if theta0 is None else theta0 - mats.theta_star, cfg.gain)
    stats = noise_stats(mats.pair_chain, prob.noise)
    pred = predict(mats.A, stats, cfg.gain)
    res = propagate_random_linear(mats.pair_chain, prob, cfg.horizon, cfg.checkpoints)
    _write_oracle(writer, res)
    summary["td"] = {
        "A": mats.A, "b": mats.b, "theta_star": mats.theta_star,
        "eigen": {"eigenvalues": eig.eigenvalues, "rho0": eig.rho0,
                  "half_condition": eig.half_condition, "one_condition": eig.one_condition},
        "sigma_delta": stats.sigma_delta,
        "sigma_theta": pred.sigma_theta,
        "rate_exponent": pred.rate_exponent,
        "error_form_gap": gap,
        "snr_lstd_gap": snr_gap,
        "snr_ridged_steps": int(len(snr.ridged_steps)),
        "snr_clean_prefix": snr.first_clean_prefix,
        "final_theta": direct.absolute[-1],
    }


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="markovsa", description=__doc__.splitlines()[0])
    ap.add_argument("--config", required=True, help="JSON experiment config")
    ap.add_argument("--out-dir", default=None, help="output directory (default ./out)")
    ap.add_argument("--threads", type=int, default=None,
                    help="worker threads for ensembles; never changes any output bit")
    ap.add_argument("--seed", type=int, default=None, help="override master_seed")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        text = Path(args.config).read_text()
        cfg = parse_config(text, args.seed)
    except (OSError, ConfigError) as exc:
        print(f"markovsa: {exc}", file=sys.stderr)
        return 1
    out_dir = args.out_dir or cfg.output_dir or "./out"
    threads = args.threads or os.cpu_count() or 1
    return run_command(cfg, out_dir, threads)


if __name__ == "__main__":
    sys.exit(main())
