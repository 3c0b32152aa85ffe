"""Experiment configuration and seeded trial execution."""
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .diagnostics import average_traces, instrumented_run, orthogonality_report
from .ensembles import (
    EnsembleSpec,
    SpectralDensity,
    build_measurement,
    limiting_spectrum,
    sample_noise,
)
from .ep_core import run_ep
from .exceptions import ConfigValidationError, EpselError, NumericalFailureError
from .priors import PriorSpec, sample_signal
from .state_evolution import predict_error_covariance, se_fixed_points, se_recursion

logger = logging.getLogger(__name__)

MODES = ("simulate", "se", "compare", "sweep", "diagnose")
FORMATS = ("csv", "json", "svg")
SWEEP_AXES = ("delta", "sigma2")


@dataclass
class ExperimentConfig:
    """Validated experiment description.

    Build it with :meth:`from_dict` / :meth:`from_json`; those collect every
    problem into a single :class:`ConfigValidationError`.
    """

    mode: str = "simulate"
    N: int = 1024
    delta: float = 0.5
    sigma2: float = 0.01
    ensemble: EnsembleSpec = field(default_factory=EnsembleSpec)
    prior: PriorSpec = field(default_factory=PriorSpec)
    T: int = 10
    trials: int = 10
    base_seed: int = 0
    tolerances: dict = field(default_factory=lambda: {"tol_scale": 5.0, "rel_tol": 0.05})
    output_dir: str = "results"
    formats: tuple = ("csv", "json")
    sweep: dict = None
    cov_samples: int = 1_000_000

    @property
    def M(self):
        return int(round(self.delta * self.N))

    @property
    def delta_realized(self):
        return self.M / self.N

    @classmethod
    def from_dict(cls, raw):
        if not isinstance(raw, dict):
            raise ConfigValidationError([("<root>", "config must be a JSON object")])
        errors = []
        known = set(cls.__dataclass_fields__) | {"M", "delta_realized"}
        for key in raw:
            if key not in known:
                errors.append((key, "unknown field"))
        kw = {}

        def get(name, conv, check, msg):
            if name not in raw:
                return
            val = raw[name]
            try:
                val = conv(val)
            except (TypeError, ValueError):
                errors.append((name, f"cannot interpret {raw[name]!r}"))
                return
            if not check(val):
                errors.append((name, msg))
                return
            kw[name] = val

        def as_int(v):
            if isinstance(v, bool) or (isinstance(v, float) and not v.is_integer()):
                raise ValueError
            return int(v)

        def finite(v):
            return math.isfinite(v)

        get("mode", str, lambda v: v in MODES, f"must be one of {MODES}")
        get("N", as_int, lambda v: v >= 1, "must be >= 1")
        get("delta", float, lambda v: finite(v) and 0 < v <= 1, "must satisfy 0 < delta <= 1")
        get("sigma2", float, lambda v: finite(v) and v > 0, "must be > 0")
        get("T", as_int, lambda v: v >= 1, "must be >= 1")
        get("trials", as_int, lambda v: v >= 1, "must be >= 1")
        get("base_seed", as_int, lambda v: v >= 0, "must be >= 0")
        get("output_dir", str, lambda v: len(v) > 0, "must be a nonempty path")
        get("cov_samples", as_int, lambda v: v >= 100_000, "must be >= 100000")
        if "formats" in raw:
            fm = raw["formats"]
            if not isinstance(fm, list) or any(f not in FORMATS for f in fm):
                errors.append(("formats", f"must be a list drawn from {FORMATS}"))
            else:
                kw["formats"] = tuple(dict.fromkeys(fm))
        if "ensemble" in raw:
            try:
                kw["ensemble"] = EnsembleSpec.coerce(raw["ensemble"])
            except EpselError as exc:
                errors.append(("ensemble", str(exc)))
        if "prior" in raw:
            p = raw["prior"]
            try:
                if not isinstance(p, dict):
                    raise ValueError("must be an object with rho_s and active_var")
                kw["prior"] = PriorSpec(p.get("rho_s", 0.1), p.get("active_var"))
            except (EpselError, ValueError, TypeError) as exc:
                errors.append(("prior", str(exc)))
        if "tolerances" in raw:
            tol = raw["tolerances"]
            if (not isinstance(tol, dict)
                    or any(k not in ("tol_scale", "rel_tol") for k in tol)
                    or any(not isinstance(v, (int, float)) or v <= 0 for v in tol.values())):
                errors.append(("tolerances", "expected positive tol_scale / rel_tol"))
            else:
                kw["tolerances"] = {"tol_scale": 5.0, "rel_tol": 0.05,
                                    **{k: float(v) for k, v in tol.items()}}
        if raw.get("sweep") is not None:
            sw = raw["sweep"]
            if not isinstance(sw, dict) or sw.get("axis") not in SWEEP_AXES:
                errors.append(("sweep", f"needs axis in {SWEEP_AXES} and a values list"))
            else:
                vals = sw.get("values")
                if not isinstance(vals, list) or not vals:
                    errors.append(("sweep.values", "must be a nonempty list"))
                elif any(not isinstance(v, (int, float)) or not math.isfinite(v) or v <= 0
                         for v in vals):
                    errors.append(("sweep.values", "entries must be finite and > 0"))
                elif any(b <= a for a, b in zip(vals, vals[1:])):
                    errors.append(("sweep.values", "must be strictly increasing"))
                elif sw["axis"] == "delta" and vals[-1] > 1:
                    errors.append(("sweep.values", "delta values must lie in (0, 1]"))
                else:
                    kw["sweep"] = {"axis": sw["axis"], "values": [float(v) for v in vals]}
        mode = kw.get("mode", cls.mode)
        if mode == "sweep" and "sweep" not in kw and not any(f.startswith("sweep") for f, _ in errors):
            errors.append(("sweep", "mode=sweep requires a sweep section"))
        if mode == "compare" and kw.get("trials", cls.trials) < 2:
            errors.append(("trials", "mode=compare needs at least 2 trials"))
        if not errors:
            cfg = cls(**kw)
            if cfg.M < 1:
                errors.append(("delta", f"round(delta * N) = {cfg.M}; need at least one row"))
            if "M" in raw and raw["M"] != cfg.M:
                errors.append(("M", f"inconsistent with round(delta * N) = {cfg.M}"))
            if cfg.ensemble.kind == "custom_spectrum" and len(cfg.ensemble.sv) != cfg.M:
                errors.append(("ensemble.sv", f"needs M = {cfg.M} singular values"))
        if errors:
            raise ConfigValidationError(errors)
        return cfg

    @classmethod
    def from_json(cls, text):
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigValidationError([("<root>", f"invalid JSON: {exc}")]) from None
        return cls.from_dict(raw)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())

    def to_dict(self):
        return {
            "mode": self.mode,
            "N": self.N,
            "delta": self.delta,
            "M": self.M,
            "delta_realized": self.delta_realized,
            "sigma2": self.sigma2,
            "ensemble": self.ensemble.to_dict(),
            "prior": self.prior.to_dict(),
            "T": self.T,
            "trials": self.trials,
            "base_seed": self.base_seed,
            "tolerances": dict(self.tolerances),
            "output_dir": self.output_dir,
            "formats": list(self.formats),
            "sweep": self.sweep,
            "cov_samples": self.cov_samples,
        }

    def to_json(self):
        """Canonical serialization (sorted keys, two-space indent)."""
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def replace(self, **overrides):
        d = self.to_dict()
        d.update({k: v for k, v in overrides.items() if v is not None})
        d.pop("M")
        d.pop("delta_realized")
        return type(self).from_dict(d)

    def limiting_spectrum(self, delta=None):
        delta = self.delta_realized if delta is None else delta
        if self.ensemble.kind == "custom_spectrum":
            sv = np.asarray(self.ensemble.sv)
            return SpectralDensity.empirical(sv**2 * (len(sv) / delta) / np.sum(sv**2), delta)
        return limiting_spectrum(self.ensemble, delta)


@dataclass
class TrialResult:
    index: int
    seed: int
    rows: list
    failed: bool = False
    error: str = ""
    failed_iteration: int = None


@dataclass
class ResultSet:
    config: dict
    trials: list = field(default_factory=list)
    aggregate: list = field(default_factory=list)
    se: list = None
    comparison: list = None
    threshold: dict = None
    diagnostics: dict = None
    meta: dict = field(default_factory=dict)

    @property
    def mode(self):
        return self.config["mode"]

    @property
    def n_failed(self):
        return sum(t.failed for t in self.trials)

    def to_dict(self):
        return {
            "config": self.config,
            "trials": [t.__dict__ for t in self.trials],
            "aggregate": self.aggregate,
            "se": self.se,
            "comparison": self.comparison,
            "threshold": self.threshold,
            "diagnostics": self.diagnostics,
            "meta": self.meta,
        }


def trial_data(cfg, index):
    """Model, signal and noise of trial ``index`` (seed ``base_seed + index``)."""
    seed = cfg.base_seed + index
    model_seed, x_seed, w_seed = np.random.SeedSequence(seed).spawn(3)
    model = build_measurement(cfg.ensemble, cfg.M, cfg.N, cfg.sigma2, model_seed)
    x = sample_signal(cfg.prior, cfg.N, x_seed)
    w = sample_noise(cfg.M, cfg.sigma2, w_seed)
    return model, x, w


def _simulate_trial(cfg, index):
    seed = cfg.base_seed + index
    try:
        model, x, w = trial_data(cfg, index)
        # fixed length: every trial contributes a row to every iteration
        traj = run_ep(model, cfg.prior, model.apply(x) + w, x_true=x, T=cfg.T, early_stop_tol=0)
    except NumericalFailureError as exc:
        logger.warning("trial %d (seed %d) failed: %s", index, seed, exc)
        return TrialResult(index, seed, [], True, str(exc), exc.iteration)
    rows = [{k: (float(v) if k != "iter" else v) for k, v in r.items()} for r in traj.as_rows()]
    return TrialResult(index, seed, rows)


def aggregate_rows(trials, T):
    """Per-iteration mean / std of ``mse_emp`` over successful trials."""
    out = []
    for t in range(T):
        vals = np.array([tr.rows[t]["mse_emp"] for tr in trials
                         if not tr.failed and len(tr.rows) > t])
        out.append({
            "iter": t,
            "n": int(vals.size),
            "mse_mean": float(vals.mean()) if vals.size else float("nan"),
            "mse_std": float(vals.std(ddof=1)) if vals.size > 1 else 0.0,
        })
    return out


def _workers(n_tasks):
    env = os.environ.get("EPSEL_THREADS")
    cap = os.cpu_count() or 1
    if env:
        try:
            cap = max(1, int(env))
        except ValueError:
            logger.warning("ignoring non-integer EPSEL_THREADS=%r", env)
    return max(1, min(cap, n_tasks))


def _map_trials(fn, cfg, n):
    workers = _workers(n)
    if workers == 1:
        return [fn(cfg, i) for i in range(n)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        # map preserves submission order, so the reduction order is fixed
        return list(pool.map(fn, [cfg] * n, range(n)))


def compare_rows(aggregate, se):
    rows = []
    for agg, pred in zip(aggregate, se.predicted_mse):
        rows.append({
            "iter": agg["iter"],
            "mc_mean": agg["mse_mean"],
            "mc_std": agg["mse_std"],
            "se_pred": float(pred),
            "rel_dev": float(abs(agg["mse_mean"] - pred) / pred),
        })
    return rows


def compare_se_mc(cfg):
    """MC-vs-state-evolution table (one row per iteration)."""
    if cfg.trials < 2:
        raise ConfigValidationError([("trials", "comparison needs at least 2 trials")])
    return run_experiment(cfg.replace(mode="compare")).comparison


@dataclass
class ThresholdReport:
    axis: str
    rows: list
    threshold: float
    crossover: bool

    def to_dict(self):
        return {"axis": self.axis, "rows": self.rows, "threshold": self.threshold,
                "crossover": self.crossover}


def sweep_threshold(cfg):
    """Fixed-point census along the sweep axis.

    The threshold estimate is the smallest axis value from which every
    larger grid value has a unique fixed point.  ``crossover`` is set when
    the grid value just below it has several fixed points, i.e. a genuine
    transition was bracketed.
    """
    sw = cfg.sweep
    if not sw or not sw.get("values"):
        raise ConfigValidationError([("sweep", "empty sweep list")])
    rows = []
    for val in sw["values"]:
        if sw["axis"] == "delta":
            spectrum, s2 = cfg.limiting_spectrum(val), cfg.sigma2
        else:
            spectrum, s2 = cfg.limiting_spectrum(), val
        rep = se_fixed_points(cfg.prior, spectrum, s2)
        rows.append({
            "value": val,
            "fp_count": rep.count,
            "attractor_mse": rep.attractor.mse,
            "unique": rep.unique,
            "fixed_points": [fp.v_ba for fp in rep.points],
            "note": rep.note,
        })
    k = len(rows)
    while k > 0 and rows[k - 1]["unique"]:
        k -= 1
    if k == len(rows):
        threshold, crossover = None, False
    else:
        threshold = rows[k]["value"]
        crossover = k > 0 and rows[k - 1]["fp_count"] > 1
    return ThresholdReport(sw["axis"], rows, threshold, crossover)


def _diagnose_trial(cfg, index):
    seed = cfg.base_seed + index
    try:
        model, x, w = trial_data(cfg, index)
        return instrumented_run(model, cfg.prior, x, w, cfg.T, seed=seed)
    except NumericalFailureError as exc:
        logger.warning("trial %d (seed %d) failed: %s", index, seed, exc)
        return exc


def _diagnose(cfg, res):
    pred = predict_error_covariance(cfg.prior, cfg.limiting_spectrum(), cfg.sigma2, cfg.T,
                                    samples=cfg.cov_samples, seed=cfg.base_seed)
    tol = cfg.tolerances
    outcomes = _map_trials(_diagnose_trial, cfg, cfg.trials)
    traces = [o for o in outcomes if not isinstance(o, Exception)]
    reports = []
    for i, o in enumerate(outcomes):
        seed = cfg.base_seed + i
        if isinstance(o, Exception):
            res.trials.append(TrialResult(i, seed, [], True, str(o), o.iteration))
            continue
        rows = [{"iter": t, "mse_emp": float(o.mse[t]), "v_ab": float(o.v_ab[t]),
                 "v_ba": float(o.v_ba[t]), "gamma": float(o.gamma[t])} for t in range(o.T)]
        res.trials.append(TrialResult(i, seed, rows))
        rep = orthogonality_report(o, pred, tol["tol_scale"], tol["rel_tol"])
        reports.append({"seed": seed, **rep.to_dict()})
    averaged = None
    if traces:
        averaged = orthogonality_report(average_traces(traces), pred, tol["tol_scale"],
                                        tol["rel_tol"]).to_dict()
    res.diagnostics = {
        "per_seed": reports,
        "seed_average": averaged,
        "zeta": [[[z.real, z.imag] for z in row] for row in pred.zeta],
        "m_cov": [[[z.real, z.imag] for z in row] for row in pred.m_cov],
    }


def run_experiment(cfg, clock=time.time):
    """Execute ``cfg``; ``clock`` supplies wall-clock readings (injectable)."""
    if not isinstance(cfg, ExperimentConfig):
        cfg = ExperimentConfig.from_dict(cfg)
    started = clock()
    res = ResultSet(cfg.to_dict())
    mode = cfg.mode
    if mode in ("se", "compare"):
        se = se_recursion(cfg.prior, cfg.limiting_spectrum(), cfg.sigma2, cfg.T)
        res.se = se.as_rows()
    if mode in ("simulate", "compare"):
        res.trials = _map_trials(_simulate_trial, cfg, cfg.trials)
        res.aggregate = aggregate_rows(res.trials, cfg.T)
    if mode == "compare":
        res.comparison = compare_rows(res.aggregate, se)
    elif mode == "sweep":
        res.threshold = sweep_threshold(cfg).to_dict()
    elif mode == "diagnose":
        _diagnose(cfg, res)
        res.aggregate = aggregate_rows(res.trials, cfg.T)
    finished = clock()
    res.meta = {"started": started, "elapsed_s": finished - started,
                "n_failed": res.n_failed, "n_trials": len(res.trials)}
    if res.trials and res.n_failed == len(res.trials):
        logger.error("all %d trials failed", res.n_failed)
    return res
