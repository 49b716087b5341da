"""Monte Carlo experiment campaigns: consistency curves, limit comparisons,
quadratic-variation rate checks, and crash-tolerant persistence.

Replication seeds are derived as hash64(base_seed, n, replication) so records
are independent of execution order and of each other. Records are appended to
a JSON-lines file with a content checksum; a rerun of a partially completed
campaign skips records that exist and are checksum-valid, and every summary
statistic is recomputed from the persisted records (no hidden state).

The per-record `runtime_ms` field is volatile metadata: it is excluded from
the record checksum and must be ignored in byte-for-byte determinism
comparisons (summaries never include it).
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .estimate import brownian_limit_curve, estimate_h_sigma, limit_curve, zero_squares
from .models import DriftModel, NoiseModel, get_model
from .seeding import derive_seed
from .simulate import NonFinite, ObservationScheme, SimulationPlan, default_burn_in, simulate_batch
from .statistic import StatisticInput, q_n
from .fgn import FgnSpec, sample_fgn

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "ExperimentResult",
    "run_consistency",
    "run_limit_comparison",
    "run_qv_rates",
    "run_campaign",
    "load_records",
    "SUMMARY_COLUMNS",
]

SUMMARY_COLUMNS = [
    "experiment", "h", "n", "count_ok", "count_error",
    "median_error", "p90_error", "frac_within_tol",
    "median_sup_gap", "max_gap_of_median_curve",
    "mean_sq", "slope", "slope_target", "passed",
]

KNOWN_KINDS = ("consistency", "limit", "qv")


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the offending key."""


@dataclass
class ExperimentConfig:
    """Campaign configuration; field names mirror the key=value config keys."""

    model_name: str = "fou"
    model_kwargs: dict = field(default_factory=dict)
    theta0: Sequence[float] = (-1.0,)
    h: float = 0.7
    sigma: Sequence[Sequence[float]] | None = None
    estimate_noise: bool = False
    ns: Sequence[int] = (256, 1024, 4096)
    alpha: float = 0.5
    kappa: float = 1.0
    substeps: int = 8
    burn_in: float | None = None
    y0: Sequence[float] | None = None
    replications: int = 25
    base_seed: int = 0
    outdir: str | os.PathLike | None = None
    tolerance: float = 0.15
    workers: int | None = None
    batch_size: int = 64
    kinds: Sequence[str] = ("consistency",)
    theta_grid_points: int = 21
    oracle_horizon: float = 5e3
    oracle_substeps: int = 16
    oracle_seeds: int = 8
    qv_hs: Sequence[float] = (0.6, 0.85)
    qv_ns: Sequence[int] = (256, 512, 1024, 2048, 4096)
    qv_replications: int = 1000
    slope_tolerance: float = 0.3

    def build_model(self) -> DriftModel:
        return get_model(self.model_name, **self.model_kwargs)

    def build_noise(self, model: DriftModel) -> NoiseModel:
        if self.sigma is None:
            return NoiseModel.isotropic(self.h, model.dim)
        return NoiseModel(self.h, np.asarray(self.sigma, dtype=float))

    def validate(self) -> None:
        model = self.build_model()
        theta0 = np.atleast_1d(np.asarray(self.theta0, dtype=float))
        if theta0.size != model.param_dim:
            raise ConfigError(
                f"model.theta0: expected {model.param_dim} components, got {theta0.size}"
            )
        if not model.box.contains(theta0):
            raise ConfigError(f"model.theta0: {theta0.tolist()} lies outside the model box")
        if not 0.0 < self.h < 1.0:
            raise ConfigError(f"noise.h: must lie in (0, 1), got {self.h}")
        noise = self.build_noise(model)
        if noise.dim != model.dim:
            raise ConfigError(
                f"noise.sigma: has {noise.dim} rows, model dimension is {model.dim}"
            )
        ns = [int(v) for v in self.ns]
        if not ns or any(b <= a for a, b in zip(ns, ns[1:])):
            raise ConfigError("scheme.n: values must be strictly increasing")
        if any(v < 2 for v in ns):
            raise ConfigError("scheme.n: values must be >= 2")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"scheme.alpha: must lie in (0, 1), got {self.alpha}")
        if not self.kappa > 0:
            raise ConfigError(f"scheme.kappa: must be positive, got {self.kappa}")
        if int(self.substeps) < 1:
            raise ConfigError("sim.substeps: must be >= 1")
        if self.burn_in is not None and self.burn_in < 0:
            raise ConfigError("sim.burn_in: must be >= 0")
        if int(self.replications) < 1:
            raise ConfigError("experiment.replications: must be >= 1")
        if not self.tolerance > 0:
            raise ConfigError("experiment.tolerance: must be positive")
        if int(self.theta_grid_points) < 3:
            raise ConfigError("experiment.theta_grid_points: must be >= 3")
        unknown = [k for k in self.kinds if k not in KNOWN_KINDS]
        if unknown:
            raise ConfigError(f"experiment.kinds: unknown kinds {unknown}; known: {KNOWN_KINDS}")
        if not self.kinds:
            raise ConfigError("experiment.kinds: at least one experiment is required")
        qv_ns = [int(v) for v in self.qv_ns]
        if "qv" in self.kinds:
            if len(qv_ns) < 2 or any(b <= a for a, b in zip(qv_ns, qv_ns[1:])):
                raise ConfigError("experiment.qv_ns: need >= 2 strictly increasing values")
            if any(not 0.0 < float(hh) < 1.0 for hh in self.qv_hs):
                raise ConfigError("experiment.qv_hs: Hurst values must lie in (0, 1)")
            if int(self.qv_replications) < 2:
                raise ConfigError("experiment.qv_replications: must be >= 2")


@dataclass
class ExperimentResult:
    kind: str
    passed: bool
    summary_rows: list[dict]
    records: list[dict]
    tables: dict = field(default_factory=dict)


def _record_hash(record: dict) -> str:
    payload = {k: v for k, v in record.items() if k not in ("rhash", "runtime_ms")}
    canon = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def _record_key(record: dict) -> tuple:
    return (
        record.get("experiment"),
        record.get("h"),
        record.get("n"),
        record.get("rep"),
    )


def load_records(path) -> dict[tuple, dict]:
    """Load checksum-valid records from a JSON-lines file (missing file: empty)."""
    out: dict[tuple, dict] = {}
    path = Path(path)
    if not path.exists():
        return out
    with path.open() as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError:
                continue
            if not isinstance(record, dict) or "rhash" not in record:
                continue
            if _record_hash(record) != record["rhash"]:
                continue
            out[_record_key(record)] = record
    return out


class _RecordWriter:
    """Single-writer append sink; records flow through here only."""

    def __init__(self, path: Path | None):
        self.path = path
        self._fh = None
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = path.open("a")

    def write(self, record: dict) -> None:
        if self._fh is None:
            return
        self._fh.write(json.dumps(record, sort_keys=True, separators=(",", ":")) + "\n")
        self._fh.flush()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()


def _finish_record(record: dict) -> dict:
    record["rhash"] = _record_hash(record)
    return record


def _percentile(values: Sequence[float], pct: float) -> float:
    return float(np.percentile(np.asarray(values, dtype=float), pct))


def _chunks(seq: Sequence, size: int) -> Iterable[Sequence]:
    for i in range(0, len(seq), size):
        yield seq[i : i + size]


def _pool_size(config: ExperimentConfig) -> int:
    return config.workers or os.cpu_count() or 1


def _plan_for(config: ExperimentConfig, model: DriftModel, scheme: ObservationScheme) -> SimulationPlan:
    burn = config.burn_in
    if burn is None:
        burn = default_burn_in(model, np.asarray(config.theta0, dtype=float))
    y0 = np.zeros(model.dim) if config.y0 is None else np.asarray(config.y0, dtype=float)
    return SimulationPlan(scheme=scheme, substeps=config.substeps, burn_in=burn, y0=y0, seed=0)


def run_consistency(
    config: ExperimentConfig,
    *,
    model: DriftModel | None = None,
    writer: _RecordWriter | None = None,
    existing: dict[tuple, dict] | None = None,
) -> ExperimentResult:
    """Simulate -> estimate pipelines over the n-list; PASS iff the median
    error is non-increasing across the list. Replication-level failures are
    recorded and excluded from summaries, never raised."""
    config.validate()
    model = model or config.build_model()
    noise = config.build_noise(model)
    theta0 = np.atleast_1d(np.asarray(config.theta0, dtype=float))
    own_writer = writer is None
    if own_writer:
        writer = _RecordWriter(Path(config.outdir) / "records.jsonl" if config.outdir else None)
    if existing is None:
        existing = load_records(writer.path) if writer.path else {}
    records: list[dict] = []
    try:
        for n in config.ns:
            n = int(n)
            scheme = ObservationScheme(n=n, alpha=config.alpha, kappa=config.kappa)
            plan = _plan_for(config, model, scheme)
            todo = []
            for rep in range(config.replications):
                key = ("consistency", None, n, rep)
                if key in existing:
                    records.append(existing[key])
                else:
                    todo.append(rep)
            for chunk in _chunks(todo, config.batch_size):
                seeds = [derive_seed(config.base_seed, n, rep) for rep in chunk]
                t_sim = time.perf_counter()
                paths = simulate_batch(model, theta0, noise, plan, seeds, keep_fine=False)
                sim_ms = (time.perf_counter() - t_sim) * 1e3 / max(len(chunk), 1)

                def estimate_one(args):
                    rep, seed, path = args
                    base = {"experiment": "consistency", "h": None, "n": n, "rep": rep, "seed": seed}
                    t0 = time.perf_counter()
                    if isinstance(path, NonFinite):
                        return {**base, "status": "error", "error_type": "NonFinite",
                                "message": str(path),
                                "runtime_ms": sim_ms}
                    try:
                        if config.estimate_noise:
                            fitted = estimate_h_sigma(path.obs_y, scheme)
                            noise_used: object = fitted
                        else:
                            fitted = None
                            noise_used = noise
                        est = zero_squares(StatisticInput(path.obs_y, scheme, noise_used, model))
                        err = float(np.linalg.norm(est.theta_hat - theta0))
                        rec = {**base, "status": "ok",
                               "theta_hat": [float(v) for v in est.theta_hat],
                               "error": err,
                               "q_at_min": est.q_at_min,
                               "iterations": est.iterations,
                               "converged": est.converged,
                               "plugin_noise": bool(config.estimate_noise)}
                        if fitted is not None:
                            rec["h_hat"] = fitted.h_hat
                            rec["sigma_norm_sq_hat"] = fitted.sigma_norm_sq_hat
                        rec["runtime_ms"] = sim_ms + (time.perf_counter() - t0) * 1e3
                        return rec
                    except Exception as exc:  # replication errors are data
                        return {**base, "status": "error",
                                "error_type": type(exc).__name__, "message": str(exc),
                                "runtime_ms": sim_ms + (time.perf_counter() - t0) * 1e3}

                with ThreadPoolExecutor(max_workers=_pool_size(config)) as pool:
                    chunk_records = list(pool.map(estimate_one, zip(chunk, seeds, paths)))
                for rec in chunk_records:  # single writer, deterministic order
                    rec = _finish_record(rec)
                    writer.write(rec)
                    records.append(rec)
    finally:
        if own_writer:
            writer.close()

    rows = []
    medians = []
    for n in config.ns:
        n = int(n)
        ok = [r for r in records if r["n"] == n and r["status"] == "ok"]
        errs = [r["error"] for r in ok]
        row = {
            "experiment": "consistency", "h": "", "n": n,
            "count_ok": len(ok),
            "count_error": sum(1 for r in records if r["n"] == n and r["status"] == "error"),
        }
        if errs:
            row["median_error"] = _percentile(errs, 50)
            row["p90_error"] = _percentile(errs, 90)
            row["frac_within_tol"] = float(np.mean([e <= config.tolerance for e in errs]))
            medians.append(row["median_error"])
        rows.append(row)
    passed = bool(
        len(medians) == len(config.ns)
        and all(b <= a for a, b in zip(medians, medians[1:]))
    )
    for row in rows:
        row["passed"] = passed
    return ExperimentResult("consistency", passed, rows, records)


def run_limit_comparison(
    config: ExperimentConfig,
    theta_grid=None,
    *,
    model: DriftModel | None = None,
    writer: _RecordWriter | None = None,
    existing: dict[tuple, dict] | None = None,
) -> ExperimentResult:
    """Tabulate the empirical Q_n curve against its ergodic limit.

    For H > 1/2 the limit is L(theta) = E|b(Ybar;theta)|^2 - E|b(Ybar;theta0)|^2
    and Q_n itself is tabulated. For H = 1/2 the centered statistic
    Q_n(theta) - Q_n(theta0) is tabulated against E|b(Ybar;theta0)-b(Ybar;theta)|^2
    (the uncentered statistic carries a theta-independent Ito-type correction).
    PASS iff the median per-replication sup-gap over the grid is non-increasing
    across the n-list.
    """
    config.validate()
    model = model or config.build_model()
    noise = config.build_noise(model)
    theta0 = np.atleast_1d(np.asarray(config.theta0, dtype=float))
    if model.param_dim != 1:
        raise ConfigError("experiment.kinds: limit comparison supports q = 1 models")
    if theta_grid is None:
        theta_grid = np.linspace(
            model.box.lower[0], model.box.upper[0], config.theta_grid_points
        )
    theta_grid = np.asarray(theta_grid, dtype=float)
    for theta in theta_grid:
        if not model.box.contains([theta]):
            raise ConfigError("experiment.theta_grid: grid must lie inside the model box")
    brownian = config.h == 0.5
    regime = "brownian" if brownian else "fractional"
    curve_fn = brownian_limit_curve if brownian else limit_curve
    limit_values = curve_fn(
        model, theta0, noise, [[t] for t in theta_grid],
        horizon=config.oracle_horizon,
        substeps_per_unit=config.oracle_substeps,
        seeds=config.oracle_seeds,
        base_seed=config.base_seed,
        burn_in=config.burn_in,
    )

    own_writer = writer is None
    if own_writer:
        writer = _RecordWriter(Path(config.outdir) / "records.jsonl" if config.outdir else None)
    if existing is None:
        existing = load_records(writer.path) if writer.path else {}
    records: list[dict] = []
    try:
        for n in config.ns:
            n = int(n)
            scheme = ObservationScheme(n=n, alpha=config.alpha, kappa=config.kappa)
            plan = _plan_for(config, model, scheme)
            todo = []
            for rep in range(config.replications):
                key = ("limit", None, n, rep)
                if key in existing:
                    records.append(existing[key])
                else:
                    todo.append(rep)
            for chunk in _chunks(todo, config.batch_size):
                seeds = [derive_seed(config.base_seed, "limit", n, rep) for rep in chunk]
                paths = simulate_batch(model, theta0, noise, plan, seeds, keep_fine=False)

                def eval_one(args):
                    rep, seed, path = args
                    base = {"experiment": "limit", "h": None, "n": n, "rep": rep, "seed": seed}
                    t0 = time.perf_counter()
                    if isinstance(path, NonFinite):
                        return {**base, "status": "error", "error_type": "NonFinite",
                                "message": str(path), "runtime_ms": 0.0}
                    try:
                        si = StatisticInput(path.obs_y, scheme, noise, model)
                        qs = np.array([q_n(si, [t]) for t in theta_grid])
                        if brownian:
                            qs = qs - q_n(si, theta0)
                        gap = float(np.max(np.abs(qs - limit_values)))
                        return {**base, "status": "ok",
                                "qn_grid": [float(v) for v in qs],
                                "sup_gap": gap,
                                "runtime_ms": (time.perf_counter() - t0) * 1e3}
                    except Exception as exc:
                        return {**base, "status": "error",
                                "error_type": type(exc).__name__, "message": str(exc),
                                "runtime_ms": (time.perf_counter() - t0) * 1e3}

                with ThreadPoolExecutor(max_workers=_pool_size(config)) as pool:
                    chunk_records = list(pool.map(eval_one, zip(chunk, seeds, paths)))
                for rec in chunk_records:
                    rec = _finish_record(rec)
                    writer.write(rec)
                    records.append(rec)
    finally:
        if own_writer:
            writer.close()

    rows = []
    tables: dict = {"theta_grid": theta_grid.tolist(),
                    "limit_values": [float(v) for v in limit_values],
                    "regime": regime, "median_curves": {}}
    medians = []
    for n in config.ns:
        n = int(n)
        ok = [r for r in records if r["n"] == n and r["status"] == "ok"]
        row = {
            "experiment": "limit", "h": "", "n": n,
            "count_ok": len(ok),
            "count_error": sum(1 for r in records if r["n"] == n and r["status"] == "error"),
        }
        if ok:
            grids = np.array([r["qn_grid"] for r in ok])
            median_curve = np.median(grids, axis=0)
            tables["median_curves"][n] = [float(v) for v in median_curve]
            row["median_sup_gap"] = _percentile([r["sup_gap"] for r in ok], 50)
            row["max_gap_of_median_curve"] = float(np.max(np.abs(median_curve - limit_values)))
            medians.append(row["median_sup_gap"])
        rows.append(row)
    passed = bool(
        len(medians) == len(config.ns)
        and all(b <= a for a, b in zip(medians, medians[1:]))
    )
    for row in rows:
        row["passed"] = passed
    return ExperimentResult("limit", passed, rows, records, tables)


def run_qv_rates(
    hs: Sequence[float],
    ns: Sequence[int],
    replications: int,
    base_seed: int,
    *,
    slope_tolerance: float = 0.3,
    writer: _RecordWriter | None = None,
    existing: dict[tuple, dict] | None = None,
    outdir=None,
) -> ExperimentResult:
    """Measure the log-log decay of E|(1/n) sum(|dB_k|^2 - 1)|^2 versus n.

    Targets: slope -1 for H < 3/4 (and the boundary H = 3/4, whose log factor
    is indistinguishable at these sizes) and -(4-4H) for H > 3/4.
    """
    own_writer = writer is None
    if own_writer:
        writer = _RecordWriter(Path(outdir) / "records.jsonl" if outdir else None)
    if existing is None:
        existing = load_records(writer.path) if writer.path else {}
    records: list[dict] = []
    try:
        for h in hs:
            h = float(h)
            for n in ns:
                n = int(n)
                for rep in range(replications):
                    key = ("qv", h, n, rep)
                    if key in existing:
                        records.append(existing[key])
                        continue
                    seed = derive_seed(base_seed, "qv", h, n, rep)
                    z = sample_fgn(FgnSpec(h, 1.0, n, dims=1, seed=seed))[0]
                    m = math.fsum(z * z - 1.0) / n
                    rec = _finish_record({
                        "experiment": "qv", "h": h, "n": n, "rep": rep,
                        "seed": seed, "status": "ok", "m": m, "runtime_ms": 0.0,
                    })
                    writer.write(rec)
                    records.append(rec)
    finally:
        if own_writer:
            writer.close()

    rows = []
    tables: dict = {"mean_sq": {}}
    all_ok = True
    for h in hs:
        h = float(h)
        mean_sq = []
        for n in ns:
            n = int(n)
            vals = [r["m"] for r in records
                    if r["h"] == h and r["n"] == n and r["status"] == "ok"]
            mean_sq.append(float(np.mean(np.square(vals))))
        slope = float(np.polyfit(np.log(np.asarray(ns, float)), np.log(mean_sq), 1)[0])
        target = -1.0 if h <= 0.75 else -(4.0 - 4.0 * h)
        ok = abs(slope - target) <= slope_tolerance
        all_ok = all_ok and ok
        tables["mean_sq"][h] = dict(zip((int(v) for v in ns), mean_sq))
        for n, ms in zip(ns, mean_sq):
            rows.append({
                "experiment": "qv", "h": h, "n": int(n),
                "count_ok": replications, "count_error": 0,
                "mean_sq": ms, "slope": slope, "slope_target": target,
                "passed": ok,
            })
    return ExperimentResult("qv", all_ok, rows, records, tables)


def _write_summary(outdir: Path, rows: list[dict]) -> None:
    lines = [",".join(SUMMARY_COLUMNS)]
    for row in rows:
        cells = []
        for col in SUMMARY_COLUMNS:
            value = row.get(col, "")
            if isinstance(value, bool):
                cells.append("true" if value else "false")
            elif isinstance(value, float):
                cells.append(format(value, ".17g"))
            else:
                cells.append(str(value))
        lines.append(",".join(cells))
    (outdir / "summary.csv").write_text("\n".join(lines) + "\n")


def _write_xy(path: Path, xs, ys) -> None:
    lines = ["x,y"] + [
        f"{format(float(x), '.17g')},{format(float(y), '.17g')}" for x, y in zip(xs, ys)
    ]
    path.write_text("\n".join(lines) + "\n")


def _write_plotdata(outdir: Path, results: list[ExperimentResult]) -> None:
    plotdir = outdir / "plotdata"
    plotdir.mkdir(parents=True, exist_ok=True)
    for result in results:
        if result.kind == "consistency":
            rows = [r for r in result.summary_rows if "median_error" in r]
            _write_xy(plotdir / "consistency_median_error.csv",
                      [r["n"] for r in rows], [r["median_error"] for r in rows])
        elif result.kind == "limit":
            grid = result.tables["theta_grid"]
            _write_xy(plotdir / "limit_curve.csv", grid, result.tables["limit_values"])
            for n, curve in result.tables["median_curves"].items():
                _write_xy(plotdir / f"limit_qn_median_n{n}.csv", grid, curve)
        elif result.kind == "qv":
            for h, series in result.tables["mean_sq"].items():
                label = format(h, "g").replace(".", "p")
                _write_xy(plotdir / f"qv_meansq_h{label}.csv",
                          list(series.keys()), list(series.values()))


def run_campaign(config: ExperimentConfig) -> list[ExperimentResult]:
    """Run every configured experiment kind, persisting records, summaries,
    the echoed config, and plot data under config.outdir (if set)."""
    config.validate()
    outdir = Path(config.outdir) if config.outdir else None
    writer = _RecordWriter(outdir / "records.jsonl" if outdir else None)
    existing = load_records(writer.path) if writer.path else {}
    results: list[ExperimentResult] = []
    try:
        for kind in config.kinds:
            if kind == "consistency":
                results.append(run_consistency(config, writer=writer, existing=existing))
            elif kind == "limit":
                results.append(run_limit_comparison(config, writer=writer, existing=existing))
            elif kind == "qv":
                results.append(run_qv_rates(
                    config.qv_hs, config.qv_ns, config.qv_replications,
                    config.base_seed, slope_tolerance=config.slope_tolerance,
                    writer=writer, existing=existing,
                ))
    finally:
        writer.close()
    if outdir is not None:
        outdir.mkdir(parents=True, exist_ok=True)
        all_rows = [row for result in results for row in result.summary_rows]
        _write_summary(outdir, all_rows)
        _write_plotdata(outdir, results)
    return results
