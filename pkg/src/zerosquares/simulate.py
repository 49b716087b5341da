"""Euler integration of the SDE dY = b(Y; theta0) dt + sigma dB^H on a fine grid.

The observation design is t_k = k * kappa * n^{-alpha}; each observation gap is
cut into `substeps` Euler sub-intervals (additive noise makes explicit Euler
strong order one, so sub-stepping controls the drift discretization bias in
the statistic's residual). A burn-in segment is simulated first from y0 and
discarded, its endpoint becoming the state at t=0; the driving noise for the
burn-in is drawn from the same per-seed stream, prepended, and the forcing
path F is re-zeroed at t=0.

The default burn-in length is 10/c1 time units with c1 probed at the true
parameter via the sampled dissipativity ratio. This is a heuristic: the
contraction rate toward stationarity is model dependent and no quantitative
rule is available, so callers with slowly mixing models should pass burn_in
explicitly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .fgn import FgnSpec, cumulate, sample_fgn
from .models import DriftModel, NoiseModel, check_dissipativity

__all__ = [
    "NonFinite",
    "ObservationScheme",
    "SimulationPlan",
    "PathRecord",
    "default_burn_in",
    "simulate_path",
    "simulate_batch",
    "stationary_moment",
    "stationary_moments",
    "save_path",
    "load_path_csv",
]


class NonFinite(RuntimeError):
    """State became NaN/Inf during integration (step too coarse, or the model
    violates dissipativity at the supplied parameter)."""

    def __init__(self, step: int, time: float, phase: str = "main"):
        self.step = step
        self.time = time
        self.phase = phase
        super().__init__(
            f"non-finite state at {phase} step {step} (t = {time:.6g})"
        )


@dataclass(frozen=True)
class ObservationScheme:
    """Equally spaced observations t_k = k * alpha_n with alpha_n = kappa * n^-alpha."""

    n: int
    alpha: float
    kappa: float

    def __post_init__(self) -> None:
        if int(self.n) < 2:
            raise ValueError(f"n must be >= 2, got {self.n}")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not self.kappa > 0:
            raise ValueError(f"kappa must be positive, got {self.kappa}")
        object.__setattr__(self, "n", int(self.n))

    @property
    def alpha_n(self) -> float:
        return self.kappa * float(self.n) ** (-self.alpha)

    @property
    def horizon(self) -> float:
        return self.n * self.alpha_n

    def times(self) -> np.ndarray:
        return np.arange(self.n + 1) * self.alpha_n

    @classmethod
    def from_spacing(cls, n: int, spacing: float, alpha: float = 0.5) -> "ObservationScheme":
        """Scheme with the given observed spacing (kappa backed out of alpha_n)."""
        if not spacing > 0:
            raise ValueError(f"spacing must be positive, got {spacing}")
        return cls(n=n, alpha=alpha, kappa=spacing * float(n) ** alpha)


@dataclass(frozen=True)
class SimulationPlan:
    """Fine-grid integration plan for one observed path."""

    scheme: ObservationScheme
    substeps: int = 8
    burn_in: float = 0.0
    y0: np.ndarray = field(default_factory=lambda: np.zeros(1))
    seed: int = 0

    def __post_init__(self) -> None:
        if int(self.substeps) < 1:
            raise ValueError(f"substeps must be >= 1, got {self.substeps}")
        if self.burn_in < 0:
            raise ValueError(f"burn_in must be >= 0, got {self.burn_in}")
        object.__setattr__(self, "substeps", int(self.substeps))
        y0 = np.atleast_1d(np.asarray(self.y0, dtype=float))
        y0.flags.writeable = False
        object.__setattr__(self, "y0", y0)
        object.__setattr__(self, "seed", int(self.seed))

    @property
    def fine_step(self) -> float:
        return self.scheme.alpha_n / self.substeps

    @property
    def burn_steps(self) -> int:
        if self.burn_in == 0.0:
            return 0
        return int(math.ceil(self.burn_in / self.fine_step))


@dataclass
class PathRecord:
    """Simulated trajectory: fine grid (optional), observations, and noise path."""

    obs_y: np.ndarray
    obs_noise: np.ndarray
    plan: SimulationPlan
    model_name: str
    theta0: np.ndarray
    fine_times: np.ndarray | None = None
    fine_y: np.ndarray | None = None


def default_burn_in(model: DriftModel, theta0, *, factor: float = 10.0, seed: int = 0) -> float:
    """Heuristic burn-in: `factor` contraction times at the true parameter."""
    theta0 = np.atleast_1d(np.asarray(theta0, dtype=float))
    report = check_dissipativity(model, sample_count=256, radius=5.0, thetas=[theta0], seed=seed)
    c1 = -report.max_ratio
    if not c1 > 0:
        raise ValueError(
            f"model {model.name!r} is not dissipative at theta0={theta0} "
            f"(ratio {report.max_ratio:.3g}); pass burn_in explicitly"
        )
    return factor / c1


def _drive(
    model: DriftModel,
    theta0: np.ndarray,
    y: np.ndarray,
    dF: np.ndarray,
    dt: float,
    *,
    n: int,
    substeps: int,
    burn_steps: int,
    keep_fine: bool,
):
    """Batched Euler drive. y is (R, d); dF is (count, R, d) with the burn-in
    increments first. Returns (obs_y, obs_noise, fine_y, bad_step) where the
    per-replication bad_step is -1 for healthy rows.
    """
    reps, d = y.shape
    # bad_step records the absolute fine-step index (burn-in first) at which a
    # row first went non-finite; -1 marks healthy rows.
    bad_step = np.full(reps, -1, dtype=int)
    alive = np.ones(reps, dtype=bool)

    def step_check(i: int) -> None:
        finite = np.isfinite(y).all(axis=-1)
        if finite.all():
            return
        newly = alive & ~finite
        bad_step[newly] = i
        alive[newly] = False

    # Divergence is detected per step via isfinite and reported through
    # bad_step; numpy's overflow warnings would only duplicate that signal.
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(burn_steps):
            y = y + model.b(y, theta0) * dt + dF[i]
            step_check(i)

        main_steps = n * substeps
        obs_y = np.empty((n + 1, reps, d))
        obs_noise = np.empty((n + 1, reps, d))
        fine_y = np.empty((main_steps + 1, reps, d)) if keep_fine else None
        obs_y[0] = y
        obs_noise[0] = 0.0
        if keep_fine:
            fine_y[0] = y
        F = np.zeros((reps, d))
        for i in range(main_steps):
            y = y + model.b(y, theta0) * dt + dF[burn_steps + i]
            F = F + dF[burn_steps + i]
            step_check(burn_steps + i)
            if keep_fine:
                fine_y[i + 1] = y
            if (i + 1) % substeps == 0:
                k = (i + 1) // substeps
                obs_y[k] = y
                obs_noise[k] = F
    return obs_y, obs_noise, fine_y, bad_step


def _nonfinite_from_step(abs_step: int, plan: SimulationPlan) -> NonFinite:
    if abs_step < plan.burn_steps:
        return NonFinite(abs_step, (abs_step - plan.burn_steps + 1) * plan.fine_step, "burn-in")
    main_step = abs_step - plan.burn_steps
    return NonFinite(main_step, (main_step + 1) * plan.fine_step, "main")


def _prepare(model: DriftModel, theta0, noise: NoiseModel, plan: SimulationPlan):
    theta0 = np.atleast_1d(np.asarray(theta0, dtype=float))
    if theta0.size != model.param_dim:
        raise ValueError(f"theta0 must have length {model.param_dim}, got {theta0.size}")
    if not model.box.contains(theta0):
        raise ValueError(f"theta0 {theta0} lies outside the model box")
    if noise.dim != model.dim:
        raise ValueError(f"noise rows {noise.dim} != model dimension {model.dim}")
    if plan.y0.size != model.dim:
        raise ValueError(f"y0 must have length {model.dim}, got {plan.y0.size}")
    return theta0


def _record_from_arrays(model, theta0, plan, obs_y, obs_noise, fine_y, keep_fine):
    scheme = plan.scheme
    fine_times = None
    if keep_fine:
        fine_times = np.arange(scheme.n * plan.substeps + 1) * plan.fine_step
    return PathRecord(
        obs_y=np.ascontiguousarray(obs_y.T),
        obs_noise=np.ascontiguousarray(obs_noise.T),
        plan=plan,
        model_name=model.name,
        theta0=theta0,
        fine_times=fine_times,
        fine_y=np.ascontiguousarray(fine_y.T) if keep_fine else None,
    )


def simulate_path(
    model: DriftModel,
    theta0,
    noise: NoiseModel,
    plan: SimulationPlan,
    *,
    keep_fine: bool = True,
    noise_increments: np.ndarray | None = None,
) -> PathRecord:
    """Integrate one path. Deterministic in (inputs, plan.seed).

    `noise_increments` optionally injects pre-drawn fBm increments of shape
    (m, burn_steps + n*substeps); by default they are sampled from plan.seed.
    """
    theta0 = _prepare(model, theta0, noise, plan)
    scheme = plan.scheme
    count = plan.burn_steps + scheme.n * plan.substeps
    if noise_increments is None:
        spec = FgnSpec(noise.h, plan.fine_step, count, dims=noise.m, seed=plan.seed)
        noise_increments = sample_fgn(spec)
    else:
        noise_increments = np.asarray(noise_increments, dtype=float)
        if noise_increments.shape != (noise.m, count):
            raise ValueError(
                f"noise_increments must have shape {(noise.m, count)}, "
                f"got {noise_increments.shape}"
            )
    dF = (noise.sigma @ noise_increments).T[:, None, :]  # (count, 1, d)
    y = plan.y0[None, :].copy()
    obs_y, obs_noise, fine_y, bad = _drive(
        model, theta0, y, dF, plan.fine_step,
        n=scheme.n, substeps=plan.substeps, burn_steps=plan.burn_steps,
        keep_fine=keep_fine,
    )
    if bad[0] >= 0:
        raise _nonfinite_from_step(int(bad[0]), plan)
    return _record_from_arrays(
        model, theta0, plan,
        obs_y[:, 0, :], obs_noise[:, 0, :],
        fine_y[:, 0, :] if keep_fine else None,
        keep_fine,
    )


def simulate_batch(
    model: DriftModel,
    theta0,
    noise: NoiseModel,
    plan_template: SimulationPlan,
    seeds: Sequence[int],
    *,
    keep_fine: bool = False,
) -> list[PathRecord | NonFinite]:
    """Integrate one path per seed with a shared Euler drive.

    Per-replication outputs are bit-identical to `simulate_path` with the same
    seed (the drive applies the same elementwise operations). Failed rows are
    returned as NonFinite instances rather than raised, so one diverging
    replication cannot poison a campaign.
    """
    theta0 = _prepare(model, theta0, noise, plan_template)
    scheme = plan_template.scheme
    count = plan_template.burn_steps + scheme.n * plan_template.substeps
    reps = len(seeds)
    d = model.dim
    dF = np.empty((count, reps, d))
    for r, seed in enumerate(seeds):
        spec = FgnSpec(noise.h, plan_template.fine_step, count, dims=noise.m, seed=int(seed))
        dF[:, r, :] = (noise.sigma @ sample_fgn(spec)).T
    y = np.broadcast_to(plan_template.y0, (reps, d)).copy()
    obs_y, obs_noise, fine_y, bad = _drive(
        model, theta0, y, dF, plan_template.fine_step,
        n=scheme.n, substeps=plan_template.substeps,
        burn_steps=plan_template.burn_steps, keep_fine=keep_fine,
    )
    out: list[PathRecord | NonFinite] = []
    for r, seed in enumerate(seeds):
        if bad[r] >= 0:
            out.append(_nonfinite_from_step(int(bad[r]), plan_template))
            continue
        plan_r = SimulationPlan(
            scheme=scheme,
            substeps=plan_template.substeps,
            burn_in=plan_template.burn_in,
            y0=plan_template.y0,
            seed=int(seed),
        )
        out.append(_record_from_arrays(
            model, theta0, plan_r,
            obs_y[:, r, :], obs_noise[:, r, :],
            fine_y[:, r, :] if keep_fine else None,
            keep_fine,
        ))
    return out


def stationary_moments(
    model: DriftModel,
    theta0,
    noise: NoiseModel,
    gs: Sequence[Callable[[np.ndarray], np.ndarray]],
    horizon: float,
    substeps_per_unit: int = 16,
    *,
    seed: int = 0,
    burn_in: float | None = None,
    block: int = 4096,
) -> list[float]:
    """Time averages of several observables along one long trajectory.

    Each g maps a block of states of shape (B, d) to (B,) values; averages use
    the left-endpoint rule over `horizon` time units after burn-in and are
    accumulated with compensated summation. The trajectory is streamed in
    blocks and never stored whole.
    """
    theta0 = np.atleast_1d(np.asarray(theta0, dtype=float))
    if theta0.size != model.param_dim or not model.box.contains(theta0):
        raise ValueError("theta0 must lie inside the model box")
    if burn_in is None:
        burn_in = default_burn_in(model, theta0)
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    dt = 1.0 / int(substeps_per_unit)
    steps = int(round(horizon * substeps_per_unit))
    burn_steps = int(math.ceil(burn_in / dt)) if burn_in > 0 else 0
    spec = FgnSpec(noise.h, dt, burn_steps + steps, dims=noise.m, seed=seed)
    dF = (noise.sigma @ sample_fgn(spec)).T  # (count, d)
    y = np.zeros(model.dim)
    for i in range(burn_steps):
        y = y + model.b(y, theta0) * dt + dF[i]
        if not np.isfinite(y).all():
            raise NonFinite(i - burn_steps, (i - burn_steps) * dt, "burn-in")
    partials: list[list[float]] = [[] for _ in gs]
    buf = np.empty((block, model.dim))
    fill = 0

    def flush() -> None:
        nonlocal fill
        if fill == 0:
            return
        states = buf[:fill]
        for acc, g in zip(partials, gs):
            acc.append(math.fsum(np.asarray(g(states), dtype=float)))
        fill = 0

    for i in range(steps):
        buf[fill] = y
        fill += 1
        if fill == block:
            flush()
        y = y + model.b(y, theta0) * dt + dF[burn_steps + i]
        if not np.isfinite(y).all():
            raise NonFinite(i, i * dt, "main")
    flush()
    return [math.fsum(acc) / steps for acc in partials]


def stationary_moment(
    model: DriftModel,
    theta0,
    noise: NoiseModel,
    g: Callable[[np.ndarray], np.ndarray],
    horizon: float,
    substeps_per_unit: int = 16,
    *,
    seed: int = 0,
    burn_in: float | None = None,
) -> float:
    """Long-run time average of g along one trajectory (ergodic oracle)."""
    return stationary_moments(
        model, theta0, noise, [g], horizon, substeps_per_unit,
        seed=seed, burn_in=burn_in,
    )[0]


def _fmt(x: float, hex_floats: bool) -> str:
    return float(x).hex() if hex_floats else format(float(x), ".17g")


def save_path(record: PathRecord, csv_path, json_path=None, *, hex_floats: bool = False) -> None:
    """Write observation columns as CSV (t, y_1..y_d, F_1..F_d) plus a JSON sidecar."""
    d = record.obs_y.shape[0]
    scheme = record.plan.scheme
    times = scheme.times()
    header = ",".join(["t"] + [f"y{i+1}" for i in range(d)] + [f"F{i+1}" for i in range(d)])
    lines = [header]
    for k in range(scheme.n + 1):
        row = [times[k]] + list(record.obs_y[:, k]) + list(record.obs_noise[:, k])
        lines.append(",".join(_fmt(v, hex_floats) for v in row))
    with open(csv_path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    if json_path is not None:
        meta = {
            "model": record.model_name,
            "theta0": [float(v) for v in record.theta0],
            "n": scheme.n,
            "alpha": scheme.alpha,
            "kappa": scheme.kappa,
            "alpha_n": scheme.alpha_n,
            "substeps": record.plan.substeps,
            "burn_in": record.plan.burn_in,
            "y0": [float(v) for v in record.plan.y0],
            "seed": record.plan.seed,
            "dim": d,
            "float_format": "hex" if hex_floats else "decimal17",
        }
        with open(json_path, "w") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _parse_float(token: str) -> float:
    token = token.strip()
    try:
        return float(token)
    except ValueError:
        return float.fromhex(token)


def load_path_csv(csv_path):
    """Read a path CSV; returns (t, y, F) with y of shape (d, n+1), F possibly None.

    Raises ValueError naming the offending 1-based line on malformed input.
    """
    with open(csv_path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines:
        raise ValueError(f"{csv_path}: line 1: empty file")
    header = lines[0].split(",")
    if header[0] != "t":
        raise ValueError(f"{csv_path}: line 1: header must start with 't'")
    y_cols = [i for i, name in enumerate(header) if name.startswith("y")]
    f_cols = [i for i, name in enumerate(header) if name.startswith("F")]
    if not y_cols:
        raise ValueError(f"{csv_path}: line 1: no y columns in header")
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        tokens = line.split(",")
        if len(tokens) != len(header):
            raise ValueError(
                f"{csv_path}: line {lineno}: expected {len(header)} fields, got {len(tokens)}"
            )
        try:
            rows.append([_parse_float(tok) for tok in tokens])
        except ValueError:
            raise ValueError(f"{csv_path}: line {lineno}: malformed number") from None
    data = np.asarray(rows)
    if data.shape[0] < 2:
        raise ValueError(f"{csv_path}: line {len(lines)}: need at least 2 observations")
    t = data[:, 0]
    y = data[:, y_cols].T
    F = data[:, f_cols].T if f_cols else None
    return t, y, F
