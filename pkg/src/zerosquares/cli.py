"""Command-line front end: simulate paths, estimate drift parameters, and run
Monte Carlo experiment campaigns.

Exit codes (stable API): 0 success, 2 validation or parse error, 3 simulation
produced a non-finite state, 4 estimator error, 5 an experiment failed its
acceptance threshold.

Experiment configs are flat `key = value` lines with `#` comments; keys are
namespaced (model.*, noise.*, scheme.*, sim.*, experiment.*) and unknown keys
are a hard error. Command-line `--set key=value` pairs override file values.
All time-like quantities (kappa, burn_in, horizons) share one abstract time
unit; alpha_n = kappa * n^-alpha is in the same unit.
"""

from __future__ import annotations

import argparse
import json
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from .estimate import (
    DegeneratePath,
    EmptyBox,
    NonFiniteStatistic,
    ZeroVariation,
    closed_form_fou,
    estimate_h_sigma,
    zero_squares,
)
from .harness import ConfigError, ExperimentConfig, run_campaign
from .models import NoiseModel, UnknownModelName, get_model
from .simulate import (
    NonFinite,
    ObservationScheme,
    SimulationPlan,
    default_burn_in,
    load_path_csv,
    save_path,
    simulate_path,
)
from .statistic import StatisticInput

__all__ = ["main"]

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_SIMULATION = 3
EXIT_ESTIMATION = 4
EXIT_EXPERIMENT_FAILED = 5


def _parse_floats(text: str) -> list[float]:
    return [float(tok) for tok in text.split(",") if tok.strip()]


def _parse_ints(text: str) -> list[int]:
    return [int(tok) for tok in text.split(",") if tok.strip()]


def _parse_matrix(text: str) -> list[list[float]]:
    return [_parse_floats(row) for row in text.split(";") if row.strip()]


def _parse_box(text: str) -> tuple:
    pairs = []
    for axis in text.split(","):
        lo, _, hi = axis.partition(":")
        pairs.append((float(lo), float(hi)))
    if len(pairs) == 1:
        return pairs[0]
    raise ConfigError("model.box: only one-parameter boxes are configurable (lo:hi)")


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_burn_in(text: str):
    return None if text.strip().lower() == "auto" else float(text)


# key -> (parser, help text with units). The parsed values are assembled into
# an ExperimentConfig; unknown keys are rejected by name.
CONFIG_KEYS = {
    "model.name": (str, "builtin model catalog name (fou, langevin-quartic, fou-multi)"),
    "model.dim": (int, "state dimension for fou-multi (dimensionless count)"),
    "model.box": (_parse_box, "parameter box lo:hi (parameter units)"),
    "model.theta0": (_parse_floats, "true drift parameter, comma separated (parameter units)"),
    "noise.h": (float, "Hurst index in (0,1) (dimensionless)"),
    "noise.sigma": (_parse_matrix, "diffusion matrix, rows ';' cols ',' (state units per time^H)"),
    "noise.estimate": (_parse_bool, "plug-in mode: estimate (H, |sigma|^2) before estimating theta"),
    "scheme.n": (_parse_ints, "observation counts, strictly increasing, comma separated"),
    "scheme.alpha": (float, "spacing exponent in (0,1): alpha_n = kappa*n^-alpha (dimensionless)"),
    "scheme.kappa": (float, "spacing scale kappa (time units)"),
    "sim.substeps": (int, "Euler substeps per observation gap (count)"),
    "sim.burn_in": (_parse_burn_in, "burn-in length (time units) or 'auto' (10 contraction times)"),
    "sim.y0": (_parse_floats, "initial state, comma separated (state units)"),
    "experiment.kinds": (lambda s: tuple(t.strip() for t in s.split(",") if t.strip()),
                         "experiments to run: consistency,limit,qv"),
    "experiment.replications": (int, "Monte Carlo replications per n (count)"),
    "experiment.seed": (int, "base seed; replication seeds are hash64(seed, n, rep)"),
    "experiment.outdir": (str, "output directory for records.jsonl/summary.csv/plotdata"),
    "experiment.tolerance": (float, "error tolerance for frac_within_tol (parameter units)"),
    "experiment.workers": (int, "worker pool size (default: available parallelism)"),
    "experiment.batch_size": (int, "replications simulated per vectorized batch (count)"),
    "experiment.theta_grid_points": (int, "theta grid size for the limit comparison (count)"),
    "experiment.oracle_horizon": (float, "ergodic oracle horizon (time units)"),
    "experiment.oracle_substeps": (int, "oracle Euler steps per time unit (count)"),
    "experiment.oracle_seeds": (int, "independent oracle trajectories to average (count)"),
    "experiment.qv_hs": (_parse_floats, "Hurst values for the QV rate experiment"),
    "experiment.qv_ns": (_parse_ints, "lengths for the QV rate experiment, increasing"),
    "experiment.qv_replications": (int, "replications per (H, n) in the QV experiment (count)"),
    "experiment.slope_tolerance": (float, "allowed |slope - target| in the QV experiment"),
}

_CONFIG_FIELD = {
    "model.name": "model_name",
    "model.theta0": "theta0",
    "noise.h": "h",
    "noise.sigma": "sigma",
    "noise.estimate": "estimate_noise",
    "scheme.n": "ns",
    "scheme.alpha": "alpha",
    "scheme.kappa": "kappa",
    "sim.substeps": "substeps",
    "sim.burn_in": "burn_in",
    "sim.y0": "y0",
    "experiment.kinds": "kinds",
    "experiment.replications": "replications",
    "experiment.seed": "base_seed",
    "experiment.outdir": "outdir",
    "experiment.tolerance": "tolerance",
    "experiment.workers": "workers",
    "experiment.batch_size": "batch_size",
    "experiment.theta_grid_points": "theta_grid_points",
    "experiment.oracle_horizon": "oracle_horizon",
    "experiment.oracle_substeps": "oracle_substeps",
    "experiment.oracle_seeds": "oracle_seeds",
    "experiment.qv_hs": "qv_hs",
    "experiment.qv_ns": "qv_ns",
    "experiment.qv_replications": "qv_replications",
    "experiment.slope_tolerance": "slope_tolerance",
}


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Parse flat key=value lines with # comments into a raw string map."""
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}: line {lineno}: expected 'key = value'")
        key, _, value = stripped.partition("=")
        key = key.strip()
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{source}: line {lineno}: unknown key {key!r}")
        raw[key] = value.strip()
    return raw


def build_experiment_config(raw: dict[str, str]) -> ExperimentConfig:
    config = ExperimentConfig()
    model_kwargs: dict = {}
    for key, text in raw.items():
        parser, _ = CONFIG_KEYS[key]
        try:
            value = parser(text)
        except (ValueError, ConfigError) as exc:
            raise ConfigError(f"{key}: cannot parse {text!r} ({exc})") from None
        if key == "model.dim":
            model_kwargs["dim"] = value
        elif key == "model.box":
            model_kwargs["box"] = value
        else:
            setattr(config, _CONFIG_FIELD[key], value)
    config.model_kwargs = model_kwargs
    return config


def _resolve_config_path(name: str) -> Path | None:
    path = Path(name)
    if path.exists():
        return path
    bundled = resources.files("zerosquares.data").joinpath(f"{name}.cfg")
    if bundled.is_file():
        return bundled  # type: ignore[return-value]
    return None


def _build_noise_from_args(args, dim: int) -> NoiseModel:
    if args.sigma is None:
        return NoiseModel.isotropic(args.h, dim)
    sigma = np.asarray(_parse_matrix(args.sigma), dtype=float)
    return NoiseModel(args.h, sigma)


def _model_from_args(args):
    kwargs = {}
    if getattr(args, "dim", None) is not None:
        kwargs["dim"] = args.dim
    if getattr(args, "box", None) is not None:
        kwargs["box"] = _parse_box(args.box)
    return get_model(args.model, **kwargs)


def cmd_simulate(args) -> int:
    try:
        model = _model_from_args(args)
        theta0 = np.asarray(_parse_floats(args.theta0), dtype=float)
        noise = _build_noise_from_args(args, model.dim)
        scheme = ObservationScheme(n=args.n, alpha=args.alpha, kappa=args.kappa)
        burn = default_burn_in(model, theta0) if args.burn_in is None else args.burn_in
        y0 = np.zeros(model.dim) if args.y0 is None else np.asarray(_parse_floats(args.y0))
        plan = SimulationPlan(scheme=scheme, substeps=args.substeps, burn_in=burn,
                              y0=y0, seed=args.seed)
    except (ValueError, UnknownModelName, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        record = simulate_path(model, theta0, noise, plan, keep_fine=False)
    except NonFinite as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SIMULATION
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    csv_path = out.with_suffix(".csv")
    json_path = out.with_suffix(".json")
    save_path(record, csv_path, json_path, hex_floats=args.hex_floats)
    print(f"n = {scheme.n}")
    print(f"T_n = {scheme.horizon:.17g}")
    print(f"alpha_n = {scheme.alpha_n:.17g}")
    print(f"y min = {record.obs_y.min():.17g}")
    print(f"y max = {record.obs_y.max():.17g}")
    print(f"wrote {csv_path} and {json_path}")
    return EXIT_OK


def cmd_estimate(args) -> int:
    try:
        model = _model_from_args(args)
        t, y, _ = load_path_csv(args.data)
        n = y.shape[1] - 1
        spacing = float(t[1] - t[0])
        scheme = ObservationScheme.from_spacing(n, spacing, alpha=args.alpha)
        if y.shape[0] != model.dim:
            raise ValueError(
                f"data has {y.shape[0]} state columns, model dimension is {model.dim}"
            )
        if args.estimate_h:
            noise: object = estimate_h_sigma(y, scheme)
        else:
            if args.h is None:
                raise ValueError("--h is required unless --estimate-h is given")
            noise = _build_noise_from_args(args, model.dim)
    except (ValueError, UnknownModelName, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        stat_input = StatisticInput(y, scheme, noise, model)
        result = zero_squares(stat_input, grid_points=args.grid_points, tol=args.tol)
        payload = {
            "model": args.model,
            "n": n,
            "alpha_n": scheme.alpha_n,
            "plugin_noise": bool(args.estimate_h),
            "zero_squares": {
                "theta_hat": [float(v) for v in result.theta_hat],
                "q_at_min": result.q_at_min,
                "iterations": result.iterations,
                "grid_stage_min": [float(v) for v in result.grid_stage_min],
                "converged": result.converged,
            },
        }
        if args.estimate_h:
            payload["h_sigma"] = {
                "h_hat": noise.h_hat,
                "sigma_norm_sq_hat": noise.sigma_norm_sq_hat,
                "scales_used": list(noise.scales_used),
            }
        if args.closed_form:
            cf = closed_form_fou(y, scheme, noise)
            payload["closed_form"] = {
                "theta_hat": cf.theta_hat,
                "theta_plus": cf.theta_plus,
                "discriminant": cf.discriminant,
                "clamped": cf.clamped,
            }
    except (EmptyBox, NonFiniteStatistic, DegeneratePath, ZeroVariation) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    print(json.dumps(payload, sort_keys=True))
    return EXIT_OK


def cmd_experiment(args) -> int:
    path = _resolve_config_path(args.config)
    if path is None:
        print(f"error: config {args.config!r} not found", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        raw = parse_config_text(path.read_text(), source=str(args.config))
        for override in args.set or []:
            key, _, value = override.partition("=")
            key = key.strip()
            if key not in CONFIG_KEYS:
                raise ConfigError(f"--set: unknown key {key!r}")
            raw[key] = value.strip()
        if args.seed is not None:
            raw["experiment.seed"] = str(args.seed)
        if args.outdir is not None:
            raw["experiment.outdir"] = args.outdir
        config = build_experiment_config(raw)
        if not config.kinds:
            raise ConfigError("experiment.kinds: at least one experiment is required")
        config.validate()
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    if config.outdir:
        outdir = Path(config.outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        echo = dict(sorted(raw.items()))
        (outdir / "config.echo.json").write_text(json.dumps(echo, indent=2) + "\n")
    results = run_campaign(config)
    failed = False
    for result in results:
        status = "PASS" if result.passed else "FAIL"
        failed = failed or not result.passed
        print(f"{status} {result.kind}")
    return EXIT_EXPERIMENT_FAILED if failed else EXIT_OK


def _config_keys_epilog() -> str:
    lines = ["experiment config keys (flat key = value lines, # comments):"]
    for key, (_, help_text) in CONFIG_KEYS.items():
        lines.append(f"  {key:36s} {help_text}")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="zerosquares",
        description="Zero-squares drift estimation for SDEs with additive fractional noise.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser(
        "simulate", help="simulate one observed path and write CSV + JSON sidecar"
    )
    sim.add_argument("--model", required=True, help="builtin model name")
    sim.add_argument("--dim", type=int, help="state dimension (fou-multi)")
    sim.add_argument("--box", help="parameter box lo:hi override (parameter units)")
    sim.add_argument("--theta0", required=True, help="true parameter, comma separated")
    sim.add_argument("--h", required=True, type=float, help="Hurst index in (0,1)")
    sim.add_argument("--sigma", help="diffusion matrix, rows ';' cols ',' (default identity)")
    sim.add_argument("--n", required=True, type=int, help="observation count (>= 2)")
    sim.add_argument("--alpha", required=True, type=float,
                     help="spacing exponent in (0,1); alpha_n = kappa*n^-alpha")
    sim.add_argument("--kappa", required=True, type=float, help="spacing scale (time units)")
    sim.add_argument("--substeps", type=int, default=8, help="Euler substeps per gap")
    sim.add_argument("--burn-in", type=float, default=None,
                     help="burn-in (time units); default 10 contraction times at theta0")
    sim.add_argument("--y0", help="initial state, comma separated (default zeros)")
    sim.add_argument("--seed", type=int, default=0, help="noise seed (64-bit)")
    sim.add_argument("--out", default="path", help="output prefix for .csv/.json")
    sim.add_argument("--hex-floats", action="store_true",
                     help="write hex floats instead of 17-digit decimals")
    sim.set_defaults(func=cmd_simulate)

    est = sub.add_parser("estimate", help="estimate the drift parameter from a path CSV")
    est.add_argument("--data", required=True, help="observation CSV (from simulate, or t,y1..)")
    est.add_argument("--model", required=True, help="builtin model name")
    est.add_argument("--dim", type=int, help="state dimension (fou-multi)")
    est.add_argument("--box", help="parameter box lo:hi override")
    est.add_argument("--h", type=float, help="Hurst index (known-noise mode)")
    est.add_argument("--sigma", help="diffusion matrix (default identity)")
    est.add_argument("--estimate-h", action="store_true",
                     help="plug-in mode: estimate (H, |sigma|^2) from quadratic variations")
    est.add_argument("--closed-form", action="store_true",
                     help="also report the closed-form fOU estimate (d=1, b=theta*x)")
    est.add_argument("--alpha", type=float, default=0.5,
                     help="scheme exponent used to back out kappa from the spacing")
    est.add_argument("--grid-points", type=int, default=33, help="grid stage points per axis")
    est.add_argument("--tol", type=float, default=1e-8, help="refinement simplex tolerance")
    est.add_argument("--seed", type=int, default=0,
                     help="accepted for interface uniformity; estimation is deterministic")
    est.set_defaults(func=cmd_estimate)

    exp = sub.add_parser(
        "experiment",
        help="run experiment campaigns from a key=value config",
        epilog=_config_keys_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    exp.add_argument("--config", required=True,
                     help="config file path, or a bundled profile name (ci-profile)")
    exp.add_argument("--set", action="append", metavar="KEY=VALUE",
                     help="override a config key (repeatable)")
    exp.add_argument("--seed", type=int, default=None, help="override experiment.seed")
    exp.add_argument("--outdir", default=None, help="override experiment.outdir")
    exp.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except NonFinite as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SIMULATION


if __name__ == "__main__":
    sys.exit(main())
