"""Estimators: the zero-squares argmin of |Q_n|, the closed-form fOU solver,
quadratic-variation estimation of (H, |sigma|^2), and ergodic limit curves.

The zero-squares search runs in two stages: a uniform grid over the parameter
box (ties broken by the lexicographically smallest grid index) followed by a
derivative-free Nelder-Mead refinement whose vertices are projected onto the
box, stopping when the simplex diameter drops below tolerance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fgn import HurstIndex
from .models import DriftModel, NoiseModel, ParameterBox
from .seeding import derive_seed
from .simulate import ObservationScheme, stationary_moments
from .statistic import StatisticInput, q_n

__all__ = [
    "EmptyBox",
    "NonFiniteStatistic",
    "DegeneratePath",
    "ZeroVariation",
    "EstimationResult",
    "FouClosedForm",
    "HSigmaEstimate",
    "zero_squares",
    "closed_form_fou",
    "estimate_h_sigma",
    "limit_curve",
    "brownian_limit_curve",
]


class EmptyBox(Exception):
    """Degenerate parameter box (no searchable interior)."""


class NonFiniteStatistic(Exception):
    """Q_n evaluated to NaN/Inf; carries the offending parameter."""

    def __init__(self, theta):
        self.theta = np.atleast_1d(np.asarray(theta, dtype=float))
        super().__init__(f"Q_n is not finite at theta = {self.theta}")


class DegeneratePath(Exception):
    """All observations vanish; the fOU normal equations are singular."""


class ZeroVariation(Exception):
    """The realized quadratic variation is zero; H cannot be estimated."""


@dataclass(frozen=True)
class EstimationResult:
    theta_hat: np.ndarray
    q_at_min: float
    iterations: int
    grid_stage_min: np.ndarray
    converged: bool


@dataclass(frozen=True)
class FouClosedForm:
    """Closed-form fOU estimate: the minus root of the sample quadratic.

    `theta_plus` is the other root (callers can log when it is also inside the
    parameter set); `clamped` flags a negative discriminant clamped to zero,
    which finite-sample noise can produce.
    """

    theta_hat: float
    theta_plus: float
    discriminant: float
    clamped: bool


@dataclass(frozen=True)
class HSigmaEstimate:
    """Quadratic-variation estimates of the Hurst index and noise intensity."""

    h_hat: float
    sigma_norm_sq_hat: float
    scales_used: tuple[float, float]

    @property
    def h(self) -> HurstIndex:
        # Duck-typed NoiseModel stand-in for plug-in statistic evaluation.
        return HurstIndex(self.h_hat)

    @property
    def sigma_norm_sq(self) -> float:
        return self.sigma_norm_sq_hat


def _objective(stat_input: StatisticInput):
    def f(theta: np.ndarray) -> float:
        value = q_n(stat_input, theta)
        if not math.isfinite(value):
            raise NonFiniteStatistic(theta)
        return abs(value)

    return f


def _simplex_diameter(points: list[np.ndarray]) -> float:
    return max(
        float(np.linalg.norm(p - q))
        for i, p in enumerate(points)
        for q in points[i + 1 :]
    )


def _nelder_mead_box(f, x0: np.ndarray, box: ParameterBox, tol: float, max_iter: int):
    """Nelder-Mead with vertices projected onto the box.

    Returns (best_x, best_f, iterations, converged); never returns a point
    worse than x0.
    """
    q = box.dim
    pts = [box.project(x0)]
    for i in range(q):
        step = 0.05 * box.widths[i]
        x = pts[0].copy()
        x[i] = x[i] + step if x[i] + step <= box.upper[i] else x[i] - step
        pts.append(box.project(x))
    vals = [f(p) for p in pts]
    iterations = 0
    converged = False
    while iterations < max_iter:
        order = np.argsort(vals, kind="stable")
        pts = [pts[i] for i in order]
        vals = [vals[i] for i in order]
        if _simplex_diameter(pts) < tol:
            converged = True
            break
        iterations += 1
        centroid = np.mean(pts[:-1], axis=0)
        worst = pts[-1]
        reflected = box.project(centroid + (centroid - worst))
        fr = f(reflected)
        if fr < vals[0]:
            expanded = box.project(centroid + 2.0 * (centroid - worst))
            fe = f(expanded)
            if fe < fr:
                pts[-1], vals[-1] = expanded, fe
            else:
                pts[-1], vals[-1] = reflected, fr
        elif fr < vals[-2]:
            pts[-1], vals[-1] = reflected, fr
        else:
            contracted = box.project(centroid + 0.5 * (worst - centroid))
            fc = f(contracted)
            if fc < vals[-1]:
                pts[-1], vals[-1] = contracted, fc
            else:
                pts = [pts[0]] + [box.project(pts[0] + 0.5 * (p - pts[0])) for p in pts[1:]]
                vals = [vals[0]] + [f(p) for p in pts[1:]]
    best = int(np.argmin(vals))
    return pts[best], vals[best], iterations, converged


def zero_squares(
    stat_input: StatisticInput,
    *,
    grid_points: int = 33,
    tol: float = 1e-8,
    max_iter: int = 500,
) -> EstimationResult:
    """Minimize |Q_n(theta)| over the model's parameter box (grid + refinement)."""
    box = stat_input.model.box
    if not np.all(box.upper > box.lower):
        raise EmptyBox(f"degenerate box {box.lower} .. {box.upper}")
    f = _objective(stat_input)
    grid = box.grid(grid_points)
    best_idx = 0
    best_val = math.inf
    for i, theta in enumerate(grid):
        value = f(theta)
        if value < best_val:
            best_idx, best_val = i, value
    grid_min = grid[best_idx]
    theta_hat, val, iterations, converged = _nelder_mead_box(f, grid_min, box, tol, max_iter)
    if val > best_val:
        theta_hat, val = grid_min, best_val
    return EstimationResult(
        theta_hat=theta_hat,
        q_at_min=q_n(stat_input, theta_hat),
        iterations=iterations,
        grid_stage_min=grid_min,
        converged=converged,
    )


def closed_form_fou(obs_y: np.ndarray, scheme: ObservationScheme, noise) -> FouClosedForm:
    """Explicit fOU estimator for d=1, b(x; theta) = theta*x.

    Solves the sample quadratic 0 = theta^2*S2*alpha_n^2 - 2*theta*alpha_n*S1
    + S3 with S1 = sum Y_k dY_k, S2 = sum Y_k^2, S3 = sum(|dY_k|^2 -
    |sigma|^2 alpha_n^{2H}), returning the minus root. A negative discriminant
    (possible in small samples) is clamped to zero and flagged.
    """
    obs = np.asarray(obs_y, dtype=float)
    if obs.ndim == 2:
        if obs.shape[0] != 1:
            raise ValueError("closed_form_fou requires a one-dimensional path")
        obs = obs[0]
    if obs.shape[0] != scheme.n + 1:
        raise ValueError(f"expected {scheme.n + 1} observations, got {obs.shape[0]}")
    hv = noise.h.value if hasattr(noise.h, "value") else float(noise.h)
    ssq = float(noise.sigma_norm_sq)
    an = scheme.alpha_n
    y = obs[:-1]
    dy = np.diff(obs)
    s1 = math.fsum(y * dy)
    s2 = math.fsum(y * y)
    s3 = math.fsum(dy * dy - ssq * an ** (2.0 * hv))
    if s2 == 0.0:
        raise DegeneratePath("all observations are zero (S2 = 0)")
    center = s1 / (s2 * an)
    disc = center * center - s3 / (s2 * an * an)
    clamped = disc < 0.0
    root = math.sqrt(max(disc, 0.0))
    return FouClosedForm(
        theta_hat=center - root,
        theta_plus=center + root,
        discriminant=disc,
        clamped=clamped,
    )


def estimate_h_sigma(obs_y: np.ndarray, scheme: ObservationScheme) -> HSigmaEstimate:
    """Estimate (H, |sigma|^2) from quadratic variations at two spacings.

    V1 sums squared increments at spacing alpha_n over n steps, V2 at spacing
    2*alpha_n over floor(n/2) steps; self-similarity gives V2/V1 ~ 2^{2H-1},
    inverted as h_hat = (1 + log2(V2/V1))/2 and clamped to [0.01, 0.99].
    """
    if scheme.n < 4:
        raise ValueError("estimate_h_sigma needs n >= 4")
    obs = np.atleast_2d(np.asarray(obs_y, dtype=float))
    if obs.shape[1] != scheme.n + 1:
        raise ValueError(f"expected {scheme.n + 1} observations, got {obs.shape[1]}")
    an = scheme.alpha_n
    d1 = np.diff(obs.T, axis=0)
    v1 = math.fsum(np.einsum("kd,kd->k", d1, d1))
    pairs = obs.T[::2]
    d2 = np.diff(pairs, axis=0)[: scheme.n // 2]
    v2 = math.fsum(np.einsum("kd,kd->k", d2, d2))
    if v1 == 0.0:
        raise ZeroVariation("quadratic variation V1 is zero")
    h_hat = 0.5 * (1.0 + math.log2(v2 / v1))
    h_hat = min(max(h_hat, 0.01), 0.99)
    sigma_norm_sq_hat = v1 / (scheme.n * an ** (2.0 * h_hat))
    return HSigmaEstimate(
        h_hat=h_hat,
        sigma_norm_sq_hat=sigma_norm_sq_hat,
        scales_used=(an, 2.0 * an),
    )


def _limit_curve(
    model: DriftModel,
    theta0,
    noise: NoiseModel,
    thetas,
    *,
    brownian: bool,
    horizon: float,
    substeps_per_unit: int,
    seeds: int,
    base_seed: int,
    burn_in: float | None,
) -> np.ndarray:
    theta0 = np.atleast_1d(np.asarray(theta0, dtype=float))
    theta_list = [np.atleast_1d(np.asarray(t, dtype=float)) for t in thetas]
    for theta in theta_list:
        if not model.box.contains(theta):
            raise ValueError(f"theta {theta} lies outside the model box")

    def sq_norm(theta):
        return lambda x: np.einsum("...d,...d->...", model.b(x, theta), model.b(x, theta))

    def sq_diff(theta):
        def g(x):
            diff = model.b(x, theta) - model.b(x, theta0)
            return np.einsum("...d,...d->...", diff, diff)

        return g

    if brownian:
        gs = [sq_diff(theta) for theta in theta_list]
    else:
        gs = [sq_norm(theta0)] + [sq_norm(theta) for theta in theta_list]
    per_seed = []
    for i in range(seeds):
        seed = derive_seed(base_seed, "limit-oracle", i)
        averages = stationary_moments(
            model, theta0, noise, gs, horizon, substeps_per_unit,
            seed=seed, burn_in=burn_in,
        )
        if brownian:
            per_seed.append(np.asarray(averages))
        else:
            base = averages[0]
            per_seed.append(np.asarray(averages[1:]) - base)
    return np.mean(per_seed, axis=0)


def limit_curve(
    model: DriftModel,
    theta0,
    noise: NoiseModel,
    thetas,
    *,
    horizon: float = 5e3,
    substeps_per_unit: int = 16,
    seeds: int = 8,
    base_seed: int = 0,
    burn_in: float | None = None,
) -> np.ndarray:
    """Ergodic-oracle values of the H>1/2 limit of Q_n on a parameter list:

    L(theta) = E|b(Ybar; theta)|^2 - E|b(Ybar; theta0)|^2.

    Each expectation is a long-run time average (stationary_moments), averaged
    over `seeds` independent trajectories. L vanishes exactly at theta0 and its
    unique zero there is the empirical identifiability check.
    """
    return _limit_curve(
        model, theta0, noise, thetas, brownian=False,
        horizon=horizon, substeps_per_unit=substeps_per_unit,
        seeds=seeds, base_seed=base_seed, burn_in=burn_in,
    )


def brownian_limit_curve(
    model: DriftModel,
    theta0,
    noise: NoiseModel,
    thetas,
    *,
    horizon: float = 5e3,
    substeps_per_unit: int = 16,
    seeds: int = 8,
    base_seed: int = 0,
    burn_in: float | None = None,
) -> np.ndarray:
    """H=1/2 analogue for the centered statistic Q_n(theta) - Q_n(theta0):

    L_bm(theta) = E|b(Ybar; theta0) - b(Ybar; theta)|^2.
    """
    return _limit_curve(
        model, theta0, noise, thetas, brownian=True,
        horizon=horizon, substeps_per_unit=substeps_per_unit,
        seeds=seeds, base_seed=base_seed, burn_in=burn_in,
    )
