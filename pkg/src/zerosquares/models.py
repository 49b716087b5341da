"""Parametric gradient-type drift families and numerical hypothesis checkers.

A drift model bundles vectorized evaluators for b(x; theta), its state and
parameter Jacobians, and the potential U with dU/dx = b, together with the
compact parameter box the estimator searches. The regularity conditions the
estimator relies on (dissipativity, gradient structure, Jacobian consistency)
are global analytic statements, so they are enforced statistically: sampled
checkers that a model must pass before the library trusts it.

Evaluators take states of shape (..., d) and broadcast over leading axes; the
parameter is always a 1-d vector of length q.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .fgn import HurstIndex

__all__ = [
    "UnknownModelName",
    "ParameterBox",
    "DriftModel",
    "NoiseModel",
    "DissipativityReport",
    "GradientTypeReport",
    "JacobianReport",
    "check_dissipativity",
    "check_gradient_type",
    "check_jacobians",
    "builtin_models",
    "get_model",
]

_DEGENERATE_PAIR_TOL = 1e-12


class UnknownModelName(KeyError):
    """Requested model name is not in the builtin catalog."""


@dataclass(frozen=True)
class ParameterBox:
    """Axis-aligned compact parameter box with nonempty interior."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self) -> None:
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.ndim != 1 or lo.shape != hi.shape:
            raise ValueError("box bounds must be 1-d vectors of equal length")
        if not (np.isfinite(lo).all() and np.isfinite(hi).all()):
            raise ValueError("box bounds must be finite")
        if not np.all(lo < hi):
            raise ValueError(f"box must satisfy lower < upper, got {lo} .. {hi}")
        lo.flags.writeable = False
        hi.flags.writeable = False
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def widths(self) -> np.ndarray:
        return self.upper - self.lower

    def contains(self, theta) -> bool:
        t = np.atleast_1d(np.asarray(theta, dtype=float))
        return bool(np.all(t >= self.lower) and np.all(t <= self.upper))

    def project(self, theta) -> np.ndarray:
        return np.clip(np.atleast_1d(np.asarray(theta, dtype=float)), self.lower, self.upper)

    def grid(self, points_per_axis: int) -> np.ndarray:
        """Uniform grid over the box, shape (points^q, q), in lexicographic order."""
        if points_per_axis < 1:
            raise ValueError("points_per_axis must be >= 1")
        axes = [np.linspace(lo, hi, points_per_axis) for lo, hi in zip(self.lower, self.upper)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def sample(self, rng: np.random.Generator, count: int = 1) -> np.ndarray:
        return rng.uniform(self.lower, self.upper, size=(count, self.dim))


@dataclass(frozen=True)
class DriftModel:
    """Gradient-type drift family b(x; theta) with potential and Jacobians.

    All evaluators must be pure and broadcast over leading state axes:
      b(x, theta)         (..., d) -> (..., d)
      jac_x(x, theta)     (..., d) -> (..., d, d)
      jac_theta(x, theta) (..., d) -> (..., d, q)
      potential(x, theta) (..., d) -> (...)
    """

    name: str
    dim: int
    param_dim: int
    box: ParameterBox
    b: Callable[[np.ndarray, np.ndarray], np.ndarray]
    jac_x: Callable[[np.ndarray, np.ndarray], np.ndarray]
    jac_theta: Callable[[np.ndarray, np.ndarray], np.ndarray]
    potential: Callable[[np.ndarray, np.ndarray], np.ndarray]

    def __post_init__(self) -> None:
        if self.box.dim != self.param_dim:
            raise ValueError(
                f"box dimension {self.box.dim} != param_dim {self.param_dim}"
            )


@dataclass(frozen=True)
class NoiseModel:
    """Additive noise: Hurst index plus the d x m matrix of diffusion columns."""

    h: HurstIndex
    sigma: np.ndarray

    def __post_init__(self) -> None:
        if not isinstance(self.h, HurstIndex):
            object.__setattr__(self, "h", HurstIndex(float(self.h)))
        sig = np.atleast_2d(np.asarray(self.sigma, dtype=float))
        if sig.ndim != 2 or not np.isfinite(sig).all():
            raise ValueError("sigma must be a finite d x m matrix")
        sig.flags.writeable = False
        object.__setattr__(self, "sigma", sig)

    @property
    def dim(self) -> int:
        return self.sigma.shape[0]

    @property
    def m(self) -> int:
        return self.sigma.shape[1]

    @property
    def sigma_norm_sq(self) -> float:
        # Recomputed on access rather than stored: cannot drift out of sync.
        return float(np.sum(self.sigma * self.sigma))

    @classmethod
    def scalar(cls, h, sigma: float = 1.0) -> "NoiseModel":
        return cls(h, np.array([[float(sigma)]]))

    @classmethod
    def isotropic(cls, h, dim: int, sigma: float = 1.0) -> "NoiseModel":
        return cls(h, float(sigma) * np.eye(dim))


@dataclass(frozen=True)
class DissipativityReport:
    max_ratio: float
    passed: bool
    pairs_used: int


@dataclass(frozen=True)
class GradientTypeReport:
    max_abs_err: float
    passed: bool


@dataclass(frozen=True)
class JacobianReport:
    max_err_x: float
    max_err_theta: float
    passed: bool


def _ball_sample(rng: np.random.Generator, count: int, dim: int, radius: float) -> np.ndarray:
    u = rng.standard_normal((count, dim))
    norms = np.linalg.norm(u, axis=-1, keepdims=True)
    norms[norms == 0] = 1.0
    radii = radius * rng.random((count, 1)) ** (1.0 / dim)
    return u / norms * radii


def check_dissipativity(
    model: DriftModel,
    sample_count: int = 256,
    radius: float = 5.0,
    c1_floor: float = 0.0,
    *,
    theta_points: int = 5,
    thetas=None,
    seed: int = 0,
) -> DissipativityReport:
    """Sampled check of the inward condition <b(x)-b(y), x-y> <= -c1 |x-y|^2.

    Draws random pairs in the ball of the given radius and scans parameters on
    a grid over the box (or the explicit `thetas`); reports the worst observed
    ratio <b(x)-b(y), x-y>/|x-y|^2 and whether it stays below -c1_floor.
    Pairs closer than 1e-12 are degenerate and skipped.
    """
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    if not radius > 0:
        raise ValueError("radius must be positive")
    rng = np.random.default_rng(seed)
    x = _ball_sample(rng, sample_count, model.dim, radius)
    y = _ball_sample(rng, sample_count, model.dim, radius)
    gap = x - y
    dist_sq = np.sum(gap * gap, axis=-1)
    keep = dist_sq >= _DEGENERATE_PAIR_TOL**2
    x, y, gap, dist_sq = x[keep], y[keep], gap[keep], dist_sq[keep]
    if thetas is None:
        thetas = model.box.grid(theta_points)
    worst = -np.inf
    for theta in np.atleast_2d(np.asarray(thetas, dtype=float)):
        num = np.sum((model.b(x, theta) - model.b(y, theta)) * gap, axis=-1)
        worst = max(worst, float(np.max(num / dist_sq)))
    return DissipativityReport(worst, worst <= -c1_floor, int(keep.sum()))


def check_gradient_type(
    model: DriftModel,
    sample_count: int = 200,
    tol: float = 1e-5,
    *,
    fd_step: float = 1e-4,
    radius: float = 3.0,
    thetas=None,
    seed: int = 0,
) -> GradientTypeReport:
    """Check dU/dx = b by central finite differences of the potential."""
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    if not tol > 0:
        raise ValueError("tol must be positive")
    rng = np.random.default_rng(seed)
    xs = _ball_sample(rng, sample_count, model.dim, radius)
    if thetas is None:
        thetas = model.box.sample(rng, sample_count)
        theta_for = lambda i: thetas[i]
    else:
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        theta_for = lambda i: thetas[i % len(thetas)]
    worst = 0.0
    for i, x in enumerate(xs):
        theta = theta_for(i)
        bx = model.b(x, theta)
        for k in range(model.dim):
            e = np.zeros(model.dim)
            e[k] = fd_step
            fd = (model.potential(x + e, theta) - model.potential(x - e, theta)) / (2 * fd_step)
            worst = max(worst, abs(float(fd) - float(bx[k])))
    return GradientTypeReport(worst, worst <= tol)


def check_jacobians(
    model: DriftModel,
    sample_count: int = 100,
    tol: float = 1e-5,
    *,
    fd_step: float = 1e-4,
    radius: float = 3.0,
    seed: int = 0,
) -> JacobianReport:
    """Check jac_x and jac_theta against central finite differences of b."""
    rng = np.random.default_rng(seed)
    xs = _ball_sample(rng, sample_count, model.dim, radius)
    thetas = model.box.sample(rng, sample_count)
    worst_x = 0.0
    worst_t = 0.0
    for x, theta in zip(xs, thetas):
        jx = np.asarray(model.jac_x(x, theta))
        for k in range(model.dim):
            e = np.zeros(model.dim)
            e[k] = fd_step
            fd = (model.b(x + e, theta) - model.b(x - e, theta)) / (2 * fd_step)
            worst_x = max(worst_x, float(np.max(np.abs(fd - jx[..., :, k]))))
        jt = np.asarray(model.jac_theta(x, theta))
        for k in range(model.param_dim):
            e = np.zeros(model.param_dim)
            e[k] = fd_step
            fd = (model.b(x, theta + e) - model.b(x, theta - e)) / (2 * fd_step)
            worst_t = max(worst_t, float(np.max(np.abs(fd - jt[..., :, k]))))
    return JacobianReport(worst_x, worst_t, max(worst_x, worst_t) <= tol)


def _theta_eye(x: np.ndarray, theta: np.ndarray, dim: int) -> np.ndarray:
    out = np.zeros(np.shape(x)[:-1] + (dim, dim))
    out[...] = theta[0] * np.eye(dim)
    return out


def make_fou(box=(-3.0, -0.1)) -> DriftModel:
    """Linear mean-reverting drift b(x; theta) = theta * x in one dimension."""
    return make_fou_multi(dim=1, box=box, name="fou")


def make_fou_multi(dim: int = 2, box=(-3.0, -0.1), name: str = "fou-multi") -> DriftModel:
    """Componentwise linear drift b(x; theta) = theta * x in d dimensions."""
    lo, hi = box
    return DriftModel(
        name=name,
        dim=dim,
        param_dim=1,
        box=ParameterBox(np.array([lo]), np.array([hi])),
        b=lambda x, th: th[0] * np.asarray(x, dtype=float),
        jac_x=lambda x, th: _theta_eye(np.asarray(x), th, dim),
        jac_theta=lambda x, th: np.asarray(x, dtype=float)[..., :, None],
        potential=lambda x, th: th[0] * 0.5 * np.sum(np.asarray(x, dtype=float) ** 2, axis=-1),
    )


def make_langevin_quartic(box=(0.1, 3.0)) -> DriftModel:
    """Double-well-free quartic Langevin drift b(x; theta) = -theta*(x + x^3)."""
    lo, hi = box

    def b(x, th):
        x = np.asarray(x, dtype=float)
        return -th[0] * (x + x**3)

    def jac_x(x, th):
        x = np.asarray(x, dtype=float)
        return (-th[0] * (1.0 + 3.0 * x**2))[..., :, None]

    def jac_theta(x, th):
        x = np.asarray(x, dtype=float)
        return (-(x + x**3))[..., :, None]

    def potential(x, th):
        x = np.asarray(x, dtype=float)
        return -th[0] * np.sum(x**2 / 2.0 + x**4 / 4.0, axis=-1)

    return DriftModel(
        name="langevin-quartic",
        dim=1,
        param_dim=1,
        box=ParameterBox(np.array([lo]), np.array([hi])),
        b=b,
        jac_x=jac_x,
        jac_theta=jac_theta,
        potential=potential,
    )


def builtin_models() -> dict[str, Callable[..., DriftModel]]:
    """Catalog of named model constructors; keys are stable CLI identifiers."""
    return {
        "fou": make_fou,
        "langevin-quartic": make_langevin_quartic,
        "fou-multi": make_fou_multi,
    }


def get_model(name: str, **kwargs) -> DriftModel:
    """Construct a builtin model by catalog name."""
    catalog = builtin_models()
    try:
        factory = catalog[name]
    except KeyError:
        raise UnknownModelName(
            f"unknown model {name!r}; available: {sorted(catalog)}"
        ) from None
    return factory(**kwargs)
