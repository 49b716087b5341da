"""The Q_n statistic, its decomposition, and quadratic-variation behavior."""

import math

import numpy as np
import pytest

from zerosquares.fgn import FgnSpec, sample_fgn
from zerosquares.models import NoiseModel, get_model
from zerosquares.simulate import ObservationScheme, SimulationPlan, simulate_path
from zerosquares.statistic import (
    MissingFineGrid,
    StatisticInput,
    decompose,
    q_n,
    qv_statistic,
    residual_terms,
)

from .test_simulate import zero_drift_model


def unit_scheme(n):
    """Scheme with alpha_n = 1 exactly."""
    return ObservationScheme.from_spacing(n, 1.0)


def fou_sim(n=256, h=0.7, theta0=-1.0, seed=0, substeps=8, burn_in=10.0,
            alpha=0.5, kappa=1.0, keep_fine=True):
    model = get_model("fou")
    noise = NoiseModel.scalar(h, 1.0)
    scheme = ObservationScheme(n=n, alpha=alpha, kappa=kappa)
    plan = SimulationPlan(scheme=scheme, substeps=substeps, burn_in=burn_in, seed=seed)
    rec = simulate_path(model, [theta0], noise, plan, keep_fine=keep_fine)
    return model, noise, scheme, rec


class TestQn:
    def test_hand_example(self):
        # n=2, d=1, alpha_n=1, H=0.5, |sigma|^2=1, obs=(1, 0.5, 0.6), theta=0:
        # 0.5*((0.25-1) + (0.01-1)) = -0.87
        si = StatisticInput(
            np.array([[1.0, 0.5, 0.6]]), unit_scheme(2),
            NoiseModel.scalar(0.5, 1.0), get_model("fou"),
        )
        assert q_n(si, [0.0]) == pytest.approx(-0.87, abs=1e-12)

    def test_exact_drift_leaves_only_noise_correction(self):
        # Construct obs with b(Y_k; theta)*alpha_n == dY_k for every k:
        # Y_{k+1} = 2 Y_k with theta = 1, alpha_n = 1.
        model = get_model("fou", box=(0.5, 2.0))
        h = 0.7
        obs = np.array([[1.0, 2.0, 4.0, 8.0]])
        scheme = unit_scheme(3)
        si = StatisticInput(obs, scheme, NoiseModel.scalar(h, 1.0), model)
        expected = -1.0 * scheme.alpha_n ** (2 * h - 2)
        assert q_n(si, [1.0]) == pytest.approx(expected, rel=1e-14)

    def test_quadratic_in_theta(self):
        # For b = theta*h(x) the statistic is an exact quadratic in theta:
        # fit three points, predict a fourth to 1e-10 relative accuracy.
        model, noise, scheme, rec = fou_sim(n=128, seed=5)
        si = StatisticInput(rec.obs_y, scheme, noise, model)
        ts = [-2.5, -1.5, -0.5, -0.3]
        vals = [q_n(si, [t]) for t in ts]
        coeffs = np.polyfit(ts[:3], vals[:3], 2)
        predicted = float(np.polyval(coeffs, ts[3]))
        assert predicted == pytest.approx(vals[3], rel=1e-10)

    def test_theta_outside_box_is_callers_problem(self):
        # q_n evaluates wherever asked; box enforcement is the estimator's job.
        model, noise, scheme, rec = fou_sim(n=64, seed=6)
        si = StatisticInput(rec.obs_y, scheme, noise, model)
        assert math.isfinite(q_n(si, [-10.0]))

    def test_input_validation(self):
        with pytest.raises(ValueError):
            StatisticInput(
                np.zeros((1, 5)), unit_scheme(3),
                NoiseModel.scalar(0.7, 1.0), get_model("fou"),
            )
        with pytest.raises(ValueError):
            StatisticInput(
                np.zeros((2, 4)), unit_scheme(3),
                NoiseModel.scalar(0.7, 1.0), get_model("fou"),
            )


class TestQvStatistic:
    def test_exact_increments_vanish(self):
        # Increments of squared norm exactly |sigma|^2 alpha_n^{2H} give 0.
        h = 0.7
        scheme = ObservationScheme(n=4, alpha=0.5, kappa=1.0)
        step = math.sqrt(scheme.alpha_n ** (2 * h))
        obs = np.array([[0.0, step, 2 * step, step, 0.0]])
        assert qv_statistic(obs, scheme, NoiseModel.scalar(h, 1.0)) == pytest.approx(
            0.0, abs=1e-14
        )

    def test_single_term(self):
        # One increment of 2, |sigma|^2 = 1, alpha_n = 1: (4-1)/1 = 3.
        scheme = ObservationScheme.from_spacing(2, 1.0)
        obs = np.array([[0.0, 2.0, 2.0]])
        value = qv_statistic(obs, scheme, NoiseModel.scalar(0.9, 1.0))
        # second increment contributes (0 - 1): total (3 - 1)/2
        assert value == pytest.approx((3.0 - 1.0) / 2.0, abs=1e-14)

    def test_bm1_variance_rate(self):
        # H=0.7 < 3/4: Var[(1/n) sum(|dB|^2 - 1)] ~ c/n; the log-log slope of
        # the empirical second moment sits in [-1.3, -0.7].
        h = 0.7
        ns = [2**8, 2**9, 2**10, 2**11, 2**12]
        mean_sq = []
        for n in ns:
            vals = []
            for r in range(300):
                z = sample_fgn(FgnSpec(h, 1.0, n, seed=1000 * n + r))[0]
                vals.append(math.fsum(z * z - 1.0) / n)
            mean_sq.append(np.mean(np.square(vals)))
        slope = float(np.polyfit(np.log(ns), np.log(mean_sq), 1)[0])
        assert -1.3 <= slope <= -0.7, slope

    def test_off_diagonal_trick(self):
        # The cross sum over two independent components has the same variance
        # as half the difference of two independent QV sums.
        h, n, reps = 0.7, 256, 800
        cross, diff = [], []
        for r in range(reps):
            b = sample_fgn(FgnSpec(h, 1.0, n, dims=2, seed=r))
            cross.append(float(np.sum(b[0] * b[1])))
            c = sample_fgn(FgnSpec(h, 1.0, n, dims=2, seed=10_000 + r))
            diff.append(0.5 * (float(np.sum(c[0] ** 2)) - float(np.sum(c[1] ** 2))))
        cross, diff = np.asarray(cross), np.asarray(diff)
        var_cross, var_diff = cross.var(ddof=1), diff.var(ddof=1)
        # SE of a variance estimate: var * sqrt(2/(reps-1)), combined in quadrature.
        se = math.sqrt(2.0 / (reps - 1)) * math.hypot(var_cross, var_diff)
        assert abs(var_cross - var_diff) <= 3 * se


class TestDecomposition:
    def test_at_true_parameter_q1_q2_vanish(self):
        model, noise, scheme, rec = fou_sim(n=64, seed=7)
        si = StatisticInput(rec.obs_y, scheme, noise, model)
        dec = decompose(si, [-1.0], [-1.0], rec)
        assert dec.q1 == 0.0
        assert dec.q2 == 0.0

    def test_zero_drift_residual_is_exactly_zero(self):
        # b == 0 truth and b == 0 candidate: q equals q3 bitwise, residual 0.
        model = zero_drift_model()
        noise = NoiseModel.scalar(0.7, 1.0)
        scheme = ObservationScheme(n=64, alpha=0.5, kappa=1.0)
        plan = SimulationPlan(scheme=scheme, substeps=4, burn_in=0.0, seed=8)
        rec = simulate_path(model, [0.0], noise, plan)
        si = StatisticInput(rec.obs_y, scheme, noise, model)
        dec = decompose(si, [0.5], [0.0], rec)
        assert dec.residual == 0.0
        assert dec.q == dec.q3

    def test_identity_matches_recomputed_r_terms(self):
        model, noise, scheme, rec = fou_sim(n=256, seed=9)
        si = StatisticInput(rec.obs_y, scheme, noise, model)
        for theta in (-2.0, -0.5):
            dec = decompose(si, [theta], [-1.0], rec)
            rt = residual_terms(rec, model, [theta], [-1.0])
            scale = max(abs(dec.residual), abs(dec.q), 1e-30)
            assert abs(dec.residual - rt.total) <= 1e-10 * scale

    def test_requires_fine_grid(self):
        model, noise, scheme, rec = fou_sim(n=32, seed=10, keep_fine=False)
        si = StatisticInput(rec.obs_y, scheme, noise, model)
        with pytest.raises(MissingFineGrid):
            decompose(si, [-2.0], [-1.0], rec)
        with pytest.raises(MissingFineGrid):
            residual_terms(rec, model, [-2.0], [-1.0])

    def test_residual_magnitude_and_decay(self):
        # The finite-n residual is dominated by the theta-independent cross
        # term ~ theta0 * alpha_n^{2H-1} (negative here); it shrinks with n.
        medians = {}
        for n in (2**10, 2**12):
            vals = []
            for r in range(12):
                model, noise, scheme, rec = fou_sim(n=n, seed=100 + r)
                si = StatisticInput(rec.obs_y, scheme, noise, model)
                vals.append(decompose(si, [-2.0], [-1.0], rec).residual)
            medians[n] = float(np.median(vals))
            an = scheme.alpha_n
            predicted = -(an ** (2 * 0.7 - 1.0))
            assert medians[n] < 0.0
            assert abs(medians[n]) <= 2.0 * abs(predicted)
        assert abs(medians[2**12]) < abs(medians[2**10])

    def test_decomposition_identity_multidimensional(self):
        model = get_model("fou-multi", dim=2)
        noise = NoiseModel.isotropic(0.7, 2)
        scheme = ObservationScheme(n=128, alpha=0.5, kappa=1.0)
        plan = SimulationPlan(scheme=scheme, substeps=4, burn_in=5.0,
                              y0=np.zeros(2), seed=11)
        rec = simulate_path(model, [-1.0], noise, plan)
        si = StatisticInput(rec.obs_y, scheme, noise, model)
        dec = decompose(si, [-2.0], [-1.0], rec)
        rt = residual_terms(rec, model, [-2.0], [-1.0])
        scale = max(abs(dec.residual), abs(dec.q), 1e-30)
        assert abs(dec.residual - rt.total) <= 1e-10 * scale
