"""Euler integration, burn-in, ergodic averages, and path serialization."""

import math

import numpy as np
import pytest

from zerosquares.fgn import FgnSpec, cumulate, sample_fgn
from zerosquares.models import DriftModel, NoiseModel, ParameterBox, get_model
from zerosquares.simulate import (
    NonFinite,
    ObservationScheme,
    SimulationPlan,
    default_burn_in,
    load_path_csv,
    save_path,
    simulate_batch,
    simulate_path,
    stationary_moment,
    stationary_moments,
)


def zero_drift_model(dim=1):
    box = ParameterBox(np.array([-1.0]), np.array([1.0]))
    return DriftModel(
        name="zero",
        dim=dim,
        param_dim=1,
        box=box,
        b=lambda x, th: np.zeros_like(np.asarray(x, dtype=float)),
        jac_x=lambda x, th: np.zeros(np.shape(x) + (dim,)),
        jac_theta=lambda x, th: np.zeros(np.shape(x) + (1,)),
        potential=lambda x, th: np.zeros(np.shape(x)[:-1]),
    )


class TestObservationScheme:
    def test_spacing_and_horizon(self):
        scheme = ObservationScheme(n=1024, alpha=0.5, kappa=2.0)
        assert scheme.alpha_n == 2.0 * 1024**-0.5
        assert scheme.horizon == scheme.n * scheme.alpha_n
        times = scheme.times()
        assert times.shape == (1025,)
        assert times[-1] == pytest.approx(scheme.horizon, rel=1e-15)

    def test_from_spacing_roundtrip(self):
        scheme = ObservationScheme.from_spacing(256, 0.125, alpha=0.4)
        assert scheme.alpha_n == pytest.approx(0.125, rel=1e-14)

    @pytest.mark.parametrize("kwargs", [
        dict(n=1, alpha=0.5, kappa=1.0),
        dict(n=16, alpha=0.0, kappa=1.0),
        dict(n=16, alpha=1.0, kappa=1.0),
        dict(n=16, alpha=0.5, kappa=0.0),
    ])
    def test_validation(self, kwargs):
        with pytest.raises(ValueError):
            ObservationScheme(**kwargs)


class TestSimulationPlan:
    def test_fine_step_and_burn_steps(self):
        scheme = ObservationScheme(n=64, alpha=0.5, kappa=1.0)
        plan = SimulationPlan(scheme=scheme, substeps=8, burn_in=5.0)
        assert plan.fine_step == scheme.alpha_n / 8
        assert plan.burn_steps == math.ceil(5.0 / plan.fine_step)
        assert SimulationPlan(scheme=scheme, burn_in=0.0).burn_steps == 0

    def test_validation(self):
        scheme = ObservationScheme(n=64, alpha=0.5, kappa=1.0)
        with pytest.raises(ValueError):
            SimulationPlan(scheme=scheme, substeps=0)
        with pytest.raises(ValueError):
            SimulationPlan(scheme=scheme, burn_in=-1.0)


class TestEulerPaths:
    def test_pure_noise_integral(self):
        # b == 0, sigma = 1, y0 = 0, no burn-in: obs_y - y0 equals obs_noise exactly.
        model = zero_drift_model()
        scheme = ObservationScheme(n=128, alpha=0.5, kappa=1.0)
        plan = SimulationPlan(scheme=scheme, substeps=4, burn_in=0.0, seed=3)
        rec = simulate_path(model, [0.0], NoiseModel.scalar(0.7, 1.0), plan)
        assert np.array_equal(rec.obs_y, rec.obs_noise)

    def test_deterministic_drift_matches_exponential(self):
        # sigma = 0, fOU theta0 = -1, y0 = 1: global Euler error is O(fine step).
        model = get_model("fou")
        scheme = ObservationScheme(n=64, alpha=0.5, kappa=1.0)
        plan = SimulationPlan(scheme=scheme, substeps=8, burn_in=0.0, y0=np.array([1.0]), seed=0)
        rec = simulate_path(model, [-1.0], NoiseModel.scalar(0.7, 0.0), plan)
        exact = np.exp(-rec.fine_times)
        err = np.max(np.abs(rec.fine_y[0] - exact))
        assert err <= plan.fine_step

    def test_observation_columns_match_fine_grid(self):
        model = get_model("fou")
        scheme = ObservationScheme(n=32, alpha=0.5, kappa=1.0)
        plan = SimulationPlan(scheme=scheme, substeps=4, burn_in=1.0, seed=5)
        rec = simulate_path(model, [-1.0], NoiseModel.scalar(0.7, 1.0), plan)
        assert np.array_equal(rec.obs_y, rec.fine_y[:, ::4])
        assert rec.obs_noise[0, 0] == 0.0

    def test_obs_noise_is_cumulated_increments(self):
        # Inject known increments: obs_noise must equal their prefix sums subsampled.
        model = zero_drift_model()
        scheme = ObservationScheme(n=16, alpha=0.5, kappa=1.0)
        plan = SimulationPlan(scheme=scheme, substeps=4, burn_in=0.0, seed=0)
        inc = sample_fgn(FgnSpec(0.7, plan.fine_step, 64, seed=9))
        rec = simulate_path(model, [0.0], NoiseModel.scalar(0.7, 1.0), plan,
                            noise_increments=inc)
        expected = cumulate(inc)[0, ::4]
        assert np.array_equal(rec.obs_noise[0], expected)

    def test_burn_in_prepends_noise(self):
        # With burn-in, the main segment consumes the tail of the same stream.
        model = zero_drift_model()
        scheme = ObservationScheme(n=16, alpha=0.5, kappa=1.0)
        noise = NoiseModel.scalar(0.7, 1.0)
        plan0 = SimulationPlan(scheme=scheme, substeps=2, burn_in=0.0, seed=11)
        plan1 = SimulationPlan(scheme=scheme, substeps=2, burn_in=3 * plan0.fine_step, seed=11)
        inc = sample_fgn(FgnSpec(0.7, plan0.fine_step, 32 + 3, seed=11))
        rec = simulate_path(model, [0.0], noise, plan1, noise_increments=inc)
        tail = cumulate(inc[:, 3:])[0, ::2]
        assert np.array_equal(rec.obs_noise[0], tail)

    def test_determinism_and_batch_equivalence(self):
        model = get_model("fou")
        scheme = ObservationScheme(n=64, alpha=0.5, kappa=1.0)
        noise = NoiseModel.scalar(0.7, 1.0)
        plan = SimulationPlan(scheme=scheme, substeps=8, burn_in=2.0, seed=21)
        a = simulate_path(model, [-1.0], noise, plan)
        b = simulate_path(model, [-1.0], noise, plan)
        assert np.array_equal(a.obs_y, b.obs_y)
        batch = simulate_batch(model, [-1.0], noise, plan, [21, 22, 23], keep_fine=True)
        assert np.array_equal(batch[0].obs_y, a.obs_y)
        assert np.array_equal(batch[0].fine_y, a.fine_y)
        assert np.array_equal(batch[0].obs_noise, a.obs_noise)
        c = simulate_path(
            model, [-1.0], noise,
            SimulationPlan(scheme=scheme, substeps=8, burn_in=2.0, seed=22),
        )
        assert np.array_equal(batch[1].obs_y, c.obs_y)

    def test_keep_fine_false(self):
        model = get_model("fou")
        scheme = ObservationScheme(n=16, alpha=0.5, kappa=1.0)
        plan = SimulationPlan(scheme=scheme, seed=1)
        rec = simulate_path(model, [-1.0], NoiseModel.scalar(0.7, 1.0), plan, keep_fine=False)
        assert rec.fine_y is None and rec.fine_times is None
        assert rec.obs_y.shape == (1, 17)

    def test_multidimensional_path(self):
        model = get_model("fou-multi", dim=3)
        scheme = ObservationScheme(n=32, alpha=0.5, kappa=1.0)
        plan = SimulationPlan(scheme=scheme, substeps=4, burn_in=1.0,
                              y0=np.zeros(3), seed=2)
        rec = simulate_path(model, [-1.0], NoiseModel.isotropic(0.7, 3), plan)
        assert rec.obs_y.shape == (3, 33)
        assert np.isfinite(rec.obs_y).all()

    def test_validation_errors(self):
        model = get_model("fou")
        scheme = ObservationScheme(n=16, alpha=0.5, kappa=1.0)
        plan = SimulationPlan(scheme=scheme, seed=0)
        noise = NoiseModel.scalar(0.7, 1.0)
        with pytest.raises(ValueError):
            simulate_path(model, [0.5], noise, plan)  # outside box
        with pytest.raises(ValueError):
            simulate_path(model, [-1.0], NoiseModel.isotropic(0.7, 2), plan)
        with pytest.raises(ValueError):
            simulate_path(model, [-1.0], noise,
                          SimulationPlan(scheme=scheme, y0=np.zeros(2), seed=0))


class TestNonFinite:
    def _explosive_setup(self):
        # |1 + theta*dt| ~ 3.5e4 per step: overflows to inf well before t = T_n.
        model = get_model("fou", box=(-1e6, -0.1))
        scheme = ObservationScheme(n=128, alpha=0.5, kappa=4.0)
        plan = SimulationPlan(scheme=scheme, substeps=1, burn_in=0.0,
                              y0=np.array([1.0]), seed=0)
        return model, scheme, plan

    def test_single_path_raises_with_step(self):
        model, _, plan = self._explosive_setup()
        with pytest.raises(NonFinite) as excinfo:
            simulate_path(model, [-1e5], NoiseModel.scalar(0.7, 1.0), plan)
        assert excinfo.value.phase == "main"
        assert excinfo.value.step >= 0

    def test_batch_flags_instead_of_raising(self):
        model, _, plan = self._explosive_setup()
        out = simulate_batch(model, [-1e5], NoiseModel.scalar(0.7, 1.0), plan, [0, 1])
        assert all(isinstance(r, NonFinite) for r in out)


class TestStationarity:
    def test_default_burn_in_uses_theta0_contraction(self):
        assert default_burn_in(get_model("fou"), [-1.0]) == pytest.approx(10.0)
        assert default_burn_in(get_model("fou"), [-2.0]) == pytest.approx(5.0)

    def test_default_burn_in_rejects_expanding(self):
        model = get_model("fou", box=(-1.0, 1.0))
        with pytest.raises(ValueError):
            default_burn_in(model, [0.5])

    def test_variance_stationary_after_burn_in(self):
        # fOU theta0=-1, H=0.7, burn_in=20: ensemble variance at t=0 matches t=T_n.
        model = get_model("fou")
        noise = NoiseModel.scalar(0.7, 1.0)
        scheme = ObservationScheme(n=64, alpha=0.5, kappa=1.0)
        plan = SimulationPlan(scheme=scheme, substeps=8, burn_in=20.0, seed=0)
        recs = simulate_batch(model, [-1.0], noise, plan, list(range(10_000)))
        first = np.array([r.obs_y[0, 0] for r in recs])
        last = np.array([r.obs_y[0, -1] for r in recs])
        v0, vT = float(np.var(first)), float(np.var(last))
        assert abs(v0 - vT) <= 0.05 * vT, (v0, vT)

    def test_constant_observable_is_exact(self):
        model = get_model("fou")
        value = stationary_moment(
            model, [-1.0], NoiseModel.scalar(0.7, 1.0),
            lambda x: np.ones(x.shape[:-1]), horizon=50.0, substeps_per_unit=8, seed=1,
        )
        assert value == 1.0

    def test_brownian_ou_variance(self):
        # H=1/2 stationary variance sigma^2/(2|theta0|) = 0.5.
        model = get_model("fou")
        value = stationary_moment(
            model, [-1.0], NoiseModel.scalar(0.5, 1.0),
            lambda x: np.einsum("...d,...d->...", x, x),
            horizon=1e4, substeps_per_unit=16, seed=2,
        )
        assert value == pytest.approx(0.5, rel=0.05)

    def test_time_average_matches_ensemble_average(self):
        # Two independent oracles: time average along one path vs ensemble at T.
        model = get_model("fou")
        noise = NoiseModel.scalar(0.7, 1.0)
        time_avg = stationary_moment(
            model, [-1.0], noise,
            lambda x: np.einsum("...d,...d->...", x, x),
            horizon=2e4, substeps_per_unit=16, seed=3,
        )
        scheme = ObservationScheme(n=16, alpha=0.5, kappa=1.0)
        plan = SimulationPlan(scheme=scheme, substeps=8, burn_in=20.0, seed=0)
        recs = simulate_batch(model, [-1.0], noise, plan, list(range(4000)))
        ensemble = float(np.mean([r.obs_y[0, -1] ** 2 for r in recs]))
        assert time_avg == pytest.approx(ensemble, rel=0.05)

    def test_moments_bounded_over_time(self):
        # No growth trend: second/fourth moments in the first vs second half
        # stay within a factor 2 of each other.
        model = get_model("fou")
        noise = NoiseModel.scalar(0.7, 1.0)
        scheme = ObservationScheme(n=256, alpha=0.5, kappa=1.0)
        plan = SimulationPlan(scheme=scheme, substeps=4, burn_in=10.0, seed=0)
        recs = simulate_batch(model, [-1.0], noise, plan, list(range(1000)))
        obs = np.stack([r.obs_y[0] for r in recs])
        for power in (2, 4):
            moments = np.mean(np.abs(obs) ** power, axis=0)
            half = len(moments) // 2
            a, b = np.max(moments[:half]), np.max(moments[half:])
            assert max(a, b) / min(a, b) <= 2.0

    def test_holder_increment_scaling(self):
        # E|Y_{t+D} - Y_t|^2 scales like D^{2H} across D in {alpha_n, 2a, 4a}.
        model = get_model("fou")
        h = 0.7
        noise = NoiseModel.scalar(h, 1.0)
        scheme = ObservationScheme(n=256, alpha=0.5, kappa=1.0)
        plan = SimulationPlan(scheme=scheme, substeps=4, burn_in=10.0, seed=0)
        recs = simulate_batch(model, [-1.0], noise, plan, list(range(400)))
        obs = np.stack([r.obs_y[0] for r in recs])
        deltas, moments = [], []
        for lag in (1, 2, 4):
            diff = obs[:, lag:] - obs[:, :-lag]
            deltas.append(lag * scheme.alpha_n)
            moments.append(float(np.mean(diff**2)))
        slope = np.polyfit(np.log(deltas), np.log(moments), 1)[0]
        assert abs(slope - 2 * h) <= 0.1 * (2 * h), slope

    def test_refinement_consistency(self):
        # Doubling substeps moves observations by O(fine step) for fixed noise.
        model = get_model("fou")
        noise = NoiseModel.scalar(0.7, 1.0)
        scheme = ObservationScheme(n=64, alpha=0.5, kappa=1.0)
        sup_gaps = {}
        for s in (4, 8):
            plan = SimulationPlan(scheme=scheme, substeps=2 * s, burn_in=0.0, seed=13)
            fine_inc = sample_fgn(FgnSpec(0.7, plan.fine_step, 64 * 2 * s, seed=13))
            coarse_inc = fine_inc.reshape(1, -1, 2).sum(axis=-1)
            rec_fine = simulate_path(model, [-1.0], noise, plan, noise_increments=fine_inc)
            plan_c = SimulationPlan(scheme=scheme, substeps=s, burn_in=0.0, seed=13)
            rec_coarse = simulate_path(model, [-1.0], noise, plan_c,
                                       noise_increments=coarse_inc)
            sup_gaps[s] = float(np.max(np.abs(rec_fine.obs_y - rec_coarse.obs_y)))
        # Error is O(delta): bounded by the coarse step and shrinking with it.
        assert sup_gaps[4] <= scheme.alpha_n / 4
        assert sup_gaps[8] <= scheme.alpha_n / 8
        assert sup_gaps[8] < sup_gaps[4]


class TestStationaryMomentsStreaming:
    def test_multiple_observables_one_pass(self):
        model = get_model("fou")
        noise = NoiseModel.scalar(0.6, 1.0)
        values = stationary_moments(
            model, [-1.0], noise,
            [lambda x: np.ones(x.shape[:-1]),
             lambda x: np.einsum("...d,...d->...", x, x)],
            horizon=200.0, substeps_per_unit=8, seed=4, block=64,
        )
        assert values[0] == 1.0
        assert 0.1 < values[1] < 2.0

    def test_block_size_does_not_change_result(self):
        model = get_model("fou")
        noise = NoiseModel.scalar(0.6, 1.0)
        g = lambda x: np.einsum("...d,...d->...", x, x)
        a = stationary_moments(model, [-1.0], noise, [g], 100.0, 8, seed=5, block=32)[0]
        b = stationary_moments(model, [-1.0], noise, [g], 100.0, 8, seed=5, block=4096)[0]
        assert a == pytest.approx(b, abs=1e-15)


class TestSerialization:
    def _record(self, hex_floats=False, tmp_path=None):
        model = get_model("fou")
        scheme = ObservationScheme(n=16, alpha=0.5, kappa=1.0)
        plan = SimulationPlan(scheme=scheme, substeps=4, burn_in=1.0, seed=33)
        rec = simulate_path(model, [-1.0], NoiseModel.scalar(0.7, 1.0), plan,
                            keep_fine=False)
        csv = tmp_path / "path.csv"
        meta = tmp_path / "path.json"
        save_path(rec, csv, meta, hex_floats=hex_floats)
        return rec, csv, meta

    @pytest.mark.parametrize("hex_floats", [False, True])
    def test_bit_exact_roundtrip(self, hex_floats, tmp_path):
        rec, csv, meta = self._record(hex_floats=hex_floats, tmp_path=tmp_path)
        t, y, F = load_path_csv(csv)
        assert np.array_equal(y, rec.obs_y)
        assert np.array_equal(F, rec.obs_noise)
        assert np.array_equal(t, rec.plan.scheme.times())

    def test_sidecar_metadata(self, tmp_path):
        rec, csv, meta = self._record(tmp_path=tmp_path)
        import json

        data = json.loads(meta.read_text())
        assert data["model"] == "fou"
        assert data["n"] == 16
        assert data["theta0"] == [-1.0]
        assert data["seed"] == 33

    def test_header_schema(self, tmp_path):
        rec, csv, _ = self._record(tmp_path=tmp_path)
        header = csv.read_text().splitlines()[0]
        assert header == "t,y1,F1"

    def test_malformed_csv_names_line(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("t,y1\n0.0,1.0\n0.1,not-a-number\n")
        with pytest.raises(ValueError, match="line 3"):
            load_path_csv(bad)

    def test_wrong_field_count_names_line(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("t,y1\n0.0,1.0\n0.1\n")
        with pytest.raises(ValueError, match="line 3"):
            load_path_csv(bad)
