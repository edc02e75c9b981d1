"""Tests for the line-of-sight control layer: templates, observer, tuner."""

import numpy as np
import pytest
import scipy.linalg as sla

from flexsat.errors import (AnalysisError, InfeasibleDesignError, ModelError,
                            UnstableError)
from flexsat.linsys import (SignalTrace, StateSpace, freq_response, h2_norm,
                            hinf_norm, is_stable, lft_lower, lyap_solve,
                            simulate)
from flexsat.loscontrol import (ARCSEC, DIST_IN, NOISE_ACC_IN, ChannelSpec,
                                ControllerDesign, LosKinematics, WeightSet,
                                build_generalized_plant, camera_filter,
                                close_family, evaluate_worstcase,
                                fsm_channels, fsm_control_law,
                                kalman_los_observer, pma_channels,
                                tune_structured,
                                washout_filter, weight_ape, weight_rpe,
                                weight_rws, weight_sa, weight_u,
                                zero_controller)
from flexsat.spacecraft import NoiseSpec, assemble_benchmark, default_config


@pytest.fixture(scope="module")
def nominal_plant():
    return assemble_benchmark(default_config()).nominal


def gain_at(sysm, w):
    """Largest singular value of the response at a single frequency."""
    fr = freq_response(sysm, [w])
    return float(np.linalg.svd(fr.values[0], compute_uv=False)[0])


def dc_gain(sysm):
    """Zero-frequency gain matrix."""
    if sysm.n_states == 0:
        return np.array(sysm.D)
    return sysm.D - sysm.C @ np.linalg.solve(sysm.A, sysm.B)


# ---------------------------------------------------------------------------
# weighting filters

class TestTemplates:

    def test_washout_shape(self):
        w = washout_filter(n=1, corner=0.1)
        assert abs(dc_gain(w)[0, 0]) < 1e-12
        assert gain_at(w, 0.1) == pytest.approx(1 / np.sqrt(2), rel=1e-9)
        assert gain_at(w, 1e4) == pytest.approx(1.0, rel=1e-6)

    def test_washout_removes_bias(self):
        w = washout_filter(n=1, corner=0.1)
        drive = SignalTrace(0.05, {"wash.in0": np.ones(4000)})
        out = simulate(w, drive)
        assert abs(out.channels["wash.out0"][-1]) < 1e-6

    def test_camera_filter_magnitude(self):
        f = camera_filter(n=1)
        for w in (1.0, 10.0, 100.0):
            oracle = abs(100.0 / np.polyval([1.0, 14.0, 100.0], 1j * w))
            assert gain_at(f, w) == pytest.approx(oracle, rel=1e-9)

    def test_rpe_template_limits(self):
        eps = 0.1 * ARCSEC
        w = weight_rpe(0.02, eps, n=1)
        assert abs(dc_gain(w)[0, 0]) < 1e-9
        # leading coefficients: t^2 s^2 / eps over t^2 s^2
        assert gain_at(w, 1e7) == pytest.approx(1 / eps, rel=1e-4)
        assert gain_at(w, 1000.0) == pytest.approx(1 / eps, rel=0.01)

    def test_rpe_template_monotone(self):
        w = weight_rpe(n=1)
        grid = np.logspace(-3, 5, 300)
        mags = np.abs(freq_response(w, grid).values[:, 0, 0])
        assert np.all(np.diff(mags) >= -1e-12 * mags[:-1])

    def test_rws_envelope_limits(self):
        w = weight_rws()
        assert w.n_inputs == w.n_outputs == 20
        dc = dc_gain(w)
        assert dc[0, 0] == pytest.approx(0.4 * 5.101e-5 / 5.101, rel=1e-12)
        assert gain_at(w.subsystem(("wrws.in0",), ("wrws.out0",)), 1e6) \
            == pytest.approx(0.4, rel=1e-6)
        # the five per-harmonic gains repeat wheel by wheel
        assert dc[7, 7] / dc[5, 5] == pytest.approx(0.35 / 0.4, rel=1e-9)

    def test_static_budgets(self):
        assert dc_gain(weight_u(5.3e-3, 2))[0, 0] \
            == pytest.approx(188.6792, rel=1e-4)
        assert dc_gain(weight_ape(10 * ARCSEC))[1, 1] \
            == pytest.approx(1 / (10 * ARCSEC))
        assert np.allclose(dc_gain(weight_sa(0.1)), 0.1 * np.eye(2))

    def test_all_realizations_stable(self):
        for f in (washout_filter(), camera_filter(), weight_rpe(),
                  weight_rws()):
            ok, _ = is_stable(f)
            assert ok

    def test_parameter_validation(self):
        with pytest.raises(ModelError):
            washout_filter(corner=0.0)
        with pytest.raises(ModelError):
            weight_rpe(t_delta=-1.0)
        with pytest.raises(ModelError):
            weight_rws(corners=(5.101, 5.101e-5))
        with pytest.raises(ModelError):
            WeightSet(eps_ape=0.0)


# ---------------------------------------------------------------------------
# observer and mirror law

class TestObserver:

    def setup_method(self):
        self.kin = LosKinematics()
        self.noise = NoiseSpec()

    def test_dimension_and_stability(self):
        obs = kalman_los_observer(self.kin, self.noise)
        assert obs.n_states == 4
        assert obs.n_inputs == 22
        ok, _ = is_stable(obs)
        assert ok

    def test_static_los_recovered(self):
        # constant true LOS, quiet accelerometers: the camera channel alone
        # must pull the estimate onto the truth
        obs = kalman_los_observer(self.kin, self.noise)
        sg = dc_gain(obs)
        assert np.allclose(sg[:, 18:20], np.eye(2), atol=1e-9)
        n = 6000
        chans = {l: np.zeros(n) for l in obs.input_labels}
        chans["obs.cam0"] = np.full(n, 1e-5)
        out = simulate(obs, SignalTrace(0.01, chans))
        assert abs(out.channels["obs.los_hat0"][-1] - 1e-5) < 1e-11

    def test_degradation_slows_camera_channel(self):
        grid = np.logspace(-3, 3, 1200)
        bandwidths = []
        for k_los in (1.0, 1e2, 1e5):
            obs = kalman_los_observer(LosKinematics(k_los=k_los), self.noise)
            sub = obs.subsystem(("obs.cam0",), ("obs.los_hat0",))
            mags = np.abs(freq_response(sub, grid).values[:, 0, 0])
            below = np.nonzero(mags < 1 / np.sqrt(2))[0]
            bandwidths.append(grid[below[0]])
        assert bandwidths[0] > bandwidths[1] > bandwidths[2]

    def test_gain_is_covariance_optimal(self):
        kin, noise = self.kin, self.noise
        obs = kalman_los_observer(kin, noise)
        gain = obs.B[:, 18:20]
        a = np.zeros((4, 4))
        a[0:2, 2:4] = np.eye(2)
        c = np.zeros((2, 4))
        c[:, 0:2] = np.eye(2)
        q = np.zeros((4, 4))
        q[2:4, 2:4] = noise.accel_ang_sigma ** 2 * (
            kin.s_m1 @ kin.s_m1.T + kin.s_m2 @ kin.s_m2.T)
        r = (noise.camera_sigma * kin.k_los) ** 2 * np.eye(2)

        def error_variance(l):
            acl = a - l @ c
            if np.max(np.real(sla.eigvals(acl))) >= 0:
                return np.inf
            p = lyap_solve(acl, q + l @ r @ l.T)
            return float(np.trace(p))

        best = error_variance(gain)
        rng = np.random.default_rng(7)
        for _ in range(50):
            trial = gain * (1.0 + 0.5 * rng.standard_normal(gain.shape))
            assert error_variance(trial) >= best * (1 - 1e-9)

    def test_mirror_law_static_map(self):
        obs = kalman_los_observer(self.kin, self.noise)
        law = fsm_control_law(obs, self.kin.s_fsm)
        assert law.n_states == 4
        # a held 1e-6 rad camera reading commands -1e-5 rad of mirror
        sg = dc_gain(law)
        assert np.allclose(sg[:, 18:20] @ np.array([1e-6, 0.0]),
                           [-1e-5, 0.0], atol=1e-18)
        quiet = SignalTrace(0.01, {l: np.zeros(50) for l in law.input_labels})
        out = simulate(law, quiet)
        assert np.all(out.matrix(("u0", "u1")) == 0.0)

    def test_nominal_closure_stable(self, nominal_plant):
        law = fsm_control_law(kalman_los_observer(self.kin, self.noise),
                              self.kin.s_fsm)
        plant = build_generalized_plant(nominal_plant, WeightSet(),
                                        self.kin, self.noise, "fsm")
        ok, _ = is_stable(lft_lower(plant, law))
        assert ok


# ---------------------------------------------------------------------------
# generalized plants

class TestGeneralizedPlant:

    def test_measurement_widths(self, nominal_plant):
        kin, noise = LosKinematics(), NoiseSpec()
        fsm = build_generalized_plant(nominal_plant, WeightSet(), kin,
                                      noise, "fsm")
        assert fsm.input_labels[-2:] == ("u0", "u1")
        assert sum(l.startswith("y") for l in fsm.output_labels) == 22
        law = fsm_control_law(kalman_los_observer(kin, noise), kin.s_fsm)
        pma = build_generalized_plant(nominal_plant, WeightSet(), kin,
                                      noise, "pma", fsm_controller=law)
        assert sum(l.startswith("y") for l in pma.output_labels) == 6
        assert sum(l.startswith("u") for l in pma.input_labels) == 6
        assert sum(l.startswith("e_u") for l in pma.output_labels) == 6

    def test_unity_weights_pass_through(self, nominal_plant):
        weights = WeightSet(eps_ape=1.0, sa_level=1.0)
        gp = build_generalized_plant(nominal_plant, weights, LosKinematics(),
                                     NoiseSpec(), "fsm")
        grid = np.logspace(-2, 2, 40)
        lifted = freq_response(
            gp.subsystem(("wt_sa0", "wt_sa1"), ("e_ape0", "e_ape1")), grid)
        raw = freq_response(
            nominal_plant.subsystem(("w_sa0", "w_sa1"), ("los0", "los1")),
            grid)
        scale = np.abs(raw.values).max()
        assert np.allclose(lifted.values, raw.values, rtol=1e-4,
                           atol=1e-6 * scale)

    def test_stage_validation(self, nominal_plant):
        args = (nominal_plant, WeightSet(), LosKinematics(), NoiseSpec())
        with pytest.raises(AnalysisError):
            build_generalized_plant(*args, "acs")
        with pytest.raises(AnalysisError):
            build_generalized_plant(*args, "pma")

    def test_channel_spec_validation(self):
        with pytest.raises(AnalysisError):
            ChannelSpec("bad", ("a",), ("b",), norm="h3")


# ---------------------------------------------------------------------------
# worst-case evaluation and the structured tuner

def lqg_testbench():
    """Double integrator with force noise, position measurement noise.

    Returns the generalized plant and the Riccati-optimal controller whose
    closed-loop H2 norm is the benchmark any tuner should approach.
    """
    a = np.array([[0.0, 1.0], [0.0, 0.0]])
    b = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 1.0]])   # w, v, u
    c = np.array([[1.0, 0.0], [0.0, 0.0], [1.0, 0.0]])  # z1, z2, y
    d = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 0.1], [0.0, 1.0, 0.0]])
    plant = StateSpace(a, b, c, d, ("w", "v", "u"), ("z1", "z2", "y"))

    from flexsat.linsys import care_solve
    b2 = b[:, 2:3]
    c2 = c[2:3, :]
    x, kx = care_solve(a.T, b2.T, np.diag([1.0, 0.0]), np.array([[0.01]]))
    f = kx.T
    _, l = care_solve(a, c2, b[:, 0:1] @ b[:, 0:1].T, np.eye(1))
    ctrl = StateSpace(a - b2 @ f - l @ c2, l, -f, np.zeros((1, 1)),
                      ("y",), ("u",))
    return plant, ctrl


def detuned(ctrl, factor):
    return StateSpace(ctrl.A * factor, ctrl.B, ctrl.C * factor, ctrl.D,
                      ctrl.input_labels, ctrl.output_labels)


J2 = ChannelSpec("j2", ("w", "v"), ("z1", "z2"), norm="h2")


class TestWorstCase:

    def test_single_point_matches_norm(self):
        plant, ctrl = lqg_testbench()
        closures = close_family([("pt0", plant)], ctrl)
        spec = ChannelSpec("g", ("w", "v"), ("z1", "z2"))
        val, arg = evaluate_worstcase(closures, spec)
        assert arg == "pt0"
        assert val == pytest.approx(
            hinf_norm(closures[0][1].subsystem(spec.inputs, spec.outputs)),
            rel=1e-9)

    def test_superset_dominates_subset(self):
        plant, ctrl = lqg_testbench()
        slow = StateSpace(plant.A * 0.5, plant.B, plant.C, plant.D,
                          plant.input_labels, plant.output_labels)
        spec = ChannelSpec("g", ("w", "v"), ("z1", "z2"))
        small, _ = evaluate_worstcase(close_family([("a", plant)], ctrl),
                                      spec)
        big, _ = evaluate_worstcase(
            close_family([("a", plant), ("b", slow)], ctrl), spec)
        assert big >= small

    def test_unstable_point_reported(self):
        plant, ctrl = lqg_testbench()
        bad = detuned(ctrl, -1.0)
        with pytest.raises(UnstableError):
            evaluate_worstcase(close_family([("a", plant)], bad), J2)


class TestTuner:

    def test_reaches_lqg_optimum(self):
        plant, ctrl = lqg_testbench()
        optimum = h2_norm(lft_lower(plant, ctrl)
                          .subsystem(("w", "v"), ("z1", "z2")))
        init = detuned(ctrl, 1.8)
        assert is_stable(lft_lower(plant, init))[0]
        design = tune_structured([("pt0", plant)], [J2], [], init,
                                 budget=2500, seed=1)
        assert design.gammas["j2"] <= optimum * 1.05

    def test_zero_budget_returns_init(self):
        plant, ctrl = lqg_testbench()
        design = tune_structured([("pt0", plant)], [J2], [], ctrl, budget=0)
        direct, _ = evaluate_worstcase(close_family([("pt0", plant)], ctrl),
                                       J2)
        assert design.gammas["j2"] == pytest.approx(direct, rel=1e-9)
        assert np.allclose(design.controller.A, ctrl.A)

    def test_seeded_runs_identical(self):
        plant, ctrl = lqg_testbench()
        runs = [tune_structured([("pt0", plant)], [J2], [],
                                detuned(ctrl, 1.5), budget=150, seed=5)
                for _ in range(2)]
        assert runs[0].gammas == runs[1].gammas
        assert np.array_equal(runs[0].controller.A, runs[1].controller.A)
        assert np.array_equal(runs[0].controller.B, runs[1].controller.B)

    def test_reported_indexes_reproduce(self):
        plant, ctrl = lqg_testbench()
        design = tune_structured([("pt0", plant)], [J2], [],
                                 detuned(ctrl, 1.5), budget=300, seed=2)
        redo, _ = evaluate_worstcase(
            close_family([("pt0", plant)], design.controller), J2)
        assert design.gammas["j2"] == pytest.approx(redo, rel=1e-6)

    def test_rejects_destabilizing_init(self):
        plant, ctrl = lqg_testbench()
        with pytest.raises(InfeasibleDesignError):
            tune_structured([("pt0", plant)], [J2], [], detuned(ctrl, -1.0),
                            budget=100)

    def test_negative_budget_rejected(self):
        plant, ctrl = lqg_testbench()
        with pytest.raises(AnalysisError):
            tune_structured([("pt0", plant)], [J2], [], ctrl, budget=-1)

    def test_design_roundtrip(self):
        plant, ctrl = lqg_testbench()
        design = tune_structured([("pt0", plant)], [J2], [], ctrl, budget=0)
        back = ControllerDesign.from_json(design.to_json())
        assert back.gammas == design.gammas
        assert np.allclose(back.controller.A, design.controller.A)
        assert "j2" in back.gamma_csv()


class TestStageObjectives:

    def test_fsm_channel_inventory(self):
        soft, hard = fsm_channels()
        assert [ch.name for ch in soft] == ["gamma1", "gamma2"]
        assert hard[0].norm == "h2"
        assert hard[0].inputs == NOISE_ACC_IN
        assert soft[0].inputs == DIST_IN

    def test_zero_controller_is_inert(self):
        k = zero_controller(4, 22, 2)
        assert is_stable(k)[0]
        assert np.all(dc_gain(k) == 0.0)

    def test_pma_objective_is_band_limited(self):
        soft, hard = pma_channels()
        assert [ch.name for ch in soft] == ["gamma2"]
        assert soft[0].band[0] == pytest.approx(200.0)
        assert [ch.name for ch in hard] == ["gamma1", "gamma3", "gamma4"]
        assert all(ch.band is None for ch in hard)

    def test_band_validation(self):
        with pytest.raises(AnalysisError):
            ChannelSpec("g", ("u",), ("y",), band=(100.0, 10.0))
        with pytest.raises(AnalysisError):
            ChannelSpec("g", ("u",), ("y",), norm="h2", band=(1.0, 10.0))

    def two_resonator(self):
        # big peak at 5 rad/s, small one at 100 rad/s
        sections = [(5.0, 0.01, 1.0), (100.0, 0.05, 2.0)]
        A = sla.block_diag(*[[[0.0, 1.0], [-w * w, -2 * z * w]]
                             for w, z, _ in sections])
        B = np.array([[0.0], [1.0], [0.0], [1.0]])
        C = np.array([[sections[0][2], 0.0, sections[1][2], 0.0]])
        return StateSpace(A, B, C, np.zeros((1, 1)), ("u",), ("y",))

    def test_banded_worstcase_ignores_out_of_band_peak(self):
        sysm = self.two_resonator()
        full = ChannelSpec("g", ("u",), ("y",))
        banded = ChannelSpec("g", ("u",), ("y",), band=(50.0, 500.0))
        closures = [("pt", sysm)]
        v_full, _ = evaluate_worstcase(closures, full)
        v_band, _ = evaluate_worstcase(closures, banded)
        assert v_full == pytest.approx(hinf_norm(sysm), rel=1e-6)
        assert v_band < v_full
        grid = np.linspace(95.0, 105.0, 4000)
        ref = np.abs(freq_response(sysm, grid).values[:, 0, 0]).max()
        assert v_band == pytest.approx(ref, rel=1e-4)
