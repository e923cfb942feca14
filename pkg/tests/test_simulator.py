"""Integration, switching drivers, scenarios, metrics and the open-loop sweep."""

import math

import numpy as np
import pytest
from scipy.linalg import expm

from lccs_tuner import _kernel
from lccs_tuner.controller import PIController
from lccs_tuner.converter import ConverterParams, SwitchingSurface, build_subsystems, derive_params
from lccs_tuner.simulator import (DEFAULT_DT, ClosedLoop, FrequencyDriver, NoiseSpec,
                                  NumericalBlowup, Plant, Scenario, Schedule, SurfaceDriver,
                                  SweepResult, Unsettled, Waveforms, advance, compute_metrics,
                                  drive_switch, fig9_scenario, frequency_sweep, metrics,
                                  recommended_sign, rk4_step, run, safe_metrics, segment_metrics,
                                  steady_output, steady_state, stored_energy_series)

F_S = 85e3
PERIOD_STEPS = 200

# steady open-loop output voltage on the published design, locked from the first run
SWEEP_FIXTURE = {79e3: 147.71, 85e3: 212.48, 86e3: 221.94, 89e3: 235.97, 90e3: 234.86}
SWEEP_REL_TOL = 5e-3


def affine_exact(A, b, x0, h):
    """Exact held-mode solution via the exponential of the augmented matrix."""
    n = len(x0)
    aug = np.zeros((n + 1, n + 1))
    aug[:n, :n] = A
    aug[:n, n] = b
    E = expm(aug * h)
    return E[:n, :n] @ x0 + E[:n, n]


class TestDrivers:
    def test_frequency_driver_halves(self):
        drv = FrequencyDriver(F_S)
        assert drive_switch(drv, 0.0) == 1
        assert drive_switch(drv, 1 / (2 * F_S) + 1e-9) == -1
        assert drive_switch(drv, 1 / F_S + 1e-9) == 1

    def test_surface_driver_delegates(self, rng):
        drv = SurfaceDriver(SwitchingSurface(np.zeros(7), -1.0))
        for t in (0.0, 1e-6, 1.0):
            assert drive_switch(drv, t, rng.normal(size=7)) == -1

    def test_band_guard(self):
        with pytest.raises(ValueError):
            FrequencyDriver(95e3)
        assert FrequencyDriver(95e3, guard=False).f_s == 95e3

    def test_duty_over_whole_periods(self, params):
        plant = Plant(params)
        plant.advance(10 * PERIOD_STEPS, FrequencyDriver(F_S))
        s = plant.waveforms().s
        assert abs(int(np.sum(s == 1)) - int(np.sum(s == -1))) <= 1

    def test_phase_continuity_across_frequency_change(self, params):
        """Edges are neither skipped nor doubled when the command changes."""
        plant = Plant(params, dt=1e-8)
        plant.advance(625, FrequencyDriver(80e3))                # half a cycle
        plant.advance(1000, FrequencyDriver(50e3, guard=False))  # another half
        plant.advance(3125, FrequencyDriver(40e3, guard=False))  # 1.25 cycles
        s = plant.waveforms().s.astype(int)
        edges = np.nonzero(s[1:] != s[:-1])[0] + 1
        # 2.25 cycles of accumulated phase cross four half-cycle boundaries
        assert len(edges) == 4
        # edge positions within one step (floating-point phase accumulation)
        assert np.all(np.abs(edges[:2] - [625, 1625]) <= 1)


class TestAdvance:
    @pytest.mark.parametrize("mode", [1, 2, 3, 4, 5, 6])
    def test_matches_matrix_exponential(self, subsystems, mode, rng):
        A, b = subsystems.mode(mode)
        x0 = rng.normal(size=7) * [5, 300, 300, 5, 5, 300, 200]
        h = 10e-9
        got = advance(x0, mode, h, subsystems)
        ref = affine_exact(A, b, x0, h)
        assert np.linalg.norm(got - ref) / np.linalg.norm(ref) < 1e-6

    def test_equilibrium(self):
        A = np.diag([-1.0, -2.0, 0.0, 1.0, 3.0, -4.0, 0.5])
        assert np.array_equal(rk4_step(np.zeros(7), A, np.zeros(7), 1e-3), np.zeros(7))

    def test_kernel_propagator_equals_rk4(self, subsystems, rng):
        P, q = _kernel.rk4_propagators(subsystems.A, subsystems.b, DEFAULT_DT)
        x = rng.normal(size=7) * 10
        for mode in range(1, 7):
            A, b = subsystems.mode(mode)
            assert np.allclose(P[mode] @ x + q[mode], rk4_step(x, A, b, DEFAULT_DT),
                               rtol=1e-12, atol=1e-12)

    def test_blowup_bound(self, subsystems):
        with pytest.raises(NumericalBlowup):
            advance(np.zeros(7), 1, 1e-6, subsystems, bound=1e-3)
        with pytest.raises(ValueError):
            advance(np.zeros(7), 1, 0.0, subsystems)

    def test_plant_blowup_reports_time_and_modes(self, params):
        plant = Plant(params, bound=1.0)
        with pytest.raises(NumericalBlowup) as info:
            plant.advance(1000, FrequencyDriver(F_S))
        assert 0 < info.value.t < 1000 * DEFAULT_DT
        assert info.value.mode_tail


class TestScenario:
    def test_schedule_lookup(self):
        sch = Schedule([(0.0, 200.0), (0.04, 190.0)])
        assert sch.value_at(0.0) == 200.0
        assert sch.value_at(0.039) == 200.0
        assert sch.value_at(0.04) == 190.0
        assert sch.change_times() == [0.04]

    def test_schedule_must_cover_start(self):
        with pytest.raises(ValueError):
            Schedule([(0.01, 1.0)])

    @pytest.mark.parametrize("kw", [{"dt": 0.0}, {"duration": -1.0},
                                    {"control_period": 1.5 * DEFAULT_DT},
                                    {"initial_state": np.zeros(6)}])
    def test_validation(self, kw):
        with pytest.raises(ValueError):
            Scenario(**{"duration": 1e-3, **kw})

    def test_zero_duration(self, params):
        w, m = run(Scenario(duration=0.0), controller=PIController(), params=params)
        assert len(w) == 0 and not m.settled and math.isnan(m.settling_time_2pct)

    def test_disturbance_events_rebuild_matrices(self, params):
        sc = Scenario(duration=1e-3, vin_schedule=Schedule([(0, 200.0), (5e-4, 150.0)]))
        loop = ClosedLoop(sc, FrequencyDriver(F_S), params=params, record=False)
        loop.run_to_end()
        assert loop.plant.params.Vin == 150.0

    def test_noise_only_enters_measurement(self, params):
        quiet = ClosedLoop(fig9_scenario(params, duration=2e-3, noise=False),
                           controller=PIController(), params=params, decimation=20)
        noisy = ClosedLoop(fig9_scenario(params, duration=2e-3, noise=True, seed=3),
                           controller=PIController(), params=params, decimation=20)
        v0, vm0, _ = noisy.measure()
        assert v0 == 0.0 and 0 < abs(vm0) <= 0.5
        quiet.run_to_end()
        noisy.run_to_end()
        wq, wn = quiet.waveforms(), noisy.waveforms()
        # noise reaches the plant only through the commanded frequency
        assert not np.array_equal(wq.ctrl_vmeas, wn.ctrl_vmeas)
        same_cmd = np.array_equal(wq.ctrl_f, wn.ctrl_f)
        assert np.array_equal(wq.x, wn.x) == same_cmd
        assert np.all(np.abs(noisy.waveforms().ctrl_vmeas - noisy.waveforms().ctrl_vout) <= 0.5)

    def test_runs_are_bit_identical(self, params):
        sc = fig9_scenario(params, duration=5e-3, seed=9)
        w1, _ = run(sc, controller=PIController(), params=params, decimation=7)
        w2, _ = run(sc, controller=PIController(), params=params, decimation=7)
        assert np.array_equal(w1.x, w2.x) and np.array_equal(w1.mode, w2.mode)
        assert np.array_equal(w1.ctrl_f, w2.ctrl_f)

    def test_controller_requires_frequency_driver(self, params):
        with pytest.raises(ValueError):
            ClosedLoop(Scenario(duration=1e-4), SurfaceDriver(SwitchingSurface.published_85khz()),
                       PIController(), params)

    def test_waveform_csv(self, params, tmp_path):
        plant = Plant(params, decimation=50)
        plant.advance(400, FrequencyDriver(F_S))
        w = plant.waveforms()
        path = tmp_path / "w.csv"
        w.to_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0] == "t,x1,x2,x3,x4,x5,x6,x7,mode,s,f_cmd"
        assert len(lines) == 1 + 8
        row = lines[1].split(",")
        assert float(row[0]) == pytest.approx(50 * DEFAULT_DT, rel=1e-12)
        assert np.allclose([float(v) for v in row[1:8]], w.x[0], rtol=0, atol=0)


class TestEnergy:
    def test_stored_energy_non_increasing_without_sources(self):
        p = ConverterParams(Vin=1e-300, VF=0.0)
        x0 = np.array([2.0, 150.0, -80.0, 1.5, -1.0, 60.0, 40.0])
        plant = Plant(p, x0=x0)
        plant.advance(20 * PERIOD_STEPS, FrequencyDriver(F_S))
        E = stored_energy_series(plant.waveforms(), p)
        assert E[-1] < E[0]
        assert np.all(np.diff(E) <= 1e-9 * E[:-1])


class TestMetrics:
    def test_constant_signal_on_target(self):
        t = np.linspace(0, 1e-2, 101)
        m = compute_metrics(t, np.full_like(t, 28.0), 28.0)
        assert m.overshoot_pct == 0 and m.rise_time_10_90 == 0 and m.steady_ripple_pp == 0
        assert m.settled and m.settling_time_2pct == 0.0

    def test_ideal_step_rise_is_one_sample(self):
        t = np.arange(1, 101) * 1e-4
        y = np.full(100, 200.0)
        m = compute_metrics(t, y, 200.0, y0=0.0, t0=0.0)
        assert m.rise_time_10_90 == pytest.approx(1e-4)

    def test_first_order_response(self):
        tau = 1e-3
        t = np.arange(1, 20001) * 1e-6
        y = 100.0 * (1 - np.exp(-t / tau))
        m = compute_metrics(t, y, 100.0, y0=0.0, t0=0.0)
        assert m.rise_time_10_90 == pytest.approx(tau * math.log(9), rel=2e-3)
        assert m.settling_time_2pct == pytest.approx(tau * math.log(50), rel=2e-3)
        assert m.overshoot_pct == 0.0

    def test_overshoot(self):
        t = np.linspace(1e-4, 1e-2, 100)
        y = np.where(t < 2e-3, 220.0, 200.0)
        assert compute_metrics(t, y, 200.0, y0=0.0).overshoot_pct == pytest.approx(10.0)

    def test_unsettled(self):
        t = np.linspace(0, 1, 10)
        with pytest.raises(Unsettled):
            compute_metrics(t, np.zeros(10), 200.0)
        with pytest.raises(Unsettled):
            compute_metrics([], [], 200.0)

    def test_steady_state_detector(self):
        t = np.linspace(0, 0.01, 1001)
        ok, mean, pp = steady_state(t, 100 + 0.4 * np.sin(2e4 * t))
        assert ok and mean == pytest.approx(100, abs=0.1) and pp < 1.0
        ok, _, _ = steady_state(t, 100 + 2.0 * np.sin(2e4 * t))
        assert not ok

    def test_decimation_transparency(self, params):
        sc = fig9_scenario(params, duration=0.03, noise=False)
        fine, _ = run(sc, controller=PIController(), params=params, decimation=1)
        coarse, _ = run(sc, controller=PIController(), params=params, decimation=50)
        mf = metrics(fine, 200.0, y0=0.0)
        mc = metrics(coarse, 200.0, y0=0.0)
        res = 50 * DEFAULT_DT
        # switching ripple can poke out of the band between coarse samples,
        # so the last band exit is resolved to one ripple period at worst
        assert abs(mf.settling_time_2pct - mc.settling_time_2pct) <= res + 1 / F_S
        assert abs(mf.rise_time_10_90 - mc.rise_time_10_90) <= 2 * res

    def test_segment_metrics(self):
        t = np.arange(1, 1001) * 1e-4
        y = np.where(t <= 0.05, 200.0, 190.0)
        w = Waveforms(t=t, x=np.column_stack([np.zeros((1000, 6)), y]),
                      mode=np.ones(1000, np.int8), s=np.ones(1000, np.int8), f_cmd=np.zeros(1000))
        first, second = segment_metrics(w, [0.0, 0.05, 0.1], 200.0, y0=0.0)
        assert first.settled and first.steady_mean == 200.0
        assert not second.settled
        assert safe_metrics(w, 200.0, t_start=0.05).steady_mean == 190.0


@pytest.fixture(scope="module")
def sweep():
    return frequency_sweep(ConverterParams(), sorted(SWEEP_FIXTURE))


class TestSweep:
    def test_empty(self, params):
        res = frequency_sweep(params, [])
        assert len(res) == 0

    def test_out_of_range(self, params):
        with pytest.raises(ValueError):
            steady_output(params, 60e3)

    def test_unsettled_reports_frequency(self, params):
        with pytest.raises(Unsettled) as info:
            steady_output(params, 85e3, settle=3e-3)
        assert info.value.f == 85e3

    def test_locked_gain_curve(self, sweep):
        for f, v in zip(sweep.f, sweep.vout):
            assert v == pytest.approx(SWEEP_FIXTURE[f], rel=SWEEP_REL_TOL)

    def test_operating_branch_rises_with_frequency(self, sweep):
        assert sweep.slope_at(85e3) > 0
        assert recommended_sign(sweep) == 1

    @pytest.mark.xfail(strict=True, reason="gain peak sits near 89 kHz on this circuit model; "
                       "see the decisions ledger")
    def test_peak_within_1khz_of_85khz(self, sweep):
        assert abs(sweep.peak_frequency() - 85e3) <= 1e3

    @pytest.mark.xfail(strict=True, reason="85-90 kHz lies below the gain peak, so 90 kHz "
                       "gives more output than 86 kHz")
    def test_90khz_below_86khz(self, sweep):
        v = dict(zip(sweep.f, sweep.vout))
        assert v[90e3] < v[86e3]

    def test_segments_and_csv(self, tmp_path):
        res = SweepResult(np.array([1.0, 2.0, 3.0, 4.0]), np.array([1.0, 2.0, 1.5, 1.0]))
        assert res.segments() == [(1.0, 2.0, 1), (2.0, 4.0, -1)]
        assert res.peak_frequency() == 2.0
        res.to_csv(tmp_path / "s.csv")
        assert (tmp_path / "s.csv").read_text().splitlines()[0] == "f_s,vout"
