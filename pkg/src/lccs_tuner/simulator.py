"""Time-domain simulation of the converter, closed-loop scenarios and metrics."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import _kernel
from .controller import PIController, pi_step
from .converter import (N_STATES, ConverterParams, SwitchingSurface, build_subsystems,
                        derive_params, switch_state)

F_NOMINAL = 85e3
BAND_MIN, BAND_MAX = 79e3, 90e3
DEFAULT_DT = 1.0 / (200 * F_NOMINAL)
LOGICS = {"commutation": _kernel.LOGIC_COMMUTATION, "condition": _kernel.LOGIC_CONDITION}


class NumericalBlowup(RuntimeError):
    def __init__(self, t, mode_tail):
        self.t = t
        self.mode_tail = list(mode_tail)
        super().__init__(f"state magnitude bound exceeded at t={t:.9g} s "
                         f"(last modes: {self.mode_tail})")


class Unsettled(RuntimeError):
    def __init__(self, message, f=None):
        self.f = f
        super().__init__(message)


# -- switching drivers ------------------------------------------------------

@dataclass(frozen=True)
class FrequencyDriver:
    """Square-wave bridge command at ``f_s`` with 50 % duty.

    ``phase`` is a time offset in seconds.  With ``guard`` on, ``f_s`` must
    lie in the 79-90 kHz band.
    """

    f_s: float = F_NOMINAL
    phase: float = 0.0
    guard: bool = True

    def __post_init__(self):
        if not self.f_s > 0:
            raise ValueError(f"f_s must be positive, got {self.f_s!r}")
        if self.guard and not BAND_MIN <= self.f_s <= BAND_MAX:
            raise ValueError(f"f_s={self.f_s:g} Hz outside the 79-90 kHz band "
                             "(construct with guard=False for sweeps)")

    @property
    def phase_cycles(self) -> float:
        return (self.phase * self.f_s) % 1.0


@dataclass(frozen=True)
class SurfaceDriver:
    """State feedback switching on the hyperplane ``K x + m = 0``."""

    surface: SwitchingSurface


def drive_switch(driver, t: float, x=None) -> int:
    if isinstance(driver, FrequencyDriver):
        return 1 if (driver.phase_cycles + driver.f_s * t) % 1.0 < 0.5 else -1
    if isinstance(driver, SurfaceDriver):
        return switch_state(driver.surface, np.zeros(N_STATES) if x is None else x)
    raise TypeError(f"unknown driver {driver!r}")


# -- scenarios --------------------------------------------------------------

class Schedule:
    """Piecewise-constant signal given by ``(time, value)`` breakpoints."""

    def __init__(self, points):
        pts = sorted((float(t), float(v)) for t, v in points)
        if not pts:
            raise ValueError("schedule needs at least one point")
        if pts[0][0] > 0:
            raise ValueError("schedule must start at or before t = 0")
        self.times = np.array([t for t, _ in pts])
        self.values = np.array([v for _, v in pts])

    @classmethod
    def constant(cls, value) -> "Schedule":
        return cls([(0.0, value)])

    def value_at(self, t: float) -> float:
        i = np.searchsorted(self.times, t, side="right") - 1
        return float(self.values[max(i, 0)])

    def change_times(self):
        return [float(t) for t in self.times[1:]]

    def points(self):
        return list(zip(self.times.tolist(), self.values.tolist()))

    def __eq__(self, other):
        return isinstance(other, Schedule) and self.points() == other.points()

    def __repr__(self):
        return f"Schedule({self.points()!r})"


@dataclass
class NoiseSpec:
    """Uniform measurement noise on the sampled output, refreshed every ``period``."""

    enabled: bool = False
    amplitude: float = 0.5
    period: float = 1.0 / F_NOMINAL
    seed: int = 0


@dataclass
class Scenario:
    duration: float
    dt: float = DEFAULT_DT
    control_period: float = 100e-6
    vref_schedule: Schedule = field(default_factory=lambda: Schedule.constant(200.0))
    vin_schedule: Schedule | None = None
    load_schedule: Schedule | None = None
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    initial_state: np.ndarray = field(default_factory=lambda: np.zeros(N_STATES))

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt!r}")
        if self.duration < 0:
            raise ValueError(f"duration must be >= 0, got {self.duration!r}")
        ratio = self.control_period / self.dt
        if ratio < 1 - 1e-9 or abs(ratio - round(ratio)) > 1e-6 * ratio:
            raise ValueError("control_period must be a positive integer multiple of dt")
        x0 = np.asarray(self.initial_state, dtype=float).reshape(-1)
        if x0.shape != (N_STATES,) or not np.all(np.isfinite(x0)):
            raise ValueError("initial_state must be 7 finite values")
        self.initial_state = x0

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.dt))

    @property
    def steps_per_control(self) -> int:
        return int(round(self.control_period / self.dt))


def fig9_scenario(params: ConverterParams | None = None, vref: float = 200.0,
                  duration: float = 0.1, noise: bool = True, seed: int = 0) -> Scenario:
    """Step to ``vref`` at t=0, input -5 % at 40 ms, load resistance -10 % at 70 ms."""
    p = params or ConverterParams()
    return Scenario(
        duration=duration,
        vref_schedule=Schedule.constant(vref),
        vin_schedule=Schedule([(0.0, p.Vin), (0.04, 0.95 * p.Vin)]),
        load_schedule=Schedule([(0.0, p.R_load), (0.07, 0.9 * p.R_load)]),
        noise=NoiseSpec(enabled=noise, seed=seed),
    )


def operating_point_scenario(vin: float = 28.0, r_load: float = 45.0, vref: float = 28.0,
                             duration: float = 0.1, noise: bool = False, seed: int = 0) -> Scenario:
    return Scenario(
        duration=duration,
        vref_schedule=Schedule.constant(vref),
        vin_schedule=Schedule.constant(vin),
        load_schedule=Schedule.constant(r_load),
        noise=NoiseSpec(enabled=noise, seed=seed),
    )


# -- integration --------------------------------------------------------------

def rk4_step(x, A, b, dt):
    """Classical four-stage Runge-Kutta step of ``dx/dt = A x + b``."""
    k1 = A @ x + b
    k2 = A @ (x + 0.5 * dt * k1) + b
    k3 = A @ (x + 0.5 * dt * k2) + b
    k4 = A @ (x + dt * k3) + b
    return x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def advance(x, mode: int, dt: float, subsystems, bound: float = 1e9) -> np.ndarray:
    """One RK4 step with ``mode`` held over the step."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt!r}")
    A, b = subsystems.mode(mode)
    y = rk4_step(np.asarray(x, dtype=float), A, b, dt)
    if not np.all(np.abs(y) <= bound):
        raise NumericalBlowup(dt, [mode])
    return y


@dataclass
class Waveforms:
    t: np.ndarray
    x: np.ndarray
    mode: np.ndarray
    s: np.ndarray
    f_cmd: np.ndarray
    decimation: int = 1
    ctrl_t: np.ndarray = field(default_factory=lambda: np.zeros(0))
    ctrl_f: np.ndarray = field(default_factory=lambda: np.zeros(0))
    ctrl_vout: np.ndarray = field(default_factory=lambda: np.zeros(0))
    ctrl_vmeas: np.ndarray = field(default_factory=lambda: np.zeros(0))
    ctrl_vref: np.ndarray = field(default_factory=lambda: np.zeros(0))
    ctrl_kp: np.ndarray = field(default_factory=lambda: np.zeros(0))
    ctrl_ki: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __len__(self):
        return len(self.t)

    @property
    def vout(self) -> np.ndarray:
        return self.x[:, 6]

    CSV_HEADER = "t,x1,x2,x3,x4,x5,x6,x7,mode,s,f_cmd"

    def to_csv(self, path) -> None:
        with open(path, "w", newline="\n") as fh:
            fh.write(self.CSV_HEADER + "\n")
            for i in range(len(self.t)):
                row = [repr(float(self.t[i]))] + [repr(float(v)) for v in self.x[i]]
                row += [str(int(self.mode[i])), str(int(self.s[i])), repr(float(self.f_cmd[i]))]
                fh.write(",".join(row) + "\n")

    CONTROL_HEADER = "t,f_cmd,vout,vmeas,vref,kp,ki"

    def control_to_csv(self, path) -> None:
        cols = [self.ctrl_t, self.ctrl_f, self.ctrl_vout, self.ctrl_vmeas,
                self.ctrl_vref, self.ctrl_kp, self.ctrl_ki]
        with open(path, "w", newline="\n") as fh:
            fh.write(self.CONTROL_HEADER + "\n")
            for i in range(len(self.ctrl_t)):
                fh.write(",".join(repr(float(c[i])) for c in cols) + "\n")

    def window(self, t_start: float, t_end: float | None = None) -> "Waveforms":
        t_end = math.inf if t_end is None else t_end
        sel = (self.t > t_start) & (self.t <= t_end)
        return Waveforms(t=self.t[sel], x=self.x[sel], mode=self.mode[sel], s=self.s[sel],
                         f_cmd=self.f_cmd[sel], decimation=self.decimation)


class Plant:
    """Mutable simulation context: converter state, bridge phase and mode memory.

    One instance belongs to exactly one run.
    """

    def __init__(self, params: ConverterParams | None = None, *, variant: str = "corrected",
                 logic: str = "commutation", dt: float = DEFAULT_DT, x0=None,
                 bound: float = 1e9, decimation: int = 1, record: bool = True):
        if logic not in LOGICS:
            raise ValueError(f"unknown mode logic {logic!r}; expected one of {sorted(LOGICS)}")
        if decimation < 1:
            raise ValueError("decimation must be >= 1")
        self.params = params or ConverterParams()
        self.variant = variant
        self.logic = logic
        self.dt = dt
        self.bound = bound
        self.decimation = int(decimation)
        self.record = record
        self.x = np.zeros(N_STATES) if x0 is None else np.array(x0, dtype=float)
        self.step_index = 0
        self.phase = 0.0
        self.prev_mode = 2
        self.mode_tail = []
        self._chunks = []
        self._derived = derive_params(self.params)
        self._rebuild(self.params)

    def _rebuild(self, params):
        self.params = params
        subs = build_subsystems(params, self._derived, self.variant)
        self.subsystems = subs
        self._P, self._q = _kernel.rk4_propagators(subs.A, subs.b, self.dt)

    def set_operating_point(self, vin: float | None = None, r_load: float | None = None) -> None:
        changes = {}
        if vin is not None and vin != self.params.Vin:
            changes["Vin"] = vin
        if r_load is not None and r_load != self.params.R_load:
            changes["R_load"] = r_load
        if changes:
            self._rebuild(self.params.with_(**changes))

    @property
    def t(self) -> float:
        return self.step_index * self.dt

    def advance(self, n_steps: int, driver) -> None:
        if n_steps <= 0:
            return
        if isinstance(driver, FrequencyDriver):
            kind, f_s = _kernel.DRIVER_FREQUENCY, float(driver.f_s)
            K, m = np.zeros(N_STATES), 0.0
        elif isinstance(driver, SurfaceDriver):
            kind, f_s = _kernel.DRIVER_SURFACE, math.nan
            K, m = driver.surface.K, driver.surface.m
        else:
            raise TypeError(f"unknown driver {driver!r}")
        if self.record:
            cap = (self.step_index + n_steps) // self.decimation - self.step_index // self.decimation
        else:
            cap = 0
        out_x = np.empty((cap, N_STATES))
        out_mode = np.empty(cap, dtype=np.int8)
        out_s = np.empty(cap, dtype=np.int8)
        d = self._derived
        decim = self.decimation if self.record else n_steps + self.step_index + 1
        phase, prev, n_rec, status, done = _kernel.integrate(
            self._P, self._q, self.x, int(n_steps), self.dt, self.phase, f_s, kind, K, m,
            LOGICS[self.logic], d.M / (d.Lp_prime + d.M), self.params.rp, self.params.rs,
            2.0 * self.params.VF, self.prev_mode, self.step_index, decim,
            out_x, out_mode, out_s, self.bound)
        first = self.step_index // self.decimation + 1
        self.step_index += int(done)
        self.phase, self.prev_mode = float(phase), int(prev)
        if self.record and n_rec:
            idx = np.arange(first, first + n_rec) * self.decimation
            self._chunks.append((idx, out_x[:n_rec], out_mode[:n_rec], out_s[:n_rec],
                                 np.full(n_rec, f_s)))
            self.mode_tail = (self.mode_tail + out_mode[max(0, n_rec - 20):n_rec].tolist())[-20:]
        if status != _kernel.STATUS_OK:
            raise NumericalBlowup(self.t, self.mode_tail or [self.prev_mode])

    def waveforms(self) -> Waveforms:
        if not self._chunks:
            return Waveforms(t=np.zeros(0), x=np.zeros((0, N_STATES)), mode=np.zeros(0, np.int8),
                             s=np.zeros(0, np.int8), f_cmd=np.zeros(0), decimation=self.decimation)
        idx = np.concatenate([c[0] for c in self._chunks])
        return Waveforms(t=idx * self.dt,
                         x=np.concatenate([c[1] for c in self._chunks]),
                         mode=np.concatenate([c[2] for c in self._chunks]),
                         s=np.concatenate([c[3] for c in self._chunks]),
                         f_cmd=np.concatenate([c[4] for c in self._chunks]),
                         decimation=self.decimation)


class ClosedLoop:
    """Scenario execution one control period at a time.

    Used by :func:`run` and by the tuning environment, which overwrites
    the controller gains between calls to :meth:`control_step`.
    """

    def __init__(self, scenario: Scenario, driver=None, controller: PIController | None = None,
                 params: ConverterParams | None = None, *, variant: str = "corrected",
                 logic: str = "commutation", decimation: int = 1, bound: float = 1e9,
                 record: bool = True):
        driver = FrequencyDriver() if driver is None else driver
        if controller is not None and not isinstance(driver, FrequencyDriver):
            raise ValueError("a PI controller commands frequency; use a FrequencyDriver")
        p = params or ConverterParams()
        sc = scenario
        vin0 = sc.vin_schedule.value_at(0.0) if sc.vin_schedule else p.Vin
        r0 = sc.load_schedule.value_at(0.0) if sc.load_schedule else p.R_load
        self.scenario = sc
        self.driver = driver
        self.controller = controller
        self.plant = Plant(p.with_(Vin=vin0, R_load=r0), variant=variant, logic=logic, dt=sc.dt,
                           x0=sc.initial_state, bound=bound, decimation=decimation, record=record)
        self.plant.phase = driver.phase_cycles if isinstance(driver, FrequencyDriver) else 0.0
        self.n_total = sc.n_steps
        self.n_ctrl = sc.steps_per_control
        self.f_cmd = driver.f_s if isinstance(driver, FrequencyDriver) else math.nan
        self._events = self._collect_events()
        self._noise = self._noise_table()
        self._log = {k: [] for k in ("t", "f", "vout", "vmeas", "vref", "kp", "ki")}

    def _collect_events(self):
        sc, dt = self.scenario, self.scenario.dt
        ev = []
        for kind, sched in (("vin", sc.vin_schedule), ("load", sc.load_schedule)):
            if sched is None:
                continue
            for t in sched.change_times():
                step = int(round(t / dt))
                if 0 < step < self.n_total:
                    ev.append((step, kind, sched.value_at(t)))
        return sorted(ev)

    def _noise_table(self):
        nz = self.scenario.noise
        if not nz.enabled:
            return None
        n = int(math.ceil(self.scenario.duration / nz.period)) + 2
        rng = np.random.default_rng(nz.seed)
        return rng.uniform(-nz.amplitude, nz.amplitude, size=n)

    @property
    def done(self) -> bool:
        return self.plant.step_index >= self.n_total

    @property
    def t(self) -> float:
        return self.plant.t

    def measure(self):
        """``(v_true, v_measured, v_ref)`` at the current instant."""
        t = self.t
        v = float(self.plant.x[6])
        vm = v
        if self._noise is not None:
            j = int(math.floor(t / self.scenario.noise.period + 1e-9))
            vm = v + float(self._noise[min(j, len(self._noise) - 1)])
        return v, vm, self.scenario.vref_schedule.value_at(t)

    def _advance(self, n_steps):
        driver = FrequencyDriver(self.f_cmd, guard=False) if isinstance(self.driver, FrequencyDriver) \
            else self.driver
        plant = self.plant
        target = min(plant.step_index + n_steps, self.n_total)
        while plant.step_index < target:
            while self._events and self._events[0][0] <= plant.step_index:
                _, kind, val = self._events.pop(0)
                if kind == "vin":
                    plant.set_operating_point(vin=val)
                else:
                    plant.set_operating_point(r_load=val)
            stop = target
            if self._events:
                stop = min(stop, self._events[0][0])
            plant.advance(stop - plant.step_index, driver)

    def control_step(self) -> float:
        """Sample, update the controller and simulate one control period.

        Returns the measured error used for the update.
        """
        v, vm, vref = self.measure()
        e = vref - vm
        if self.controller is not None:
            self.f_cmd = pi_step(self.controller, e, self.scenario.control_period)
        log = self._log
        log["t"].append(self.t)
        log["f"].append(self.f_cmd)
        log["vout"].append(v)
        log["vmeas"].append(vm)
        log["vref"].append(vref)
        log["kp"].append(self.controller.Kp if self.controller else math.nan)
        log["ki"].append(self.controller.Ki if self.controller else math.nan)
        self._advance(self.n_ctrl)
        return e

    def run_to_end(self) -> None:
        if self.controller is None:
            self._advance(self.n_total - self.plant.step_index)
            return
        while not self.done:
            self.control_step()

    def waveforms(self) -> Waveforms:
        w = self.plant.waveforms()
        if len(w) and isinstance(self.driver, FrequencyDriver):
            w.f_cmd = w.f_cmd.copy()
        lg = self._log
        w.ctrl_t = np.array(lg["t"])
        w.ctrl_f = np.array(lg["f"])
        w.ctrl_vout = np.array(lg["vout"])
        w.ctrl_vmeas = np.array(lg["vmeas"])
        w.ctrl_vref = np.array(lg["vref"])
        w.ctrl_kp = np.array(lg["kp"])
        w.ctrl_ki = np.array(lg["ki"])
        return w


# -- metrics ------------------------------------------------------------------

@dataclass
class Metrics:
    rise_time_10_90: float = math.nan
    overshoot_pct: float = math.nan
    settling_time_2pct: float = math.nan
    steady_mean: float = math.nan
    steady_ripple_pp: float = math.nan
    rms_error: float = math.nan
    settled: bool = False
    target: float = math.nan
    band_pct: float = 2.0

    FIELDS = ("rise_time_10_90", "overshoot_pct", "settling_time_2pct", "steady_mean",
              "steady_ripple_pp", "rms_error", "settled", "target", "band_pct")

    def as_dict(self):
        return {k: getattr(self, k) for k in self.FIELDS}

    def to_text(self, prefix: str = "") -> str:
        return "".join(f"{prefix}{k} = {_fmt(v)}\n" for k, v in self.as_dict().items())

    @classmethod
    def csv_header(cls) -> str:
        return ",".join(cls.FIELDS)

    def to_csv_row(self) -> str:
        return ",".join(_fmt(v) for v in self.as_dict().values())


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    return repr(float(v))


def compute_metrics(t, y, target: float, band_pct: float = 2.0, y0: float | None = None,
                    t0: float | None = None) -> Metrics:
    """Step-response figures of ``y`` against ``target``.

    ``y0``/``t0`` are the value and time at the start of the segment
    (default: first sample).  Raises :class:`Unsettled` when the signal never
    enters the band.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(t) == 0:
        raise Unsettled("empty waveform")
    y0 = float(y[0]) if y0 is None else float(y0)
    t0 = float(t[0]) if t0 is None else float(t0)
    band = abs(target) * band_pct / 100.0
    inside = np.abs(y - target) <= band
    if not inside.any():
        raise Unsettled(f"signal never enters the ±{band_pct}% band around {target:g}")
    m = Metrics(target=float(target), band_pct=float(band_pct))
    m.rms_error = float(np.sqrt(np.mean((y - target) ** 2)))

    step = target - y0
    if step == 0 or abs(step) <= band and inside[0]:
        m.rise_time_10_90 = 0.0
    else:
        prog = (y - y0) / step
        hit90 = np.nonzero(prog >= 0.9)[0]
        if len(hit90) == 0:
            m.rise_time_10_90 = math.nan
        else:
            i90 = hit90[0]
            i10 = np.nonzero(prog[: i90 + 1] >= 0.1)[0][0]
            if i10 == i90:
                # crossed both levels inside one sample interval
                prev_t = t[i90 - 1] if i90 > 0 else t0
                m.rise_time_10_90 = float(t[i90] - prev_t)
            else:
                m.rise_time_10_90 = float(t[i90] - t[i10])
    direction = 1.0 if step >= 0 else -1.0
    m.overshoot_pct = float(max(0.0, np.max(direction * (y - target))) / abs(target) * 100.0) \
        if target != 0 else 0.0

    outside = np.nonzero(~inside)[0]
    if len(outside) == 0:
        m.settled = True
        m.settling_time_2pct = 0.0
        i_s = 0
    elif outside[-1] == len(y) - 1:
        m.settled = False
        i_s = None
    else:
        m.settled = True
        i_s = outside[-1] + 1
        m.settling_time_2pct = float(t[i_s] - t0)
    tail = y[i_s:] if i_s is not None else y[len(y) - max(1, len(y) // 5):]
    m.steady_mean = float(np.mean(tail))
    m.steady_ripple_pp = float(np.ptp(tail))
    return m


def metrics(w: Waveforms, target: float, band_pct: float = 2.0,
            t_start: float = 0.0, t_end: float | None = None, y0: float | None = None) -> Metrics:
    seg = w.window(t_start, t_end) if (t_start > 0 or t_end is not None) else w
    if len(seg) == 0:
        raise Unsettled("empty waveform")
    return compute_metrics(seg.t, seg.vout, target, band_pct, y0=y0, t0=t_start)


def safe_metrics(w: Waveforms, target: float, band_pct: float = 2.0, t_start: float = 0.0,
                 t_end: float | None = None, y0: float | None = None) -> Metrics:
    """Like :func:`metrics` but returns a flagged record instead of raising."""
    try:
        return metrics(w, target, band_pct, t_start, t_end, y0)
    except Unsettled:
        m = Metrics(target=float(target), band_pct=float(band_pct))
        seg = w.window(t_start, t_end)
        if len(seg):
            y = seg.vout
            m.rms_error = float(np.sqrt(np.mean((y - target) ** 2)))
            tail = y[len(y) - max(1, len(y) // 5):]
            m.steady_mean = float(np.mean(tail))
            m.steady_ripple_pp = float(np.ptp(tail))
        return m


def segment_metrics(w: Waveforms, boundaries, target: float, band_pct: float = 2.0,
                    y0: float = 0.0):
    """Metrics for each interval between consecutive ``boundaries`` (event times)."""
    out = []
    edges = list(boundaries)
    for a, b in zip(edges[:-1], edges[1:]):
        start_val = y0 if a == edges[0] else _value_at(w, a)
        out.append(safe_metrics(w, target, band_pct, t_start=a, t_end=b, y0=start_val))
    return out


def _value_at(w, t):
    i = np.searchsorted(w.t, t, side="right") - 1
    return float(w.vout[max(i, 0)]) if len(w) else math.nan


def steady_state(t, y, window: float = 2e-3, tol: float = 0.01):
    """Trailing-window detector: ``(is_steady, mean, peak_to_peak)``."""
    t = np.asarray(t)
    y = np.asarray(y)
    if len(t) == 0:
        return False, math.nan, math.nan
    sel = t >= t[-1] - window
    tail = y[sel]
    mean = float(np.mean(tail))
    pp = float(np.ptp(tail))
    return (pp < tol * abs(mean) and mean != 0.0), mean, pp


def run(scenario: Scenario, driver=None, controller: PIController | None = None,
        params: ConverterParams | None = None, *, variant: str = "corrected",
        logic: str = "commutation", decimation: int = 1, bound: float = 1e9,
        band_pct: float = 2.0):
    """Simulate ``scenario`` and return ``(waveforms, metrics)``.

    Metrics cover the last constant segment of the reference schedule and
    are flagged unsettled rather than raising.
    """
    loop = ClosedLoop(scenario, driver, controller, params, variant=variant, logic=logic,
                      decimation=decimation, bound=bound)
    loop.run_to_end()
    w = loop.waveforms()
    changes = scenario.vref_schedule.change_times()
    t_seg = changes[-1] if changes else 0.0
    target = scenario.vref_schedule.value_at(scenario.duration)
    y0 = _value_at(w, t_seg) if t_seg > 0 else float(scenario.initial_state[6])
    return w, safe_metrics(w, target, band_pct, t_start=t_seg, y0=y0)


# -- frequency sweep ----------------------------------------------------------

@dataclass
class SweepResult:
    f: np.ndarray
    vout: np.ndarray

    def __len__(self):
        return len(self.f)

    def segments(self):
        """Maximal runs of constant slope sign as ``(f_lo, f_hi, sign)``."""
        if len(self.f) < 2:
            return []
        slope = np.sign(np.diff(self.vout))
        segs = []
        start = 0
        for i in range(1, len(slope)):
            if slope[i] != slope[start]:
                segs.append((float(self.f[start]), float(self.f[i]), int(slope[start])))
                start = i
        segs.append((float(self.f[start]), float(self.f[-1]), int(slope[start])))
        return segs

    def peak_frequency(self) -> float:
        return float(self.f[int(np.argmax(self.vout))])

    def slope_at(self, f0: float) -> float:
        if len(self.f) < 2:
            raise ValueError("need at least two sweep points for a slope")
        return float(np.interp(f0, self.f, np.gradient(self.vout, self.f)))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="\n") as fh:
            fh.write("f_s,vout\n")
            for f, v in zip(self.f, self.vout):
                fh.write(f"{float(f)!r},{float(v)!r}\n")


def recommended_sign(result: SweepResult, f_base: float = F_NOMINAL) -> int:
    """Controller sign giving negative feedback at ``f_base``."""
    return 1 if result.slope_at(f_base) > 0 else -1


def steady_output(params: ConverterParams, f: float, settle: float = 0.06, *,
                  variant: str = "corrected", logic: str = "commutation",
                  dt: float = DEFAULT_DT, window: float = 2e-3) -> float:
    if not 70e3 <= f <= 100e3:
        raise ValueError(f"sweep frequency {f:g} Hz outside 70-100 kHz")
    sc = Scenario(duration=settle, dt=dt, control_period=dt)
    plant = Plant(params, variant=variant, logic=logic, dt=dt, decimation=10)
    plant.advance(sc.n_steps, FrequencyDriver(f, guard=False))
    w = plant.waveforms()
    ok, mean, _ = steady_state(w.t, w.vout, window=window)
    if not ok:
        raise Unsettled(f"output not steady after {settle:g} s at {f:g} Hz", f=f)
    return mean


def _sweep_point(args):
    params, f, settle, variant, logic, dt = args
    return steady_output(params, f, settle, variant=variant, logic=logic, dt=dt)


def frequency_sweep(params: ConverterParams | None, f_list, settle: float = 0.06, *,
                    variant: str = "corrected", logic: str = "commutation",
                    dt: float = DEFAULT_DT, jobs: int = 1) -> SweepResult:
    """Open-loop steady output voltage at each frequency in ``f_list``."""
    p = params or ConverterParams()
    f_arr = np.asarray(list(f_list), dtype=float)
    tasks = [(p, float(f), settle, variant, logic, dt) for f in f_arr]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            vals = list(ex.map(_sweep_point, tasks))
    else:
        vals = [_sweep_point(a) for a in tasks]
    return SweepResult(f=f_arr, vout=np.asarray(vals, dtype=float))


@lru_cache(maxsize=8)
def settled_state(params: ConverterParams, f: float = F_NOMINAL, settle: float = 0.08,
                  dt: float = DEFAULT_DT, variant: str = "corrected",
                  logic: str = "commutation") -> tuple:
    """Open-loop state after ``settle`` seconds at ``f``, rounded to a whole period.

    Returned as a tuple so callers cannot mutate the cached value.
    """
    per = int(round(1.0 / (f * dt)))
    n = int(round(settle / dt / per)) * per
    plant = Plant(params, variant=variant, logic=logic, dt=dt, record=False)
    plant.advance(n, FrequencyDriver(f, guard=False))
    return tuple(float(v) for v in plant.x)


def stored_energy_series(w: Waveforms, params: ConverterParams) -> np.ndarray:
    from .converter import energy_weights
    W = energy_weights(params, derive_params(params))
    return 0.5 * np.einsum("ij,jk,ik->i", w.x, W, w.x)
