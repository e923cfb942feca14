"""Run configuration files: INI-style sections of ``key = value`` with SI unit suffixes.

Example::

    [converter]
    L1 = 73.4uH
    C_out = 300uF

    [scenario]
    loop = closed
    duration = 100ms

Every key has a dimension; a value may carry an SI prefix plus that
dimension's unit (``73.4uH``, ``382mOhm``, ``85kHz``) or be a bare number in
base units.  Unknown sections and keys are rejected.
"""

from __future__ import annotations

import configparser
import math
import re
from dataclasses import asdict, dataclass, field, fields
from importlib import resources

import numpy as np

from .agent import ActionBounds, Td3Config
from .controller import PIController
from .converter import VARIANTS, ConverterParams, InvalidParameters, SwitchingSurface
from .simulator import (LOGICS, FrequencyDriver, NoiseSpec, Scenario, Schedule, SurfaceDriver,
                        settled_state)


class ConfigError(ValueError):
    pass


PREFIXES = {"p": 1e-12, "n": 1e-9, "u": 1e-6, "µ": 1e-6, "m": 1e-3, "": 1.0, "k": 1e3, "M": 1e6}
UNITS = {"H": "H", "F": "F", "Ohm": "Ohm", "ohm": "Ohm", "Ω": "Ohm", "V": "V", "A": "A",
         "s": "s", "Hz": "Hz", "Vs": "Vs"}
_NUM = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*([^\s]*)\s*$")


def parse_quantity(text: str, unit: str | None) -> float:
    """Number with optional SI-prefixed unit, converted to base units.

    >>> parse_quantity("73.4uH", "H")
    7.34e-05
    """
    m = _NUM.match(text)
    if not m:
        raise ConfigError(f"cannot parse number from {text!r}")
    value = float(m.group(1))
    suffix = m.group(2)
    if not suffix:
        return value
    if unit is None:
        raise ConfigError(f"{text!r}: this key is dimensionless and takes no unit")
    for pre, scale in PREFIXES.items():
        rest = suffix[len(pre):] if suffix.startswith(pre) else None
        if rest is not None and UNITS.get(rest) == unit:
            return value * scale
    raise ConfigError(f"{text!r}: expected a value in {unit}")


def parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "yes", "on", "1"):
        return True
    if t in ("false", "no", "off", "0"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def parse_pair(text: str) -> tuple:
    parts = [p for p in re.split(r"[,\s]+", text.strip()) if p]
    if len(parts) != 2:
        raise ConfigError(f"expected two comma-separated numbers, got {text!r}")
    return (parse_quantity(parts[0], None), parse_quantity(parts[1], None))


# -- sections -------------------------------------------------------------------

CONVERTER_UNITS = {"L1": "H", "C1": "F", "Cs1": "F", "Cs2": "F", "R1_series": "Ohm", "rp": "Ohm",
                   "rs": "Ohm", "Vin": "V", "Lp": "H", "Ls": "H", "k": None, "VF": "V",
                   "C_out": "F", "R_load": "Ohm"}


@dataclass
class ModelConfig:
    variant: str = "corrected"
    logic: str = "commutation"

    UNITS = {"variant": "str", "logic": "str"}

    def validate(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"model.variant must be one of {VARIANTS}")
        if self.logic not in LOGICS:
            raise ConfigError(f"model.logic must be one of {sorted(LOGICS)}")


@dataclass
class ScenarioConfig:
    loop: str = "open"
    driver: str = "frequency"
    f_s: float = 85e3
    duration: float = 10e-3
    dt: float = 1.0 / (200 * 85e3)
    control_period: float = 100e-6
    vref: float = 200.0
    vin_step_time: float = math.inf
    vin_step_factor: float = 1.0
    load_step_time: float = math.inf
    load_step_factor: float = 1.0
    noise: bool = False
    noise_amplitude: float = 0.5
    noise_period: float = 1.0 / 85e3
    start: str = "rest"

    UNITS = {"loop": "str", "driver": "str", "f_s": "Hz", "duration": "s", "dt": "s",
             "control_period": "s", "vref": "V", "vin_step_time": "s", "vin_step_factor": None,
             "load_step_time": "s", "load_step_factor": None, "noise": "bool",
             "noise_amplitude": "V", "noise_period": "s", "start": "str"}

    def validate(self):
        if self.loop not in ("open", "closed"):
            raise ConfigError("scenario.loop must be 'open' or 'closed'")
        if self.driver not in ("frequency", "surface"):
            raise ConfigError("scenario.driver must be 'frequency' or 'surface'")
        if self.loop == "closed" and self.driver != "frequency":
            raise ConfigError("closed-loop runs need the frequency driver")
        if self.start not in ("rest", "settled"):
            raise ConfigError("scenario.start must be 'rest' or 'settled'")
        if self.duration < 0 or self.dt <= 0 or self.control_period <= 0:
            raise ConfigError("scenario times must be positive (duration may be 0)")
        if self.vin_step_factor <= 0 or self.load_step_factor <= 0:
            raise ConfigError("step factors must be positive")


@dataclass
class ControllerConfig:
    kp: float = 0.0553
    ki: float = 12.9637
    f_base: float = 85e3
    f_min: float = 79e3
    f_max: float = 90e3
    sign: int = 1
    unit: float = 1e3

    UNITS = {"kp": None, "ki": None, "f_base": "Hz", "f_min": "Hz", "f_max": "Hz", "sign": "int",
             "unit": "Hz"}

    def validate(self):
        if self.sign not in (-1, 1):
            raise ConfigError("controller.sign must be 1 or -1")
        if not (self.kp >= 0 and self.ki >= 0):
            raise ConfigError("controller gains must be non-negative")
        if not self.f_min < self.f_base < self.f_max:
            raise ConfigError("controller needs f_min < f_base < f_max")


AGENT_UNITS = {"gamma": None, "tau": None, "policy_delay": "int", "target_noise_std": None,
               "target_noise_clip": None, "explore_noise_std": None, "batch_size": "int",
               "episodes": "int", "warmup_steps": "int", "mode": "str", "horizon": "s",
               "action_mode": "str", "reward_scale": None, "buffer_capacity": "int",
               "actor_lr": None, "critic_lr": None, "vref_range": "pair", "noise": "bool",
               "start": "str", "abort_window": "int", "kp_range": "pair", "ki_range": "pair"}


@dataclass
class OutputConfig:
    decimation: int = 10

    UNITS = {"decimation": "int"}

    def validate(self):
        if self.decimation < 1:
            raise ConfigError("output.decimation must be >= 1")


@dataclass
class RunConfig:
    converter: ConverterParams = field(default_factory=ConverterParams)
    model: ModelConfig = field(default_factory=ModelConfig)
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    agent: Td3Config = field(default_factory=Td3Config)
    bounds: ActionBounds = field(default_factory=ActionBounds)
    output: OutputConfig = field(default_factory=OutputConfig)
    seed: int = 0


SECTIONS = ("run", "converter", "model", "scenario", "controller", "agent", "output")


def _convert(text, kind, key):
    try:
        if kind == "str":
            return text.strip()
        if kind == "bool":
            return parse_bool(text)
        if kind == "int":
            v = parse_quantity(text, None)
            if v != int(v):
                raise ConfigError(f"{key} must be an integer")
            return int(v)
        if kind == "pair":
            return parse_pair(text)
        return parse_quantity(text, kind)
    except ConfigError as exc:
        raise ConfigError(f"{key}: {exc}") from None


def _section_values(cp, name, units):
    out = {}
    if not cp.has_section(name):
        return out
    for key, text in cp.items(name):
        if key not in units:
            raise ConfigError(f"unknown key {name}.{key}")
        out[key] = _convert(text, units[key], f"{name}.{key}")
    return out


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"),
                                   default_section="__unused__")
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    for sec in cp.sections():
        if sec not in SECTIONS:
            raise ConfigError(f"unknown section [{sec}]")
    run = _section_values(cp, "run", {"seed": "int"})
    try:
        conv = ConverterParams(**_section_values(cp, "converter", CONVERTER_UNITS))
    except InvalidParameters as exc:
        raise ConfigError(f"converter: {exc}") from None
    model = ModelConfig(**_section_values(cp, "model", ModelConfig.UNITS))
    scen = ScenarioConfig(**_section_values(cp, "scenario", ScenarioConfig.UNITS))
    ctrl = ControllerConfig(**_section_values(cp, "controller", ControllerConfig.UNITS))
    out = OutputConfig(**_section_values(cp, "output", OutputConfig.UNITS))
    agent_vals = _section_values(cp, "agent", AGENT_UNITS)
    bounds_vals = {k: agent_vals.pop(k) for k in ("kp_range", "ki_range") if k in agent_vals}
    seed = run.get("seed", 0)
    try:
        bounds = ActionBounds(**bounds_vals)
        agent = Td3Config(seed=seed, **agent_vals)
    except ValueError as exc:
        raise ConfigError(f"agent: {exc}") from None
    for part in (model, scen, ctrl, out):
        part.validate()
    return RunConfig(conv, model, scen, ctrl, agent, bounds, out, seed)


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    return parse_config(text, source=str(path))


def preset_names():
    return sorted(p.name[:-4] for p in resources.files("lccs_tuner.presets").iterdir()
                  if p.name.endswith(".cfg"))


def preset_text(name: str) -> str:
    if not name.endswith(".cfg"):
        name += ".cfg"
    try:
        return resources.files("lccs_tuner.presets").joinpath(name).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"no bundled preset {name!r}; available: {preset_names()}") from None


def load_preset(name: str) -> RunConfig:
    return parse_config(preset_text(name), source=name)


# -- resolved output ---------------------------------------------------------------

def _render(value, kind):
    if kind == "bool":
        return "true" if value else "false"
    if kind in ("str", "int"):
        return str(value)
    if kind == "pair":
        return f"{float(value[0])!r}, {float(value[1])!r}"
    text = repr(float(value))
    return f"{text}{kind}" if kind else text


def resolved_text(cfg: RunConfig) -> str:
    """Canonical, fully explicit rendering in base units; parses back to ``cfg``."""
    lines = ["[run]", f"seed = {cfg.seed}", "", "[converter]"]
    for f in fields(cfg.converter):
        lines.append(f"{f.name} = {_render(getattr(cfg.converter, f.name), CONVERTER_UNITS[f.name])}")
    for name, part in (("model", cfg.model), ("scenario", cfg.scenario),
                       ("controller", cfg.controller), ("output", cfg.output)):
        lines += ["", f"[{name}]"]
        for f in fields(part):
            kind = part.UNITS[f.name]
            v = getattr(part, f.name)
            if kind not in ("str", "bool", "int", "pair") and math.isinf(v):
                continue
            lines.append(f"{f.name} = {_render(v, kind)}")
    lines += ["", "[agent]"]
    agent = asdict(cfg.agent)
    for key, kind in AGENT_UNITS.items():
        if key in ("kp_range", "ki_range"):
            v = getattr(cfg.bounds, key)
        elif key in agent:
            v = agent[key]
        else:
            continue
        lines.append(f"{key} = {_render(v, kind)}")
    return "\n".join(lines) + "\n"


# -- building runtime objects -------------------------------------------------------

def build_scenario(cfg: RunConfig) -> Scenario:
    sc, p = cfg.scenario, cfg.converter
    vin = Schedule.constant(p.Vin)
    if math.isfinite(sc.vin_step_time):
        vin = Schedule([(0.0, p.Vin), (sc.vin_step_time, p.Vin * sc.vin_step_factor)])
    load = Schedule.constant(p.R_load)
    if math.isfinite(sc.load_step_time):
        load = Schedule([(0.0, p.R_load), (sc.load_step_time, p.R_load * sc.load_step_factor)])
    if sc.start == "settled":
        f0 = cfg.controller.f_base if sc.loop == "closed" else sc.f_s
        x0 = np.array(settled_state(p, f0, dt=sc.dt, variant=cfg.model.variant,
                                    logic=cfg.model.logic))
    else:
        x0 = np.zeros(7)
    try:
        return Scenario(duration=sc.duration, dt=sc.dt, control_period=sc.control_period,
                        vref_schedule=Schedule.constant(sc.vref), vin_schedule=vin,
                        load_schedule=load,
                        noise=NoiseSpec(sc.noise, sc.noise_amplitude, sc.noise_period, cfg.seed),
                        initial_state=x0)
    except ValueError as exc:
        raise ConfigError(f"scenario: {exc}") from None


def build_driver(cfg: RunConfig):
    sc = cfg.scenario
    if sc.driver == "surface":
        return SurfaceDriver(SwitchingSurface.published_85khz())
    f0 = cfg.controller.f_base if sc.loop == "closed" else sc.f_s
    return FrequencyDriver(f0, guard=False)


def build_controller(cfg: RunConfig, gains=None) -> PIController | None:
    if cfg.scenario.loop != "closed" and gains is None:
        return None
    c = cfg.controller
    kp, ki = (c.kp, c.ki) if gains is None else gains
    return PIController(Kp=kp, Ki=ki, f_base=c.f_base, f_min=c.f_min, f_max=c.f_max,
                        sign=c.sign, unit_hz=c.unit)


def event_times(cfg: RunConfig):
    """Segment boundaries of a run: start, disturbance instants, end."""
    sc = cfg.scenario
    inner = sorted(t for t in (sc.vin_step_time, sc.load_step_time) if 0 < t < sc.duration)
    return [0.0, *inner, sc.duration]
