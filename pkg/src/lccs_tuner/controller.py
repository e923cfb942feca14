"""Frequency-mode PI regulator for the output voltage."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class PIController:
    """PI law whose output is the bridge switching frequency.

    The commanded frequency is::

        f = f_base + sign * unit_hz * (Kp * e + Ki * integ)

    so ``Kp`` is in ``unit_hz`` per volt and ``Ki`` in ``unit_hz`` per
    volt-second.  ``sign`` must match the slope of the plant's steady gain
    curve on the operating branch (see
    :func:`lccs_tuner.simulator.recommended_sign`); the bundled converter
    operates below its gain peak, hence ``+1``.
    """

    Kp: float = 0.0553
    Ki: float = 12.9637
    integ: float = 0.0
    f_base: float = 85e3
    f_min: float = 79e3
    f_max: float = 90e3
    sign: int = 1
    unit_hz: float = 1e3

    def __post_init__(self):
        if not self.f_min < self.f_base < self.f_max:
            raise ValueError(f"need f_min < f_base < f_max, got {self.f_min}, {self.f_base}, {self.f_max}")
        if self.sign not in (-1, 1):
            raise ValueError(f"sign must be +1 or -1, got {self.sign!r}")
        self.set_gains(self.Kp, self.Ki)
        if not np.isfinite(self.integ):
            raise ValueError("integrator state must be finite")

    def set_gains(self, Kp: float, Ki: float) -> None:
        if not (Kp >= 0 and Ki >= 0 and np.isfinite(Kp) and np.isfinite(Ki)):
            raise ValueError(f"gains must be finite and non-negative, got Kp={Kp!r}, Ki={Ki!r}")
        self.Kp = float(Kp)
        self.Ki = float(Ki)

    def step(self, e: float, dt: float) -> float:
        return pi_step(self, e, dt)

    def reset(self) -> "PIController":
        return reset(self)


def pi_step(ctrl: PIController, e: float, dt: float) -> float:
    """One controller update; returns the commanded frequency in Hz.

    Clamping anti-windup: the integrator advance is discarded whenever the
    unclamped command lies outside the band and the error drives it
    further out.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt!r}")
    integ_new = ctrl.integ + e * dt
    u = ctrl.f_base + ctrl.sign * ctrl.unit_hz * (ctrl.Kp * e + ctrl.Ki * integ_new)
    push = ctrl.sign * e
    if (u > ctrl.f_max and push > 0) or (u < ctrl.f_min and push < 0):
        u = ctrl.f_base + ctrl.sign * ctrl.unit_hz * (ctrl.Kp * e + ctrl.Ki * ctrl.integ)
    else:
        ctrl.integ = integ_new
    return float(min(max(u, ctrl.f_min), ctrl.f_max))


def reset(ctrl: PIController) -> PIController:
    ctrl.integ = 0.0
    return ctrl
