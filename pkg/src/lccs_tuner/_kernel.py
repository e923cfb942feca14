"""Compiled inner loop of the switched-affine simulation.

Each mode is advanced with the one-step RK4 map of its affine dynamics,
``x <- P[i] x + q[i]``, which is algebraically the classical four-stage
Runge-Kutta step for ``dx/dt = A x + b`` at fixed ``dt``.
"""

import numpy as np
from numba import njit

DRIVER_FREQUENCY = 0
DRIVER_SURFACE = 1
LOGIC_COMMUTATION = 0
LOGIC_CONDITION = 1

STATUS_OK = 0
STATUS_BLOWUP = 1


def rk4_propagators(A, b, dt):
    """Stack of one-step RK4 maps for every mode.

    Returns ``P`` of shape (7, n, n) and ``q`` of shape (7, n) indexed by mode
    number (slot 0 is unused).
    """
    n_modes, n, _ = A.shape
    P = np.zeros((n_modes + 1, n, n))
    q = np.zeros((n_modes + 1, n))
    eye = np.eye(n)
    for i in range(n_modes):
        hA = dt * A[i]
        hA2 = hA @ hA
        hA3 = hA2 @ hA
        P[i + 1] = eye + hA + hA2 / 2.0 + hA3 / 6.0 + hA3 @ hA / 24.0
        q[i + 1] = dt * (eye + hA / 2.0 + hA2 / 6.0 + hA3 / 24.0) @ b[i]
    return P, q


@njit(cache=True)
def _mode_index(s, pol):
    if s > 0:
        if pol > 0:
            return 1
        if pol < 0:
            return 3
        return 2
    if pol > 0:
        return 6
    if pol < 0:
        return 4
    return 5


@njit(cache=True)
def integrate(P, q, x, n_steps, dt, phase, f_s, driver, K, m, logic,
              vpr_gain, rp, rs, two_vf, prev, step0, decim,
              out_x, out_mode, out_s, bound):
    """Advance ``x`` in place by ``n_steps`` steps.

    Returns ``(phase, prev, n_recorded, status, steps_done)``.  A sample is
    written to the output buffers after every step whose global index
    (``step0 + k + 1``) is a multiple of ``decim``.
    """
    n = x.shape[0]
    y = np.empty(n)
    n_rec = 0
    for k in range(n_steps):
        if driver == DRIVER_FREQUENCY:
            s = 1 if phase < 0.5 else -1
        else:
            acc = m
            for j in range(n):
                acc += K[j] * x[j]
            s = 1 if acc >= 0.0 else -1

        v = vpr_gain * (x[1] + x[2] - rp * x[3]) - rs * x[4] - x[5]
        if logic == LOGIC_COMMUTATION:
            pol = 0
            if prev == 1 or prev == 6:
                pol = 1
            elif prev == 3 or prev == 4:
                pol = -1
            if not (pol != 0 and pol * x[4] > 0.0):
                if abs(v) < x[6] + two_vf:
                    pol = 0
                    x[4] = 0.0
                elif v > 0.0:
                    pol = 1
                else:
                    pol = -1
            mode = _mode_index(s, pol)
        else:
            if abs(v) < x[6]:
                mode = 2 if s > 0 else 5
            elif x[4] > x[3]:
                mode = 1 if s > 0 else 6
            elif x[4] < x[3]:
                mode = 3 if s > 0 else 4
            else:
                if s > 0:
                    mode = prev if (prev == 1 or prev == 3) else 1
                else:
                    mode = prev if (prev == 4 or prev == 6) else 4

        for r in range(n):
            acc = q[mode, r]
            for c in range(n):
                acc += P[mode, r, c] * x[c]
            y[r] = acc
        blown = False
        for r in range(n):
            x[r] = y[r]
            if not (abs(y[r]) <= bound):
                blown = True
        prev = mode

        if driver == DRIVER_FREQUENCY:
            phase += f_s * dt
            if phase >= 1.0:
                phase -= 1.0

        if (step0 + k + 1) % decim == 0:
            for r in range(n):
                out_x[n_rec, r] = x[r]
            out_mode[n_rec] = mode
            out_s[n_rec] = s
            n_rec += 1
        if blown:
            return phase, prev, n_rec, STATUS_BLOWUP, k + 1
    return phase, prev, n_rec, STATUS_OK, n_steps
