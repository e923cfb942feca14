"""LCC-S converter parameters and its six-mode switched affine model.

State ordering used everywhere in the package::

    x1  tank inductor current (L1)                A
    x2  primary parallel capacitor voltage (C1)   V
    x3  primary series capacitor voltage (Cs1)    V
    x4  primary coil current                      A
    x5  secondary coil current                    A
    x6  secondary series capacitor voltage (Cs2)  V
    x7  output voltage (C_out || R_load)          V

Modes follow the bridge sign ``s`` and rectifier state:

    ====  ===  ======================
    mode   s   rectifier
    ====  ===  ======================
    1     +1   conducting, polarity +
    2     +1   blocking
    3     +1   conducting, polarity -
    4     -1   conducting, polarity -
    5     -1   blocking
    6     -1   conducting, polarity +
    ====  ===  ======================

Two matrix variants are available.  ``"verbatim"`` reproduces the published
table entry for entry (with the output-filter row using ``C_out`` and
``R_load``); ``"corrected"`` is derived from Kirchhoff's laws for the same
circuit and is the variant the simulator uses by default.  The verbatim
variant fails the passivity screen in several modes, see
:func:`passivity_screen`.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

import numpy as np

N_STATES = 7
MODES = (1, 2, 3, 4, 5, 6)
VARIANTS = ("corrected", "verbatim")

# bridge sign and rectifier polarity for each mode (index 0 unused)
BRIDGE_SIGN = (0, 1, 1, 1, -1, -1, -1)
RECTIFIER_POLARITY = (0, 1, 0, -1, -1, 0, 1)
OUTPUT_ROW = np.array([0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0])


class InvalidParameters(ValueError):
    pass


class NonPhysicalCoupling(InvalidParameters):
    """Coupling so strong that a leakage inductance or L_eq is not positive."""


@dataclass(frozen=True)
class ConverterParams:
    """Circuit values in SI units.  Defaults are the published design."""

    L1: float = 73.4e-6
    C1: float = 46.7e-9
    Cs1: float = 15.5e-9
    Cs2: float = 11.7e-9
    R1_series: float = 50e-3
    rp: float = 382e-3
    rs: float = 394e-3
    Vin: float = 200.0
    Lp: float = 281.3e-6
    Ls: float = 278.3e-6
    k: float = 0.3
    VF: float = 0.7
    C_out: float = 300e-6
    R_load: float = 44.77

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not np.isfinite(v):
                raise InvalidParameters(f"{f.name} must be finite, got {v!r}")
        positive = ("L1", "C1", "Cs1", "Cs2", "R1_series", "rp", "rs", "Vin",
                    "Lp", "Ls", "C_out", "R_load")
        for name in positive:
            if getattr(self, name) <= 0:
                raise InvalidParameters(f"{name} must be > 0, got {getattr(self, name)!r}")
        if not 0.0 <= self.k < 1.0:
            raise InvalidParameters(f"k must lie in [0, 1), got {self.k!r}")
        if self.VF < 0:
            raise InvalidParameters(f"VF must be >= 0, got {self.VF!r}")

    def with_(self, **changes) -> "ConverterParams":
        return replace(self, **changes)


@dataclass(frozen=True)
class DerivedParams:
    M: float
    Lp_prime: float
    Ls_prime: float
    L_eq: float

    @property
    def Lp(self) -> float:
        return self.Lp_prime + self.M

    @property
    def Ls(self) -> float:
        return self.Ls_prime + self.M


def derive_params(raw: ConverterParams) -> DerivedParams:
    """Mutual inductance and T-model leakage split of the coupled coils.

    ``L_eq`` is the determinant of the coil inductance matrix.
    """
    M = raw.k * np.sqrt(raw.Lp * raw.Ls)
    Lp_prime = raw.Lp - M
    Ls_prime = raw.Ls - M
    if Lp_prime <= 0 or Ls_prime <= 0:
        raise NonPhysicalCoupling(
            f"leakage inductance not positive (Lp'={Lp_prime:.4g}, Ls'={Ls_prime:.4g})")
    L_eq = Lp_prime * Ls_prime + M * (Lp_prime + Ls_prime)
    if L_eq <= 0:
        raise NonPhysicalCoupling(f"L_eq not positive ({L_eq:.4g})")
    return DerivedParams(M=float(M), Lp_prime=float(Lp_prime),
                         Ls_prime=float(Ls_prime), L_eq=float(L_eq))


@dataclass(frozen=True)
class SubsystemSet:
    """Affine dynamics ``dx/dt = A[i] x + b[i]`` for modes 1..6.

    ``A`` has shape (6, 7, 7) and ``b`` shape (6, 7); mode ``i`` lives at
    index ``i - 1``.
    """

    A: np.ndarray
    b: np.ndarray
    variant: str = "corrected"
    C_out_row: np.ndarray = field(default_factory=lambda: OUTPUT_ROW.copy())

    def mode(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        if i not in MODES:
            raise ValueError(f"mode must be in 1..6, got {i!r}")
        return self.A[i - 1], self.b[i - 1]


def _common_primary(A, p):
    # rows shared by every corrected mode: L1, C1, Cs1 and the load
    A[0, 0] = -p.R1_series / p.L1
    A[0, 1] = -1.0 / p.L1
    A[1, 0] = 1.0 / p.C1
    A[1, 3] = -1.0 / p.C1
    A[2, 3] = -1.0 / p.Cs1
    A[6, 6] = -1.0 / (p.R_load * p.C_out)


def _corrected(p: ConverterParams, d: DerivedParams):
    A = np.zeros((6, N_STATES, N_STATES))
    b = np.zeros((6, N_STATES))
    Lp, Ls, M, Leq = d.Lp, d.Ls, d.M, d.L_eq
    for i in MODES:
        a, bi = A[i - 1], b[i - 1]
        s, pol = BRIDGE_SIGN[i], RECTIFIER_POLARITY[i]
        _common_primary(a, p)
        bi[0] = s * p.Vin / p.L1
        if pol == 0:
            # secondary current held; primary coil sees its self inductance
            a[3, 1] = a[3, 2] = 1.0 / Lp
            a[3, 3] = -p.rp / Lp
            continue
        # primary loop voltage  v1 = x2 + x3 - rp x4
        # secondary loop voltage w = rs x5 + x6 + pol (x7 + 2 VF)
        # [[Lp, -M], [M, -Ls]] d(x4, x5)/dt = (v1, w)
        a[3, 1] = a[3, 2] = Ls / Leq
        a[3, 3] = -p.rp * Ls / Leq
        a[3, 4] = -p.rs * M / Leq
        a[3, 5] = -M / Leq
        a[3, 6] = -pol * M / Leq
        bi[3] = -2.0 * pol * M * p.VF / Leq
        a[4, 1] = a[4, 2] = M / Leq
        a[4, 3] = -p.rp * M / Leq
        a[4, 4] = -p.rs * Lp / Leq
        a[4, 5] = -Lp / Leq
        a[4, 6] = -pol * Lp / Leq
        bi[4] = -2.0 * pol * Lp * p.VF / Leq
        a[5, 4] = 1.0 / p.Cs2
        a[6, 4] = pol / p.C_out
    return A, b


def _verbatim(p: ConverterParams, d: DerivedParams):
    A = np.zeros((6, N_STATES, N_STATES))
    b = np.zeros((6, N_STATES))
    Lp, Ls, M, Leq = d.Lp, d.Ls, d.M, d.L_eq
    L1, C1, Cs1, Cs2 = p.L1, p.C1, p.Cs1, p.Cs2
    rp, rs, R1, VF, Vin = p.rp, p.rs, p.R1_series, p.VF, p.Vin
    row7 = [0, 0, 0, 0, 1 / p.C_out, 0, -1 / (p.R_load * p.C_out)]
    row7_off = [0, 0, 0, 0, 0, 0, -1 / (p.R_load * p.C_out)]
    coupled_a = [  # modes 1 and 4
        [0, Ls / Leq, Ls / Leq, -rp * Ls / Leq, -rs * M / Leq, -M / Leq, -M / Leq],
        [0, M / Leq, M / Leq, -rp * M / Leq, -rs * Lp / Leq, -Lp / Leq, -Lp / Leq],
    ]
    coupled_b = [  # modes 3 and 6
        [0, Ls / Leq, -Ls / Leq, -rp * Ls / Leq, rs * M / Leq, M / Leq, M / Leq],
        [0, -M / Leq, -M / Leq, rp * M / Leq, -rs * Lp / Leq, -Lp / Leq, -Lp / Leq],
    ]
    blocked = [[0, 1 / Lp, 1 / Lp, -rp / Lp, 0, 0, 0], [0] * 7]
    table = {
        1: ([[-R1 / L1, -1 / L1, 0, 0, 0, 0, 0],
             [1 / C1, 0, 0, -1 / C1, 0, 0, 0],
             [0, 0, 0, -1 / Cs1, 0, 0, 0],
             *coupled_a,
             [0, 0, 0, 0, -1 / Cs2, 0, 0],
             row7],
            [Vin / L1, 0, 0, -2 * M * VF / Leq, -2 * Lp * VF / Leq, 0, 0]),
        2: ([[-R1 / L1, 1 / L1, 0, 0, 0, 0, 0],
             [1 / C1, 0, 0, 1 / C1, 0, 0, 0],
             [0, 0, 0, -1 / Cs1, 0, 0, 0],
             *blocked,
             [0] * 7,
             row7_off],
            [Vin / L1, 0, 0, 0, 0, 0, 0]),
        3: ([[-R1 / L1, 1 / L1, 0, 0, 0, 0, 0],
             [1 / C1, 0, 0, 1 / C1, 0, 0, 0],
             [0, 0, 0, -1 / Cs1, 0, 0, 0],
             *coupled_b,
             [0, 0, 0, 0, 1 / Cs2, 0, 0],
             row7],
            [-Vin / L1, 0, 0, 2 * M * VF / Leq, -2 * Lp * VF / Leq, 0, 0]),
        4: ([[-R1 / L1, -1 / L1, 0, 0, 0, 0, 0],
             [1 / C1, 0, 0, -1 / C1, 0, 0, 0],
             [0, 0, 0, -1 / Cs1, 0, 0, 0],
             *coupled_a,
             [0, 0, 0, 0, 1 / Cs2, 0, 0],
             row7],
            [-Vin / L1, 0, 0, -2 * M * VF / Leq, -2 * Lp * VF / Leq, 0, 0]),
        5: ([[-R1 / L1, -1 / L1, 0, 0, 0, 0, 0],
             [1 / C1, 0, 0, -1 / C1, 0, 0, 0],
             [0, 0, 0, -1 / Cs1, 0, 0, 0],
             *blocked,
             [0] * 7,
             row7_off],
            [-Vin / L1, 0, 0, 0, 0, 0, 0]),
        6: ([[-R1 / L1, -1 / L1, 0, 0, 0, 0, 0],
             [1 / C1, 0, 0, 1 / C1, 0, 0, 0],
             [0, 0, 0, -1 / Cs1, 0, 0, 0],
             *coupled_b,
             [0, 0, 0, 0, 1 / Cs2, 0, 0],
             row7],
            [Vin / L1, 0, 0, 2 * M * VF / Leq, -2 * Lp * VF / Leq, 0, 0]),
    }
    for i, (rows, bv) in table.items():
        A[i - 1] = np.array(rows, dtype=float)
        b[i - 1] = np.array(bv, dtype=float)
    return A, b


def build_subsystems(p: ConverterParams, d: DerivedParams | None = None,
                     variant: str = "corrected") -> SubsystemSet:
    if d is None:
        d = derive_params(p)
    if variant == "corrected":
        A, b = _corrected(p, d)
    elif variant == "verbatim":
        A, b = _verbatim(p, d)
    else:
        raise ValueError(f"unknown matrix variant {variant!r}; expected one of {VARIANTS}")
    return SubsystemSet(A=A, b=b, variant=variant)


def rectifier_voltage(x, p: ConverterParams, d: DerivedParams) -> float:
    """Open-circuit voltage at the rectifier input."""
    return (d.M / (d.Lp_prime + d.M) * (x[1] + x[2] - p.rp * x[3])
            - p.rs * x[4] - x[5])


@dataclass(frozen=True)
class SwitchingSurface:
    K: np.ndarray
    m: float

    def __post_init__(self):
        K = np.asarray(self.K, dtype=float).reshape(-1)
        if K.shape != (N_STATES,):
            raise ValueError(f"K must have {N_STATES} entries, got {K.shape[0]}")
        if not np.all(np.isfinite(K)) or not np.isfinite(self.m):
            raise ValueError("switching surface must be finite")
        if not np.any(K) and self.m == 0:
            raise ValueError("switching surface is identically zero")
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "m", float(self.m))

    @classmethod
    def published_85khz(cls) -> "SwitchingSurface":
        """Surface quoted for 85 kHz operation.

        Only six coefficients were given for the seven states; they are
        taken as k1..k6 and k7 is set to zero.
        """
        return cls(K=np.array([5413.4, 265.6, 463.1, 1445.4, 370.1, -1.0, 0.0]), m=2208.7)


def switch_state(surface: SwitchingSurface, x) -> int:
    """Bridge logic: +1 when ``K x + m >= 0`` (boundary included), else -1."""
    return 1 if float(surface.K @ np.asarray(x, dtype=float)) + surface.m >= 0.0 else -1


def mode_index(s: int, polarity: int) -> int:
    """Mode number for bridge sign ``s`` and rectifier polarity (-1, 0, +1)."""
    if s > 0:
        return 1 if polarity > 0 else (3 if polarity < 0 else 2)
    return 6 if polarity > 0 else (4 if polarity < 0 else 5)


def classify_mode(s: int, x, p: ConverterParams, d: DerivedParams,
                  prev: int | None = None) -> int:
    """Mode selection by the published condition function.

    The blocking test ``|v_pr| < x7`` takes precedence; otherwise ``x5``
    is compared with ``x4``.  On an exact tie the previous mode is kept
    when it is a conducting mode of the same bridge sign, else the lower
    index is used.
    """
    if s not in (-1, 1):
        raise ValueError(f"s must be +1 or -1, got {s!r}")
    if abs(rectifier_voltage(x, p, d)) < x[6]:
        return 2 if s > 0 else 5
    candidates = (1, 3) if s > 0 else (4, 6)
    if x[4] > x[3]:
        return 1 if s > 0 else 6
    if x[4] < x[3]:
        return 3 if s > 0 else 4
    return prev if prev in candidates else min(candidates)


def mode_guard_holds(mode: int, s: int, x, p: ConverterParams, d: DerivedParams) -> bool:
    """True when ``mode`` is admissible for (s, x) under :func:`classify_mode`'s precedence."""
    if BRIDGE_SIGN[mode] != s:
        return False
    blocked = abs(rectifier_voltage(x, p, d)) < x[6]
    if mode in (2, 5):
        return blocked
    if blocked:
        return False
    if mode in (1, 6):
        return x[4] >= x[3]
    return x[4] <= x[3]


def commutate(s: int, x, p: ConverterParams, d: DerivedParams,
              prev: int | None = None) -> tuple[int, bool]:
    """Mode selection with ideal-diode commutation.

    A conducting rectifier keeps its polarity while the secondary current
    flows in that direction.  When the current reaches zero (or the
    rectifier was blocking) the bridge conducts only if the open-circuit
    voltage exceeds the output voltage plus two diode drops; otherwise it
    blocks and the secondary current is pinned at zero.

    Returns the mode and whether ``x5`` must be reset to zero.
    """
    pol = RECTIFIER_POLARITY[prev] if prev in MODES else 0
    if pol != 0 and pol * x[4] > 0:
        return mode_index(s, pol), False
    v = rectifier_voltage(x, p, d)
    if abs(v) < x[6] + 2.0 * p.VF:
        return mode_index(s, 0), x[4] != 0.0
    return mode_index(s, 1 if v > 0 else -1), False


def derivative(mode: int, x, subsystems: SubsystemSet) -> np.ndarray:
    A, b = subsystems.mode(mode)
    return A @ np.asarray(x, dtype=float) + b


def energy_weights(p: ConverterParams, d: DerivedParams) -> np.ndarray:
    """Symmetric matrix ``W`` with stored energy ``0.5 x^T W x``.

    The coil block is ``[[Lp, -M], [-M, Ls]]``: ``x5`` is taken as leaving
    the dotted secondary terminal, which is the orientation used by the
    coupled-coil rows of both matrix variants.
    """
    W = np.zeros((N_STATES, N_STATES))
    W[0, 0] = p.L1
    W[1, 1] = p.C1
    W[2, 2] = p.Cs1
    W[3, 3] = d.Lp
    W[4, 4] = d.Ls
    W[3, 4] = W[4, 3] = -d.M
    W[5, 5] = p.Cs2
    W[6, 6] = p.C_out
    return W


def stored_energy(x, p: ConverterParams, d: DerivedParams) -> float:
    x = np.asarray(x, dtype=float)
    return 0.5 * float(x @ energy_weights(p, d) @ x)


@dataclass
class PassivityReport:
    mode: int
    variant: str
    passed: bool
    worst_ratio: float
    failing_entries: list = field(default_factory=list)


def _sample_states(rng, n, mode, scale):
    X = rng.normal(size=(n, N_STATES)) * scale
    if RECTIFIER_POLARITY[mode] == 0:
        # blocking modes only occur with the secondary current at zero
        X[:, 4] = 0.0
    return X


def passivity_screen(p: ConverterParams | None = None, variant: str = "corrected",
                     n_samples: int = 10_000, rng=None, tol: float = 1e-9) -> list[PassivityReport]:
    """Check that stored energy cannot grow in any mode with sources removed.

    With ``Vin = VF = 0`` the power balance of mode ``i`` is
    ``x^T W A_i x``.  A mode passes when that quantity, divided by the sum
    of the magnitudes of its terms, stays below ``tol`` for every sample.
    For a failing verbatim mode the entries that differ from the circuit
    derivation are listed as ``(row, col, published, derived)`` with
    1-based indices.
    """
    if p is None:
        p = ConverterParams()
    rng = np.random.default_rng(0) if rng is None else rng
    p0 = p.with_(Vin=1.0, VF=0.0)  # Vin only enters b; keep it positive for validation
    d = derive_params(p0)
    W = energy_weights(p0, d)
    subs = build_subsystems(p0, d, variant)
    ref = build_subsystems(p0, d, "corrected")
    # typical magnitudes: currents ~10 A, tank voltages ~1 kV, output ~200 V
    scale = np.array([10.0, 1e3, 1e3, 10.0, 10.0, 1e3, 200.0])
    reports = []
    for i in MODES:
        A = subs.A[i - 1]
        X = _sample_states(rng, n_samples, i, scale)
        terms = (X @ W)[:, :, None] * A[None, :, :] * X[:, None, :]
        power = terms.sum(axis=(1, 2))
        ratio = power / np.abs(terms).sum(axis=(1, 2)).clip(min=1e-300)
        worst = float(ratio.max())
        passed = worst <= tol
        failing = []
        if not passed:
            diff = ~np.isclose(A, ref.A[i - 1], rtol=1e-12, atol=0.0)
            for r, c in zip(*np.nonzero(diff)):
                failing.append((int(r) + 1, int(c) + 1, float(A[r, c]), float(ref.A[i - 1][r, c])))
        reports.append(PassivityReport(mode=i, variant=variant, passed=passed,
                                       worst_ratio=worst, failing_entries=failing))
    return reports


def source_sign_mismatches(subsystems: SubsystemSet, p: ConverterParams) -> list[int]:
    """Modes whose bridge forcing term disagrees with the mode's bridge sign."""
    bad = []
    for i in MODES:
        if np.sign(subsystems.b[i - 1][0]) != BRIDGE_SIGN[i]:
            bad.append(i)
    return bad
