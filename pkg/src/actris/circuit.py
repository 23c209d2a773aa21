"""Unit-cell physics of a tunnel-diode active RIS element.

Everything is derived from the transmission-line model: a bottom-layer
inductance in parallel with a series branch (top-layer inductance, tunable
capacitance, tunable resistance). A negative resistance realized by a tunnel
diode biased at its stability point turns the cell into a reflection
amplifier. All quantities are SI internally.
"""

from dataclasses import dataclass

import numpy as np

from .errors import (
    CapacitanceRangeError,
    CircuitError,
    InfeasiblePhaseError,
    PhaseNotRealizableError,
)
from .numerics import lambert_w0, lambert_w0_vec

TWO_PI = 2.0 * np.pi

# Diode exponent band: the stability-point resistance is only realizable for
# steepness exponents in this interval.
M_LO = 1.0
M_HI = 3.0


@dataclass(frozen=True)
class CircuitParams:
    """Fixed hardware constants of one unit cell.

    l1, l2     bottom/top layer inductances (H)
    z0         free-space impedance (ohm)
    omega      angular frequency of the incident carrier (rad/s)
    r0         diode ohmic resistance in the linear region (ohm)
    v0         diode voltage scale (V)
    c_range    tunable capacitance interval (F)
    r_passive  fixed positive resistance of passive cells (ohm)
    """

    l1: float = 4.5e-9
    l2: float = 0.7e-9
    z0: float = 377.0
    omega: float = TWO_PI * 2.4e9
    r0: float = 1.5
    v0: float = 0.1
    c_range: tuple = (0.05e-12, 250e-12)
    r_passive: float = 1.5

    def __post_init__(self):
        for name in ("l1", "l2", "z0", "omega", "r0", "v0", "r_passive"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"CircuitParams.{name} must be positive")
        c_lo, c_hi = self.c_range
        if not 0.0 < c_lo < c_hi:
            raise ValueError("CircuitParams.c_range must satisfy 0 < C_lo < C_hi")
        if not feasibility_condition(self):
            raise ValueError(
                "circuit constants admit a phase with zero usable resistance range"
            )


@dataclass(frozen=True)
class CellState:
    """Realized (resistance, capacitance) of one cell. r < 0 means active."""

    r: float
    c: float


def fig2_params():
    """Parameter set of the amplitude-bound study (softer diode, r0 = 0.5)."""
    return CircuitParams(r0=0.5)


def _impedance(p, c, r):
    series = 1j * p.omega * p.l2 + 1.0 / (1j * p.omega * c) + r
    return (1j * p.omega * p.l1 * series) / (1j * p.omega * p.l1 + series)


def _gamma_of_z(p, z):
    return (z - p.z0) / (z + p.z0)


def _gamma(p, c, r):
    return _gamma_of_z(p, _impedance(p, c, r))


def impedance(p, cell):
    """Cell impedance of the parallel resonant circuit."""
    if cell.c <= 0.0:
        raise CircuitError("capacitance must be positive")
    return complex(_impedance(p, cell.c, cell.r))


def reflection_coeff(p, cell):
    """Reflection coefficient from the cell/free-space impedance mismatch."""
    z = impedance(p, cell)
    if abs(z + p.z0) < 1e-12 * p.z0:
        raise CircuitError("impedance equals -Z0: reflection pole (infeasible state)")
    return complex(_gamma_of_z(p, z))


def tunneling_current(v, p, m):
    """Diode current in the tunneling region for applied voltage v."""
    if not M_LO <= m <= M_HI:
        raise ValueError(f"steepness exponent m={m} outside [{M_LO}, {M_HI}]")
    if v < 0.0:
        raise ValueError("tunneling current model requires v >= 0")
    return (v / p.r0) * np.exp(-((v / p.v0) ** m))


def stable_resistance(m, p):
    """Stability-point negative resistance for steepness exponent m.

    Strictly increasing in m: the m-band [1, 3] maps to the usable
    resistance band [stable_resistance(1), stable_resistance(3)].
    """
    m = np.asarray(m, dtype=float)
    if np.any(m < M_LO) or np.any(m > M_HI):
        raise ValueError(f"steepness exponent outside [{M_LO}, {M_HI}]")
    out = -(p.r0 / m) * np.exp((m + 1.0) / m)
    return float(out) if out.ndim == 0 else out


def m_from_resistance(r, p):
    """Invert the stability-point relation: exponent m realizing resistance r."""
    band_lo = stable_resistance(M_LO, p)
    band_hi = stable_resistance(M_HI, p)
    tol = 1e-9 * abs(band_lo)
    if not band_lo - tol <= r <= band_hi + tol:
        raise ValueError(
            f"resistance {r} outside the diode band [{band_lo:.4f}, {band_hi:.4f}]"
        )
    return 1.0 / lambert_w0(-r / (p.r0 * np.e))


def _power_active(r, p):
    # Smooth power law P(R) for R < 0; also evaluates slightly outside the
    # diode band, which the budget-repair accounting relies on.
    w = lambert_w0(-r / (p.r0 * np.e))
    return (p.v0**2 / p.r0) * (w + 1.0) ** (2.0 * w)


def power_consumption(r, p, extend_band=False):
    """DC power drawn to bias the cell at resistance r.

    Zero for passive (r >= 0) cells. On the negative axis the power law is
    strictly decreasing in r. Resistances below the m = 1 band edge raise
    unless extend_band is set, in which case the smooth law is evaluated
    anyway (used when the amplitude model slightly overshoots the band).
    """
    if r >= 0.0:
        return 0.0
    band_lo = stable_resistance(M_LO, p)
    if r < band_lo * (1.0 + 1e-9) and not extend_band:
        raise ValueError(f"resistance {r} below the diode band edge {band_lo:.4f}")
    return _power_active(r, p)


def power_consumption_vec(r, p):
    """Vectorized power draw; zero on the passive side, smooth law below."""
    r = np.asarray(r, dtype=float)
    w = lambert_w0_vec(np.maximum(-r, 0.0) / (p.r0 * np.e))
    return np.where(r < 0.0, (p.v0**2 / p.r0) * (w + 1.0) ** (2.0 * w), 0.0)


def _tan_coefficients(p):
    """Constants of the phase equation, grouped by their tan(phi) factors."""
    l1, l2, z0, w = p.l1, p.l2, p.z0, p.omega
    a3 = z0**2 - (w * l1) ** 2
    a2 = (z0 * w * (l1 + l2)) ** 2 - (w**2 * l1 * l2) ** 2
    a1 = 2.0 * z0 * w * l1
    a0 = 2.0 * z0 * w**3 * l1 * l2 * (l1 + l2)
    b1 = 2.0 * w**2 * l1**2 * l2 - 2.0 * z0**2 * (l1 + l2)
    b0 = -4.0 * z0 * w * l1 * l2 - 2.0 * z0 * w * l1**2
    c1 = z0**2 / w**2 - l1**2
    c0 = 2.0 * z0 * l1 / w
    return a3, a2, a1, a0, b1, b0, c1, c0


def _phase_quadratic(p, r, phi):
    """Coefficients (A, B, C) of A*C_n^2 + B*C_n + C = 0 for the target phase.

    The tan(phi) equation is cross-multiplied by cos(phi) so the
    coefficients stay finite at phi = pi/2 and 3*pi/2.
    """
    a3, a2, a1, a0, b1, b0, c1, c0 = _tan_coefficients(p)
    s, c = np.sin(phi), np.cos(phi)
    qa = (a3 * r**2 + a2) * s + (a1 * r**2 + a0) * c
    qb = b1 * s + b0 * c
    qc = c1 * s + c0 * c
    return qa, qb, qc


def resistance_range(p, phi):
    """Symmetric bound F(phi) >= |R| for the phase equation to have real roots."""
    a3, a2, a1, a0, b1, b0, c1, c0 = _tan_coefficients(p)
    phi = np.asarray(phi, dtype=float)
    s, c = np.sin(phi), np.cos(phi)
    qb = b1 * s + b0 * c
    qc = c1 * s + c0 * c
    num = qb**2 - 4.0 * (a2 * s + a0 * c) * qc
    den = 4.0 * qc * (a3 * s + a1 * c)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.sqrt(np.abs(num / den))
    out = np.where(np.isfinite(out), out, np.inf)
    return float(out) if out.ndim == 0 else out


def feasibility_condition(p):
    """True iff F(phi) never vanishes, so every phase keeps a usable R range."""
    a3, a2, a1, a0, b1, b0, c1, c0 = _tan_coefficients(p)
    del a3, a1
    lhs = (2.0 * b1 * b0 - 4.0 * a2 * c0 - 4.0 * a0 * c1) ** 2
    rhs = 4.0 * (b1**2 - 4.0 * a2 * c1) * (b0**2 - 4.0 * a0 * c0)
    return bool(lhs - rhs <= 0.0)


def _phase_roots(p, r, phi):
    """Positive real roots of the phase quadratic, as an array (may be empty)."""
    qa, qb, qc = _phase_quadratic(p, r, phi)
    if qa == 0.0:
        # degenerate to a linear equation
        roots = np.array([-qc / qb]) if qb != 0.0 else np.array([])
    else:
        disc = qb * qb - 4.0 * qa * qc
        if disc < 0.0:
            raise InfeasiblePhaseError(
                f"|R|={abs(r):.4f} exceeds the feasible range "
                f"F(phi)={resistance_range(p, phi):.4f}"
            )
        # cancellation-safe quadratic formula (qa passes through zero with phi)
        q = -0.5 * (qb + np.copysign(np.sqrt(disc), qb))
        roots = np.array([q / qa, qc / q]) if q != 0.0 else np.array([0.0, 0.0])
    return roots[roots > 0.0]


def _phase_distance(a, b):
    return np.abs((a - b + np.pi) % TWO_PI - np.pi)


def _capacitance_for_phase_unchecked(p, r, phi, tol=1e-6):
    """Root of the phase quadratic whose realized reflection phase equals phi.

    Both roots are evaluated through the reflection coefficient; the spurious
    root realizes phi +/- pi and is rejected. Raises when the phase is not
    realizable (no positive root lands on phi).
    """
    phi = float(phi) % TWO_PI
    best = None
    best_err = np.inf
    for c in _phase_roots(p, r, phi):
        realized = np.angle(_gamma(p, c, r)) % TWO_PI
        err = _phase_distance(realized, phi)
        if err < best_err:
            best, best_err = c, err
    if best is None or best_err > tol:
        raise PhaseNotRealizableError(
            f"no capacitance realizes phase {phi:.6f} at R={r:.4f}"
        )
    return float(best)


def capacitance_for_phase(p, r, phi):
    """Capacitance that realizes reflection phase phi at resistance r."""
    c = _capacitance_for_phase_unchecked(p, r, phi)
    c_lo, c_hi = p.c_range
    if not c_lo <= c <= c_hi:
        raise CapacitanceRangeError(
            f"realizing capacitance {c:.4g} F outside range [{c_lo:.4g}, {c_hi:.4g}]"
        )
    return c


def usable_resistance_band(p, phi, m_band=(M_LO, M_HI)):
    """Usable (most negative, least negative) resistances at phase phi.

    Intersects the symmetric feasibility bound |R| <= F(phi) with the
    diode-achievable interval and the R < 0 sign constraint.
    """
    m_lo, m_hi = m_band
    band_lo = stable_resistance(m_lo, p)
    band_hi = stable_resistance(m_hi, p)
    f = resistance_range(p, phi)
    r_min = max(-f, band_lo)
    r_max = band_hi
    if r_max < r_min:
        raise InfeasiblePhaseError(
            f"diode band empty at phase {phi:.4f}: F(phi)={f:.4f}"
        )
    return r_min, r_max


def exact_amplitude_bounds(p, phi, m_band=(M_LO, M_HI)):
    """Exact reflection-amplitude interval achievable at phase phi.

    The amplitude decreases with the (negative) resistance, so the upper
    bound is realized at the most negative usable resistance and the lower
    bound at the least negative one.
    """
    r_min, r_max = usable_resistance_band(p, phi, m_band)
    a_hi = abs(_gamma(p, _capacitance_for_phase_unchecked(p, r_min, phi), r_min))
    a_lo = abs(_gamma(p, _capacitance_for_phase_unchecked(p, r_max, phi), r_max))
    return (a_lo, a_hi) if a_lo <= a_hi else (a_hi, a_lo)


def passive_amplitude(p, phi):
    """Reflection amplitude of a passive cell (fixed r_passive) at phase phi."""
    c = _capacitance_for_phase_unchecked(p, p.r_passive, phi)
    return abs(_gamma(p, c, p.r_passive))


def circuit_from_gamma(p, gamma):
    """Invert a reflection coefficient into the realizing (R, C) pair.

    Solves the series-branch reactance X = R + 1/(j*omega*C) in closed form
    and splits it into resistance and capacitance. The reflection coefficient
    must lie on the capacitive side of the realizable locus (Im X < 0).
    """
    gamma = complex(gamma)
    l1, l2, w, z0 = p.l1, p.l2, p.omega, p.z0
    den = w * l1 * (1.0 - gamma) + 1j * z0 * (1.0 + gamma)
    if abs(den) < 1e-12 * z0:
        raise CircuitError("reflection coefficient at the inversion pole")
    x = w * (z0 * (l1 + l2) * (1.0 + gamma) + 1j * w * l1 * l2 * (gamma - 1.0)) / den
    if x.imag >= 0.0:
        raise PhaseNotRealizableError(
            f"gamma={gamma:.6f} needs an inductive branch reactance; "
            "no capacitance realizes it"
        )
    r = x.real
    c = 1.0 / (abs(x.imag) * w)
    return CellState(r=float(r), c=float(c))


def phase_root_grid(p, r, phis, tol=1e-6):
    """Vectorized phase-realizing capacitance over a grid of phases.

    Returns an array aligned with phis; entries are NaN where no positive
    root of the phase quadratic realizes the phase (the unrealizable arc of
    the reflection locus). Used by the amplitude-model fitting sweep.
    """
    phis = np.asarray(phis, dtype=float) % TWO_PI
    qa, qb, qc = _phase_quadratic(p, r, phis)
    disc = qb * qb - 4.0 * qa * qc
    bad = disc < 0.0
    q = -0.5 * (qb + np.copysign(np.sqrt(np.where(bad, 0.0, disc)), qb))
    with np.errstate(divide="ignore", invalid="ignore"):
        roots = np.stack([q / qa, qc / q])
    out = np.full(phis.shape, np.nan)
    for k in range(2):
        c = roots[k]
        valid = np.isfinite(c) & (c > 0.0) & ~bad
        realized = np.full(phis.shape, np.nan)
        realized[valid] = np.angle(_gamma(p, c[valid], r)) % TWO_PI
        match = valid & (_phase_distance(realized, phis) <= tol)
        out[match] = c[match]
    return out


def realizable_phase(p, r, phi, tol=1e-6):
    """True when some positive capacitance realizes phase phi at resistance r."""
    try:
        _capacitance_for_phase_unchecked(p, r, phi, tol=tol)
        return True
    except CircuitError:
        return False


def nearest_realizable_cell(p, r, phi, max_offset=0.5):
    """Cell at resistance r realizing the phase closest to phi.

    Phases on the unrealizable arc of the reflection locus are nudged
    outward until a capacitance root exists. Used when a configuration asks
    a fixed-resistance cell for a phase the hardware cannot hit exactly.
    """
    try:
        return CellState(r=r, c=_capacitance_for_phase_unchecked(p, r, phi))
    except CircuitError:
        pass
    step = 2e-3
    while step <= max_offset:
        for sign in (1.0, -1.0):
            try:
                c = _capacitance_for_phase_unchecked(p, r, phi + sign * step)
                return CellState(r=r, c=c)
            except CircuitError:
                continue
        step *= 1.6
    raise PhaseNotRealizableError(
        f"no phase within {max_offset} rad of {phi:.4f} realizable at R={r:.4f}"
    )
