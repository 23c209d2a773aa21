"""Cosine-fit phase-amplitude model and assembly of the reflection vector.

The exact amplitude bounds of the circuit model are fitted once per element
class with shifted cosines; the resulting closed form is what the optimizers
differentiate. The N-element reflection vector is assembled elementwise from
the fit coefficients (the Kronecker-structured form collapses to a quadratic
polynomial in the unit-modulus phasors).
"""

import warnings
from dataclasses import dataclass

import numpy as np

from . import circuit
from .circuit import CellState, CircuitParams, TWO_PI
from .errors import CircuitError


@dataclass(frozen=True)
class FitParams:
    """Cosine-approximation coefficients for one element class.

    delta_min/delta_max bound the lower amplitude curve, beta_min/beta_max
    the upper one; theta is minus the phase at which both curves peak. For a
    passive class the two curves coincide.
    """

    delta_min: float
    delta_max: float
    beta_min: float
    beta_max: float
    theta: float

    def __post_init__(self):
        if not (self.delta_min <= self.delta_max <= self.beta_max + 1e-12):
            raise ValueError("fit requires delta_min <= delta_max <= beta_max")
        if not (self.delta_min <= self.beta_min + 1e-12):
            raise ValueError("fit requires delta_min <= beta_min")

    def to_dict(self):
        return {
            "delta_min": self.delta_min,
            "delta_max": self.delta_max,
            "beta_min": self.beta_min,
            "beta_max": self.beta_max,
            "theta_rad": self.theta,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            delta_min=float(d["delta_min"]),
            delta_max=float(d["delta_max"]),
            beta_min=float(d["beta_min"]),
            beta_max=float(d["beta_max"]),
            theta=float(d["theta_rad"]),
        )


def exact_bound_curves(params, kind, grid_size=3600, m_band=(circuit.M_LO, circuit.M_HI)):
    """Exact amplitude bounds swept over a uniform phase grid.

    Returns (phis, lower, upper); grid points on the unrealizable arc of the
    reflection locus are NaN. For the passive class both curves are the
    single passive amplitude curve.
    """
    phis = np.linspace(0.0, TWO_PI, grid_size, endpoint=False)
    if kind == "passive":
        c = circuit.phase_root_grid(params, params.r_passive, phis)
        amp = np.full(grid_size, np.nan)
        ok = np.isfinite(c)
        amp[ok] = np.abs(circuit._gamma(params, c[ok], params.r_passive))
        return phis, amp, amp.copy()
    if kind != "active":
        raise ValueError(f"unknown element class {kind!r}")
    band_lo = circuit.stable_resistance(m_band[0], params)
    band_hi = circuit.stable_resistance(m_band[1], params)
    f = circuit.resistance_range(params, phis)
    lower = np.full(grid_size, np.nan)
    upper = np.full(grid_size, np.nan)
    r_min = np.maximum(-f, band_lo)
    feasible = r_min <= band_hi
    # upper curve: most negative usable resistance (phase dependent when the
    # feasibility bound clips the diode band)
    for r in np.unique(r_min[feasible]):
        sel = feasible & (r_min == r)
        c = circuit.phase_root_grid(params, r, phis[sel])
        ok = np.isfinite(c)
        vals = np.full(sel.sum(), np.nan)
        vals[ok] = np.abs(circuit._gamma(params, c[ok], r))
        upper[sel] = vals
    c = circuit.phase_root_grid(params, band_hi, phis)
    ok = np.isfinite(c)
    lower[ok] = np.abs(circuit._gamma(params, c[ok], band_hi))
    lower[~feasible] = np.nan
    upper[~feasible] = np.nan
    return phis, lower, upper


def fit_amplitude_model(params, kind="active", grid_size=3600, m_band=(circuit.M_LO, circuit.M_HI)):
    """Fit the cosine amplitude model for an element class.

    Sweeps the exact bounds over a uniform grid, takes the grid extrema as
    the fit coefficients, and sets theta to minus the phase of the upper
    curve's maximum. A warning is emitted if the two curves peak more than
    one grid step apart.
    """
    if grid_size < 360:
        raise ValueError("fitting grid must have at least 360 points")
    phis, lower, upper = exact_bound_curves(params, kind, grid_size, m_band)
    if not np.isfinite(upper).any():
        raise CircuitError("no realizable phase found while fitting")
    i_up = int(np.nanargmax(upper))
    i_lo = int(np.nanargmax(lower))
    if min(abs(i_up - i_lo), grid_size - abs(i_up - i_lo)) > 1:
        warnings.warn(
            "amplitude curves peak at different phases "
            f"({phis[i_up]:.4f} vs {phis[i_lo]:.4f})",
            stacklevel=2,
        )
    return FitParams(
        delta_min=float(np.nanmin(lower)),
        delta_max=float(np.nanmax(lower)),
        beta_min=float(np.nanmin(upper)),
        beta_max=float(np.nanmax(upper)),
        theta=float(-phis[i_up]),
    )


def approx_amplitude_bounds(fit, phi):
    """Cosine-model amplitude interval (lower, upper) at phase phi."""
    cos_term = np.cos(np.asarray(phi, dtype=float) + fit.theta) + 1.0
    lower = 0.5 * (fit.delta_max - fit.delta_min) * cos_term + fit.delta_min
    upper = 0.5 * (fit.beta_max - fit.beta_min) * cos_term + fit.beta_min
    return lower, upper


def amplitude_from_normalized(fit, phi, alpha_bar):
    """Amplitude at phase phi for a normalized control in [0, 1]."""
    alpha_bar = np.asarray(alpha_bar, dtype=float)
    if np.any(alpha_bar < 0.0) or np.any(alpha_bar > 1.0):
        raise ValueError("normalized amplitude outside [0, 1]")
    lower, upper = approx_amplitude_bounds(fit, phi)
    return lower + alpha_bar * (upper - lower)


class ElementFits:
    """Per-element fit coefficients for an RIS with mixed active/passive cells.

    Stores the class fits plus vectorized coefficient arrays. x is the
    amplitude-range excess of the upper curve over the lower one and is zero
    for passive elements, which makes their entries independent of the
    normalized amplitude control.
    """

    def __init__(self, fits, active_mask):
        self.active_mask = np.asarray(active_mask, dtype=bool)
        self.fits = list(fits)
        if len(self.fits) != self.active_mask.size:
            raise ValueError("one FitParams per element required")
        self.n = self.active_mask.size
        self.delta_min = np.array([f.delta_min for f in self.fits])
        self.delta_max = np.array([f.delta_max for f in self.fits])
        self.beta_min = np.array([f.beta_min for f in self.fits])
        self.beta_max = np.array([f.beta_max for f in self.fits])
        self.theta = np.array([f.theta for f in self.fits])
        self.y = self.delta_max - self.delta_min
        self.x = (self.beta_max - self.beta_min) - self.y

    @classmethod
    def from_classes(cls, active_fit, passive_fit, active_mask):
        active_mask = np.asarray(active_mask, dtype=bool)
        fits = [active_fit if a else passive_fit for a in active_mask]
        return cls(fits, active_mask)

    def bounds(self, phi):
        """Per-element (lower, upper) amplitude bounds at phases phi."""
        cos_term = np.cos(np.asarray(phi, dtype=float) + self.theta) + 1.0
        lower = 0.5 * self.y * cos_term + self.delta_min
        upper = 0.5 * (self.x + self.y) * cos_term + self.beta_min
        return lower, upper

    def coefficients(self, alpha_bar):
        """Quadratic-polynomial coefficients (z2, z1, z) of the reflection vector.

        With p the vector of unit-modulus phasors, gamma = z2*p^2 + z1*p + z
        elementwise for the given normalized amplitudes.
        """
        alpha_bar = np.asarray(alpha_bar, dtype=float)
        mix = self.y + self.x * alpha_bar
        z2 = 0.25 * np.exp(1j * self.theta) * mix
        z1 = (
            0.5 * self.y
            + self.delta_min
            + (0.5 * self.x + self.beta_min - self.delta_min) * alpha_bar
        ).astype(complex)
        z = 0.25 * np.exp(-1j * self.theta) * mix
        return z2, z1, z


def reflection_vector(phi, alpha_bar, fits):
    """Reflection coefficients of all N elements for phases and amplitude controls."""
    phi = np.asarray(phi, dtype=float)
    alpha_bar = np.asarray(alpha_bar, dtype=float)
    if not phi.shape == alpha_bar.shape == (fits.n,):
        raise ValueError("phi, alpha_bar and fits must agree on the element count")
    if np.any(alpha_bar < 0.0) or np.any(alpha_bar > 1.0):
        raise ValueError("normalized amplitude outside [0, 1]")
    z2, z1, z = fits.coefficients(alpha_bar)
    phasor = np.exp(1j * phi)
    return z2 * phasor**2 + z1 * phasor + z


@dataclass
class RISDesign:
    """Finalized surface configuration: controls, model reflection, circuits.

    band records which amplitude-bound family the reflection vector was
    designed against: the cosine model ("approx") or the exact circuit
    bounds ("exact", used by the circuit-space benchmark searches).
    """

    phi: np.ndarray
    alpha_bar: np.ndarray
    active_mask: np.ndarray
    gamma: np.ndarray
    cells: tuple
    ris_power_w: float
    repair_passes: int = 1
    band: str = "approx"


def _fallback_cell(params, gamma):
    """Nearest passive-side realization of a reflection target.

    The cosine model keeps a collapsed near-unit amplitude band on the
    unrealizable arc of the reflection locus; targets there (and in the
    narrow non-capacitive sliver around them) are realized at a reduced
    amplitude with nonnegative resistance, which draws no bias power.
    """
    for _ in range(80):
        gamma = 0.97 * gamma
        try:
            cell = circuit.circuit_from_gamma(params, gamma)
        except CircuitError:
            continue
        if cell.r >= 0.0:
            return cell
    return circuit.nearest_realizable_cell(params, params.r_passive, float(np.angle(gamma)))


def _active_cell(params, gamma_target, phi_target):
    """Realize an active-cell reflection target within the diode band.

    The tunable resistance saturates at the band edges: when the cosine
    model requests an amplitude beyond the exact bounds at this phase, the
    cell keeps the phase and delivers the nearest achievable amplitude
    (the band-edge one), like a passive cell delivers its own curve.
    """
    band_lo = circuit.stable_resistance(circuit.M_LO, params)
    band_hi = circuit.stable_resistance(circuit.M_HI, params)
    try:
        cell = circuit.circuit_from_gamma(params, gamma_target)
        if cell.r < 0.0 and not band_lo <= cell.r <= band_hi:
            r = float(np.clip(cell.r, band_lo, band_hi))
            cell = CellState(
                r=r, c=circuit._capacitance_for_phase_unchecked(params, r, phi_target)
            )
        return cell
    except CircuitError:
        return _fallback_cell(params, gamma_target)


def realize_design(params, fits, phi, alpha, alpha_bar=None):
    """Map per-element (phase, amplitude) targets onto circuit states.

    Active cells are solved from their target reflection coefficient with
    the resistance saturating at the diode band; passive cells keep their
    fixed resistance and realize the nearest achievable phase. The recorded
    gamma is the model value; the circuit amplitude follows the exact
    curves. Returns the design together with the true total power drawn.
    """
    phi = np.asarray(phi, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    n = phi.size
    gamma = alpha * np.exp(1j * phi)
    cells = []
    for i in range(n):
        if fits.active_mask[i]:
            cell = _active_cell(params, gamma[i], phi[i])
        else:
            cell = circuit.nearest_realizable_cell(params, params.r_passive, phi[i])
        cells.append(cell)
    active_r = np.array([cells[i].r for i in np.flatnonzero(fits.active_mask)])
    total_power = float(circuit.power_consumption_vec(active_r, params).sum()) if active_r.size else 0.0
    if alpha_bar is None:
        lower, upper = fits.bounds(phi)
        span = np.where(upper > lower, upper - lower, 1.0)
        alpha_bar = np.clip((alpha - lower) / span, 0.0, 1.0)
        alpha_bar[~fits.active_mask] = 0.0
    return RISDesign(
        phi=phi,
        alpha_bar=np.asarray(alpha_bar, dtype=float),
        active_mask=fits.active_mask.copy(),
        gamma=gamma,
        cells=tuple(cells),
        ris_power_w=total_power,
    )


def realize_minimum_power(params, fits, phi):
    """Minimum-bias configuration: every active diode at its lowest power.

    Cells sit at the least negative band resistance (their exact lower
    amplitude curve); the recorded reflection vector keeps the cosine-model
    floor, which can overstate the delivered amplitude by the fit error.
    Used as the terminal fallback when the budget leaves no amplitude slack.
    """
    phi = np.asarray(phi, dtype=float)
    band_hi = circuit.stable_resistance(circuit.M_HI, params)
    lower, _ = fits.bounds(phi)
    cells = []
    for i in range(phi.size):
        r = band_hi if fits.active_mask[i] else params.r_passive
        cells.append(circuit.nearest_realizable_cell(params, r, phi[i]))
    active_r = np.array([c.r for c, a in zip(cells, fits.active_mask) if a])
    total = float(circuit.power_consumption_vec(active_r, params).sum()) if active_r.size else 0.0
    return RISDesign(
        phi=phi,
        alpha_bar=np.zeros(phi.size),
        active_mask=fits.active_mask.copy(),
        gamma=lower * np.exp(1j * phi),
        cells=tuple(cells),
        ris_power_w=total,
    )
