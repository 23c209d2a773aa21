"""Shared validation of finished designs against the optimization constraints."""

import numpy as np

from . import circuit

AMPLITUDE_TOL = 1e-6
POWER_TOL = 1e-9


def validate_design(scenario, fits, v, design):
    """Check a finished design against the problem constraints.

    Returns a list of human-readable violations (empty when valid): transmit
    power within budget, true surface power within budget, and every
    reflection amplitude inside its phase-dependent band. Model-space designs
    are checked against the cosine bounds, circuit-space ones against the
    exact bounds at their realized phases.
    """
    problems = []
    tx = float(np.trace(v.conj().T @ v).real)
    if tx > scenario.p_t_w + POWER_TOL:
        problems.append(f"transmit power {tx:.6g} W exceeds budget {scenario.p_t_w:.6g} W")

    power = float(design.ris_power_w)
    if power > scenario.p_ris_w + POWER_TOL:
        problems.append(
            f"surface power {power:.6g} W exceeds budget {scenario.p_ris_w:.6g} W"
        )

    amp = np.abs(design.gamma)
    if design.band == "approx":
        lower, upper = fits.bounds(design.phi)
        bad = (amp < lower - AMPLITUDE_TOL) | (amp > upper + AMPLITUDE_TOL)
        for i in np.flatnonzero(bad):
            problems.append(
                f"element {i}: amplitude {amp[i]:.6f} outside "
                f"[{lower[i]:.6f}, {upper[i]:.6f}] at phase {design.phi[i]:.4f}"
            )
    else:
        params = scenario.circuit
        for i in range(design.gamma.size):
            if not design.active_mask[i]:
                continue
            try:
                lo, hi = circuit.exact_amplitude_bounds(params, design.phi[i])
            except circuit.CircuitError:
                continue
            if amp[i] < lo - AMPLITUDE_TOL or amp[i] > hi + AMPLITUDE_TOL:
                problems.append(
                    f"element {i}: amplitude {amp[i]:.6f} outside exact "
                    f"[{lo:.6f}, {hi:.6f}] at phase {design.phi[i]:.4f}"
                )
    return problems
