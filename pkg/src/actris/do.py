"""Single-step decoupled design: phase by cascade-norm maximization,
amplitudes by budgeted sum maximization, then SVD precoding with
waterfilling. Serves standalone or as the initializer of the alternating
optimizer."""

from dataclasses import dataclass

import numpy as np

from . import circuit, reflection
from .ao import PhaseObjective, power_repair_loop, rmo_phase_opt
from .channel import effective_channel, spectral_efficiency
from .errors import InfeasibleBudgetError
from .numerics import svd


def waterfill(gains, p_t, tol=1e-12):
    """Waterfilling power allocation over parallel channels.

    gains are per-unit-power SINRs; returns powers summing to the budget
    (streams with zero gain get nothing; all-zero gains give all zeros).
    """
    gains = np.asarray(gains, dtype=float)
    if np.any(gains < 0.0):
        raise ValueError("channel gains must be nonnegative")
    pos = gains > 0.0
    if not pos.any():
        return np.zeros_like(gains)

    def total(eta):
        return float(np.sum(np.maximum(1.0 / eta - 1.0 / gains[pos], 0.0)))

    hi = float(gains.max())
    lo = 1.0 / (p_t + np.sum(1.0 / gains[pos]))
    for _ in range(200):
        eta = 0.5 * (lo + hi)
        t = total(eta)
        if abs(t - p_t) <= tol * max(p_t, 1.0):
            break
        if t > p_t:
            lo = eta
        else:
            hi = eta
    p = np.zeros_like(gains)
    p[pos] = np.maximum(1.0 / eta - 1.0 / gains[pos], 0.0)
    # exact budget despite bisection rounding
    if p.sum() > 0.0:
        p *= p_t / p.sum()
    return p


def svd_precoder_combiner(ch, gamma, scenario, ris_noise_in_gains=True):
    """Eigenmode precoder/combiner with waterfilled stream powers.

    Diagonalizes the effective channel, feeds the per-unit-power SINRs
    (including the surface-noise quadratic unless disabled) to waterfilling,
    and keeps only the streams that receive power.
    """
    heff = effective_channel(ch, gamma)
    u1, lam, u2h = svd(heff)
    d = min(scenario.d, lam.size)
    u1 = u1[:, :d]
    u2 = u2h.conj().T[:, :d]
    lam = lam[:d]
    noise = scenario.sigma2_w * scenario.f_r * np.ones(d)
    if ris_noise_in_gains:
        h2g = ch.h_2 * np.asarray(gamma)[None, :]
        pickup = np.linalg.norm(h2g.conj().T @ u1, axis=0) ** 2
        noise = noise + scenario.sigma2_w * scenario.f_s * pickup
    gains = lam**2 / noise
    powers = waterfill(gains, scenario.p_t_w)
    keep = powers > 0.0
    if not keep.any():
        return (
            np.zeros((scenario.m_t, 1), dtype=complex),
            u1[:, :1],
            gains,
            powers,
        )
    v = u2[:, keep] * np.sqrt(powers[keep])[None, :]
    return v, u1[:, keep], gains, powers


def cascade_norm_objective(ch, fits, alpha_bar):
    """Phase objective whose minimization maximizes the effective-channel norm."""
    t = -(ch.h_2.conj().T @ ch.h_2) * (ch.h_1 @ ch.h_1.conj().T).T
    if np.any(ch.h_d):
        q = np.einsum("ij,ji->i", ch.h_2.conj().T, ch.h_d @ ch.h_1.conj().T)
    else:
        q = np.zeros(ch.h_1.shape[0], dtype=complex)
    z2, z1, z = fits.coefficients(alpha_bar)
    return PhaseObjective(t=t, q=q, z2=z2, z1=z1, z=z)


def do_phase_opt(ch, fits, scenario, phasor0):
    """Phases maximizing the effective-channel Frobenius norm at full amplitude."""
    obj = cascade_norm_objective(ch, fits, np.ones(fits.n))
    phasor, trace = rmo_phase_opt(obj, phasor0)
    return np.angle(phasor) % (2.0 * np.pi), trace


def do_amplitude_max(phi, fits, params, budget):
    """Maximize the amplitude sum under the linearized power budget.

    Greedy in ascending power-per-amplitude slope, which is the exact
    optimum of this box-constrained linear program.
    """
    from .ao import _power_fit_arrays

    phi = np.asarray(phi, dtype=float)
    p_min, slope, lower, upper = _power_fit_arrays(fits, phi, params)
    if p_min.sum() > budget + 1e-12:
        raise InfeasibleBudgetError(
            f"minimum amplitudes already need {p_min.sum():.4f} W > budget {budget:.4f} W"
        )
    alpha = lower.copy()
    remaining = budget - p_min.sum()
    raisable = np.flatnonzero(fits.active_mask & (upper - lower > 1e-12) & (slope > 0.0))
    order = raisable[np.argsort(slope[raisable], kind="stable")]
    for n in order:
        cost = slope[n] * (upper[n] - lower[n])
        if cost <= remaining:
            alpha[n] = upper[n]
            remaining -= cost
        else:
            alpha[n] = lower[n] + remaining / slope[n]
            remaining = 0.0
            break
    return alpha


@dataclass
class DOResult:
    v: np.ndarray
    w: np.ndarray
    design: reflection.RISDesign
    stream_powers: np.ndarray
    rate: float


def run_do(scenario, ch, fits, rng, ris_noise_in_gains=True):
    """One pass of the decoupled design; the rate is evaluated with the full
    spectral-efficiency expression, surface noise included."""
    params = scenario.circuit
    phasor0 = np.exp(1j * rng.uniform(0.0, 2.0 * np.pi, fits.n))
    phi, _ = do_phase_opt(ch, fits, scenario, phasor0)
    alpha = do_amplitude_max(phi, fits, params, scenario.p_ris_w)

    def resolve(budget):
        return do_amplitude_max(phi, fits, params, budget)

    design = power_repair_loop(alpha, phi, params, fits, scenario.p_ris_w, resolve)
    v, w, gains, powers = svd_precoder_combiner(
        ch, design.gamma, scenario, ris_noise_in_gains
    )
    rate = spectral_efficiency(ch, v, w, design.gamma, scenario)
    return DOResult(v=v, w=w, design=design, stream_powers=powers, rate=rate)
