"""Alternating joint design of precoder, combiner and surface configuration.

One outer iteration updates, in order: the auxiliary receive directions and
per-stream SINR weights (closed form), the precoder (KKT solution with a
bisected power multiplier), the phases (conjugate-gradient descent on the
complex circle manifold), and the amplitudes (box-plus-budget QP with a
linearized power model, followed by a repair loop that enforces the true
circuit power).
"""

import warnings
from dataclasses import dataclass

import numpy as np

from . import circuit, reflection
from .channel import effective_channel, noise_covariance, rate_lmmse, stream_sinrs
from .errors import BracketError, ConvergenceError, InfeasibleBudgetError
from .numerics import hermitian_eig

ARMIJO_C = 1e-4
BACKTRACK = 0.5


@dataclass
class PhaseObjective:
    """Quadratic form data for the phase subproblem.

    g(p) = gamma(p)^H t gamma(p) - 2 Re[gamma(p)^H q] with
    gamma(p) = z2*p^2 + z1*p + z over unit-modulus phasors p.
    """

    t: np.ndarray
    q: np.ndarray
    z2: np.ndarray
    z1: np.ndarray
    z: np.ndarray

    def gamma_of(self, phasor):
        return self.z2 * phasor**2 + self.z1 * phasor + self.z

    def value(self, phasor):
        g = self.gamma_of(phasor)
        return float((g.conj() @ (self.t @ g)).real - 2.0 * (g.conj() @ self.q).real)


def lmmse_combiner(ch, v, gamma, scenario):
    """Scaling-invariant MMSE receive combiner for the current design."""
    heff = effective_channel(ch, gamma)
    g = heff @ v
    f = noise_covariance(ch, gamma, scenario) + g @ g.conj().T
    return np.linalg.solve(f, g)


def update_auxiliaries(ch, v, gamma, scenario):
    """Closed-form auxiliary directions and SINR weights at the current design."""
    heff = effective_channel(ch, gamma)
    g = heff @ v
    f = noise_covariance(ch, gamma, scenario) + g @ g.conj().T
    y = np.linalg.solve(f, g)
    sigma_aux = stream_sinrs(ch, v, gamma, scenario)
    return y, sigma_aux


def opbar_objective(ch, v, y, sigma_aux, gamma, scenario):
    """Reformulated rate objective with explicit auxiliaries (bps/Hz at optimum)."""
    heff = effective_channel(ch, gamma)
    g = heff @ v
    f = noise_covariance(ch, gamma, scenario) + g @ g.conj().T
    total = 0.0
    for i in range(v.shape[1]):
        quad = 2.0 * np.vdot(y[:, i], g[:, i]).real - np.vdot(
            y[:, i], f @ y[:, i]
        ).real
        total += np.log2(1.0 + sigma_aux[i]) - sigma_aux[i] + (1.0 + sigma_aux[i]) * quad
    return float(total)


def precoder_update(ch, y, sigma_aux, gamma, scenario, tol=1e-11):
    """Power-constrained precoder from the KKT conditions.

    The multiplier is zero when the unconstrained solution fits the budget;
    otherwise it is bisected on the eigen-decomposed power equation until the
    transmit power matches the budget.
    """
    heff = effective_channel(ch, gamma)
    sig = np.diag(sigma_aux + 1.0)
    z = heff.conj().T @ y @ sig
    k = heff.conj().T @ y @ sig @ y.conj().T @ heff
    vals, u = hermitian_eig(k)
    vals = np.maximum(vals, 0.0)
    num = np.sum(np.abs(u.conj().T @ z) ** 2, axis=1)
    # numerators vanish analytically on the null space of k; drop the
    # numerical residue so the power sum stays finite at multiplier zero
    total = num.sum()
    keep = num > 1e-14 * max(total, 1e-300)

    def tx_power(lam):
        denom = (vals[keep] + lam) ** 2
        return float(np.sum(num[keep] / denom))

    p_t = scenario.p_t_w
    if not keep.any():
        return np.zeros((scenario.m_t, y.shape[1]), dtype=complex)
    if np.all(vals[keep] > 0.0) and tx_power(0.0) <= p_t:
        lam_opt = 0.0
    else:
        lam_hi = np.linalg.norm(z) / np.sqrt(p_t)
        for _ in range(60):
            if tx_power(lam_hi) <= p_t:
                break
            lam_hi *= 2.0
        else:
            raise BracketError("precoder power equation could not be bracketed")
        lam_opt = _bisect_monotone(lambda lam: tx_power(lam) - p_t, 0.0, lam_hi, tol * p_t)
    scale = np.zeros_like(vals)
    scale[keep] = 1.0 / (vals[keep] + lam_opt)
    return u @ (scale[:, None] * (u.conj().T @ z))


def _bisect_monotone(f, lo, hi, tol):
    flo = f(lo)
    if flo <= 0.0:
        return lo
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if abs(fm) <= tol:
            return mid
        if fm > 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def build_phase_objective(ch, v, y, sigma_aux, fits, alpha_bar, scenario):
    """Assemble the phase-subproblem quadratic without Kronecker products.

    The two quadratic forms reduce to an N x N Hadamard combination of the
    RX-side and TX-side Gram matrices plus a diagonal surface-noise term; the
    linear term reduces to diagonals of small matrix products.
    """
    sig = sigma_aux + 1.0
    ysy = (y * sig[None, :]) @ y.conj().T                      # (m_r, m_r)
    a = ch.h_2.conj().T @ ysy @ ch.h_2                         # (n, n)
    bvv = ch.h_1 @ (v @ v.conj().T) @ ch.h_1.conj().T          # (n, n)
    t = np.diag(scenario.sigma2_w * scenario.f_s * np.diag(a).real) + a * bvv.T

    ysv = (y * sig[None, :]) @ v.conj().T                      # (m_r, m_t)
    q = np.einsum("ij,ji->i", ch.h_2.conj().T, ysv @ ch.h_1.conj().T)
    if np.any(ch.h_d):
        m = ysy @ ch.h_d @ (v @ v.conj().T)
        q = q - np.einsum("ij,ji->i", ch.h_2.conj().T, m @ ch.h_1.conj().T)

    z2, z1, z = fits.coefficients(alpha_bar)
    return PhaseObjective(t=t, q=q, z2=z2, z1=z1, z=z)


def phase_gradient(obj, phasor):
    """Euclidean gradient of the phase objective at unit-modulus phasors.

    Reported as twice the conjugate Wirtinger derivative, matching the
    finite-difference convention.
    """
    w = obj.t @ obj.gamma_of(phasor) - obj.q
    return 2.0 * (2.0 * np.conj(phasor) * np.conj(obj.z2) * w + np.conj(obj.z1) * w)


def _tangent_project(vec, phasor):
    return vec - np.real(vec * np.conj(phasor)) * phasor


def rmo_phase_opt(obj, phasor0, max_iters=300, tol=1e-6):
    """Conjugate-gradient descent on the complex circle manifold.

    Polak-Ribiere directions with restarts, Armijo backtracking from unit
    step, and retraction by elementwise normalization. Returns the final
    phasors and the objective trace (nonincreasing).
    """
    phasor = np.asarray(phasor0, dtype=complex)
    if np.max(np.abs(np.abs(phasor) - 1.0)) > 1e-9:
        warnings.warn("phase iterate not unit-modulus; normalizing", stacklevel=2)
    phasor = phasor / np.abs(phasor)
    n = phasor.size

    # optimize a scaled copy so step sizes and the gradient tolerance are
    # meaningful regardless of the absolute channel/noise scale
    s = max(np.abs(obj.t).max(), np.abs(obj.q).max(), 1e-300)
    work = PhaseObjective(t=obj.t / s, q=obj.q / s, z2=obj.z2, z1=obj.z1, z=obj.z)

    val = work.value(phasor)
    trace = [val]
    rgrad = _tangent_project(phase_gradient(work, phasor), phasor)
    direction = -rgrad
    for it in range(max_iters):
        gnorm2 = np.vdot(rgrad, rgrad).real
        if np.sqrt(gnorm2) <= tol:
            break
        slope = np.vdot(rgrad, direction).real
        if slope >= 0.0:
            direction = -rgrad
            slope = -gnorm2
        step = 1.0
        new_phasor = None
        for _ in range(40):
            cand = phasor + step * direction
            cand = cand / np.abs(cand)
            cand_val = work.value(cand)
            if cand_val <= val + ARMIJO_C * step * slope:
                new_phasor = cand
                break
            step *= BACKTRACK
        if new_phasor is None:
            break
        prev_rgrad = rgrad
        phasor = new_phasor
        val = cand_val
        trace.append(val)
        rgrad = _tangent_project(phase_gradient(work, phasor), phasor)
        beta = np.vdot(rgrad, rgrad - _tangent_project(prev_rgrad, phasor)).real / max(
            gnorm2, 1e-300
        )
        if beta < 0.0 or (it + 1) % n == 0:
            direction = -rgrad
        else:
            direction = -rgrad + beta * _tangent_project(direction, phasor)
    return phasor, s * np.asarray(trace)


def linear_power_fit(fit, phi, params, m_band=(circuit.M_LO, circuit.M_HI)):
    """Endpoint-exact linear surrogate of power versus amplitude at phase phi.

    Returns (p_min, p_max, slope): the powers at the least and most negative
    usable resistances and the slope against the cosine-model amplitude
    bounds. The surrogate is increasing because power and amplitude are both
    decreasing in the resistance.
    """
    lower, upper = reflection.approx_amplitude_bounds(fit, phi)
    r_min, r_max = circuit.usable_resistance_band(params, phi, m_band)
    p_min = circuit.power_consumption(r_max, params)
    p_max = circuit.power_consumption(r_min, params)
    span = upper - lower
    if span <= 1e-12:
        raise ValueError("amplitude span vanishes: no power fit for a fixed-amplitude cell")
    return p_min, p_max, (p_max - p_min) / span


def _power_fit_arrays(fits, phi, params, m_band=(circuit.M_LO, circuit.M_HI)):
    """Per-element linear power surrogate; zeros for passive elements."""
    lower, upper = fits.bounds(phi)
    n = phi.size
    p_min = np.zeros(n)
    slope = np.zeros(n)
    active = fits.active_mask
    if active.any():
        band_lo = circuit.stable_resistance(m_band[0], params)
        band_hi = circuit.stable_resistance(m_band[1], params)
        f = circuit.resistance_range(params, phi[active])
        r_min = np.maximum(-f, band_lo)
        p_hi = circuit.power_consumption_vec(r_min, params)
        p_lo = circuit.power_consumption(band_hi, params)
        span = upper[active] - lower[active]
        p_min[active] = p_lo
        # a collapsed band pins the amplitude, so only the floor power counts
        slope[active] = np.where(span > 1e-12, (p_hi - p_lo) / np.maximum(span, 1e-12), 0.0)
    return p_min, slope, lower, upper


def project_box_halfspace(v, lower, upper, w, b):
    """Exact Euclidean projection onto {lower <= x <= upper, w @ x <= b}.

    w must be nonnegative. The active-budget case reduces to a piecewise
    linear equation in the constraint multiplier, solved by a breakpoint
    scan.
    """
    x = np.clip(v, lower, upper)
    if w @ x <= b + 1e-15 * max(abs(b), 1.0):
        return x
    pos = w > 0.0
    if w[pos] @ lower[pos] + w[~pos] @ np.clip(v[~pos], lower[~pos], upper[~pos]) > b + 1e-12:
        raise InfeasibleBudgetError("halfspace projection infeasible at the lower box corner")

    def hval(mu):
        return w @ np.clip(v - mu * w, lower, upper) - b

    bp = np.concatenate([(v[pos] - upper[pos]) / w[pos], (v[pos] - lower[pos]) / w[pos]])
    bp = np.unique(bp[bp > 0.0])
    lo_mu, hi_mu = 0.0, bp[-1] if bp.size else 0.0
    h_lo = hval(lo_mu)
    for mu in bp:
        h = hval(mu)
        if h <= 0.0:
            hi_mu = mu
            break
        lo_mu, h_lo = mu, h
    h_hi = hval(hi_mu)
    if h_hi > 0.0:
        mu_star = hi_mu
    else:
        # h is linear between consecutive breakpoints
        denom = h_lo - h_hi
        frac = h_lo / denom if denom > 0.0 else 0.0
        mu_star = lo_mu + frac * (hi_mu - lo_mu)
    return np.clip(v - mu_star * w, lower, upper)


@dataclass
class QpResult:
    alpha: np.ndarray
    objective: float
    kkt_residual: float
    iterations: int
    trace: np.ndarray


def amplitude_qp(obj, phi, fits, scenario, budget=None, params=None,
                 max_iters=5000, tol=1e-6):
    """Amplitude subproblem at fixed phases: convex QP over box and budget.

    Minimizes the reflected-signal quadratic subject to the per-element
    amplitude box and the linearized power budget. Solved by projected
    gradient with an exact box-halfspace projection and a monotone Nesterov
    acceleration (the accelerated candidate is used only when it does not
    increase the objective). Terminates when the projected-gradient
    fixed-point residual, in amplitude units, drops below tol.
    """
    params = params or scenario.circuit
    budget = scenario.p_ris_w if budget is None else budget
    phi = np.asarray(phi, dtype=float)
    phasor = np.exp(1j * phi)
    m = np.real(np.conj(phasor)[:, None] * obj.t * phasor[None, :])
    c_lin = -2.0 * np.real(np.conj(phasor) * obj.q)

    p_min, slope, lower, upper = _power_fit_arrays(fits, phi, params)
    if p_min.sum() > budget + 1e-12:
        raise InfeasibleBudgetError(
            f"minimum amplitudes already need {p_min.sum():.4f} W > budget {budget:.4f} W"
        )
    b = budget - float(p_min.sum() - slope @ lower)

    lip = 2.0 * _spectral_norm(m)
    span = float(np.max(upper - lower))
    scale = max(lip * span, np.abs(c_lin).max(), 1e-300)
    step = 1.0 / max(lip, scale / max(span, 1e-12))

    def fval(x):
        return float(x @ (m @ x) + c_lin @ x)

    def grad(x):
        return 2.0 * (m @ x) + c_lin

    def pg_step(x):
        return project_box_halfspace(x - step * grad(x), lower, upper, slope, b)

    x = project_box_halfspace(0.5 * (lower + upper), lower, upper, slope, b)
    fx = fval(x)
    trace = [fx]
    x_prev = x.copy()
    t_momentum = 1.0
    kkt = np.inf
    it = 0
    for it in range(1, max_iters + 1):
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_momentum**2))
        look = x + ((t_momentum - 1.0) / t_next) * (x - x_prev)
        cand = project_box_halfspace(look - step * grad(look), lower, upper, slope, b)
        f_cand = fval(cand)
        if f_cand > fx:
            cand = pg_step(x)
            f_cand = fval(cand)
            t_next = 1.0
            if f_cand > fx:   # float rounding at a fixed point: stay put
                cand, f_cand = x, fx
        x_prev, x, fx = x, cand, f_cand
        trace.append(fx)
        t_momentum = t_next
        if it % 10 == 0 or it == max_iters:
            kkt = float(np.max(np.abs(x - pg_step(x))))
            if kkt <= tol:
                break
    if not np.isfinite(kkt):
        kkt = float(np.max(np.abs(x - pg_step(x))))
    return QpResult(alpha=x, objective=fx, kkt_residual=kkt,
                    iterations=it, trace=np.asarray(trace))


def _spectral_norm(m, iters=60):
    n = m.shape[0]
    v = np.ones(n) / np.sqrt(n)
    est = 0.0
    for _ in range(iters):
        w = m @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
        est = nw
    return float(est)


def power_repair_loop(alpha, phi, params, fits, p_ris, resolve, max_passes=8):
    """Map amplitudes to circuits, then shrink the working budget until the
    true power fits.

    The linearized budget can under-account the circuit power; each pass
    reduces the working budget by the realized shortfall and re-solves. Once
    the working budget reaches the linearized floor with the true constraint
    still violated, no amplitude solve can help (the floor itself costs more
    than its linearization) and every active diode is pinned at its minimum
    bias instead. The returned design always satisfies the true constraint.
    """
    phi = np.asarray(phi, dtype=float)
    lower, upper = fits.bounds(phi)
    p_min, slope, _, _ = _power_fit_arrays(fits, phi, params)
    floor = float(p_min.sum())
    working = p_ris
    alpha = np.asarray(alpha, dtype=float)
    for k in range(1, max_passes + 1):
        design = reflection.realize_design(params, fits, phi, alpha)
        if design.ris_power_w <= p_ris + 1e-9:
            design.repair_passes = k
            return design
        fitted = float(p_min.sum() + slope @ (alpha - lower))
        shortfall = design.ris_power_w - fitted
        at_floor = working <= floor * (1.0 + 1e-12)
        if at_floor:
            design = reflection.realize_minimum_power(params, fits, phi)
            if design.ris_power_w <= p_ris + 1e-9:
                design.repair_passes = k + 1
                return design
            break
        working = max(working - max(shortfall, 1e-15), floor)
        alpha = np.asarray(resolve(working), dtype=float)
    raise ConvergenceError(
        f"surface power constraint unmet after {max_passes} repair passes"
    )


def feasible_amplitude_scale(scenario, fits, phi, alpha_bar):
    """Largest uniform shrink of the amplitude controls that fits the budget.

    True circuit power is monotone in the controls, so a bisection on a
    global multiplier yields a feasible configuration from any starting one.
    """
    params = scenario.circuit

    def power_at(scale):
        lower, upper = fits.bounds(phi)
        alpha = lower + scale * alpha_bar * (upper - lower)
        return reflection.realize_design(params, fits, phi, alpha).ris_power_w

    if power_at(1.0) <= scenario.p_ris_w:
        return 1.0
    lo, hi = 0.0, 1.0
    if power_at(0.0) > scenario.p_ris_w:
        raise InfeasibleBudgetError("surface power budget below the all-minimum power")
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        if power_at(mid) <= scenario.p_ris_w:
            lo = mid
        else:
            hi = mid
    return lo


def random_init(scenario, ch, fits, rng):
    """Random feasible starting point (v0, phi0, alpha_bar0)."""
    v0 = rng.standard_normal((scenario.m_t, scenario.d)) + 1j * rng.standard_normal(
        (scenario.m_t, scenario.d)
    )
    v0 *= np.sqrt(scenario.p_t_w / np.trace(v0.conj().T @ v0).real)
    phi0 = rng.uniform(0.0, 2.0 * np.pi, scenario.n)
    alpha_bar0 = rng.uniform(0.0, 1.0, scenario.n)
    alpha_bar0[~fits.active_mask] = 0.0
    scale = feasible_amplitude_scale(scenario, fits, phi0, alpha_bar0)
    return v0, phi0, scale * alpha_bar0


def init_from_design(scenario, fits, v, design):
    """Turn a finished design into a feasible AO starting point."""
    v0 = np.asarray(v, dtype=complex)
    if v0.shape[1] < scenario.d:
        pad = np.zeros((scenario.m_t, scenario.d - v0.shape[1]), dtype=complex)
        v0 = np.concatenate([v0, pad], axis=1)
    return v0, design.phi.copy(), design.alpha_bar.copy()


@dataclass
class AOResult:
    v: np.ndarray
    w: np.ndarray
    design: reflection.RISDesign
    rate: float
    rate_history: np.ndarray
    iterations: int
    repair_passes_max: int


def run_ao(scenario, ch, fits, init, eps=1e-3, j_alt=20):
    """Alternating optimization of precoder, combiner and surface.

    init is a feasible (v0, phi0, alpha_bar0) triple. Stops on relative rate
    change below eps or after j_alt iterations, and returns the best iterate
    seen (the initial design included), with the combiner materialized at
    that design.
    """
    v0, phi0, alpha_bar0 = init
    params = scenario.circuit
    v = np.asarray(v0, dtype=complex)
    if np.trace(v.conj().T @ v).real > scenario.p_t_w * (1.0 + 1e-6):
        raise ValueError("initial precoder violates the transmit power budget")
    phi = np.asarray(phi0, dtype=float)
    alpha_bar = np.asarray(alpha_bar0, dtype=float)

    lower, upper = fits.bounds(phi)
    alpha = lower + alpha_bar * (upper - lower)
    design = reflection.realize_design(params, fits, phi, alpha, alpha_bar)
    if design.ris_power_w > scenario.p_ris_w + 1e-9:
        # a floor-tight budget cannot host the model floor; start from the
        # minimum-bias configuration instead
        design = reflection.realize_minimum_power(params, fits, phi)
        if design.ris_power_w > scenario.p_ris_w + 1e-9:
            raise ValueError("initial surface configuration violates the power budget")
    gamma = design.gamma
    rate = rate_lmmse(ch, v, gamma, scenario)

    best = (rate, v, design, 0)
    history = [rate]
    repair_max = 0
    prev_rate = rate
    iterations = 0
    for _ in range(j_alt):
        iterations += 1
        y, sigma_aux = update_auxiliaries(ch, v, gamma, scenario)
        v = precoder_update(ch, y, sigma_aux, gamma, scenario)
        obj = build_phase_objective(ch, v, y, sigma_aux, fits, alpha_bar, scenario)
        phasor, _ = rmo_phase_opt(obj, np.exp(1j * phi))
        phi = np.angle(phasor) % (2.0 * np.pi)

        def resolve(budget):
            return amplitude_qp(obj, phi, fits, scenario, budget=budget, params=params).alpha

        alpha = resolve(scenario.p_ris_w)
        design = power_repair_loop(alpha, phi, params, fits, scenario.p_ris_w, resolve)
        repair_max = max(repair_max, design.repair_passes)
        gamma = design.gamma
        alpha_bar = design.alpha_bar

        rate = rate_lmmse(ch, v, gamma, scenario)
        history.append(rate)
        if rate > best[0]:
            best = (rate, v, design, iterations)
        rel_change = abs(rate - prev_rate) / abs(rate) if rate != 0.0 else 0.0
        if rel_change <= eps:
            break
        prev_rate = rate

    rate, v, design, _ = best
    w = lmmse_combiner(ch, v, design.gamma, scenario)
    return AOResult(
        v=v,
        w=w,
        design=design,
        rate=rate,
        rate_history=np.asarray(history),
        iterations=iterations,
        repair_passes_max=repair_max,
    )
