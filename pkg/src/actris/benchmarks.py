"""Comparison schemes: budget-matched GA and PSO over the raw circuit
variables, and the phase-amplitude-independent ablation of the decoupled
design."""

from dataclasses import dataclass

import numpy as np

from . import circuit, reflection
from .ao import PhaseObjective, power_repair_loop, rmo_phase_opt
from .channel import rate_lmmse, spectral_efficiency
from .do import DOResult, svd_precoder_combiner
from .errors import InfeasibleBudgetError
from .numerics import bisect


@dataclass(frozen=True)
class MetaheuristicBudget:
    """Population size and iteration count matched to the AO complexity."""

    k: int
    p: int
    evaluations: int
    target: float


def budget_from_ao(scenario, j_alt=20, j_p=2, k=40):
    """Derive (K, P) so K*P rate evaluations match the AO complexity budget.

    The per-evaluation cost model is N*M_T*M_R + d*M_R^3 and the AO target is
    J_alt * j_P * N^3.5; K is adjusted when rounding P alone would miss the
    +/-10 percent matching window.
    """
    n, m_t, m_r, d = scenario.n, scenario.m_t, scenario.m_r, scenario.d
    unit = n * m_t * m_r + d * m_r**3
    target = j_alt * j_p * n**3.5
    p = max(1, round(target / (k * unit)))
    if abs(k * p * unit - target) / target > 0.1:
        k = max(2, round(target / (p * unit)))
        p = max(1, round(target / (k * unit)))
    if abs(k * p * unit - target) / target > 0.1:
        raise ValueError("cannot match the complexity budget within 10 percent")
    return MetaheuristicBudget(k=k, p=p, evaluations=k * p, target=target)


def run_paido(scenario, ch, fits, rng):
    """Decoupled design that ignores the phase-amplitude coupling.

    Phases are optimized with amplitudes frozen at their phase-independent
    maxima (the reflection becomes linear in the phasors), amplitudes are
    then raised under constant bounds, and the result is clamped back into
    the true phase-dependent bounds before the power repair.
    """
    params = scenario.circuit
    const_upper = fits.beta_max
    const_lower = fits.delta_min

    t = -(ch.h_2.conj().T @ ch.h_2) * (ch.h_1 @ ch.h_1.conj().T).T
    if np.any(ch.h_d):
        q = np.einsum("ij,ji->i", ch.h_2.conj().T, ch.h_d @ ch.h_1.conj().T)
    else:
        q = np.zeros(fits.n, dtype=complex)
    obj = PhaseObjective(
        t=t,
        q=q,
        z2=np.zeros(fits.n, dtype=complex),
        z1=const_upper.astype(complex),
        z=np.zeros(fits.n, dtype=complex),
    )
    phasor0 = np.exp(1j * rng.uniform(0.0, 2.0 * np.pi, fits.n))
    phasor, _ = rmo_phase_opt(obj, phasor0)
    phi = np.angle(phasor) % (2.0 * np.pi)

    band_lo = circuit.stable_resistance(circuit.M_LO, params)
    band_hi = circuit.stable_resistance(circuit.M_HI, params)
    p_lo = circuit.power_consumption(band_hi, params)
    p_hi = circuit.power_consumption(band_lo, params)
    active = fits.active_mask
    span = np.maximum(const_upper - const_lower, 1e-12)
    slope = np.where(active, (p_hi - p_lo) / span, 0.0)
    floor = np.where(active, p_lo, 0.0)
    if floor.sum() > scenario.p_ris_w + 1e-12:
        raise InfeasibleBudgetError("budget below the all-minimum surface power")

    lower_phase, upper_phase = fits.bounds(phi)

    def const_greedy(budget):
        alpha = const_lower.copy()
        remaining = budget - floor.sum()
        order = np.flatnonzero(active & (slope > 0.0))
        order = order[np.argsort(slope[order], kind="stable")]
        for n in order:
            cost = slope[n] * (const_upper[n] - const_lower[n])
            if cost <= remaining:
                alpha[n] = const_upper[n]
                remaining -= cost
            else:
                alpha[n] = const_lower[n] + remaining / slope[n]
                break
        return np.clip(alpha, lower_phase, upper_phase)

    alpha = const_greedy(scenario.p_ris_w)
    design = power_repair_loop(
        alpha, phi, params, fits, scenario.p_ris_w, const_greedy
    )
    v, w, _, powers = svd_precoder_combiner(ch, design.gamma, scenario)
    rate = spectral_efficiency(ch, v, w, design.gamma, scenario)
    return DOResult(v=v, w=w, design=design, stream_powers=powers, rate=rate)


class _CircuitSearchSpace:
    """Shared encoding, decoding and repair for the metaheuristics.

    Decision vector: diode resistances of the active cells, capacitances of
    all cells, then the precoder entries as interleaved real/imaginary
    parts. Constraint handling is by repair: the precoder is rescaled into
    the transmit budget and the most power-hungry resistances are relaxed
    toward the low-power band edge until the surface budget holds.
    """

    def __init__(self, scenario, ch, fits):
        self.scenario = scenario
        self.ch = ch
        self.fits = fits
        params = scenario.circuit
        self.params = params
        self.active = np.flatnonzero(fits.active_mask)
        self.n_act = self.active.size
        n = scenario.n
        self.n = n
        self.band_lo = circuit.stable_resistance(circuit.M_LO, params)
        self.band_hi = circuit.stable_resistance(circuit.M_HI, params)
        self.p_floor = circuit.power_consumption(self.band_hi, params)
        v_len = 2 * scenario.m_t * scenario.d
        vmax = np.sqrt(scenario.p_t_w)
        self.lower = np.concatenate([
            np.full(self.n_act, self.band_lo),
            np.full(n, params.c_range[0]),
            np.full(v_len, -vmax),
        ])
        self.upper = np.concatenate([
            np.full(self.n_act, self.band_hi),
            np.full(n, params.c_range[1]),
            np.full(v_len, vmax),
        ])
        self.dim = self.lower.size

    def sample(self, rng):
        return rng.uniform(self.lower, self.upper)

    def decode(self, x):
        r = np.full(self.n, self.params.r_passive)
        r[self.active] = x[: self.n_act]
        c = x[self.n_act : self.n_act + self.n]
        vflat = x[self.n_act + self.n :]
        v = (vflat[0::2] + 1j * vflat[1::2]).reshape(self.scenario.m_t, self.scenario.d)
        return r, c, v

    def encode(self, r, c, v):
        vflat = np.empty(2 * v.size)
        vflat[0::2] = v.real.ravel()
        vflat[1::2] = v.imag.ravel()
        return np.concatenate([r[self.active], c, vflat])

    def repair(self, x):
        """Project a raw vector onto the constraint set; returns the repaired
        vector together with the decoded design pieces."""
        x = np.clip(x, self.lower, self.upper)
        r, c, v = self.decode(x)
        tx = np.trace(v.conj().T @ v).real
        if tx > self.scenario.p_t_w:
            v = v * np.sqrt(self.scenario.p_t_w / tx)

        gamma = circuit._gamma(self.params, c, r)
        # any realized (R, C) already satisfies |R| <= F(arg gamma); clamp
        # defensively in case of numerical corner cases
        f = circuit.resistance_range(self.params, np.angle(gamma) % (2 * np.pi))
        over = np.abs(r) > f
        if over.any():
            r = np.where(over, -np.minimum(np.abs(r), f), r)
            gamma = circuit._gamma(self.params, c, r)

        powers = np.zeros(self.n)
        powers[self.active] = circuit.power_consumption_vec(r[self.active], self.params)
        total = powers.sum()
        budget = self.scenario.p_ris_w
        while total > budget + 1e-12:
            i = int(np.argmax(powers))
            need = total - budget
            target = powers[i] - need
            if target <= self.p_floor + 1e-15:
                r[i] = self.band_hi
            else:
                r[i] = bisect(
                    lambda rr: circuit.power_consumption(rr, self.params) - target,
                    self.band_lo,
                    self.band_hi,
                    tol=1e-15,
                )
            new_p = circuit.power_consumption(r[i], self.params)
            total += new_p - powers[i]
            powers[i] = new_p
        gamma = circuit._gamma(self.params, c, r)
        return self.encode(r, c, v), r, c, v, gamma

    def fitness(self, x):
        x, r, c, v, gamma = self.repair(x)
        return x, rate_lmmse(self.ch, v, gamma, self.scenario), (r, c, v, gamma)


@dataclass
class BenchmarkResult:
    v: np.ndarray
    w: np.ndarray
    design: reflection.RISDesign
    rate: float
    iterations: int


def _finalize(space, best_phenotype, best_rate, iterations):
    from .ao import lmmse_combiner

    r, c, v, gamma = best_phenotype
    params = space.params
    cells = tuple(circuit.CellState(r=float(ri), c=float(ci)) for ri, ci in zip(r, c))
    phi = np.angle(gamma) % (2 * np.pi)
    total = circuit.power_consumption_vec(r[space.active], params).sum()
    lower, upper = space.fits.bounds(phi)
    span = np.where(upper > lower, upper - lower, 1.0)
    alpha_bar = np.clip((np.abs(gamma) - lower) / span, 0.0, 1.0)
    alpha_bar[~space.fits.active_mask] = 0.0
    design = reflection.RISDesign(
        phi=phi,
        alpha_bar=alpha_bar,
        active_mask=space.fits.active_mask.copy(),
        gamma=gamma,
        cells=cells,
        ris_power_w=float(total),
        band="exact",
    )
    w = lmmse_combiner(space.ch, v, gamma, space.scenario)
    return BenchmarkResult(v=v, w=w, design=design, rate=best_rate, iterations=iterations)


def run_ga(scenario, ch, fits, budget, rng):
    """Real-coded genetic algorithm over the circuit variables.

    Tournament selection of size two, uniform blend crossover, Gaussian
    mutation at rate 1/dimension with a step of 5 percent of each range, and
    single-individual elitism.
    """
    space = _CircuitSearchSpace(scenario, ch, fits)
    k, p = budget.k, budget.p
    pop = [space.sample(rng) for _ in range(k)]
    fitness = np.empty(k)
    phenos = [None] * k
    for i in range(k):
        pop[i], fitness[i], phenos[i] = space.fitness(pop[i])
    sigma = 0.05 * (space.upper - space.lower)
    best_idx = int(np.argmax(fitness))
    best = (fitness[best_idx], pop[best_idx].copy(), phenos[best_idx])
    for _ in range(p - 1):
        order = np.argsort(fitness)[::-1]
        elite = pop[order[0]].copy()
        elite_fit, elite_pheno = fitness[order[0]], phenos[order[0]]
        children = [elite]
        while len(children) < k:
            ia, ib = rng.integers(0, k, size=2)
            pa = pop[ia] if fitness[ia] >= fitness[ib] else pop[ib]
            ia, ib = rng.integers(0, k, size=2)
            pb = pop[ia] if fitness[ia] >= fitness[ib] else pop[ib]
            u = rng.uniform(0.0, 1.0, size=space.dim)
            child = u * pa + (1.0 - u) * pb
            mutate = rng.uniform(size=space.dim) < 1.0 / space.dim
            child = np.where(mutate, child + sigma * rng.standard_normal(space.dim), child)
            children.append(np.clip(child, space.lower, space.upper))
        pop = children
        fitness[0], phenos[0] = elite_fit, elite_pheno
        for i in range(1, k):
            pop[i], fitness[i], phenos[i] = space.fitness(pop[i])
        gen_best = int(np.argmax(fitness))
        if fitness[gen_best] > best[0]:
            best = (fitness[gen_best], pop[gen_best].copy(), phenos[gen_best])
    return _finalize(space, best[2], float(best[0]), p)


def run_pso(scenario, ch, fits, budget, rng):
    """Global-best particle swarm with inertia 0.72 and both pulls at 1.49."""
    space = _CircuitSearchSpace(scenario, ch, fits)
    k, p = budget.k, budget.p
    omega, c1, c2 = 0.72, 1.49, 1.49
    x = np.array([space.sample(rng) for _ in range(k)])
    vel = np.zeros_like(x)
    span = space.upper - space.lower
    pbest = x.copy()
    pbest_fit = np.full(k, -np.inf)
    phenos = [None] * k
    gbest = None
    gbest_fit = -np.inf
    gbest_pheno = None
    for i in range(k):
        x[i], fit, phenos[i] = space.fitness(x[i])
        pbest[i] = x[i]
        pbest_fit[i] = fit
        if fit > gbest_fit:
            gbest_fit, gbest, gbest_pheno = fit, x[i].copy(), phenos[i]
    for _ in range(p - 1):
        for i in range(k):
            r1 = rng.uniform(size=space.dim)
            r2 = rng.uniform(size=space.dim)
            vel[i] = (
                omega * vel[i]
                + c1 * r1 * (pbest[i] - x[i])
                + c2 * r2 * (gbest - x[i])
            )
            vel[i] = np.clip(vel[i], -span, span)
            x[i] = np.clip(x[i] + vel[i], space.lower, space.upper)
            x[i], fit, pheno = space.fitness(x[i])
            if fit > pbest_fit[i]:
                pbest_fit[i] = fit
                pbest[i] = x[i].copy()
            if fit > gbest_fit:
                gbest_fit, gbest, gbest_pheno = fit, x[i].copy(), pheno
    return _finalize(space, gbest_pheno, float(gbest_fit), p)
