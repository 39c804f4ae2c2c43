"""Characterization experiments: coherence, gradients, randomized
benchmarking, sideband thermometry, heating, GHZ witnesses, gate decay,
and addressing scans.

Every run_* function is deterministic given (spec, seed): shots draw from
per-shot-seeded streams and aggregation is ordered, so results do not
depend on worker count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import compiler as comp
from . import engine as eng
from .addressing import AddressingUnit, crosstalk_matrix, relative_rabi
from .errors import FitFailure
from .fitting import (Dataset, FitResult, binomial_se, fit_decay, fit_fringe,
                      fit_gaussian, fit_linear, fit_power_law)

EXPERIMENT_KINDS = ("ramsey", "gradient", "rb", "thermometry", "heating",
                    "ghz", "gate_decay", "addressing_scan")


@dataclass(frozen=True)
class ExperimentSpec:
    kind: str
    machine: comp.MachineConfig = field(default_factory=comp.MachineConfig)
    noise: eng.NoiseConfig = field(default_factory=eng.NoiseConfig)
    addressing: AddressingUnit = None
    sweep: tuple = ()
    shots: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.kind not in EXPERIMENT_KINDS:
            raise ValueError(f"unknown experiment kind {self.kind!r}")
        if self.shots < 1:
            raise ValueError("shots must be >= 1")


@dataclass
class ExperimentResult:
    kind: str
    datasets: dict
    fits: dict
    extra: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Ramsey coherence and field-gradient scans
# ---------------------------------------------------------------------------

def _ramsey_circuit(wait_us: float, second_phase: float) -> comp.CircuitIR:
    return comp.CircuitIR((
        comp.PrepareAll(),
        comp.R(math.pi / 2, 0.0, "all"),
        comp.Delay(wait_us),
        comp.R(math.pi / 2, second_phase, "all"),
        comp.MeasureAll("m0"),
    ))


def _dark_fraction(records) -> tuple:
    """(P_dark of qubit 0, standard error) over valid shots."""
    bits = np.array([r.bits[0] for r in records if r.valid])
    k = int(np.sum(bits == 0))
    n = len(bits)
    return k / n, float(binomial_se(k, n))


def run_ramsey(spec: ExperimentSpec, qubit_kind: str, wait_times_s,
               positions_um=None) -> ExperimentResult:
    """Two-pulse Ramsey; contrast vs wait fitted to A exp(-t/T2)."""
    waits = np.asarray(wait_times_s, dtype=float)
    if np.any(np.diff(waits) <= 0):
        raise ValueError("wait times must be ascending")
    machine = comp.MachineConfig(n_qubits=1,
                                 t_half_pi_us=spec.machine.t_half_pi_us,
                                 t_measure_us=spec.machine.t_measure_us,
                                 timing_grid_ns=spec.machine.timing_grid_ns)
    y, yerr = [], []
    for i, w in enumerate(waits):
        sched = comp.compile_circuit(_ramsey_circuit(w * 1e6, 0.0), machine)
        recs = eng.run_schedule(sched, machine, spec.noise, spec.shots,
                                seed=spec.seed + i, qubit_kind=qubit_kind,
                                positions_um=positions_um)
        p_dark, se = _dark_fraction(recs)
        y.append(2.0 * p_dark - 1.0)
        yerr.append(2.0 * se)
    ds = Dataset(waits, np.array(y), np.array(yerr),
                 meta={"label": f"ramsey_{qubit_kind}", "ylabel": "contrast"})
    fit = fit_decay(ds, form="exp")
    return ExperimentResult("ramsey", {"points": ds}, {"decay": fit},
                            {"t2_s": fit["tau"], "t2_err_s": fit.error("tau")})


def run_gradient_scan(spec: ExperimentSpec, positions_um,
                      wait_s: float = 1e-3) -> ExperimentResult:
    """Ramsey fringe frequency vs ion displacement; linear fit gives the
    field gradient in Hz/um (ground-state qubit)."""
    positions = np.asarray(positions_um, dtype=float)
    if np.any(np.abs(positions) > 100.0):
        raise ValueError("positions must lie within +-100 um")
    machine = comp.MachineConfig(n_qubits=1)
    freqs, ferr = [], []
    for i, z in enumerate(positions):
        quadratures = []
        for j, phi in enumerate((0.0, math.pi / 2)):
            sched = comp.compile_circuit(
                _ramsey_circuit(wait_s * 1e6, phi), machine)
            recs = eng.run_schedule(sched, machine, spec.noise, spec.shots,
                                    seed=spec.seed + 2 * i + j,
                                    qubit_kind="ground", positions_um=[z])
            p_dark, se = _dark_fraction(recs)
            quadratures.append((2.0 * p_dark - 1.0, 2.0 * se))
        (c, se_c), (s, se_s) = quadratures
        f = math.atan2(s, c) / (2.0 * math.pi * wait_s)
        r2 = max(c**2 + s**2, 1e-6)
        var_f = (c**2 * se_s**2 + s**2 * se_c**2) / (r2**2 * (2 * math.pi * wait_s) ** 2)
        freqs.append(f)
        ferr.append(max(math.sqrt(var_f), 1e-9))
    ds = Dataset(positions, np.array(freqs), np.array(ferr),
                 meta={"label": "gradient", "ylabel": "fringe frequency Hz"})
    fit = fit_linear(ds)
    return ExperimentResult("gradient", {"points": ds}, {"linear": fit},
                            {"slope_hz_per_um": fit["slope"],
                             "slope_err": fit.error("slope")})


# ---------------------------------------------------------------------------
# Randomized benchmarking
# ---------------------------------------------------------------------------

def _x_pulse(theta):
    return (abs(theta), 0.0) if theta > 0 else (abs(theta), math.pi)


def _y_pulse(theta):
    return (abs(theta), math.pi / 2) if theta > 0 else (abs(theta), -math.pi / 2)


def _clifford_table():
    """24 single-qubit Cliffords as physical (theta, phi) pulse lists;
    identity costs one slot; total cost is exactly 45 slots (1.875 avg)."""
    h = math.pi / 2
    x, y = _x_pulse, _y_pulse
    return [
        [(0.0, 0.0)],                       # identity (one slot)
        [x(math.pi)], [y(math.pi)], [y(math.pi), x(math.pi)],
        # 2pi/3 rotations
        [x(h), y(h)], [x(h), y(-h)], [x(-h), y(h)], [x(-h), y(-h)],
        [y(h), x(h)], [y(h), x(-h)], [y(-h), x(h)], [y(-h), x(-h)],
        # pi/2 rotations
        [x(h)], [x(-h)], [y(h)], [y(-h)],
        [x(-h), y(h), x(h)], [x(-h), y(-h), x(h)],
        # Hadamard-like
        [x(math.pi), y(h)], [x(math.pi), y(-h)],
        [y(math.pi), x(h)], [y(math.pi), x(-h)],
        [x(h), y(h), x(h)], [x(-h), y(h), x(-h)],
    ]


CLIFFORD_PULSES = _clifford_table()
CLIFFORD_AVG_COST = sum(len(s) for s in CLIFFORD_PULSES) / len(CLIFFORD_PULSES)


def _pulse_unitaries(seq):
    return [eng.rotation_matrix(t, p) for t, p in seq]


CLIFFORD_UNITARIES = []
for _seq in CLIFFORD_PULSES:
    _u = np.eye(2, dtype=complex)
    for _m in _pulse_unitaries(_seq):
        _u = _m @ _u
    CLIFFORD_UNITARIES.append(_u)


def _inverse_clifford(u: np.ndarray) -> int:
    target = u.conj().T
    for k, c in enumerate(CLIFFORD_UNITARIES):
        if abs(abs(np.trace(c.conj().T @ target))) > 2.0 - 1e-9:
            return k
    raise RuntimeError("Clifford table is not closed under inversion")


_PAULI_1Q = [np.eye(2, dtype=complex),
             np.array([[0, 1], [1, 0]], dtype=complex),
             np.array([[0, -1j], [1j, 0]], dtype=complex),
             np.array([[1, 0], [0, -1]], dtype=complex)]


def _run_rb_sequence(cliffords, eps, shots, rng):
    """Survival counts for one sequence; all shots propagate together,
    depolarizing errors drawn per shot per pulse slot."""
    pulses = []
    for k in cliffords:
        pulses.extend(_pulse_unitaries(CLIFFORD_PULSES[k]))
    u_ideal = np.eye(2, dtype=complex)
    for k in cliffords:
        u_ideal = CLIFFORD_UNITARIES[k] @ u_ideal
    inv = _inverse_clifford(u_ideal)
    pulses.extend(_pulse_unitaries(CLIFFORD_PULSES[inv]))

    psi = np.zeros((shots, 2), dtype=complex)
    psi[:, 1] = 1.0  # |S> bright
    for m in pulses:
        psi = psi @ m.T
        if eps > 0:
            hit = rng.random(shots) < eps
            if hit.any():
                which = rng.integers(4, size=int(hit.sum()))
                idx = np.flatnonzero(hit)
                for pk in range(4):
                    sel = idx[which == pk]
                    if len(sel):
                        psi[sel] = psi[sel] @ _PAULI_1Q[pk].T
    p_bright = np.abs(psi[:, 1]) ** 2
    return int(np.sum(rng.random(shots) < p_bright))


def run_rb(spec: ExperimentSpec, sequence_lengths, n_sequences: int = 20) -> ExperimentResult:
    """Single-qubit RB: survival vs sequence length fitted to A p^n + 0.5.

    R_Clif = (1-p)/2; the per-pulse (pi/2-equivalent) fidelity follows from
    the 1.875 average Clifford cost.
    """
    lengths = [int(n) for n in sequence_lengths]
    if len(set(lengths)) < 4 or max(lengths) > 100:
        raise ValueError("need >= 4 distinct lengths, all <= 100")
    eps = spec.noise.eps_1q
    shots_per_seq = max(spec.shots // n_sequences, 1)
    y, yerr = [], []
    for i, n in enumerate(lengths):
        k_total, n_total = 0, 0
        for s in range(n_sequences):
            rng = np.random.default_rng([spec.seed, i, s])
            cliffords = rng.integers(24, size=n)
            k_total += _run_rb_sequence(cliffords, eps, shots_per_seq, rng)
            n_total += shots_per_seq
        y.append(k_total / n_total)
        yerr.append(float(binomial_se(k_total, n_total)))
    ds = Dataset(np.array(lengths, dtype=float), np.array(y), np.array(yerr),
                 meta={"label": "rb", "ylabel": "survival"})
    fit = fit_decay(ds, form="power", fixed_offset=0.5)
    p = fit["p"]
    r_clif = (1.0 - p) * (1.0 - 0.5)
    f_gate = 1.0 - r_clif / CLIFFORD_AVG_COST
    f_gate_err = fit.error("p") * 0.5 / CLIFFORD_AVG_COST
    return ExperimentResult("rb", {"points": ds}, {"decay": fit},
                            {"p": p, "r_clifford": r_clif,
                             "gate_fidelity": f_gate,
                             "gate_fidelity_err": f_gate_err,
                             "clifford_avg_cost": CLIFFORD_AVG_COST})


# ---------------------------------------------------------------------------
# Thermometry and heating
# ---------------------------------------------------------------------------

def _sample_thermal_n(nbar: float, size, rng) -> np.ndarray:
    if nbar <= 0:
        return np.zeros(size, dtype=int)
    return rng.geometric(1.0 / (1.0 + nbar), size=size) - 1


def _sideband_ratio(ns: np.ndarray, rng, pulse_area: float = math.pi):
    """Red/blue sideband excitation Bernoulli trials for sampled Fock
    numbers; returns (k_red, k_blue, shots)."""
    x = pulse_area / 2.0
    p_red = np.sin(x * np.sqrt(ns)) ** 2
    p_blue = np.sin(x * np.sqrt(ns + 1.0)) ** 2
    k_red = int(np.sum(rng.random(len(ns)) < p_red))
    k_blue = int(np.sum(rng.random(len(ns)) < p_blue))
    return k_red, k_blue


def estimate_nbar(ns: np.ndarray, rng) -> tuple:
    """Sideband-ratio thermometry on a sampled phonon ensemble.

    r = P_red/P_blue = nbar/(1+nbar) for a thermal state, for any pulse
    area.  Returns (nbar_hat, stderr, flagged) where flagged marks an
    undefined estimator (ratio >= 1).
    """
    shots = len(ns)
    k_red, k_blue = _sideband_ratio(ns, rng)
    if k_blue == 0:
        return 0.0, 1.0 / shots, k_red > 0
    p_r, p_b = k_red / shots, k_blue / shots
    r = p_r / p_b
    if r >= 1.0:
        return math.inf, math.inf, True
    nbar = r / (1.0 - r)
    se_r = float(binomial_se(k_red, shots))
    se_b = float(binomial_se(k_blue, shots))
    var_r = (se_r / p_b) ** 2 + (p_r * se_b / p_b**2) ** 2
    se_nbar = math.sqrt(var_r) / (1.0 - r) ** 2
    return nbar, se_nbar, False


def run_sideband_thermometry(spec: ExperimentSpec, nbar_true: float) -> ExperimentResult:
    if nbar_true > 2.0:
        raise ValueError("estimator validity requires nbar <= 2")
    rng = np.random.default_rng([spec.seed, 0])
    ns = _sample_thermal_n(nbar_true, spec.shots, rng)
    nbar, se, flagged = estimate_nbar(ns, rng)
    ds = Dataset(np.array([0.0]), np.array([nbar]), np.array([max(se, 1e-12)]),
                 meta={"label": "thermometry"})
    return ExperimentResult("thermometry", {"points": ds}, {},
                            {"nbar": nbar, "nbar_err": se, "flagged": flagged,
                             "nbar_true": nbar_true})


def _heat_classical(ns: np.ndarray, rate: float, t: float, rng) -> np.ndarray:
    """Gillespie jump process with rates up = rate (n+1), down = rate n;
    keeps a thermal ensemble thermal with d<nbar>/dt = rate."""
    out = ns.astype(int).copy()
    for i in range(len(out)):
        n, tau = out[i], 0.0
        while True:
            total = rate * (2 * n + 1)
            tau += rng.exponential(1.0 / total)
            if tau >= t:
                break
            if rng.random() < (n + 1) / (2 * n + 1):
                n += 1
            else:
                n -= 1
        out[i] = n
    return out


def run_heating_scan(spec: ExperimentSpec, wait_times_s, frequencies_hz,
                     nbar0: float = 0.02) -> ExperimentResult:
    """nbar vs wait per mode frequency -> linear rate fits; rates vs
    frequency -> power-law exponent alpha."""
    freqs = np.asarray(frequencies_hz, dtype=float)
    waits = np.asarray(wait_times_s, dtype=float)
    if len(freqs) < 3:
        raise ValueError("need >= 3 frequencies")
    rates, rate_errs = [], []
    point_sets = {}
    for i, f in enumerate(freqs):
        rate_true = spec.noise.heating_rate(2.0 * math.pi * f)
        ys, es = [], []
        for j, t in enumerate(waits):
            rng = np.random.default_rng([spec.seed, i, j])
            ns = _sample_thermal_n(nbar0, spec.shots, rng)
            ns = _heat_classical(ns, rate_true, t, rng)
            nbar, se, flagged = estimate_nbar(ns, rng)
            if flagged:
                raise FitFailure(f"thermometry undefined at f={f}, t={t}")
            ys.append(nbar)
            es.append(max(se, 1e-9))
        ds = Dataset(waits, np.array(ys), np.array(es),
                     meta={"label": f"heating_{f:g}"})
        lin = fit_linear(ds)
        point_sets[f"nbar_vs_wait_{i}"] = ds
        rates.append(lin["slope"])
        rate_errs.append(max(lin.error("slope"), 1e-9))
    rate_ds = Dataset(freqs, np.array(rates), np.array(rate_errs),
                      meta={"label": "heating_rates"})
    plaw = fit_power_law(rate_ds)
    point_sets["points"] = rate_ds
    return ExperimentResult("heating", point_sets, {"power_law": plaw},
                            {"rates_per_s": list(map(float, rates)),
                             "alpha": plaw["alpha"],
                             "alpha_err": plaw.error("alpha")})


# ---------------------------------------------------------------------------
# GHZ and gate decay
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GhzResult:
    n: int
    population: float
    contrast: float
    fidelity: float
    witness: bool
    population_err: float
    contrast_err: float
    fidelity_err: float

    def __post_init__(self):
        tol = 3.0 * max(self.population_err, self.contrast_err, 1e-9)
        if not (-tol <= self.population <= 1.0 + tol):
            raise ValueError("population out of range")
        if abs(self.fidelity - (self.population + self.contrast) / 2.0) > 1e-12:
            raise ValueError("F must equal (P+C)/2 exactly")


def ghz_prepare(state: eng.RegisterState, targets=None):
    """Single collective MS(pi/4); odd register sizes need a trailing
    collective R(pi/2, 0) to rotate onto the GHZ axis (verified against
    the state-vector oracle)."""
    targets = list(range(state.n)) if targets is None else list(targets)
    eng.apply_ms_ideal(state, targets, math.pi / 4)
    if len(targets) % 2 == 1:
        eng.apply_rotation(state, targets, math.pi / 2, 0.0)
    return state


def ghz_state_fidelity(n: int) -> float:
    """Oracle: overlap of the prepared state with the ideal GHZ manifold,
    maximized over the relative phase."""
    st = eng.RegisterState(n)
    ghz_prepare(st)
    a, b = st.psi[0, 2**n - 1], st.psi[0, 0]
    return float((abs(a) + abs(b)) ** 2 / 2.0)


def _measure_bits(state, shots, noise, rng):
    bits, _ = eng.measure(state, shots, noise.detection, rng)
    return bits


def run_ghz(spec: ExperimentSpec, n: int, analysis_phases,
            product_state: tuple = None) -> ExperimentResult:
    """GHZ witness: P from populations, C from a fixed-frequency parity
    fit over the analysis-phase scan, F = (P+C)/2, witness F > 0.5.

    product_state optionally replaces the MS step by per-qubit rotations
    (theta, phi), for witness-soundness studies.
    """
    if n < 2:
        raise ValueError("need N >= 2")
    phases = np.asarray(analysis_phases, dtype=float)
    if phases.max() - phases.min() < 2.0 * math.pi / n * (1.0 - 1e-9):
        raise ValueError("phases must span at least one parity period")
    noise, shots = spec.noise, spec.shots

    def prepared():
        st = eng.RegisterState(n)
        if product_state is None:
            ghz_prepare(st)
        else:
            for q, (theta, phi) in enumerate(product_state):
                eng.apply_rotation(st, [q], theta, phi)
        return st

    # Populations
    rng = np.random.default_rng([spec.seed, 0])
    st = prepared()
    bits = _measure_bits(st, shots, noise, rng)
    sums = bits.sum(axis=1)
    k_pop = int(np.sum((sums == 0) | (sums == n)))
    p_pop = k_pop / shots
    se_pop = float(binomial_se(k_pop, shots))

    # Parity scan
    par, par_err = [], []
    for i, phi in enumerate(phases):
        rng = np.random.default_rng([spec.seed, 1, i])
        st = prepared()
        eng.apply_rotation(st, range(n), math.pi / 2, phi)
        bits = _measure_bits(st, shots, noise, rng)
        parity = 1.0 - 2.0 * (np.sum(1 - bits, axis=1) % 2)
        par.append(float(np.mean(parity)))
        k_even = int(np.sum(parity > 0))
        par_err.append(max(2.0 * float(binomial_se(k_even, shots)), 1e-9))
    ds = Dataset(phases, np.array(par), np.array(par_err),
                 meta={"label": f"ghz_parity_N{n}"})
    fringe = fit_fringe(ds, frequency=float(n))
    c = min(fringe["amplitude"], 1.0)
    se_c = fringe.error("amplitude")
    f = (p_pop + c) / 2.0
    se_f = 0.5 * math.hypot(se_pop, se_c)
    result = GhzResult(n, p_pop, c, f, f > 0.5, se_pop, se_c, se_f)
    return ExperimentResult("ghz", {"points": ds}, {"fringe": fringe},
                            {"N": n, "P": p_pop, "C": c, "F": f,
                             "P_err": se_pop, "C_err": se_c, "F_err": se_f,
                             "witness": bool(f > 0.5), "ghz": result})


def run_gate_decay(spec: ExperimentSpec, gate_counts, bus: str = "axial",
                   analysis_phases=None) -> ExperimentResult:
    """Repeated two-ion MS gates; F(k) = (P+C)/2 fitted to A p^k + 0.25.

    Per-gate depolarizing eps_2q; a radial bus additionally applies the
    crosstalk-floor illumination of spectators when an addressing unit and
    chain positions are supplied via spec.addressing/extra wiring.
    """
    counts = [int(k) for k in gate_counts]
    if any(k % 2 == 0 for k in counts) or sorted(counts) != counts:
        raise ValueError("gate counts must be odd and ascending")
    if analysis_phases is None:
        analysis_phases = np.linspace(0.0, math.pi, 8, endpoint=False)
    phases = np.asarray(analysis_phases, dtype=float)
    noise, shots = spec.noise, spec.shots
    # Per-gate error budget: configured depolarizing plus, on the radial
    # bus, the crosstalk-floor spillover of both addressed beams.
    eps = noise.eps_2q
    if bus == "radial" and spec.addressing is not None:
        eps = min(eps + 2.0 * spec.addressing.floor**2, 1.0)

    st0 = eng.RegisterState(2)
    eng.apply_ms_ideal(st0, [0, 1], math.pi / 4)
    u_ms = np.zeros((4, 4), dtype=complex)
    for b in range(4):
        st = eng.RegisterState(2)
        st.psi[0, :] = 0.0
        st.psi[0, b] = 1.0
        eng.apply_ms_ideal(st, [0, 1], math.pi / 4)
        u_ms[:, b] = st.psi[0]
    paulis_2q = [np.kron(pa, pb) for pa in eng._PAULIS for pb in eng._PAULIS]

    def survival_point(k_gates, phi, rng):
        """All shots propagate together; depolarizing drawn per shot per gate."""
        psi = np.zeros((shots, 4), dtype=complex)
        psi[:, 3] = 1.0  # |SS>
        for _ in range(k_gates):
            psi = psi @ u_ms.T
            if eps > 0:
                hit = rng.random(shots) < eps
                if hit.any():
                    which = rng.integers(16, size=int(hit.sum()))
                    idx = np.flatnonzero(hit)
                    for pk in np.unique(which):
                        sel = idx[which == pk]
                        psi[sel] = psi[sel] @ paulis_2q[pk].T
        if phi is not None:
            r = eng.rotation_matrix(math.pi / 2, phi)
            psi = psi @ np.kron(r, r).T
        probs = np.abs(psi) ** 2
        probs /= probs.sum(axis=1, keepdims=True)
        cdf = np.cumsum(probs, axis=1)
        draws = rng.random(shots)[:, None]
        outcomes = (draws >= cdf).sum(axis=1)
        bits = ((outcomes[:, None] >> np.arange(2)[None, :]) & 1).astype(np.int8)
        counts = noise.detection.sample_counts(bits, rng)
        return noise.detection.classify(counts)

    ys, es = [], []
    for i, k in enumerate(counts):
        rng = np.random.default_rng([spec.seed, i, 0])
        bits = survival_point(k, None, rng)
        sums = bits.sum(axis=1)
        k_pop = int(np.sum((sums == 0) | (sums == 2)))
        p_pop = k_pop / shots
        se_pop = float(binomial_se(k_pop, shots))
        par, per = [], []
        for j, phi in enumerate(phases):
            rng = np.random.default_rng([spec.seed, i, 1 + j])
            bits = survival_point(k, phi, rng)
            parity = 1.0 - 2.0 * (np.sum(1 - bits, axis=1) % 2)
            par.append(float(np.mean(parity)))
            k_even = int(np.sum(parity > 0))
            per.append(max(2.0 * float(binomial_se(k_even, shots)), 1e-9))
        fr = fit_fringe(Dataset(phases, np.array(par), np.array(per)), 2.0)
        c = min(fr["amplitude"], 1.0)
        ys.append((p_pop + c) / 2.0)
        es.append(max(0.5 * math.hypot(se_pop, fr.error("amplitude")), 1e-9))
    ds = Dataset(np.array(counts, dtype=float), np.array(ys), np.array(es),
                 meta={"label": f"gate_decay_{bus}"})
    fit = fit_decay(ds, form="power", fixed_offset=0.25)
    p = fit["p"]
    per_gate = 1.0 - 0.75 * (1.0 - p)
    per_gate_err = 0.75 * fit.error("p")
    return ExperimentResult("gate_decay", {"points": ds}, {"decay": fit},
                            {"bus": bus, "per_gate_fidelity": per_gate,
                             "per_gate_fidelity_err": per_gate_err})


# ---------------------------------------------------------------------------
# Addressing scan
# ---------------------------------------------------------------------------

def _excitation_scan(unit, offsets_um, pulse_area, shots, seed):
    """Fixed-duration excitation vs beam-ion displacement; returns the
    Omega^2 proxy with propagated binomial errors."""
    ys, es = [], []
    for i, d in enumerate(offsets_um):
        rng = np.random.default_rng([seed, i])
        g = relative_rabi(unit, 0.0, float(d))
        p = math.sin(pulse_area * g / 2.0) ** 2
        k = int(np.sum(rng.random(shots) < p))
        p_hat = min(max(k / shots, 0.0), 1.0)
        theta = 2.0 * math.asin(math.sqrt(p_hat))
        ys.append((theta / pulse_area) ** 2)
        se_p = float(binomial_se(k, shots))
        # d(theta^2)/dp = 2 theta / sqrt(p(1-p)) / ... propagate numerically
        dp = 1e-6
        p2 = min(max(p_hat + dp, 0.0), 1.0)
        t2 = 2.0 * math.asin(math.sqrt(p2))
        deriv = ((t2 / pulse_area) ** 2 - (theta / pulse_area) ** 2) / dp
        es.append(max(abs(deriv) * se_p, 1e-6))
    return Dataset(np.asarray(offsets_um, dtype=float), np.array(ys),
                   np.array(es), meta={"label": "addressing_profile"})


def run_addressing_scan(spec: ExperimentSpec, unit: AddressingUnit,
                        scan_range_um: float = None, n_points: int = 41,
                        chain_positions_um=None,
                        calibration_tones_mhz=None) -> ExperimentResult:
    """Beam-profile scan (Omega^2 proxy vs displacement), Gaussian waist
    fit, crosstalk matrix, and optional AOD deflection-slope calibration."""
    if scan_range_um is None:
        scan_range_um = 2.5 * unit.w0_um
    if scan_range_um < 2.0 * unit.w0_um:
        raise ValueError("scan must cover at least +-2 waists")
    offsets = np.linspace(-scan_range_um, scan_range_um, n_points)
    ds = _excitation_scan(unit, offsets, math.pi / 2, spec.shots, spec.seed)
    gauss = fit_gaussian(ds)
    fits = {"gaussian": gauss}
    extra = {"w0_um": abs(gauss["waist"]), "w0_err_um": gauss.error("waist"),
             "kind": unit.kind}
    datasets = {"points": ds}

    if chain_positions_um is not None:
        extra["crosstalk_matrix"] = crosstalk_matrix(unit, chain_positions_um).tolist()

    if calibration_tones_mhz is not None:
        centers, cerrs = [], []
        for i, f_mhz in enumerate(calibration_tones_mhz):
            true_center = unit.slope_um_per_mhz * f_mhz
            scan = true_center + offsets
            ys, es = [], []
            for j, x in enumerate(scan):
                rng = np.random.default_rng([spec.seed, 100 + i, j])
                g = relative_rabi(unit, true_center, float(x))
                p = math.sin(math.pi / 2 * g / 2.0) ** 2
                k = int(np.sum(rng.random(spec.shots) < p))
                ys.append(k / spec.shots)
                es.append(max(float(binomial_se(k, spec.shots)), 1e-6))
            cal = fit_gaussian(Dataset(scan, np.array(ys), np.array(es)))
            centers.append(cal["center"])
            cerrs.append(max(cal.error("center"), 1e-6))
        cal_ds = Dataset(np.asarray(calibration_tones_mhz, dtype=float),
                         np.array(centers), np.array(cerrs),
                         meta={"label": "aod_calibration"})
        lin = fit_linear(cal_ds)
        datasets["aod_calibration"] = cal_ds
        fits["slope"] = lin
        extra["slope_um_per_mhz"] = lin["slope"]
        extra["slope_err"] = lin.error("slope")
    return ExperimentResult("addressing_scan", datasets, fits, extra)
