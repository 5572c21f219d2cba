"""Sequential spin-photon entanglement on the trion model.

One *cycle* is: excitation pulse, post-selected photon emission at some time
``tau`` inside the window, then free precession of the resident spin until
the next pulse.  Cycles map the spin onto spin (x) new photon and are
composed to build spin + k photon states.

Registers are ordered ``spin, photon_2, photon_3, ...``; photon 1 heralds the
spin initialisation and is projected on R.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import qmath, trion
from .errors import ParameterError
from .qmath import DensityMatrix, HilbertSpace, PauliTransferMatrix, QuantumChannel
from .trion import DeviceParams, PHOTON_STATES, SPIN_SPACE, PHOTON_SPACE

DEFAULT_T12 = 2.08
MAX_PHOTONS = 7
EPSILON_MAPPING = "pol-rot-45deg*eps;field*(1+eps);t2*(1-eps)"

BASES = {"RL": ("R", "L"), "HV": ("H", "V"), "DA": ("D", "A")}


@dataclass(frozen=True)
class PulseSchedule:
    """Pulse times (ns) starting with the heralding pulse, plus the free
    evolution ``tail`` after the last pulse."""

    pulse_times: tuple[float, ...]
    tail: float

    def __post_init__(self):
        times = tuple(float(t) for t in self.pulse_times)
        if not times:
            raise ParameterError("schedule needs at least the heralding pulse")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ParameterError("pulse times must be strictly increasing")
        object.__setattr__(self, "pulse_times", times)

    @classmethod
    def periodic(cls, k: int, spacing: float = DEFAULT_T12) -> PulseSchedule:
        return cls(tuple(i * spacing for i in range(k + 1)), spacing)

    @classmethod
    def from_gaps(cls, gaps: Sequence[float], tail: float | None = None) -> PulseSchedule:
        times = [0.0, *itertools.accumulate(gaps)]
        return cls(tuple(times), gaps[-1] if tail is None else tail)

    @property
    def gaps(self) -> tuple[float, ...]:
        t = self.pulse_times
        return tuple(b - a for a, b in zip(t, t[1:]))

    @property
    def n_photons(self) -> int:
        """Photons kept after heralding."""
        return len(self.pulse_times) - 1

    def check(self, p: DeviceParams) -> None:
        for gap in (*self.gaps, self.tail):
            if gap < p.window and not p.instantaneous_emission:
                raise ParameterError(f"pulse gap {gap} ns shorter than the {p.window} ns window")


@dataclass(frozen=True)
class TruthTable:
    """Conditional probabilities ``P(photon 2 = row | photon 3 = column)``."""

    basis2: str
    basis3: str
    probabilities: np.ndarray
    uncertainties: np.ndarray | None = None
    condition: str = "photon 1 = R"

    def __post_init__(self):
        if self.basis2 not in BASES or self.basis3 not in BASES:
            raise ParameterError(f"unknown basis tags {self.basis2}/{self.basis3}")
        p = np.array(self.probabilities, dtype=float)
        if p.shape != (2, 2):
            raise ParameterError("truth table must be 2x2")
        if (p < -1e-12).any() or (p > 1 + 1e-12).any():
            raise ParameterError("probabilities must lie in [0, 1]")
        if not np.allclose(p.sum(axis=0), 1.0, atol=1e-9):
            raise ParameterError("each photon-3 column must sum to 1")
        p.setflags(write=False)
        object.__setattr__(self, "probabilities", p)
        if self.uncertainties is not None:
            u = np.array(self.uncertainties, dtype=float)
            u.setflags(write=False)
            object.__setattr__(self, "uncertainties", u)

    @property
    def rows(self) -> tuple[str, str]:
        return BASES[self.basis2]

    @property
    def cols(self) -> tuple[str, str]:
        return BASES[self.basis3]

    def prob(self, outcome2: str, outcome3: str) -> float:
        return float(self.probabilities[self.rows.index(outcome2), self.cols.index(outcome3)])

    def err(self, outcome2: str, outcome3: str) -> float:
        if self.uncertainties is None:
            return 0.0
        return float(self.uncertainties[self.rows.index(outcome2), self.cols.index(outcome3)])

    def records(self) -> list[tuple[str, str, float, float]]:
        return [(a, b, self.prob(a, b), self.err(a, b)) for a in self.rows for b in self.cols]


@dataclass(frozen=True)
class FidelityCurve:
    label: str
    entries: tuple[tuple[int, float, str], ...]
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        entries = tuple((int(n), float(f), str(h)) for n, f, h in self.entries)
        if entries and entries[0][0] != 2:
            raise ParameterError("fidelity curves start at two qubits")
        if any(not -1e-9 <= f <= 1 + 1e-9 for _, f, _ in entries):
            raise ParameterError("fidelity outside [0, 1]")
        object.__setattr__(self, "entries", entries)

    @property
    def total_qubits(self) -> list[int]:
        return [n for n, _, _ in self.entries]

    @property
    def fidelities(self) -> list[float]:
        return [f for _, f, _ in self.entries]

    def crossing(self, threshold: float = 0.5) -> int | None:
        """Largest qubit count before the curve first drops below ``threshold``."""
        last = None
        for n, f, _ in self.entries:
            if f < threshold:
                break
            last = n
        return last


def params_hash(p: DeviceParams) -> str:
    d = asdict(p)
    d["pulse_polarization"] = [[c.real, c.imag] for c in p.pulse_polarization]
    blob = json.dumps(d, sort_keys=True, default=repr).encode()
    return hashlib.sha1(blob).hexdigest()[:12]


# -- cycle construction -------------------------------------------------------

def overhauser_nodes(p: DeviceParams, n_nodes: int = trion.DEFAULT_OVERHAUSER_NODES):
    """Frozen-bath realisations ``(ground_detuning, excited_detuning, weight)``.

    The excited electron always gets a grid; the ground hole only in the
    quasi-static model.  The two detunings are independent.
    """
    if p.instantaneous_emission or math.isinf(p.t2_excited):
        excited = trion.OverhauserGrid((0.0,), (1.0,))
    else:
        excited = trion.sample_overhauser(p.t2_excited, n_nodes)
    if p.ground_dephasing == "quasi_static" and not math.isinf(p.t2_ground):
        ground = trion.sample_overhauser(p.t2_ground, n_nodes)
    else:
        ground = trion.OverhauserGrid((0.0,), (1.0,))
    return [(dg, de, wg * we)
            for dg, wg in zip(ground.nodes, ground.weights)
            for de, we in zip(excited.nodes, excited.weights)]


def _cycle_kraus(p: DeviceParams, gap: float, grid_node, steps: int) -> list[np.ndarray]:
    dg, de = grid_node
    exc = trion.excitation_unitary(p)[:, :2]          # ground -> levels
    taus, weights = trion.emission_quadrature(p, steps)
    ks = []
    for tau, w in zip(taus, weights):
        emit = trion.emission_operator(p, tau, de) @ exc  # (level, photon) <- ground
        # ground block of the emitted amplitudes: (spin, photon) <- spin
        emitted = emit.reshape(4, 2, 2)[:2].reshape(4, 2)
        for g in trion.spin_precession_kraus(p, gap - tau, dg):
            ks.append(math.sqrt(w) * (qmath.kron(g, qmath.I2) @ emitted))
    return ks


def cycle_channel(p: DeviceParams, gap: float, grid_node=(0.0, 0.0),
                  steps: int = trion.DEFAULT_EMISSION_STEPS) -> tuple[QuantumChannel, float]:
    """One protocol cycle for a fixed Overhauser realisation.

    Returns the spin -> spin (x) photon channel conditioned on a photon inside
    the window and renormalised by the capture probability, together with
    that probability.  With incomplete excitation (elliptical pulses) the
    renormalised channel stays trace-decreasing.
    """
    if gap < p.window and not p.instantaneous_emission:
        raise ParameterError(f"gap {gap} ns shorter than window {p.window} ns")
    capture = p.capture_probability
    ks = [k / math.sqrt(capture) for k in _cycle_kraus(p, gap, grid_node, steps)]
    deficit = np.eye(2) - sum(k.conj().T @ k for k in ks)
    tp = bool(np.abs(deficit).max() < qmath.KRAUS_TOL)
    ch = QuantumChannel(SPIN_SPACE, SPIN_SPACE.tensor(PHOTON_SPACE), tuple(ks), trace_preserving=tp)
    return ch, capture


def _cycle_tensor(kraus: Sequence[np.ndarray]) -> np.ndarray:
    """``S[a, q, b, r, x, y] = sum_K K[(a q), x] conj(K[(b r), y])``."""
    kk = np.stack([k.reshape(2, 2, 2) for k in kraus])
    return np.einsum("naqx,nbry->aqbrxy", kk, kk.conj())


def _apply_cycle(tensor: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """Append one photon: (spin, photons) -> (spin, photons, new photon)."""
    d = rho.shape[0] // 2
    r = rho.reshape(2, d, 2, d)
    out = np.einsum("aqbrxy,xiyj->aiqbjr", tensor, r, optimize=True)
    return out.reshape(4 * d, 4 * d)


def register_space(k: int) -> HilbertSpace:
    return HilbertSpace.qubits("spin", *(f"photon_{i + 2}" for i in range(k)))


def _herald(tensor: np.ndarray) -> np.ndarray:
    """Heralding cycle on a maximally mixed spin, photon 1 projected on R."""
    out = _apply_cycle(tensor, np.eye(2, dtype=complex) / 2).reshape(2, 2, 2, 2)
    return out[:, 0, :, 0]


def _node_state(p, schedule, node, steps, cache):
    def tensor(gap):
        key = (node[0], node[1], gap)
        if key not in cache:
            cache[key] = _cycle_tensor(_cycle_kraus(p, gap, node, steps))
        return cache[key]

    gaps = schedule.gaps
    after = list(gaps) + [schedule.tail]
    rho = _herald(tensor(after[0]))
    for gap in after[1:]:
        rho = _apply_cycle(tensor(gap), rho)
    return rho


def k_photon_state(p: DeviceParams, k: int, schedule: PulseSchedule | None = None,
                   n_nodes: int = trion.DEFAULT_OVERHAUSER_NODES,
                   steps: int = trion.DEFAULT_EMISSION_STEPS) -> tuple[DensityMatrix, float]:
    """Overhauser-averaged spin + k photon state after heralded initialisation.

    Returns the renormalised state and the probability of the whole
    post-selected sequence (heralding on R included).  ``k = 0`` gives the
    heralded spin at the moment of the first emission.
    """
    if k < 0:
        raise ParameterError("k must be non-negative")
    if k > MAX_PHOTONS:
        raise ParameterError(f"k={k} exceeds the {MAX_PHOTONS}-photon memory budget")
    if k == 0:
        rho0 = np.diag([1.0, 0.0]).astype(complex)
        return DensityMatrix(register_space(0), rho0), 0.5 * p.capture_probability
    schedule = schedule or PulseSchedule.periodic(k)
    if schedule.n_photons != k:
        raise ParameterError(f"schedule has {schedule.n_photons} photons, expected {k}")
    schedule.check(p)
    total = np.zeros((2 ** (k + 1),) * 2, dtype=complex)
    cache: dict = {}
    for dg, de, w in overhauser_nodes(p, n_nodes):
        total += w * _node_state(p, schedule, (dg, de), steps, cache)
    prob = float(np.trace(total).real)
    rho = 0.5 * (total + total.conj().T) / prob
    return DensityMatrix(register_space(k), rho), prob


def compose_cycles_reference(p: DeviceParams, schedule: PulseSchedule,
                             n_nodes: int = trion.DEFAULT_OVERHAUSER_NODES,
                             steps: int = trion.DEFAULT_EMISSION_STEPS) -> np.ndarray:
    """Unnormalised final state built from explicit full-register Kraus operators.

    Slow reference path used to cross-check :func:`k_photon_state`.
    """
    after = list(schedule.gaps) + [schedule.tail]
    total = 0
    proj = qmath.kron(np.eye(2), PHOTON_STATES["R"].reshape(1, 2))
    for dg, de, w in overhauser_nodes(p, n_nodes):
        rho = np.eye(2, dtype=complex) / 2
        for i, gap in enumerate(after):
            ch, capture = cycle_channel(p, gap, (dg, de), steps)
            n_old = rho.shape[0] // 2
            # spin (x) old photons -> spin (x) old photons (x) new photon
            perm = _move_new_photon_last(n_old)
            ks = [perm @ qmath.kron(k, np.eye(n_old)) for k in ch.kraus]
            rho = capture * sum(k @ rho @ k.conj().T for k in ks)
            if i == 0:
                rho = proj @ rho @ proj.conj().T
        total = total + w * rho
    return total


def _move_new_photon_last(n_old: int) -> np.ndarray:
    """Permutation (spin, photon_new, old) -> (spin, old, photon_new)."""
    d = 4 * n_old
    perm = np.zeros((d, d))
    for s, q, o in itertools.product(range(2), range(2), range(n_old)):
        perm[(s * n_old + o) * 2 + q, (s * 2 + q) * n_old + o] = 1
    return perm


# -- observables ------------------------------------------------------------

def truth_table(p: DeviceParams, mode: str, t12: float = DEFAULT_T12,
                n_nodes: int = trion.DEFAULT_OVERHAUSER_NODES,
                steps: int = trion.DEFAULT_EMISSION_STEPS) -> TruthTable:
    """Three-pulse conditional table with photon 1 heralded on R.

    ``mode="t23_equals_t12"`` measures photon 2 in H/V, ``"t23_equals_2t12"``
    in R/L; photon 3 is always measured in R/L and the spin is traced out.
    """
    if mode == "t23_equals_t12":
        t23, basis2 = t12, "HV"
    elif mode == "t23_equals_2t12":
        t23, basis2 = 2 * t12, "RL"
    else:
        raise ParameterError(f"unknown truth-table mode {mode!r}")
    schedule = PulseSchedule.from_gaps([t12, t23], tail=t12)
    rho, _ = k_photon_state(p, 2, schedule, n_nodes, steps)
    photons = qmath.partial_trace(rho, ["photon_2", "photon_3"]).matrix
    joint = np.empty((2, 2))
    for i, a in enumerate(BASES[basis2]):
        for j, b in enumerate(BASES["RL"]):
            v = qmath.kron(PHOTON_STATES[a], PHOTON_STATES[b])
            joint[i, j] = np.vdot(v, photons @ v).real
    return TruthTable(basis2, "RL", joint / joint.sum(axis=0))


def average_cycle_channel(p: DeviceParams, gap: float = DEFAULT_T12,
                          n_nodes: int = trion.DEFAULT_OVERHAUSER_NODES,
                          steps: int = trion.DEFAULT_EMISSION_STEPS) -> QuantumChannel:
    """Single cycle averaged over Overhauser realisations, renormalised."""
    ks = []
    for dg, de, w in overhauser_nodes(p, n_nodes):
        ch, _ = cycle_channel(p, gap, (dg, de), steps)
        ks.extend(math.sqrt(w) * k for k in ch.kraus)
    deficit = np.eye(2) - sum(k.conj().T @ k for k in ks)
    tp = bool(np.abs(deficit).max() < qmath.KRAUS_TOL)
    return QuantumChannel(SPIN_SPACE, SPIN_SPACE.tensor(PHOTON_SPACE), tuple(ks), trace_preserving=tp)


def cycle_ptm(p: DeviceParams, gap: float = DEFAULT_T12,
              n_nodes: int = trion.DEFAULT_OVERHAUSER_NODES,
              steps: int = trion.DEFAULT_EMISSION_STEPS) -> PauliTransferMatrix:
    """Two-qubit PTM of one cycle, input ``spin (x) fresh photon slot``.

    The slot (nominally prepared in H) is discarded and replaced by the
    emitted photon, so the map is the same for any slot state.
    """
    ch = average_cycle_channel(p, gap, n_nodes, steps)
    slot = HilbertSpace((("slot", 2),))
    return qmath.channel_to_ptm(qmath.embed_fresh_register(ch, slot))


def ideal_cycle_ptm_reference() -> np.ndarray:
    """Textbook PTM product: photon reset to R, CNOT (spin control), then a
    quarter-period spin rotation."""
    cnot = np.eye(4, dtype=complex)[[0, 1, 3, 2]]
    hadamard_like = qmath.kron(trion.precession_unitary(math.pi / 2, 1.0), qmath.I2)
    reset = np.zeros((16, 16))
    for j in range(4):           # spin Pauli index; photon goes to (I + Z)/2 * 2
        reset[4 * j + 0, 4 * j + 0] = 1.0
        reset[4 * j + 3, 4 * j + 0] = 1.0
    return (qmath.ptm_of_unitary(hadamard_like).matrix
            @ qmath.ptm_of_unitary(cnot).matrix @ reset)


def target_state(p: DeviceParams, k: int, t12: float = DEFAULT_T12) -> np.ndarray:
    """Pure reference state from the same engine in the error-free limit."""
    ideal = p.ideal_limit(quarter_period=t12)
    rho, _ = k_photon_state(ideal, k, PulseSchedule.periodic(k, t12) if k else None, 1, 2)
    evals, evecs = np.linalg.eigh(rho.matrix)
    if evals[-1] < 1 - 1e-9:
        raise ParameterError("ideal engine did not produce a pure state")
    return evecs[:, -1]


def cluster_fidelity(p: DeviceParams, k: int, t12: float = DEFAULT_T12,
                     n_nodes: int = trion.DEFAULT_OVERHAUSER_NODES,
                     steps: int = trion.DEFAULT_EMISSION_STEPS,
                     reference: DeviceParams | None = None) -> float:
    """Fidelity of the spin + k photon state with the ideal engine output.

    ``reference`` supplies the parameters whose ideal limit defines the
    target (defaults to ``p``); error sweeps pass the unperturbed device.
    """
    return fidelity_point(p, k, t12, n_nodes, steps, reference)[0]


def fidelity_point(p: DeviceParams, k: int, t12: float = DEFAULT_T12,
                   n_nodes: int = trion.DEFAULT_OVERHAUSER_NODES,
                   steps: int = trion.DEFAULT_EMISSION_STEPS,
                   reference: DeviceParams | None = None) -> tuple[float, float]:
    """``(fidelity, sequence probability)`` for ``k`` photons."""
    rho, prob = k_photon_state(p, k, PulseSchedule.periodic(k, t12) if k else None, n_nodes, steps)
    psi = target_state(reference or p, k, t12)
    return min(1.0, max(0.0, qmath.state_fidelity(rho, psi))), prob


def fidelity_curve(p: DeviceParams, k_max: int, label: str = "scenario", t12: float = DEFAULT_T12,
                   n_nodes: int = trion.DEFAULT_OVERHAUSER_NODES,
                   steps: int = trion.DEFAULT_EMISSION_STEPS,
                   reference: DeviceParams | None = None) -> FidelityCurve:
    tag = params_hash(p)
    entries = [(k + 1, cluster_fidelity(p, k, t12, n_nodes, steps, reference), tag)
               for k in range(1, k_max + 1)]
    return FidelityCurve(label, tuple(entries), {"params_hash": tag})


def apply_systematic_error(p: DeviceParams, eps: float) -> DeviceParams:
    """Perturb pulse polarisation, field magnitude and both T2* by ``eps``."""
    if not 0 <= eps < 1:
        raise ParameterError(f"epsilon must lie in [0, 1), got {eps}")
    return p.with_(
        pulse_polarization=trion.rotate_polarization(p.pulse_polarization, eps * math.pi / 4),
        b_field=p.b_field * (1 + eps),
        t2_ground=p.t2_ground * (1 - eps),
        t2_excited=p.t2_excited * (1 - eps),
    )


def error_sweep(p: DeviceParams, epsilons: Sequence[float], k_max: int, t12: float = DEFAULT_T12,
                n_nodes: int = trion.DEFAULT_OVERHAUSER_NODES,
                steps: int = trion.DEFAULT_EMISSION_STEPS) -> list[FidelityCurve]:
    """Fidelity curves with all three systematic errors applied at once."""
    curves = []
    for eps in epsilons:
        perturbed = apply_systematic_error(p, eps)
        curve = fidelity_curve(perturbed, k_max, f"eps={eps:g}", t12, n_nodes, steps, reference=p)
        curve.metadata.update(epsilon=eps, mapping=EPSILON_MAPPING)
        curves.append(curve)
    return curves


def is_pointwise_ordered(curves: Sequence[FidelityCurve], tol: float = 1e-12) -> bool:
    """True when curves (sorted by increasing error) never increase pointwise."""
    for lo, hi in zip(curves, curves[1:]):
        if any(b > a + tol for a, b in zip(lo.fidelities, hi.fidelities)):
            return False
    return True
