"""Four-level model of a positively charged quantum-dot trion.

Levels, in order: resident hole up (``up``), hole down (``down``), trion with
electron up (``trion_up``) and trion with electron down (``trion_down``).
Optical selection rules are perfectly cyclic: ``trion_up`` decays to ``up``
emitting R, ``trion_down`` decays to ``down`` emitting L.

Units: times in ns, fields in tesla, frequencies in GHz.  Hamiltonians are
returned as angular frequencies (rad/ns, hbar = 1).  The in-plane (Voigt)
field is taken along y in the frame whose z axis is the optical axis, so a
quarter Larmor period maps ``up -> (up + down)/sqrt(2)`` and
``down -> (-up + down)/sqrt(2)``.

Photon basis: ``R = (1, 0)``, ``L = (0, 1)``, ``H = (R + L)/sqrt(2)`` and
``V = i(R - L)/sqrt(2)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from numpy.polynomial.hermite import hermgauss
import scipy.linalg

from . import qmath
from .errors import ParameterError
from .qmath import HilbertSpace, QuantumChannel, SIGMA_Y, SIGMA_Z

LEVELS = ("up", "down", "trion_up", "trion_down")
LEVEL_SPACE = HilbertSpace((("level", 4),))
PHOTON_SPACE = HilbertSpace((("photon", 2),))
SPIN_SPACE = HilbertSpace((("spin", 2),))

GROUND = slice(0, 2)
EXCITED = slice(2, 4)

SQ2 = math.sqrt(2.0)
JONES = {
    "R": (1.0 + 0j, 0j),
    "L": (0j, 1.0 + 0j),
    "H": (1 / SQ2 + 0j, 1 / SQ2 + 0j),
    "V": (1j / SQ2, -1j / SQ2),
}
PHOTON_STATES = {
    "R": np.array([1, 0], dtype=complex),
    "L": np.array([0, 1], dtype=complex),
    "H": np.array([1, 1], dtype=complex) / SQ2,
    "V": np.array([1j, -1j]) / SQ2,
}
PHOTON_STATES["D"] = (PHOTON_STATES["H"] + PHOTON_STATES["V"]) / SQ2
PHOTON_STATES["A"] = (PHOTON_STATES["H"] - PHOTON_STATES["V"]) / SQ2

DEPHASING_MODELS = ("markovian", "quasi_static")
DEFAULT_OVERHAUSER_NODES = 32
DEFAULT_EMISSION_STEPS = 64


@dataclass(frozen=True)
class PhysicalConstants:
    """CODATA 2018 exact/recommended values (SI)."""

    mu_B: float = 9.2740100783e-24
    h: float = 6.62607015e-34

    @property
    def hbar(self) -> float:
        return self.h / (2 * math.pi)


CONSTANTS = PhysicalConstants()


def larmor_frequency(g: float, b: float) -> float:
    """Larmor frequency ``g mu_B B / h`` in GHz for a field ``b`` in tesla."""
    if b < 0:
        raise ParameterError(f"magnetic field must be non-negative, got {b}")
    return abs(g) * CONSTANTS.mu_B * b / CONSTANTS.h * 1e-9


def quarter_period_field(g: float, quarter_period: float) -> float:
    """Field (T) at which ``quarter_period`` (ns) is a quarter Larmor period."""
    if quarter_period <= 0 or g == 0:
        raise ParameterError("quarter period and g-factor must be non-zero")
    return CONSTANTS.h / (4 * abs(g) * CONSTANTS.mu_B * quarter_period * 1e-9)


def linear_polarization(angle: float) -> tuple[complex, complex]:
    """Jones vector (R, L amplitudes) of linear light rotated ``angle`` rad from H."""
    return (complex(np.exp(1j * angle)) / SQ2, complex(np.exp(-1j * angle)) / SQ2)


def rotate_polarization(jones, angle: float) -> tuple[complex, complex]:
    """Rotate the linear axes of a Jones vector by ``angle`` (a phase in R/L)."""
    r, l = jones
    return (complex(r * np.exp(1j * angle)), complex(l * np.exp(-1j * angle)))


_DEFAULT_T12 = 2.08
_DEFAULT_B = quarter_period_field(0.229, _DEFAULT_T12)


@dataclass(frozen=True)
class DeviceParams:
    """Physical parameters of the dot and the excitation scheme.

    ``t2_ground`` and ``t2_excited`` may be ``math.inf`` to switch dephasing
    off.  ``ground_dephasing`` selects how the resident spin loses coherence
    between pulses: ``"markovian"`` (Lindblad pure dephasing in the spin basis,
    coherence ``exp(-t/T2*)``) or ``"quasi_static"`` (Gaussian Overhauser
    detuning frozen for a whole pulse sequence, coherence
    ``exp(-(t/T2*)**2)``).  The excited-state electron always uses the
    quasi-static model.  ``instantaneous_emission`` replaces the emission-time
    integral by a single decay at the pulse time (the ideal limit).
    """

    g_ground: float = 0.229
    g_excited: float = 0.096
    t2_ground: float = 4.8
    t2_excited: float = 0.8
    t_rad: float = 0.8
    b_field: float = _DEFAULT_B
    window: float = 0.3
    pulse_polarization: tuple[complex, complex] = JONES["H"]
    p0: float = 1.0
    ground_dephasing: str = "markovian"
    instantaneous_emission: bool = False

    def __post_init__(self):
        for name in ("t2_ground", "t2_excited", "t_rad", "window"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be positive, got {getattr(self, name)}")
        if self.b_field < 0:
            raise ParameterError(f"b_field must be non-negative, got {self.b_field}")
        pol = tuple(complex(a) for a in self.pulse_polarization)
        if len(pol) != 2 or abs(math.hypot(abs(pol[0]), abs(pol[1])) - 1) > 1e-10:
            raise ParameterError("pulse_polarization must be a unit-norm Jones vector (R, L)")
        object.__setattr__(self, "pulse_polarization", pol)
        if not 0 < self.p0 <= 1:
            raise ParameterError(f"p0 must lie in (0, 1], got {self.p0}")
        if self.ground_dephasing not in DEPHASING_MODELS:
            raise ParameterError(f"ground_dephasing must be one of {DEPHASING_MODELS}")

    def with_(self, **changes) -> DeviceParams:
        return replace(self, **changes)

    @property
    def ground_omega(self) -> float:
        return 2 * math.pi * larmor_frequency(self.g_ground, self.b_field)

    @property
    def excited_omega(self) -> float:
        return 2 * math.pi * larmor_frequency(self.g_excited, self.b_field)

    @property
    def hole_period(self) -> float:
        f = larmor_frequency(self.g_ground, self.b_field)
        return math.inf if f == 0 else 1 / f

    @property
    def capture_probability(self) -> float:
        if self.instantaneous_emission:
            return 1.0
        return -math.expm1(-self.window / self.t_rad)

    def ideal_limit(self, quarter_period: float | None = None) -> DeviceParams:
        """Error-free version: no dephasing, frozen excited spin, H pulses,
        instantaneous emission.  With ``quarter_period`` the field is reset so
        that interval is exactly a quarter hole period."""
        b = self.b_field if quarter_period is None else quarter_period_field(self.g_ground, quarter_period)
        return replace(self, g_excited=0.0, t2_ground=math.inf, t2_excited=math.inf, b_field=b,
                       pulse_polarization=JONES["H"], p0=1.0, instantaneous_emission=True)


def sigma(t2: float) -> float:
    """Angular-frequency spread (rad/ns) giving the envelope ``exp(-(t/t2)**2)``."""
    return 0.0 if math.isinf(t2) else SQ2 / t2


@dataclass(frozen=True)
class OverhauserGrid:
    """Quadrature for a zero-mean Gaussian angular-frequency detuning (rad/ns)."""

    nodes: tuple[float, ...]
    weights: tuple[float, ...]

    def __post_init__(self):
        nodes = tuple(float(x) for x in self.nodes)
        weights = tuple(float(w) for w in self.weights)
        if len(nodes) != len(weights) or not nodes:
            raise ParameterError("grid needs matching, non-empty nodes and weights")
        if min(weights) < 0 or abs(math.fsum(weights) - 1) > 1e-12:
            raise ParameterError("grid weights must be non-negative and sum to 1")
        if not np.allclose(sorted(nodes), sorted(-x for x in nodes), atol=1e-12, rtol=1e-12):
            raise ParameterError("grid nodes must be symmetric about zero")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    def __len__(self):
        return len(self.nodes)

    def second_moment(self) -> float:
        return math.fsum(w * x * x for x, w in zip(self.nodes, self.weights))


@lru_cache(maxsize=64)
def _hermgauss(n: int):
    x, w = hermgauss(n)
    w = w / math.sqrt(math.pi)
    return tuple(x), tuple(w / math.fsum(w))


def sample_overhauser(t2: float, n_nodes: int = DEFAULT_OVERHAUSER_NODES) -> OverhauserGrid:
    """Gauss-Hermite grid for detunings with standard deviation ``sqrt(2)/t2``."""
    if n_nodes < 1:
        raise ParameterError(f"n_nodes must be at least 1, got {n_nodes}")
    x, w = _hermgauss(int(n_nodes))
    scale = SQ2 * sigma(t2)
    nodes = [scale * xi for xi in x]
    if n_nodes % 2:
        nodes[n_nodes // 2] = 0.0
    return OverhauserGrid(tuple(nodes), w)


def precession_unitary(omega: float, t: float) -> np.ndarray:
    """``exp(-i omega t sigma_y / 2)`` on a two-level block (closed form)."""
    c, s = math.cos(omega * t / 2), math.sin(omega * t / 2)
    return np.array([[c, -s], [s, c]], dtype=complex)


def build_hamiltonians(p: DeviceParams) -> tuple[np.ndarray, np.ndarray]:
    """Zeeman Hamiltonians (rad/ns) of the ground and excited doublets."""
    return 0.5 * p.ground_omega * SIGMA_Y, 0.5 * p.excited_omega * SIGMA_Y


def excitation_amplitudes(p: DeviceParams) -> tuple[complex, complex]:
    """Transition amplitudes ``up -> trion_up`` and ``down -> trion_down``.

    The R component of the pulse drives the ``up`` transition and the L
    component the ``down`` one.  Pulse area is calibrated so linear light
    inverts both with unit probability; a transition driven by more than half
    the pulse intensity saturates at unit probability.
    """
    out = []
    for amp in p.pulse_polarization:
        mag = abs(amp)
        if mag == 0:
            out.append(0j)
        else:
            prob = 2 * mag * mag
            # round-off in |J|^2 would otherwise leave a ~1e-8 ground residue
            prob = 1.0 if prob > 1 - 1e-12 else prob
            out.append(amp / mag * math.sqrt(prob))
    return out[0], out[1]


def excitation_unitary(p: DeviceParams) -> np.ndarray:
    u = np.zeros((4, 4), dtype=complex)
    for g, e, a in zip((0, 1), (2, 3), excitation_amplitudes(p)):
        c = math.sqrt(max(0.0, 1 - abs(a) ** 2))
        u[g, g], u[e, g] = c, a
        u[g, e], u[e, e] = -np.conj(a), c
    return u


def excitation_map(p: DeviceParams) -> QuantumChannel:
    """Instantaneous spin-preserving excitation of the resident hole."""
    return QuantumChannel(LEVEL_SPACE, LEVEL_SPACE, (excitation_unitary(p),))


def emission_quadrature(p: DeviceParams, steps: int = DEFAULT_EMISSION_STEPS):
    """Emission times and weights for the post-selected decay window.

    Composite Simpson over ``[0, window]`` with the exponential decay density
    folded into the weights.  The weights are rescaled to sum exactly to the
    capture probability so a long window never yields a trace-increasing map.
    """
    if p.instantaneous_emission:
        return np.zeros(1), np.ones(1)
    if steps < 2 or steps % 2:
        raise ParameterError(f"Simpson quadrature needs an even number of steps, got {steps}")
    taus = np.linspace(0.0, p.window, steps + 1)
    coef = np.ones(steps + 1)
    coef[1:-1:2] = 4
    coef[2:-1:2] = 2
    weights = coef * np.exp(-taus / p.t_rad)
    return taus, weights * (p.capture_probability / math.fsum(weights))


# rows of the emitted state (level (x) photon) reached by the two decays
_DECAY = np.zeros((8, 4), dtype=complex)
_DECAY[0 * 2 + 0, 2] = 1.0  # trion_up -> up, R
_DECAY[1 * 2 + 1, 3] = 1.0  # trion_down -> down, L


def emission_operator(p: DeviceParams, tau: float, detuning: float = 0.0) -> np.ndarray:
    """Amplitude map (8x4) for a decay at time ``tau`` after the pulse.

    The excited doublet precesses (with an extra Overhauser ``detuning``)
    until ``tau`` and then decays.  Ground amplitudes give no photon and are
    dropped.
    """
    u = np.eye(4, dtype=complex)
    u[EXCITED, EXCITED] = precession_unitary(p.excited_omega + detuning, tau)
    return _DECAY @ u


def emission_map(p: DeviceParams, detuning: float = 0.0,
                 steps: int = DEFAULT_EMISSION_STEPS) -> QuantumChannel:
    """Conditional map for a photon emitted inside the post-selection window."""
    if p.window <= 0:
        raise ParameterError("window must be positive")
    taus, weights = emission_quadrature(p, steps)
    ks = tuple(math.sqrt(w) * emission_operator(p, t, detuning) for t, w in zip(taus, weights))
    return QuantumChannel(LEVEL_SPACE, LEVEL_SPACE.tensor(PHOTON_SPACE), ks, trace_preserving=False)


def _liouvillian(h: np.ndarray, collapse) -> np.ndarray:
    # row-major vectorisation: vec(A X B) = (A kron B^T) vec(X)
    d = h.shape[0]
    eye = np.eye(d)
    gen = -1j * (np.kron(h, eye) - np.kron(eye, h.T))
    for c in collapse:
        cdc = c.conj().T @ c
        gen += np.kron(c, c.conj()) - 0.5 * np.kron(cdc, eye) - 0.5 * np.kron(eye, cdc.T)
    return gen


def _superop_to_kraus(sop: np.ndarray, d: int) -> list[np.ndarray]:
    # reshuffle the row-major superoperator into the Choi matrix
    choi = sop.reshape(d, d, d, d).transpose(2, 0, 3, 1).reshape(d * d, d * d)
    return qmath.choi_to_kraus(choi, d, d)


@lru_cache(maxsize=4096)
def markovian_spin_kraus(omega: float, t2: float, duration: float) -> tuple[np.ndarray, ...]:
    """Kraus operators of Larmor precession with Lindblad spin-basis dephasing.

    Collapse operator ``sqrt(1/(2 t2)) sigma_z`` so that, without precession,
    the ``up/down`` coherence decays as ``exp(-t/t2)``.
    """
    h = 0.5 * omega * SIGMA_Y
    if math.isinf(t2):
        return (precession_unitary(omega, duration),)
    gen = _liouvillian(h, [math.sqrt(0.5 / t2) * SIGMA_Z])
    sop = scipy.linalg.expm(gen * duration)
    ks = _superop_to_kraus(sop, 2)
    for k in ks:
        k.setflags(write=False)
    return tuple(ks)


def spin_precession_kraus(p: DeviceParams, duration: float, detuning: float = 0.0) -> tuple[np.ndarray, ...]:
    """Kraus operators of the ground doublet for one free-evolution interval.

    ``detuning`` is the frozen Overhauser shift used in the quasi-static model
    and is ignored in the Markovian one.
    """
    if duration < 0:
        raise ParameterError(f"duration must be non-negative, got {duration}")
    if p.ground_dephasing == "markovian":
        return markovian_spin_kraus(p.ground_omega, p.t2_ground, float(duration))
    return (precession_unitary(p.ground_omega + detuning, duration),)


def ground_precession_map(p: DeviceParams, duration: float,
                          grid: OverhauserGrid | None = None) -> QuantumChannel:
    """Free evolution of the four-level system between pulses.

    Quasi-static model: mixture over ``grid`` (default 32 Gauss-Hermite nodes
    for ``t2_ground``) of unitary precessions at ``omega + delta``; the
    excited doublet uses the same nodes rescaled to its own spread.  Markovian
    model: Lindblad evolution of the ground doublet, unitary excited doublet.
    """
    if duration < 0:
        raise ParameterError(f"duration must be non-negative, got {duration}")
    if p.ground_dephasing == "quasi_static":
        grid = grid or sample_overhauser(p.t2_ground)
        sg, se = sigma(p.t2_ground), sigma(p.t2_excited)
        ks = []
        for x, w in zip(grid.nodes, grid.weights):
            u = np.zeros((4, 4), dtype=complex)
            u[GROUND, GROUND] = precession_unitary(p.ground_omega + x, duration)
            xe = 0.0 if sg == 0 else x * se / sg
            u[EXCITED, EXCITED] = precession_unitary(p.excited_omega + xe, duration)
            ks.append(math.sqrt(w) * u)
        return QuantumChannel(LEVEL_SPACE, LEVEL_SPACE, tuple(ks))
    h = np.zeros((4, 4), dtype=complex)
    hg, he = build_hamiltonians(p)
    h[GROUND, GROUND], h[EXCITED, EXCITED] = hg, he
    collapse = []
    if not math.isinf(p.t2_ground):
        c = np.zeros((4, 4), dtype=complex)
        c[GROUND, GROUND] = math.sqrt(0.5 / p.t2_ground) * SIGMA_Z
        collapse.append(c)
    sop = scipy.linalg.expm(_liouvillian(h, collapse) * duration)
    return QuantumChannel(LEVEL_SPACE, LEVEL_SPACE, tuple(_superop_to_kraus(sop, 4)))
