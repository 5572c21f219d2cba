"""Dense linear algebra for small multipartite quantum systems.

Everything here works on plain ``numpy`` complex arrays.  The wrapper types
(:class:`HilbertSpace`, :class:`DensityMatrix`, :class:`QuantumChannel`,
:class:`PauliTransferMatrix`) carry tensor-structure labels and validate their
invariants once on construction; they are frozen, and the arrays they hold are
marked read-only so values can be shared between workers.

Conventions
-----------
* Tensor factors are ordered left to right, first factor most significant.
* Pauli bases are ordered ``I, X, Y, Z`` per qubit, lexicographic over qubits.
* The Choi matrix is ``sum_ij |i><j| (x) E(|i><j|)`` (unnormalised).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg

from .errors import DimensionError, ParameterError, UnknownSubsystemError

HERMITIAN_TOL = 1e-10
TRACE_TOL = 1e-10
PSD_FLOOR = -1e-9
KRAUS_TOL = 1e-9

I2 = np.eye(2, dtype=complex)
SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
PAULIS = (I2, SIGMA_X, SIGMA_Y, SIGMA_Z)
PAULI_LABELS = "IXYZ"


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=complex)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class HilbertSpace:
    """Ordered tensor product of labelled subsystems."""

    factors: tuple[tuple[str, int], ...]

    def __post_init__(self):
        factors = tuple((str(lbl), int(d)) for lbl, d in self.factors)
        labels = [lbl for lbl, _ in factors]
        if len(set(labels)) != len(labels):
            raise ParameterError(f"subsystem labels must be unique, got {labels}")
        if any(d < 1 for _, d in factors):
            raise ParameterError("subsystem dimensions must be positive")
        object.__setattr__(self, "factors", factors)

    @classmethod
    def qubits(cls, *labels: str) -> HilbertSpace:
        return cls(tuple((lbl, 2) for lbl in labels))

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(lbl for lbl, _ in self.factors)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(d for _, d in self.factors)

    @property
    def dim(self) -> int:
        return int(np.prod(self.dims, dtype=int))

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise UnknownSubsystemError(f"unknown subsystem {label!r}; have {self.labels}") from None

    def tensor(self, other: HilbertSpace) -> HilbertSpace:
        return HilbertSpace(self.factors + other.factors)

    def select(self, labels: Iterable[str]) -> HilbertSpace:
        wanted = set(labels)
        for lbl in wanted:
            self.index(lbl)
        return HilbertSpace(tuple(f for f in self.factors if f[0] in wanted))


@dataclass(frozen=True)
class DensityMatrix:
    """Validated density operator on a labelled space.

    ``normalized=False`` marks a conditioned (sub-normalised) state, such as
    the output of a post-selected branch before renormalisation.
    """

    space: HilbertSpace
    matrix: np.ndarray
    normalized: bool = True

    def __post_init__(self):
        m = _frozen(self.matrix)
        d = self.space.dim
        if m.shape != (d, d):
            raise DimensionError(f"matrix shape {m.shape} does not match space dimension {d}")
        if not np.allclose(m, m.conj().T, atol=HERMITIAN_TOL, rtol=0):
            raise ParameterError("density matrix is not Hermitian")
        evals = np.linalg.eigvalsh(0.5 * (m + m.conj().T))
        if evals.min() < PSD_FLOOR:
            raise ParameterError(f"density matrix has negative eigenvalue {evals.min():.3e}")
        tr = np.trace(m).real
        if self.normalized and abs(tr - 1) > TRACE_TOL:
            raise ParameterError(f"normalized state has trace {tr!r}")
        if not self.normalized and not (0 < tr <= 1 + TRACE_TOL):
            raise ParameterError(f"conditioned state has trace {tr!r} outside (0, 1]")
        object.__setattr__(self, "matrix", m)

    @property
    def trace(self) -> float:
        return float(np.trace(self.matrix).real)

    def renormalized(self) -> DensityMatrix:
        return DensityMatrix(self.space, self.matrix / self.trace, normalized=True)

    def eigenvalues(self, clamp: bool = False) -> np.ndarray:
        """Eigenvalues in ascending order.

        Small negative values from round-off are only clamped to zero on request
        (for reporting); propagation never clamps.
        """
        ev = np.linalg.eigvalsh(self.matrix)
        return np.clip(ev, 0.0, None) if clamp else ev


@dataclass(frozen=True)
class QuantumChannel:
    """Completely positive map in Kraus form, ``rho -> sum_i K_i rho K_i^dag``."""

    input_space: HilbertSpace
    output_space: HilbertSpace
    kraus: tuple[np.ndarray, ...]
    trace_preserving: bool = True

    def __post_init__(self):
        ks = tuple(_frozen(k) for k in self.kraus)
        if not ks:
            raise ParameterError("a channel needs at least one Kraus operator")
        shape = (self.output_space.dim, self.input_space.dim)
        for k in ks:
            if k.shape != shape:
                raise DimensionError(f"Kraus operator shape {k.shape}, expected {shape}")
        object.__setattr__(self, "kraus", ks)
        deficit = np.eye(self.input_space.dim) - self.kraus_sum()
        if self.trace_preserving:
            if np.abs(deficit).max() > KRAUS_TOL:
                raise ParameterError("Kraus operators do not sum to the identity")
        elif np.linalg.eigvalsh(0.5 * (deficit + deficit.conj().T)).min() < PSD_FLOOR:
            raise ParameterError("channel increases trace")

    def kraus_sum(self) -> np.ndarray:
        return sum(k.conj().T @ k for k in self.kraus)

    def apply(self, rho: np.ndarray) -> np.ndarray:
        rho = np.asarray(rho)
        if rho.shape != (self.input_space.dim, self.input_space.dim):
            raise DimensionError(f"input of shape {rho.shape} for channel on {self.input_space.labels}")
        return sum(k @ rho @ k.conj().T for k in self.kraus)

    def __call__(self, rho):
        if isinstance(rho, DensityMatrix):
            out = self.apply(rho.matrix)
            tr = np.trace(out).real
            return DensityMatrix(self.output_space, out, normalized=rho.normalized and abs(tr - 1) < TRACE_TOL)
        return self.apply(rho)

    def then(self, other: QuantumChannel) -> QuantumChannel:
        """Sequential composition: ``self`` first, ``other`` second."""
        if other.input_space.dim != self.output_space.dim:
            raise DimensionError("cannot compose channels with mismatched spaces")
        ks = [b @ a for a in self.kraus for b in other.kraus]
        return QuantumChannel(self.input_space, other.output_space, tuple(ks),
                              self.trace_preserving and other.trace_preserving)

    def scaled(self, factor: float) -> QuantumChannel:
        """Channel multiplied by ``factor`` (e.g. to renormalise a conditioned branch)."""
        s = np.sqrt(factor)
        out = tuple(s * k for k in self.kraus)
        tp = np.allclose(sum(k.conj().T @ k for k in out), np.eye(self.input_space.dim), atol=KRAUS_TOL)
        return QuantumChannel(self.input_space, self.output_space, out, tp)

    def superoperator(self) -> np.ndarray:
        """Row-major vectorised action: ``vec(E(rho)) = S @ vec(rho)``."""
        return sum(np.kron(k, k.conj()) for k in self.kraus)


@dataclass(frozen=True)
class PauliTransferMatrix:
    n_qubits: int
    matrix: np.ndarray = field(repr=False)

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        d = 4 ** self.n_qubits
        if m.shape != (d, d):
            raise DimensionError(f"PTM shape {m.shape}, expected {(d, d)}")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def labels(self) -> list[str]:
        return ["".join(p) for p in itertools.product(PAULI_LABELS, repeat=self.n_qubits)]

    def apply_to_vector(self, coeffs: np.ndarray) -> np.ndarray:
        return self.matrix @ coeffs


def kron(*ops) -> np.ndarray:
    """Kronecker product of one or more matrices (or vectors)."""
    if not ops:
        raise DimensionError("kron needs at least one operand")
    out = np.asarray(ops[0], dtype=complex)
    for op in ops[1:]:
        out = np.kron(out, np.asarray(op, dtype=complex))
    return out


def partial_trace(rho: DensityMatrix, keep: Iterable[str]) -> DensityMatrix:
    """Trace out every factor not listed in ``keep``.

    Keeping nothing returns the 1x1 matrix ``[[tr(rho)]]`` on an empty space.
    """
    keep = list(keep)
    space = rho.space
    kept_idx = sorted(space.index(lbl) for lbl in keep)
    n = len(space.dims)
    traced = [i for i in range(n) if i not in kept_idx]
    t = rho.matrix.reshape(space.dims + space.dims)
    # contract each traced factor's row index with its column index
    letters = "abcdefghijklmnopqrstuvwxyz"
    row = [letters[i] for i in range(n)]
    col = [letters[n + i] for i in range(n)]
    for i in traced:
        col[i] = row[i]
    out_idx = [row[i] for i in kept_idx] + [col[i] for i in kept_idx]
    reduced = np.einsum("".join(row) + "".join(col) + "->" + "".join(out_idx), t)
    sub = HilbertSpace(tuple(space.factors[i] for i in kept_idx))
    d = sub.dim
    return DensityMatrix(sub, reduced.reshape(d, d), normalized=rho.normalized)


def matrix_exp(m: np.ndarray, scale: complex = 1.0) -> np.ndarray:
    """``exp(scale * m)`` for a square matrix."""
    m = np.asarray(m, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionError(f"matrix_exp needs a square matrix, got shape {m.shape}")
    return scipy.linalg.expm(scale * m)


@lru_cache(maxsize=None)
def pauli_basis(n_qubits: int) -> tuple[np.ndarray, ...]:
    """All ``4**n`` Pauli strings as matrices, lexicographic in ``I, X, Y, Z``."""
    basis = []
    for combo in itertools.product(range(4), repeat=n_qubits):
        basis.append(_frozen(kron(*(PAULIS[c] for c in combo)) if combo else np.eye(1)))
    return tuple(basis)


def _n_qubits(space: HilbertSpace) -> int:
    n = int(round(np.log2(space.dim)))
    if 2 ** n != space.dim or any(d != 2 for d in space.dims):
        raise DimensionError(f"space {space.labels} is not a qubit register")
    return n


def channel_to_ptm(ch: QuantumChannel) -> PauliTransferMatrix:
    """``R[i, j] = tr(P_i E(P_j)) / d`` for a channel on a qubit register.

    Register-growing channels must be embedded first (see
    :func:`embed_fresh_register`).
    """
    if ch.input_space.dim != ch.output_space.dim:
        raise DimensionError("PTM requires equal input and output dimension; embed the channel first")
    n = _n_qubits(ch.input_space)
    _n_qubits(ch.output_space)
    basis = pauli_basis(n)
    d = 2 ** n
    images = [ch.apply(p) for p in basis]
    r = np.empty((4 ** n, 4 ** n))
    for i, pi in enumerate(basis):
        for j, img in enumerate(images):
            # P_i is Hermitian so tr(P_i M) = sum(conj(P_i) * M)
            r[i, j] = np.vdot(pi, img).real / d
    return PauliTransferMatrix(n, r)


def ptm_of_unitary(u: np.ndarray) -> PauliTransferMatrix:
    u = np.asarray(u, dtype=complex)
    n = int(round(np.log2(u.shape[0])))
    space = HilbertSpace.qubits(*(f"q{i}" for i in range(n)))
    return channel_to_ptm(QuantumChannel(space, space, (u,)))


def pauli_vector(rho: np.ndarray) -> np.ndarray:
    """Real coefficients ``c_j = tr(P_j rho)``; ``rho = sum_j c_j P_j / d``."""
    rho = np.asarray(rho)
    n = int(round(np.log2(rho.shape[0])))
    return np.array([np.vdot(p, rho).real for p in pauli_basis(n)])


def from_pauli_vector(coeffs: np.ndarray) -> np.ndarray:
    n = int(round(np.log(len(coeffs)) / np.log(4)))
    return sum(c * p for c, p in zip(coeffs, pauli_basis(n))) / 2 ** n


def channel_to_choi(ch: QuantumChannel) -> np.ndarray:
    """Unnormalised Choi matrix ``(I (x) E)(|Omega><Omega|)``."""
    din, dout = ch.input_space.dim, ch.output_space.dim
    choi = np.zeros((din * dout, din * dout), dtype=complex)
    for k in ch.kraus:
        # column i of (I (x) K)|Omega> is e_i (x) K e_i
        v = np.zeros((din, dout), dtype=complex)
        v[:, :] = k.T
        vec = v.reshape(-1)
        choi += np.outer(vec, vec.conj())
    return choi


def choi_to_kraus(choi: np.ndarray, din: int, dout: int, tol: float = 1e-14) -> list[np.ndarray]:
    """Kraus operators from a PSD Choi matrix (in the convention above)."""
    evals, evecs = np.linalg.eigh(0.5 * (choi + choi.conj().T))
    out = []
    for lam, v in zip(evals, evecs.T):
        if lam > tol:
            out.append(np.sqrt(lam) * v.reshape(din, dout).T)
    return out


def embed_fresh_register(ch: QuantumChannel, added: HilbertSpace) -> QuantumChannel:
    """Square up a register-growing channel for process tomography.

    The embedded map takes ``input (x) added`` to ``output``: the ``added``
    slot is discarded and the original channel applied, so for every fiducial
    slot state ``f`` the embedded map acts on ``rho (x) f`` exactly as ``ch``
    acts on ``rho``.
    """
    space_in = ch.input_space.tensor(added)
    if space_in.dim != ch.output_space.dim:
        raise DimensionError("embedding does not produce equal input/output dimension")
    eye = np.eye(ch.input_space.dim)
    ks = []
    for j in range(added.dim):
        bra = np.zeros((1, added.dim))
        bra[0, j] = 1.0
        proj = kron(eye, bra)
        ks.extend(k @ proj for k in ch.kraus)
    return QuantumChannel(space_in, ch.output_space, tuple(ks), ch.trace_preserving)


def state_fidelity(rho, psi: np.ndarray) -> float:
    """``<psi|rho|psi>`` for a pure target state."""
    mat = rho.matrix if isinstance(rho, DensityMatrix) else np.asarray(rho)
    psi = np.asarray(psi, dtype=complex).reshape(-1)
    if mat.shape != (psi.size, psi.size):
        raise DimensionError(f"state of dimension {mat.shape[0]} vs target of dimension {psi.size}")
    val = np.vdot(psi, mat @ psi)
    if abs(val.imag) > 1e-10:
        raise ParameterError("fidelity has a non-negligible imaginary part; is rho Hermitian?")
    return float(val.real)


def is_psd(m: np.ndarray, floor: float = PSD_FLOOR) -> bool:
    m = np.asarray(m)
    return bool(np.linalg.eigvalsh(0.5 * (m + m.conj().T)).min() >= floor)


def random_density_matrix(dim: int, rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    """Ginibre-distributed random state; used by property tests."""
    rank = rank or dim
    g = rng.normal(size=(dim, rank)) + 1j * rng.normal(size=(dim, rank))
    rho = g @ g.conj().T
    return rho / np.trace(rho).real


def random_kraus(din: int, dout: int, n_ops: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Random trace-preserving Kraus set via a random isometry."""
    g = rng.normal(size=(dout * n_ops, din)) + 1j * rng.normal(size=(dout * n_ops, din))
    q, _ = np.linalg.qr(g)
    return [q[i * dout:(i + 1) * dout, :] for i in range(n_ops)]


def unitary_channel(space: HilbertSpace, u: np.ndarray) -> QuantumChannel:
    return QuantumChannel(space, space, (np.asarray(u, dtype=complex),))

