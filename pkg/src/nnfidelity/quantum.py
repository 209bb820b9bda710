"""Dense linear algebra for n-qubit states.

Conventions used throughout the package:

* Basis index ``j`` of a 2**n vector: qubit 0 (leftmost letter) is the most
  significant bit.
* Pauli strings are words over ``IXYZ``; their canonical index is the base-4
  number with I=0, X=1, Y=2, Z=3 and the leftmost letter most significant.
"""

from __future__ import annotations

import functools
import math
from dataclasses import InitVar, dataclass
from typing import Union

import numpy as np

from .errors import DimensionMismatch, LengthMismatch, NonPSDInput, UnsupportedState

MAX_QUBITS = 8
PAULI_LETTERS = "IXYZ"
ROUNDOFF = 1e-12

_SINGLE = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}
# (x bit, z bit) for each letter; Y = i X Z
_XZ = {"I": (0, 0), "X": (1, 0), "Y": (1, 1), "Z": (0, 1)}


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=complex)
    a.setflags(write=False)
    return a


def _qubits_for_dim(d: int) -> int:
    n = int(d).bit_length() - 1
    if d < 2 or (1 << n) != d:
        raise DimensionMismatch(f"dimension {d} is not a power of two >= 2")
    if n > MAX_QUBITS:
        raise DimensionMismatch(f"{n} qubits exceeds the supported maximum of {MAX_QUBITS}")
    return n


@dataclass(frozen=True, eq=False)
class StateVector:
    amp: np.ndarray
    check: InitVar[bool] = True

    def __post_init__(self, check):
        amp = _frozen(np.ravel(self.amp))
        object.__setattr__(self, "amp", amp)
        _qubits_for_dim(amp.size)
        if check:
            norm = float(np.vdot(amp, amp).real)
            if abs(norm - 1.0) > 1e-12:
                raise ValueError(f"state vector norm^2 is {norm!r}, expected 1")

    @property
    def n(self) -> int:
        return _qubits_for_dim(self.amp.size)

    @property
    def dim(self) -> int:
        return self.amp.size

    @classmethod
    def normalized(cls, amp) -> "StateVector":
        amp = np.asarray(amp, dtype=complex).ravel()
        return cls(amp / np.linalg.norm(amp))

    def density(self) -> "DensityMatrix":
        return DensityMatrix(np.outer(self.amp, self.amp.conj()), check=False)


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    mat: np.ndarray
    check: InitVar[bool] = True

    def __post_init__(self, check):
        mat = _frozen(self.mat)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
            raise DimensionMismatch(f"density matrix must be square, got shape {mat.shape}")
        object.__setattr__(self, "mat", mat)
        _qubits_for_dim(mat.shape[0])
        if check:
            herm = float(np.max(np.abs(mat - mat.conj().T)))
            if herm > 1e-10:
                raise ValueError(f"matrix is not Hermitian (max deviation {herm:.3e})")
            tr = np.trace(mat).real
            if abs(tr - 1.0) > 1e-10:
                raise ValueError(f"trace is {tr!r}, expected 1")
            lo = float(np.linalg.eigvalsh(mat)[0])
            if lo < -1e-10:
                raise NonPSDInput(f"minimum eigenvalue {lo:.3e} < 0")

    @property
    def n(self) -> int:
        return _qubits_for_dim(self.mat.shape[0])

    @property
    def dim(self) -> int:
        return self.mat.shape[0]

    @classmethod
    def maximally_mixed(cls, n: int) -> "DensityMatrix":
        d = 1 << n
        return cls(np.eye(d) / d)


State = Union[StateVector, DensityMatrix]


@dataclass(frozen=True, eq=False)
class Unitary:
    mat: np.ndarray
    check: InitVar[bool] = True

    def __post_init__(self, check):
        mat = _frozen(self.mat)
        object.__setattr__(self, "mat", mat)
        _qubits_for_dim(mat.shape[0])
        if check:
            dev = float(np.max(np.abs(mat.conj().T @ mat - np.eye(mat.shape[0]))))
            if dev > 1e-10:
                raise ValueError(f"matrix is not unitary (max |U^dag U - I| = {dev:.3e})")

    @property
    def n(self) -> int:
        return _qubits_for_dim(self.mat.shape[0])


@dataclass(frozen=True, order=True)
class PauliString:
    letters: str

    def __post_init__(self):
        letters = self.letters.upper()
        if not letters or any(c not in PAULI_LETTERS for c in letters):
            raise ValueError(f"invalid Pauli string {self.letters!r}")
        object.__setattr__(self, "letters", letters)

    @property
    def n(self) -> int:
        return len(self.letters)

    @property
    def index(self) -> int:
        idx = 0
        for c in self.letters:
            idx = 4 * idx + PAULI_LETTERS.index(c)
        return idx

    @property
    def weight(self) -> int:
        return sum(c != "I" for c in self.letters)

    @classmethod
    def from_index(cls, index: int, n: int) -> "PauliString":
        if not 0 <= index < 4**n:
            raise ValueError(f"index {index} outside [0, 4^{n})")
        digits = []
        for _ in range(n):
            index, r = divmod(index, 4)
            digits.append(PAULI_LETTERS[r])
        return cls("".join(reversed(digits)))

    def masks(self) -> tuple[int, int]:
        """(x_mask, z_mask) in basis-index bit order."""
        x = z = 0
        for q, c in enumerate(self.letters):
            xb, zb = _XZ[c]
            bit = self.n - 1 - q
            x |= xb << bit
            z |= zb << bit
        return x, z

    def matrix(self) -> np.ndarray:
        """Dense Kronecker product; used only as a reference path."""
        out = np.ones((1, 1), dtype=complex)
        for c in self.letters:
            out = np.kron(out, _SINGLE[c])
        return out

    def __str__(self):
        return self.letters


def _as_pauli(p: PauliString | str) -> PauliString:
    return p if isinstance(p, PauliString) else PauliString(p)


@functools.lru_cache(maxsize=None)
def _popcount_parity(n: int) -> np.ndarray:
    """parity[j] = popcount(j) mod 2 for j < 2**n."""
    j = np.arange(1 << n)
    par = np.zeros(1 << n, dtype=np.int64)
    for b in range(n):
        par ^= (j >> b) & 1
    return par


def parity_signs(n: int, mask: int) -> np.ndarray:
    """(-1)**popcount(j & mask) for every basis index j."""
    return 1 - 2 * _popcount_parity(n)[np.arange(1 << n) & mask]


def walsh_hadamard(v: np.ndarray, axis: int = -1) -> np.ndarray:
    """Unnormalised Walsh-Hadamard transform along ``axis`` in O(n 2**n).

    ``out[z] = sum_j (-1)**popcount(j & z) v[j]``.
    """
    v = np.moveaxis(np.asarray(v), axis, -1)
    size = v.shape[-1]
    n = _qubits_for_dim(size) if size > 1 else 0
    lead = v.shape[:-1]
    out = np.array(v, dtype=np.result_type(v, np.float64)).reshape(lead + (2,) * n)
    k = len(lead)
    for b in range(n):
        ax = k + b
        a0 = np.take(out, 0, axis=ax)
        a1 = np.take(out, 1, axis=ax)
        out = np.stack([a0 + a1, a0 - a1], axis=ax)
    return np.moveaxis(out.reshape(lead + (size,)), -1, axis)


def pauli_expectation(state: State, p: PauliString | str) -> float:
    """tr(rho W_p) in O(2**n) without building the Pauli matrix."""
    p = _as_pauli(p)
    if state.n != p.n:
        raise DimensionMismatch(f"state has {state.n} qubits, Pauli string has {p.n}")
    x, z = p.masks()
    n = p.n
    phase = 1j ** bin(x & z).count("1")
    j = np.arange(1 << n)
    signs = parity_signs(n, z)
    if isinstance(state, StateVector):
        a = state.amp
        val = phase * np.sum(signs * a * a[j ^ x].conj())
    else:
        val = phase * np.sum(signs * state.mat[j, j ^ x])
    if abs(val.imag) > 1e-10:
        raise ArithmeticError(f"expectation of {p} has imaginary part {val.imag:.3e}")
    return float(val.real)


@functools.lru_cache(maxsize=None)
def _xz_to_index(n: int) -> np.ndarray:
    """table[x, z] -> canonical Pauli index."""
    digit = {(0, 0): 0, (1, 0): 1, (1, 1): 2, (0, 1): 3}
    table = np.zeros((1 << n, 1 << n), dtype=np.int64)
    masks = np.arange(1 << n)
    for q in range(n):
        bit = n - 1 - q
        xb = (masks >> bit) & 1
        for (a, b), dgt in digit.items():
            sel = np.outer(xb == a, ((masks >> bit) & 1) == b)
            table[sel] += dgt * 4**bit
    return table


def all_pauli_expectations(state: State) -> np.ndarray:
    """All 4**n expectations, indexed by canonical Pauli index, in O(n 4**n)."""
    n = state.n
    d = 1 << n
    j = np.arange(d)
    masks = np.arange(d)
    # C[x, j] = rho[j, j ^ x]
    if isinstance(state, StateVector):
        a = state.amp
        C = a[None, :] * a[j[None, :] ^ masks[:, None]].conj()
    else:
        C = state.mat[j[None, :], j[None, :] ^ masks[:, None]]
    T = walsh_hadamard(C, axis=1)
    # number of Y letters for each (x, z) pair
    ny = np.zeros((d, d), dtype=np.int64)
    xz = masks[:, None] & masks[None, :]
    for b in range(n):
        ny += (xz >> b) & 1
    E = (1j ** (ny % 4)) * T
    out = np.empty(4**n)
    out[_xz_to_index(n).ravel()] = E.real.ravel()
    return out


def _radicand_sqrt(val: float, what: str) -> float:
    if val < -ROUNDOFF:
        raise NonPSDInput(f"{what} is negative ({val:.3e})")
    return math.sqrt(min(max(val, 0.0), 1.0))


def fidelity_to_pure(target: StateVector, rho: State) -> float:
    """sqrt(<psi|rho|psi>) for a pure target."""
    if target.dim != rho.dim:
        raise DimensionMismatch(f"target dim {target.dim} != state dim {rho.dim}")
    psi = target.amp
    if isinstance(rho, StateVector):
        overlap = abs(np.vdot(psi, rho.amp)) ** 2
    else:
        overlap = np.vdot(psi, rho.mat @ psi).real
    return _radicand_sqrt(float(overlap), "<psi|rho|psi>")


def _psd_sqrt(mat: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(mat)
    if w[0] < -1e-8:
        raise NonPSDInput(f"minimum eigenvalue {w[0]:.3e} < -1e-8")
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.conj().T


def fidelity_general(rho: State, sigma: State) -> float:
    """Uhlmann fidelity tr sqrt(sqrt(rho) sigma sqrt(rho)).

    Pure inputs go through the overlap formula. Otherwise the trace norm of
    sqrt(rho) sqrt(sigma) is used, which avoids taking square roots of the
    round-off eigenvalues of a nearly singular product.
    """
    if rho.dim != sigma.dim:
        raise DimensionMismatch(f"dims {rho.dim} and {sigma.dim} differ")
    if isinstance(rho, StateVector):
        return fidelity_to_pure(rho, sigma)
    if isinstance(sigma, StateVector):
        return fidelity_to_pure(sigma, rho)
    sv = np.linalg.svd(_psd_sqrt(rho.mat) @ _psd_sqrt(sigma.mat), compute_uv=False)
    return min(float(np.sum(sv)), 1.0)


def fidelity_pauli_space(a, beta) -> float:
    """Fidelity from Pauli coordinates: sqrt(sum_j beta_j a_j / 2**n)."""
    a = np.asarray(a, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if a.shape != beta.shape or a.ndim != 1:
        raise LengthMismatch(f"coordinate arrays have shapes {a.shape} and {beta.shape}")
    n = _qubits_for_dim(int(round(math.sqrt(a.size)))) if a.size > 1 else 0
    if 4**n != a.size:
        raise LengthMismatch(f"length {a.size} is not a power of four")
    d = 1 << n
    if abs(float(a @ a) / d - 1.0) > 1e-9:
        raise ValueError("target coordinates do not describe a pure state")
    return math.sqrt(max(0.0, float(beta @ a) / d))


def as_density(state: State) -> DensityMatrix:
    return state.density() if isinstance(state, StateVector) else state


def householder_target_unitary(target: StateVector) -> Unitary:
    """Deterministic unitary whose first column is exactly ``target``.

    A Householder reflection maps e0 onto the phase-stripped target; the
    stripped phase is then multiplied back in.
    """
    t = target.amp
    d = t.size
    t0 = t[0]
    phase = t0 / abs(t0) if abs(t0) > 0 else 1.0 + 0j
    w = t * np.conj(phase)
    w[0] = abs(t0)
    v = -w
    v[0] += 1.0
    vv = float(np.vdot(v, v).real)
    if vv < 1e-300:
        H = np.eye(d, dtype=complex)
    else:
        H = np.eye(d, dtype=complex) - (2.0 / vv) * np.outer(v, v.conj())
        H[:, 0] = w  # exact reflection image of e0
    return Unitary(phase * H)


def transport(U: Unitary, s: State) -> State:
    if U.mat.shape[0] != s.dim:
        raise DimensionMismatch(f"unitary dim {U.mat.shape[0]} != state dim {s.dim}")
    if isinstance(s, StateVector):
        return StateVector(U.mat @ s.amp, check=False)
    return DensityMatrix(U.mat @ s.mat @ U.mat.conj().T, check=False)


# --- named states --------------------------------------------------------

_KET1 = {
    "0": np.array([1, 0], dtype=complex),
    "1": np.array([0, 1], dtype=complex),
    "+": np.array([1, 1], dtype=complex) / math.sqrt(2),
    "-": np.array([1, -1], dtype=complex) / math.sqrt(2),
}


def _product_ket(label: str) -> np.ndarray:
    out = np.ones(1, dtype=complex)
    for c in label:
        out = np.kron(out, _KET1[c])
    return out


def _ket_sum(terms, scale: float) -> StateVector:
    vec = sum(coef * _product_ket(label) for coef, label in terms)
    return StateVector(scale * vec)


def _weight_strings(n: int, w: int) -> list[str]:
    return [format(j, f"0{n}b") for j in range(1 << n) if bin(j).count("1") == w]


_CLUSTER = {
    4: ([(1, "0000"), (1, "0011"), (1, "1100"), (-1, "1111")], 0.5),
    5: ([(1, "+0+0+"), (1, "+0-1-"), (1, "-1-0+"), (1, "-1+1-")], 0.5),
}
_CRING5 = (
    [(1, "+0+00"), (1, "-0+01"), (1, "+0-10"), (-1, "-0-11"),
     (1, "-1-00"), (1, "+1-01"), (1, "-1+10"), (-1, "+1+11")],
    1 / (2 * math.sqrt(2)),
)
_C23 = ([(1, "+0++0+"), (1, "+0+-1-"), (1, "-1-+0+"), (-1, "-1--1-")], 0.5)

NAMED_STATES = ("Bell", "W", "GHZ", "Dicke", "Cluster", "CRing", "C23", "Basis0")


def named_state(kind: str, n: int | None = None) -> StateVector:
    """Standard benchmark states with the printed sign conventions.

    Supported combinations: Bell (n=2), W (2..8; the two-qubit W is the
    three-term state over 00, 01, 10), GHZ (2..8), Dicke with two excitations
    (4..6), Cluster (4, 5), CRing (5), C23 (6), Basis0 (1..8).
    """
    key = {k.lower(): k for k in NAMED_STATES}.get(str(kind).lower().replace("-", "").replace("_", ""))
    if key is None:
        raise UnsupportedState(f"unknown state kind {kind!r}")
    defaults = {"Bell": 2, "CRing": 5, "C23": 6}
    if n is None:
        n = defaults.get(key)
        if n is None:
            raise UnsupportedState(f"{key} requires an explicit qubit count")
    n = int(n)

    def bad():
        return UnsupportedState(f"{key} is not defined for n={n}")

    if key == "Basis0":
        if not 1 <= n <= MAX_QUBITS:
            raise bad()
        amp = np.zeros(1 << n, dtype=complex)
        amp[0] = 1.0
        return StateVector(amp)
    if key == "Bell":
        if n != 2:
            raise bad()
        return _ket_sum([(1, "00"), (1, "11")], 1 / math.sqrt(2))
    if key == "GHZ":
        if not 2 <= n <= MAX_QUBITS:
            raise bad()
        return _ket_sum([(1, "0" * n), (1, "1" * n)], 1 / math.sqrt(2))
    if key == "W":
        if n == 2:
            return _ket_sum([(1, "00"), (1, "01"), (1, "10")], 1 / math.sqrt(3))
        if not 3 <= n <= MAX_QUBITS:
            raise bad()
        return _ket_sum([(1, s) for s in _weight_strings(n, 1)], 1 / math.sqrt(n))
    if key == "Dicke":
        if n not in (4, 5, 6):
            raise bad()
        labels = _weight_strings(n, 2)
        return _ket_sum([(1, s) for s in labels], 1 / math.sqrt(len(labels)))
    if key == "Cluster":
        if n not in _CLUSTER:
            raise bad()
        return _ket_sum(*_CLUSTER[n])
    if key == "CRing":
        if n != 5:
            raise bad()
        return _ket_sum(*_CRING5)
    if n != 6:
        raise bad()
    return _ket_sum(*_C23)
