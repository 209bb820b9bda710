"""Local Pauli measurement settings, shot noise and marginal expectations.

Outcome index ``j`` of an n-qubit setting uses the same bit order as basis
states: bit ``n-1-q`` belongs to qubit ``q`` and is 0 for eigenvalue +1.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, ZeroTotal
from .quantum import PauliString, State, StateVector, walsh_hadamard
from .rng import RngStream, as_stream

DEFAULT_SHOTS = 10_000

_H = np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2)
_SDG = np.diag([1, -1j])
# maps the letter's eigenbasis onto the computational basis
_ROTATION = {"X": _H, "Y": _H @ _SDG, "Z": np.eye(2, dtype=complex)}


@dataclass(frozen=True, order=True)
class MeasurementSetting:
    letters: str

    def __post_init__(self):
        letters = self.letters.upper()
        if not letters or any(c not in "XYZ" for c in letters):
            raise ValueError(f"measurement setting must be a word over XYZ, got {self.letters!r}")
        object.__setattr__(self, "letters", letters)

    @property
    def n(self) -> int:
        return len(self.letters)

    @property
    def index(self) -> int:
        return PauliString(self.letters).index

    def sub_pauli(self, mask: int) -> PauliString:
        """Keep the letters whose outcome bit is set in ``mask``; I elsewhere."""
        n = self.n
        return PauliString(
            "".join(c if (mask >> (n - 1 - q)) & 1 else "I" for q, c in enumerate(self.letters))
        )

    def __str__(self):
        return self.letters


def as_setting(s: MeasurementSetting | str) -> MeasurementSetting:
    return s if isinstance(s, MeasurementSetting) else MeasurementSetting(s)


@dataclass(frozen=True, eq=False)
class OutcomeDistribution:
    setting: MeasurementSetting
    p: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        if p.size != 1 << self.setting.n:
            raise DimensionMismatch(f"expected {1 << self.setting.n} outcomes, got {p.size}")
        if np.any(p < -1e-12) or abs(p.sum() - 1.0) > 1e-10:
            raise ValueError("outcome probabilities must be nonnegative and sum to 1")
        p = np.clip(p, 0.0, None)
        p.setflags(write=False)
        object.__setattr__(self, "p", p)

    @property
    def frequencies(self) -> np.ndarray:
        return self.p


@dataclass(frozen=True, eq=False)
class CountVector:
    setting: MeasurementSetting
    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def frequencies(self) -> np.ndarray:
        tot = self.total
        if tot <= 0:
            raise ZeroTotal(f"no counts recorded for setting {self.setting}")
        return self.counts / tot


@functools.lru_cache(maxsize=512)
def rotation_matrix(letters: str) -> np.ndarray:
    out = np.ones((1, 1), dtype=complex)
    for c in letters:
        out = np.kron(out, _ROTATION[c])
    out.setflags(write=False)
    return out


def outcome_probabilities(state: State, setting: MeasurementSetting | str) -> OutcomeDistribution:
    setting = as_setting(setting)
    if state.n != setting.n:
        raise DimensionMismatch(f"state has {state.n} qubits, setting has {setting.n}")
    U = rotation_matrix(setting.letters)
    if isinstance(state, StateVector):
        p = np.abs(U @ state.amp) ** 2
    else:
        p = np.einsum("ja,ab,jb->j", U, state.mat, U.conj()).real
    p = np.clip(p, 0.0, None)
    return OutcomeDistribution(setting, p / p.sum())


def outcome_probabilities_batch(mats: np.ndarray, setting: MeasurementSetting | str) -> np.ndarray:
    """Vectorised form for a stack of density matrices, shape (R, d, d) -> (R, d)."""
    setting = as_setting(setting)
    U = rotation_matrix(setting.letters)
    p = np.einsum("ja,rab,jb->rj", U, mats, U.conj(), optimize=True).real
    p = np.clip(p, 0.0, None)
    return p / p.sum(axis=1, keepdims=True)


def sample_counts_poisson(dist: OutcomeDistribution, shots: int, rng: RngStream | int | None) -> CountVector:
    """Independent Poisson(N p_j) counts per outcome."""
    if shots < 1:
        raise ValueError("shots must be >= 1")
    rng = as_stream(rng)
    for _ in range(2):
        counts = rng.poisson(shots * dist.p)
        if counts.sum() > 0:
            return CountVector(dist.setting, counts.astype(np.int64))
    raise ZeroTotal(f"Poisson sampling produced no counts for setting {dist.setting}")


def subset_expectations(freqs: np.ndarray) -> np.ndarray:
    """Signed marginals for every qubit subset mask; entry 0 is the identity (sum of freqs)."""
    return walsh_hadamard(np.asarray(freqs, dtype=float), axis=-1)


def expectations_from_outcomes(freqs: CountVector | OutcomeDistribution) -> dict[PauliString, float]:
    """Expectations of all 2**n - 1 sub-Paulis of the measured setting."""
    p = freqs.frequencies
    vals = subset_expectations(p)
    setting = freqs.setting
    return {setting.sub_pauli(mask): float(vals[mask]) for mask in range(1, p.size)}
