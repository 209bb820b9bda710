"""Random states at a prescribed fidelity to |0...0>, plus ensemble diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import InfeasibleSpec, TooFewStates
from .quantum import (
    DensityMatrix,
    State,
    StateVector,
    Unitary,
    as_density,
    fidelity_general,
    transport,
)
from .rng import RngStream, as_stream

ZERO_WEIGHT = 1e-15


def _u(rng: RngStream) -> float:
    return float(rng.uniform())


# weight of the first Ginibre-like column; "E" means a pure state
M1_DISTRIBUTIONS: dict[str, Callable[[RngStream], float]] = {
    "A": lambda r: 1.0 - _u(r) * _u(r),
    "B": lambda r: 1.0 - math.sqrt(_u(r)) * _u(r),
    "C": lambda r: _u(r),
    "D": lambda r: min(abs(float(r.normal())), 1.0),
    "E": lambda r: 1.0,
    "F": lambda r: 1.0 - _u(r) * _u(r) * _u(r),
    "G": lambda r: 1.0 - _u(r) * _u(r) * _u(r) * _u(r),
    "H": lambda r: 1.0 - _u(r) ** 3,
    "I": lambda r: 1.0 - _u(r) * _u(r) ** 3,
}


@dataclass(frozen=True)
class GeneratorSpec:
    n: int
    f: float
    kind: str = "Mixed"
    m1_dist: str | float = "H"
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.f <= 1.0:
            raise ValueError(f"fidelity {self.f} outside [0, 1]")
        if self.kind not in ("Pure", "Mixed"):
            raise ValueError(f"kind must be Pure or Mixed, got {self.kind!r}")
        if self.m1_dist == "E" and self.kind != "Pure":
            raise ValueError("m1 distribution E describes pure states; use kind='Pure'")


def random_simplex(d: int, rng: RngStream, count: int | None = None) -> np.ndarray:
    """Uniform point(s) on the probability simplex via sorted-uniform gaps."""
    shape = (d - 1,) if count is None else (count, d - 1)
    r = np.sort(rng.uniform(size=shape), axis=-1)
    edge = np.zeros(shape[:-1] + (1,))
    return np.diff(np.concatenate((edge, r, edge + 1.0), axis=-1), axis=-1)


def random_ket(d: int, rng: RngStream, count: int | None = None) -> np.ndarray:
    """Random pure state amplitudes; the first amplitude is real and nonnegative."""
    p = np.sqrt(random_simplex(d, rng, count))
    shape = p.shape[:-1] + (d - 1,)
    ph = np.exp(1j * rng.uniform(0.0, 2 * np.pi, size=shape))
    one = np.ones(shape[:-1] + (1,), dtype=complex)
    return p * np.concatenate((one, ph), axis=-1)


def gen_pure_with_fidelity(n: int, f: float, rng: RngStream) -> StateVector:
    if not 0.0 <= f <= 1.0:
        raise ValueError(f"fidelity {f} outside [0, 1]")
    d = 1 << n
    amp = np.empty(d, dtype=complex)
    amp[0] = f
    amp[1:] = math.sqrt(1.0 - f * f) * random_ket(d - 1, rng)
    return StateVector(amp, check=False)


def draw_m1(m1_dist: str | float, rng: RngStream) -> float:
    if isinstance(m1_dist, str):
        try:
            return M1_DISTRIBUTIONS[m1_dist](rng)
        except KeyError:
            raise ValueError(f"unknown m1 distribution {m1_dist!r}") from None
    m1 = float(m1_dist)
    if not 0.0 < m1 <= 1.0:
        raise ValueError(f"constant m1 must lie in (0, 1], got {m1}")
    return m1


def column_weights(d: int, m1: float, rng: RngStream) -> np.ndarray:
    """m1 followed by 1 - m1 split proportionally to squared standard normals."""
    g = rng.normal(size=d - 1) ** 2
    rest = (1.0 - m1) * g / g.sum() if d > 1 else g
    return np.concatenate(([m1], rest))


def _solve_overlaps(f: float, m: np.ndarray, rng: RngStream) -> np.ndarray:
    """Sequentially draw x_b in [0, 1] with sum_b m_b x_b^2 = f^2.

    Each x_b is uniform over the interval that keeps the remaining columns
    able to absorb the residual; the last active column takes the rest exactly.
    """
    x = np.zeros(m.size)
    active = np.flatnonzero(m >= ZERO_WEIGHT)
    residual = f * f
    # mass still available after each active column
    after = np.concatenate((np.cumsum(m[active][::-1])[::-1][1:], [0.0]))
    for pos, b in enumerate(active):
        mb = m[b]
        if pos == active.size - 1:
            x2 = min(max(residual / mb, 0.0), 1.0)
            x[b] = math.sqrt(x2)
        else:
            lo = min(max((residual - after[pos]) / mb, 0.0), 1.0)
            hi = min(max(residual / mb, 0.0), 1.0)
            lo = min(lo, hi)
            x[b] = float(rng.uniform(math.sqrt(lo), math.sqrt(hi)))
        residual -= mb * x[b] ** 2
    if abs(residual) > 1e-9:
        raise InfeasibleSpec(f"overlap constraints left residual {residual:.3e}")
    return x


def gen_mixed_with_fidelity(
    n: int, f: float, m1_dist: str | float, rng: RngStream
) -> DensityMatrix:
    if not 0.0 <= f <= 1.0:
        raise ValueError(f"fidelity {f} outside [0, 1]")
    d = 1 << n
    m = column_weights(d, draw_m1(m1_dist, rng), rng)
    x = _solve_overlaps(f, m, rng)
    theta = rng.uniform(0.0, 2 * np.pi, size=(d, 2))
    phi = random_ket(d - 1, rng, count=d)
    x = np.where(m >= ZERO_WEIGHT, x, 0.0)
    G = np.empty((d, d), dtype=complex)
    G[0, :] = x * np.exp(1j * theta[:, 0])
    G[1:, :] = (np.sqrt(np.clip(1.0 - x**2, 0.0, None)) * np.exp(1j * theta[:, 1]) * phi.T)
    G *= np.sqrt(np.where(m >= ZERO_WEIGHT, m, 0.0))
    rho = G @ G.conj().T
    rho = (rho + rho.conj().T) / 2
    return DensityMatrix(rho / np.trace(rho).real, check=False)


def generate(spec: GeneratorSpec, rng: RngStream | None = None) -> State:
    rng = as_stream(rng, spec.seed)
    if spec.kind == "Pure" or spec.m1_dist == "E":
        return gen_pure_with_fidelity(spec.n, spec.f, rng)
    return gen_mixed_with_fidelity(spec.n, spec.f, spec.m1_dist, rng)


def transport_state(U: Unitary, s: State) -> State:
    return transport(U, s)


def purity(rho: State) -> float:
    if isinstance(rho, StateVector):
        return float(np.vdot(rho.amp, rho.amp).real ** 2)
    return float(np.sum(np.abs(rho.mat) ** 2))


@dataclass
class UniformityReport:
    anchors: list[int]
    edges: np.ndarray
    counts: list[np.ndarray]
    fidelities: list[np.ndarray] = field(repr=False)

    def rows(self):
        for a, c in zip(self.anchors, self.counts):
            for lo, hi, cnt in zip(self.edges[:-1], self.edges[1:], c):
                yield {"anchor": a, "bin_lo": float(lo), "bin_hi": float(hi), "count": int(cnt)}


def _fidelities_to(anchor: State, others: Sequence[State]) -> np.ndarray:
    if isinstance(anchor, StateVector) and all(isinstance(s, StateVector) for s in others):
        amps = np.stack([s.amp for s in others])
        return np.clip(np.abs(amps.conj() @ anchor.amp), 0.0, 1.0)
    return np.array([fidelity_general(as_density(anchor), as_density(s)) for s in others])


def uniformity_report(
    states: Sequence[State], anchors: int, bins: int, rng: RngStream | int | None = None
) -> UniformityReport:
    """Histograms of fidelities from randomly chosen anchor states to all others."""
    if len(states) < anchors + 1:
        raise TooFewStates(f"need at least {anchors + 1} states, got {len(states)}")
    n = states[0].n
    if any(s.n != n or type(s) is not type(states[0]) for s in states):
        raise ValueError("all states must share qubit count and kind")
    rng = as_stream(rng)
    picks = sorted(int(i) for i in rng.choice(len(states), size=anchors, replace=False))
    edges = np.linspace(0.0, 1.0, bins + 1)
    counts, fids = [], []
    for a in picks:
        others = [s for i, s in enumerate(states) if i != a]
        fv = _fidelities_to(states[a], others)
        fids.append(fv)
        counts.append(np.histogram(fv, bins=edges)[0])
    return UniformityReport(picks, edges, counts, fids)


@dataclass
class PurityReport:
    f: float
    edges: np.ndarray
    histograms: dict[str, np.ndarray]
    purities: dict[str, np.ndarray] = field(repr=False)

    def mean(self, dist) -> float:
        return float(np.mean(self.purities[str(dist)]))

    def rows(self):
        for dist, h in self.histograms.items():
            for lo, hi, cnt in zip(self.edges[:-1], self.edges[1:], h):
                yield {"m1_dist": dist, "bin_lo": float(lo), "bin_hi": float(hi), "count": int(cnt)}


def purity_report(
    n: int,
    f: float,
    distributions: Sequence[str | float] = tuple(M1_DISTRIBUTIONS),
    count: int = 1220,
    rng: RngStream | int | None = None,
    bins: int = 20,
) -> PurityReport:
    """Purity histograms per m1 distribution at fixed fidelity."""
    if count < 100:
        raise ValueError("purity report needs at least 100 states per distribution")
    rng = as_stream(rng)
    edges = np.linspace(1.0 / (1 << n), 1.0, bins + 1)
    hists, purities = {}, {}
    for di, dist in enumerate(distributions):
        vals = np.empty(count)
        for i in range(count):
            r = rng.child(di, i)
            s = gen_pure_with_fidelity(n, f, r) if dist == "E" else gen_mixed_with_fidelity(n, f, dist, r)
            vals[i] = purity(s)
        key = str(dist)
        purities[key] = vals
        hists[key] = np.histogram(np.clip(vals, edges[0], edges[-1]), bins=edges)[0]
    return PurityReport(f, edges, hists, purities)
