"""Choosing which local measurement settings feed the network."""

from __future__ import annotations

import functools
import itertools
import json
from dataclasses import dataclass, field
from importlib import resources
from math import comb

import numpy as np

from .errors import KOutOfRange
from .measurement import MeasurementSetting, as_setting
from .quantum import PauliString, StateVector, all_pauli_expectations

STRATEGIES = ("GreedyCoverage", "TopAbsExpectation")


@dataclass
class SettingPlan:
    target_id: str
    strategy: str
    settings: list[MeasurementSetting]
    captured_weight: list[float] = field(default_factory=list)

    @property
    def k(self) -> int:
        return len(self.settings)

    def prefix(self, k: int) -> "SettingPlan":
        if not 1 <= k <= self.k:
            raise KOutOfRange(f"plan has {self.k} settings, cannot take prefix {k}")
        return SettingPlan(self.target_id, self.strategy, self.settings[:k], self.captured_weight[:k])

    def to_dict(self) -> dict:
        return {
            "target_id": self.target_id,
            "strategy": self.strategy,
            "settings": [s.letters for s in self.settings],
            "captured_weight": [float(w) for w in self.captured_weight],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SettingPlan":
        return cls(d["target_id"], d["strategy"], [MeasurementSetting(s) for s in d["settings"]],
                   list(d.get("captured_weight", [])))


def pauli_weights(target: StateVector) -> np.ndarray:
    """Squared characteristic function, indexed by canonical Pauli index (identity included)."""
    return all_pauli_expectations(target) ** 2


def pauli_weight_map(target: StateVector) -> dict[PauliString, float]:
    w = pauli_weights(target)
    n = target.n
    return {PauliString.from_index(i, n): float(w[i]) for i in range(1, w.size)}


@functools.lru_cache(maxsize=None)
def all_settings(n: int) -> tuple[MeasurementSetting, ...]:
    """Every setting in {X,Y,Z}^n, in canonical index order."""
    return tuple(MeasurementSetting("".join(t)) for t in itertools.product("XYZ", repeat=n))


@functools.lru_cache(maxsize=None)
def _sub_pauli_indices(n: int) -> np.ndarray:
    """[setting, mask-1] -> canonical index of the sub-Pauli (masks 1..2**n-1)."""
    settings = all_settings(n)
    out = np.empty((len(settings), (1 << n) - 1), dtype=np.int64)
    for si, s in enumerate(settings):
        for mask in range(1, 1 << n):
            out[si, mask - 1] = s.sub_pauli(mask).index
    return out


def select_settings(
    target: StateVector, k: int, strategy: str = "GreedyCoverage", target_id: str = "target"
) -> SettingPlan:
    """Rank measurement settings for ``target`` and keep the first ``k``.

    GreedyCoverage repeatedly takes the setting whose not-yet-covered
    sub-Paulis carry the most weight. TopAbsExpectation ranks full-weight
    strings by |expectation|. Ties go to the lower canonical index.
    """
    n = target.n
    if not 1 <= k <= 3**n:
        raise KOutOfRange(f"k must lie in [1, {3**n}], got {k}")
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; choose from {STRATEGIES}")
    weights = pauli_weights(target)
    settings = all_settings(n)
    subs = _sub_pauli_indices(n)
    covered = np.zeros(weights.size, dtype=bool)
    covered[0] = True
    chosen: list[int] = []
    captured: list[float] = []
    total = 0.0
    if strategy == "GreedyCoverage":
        avail = np.ones(len(settings), dtype=bool)
        for _ in range(k):
            gain = np.where(covered[subs], 0.0, weights[subs]).sum(axis=1)
            gain[~avail] = -1.0
            best = int(np.argmax(gain))  # first maximum = lowest index
            avail[best] = False
            chosen.append(best)
            covered[subs[best]] = True
            total = float(weights[covered].sum() - weights[0])
            captured.append(total)
    else:
        full = np.array([s.index for s in settings])
        absval = np.sqrt(weights[full])
        order = sorted(range(len(settings)), key=lambda i: (-round(absval[i], 12), i))
        for best in order[:k]:
            chosen.append(best)
            covered[subs[best]] = True
            total = float(weights[covered].sum() - weights[0])
            captured.append(total)
    return SettingPlan(target_id, strategy, [settings[i] for i in chosen], captured)


def filter_feature_paulis(
    setting: MeasurementSetting | str, max_identities: int = 4, include_identity: bool = False
) -> list[PauliString]:
    """Sub-Paulis of ``setting`` with at most ``max_identities`` identity letters.

    Ordered by outcome subset mask, so the result lines up with
    :func:`nnfidelity.measurement.subset_expectations`.
    """
    setting = as_setting(setting)
    n = setting.n
    if not 0 <= max_identities <= n:
        raise ValueError(f"max_identities must lie in [0, {n}]")
    masks = feature_masks(n, max_identities, include_identity)
    return [setting.sub_pauli(m) for m in masks]


@functools.lru_cache(maxsize=None)
def feature_masks(n: int, max_identities: int, include_identity: bool = False) -> tuple[int, ...]:
    start = 0 if include_identity and max_identities >= n else 1
    return tuple(m for m in range(start, 1 << n) if n - bin(m).count("1") <= max_identities)


def feature_count(n: int, max_identities: int = 4) -> int:
    """Closed form sum_{i<=max_identities} C(n, i) (identity string included when i reaches n)."""
    return sum(comb(n, i) for i in range(0, min(max_identities, n) + 1))


@functools.lru_cache(maxsize=1)
def published_plans() -> dict[str, list[str]]:
    """Setting lists reported for the benchmark states, kept for side-by-side reports."""
    text = resources.files("nnfidelity").joinpath("data/published_plans.json").read_text()
    return json.loads(text)


def fixture_comparison(target: StateVector, target_key: str, plan: SettingPlan) -> dict | None:
    """Captured weight of the published list next to ours, or None when no fixture exists."""
    fixture = published_plans().get(target_key)
    if fixture is None:
        return None
    weights = pauli_weights(target)
    subs = _sub_pauli_indices(target.n)
    index = {s.letters: i for i, s in enumerate(all_settings(target.n))}
    covered = np.zeros(weights.size, dtype=bool)
    covered[0] = True
    theirs = []
    for letters in fixture[: plan.k]:
        covered[subs[index[letters]]] = True
        theirs.append(float(weights[covered].sum() - weights[0]))
    return {
        "fixture": fixture[: plan.k],
        "fixture_captured_weight": theirs,
        "ours": [s.letters for s in plan.settings],
        "ours_captured_weight": list(plan.captured_weight),
    }
