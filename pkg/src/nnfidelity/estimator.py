"""Calibrated fidelity estimates, adaptive threshold certification and the DFE/QST baselines."""

from __future__ import annotations

import enum
import json
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .dataset import Dataset, FeatureSpec, sha256_json
from .errors import DegenerateWeight, IoError, LayoutMismatch, MissingModel, SchemaMismatch
from .measurement import (
    MeasurementSetting,
    outcome_probabilities_batch,
)
from .nn import MLPModel, TrainConfig, load_model, predict_fidelity, save_model, train_on
from .quantum import ROUNDOFF, State, StateVector, all_pauli_expectations, as_density
from .rng import RngStream, as_stream
from .selection import SettingPlan

log = logging.getLogger(__name__)

CALIB_SCHEMA = 1
REGISTRY_SCHEMA = 1
BAND_WIDTH = 0.05
MIN_BAND_SAMPLES = 50
DEFAULT_DELTAS = (0.01, 0.05, 0.1, 0.2, 0.5)
# interval ends within round-off of the threshold count as touching it
BOUNDARY_TOL = 1e-12


def conservative_quantile(errors: np.ndarray, delta: float) -> float:
    """The ceil((m+1)(1-delta))-th smallest error, or 1.0 when that order statistic does not exist."""
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    m = errors.size
    rank = math.ceil((m + 1) * (1.0 - delta) - 1e-12)
    if m == 0 or rank > m:
        # |F~ - F| never exceeds 1, so this is the trivial valid bound
        return 1.0
    return float(np.sort(errors)[rank - 1])


@dataclass
class CalibrationTable:
    model_id: str
    band_edges: np.ndarray
    deltas: tuple[float, ...]
    epsilon: np.ndarray  # (bands, deltas)
    counts: np.ndarray
    min_samples: int = MIN_BAND_SAMPLES

    @property
    def reliable(self) -> np.ndarray:
        return self.counts >= self.min_samples

    def band_of(self, f: float) -> int:
        return int(np.clip(np.searchsorted(self.band_edges, f, side="right") - 1, 0, self.counts.size - 1))

    def eps(self, f_hat: float, delta: float) -> float:
        try:
            j = self.deltas.index(delta)
        except ValueError:
            raise ValueError(f"delta {delta} not calibrated; available {self.deltas}") from None
        return float(self.epsilon[self.band_of(f_hat), j])

    def mean_eps(self, delta: float, reliable_only: bool = True) -> float:
        j = self.deltas.index(delta)
        col = self.epsilon[:, j]
        col = col[self.reliable] if reliable_only else col
        return float(np.mean(col)) if col.size else float("nan")

    def to_dict(self) -> dict:
        return {
            "schema_version": CALIB_SCHEMA,
            "model_id": self.model_id,
            "band_edges": [float(e) for e in self.band_edges],
            "deltas": list(self.deltas),
            "epsilon": self.epsilon.tolist(),
            "counts": [int(c) for c in self.counts],
            "min_samples": self.min_samples,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CalibrationTable":
        if d.get("schema_version") != CALIB_SCHEMA:
            raise SchemaMismatch(f"unsupported calibration schema {d.get('schema_version')!r}")
        return cls(d["model_id"], np.array(d["band_edges"]), tuple(d["deltas"]), np.array(d["epsilon"], dtype=float),
                   np.array(d["counts"], dtype=np.int64), d.get("min_samples", MIN_BAND_SAMPLES))

    def rows(self):
        for b in range(self.counts.size):
            for j, delta in enumerate(self.deltas):
                yield {"band_lo": float(self.band_edges[b]), "band_hi": float(self.band_edges[b + 1]),
                       "delta": delta, "epsilon": float(self.epsilon[b, j]), "count": int(self.counts[b]),
                       "reliable": bool(self.reliable[b])}


def model_id(model: MLPModel) -> str:
    return sha256_json({"sizes": model.sizes, "layout": model.layout_hash, "binning": model.binning_id,
                        "w0": float(model.weights[0].ravel()[0])})[:16]


def calibrate(
    model: MLPModel,
    X: np.ndarray,
    f_true: np.ndarray,
    deltas: Sequence[float] = DEFAULT_DELTAS,
    band_width: float = BAND_WIDTH,
    min_samples: int = MIN_BAND_SAMPLES,
) -> CalibrationTable:
    """Per true-fidelity band, the (1 - delta) order-statistic quantile of |F~ - F|."""
    deltas = tuple(sorted(float(d) for d in deltas))
    nb = round(1.0 / band_width)
    edges = np.linspace(0.0, 1.0, nb + 1)
    f_true = np.asarray(f_true, dtype=float)
    err = np.abs(predict_fidelity(model, X) - f_true)
    band = np.clip(np.searchsorted(edges, f_true, side="right") - 1, 0, nb - 1)
    eps = np.ones((nb, len(deltas)))
    counts = np.bincount(band, minlength=nb)
    for b in range(nb):
        e = err[band == b]
        for j, d in enumerate(deltas):
            eps[b, j] = conservative_quantile(e, d)
    thin = [f"[{edges[b]:.2f}, {edges[b + 1]:.2f}): {counts[b]}" for b in range(nb) if 0 < counts[b] < min_samples]
    if thin:
        log.warning("%d bands below %d samples, flagged unreliable (%s)", len(thin), min_samples, "; ".join(thin))
    return CalibrationTable(model_id(model), edges, deltas, eps, counts, min_samples)


def calibration_path(model_path: str | Path) -> Path:
    p = Path(model_path)
    name = p.name.removesuffix(".model.json").removesuffix(".json")
    return p.with_name(name + ".calib.json")


def save_calibration(table: CalibrationTable, path: str | Path, force: bool = False) -> Path:
    path = Path(path)
    if path.exists() and not force:
        raise FileExistsError(f"{path} already exists")
    path.write_text(json.dumps(table.to_dict(), indent=1), encoding="utf-8")
    return path


def load_calibration(path: str | Path) -> CalibrationTable:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise IoError(f"cannot read calibration {path}: {exc}") from exc
    return CalibrationTable.from_dict(doc)


@dataclass
class RegistryEntry:
    model: MLPModel
    calibration: CalibrationTable
    model_path: str = ""
    calibration_path: str = ""


@dataclass
class TargetModels:
    plan: SettingPlan
    feature_spec: FeatureSpec
    binning_id: str
    entries: dict[int, RegistryEntry] = field(default_factory=dict)


class ModelRegistry:
    """Trained models and calibrations keyed by target id and number of settings."""

    def __init__(self):
        self.targets: dict[str, TargetModels] = {}

    def add(self, target_id: str, k: int, model: MLPModel, calibration: CalibrationTable,
            plan: SettingPlan, feature_spec: FeatureSpec) -> None:
        tm = self.targets.get(target_id)
        if tm is None:
            tm = self.targets[target_id] = TargetModels(plan, feature_spec, model.binning_id)
        elif [s.letters for s in plan.settings[:k]] != [s.letters for s in tm.plan.settings[:k]]:
            raise LayoutMismatch(f"plan for k={k} is not a prefix of the registered plan")
        elif plan.k > tm.plan.k:
            tm.plan, tm.feature_spec = plan, feature_spec
        if model.layout_hash != tm.feature_spec.prefix(k).layout_hash:
            raise LayoutMismatch(f"model for k={k} was trained on a different feature layout")
        tm.entries[k] = RegistryEntry(model, calibration)

    def get(self, target_id: str, k: int) -> tuple[RegistryEntry, FeatureSpec]:
        tm = self.targets.get(target_id)
        if tm is None or k not in tm.entries:
            raise MissingModel(f"no model registered for target {target_id!r} with k={k}")
        return tm.entries[k], tm.feature_spec.prefix(k)

    def ks(self, target_id: str) -> list[int]:
        if target_id not in self.targets:
            raise MissingModel(f"unknown target {target_id!r}")
        return sorted(self.targets[target_id].entries)

    def save(self, directory: str | Path, force: bool = False) -> Path:
        root = Path(directory)
        root.mkdir(parents=True, exist_ok=True)
        index = root / "registry.json"
        if index.exists() and not force:
            raise FileExistsError(f"{index} already exists")
        doc = {"schema_version": REGISTRY_SCHEMA, "targets": {}}
        for tid, tm in self.targets.items():
            models = {}
            for k, e in sorted(tm.entries.items()):
                mp = root / f"{tid}-k{k}.model.json"
                save_model(e.model, mp, force=force)
                cp = save_calibration(e.calibration, calibration_path(mp), force=force)
                e.model_path, e.calibration_path = mp.name, cp.name
                models[str(k)] = {"model": mp.name, "calibration": cp.name}
            doc["targets"][tid] = {"plan": tm.plan.to_dict(), "feature_spec": tm.feature_spec.to_dict(),
                                   "binning_id": tm.binning_id, "models": models}
        index.write_text(json.dumps(doc, indent=1), encoding="utf-8")
        return index

    @classmethod
    def load(cls, directory: str | Path) -> "ModelRegistry":
        root = Path(directory)
        try:
            doc = json.loads((root / "registry.json").read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise IoError(f"cannot read registry in {root}: {exc}") from exc
        if doc.get("schema_version") != REGISTRY_SCHEMA:
            raise SchemaMismatch("unsupported registry schema")
        reg = cls()
        for tid, t in doc["targets"].items():
            plan = SettingPlan.from_dict(t["plan"])
            spec = FeatureSpec.from_dict(t["feature_spec"])
            for k, paths in sorted(t["models"].items(), key=lambda kv: int(kv[0])):
                model = load_model(root / paths["model"])
                table = load_calibration(root / paths["calibration"])
                reg.add(tid, int(k), model, table, plan, spec)
                e = reg.targets[tid].entries[int(k)]
                e.model_path, e.calibration_path = paths["model"], paths["calibration"]
        return reg


def build_registry(
    dataset: Dataset,
    ks: Sequence[int],
    config: TrainConfig,
    target_id: str | None = None,
    deltas: Sequence[float] = DEFAULT_DELTAS,
    registry: ModelRegistry | None = None,
) -> ModelRegistry:
    """Train and calibrate one model per k, calibrating on the dataset's validation split."""
    registry = registry or ModelRegistry()
    plan = SettingPlan.from_dict(dataset.manifest["plan"])
    target_id = target_id or plan.target_id
    spec = dataset.feature_spec
    for k in ks:
        sub = dataset.with_settings(k)
        model, _ = train_on(sub, config)
        table = calibrate(model, sub.val.X, sub.val.f, deltas)
        registry.add(target_id, k, model, table, plan, spec)
    return registry


@dataclass
class Estimate:
    f_hat: float
    epsilon: float
    delta: float
    k: int
    reliable: bool


def estimate(registry: ModelRegistry, target_id: str, features: np.ndarray, k: int, delta: float,
             layout_hash: str | None = None) -> Estimate:
    """Point estimate (arg-max bin midpoint) and calibrated half-width for one feature vector."""
    entry, spec = registry.get(target_id, k)
    if layout_hash is not None and layout_hash != spec.layout_hash:
        raise LayoutMismatch("measurement features were assembled for a different layout")
    features = np.asarray(features, dtype=float)
    if features.shape != (len(spec.layout),):
        raise LayoutMismatch(f"expected {len(spec.layout)} features for k={k}, got shape {features.shape}")
    f_hat = float(predict_fidelity(entry.model, features))
    cal = entry.calibration
    return Estimate(f_hat, cal.eps(f_hat, delta), delta, k, bool(cal.reliable[cal.band_of(f_hat)]))


class StateMeasurer:
    """Simulated device for one state: measures settings on demand and keeps the results."""

    def __init__(self, state: State, shots: int | None, rng: RngStream | int | None = None):
        self.rho = as_density(state).mat
        self.shots = shots
        self.rng = as_stream(rng)
        self._freqs: dict[str, np.ndarray] = {}

    @property
    def measured(self) -> list[str]:
        return list(self._freqs)

    def frequencies(self, setting: MeasurementSetting) -> np.ndarray:
        key = setting.letters
        if key not in self._freqs:
            p = outcome_probabilities_batch(self.rho[None], setting)[0]
            if self.shots is None:
                self._freqs[key] = p
            else:
                r = self.rng.child(setting.index)
                counts = r.poisson(self.shots * p)
                if counts.sum() == 0:
                    counts = r.poisson(self.shots * p)
                tot = counts.sum()
                self._freqs[key] = counts / tot if tot else np.full(p.size, 1.0 / p.size)
        return self._freqs[key]

    def features(self, spec: FeatureSpec) -> np.ndarray:
        freqs = np.stack([self.frequencies(s) for s in spec.settings])
        return spec.assemble(freqs)


class Verdict(str, enum.Enum):
    EXCEEDS = "Exceeds"
    DOES_NOT_EXCEED = "DoesNotExceed"
    UNDETERMINED = "Undetermined"


@dataclass
class Decision:
    verdict: Verdict
    k: int
    f_hat: float
    epsilon: float
    delta: float
    threshold: float
    transcript: list[dict]

    def consistent(self) -> bool:
        """Verdict agrees with the recorded final interval."""
        lo, hi = self.f_hat - self.epsilon, self.f_hat + self.epsilon
        if self.verdict is Verdict.EXCEEDS:
            return lo >= self.threshold - BOUNDARY_TOL
        if self.verdict is Verdict.DOES_NOT_EXCEED:
            return hi <= self.threshold + BOUNDARY_TOL or bool(self.transcript[-1].get("tie_rule"))
        return True

    def transcript_jsonl(self) -> str:
        return "".join(json.dumps(r) + "\n" for r in self.transcript)


def decide(f_hat: float, eps: float, threshold: float, epsilon_target: float) -> tuple[Verdict | None, bool]:
    """One round of the decision rule; returns (verdict or None to continue, tie rule used).

    An interval whose lower end sits on the threshold counts as exceeding it,
    so 0.97 +- 0.01 clears 0.96.
    """
    if f_hat - eps >= threshold - BOUNDARY_TOL:
        return Verdict.EXCEEDS, False
    if f_hat + eps <= threshold + BOUNDARY_TOL:
        return Verdict.DOES_NOT_EXCEED, False
    if eps <= epsilon_target:
        # interval straddles the threshold at the requested precision: rejected
        return Verdict.DOES_NOT_EXCEED, True
    return None, False


def run_certification(
    round_fn: Callable[[int], tuple[float, float, dict]],
    threshold: float,
    delta: float,
    epsilon_target: float,
    k_min: int,
    k_max: int,
) -> Decision:
    """Sequential loop over k; ``round_fn(k)`` returns (F~, eps, extra transcript fields)."""
    if not 1 <= k_min <= k_max:
        raise ValueError("need 1 <= k_min <= k_max")
    transcript: list[dict] = []
    f_hat = eps = float("nan")
    for k in range(k_min, k_max + 1):
        f_hat, eps, extra = round_fn(k)
        verdict, tie = decide(f_hat, eps, threshold, epsilon_target)
        transcript.append({"round": len(transcript) + 1, "k": k, **extra, "f_hat": f_hat, "epsilon": eps,
                           "delta": delta, "threshold": threshold,
                           "outcome": verdict.value if verdict else "continue", "tie_rule": tie})
        if verdict is not None:
            return Decision(verdict, k, f_hat, eps, delta, threshold, transcript)
    return Decision(Verdict.UNDETERMINED, k_max, f_hat, eps, delta, threshold, transcript)


def adaptive_certify(
    registry: ModelRegistry,
    target_id: str,
    measurer: StateMeasurer,
    threshold: float,
    delta: float = 0.05,
    epsilon_target: float = 0.01,
    k_min: int | None = None,
    k_max: int | None = None,
) -> Decision:
    """Add one measurement setting per round until the threshold question is settled."""
    ks = registry.ks(target_id)
    k_min = ks[0] if k_min is None else k_min
    k_max = ks[-1] if k_max is None else k_max
    missing = [k for k in range(k_min, k_max + 1) if k not in ks]
    if missing:
        raise MissingModel(f"registry lacks k={missing} for target {target_id!r}")

    def round_fn(k: int):
        entry, spec = registry.get(target_id, k)
        before = set(measurer.measured)
        x = measurer.features(spec)
        new = [s.letters for s in spec.settings if s.letters not in before]
        est = estimate(registry, target_id, x, k, delta, spec.layout_hash)
        return est.f_hat, est.epsilon, {"new_settings": new, "band_reliable": est.reliable}

    return run_certification(round_fn, threshold, delta, epsilon_target, k_min, k_max)


# baselines

def dfe_ell(epsilon: float, delta: float) -> int:
    """Number of sampled Pauli operators, ceil(8 / (epsilon^2 delta)), computed exactly."""
    if not (0 < epsilon < 1 and 0 < delta < 1):
        raise ValueError("epsilon and delta must lie in (0, 1)")
    e, d = Fraction(str(epsilon)), Fraction(str(delta))
    return math.ceil(Fraction(8) / (e * e * d))


def qst_settings_count(n: int) -> int:
    if n < 1:
        raise ValueError("n must be >= 1")
    return 3**n


@dataclass
class DFEResult:
    f_hat: float
    f2_hat: float
    ell: int
    ell_requested: int
    capped: bool
    resampled: int
    gammas: np.ndarray = field(repr=False)


def dfe_baseline(
    target: StateVector,
    state: State,
    epsilon: float,
    delta: float,
    rng: RngStream | int | None = None,
    cap: int | None = None,
    shots: int | None = None,
) -> DFEResult:
    """Importance-sampled estimate of F^2 from ratios of Pauli expectations.

    ``shots=None`` evaluates each sampled expectation exactly; otherwise each
    sampled Pauli is measured with Poisson(shots) total counts.
    """
    rng = as_stream(rng)
    if target.n != state.n:
        raise ValueError("target and state qubit counts differ")
    requested = dfe_ell(epsilon, delta)
    ell = requested if cap is None else min(requested, int(cap))
    a = all_pauli_expectations(target)
    d = a.size ** 0.5
    p = a * a / d
    p = p / p.sum()
    beta = all_pauli_expectations(state)
    idx = rng.child(0).choice(a.size, size=ell, p=p)
    resampled = 0
    bad = np.abs(a[idx]) < ROUNDOFF
    while bad.any():
        resampled += int(bad.sum())
        if resampled > 100 * ell:
            raise DegenerateWeight("sampling keeps hitting vanishing target weights")
        idx[bad] = rng.child(1, resampled).choice(a.size, size=int(bad.sum()), p=p)
        bad = np.abs(a[idx]) < ROUNDOFF
    b = beta[idx]
    if shots is not None:
        # the +1/-1 outcome counts of a Pauli are independent Poisson draws
        r = rng.child(2)
        plus = r.poisson(shots * (1 + b) / 2)
        minus = r.poisson(shots * (1 - b) / 2)
        tot = plus + minus
        b = np.where(tot > 0, (plus - minus) / np.maximum(tot, 1), 0.0)
    gam = b / a[idx]
    f2 = float(np.mean(gam))
    return DFEResult(math.sqrt(max(0.0, f2)), f2, ell, requested, ell < requested, resampled, gam)
