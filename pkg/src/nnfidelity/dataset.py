"""Fidelity bins, feature layouts and labelled datasets on disk.

A dataset is a pair of files: ``<name>.manifest.json`` describing how it was
built, and ``<name>.csv`` with one row per record (feature columns in layout
order, then ``label``, ``true_fidelity``, ``seed``). Training rows come first,
validation rows after them.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import BadEdges, CorruptRecord, IoError, SchemaMismatch
from .measurement import DEFAULT_SHOTS, MeasurementSetting, outcome_probabilities_batch, subset_expectations
from .quantum import StateVector, householder_target_unitary
from .rng import RngStream
from .selection import SettingPlan, feature_masks
from .states import gen_mixed_with_fidelity, gen_pure_with_fidelity

SCHEMA_VERSION = 1
MODES = ("PauliExpectations", "OutcomeProbs")

# (coarse intervals on [0, 0.55), fine intervals on [0.55, 1])
PRESETS = {"L66": (11, 55), "L122": (22, 100), "L234": (34, 200)}
BAND_SPLIT = 0.55


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def sha256_json(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


@dataclass(frozen=True, eq=False)
class BinningScheme:
    id: str
    edges: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.edges, dtype=float)
        if e.ndim != 1 or e.size < 2 or e[0] != 0.0 or e[-1] != 1.0 or np.any(np.diff(e) <= 0):
            raise BadEdges("edges must be strictly increasing from 0 to 1")
        e.setflags(write=False)
        object.__setattr__(self, "edges", e)

    @property
    def count(self) -> int:
        return self.edges.size - 1

    @property
    def midpoints(self) -> np.ndarray:
        return (self.edges[:-1] + self.edges[1:]) / 2

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    def bin_of(self, f):
        """Half-open bins [e_i, e_{i+1}); 1.0 falls in the last bin."""
        f = np.asarray(f, dtype=float)
        if np.any((f < 0) | (f > 1)) or np.any(~np.isfinite(f)):
            raise ValueError("fidelity outside [0, 1]")
        idx = np.searchsorted(self.edges, f, side="right") - 1
        idx = np.minimum(idx, self.count - 1)
        return int(idx) if idx.ndim == 0 else idx

    def to_dict(self) -> dict:
        return {"id": self.id, "edges": [float(x) for x in self.edges]}


def make_binning(preset: str | Sequence[float] = "L122") -> BinningScheme:
    if isinstance(preset, str):
        if preset not in PRESETS:
            raise BadEdges(f"unknown binning preset {preset!r}; choose from {sorted(PRESETS)}")
        coarse, fine = PRESETS[preset]
        edges = np.concatenate((np.linspace(0.0, BAND_SPLIT, coarse + 1),
                                np.linspace(BAND_SPLIT, 1.0, fine + 1)[1:]))
        return BinningScheme(preset, edges)
    edges = np.asarray(preset, dtype=float)
    return BinningScheme(f"custom-{sha256_json([float(x) for x in edges])[:12]}", edges)


@dataclass(frozen=True)
class FeatureSpec:
    mode: str
    settings: tuple[MeasurementSetting, ...]
    n: int
    max_identities: int = 4
    shots: int | None = DEFAULT_SHOTS

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        object.__setattr__(self, "settings", tuple(self.settings))
        if any(s.n != self.n for s in self.settings):
            raise ValueError("settings do not match the qubit count")
        if self.shots is not None and self.shots < 1:
            raise ValueError("shots must be positive or None for exact probabilities")

    @property
    def masks(self) -> tuple[int, ...]:
        return feature_masks(self.n, min(self.max_identities, self.n))

    @property
    def per_setting(self) -> int:
        return 1 << self.n if self.mode == "OutcomeProbs" else len(self.masks)

    @property
    def layout(self) -> list[str]:
        ids = []
        for s in self.settings:
            if self.mode == "OutcomeProbs":
                ids += [f"{s}:{j:0{self.n}b}" for j in range(1 << self.n)]
            else:
                ids += [f"{s}:{s.sub_pauli(m)}" for m in self.masks]
        return ids

    @property
    def layout_hash(self) -> str:
        return sha256_json(self.layout)

    def prefix(self, k: int) -> "FeatureSpec":
        if not 1 <= k <= len(self.settings):
            raise ValueError(f"cannot take {k} settings out of {len(self.settings)}")
        return FeatureSpec(self.mode, self.settings[:k], self.n, self.max_identities, self.shots)

    def assemble(self, probs: np.ndarray) -> np.ndarray:
        """Feature rows from outcome frequencies of shape (..., k, 2**n)."""
        probs = np.asarray(probs, dtype=float)
        if self.mode == "OutcomeProbs":
            return probs.reshape(probs.shape[:-2] + (-1,))
        ex = subset_expectations(probs)[..., list(self.masks)]
        return ex.reshape(ex.shape[:-2] + (-1,))

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "settings": [s.letters for s in self.settings],
            "n": self.n,
            "max_identities": self.max_identities,
            "shots": self.shots,
            "layout": self.layout,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSpec":
        spec = cls(d["mode"], tuple(MeasurementSetting(s) for s in d["settings"]), d["n"],
                   d["max_identities"], d["shots"])
        if "layout" in d and d["layout"] != spec.layout:
            raise SchemaMismatch("stored feature layout does not match its settings")
        return spec


def amplitude_hash(target: StateVector) -> str:
    return hashlib.sha256(np.ascontiguousarray(target.amp, dtype="<c16").tobytes()).hexdigest()


@dataclass
class DatasetRecord:
    features: np.ndarray
    label: int
    true_fidelity: float
    seed: int


@dataclass
class Dataset:
    manifest: dict
    features: np.ndarray
    labels: np.ndarray
    fidelity: np.ndarray
    seeds: np.ndarray
    n_train: int

    @property
    def feature_spec(self) -> FeatureSpec:
        return FeatureSpec.from_dict(self.manifest["feature_spec"])

    @property
    def binning(self) -> BinningScheme:
        b = self.manifest["binning"]
        return BinningScheme(b["id"], b["edges"])

    def __len__(self):
        return self.labels.size

    def split(self, which: str) -> "Split":
        sl = slice(0, self.n_train) if which == "train" else slice(self.n_train, None)
        return Split(self.features[sl], self.labels[sl], self.fidelity[sl], self.seeds[sl])

    @property
    def train(self) -> "Split":
        return self.split("train")

    @property
    def val(self) -> "Split":
        return self.split("val")

    def records(self) -> Iterator[DatasetRecord]:
        for i in range(len(self)):
            yield DatasetRecord(self.features[i], int(self.labels[i]), float(self.fidelity[i]), int(self.seeds[i]))

    def with_settings(self, k: int) -> "Dataset":
        """View restricted to the first ``k`` settings of the plan."""
        spec = self.feature_spec
        sub = spec.prefix(k)
        manifest = json.loads(json.dumps(self.manifest))
        manifest["feature_spec"] = sub.to_dict()
        manifest.pop("data_sha256", None)
        cols = k * spec.per_setting
        return Dataset(manifest, self.features[:, :cols], self.labels, self.fidelity, self.seeds, self.n_train)


@dataclass
class Split:
    X: np.ndarray
    y: np.ndarray
    f: np.ndarray
    seeds: np.ndarray = field(repr=False)

    def __len__(self):
        return self.y.size


def record_seed(root_seed: int, index: int) -> int:
    ss = np.random.SeedSequence(root_seed, spawn_key=(index,))
    return int(ss.generate_state(1, np.uint64)[0])


def _generate_states(n, kind, m1_dist, fids, seeds) -> np.ndarray:
    d = 1 << n
    mats = np.empty((len(seeds), d, d), dtype=complex)
    for i, (f, s) in enumerate(zip(fids, seeds)):
        r = RngStream(s, (0,))
        if kind == "Pure":
            a = gen_pure_with_fidelity(n, f, r).amp
            mats[i] = np.outer(a, a.conj())
        else:
            mats[i] = gen_mixed_with_fidelity(n, f, m1_dist, r).mat
    return mats


def measure_batch(mats: np.ndarray, spec: FeatureSpec, seeds: Sequence[int] | None) -> np.ndarray:
    """Outcome frequencies of shape (R, k, 2**n), Poisson-sampled unless shots is None."""
    probs = np.stack([outcome_probabilities_batch(mats, s) for s in spec.settings], axis=1)
    if spec.shots is None:
        return probs
    out = np.empty_like(probs)
    for i, s in enumerate(seeds):
        gen = RngStream(s, (1,))
        counts = gen.poisson(spec.shots * probs[i])
        for j in range(counts.shape[0]):
            # a setting with no clicks at all is redrawn once, then left uniform
            if counts[j].sum() == 0:
                counts[j] = gen.poisson(spec.shots * probs[i, j])
        tot = counts.sum(axis=1, keepdims=True)
        out[i] = np.where(tot > 0, counts / np.maximum(tot, 1), 1.0 / probs.shape[2])
    return out


def build_dataset(
    target: StateVector,
    plan: SettingPlan,
    binning: BinningScheme,
    per_label_train: int = 200,
    per_label_val: int = 50,
    *,
    mode: str = "PauliExpectations",
    max_identities: int = 4,
    shots: int | None = DEFAULT_SHOTS,
    kind: str = "Mixed",
    m1_dist: str | float = "H",
    root_seed: int = 0,
    target_description: str = "",
) -> Dataset:
    """Generate labelled measurement records for ``target``.

    States are drawn at fidelities uniform inside each bin relative to
    |0...0>, moved onto the target by its Householder unitary, and measured
    under every setting of ``plan``.
    """
    if per_label_train < 1 or per_label_val < 1:
        raise ValueError("per-label counts must be >= 1")
    n = target.n
    spec = FeatureSpec(mode, tuple(plan.settings), n, max_identities, shots)
    U = householder_target_unitary(target).mat
    per_label = per_label_train + per_label_val
    L = binning.count
    # record i = label * per_label + j; split inside each label by position
    idx = np.arange(L * per_label)
    labels = idx // per_label
    is_val = (idx % per_label) >= per_label_train
    seeds = [record_seed(root_seed, int(i)) for i in idx]
    lo, hi = binning.edges[labels], binning.edges[labels + 1]
    u = np.array([RngStream(s, (2,)).uniform() for s in seeds])
    fids = lo + u * (hi - lo)
    fids = np.where(labels == L - 1, np.minimum(fids, 1.0), np.minimum(fids, np.nextafter(hi, 0)))
    mats = _generate_states(n, kind, m1_dist, fids, seeds)
    mats = np.einsum("ab,rbc,dc->rad", U, mats, U.conj(), optimize=True)
    freqs = measure_batch(mats, spec, seeds)
    X = spec.assemble(freqs)
    order = np.concatenate((np.flatnonzero(~is_val), np.flatnonzero(is_val)))
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "n": n,
        "target": {"description": target_description, "amplitude_sha256": amplitude_hash(target)},
        "feature_spec": spec.to_dict(),
        "plan": plan.to_dict(),
        "binning": binning.to_dict(),
        "generator": {"kind": kind, "m1_dist": m1_dist},
        "counts": {"per_label_train": per_label_train, "per_label_val": per_label_val,
                   "labels": L},
        "root_seed": int(root_seed),
    }
    return Dataset(manifest, X[order], labels[order].astype(np.int64), fids[order],
                   np.array(seeds, dtype=np.uint64)[order], int((~is_val).sum()))


def _csv_bytes(ds: Dataset) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ds.feature_spec.layout + ["label", "true_fidelity", "seed"])
    for x, y, f, s in zip(ds.features, ds.labels, ds.fidelity, ds.seeds):
        w.writerow([_fmt(v) for v in x] + [int(y), _fmt(f), int(s)])
    return buf.getvalue().encode("utf-8")


def _manifest_with_hashes(ds: Dataset, data: bytes) -> dict:
    m = dict(ds.manifest)
    m.pop("manifest_sha256", None)
    m["data_sha256"] = hashlib.sha256(data).hexdigest()
    m["manifest_sha256"] = sha256_json({k: v for k, v in m.items() if k != "manifest_sha256"})
    return m


def dataset_paths(path: str | Path) -> tuple[Path, Path]:
    p = Path(path)
    base = p.name
    for suffix in (".manifest.json", ".csv"):
        if base.endswith(suffix):
            base = base[: -len(suffix)]
    return p.with_name(base + ".manifest.json"), p.with_name(base + ".csv")


def save_dataset(ds: Dataset, path: str | Path, force: bool = False) -> tuple[Path, Path]:
    mpath, cpath = dataset_paths(path)
    if not force and (mpath.exists() or cpath.exists()):
        raise FileExistsError(f"{mpath} or {cpath} already exists")
    data = _csv_bytes(ds)
    manifest = _manifest_with_hashes(ds, data)
    cpath.parent.mkdir(parents=True, exist_ok=True)
    cpath.write_bytes(data)
    mpath.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    ds.manifest = manifest
    return mpath, cpath


def load_dataset(path: str | Path) -> Dataset:
    mpath, cpath = dataset_paths(path)
    try:
        manifest = json.loads(mpath.read_text(encoding="utf-8"))
        data = cpath.read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read dataset {path}: {exc}") from exc
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CorruptRecord(f"{mpath} is not valid JSON: {exc}") from exc
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise SchemaMismatch(f"unsupported dataset schema {manifest.get('schema_version')!r}")
    body = {k: v for k, v in manifest.items() if k != "manifest_sha256"}
    if sha256_json(body) != manifest.get("manifest_sha256"):
        raise SchemaMismatch(f"{mpath} was modified after it was written")
    b = manifest["binning"]
    binning = BinningScheme(b["id"], b["edges"])
    if b["id"] in PRESETS and not np.array_equal(make_binning(b["id"]).edges, binning.edges):
        raise SchemaMismatch(f"binning {b['id']} does not match its preset edges")
    spec = FeatureSpec.from_dict(manifest["feature_spec"])
    if hashlib.sha256(data).hexdigest() != manifest.get("data_sha256"):
        raise CorruptRecord(f"{cpath} does not match the manifest checksum")
    rows = list(csv.reader(io.StringIO(data.decode("utf-8"))))
    header = spec.layout + ["label", "true_fidelity", "seed"]
    if not rows or rows[0] != header:
        raise CorruptRecord("CSV header does not match the feature layout")
    c = manifest["counts"]
    n_train = c["per_label_train"] * c["labels"]
    expected = (c["per_label_train"] + c["per_label_val"]) * c["labels"]
    rows = rows[1:]
    if len(rows) != expected or any(len(r) != len(header) for r in rows):
        raise CorruptRecord(f"expected {expected} complete records, found {len(rows)}")
    nf = len(spec.layout)
    try:
        X = np.array([[float(v) for v in r[:nf]] for r in rows]).reshape(len(rows), nf)
        labels = np.array([int(r[nf]) for r in rows], dtype=np.int64)
        fids = np.array([float(r[nf + 1]) for r in rows])
        seeds = np.array([int(r[nf + 2]) for r in rows], dtype=np.uint64)
    except ValueError as exc:
        raise CorruptRecord(str(exc)) from exc
    lo, hi = (0.0, 1.0) if spec.mode == "OutcomeProbs" else (-1.0, 1.0)
    if not np.all(np.isfinite(X)) or np.any(X < lo - 1e-12) or np.any(X > hi + 1e-12):
        raise CorruptRecord("feature values outside their valid range")
    if np.any(binning.bin_of(np.clip(fids, 0, 1)) != labels) or np.any((fids < 0) | (fids > 1)):
        raise CorruptRecord("labels disagree with true fidelities")
    return Dataset(manifest, X, labels, fids, seeds, n_train)


def per_label_counts(ds: Dataset) -> dict[str, np.ndarray]:
    L = ds.binning.count
    return {
        "train": np.bincount(ds.train.y, minlength=L),
        "val": np.bincount(ds.val.y, minlength=L),
    }


def fidelity_resolution(binning: BinningScheme) -> float:
    return float(np.max(binning.widths)) / 2

