"""Desk-scale experiment suites; each returns plain row dicts ready for CSV."""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy import stats

from .dataset import Dataset, build_dataset, make_binning
from .estimator import ModelRegistry, build_registry, conservative_quantile
from .nn import TrainConfig, accuracy_pm, predict_fidelity, train_on
from .quantum import StateVector, named_state
from .rng import RngStream
from .selection import select_settings
from .states import gen_mixed_with_fidelity, gen_pure_with_fidelity, purity_report, uniformity_report

SUITES = ("acc_vs_k", "eps_vs_F", "noise_sweep", "label_sweep", "scaling", "uniformity", "purity")


@dataclass
class DeskSetup:
    """Shared parameters of the desk-scale learning experiments."""

    target: StateVector
    target_id: str
    k_max: int = 7
    binning: str = "L122"
    per_label_train: int = 200
    per_label_val: int = 50
    shots: int | None = 10_000
    mode: str = "PauliExpectations"
    m1_dist: str = "H"
    train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=100, patience=15))

    def dataset(self, root_seed: int, shots: int | None | str = "default", binning: str | None = None) -> Dataset:
        plan = select_settings(self.target, self.k_max, target_id=self.target_id)
        return build_dataset(
            self.target, plan, make_binning(binning or self.binning), self.per_label_train, self.per_label_val,
            mode=self.mode, shots=self.shots if shots == "default" else shots, m1_dist=self.m1_dist,
            root_seed=root_seed, target_description=self.target_id,
        )


def band_eps(table, lo: float, delta: float = 0.05) -> float:
    return table.eps(lo + 1e-9, delta)


@dataclass
class KSweep:
    rows: list[dict]
    registries: dict[int, ModelRegistry]
    datasets: dict[int, Dataset]

    def mean_by_k(self, column: str) -> dict[int, float]:
        ks = sorted({r["k"] for r in self.rows})
        return {k: float(np.mean([r[column] for r in self.rows if r["k"] == k])) for k in ks}


def acc_vs_k(setup: DeskSetup, ks: Sequence[int], seeds: Sequence[int], delta: float = 0.05) -> KSweep:
    """Train and calibrate one model per (seed, k); the dataset for a seed is shared across k."""
    rows, regs, data = [], {}, {}
    for seed in seeds:
        t0 = time.perf_counter()
        ds = setup.dataset(root_seed=seed)
        gen_time = time.perf_counter() - t0
        data[seed] = ds
        cfg = replace(setup.train, seed=seed)
        reg = ModelRegistry()
        for k in ks:
            t1 = time.perf_counter()
            build_registry(ds, [k], cfg, setup.target_id, registry=reg)
            entry, _ = reg.get(setup.target_id, k)
            sub = ds.with_settings(k)
            cal = entry.calibration
            rows.append({
                "k": k, "seed": seed,
                "acc_pm1": accuracy_pm(entry.model, sub.val.X, sub.val.f, 0.01),
                "mean_eps": cal.mean_eps(delta),
                "eps_095_1": band_eps(cal, 0.95, delta),
                "eps_050_055": band_eps(cal, 0.50, delta),
                "runtime_s": round(time.perf_counter() - t1 + (gen_time if k == ks[0] else 0.0), 3),
            })
        regs[seed] = reg
    return KSweep(rows, regs, data)


def trend_report(rows: Sequence[dict], x: str, y: str) -> dict:
    """Direction of ``y`` along ``x``, paired by seed.

    Consecutive differences are pooled over seeds and tested with a one-sided
    Wilcoxon signed-rank test; ``max_drop`` is the largest decrease of the
    seed-averaged curve.
    """
    xs = sorted({r[x] for r in rows})
    seeds = sorted({r["seed"] for r in rows})
    table = {(r[x], r["seed"]): r[y] for r in rows}
    diffs = [table[(b, s)] - table[(a, s)] for a, b in zip(xs, xs[1:]) for s in seeds]
    means = [float(np.mean([table[(v, s)] for s in seeds])) for v in xs]
    nz = [d for d in diffs if d != 0]
    if len(nz) >= 1:
        w = stats.wilcoxon(nz, alternative="greater")
        stat, p = float(w.statistic), float(w.pvalue)
    else:
        stat, p = float("nan"), float("nan")
    return {
        "x": x, "y": y, "pairs": len(diffs), "wilcoxon_stat": stat, "p_value_increasing": p,
        "mean_first": means[0], "mean_last": means[-1],
        "max_drop": float(max([0.0] + [a - b for a, b in zip(means, means[1:])])),
    }


def eps_vs_f(sweep: KSweep, target_id: str, delta: float = 0.05) -> list[dict]:
    rows = []
    for seed, reg in sweep.registries.items():
        for k in reg.ks(target_id):
            entry, _ = reg.get(target_id, k)
            for r in entry.calibration.rows():
                if r["delta"] == delta:
                    rows.append({"k": k, "seed": seed, **r})
    return rows


def noise_sweep(setup: DeskSetup, shots_list: Sequence[int], seeds: Sequence[int], k: int | None = None,
                hits: dict | None = None) -> list[dict]:
    """Same states and network seeds for every shot count; only the sampling noise differs.

    If ``hits`` is given it receives the per-record +-1% hit mask of every
    (shots, seed) run, for paired comparisons.
    """
    k = k or setup.k_max
    rows = []
    for seed in seeds:
        cfg = replace(setup.train, seed=seed)
        for shots in shots_list:
            t0 = time.perf_counter()
            ds = setup.dataset(root_seed=seed, shots=shots).with_settings(k)
            model, _ = train_on(ds, cfg)
            if hits is not None:
                hits[(shots, seed)] = np.abs(predict_fidelity(model, ds.val.X) - ds.val.f) <= 0.01
            rows.append({"shots": shots, "seed": seed, "k": k,
                         "acc_pm1": accuracy_pm(model, ds.val.X, ds.val.f, 0.01),
                         "runtime_s": round(time.perf_counter() - t0, 3)})
    return rows


def relabel(ds: Dataset, preset: str) -> Dataset:
    """The same records under another binning scheme."""
    b = make_binning(preset)
    manifest = dict(ds.manifest, binning=b.to_dict())
    manifest.pop("data_sha256", None)
    return Dataset(manifest, ds.features, b.bin_of(ds.fidelity).astype(np.int64), ds.fidelity, ds.seeds, ds.n_train)


def label_sweep(setup: DeskSetup, presets: Sequence[str], seeds: Sequence[int], k: int | None = None) -> list[dict]:
    k = k or setup.k_max
    rows = []
    for seed in seeds:
        base = setup.dataset(root_seed=seed).with_settings(k)
        cfg = replace(setup.train, seed=seed)
        for preset in presets:
            t0 = time.perf_counter()
            ds = relabel(base, preset)
            model, _ = train_on(ds, cfg)
            rows.append({"binning": preset, "labels": ds.binning.count, "seed": seed, "k": k,
                         "acc_pm1": accuracy_pm(model, ds.val.X, ds.val.f, 0.01),
                         "runtime_s": round(time.perf_counter() - t0, 3)})
    return rows


def scaling(kinds: Sequence[tuple[str, int]], seeds: Sequence[int], k: int = 3, **setup_kw) -> list[dict]:
    """Accuracy and cost for several targets of growing size."""
    rows = []
    for kind, n in kinds:
        target = named_state(kind, n)
        setup = DeskSetup(target, f"{kind}-{n}", k_max=k, **setup_kw)
        for seed in seeds:
            t0 = time.perf_counter()
            ds = setup.dataset(root_seed=seed)
            model, hist = train_on(ds, replace(setup.train, seed=seed))
            rows.append({"target": f"{kind}-{n}", "n": n, "seed": seed, "k": k, "features": ds.features.shape[1],
                         "acc_pm1": accuracy_pm(model, ds.val.X, ds.val.f, 0.01),
                         "epochs": len(hist.epoch), "runtime_s": round(time.perf_counter() - t0, 3)})
    return rows


def uniformity(n: int, count: int, anchors: int, bins: int, seed: int, kind: str = "Pure",
               m1_dist: str = "H") -> list[dict]:
    """Fidelity histograms between generated states of uniformly drawn target fidelity."""
    root = RngStream(seed)
    fs = root.child(0).uniform(size=count)
    if kind == "Pure":
        states = [gen_pure_with_fidelity(n, float(f), root.child(1, i)) for i, f in enumerate(fs)]
    else:
        states = [gen_mixed_with_fidelity(n, float(f), m1_dist, root.child(1, i)) for i, f in enumerate(fs)]
    t0 = time.perf_counter()
    rep = uniformity_report(states, anchors, bins, root.child(2))
    dt = round(time.perf_counter() - t0, 3)
    return [{**r, "n": n, "seed": seed, "runtime_s": dt} for r in rep.rows()]


def purity(n: int, f: float, count: int, seed: int, distributions: Sequence[str] | None = None) -> list[dict]:
    t0 = time.perf_counter()
    kw = {} if distributions is None else {"distributions": distributions}
    rep = purity_report(n, f, count=count, rng=seed, **kw)
    dt = round(time.perf_counter() - t0, 3)
    means = {d: rep.mean(d) for d in rep.purities}
    return [{**r, "n": n, "f": f, "seed": seed, "mean_purity": means[r["m1_dist"]], "runtime_s": dt}
            for r in rep.rows()]


def bootstrap_mean_eps(
    errors: dict[int, np.ndarray],
    f_true: np.ndarray,
    delta: float,
    rounds: int,
    rng: RngStream,
    band_width: float = 0.05,
    min_samples: int = 50,
) -> np.ndarray:
    """Bootstrap replicates of the band-averaged calibration epsilon, shape (rounds, len(errors)).

    The same resampled records are used for every key of ``errors`` so that
    differences between models are paired.
    """
    keys = sorted(errors)
    nb = round(1.0 / band_width)
    edges = np.linspace(0.0, 1.0, nb + 1)
    band = np.clip(np.searchsorted(edges, np.asarray(f_true, dtype=float), side="right") - 1, 0, nb - 1)
    N = band.size
    out = np.empty((rounds, len(keys)))
    for r in range(rounds):
        idx = rng.child(r).integers(0, N, size=N)
        b = band[idx]
        groups = [idx[b == j] for j in range(nb)]
        groups = [g for g in groups if g.size >= min_samples]
        for c, k in enumerate(keys):
            e = errors[k]
            out[r, c] = np.mean([conservative_quantile(e[g], delta) for g in groups])
    return out
