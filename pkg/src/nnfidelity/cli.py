"""Command-line front end: ``nnfid <command> [options]``.

Exit codes: 0 success, 2 invalid configuration, 3 inconsistent or corrupt
artifacts, 4 any other runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import yaml

from . import benchmarks as bench
from .dataset import MODES, PRESETS, build_dataset, load_dataset, make_binning, save_dataset
from .errors import ConfigError, DataIntegrityError, LayoutMismatch
from .estimator import (
    DEFAULT_DELTAS,
    ModelRegistry,
    StateMeasurer,
    adaptive_certify,
    calibrate,
    calibration_path,
    dfe_baseline,
    dfe_ell,
    load_calibration,
    qst_settings_count,
    save_calibration,
)
from .nn import TrainConfig, accuracy_pm, config_to_dict, load_model, predict_fidelity, save_model, train_on
from .quantum import NAMED_STATES, StateVector, householder_target_unitary, named_state, transport
from .rng import RngStream
from .selection import STRATEGIES, SettingPlan, fixture_comparison, select_settings
from .states import M1_DISTRIBUTIONS, gen_mixed_with_fidelity, gen_pure_with_fidelity

log = logging.getLogger("nnfidelity")

OUTPUT_ROOT_ENV = "NNFID_OUTPUT_ROOT"
EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4

# defaults applied below the config file, which is applied below explicit flags
DEFAULTS: dict[str, Any] = {
    "target": "bell", "n": None, "amplitudes": None, "k": 7, "strategy": "GreedyCoverage",
    "binning": "L122", "mode": "PauliExpectations", "shots": 10_000, "kind": "Mixed", "m1_dist": "H",
    "per_label_train": 200, "per_label_val": 50, "seed": 0, "name": None,
    "epochs": 100, "batch_size": 128, "lr": 1e-3, "hidden": [128, 64], "patience": 15,
    "deltas": list(DEFAULT_DELTAS), "split": "val",
    "threshold": 0.96, "delta": 0.05, "eps_target": 0.01, "k_min": None, "k_max": None,
    "fidelity": 0.99, "epsilon": 0.01, "cap": 10_000, "state_seeds": 50, "qubits": 7,
    "seeds": [0, 1, 2], "ks": [2, 3, 4, 5, 6, 7], "shots_list": [1000, 10_000, 100_000],
    "presets": ["L66", "L122", "L234"], "scaling_targets": ["GHZ-2", "GHZ-3", "GHZ-4"],
    "count": 300, "anchors": 5, "bins": 20,
}


def _int_list(text: str) -> list[int]:
    out: list[int] = []
    for part in str(text).split(","):
        if ".." in part:
            a, b = part.split("..")
            out += list(range(int(a), int(b) + 1))
        elif part.strip():
            out.append(int(part))
    return out


def _str_list(text: str) -> list[str]:
    return [p.strip() for p in str(text).split(",") if p.strip()]


def _float_list(text: str) -> list[float]:
    return [float(p) for p in _str_list(text)]


def _shots(text: str) -> int | None:
    return None if str(text).lower() in ("none", "exact", "inf") else int(text)


def _add_target(p: argparse.ArgumentParser) -> None:
    p.add_argument("--target", help="named target state (bell, ghz, w, dicke, cluster, cring, c23)")
    p.add_argument("--n", type=int, help="qubit count of the named target")
    p.add_argument("--amplitudes", help="JSON file with target amplitudes as [[re, im], ...]")


def _add_data(p: argparse.ArgumentParser) -> None:
    p.add_argument("--binning", help=f"label scheme: one of {sorted(PRESETS)}")
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--shots", type=_shots, help="shots per setting, or 'exact'")
    p.add_argument("--kind", choices=["Pure", "Mixed"])
    p.add_argument("--m1-dist", dest="m1_dist", choices=sorted(M1_DISTRIBUTIONS))
    p.add_argument("--per-label-train", dest="per_label_train", type=int)
    p.add_argument("--per-label-val", dest="per_label_val", type=int)


def _add_train(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--hidden", type=_int_list, help="comma-separated hidden layer sizes")
    p.add_argument("--patience", type=int)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nnfid", description="Neural-network fidelity estimation toolkit.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML file of option values; flags override it")
    common.add_argument("--out", help=f"output directory (default ${OUTPUT_ROOT_ENV} or ./runs)")
    common.add_argument("--force", action="store_true", help="overwrite existing outputs")
    common.add_argument("--seed", type=int)
    common.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("select", parents=[common], help="choose measurement settings for a target")
    _add_target(p)
    p.add_argument("--k", type=int)
    p.add_argument("--strategy", choices=STRATEGIES)

    p = sub.add_parser("gen-data", parents=[common], help="generate a labelled measurement dataset")
    _add_target(p)
    _add_data(p)
    p.add_argument("--k", type=int, help="number of settings to measure")
    p.add_argument("--plan", help="plan JSON from 'select' (default: select on the fly)")
    p.add_argument("--name", help="dataset base name")

    p = sub.add_parser("train", parents=[common], help="train one classifier per k on a dataset")
    p.add_argument("--data", required=True, help="dataset base path (without extension)")
    p.add_argument("--ks", type=_int_list, help="k values, e.g. 2..7")
    p.add_argument("--name", help="model base name")
    _add_train(p)

    p = sub.add_parser("calibrate", parents=[common], help="calibrate models and register them")
    p.add_argument("--data", required=True)
    p.add_argument("--models", nargs="+", required=True, help="model files from 'train'")
    p.add_argument("--deltas", type=_float_list)
    p.add_argument("--registry", help="registry directory to add the models to")
    p.add_argument("--target-id", dest="target_id")

    p = sub.add_parser("predict", parents=[common], help="predict fidelities for dataset records")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--split", choices=["train", "val", "all"])
    p.add_argument("--delta", type=float)

    p = sub.add_parser("certify", parents=[common], help="adaptive threshold certification of a simulated state")
    _add_target(p)
    p.add_argument("--registry", required=True)
    p.add_argument("--target-id", dest="target_id")
    p.add_argument("--fidelity", type=float, help="true fidelity of the simulated state")
    p.add_argument("--kind", choices=["Pure", "Mixed"])
    p.add_argument("--m1-dist", dest="m1_dist", choices=sorted(M1_DISTRIBUTIONS))
    p.add_argument("--shots", type=_shots)
    p.add_argument("--threshold", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--eps-target", dest="eps_target", type=float)
    p.add_argument("--k-min", dest="k_min", type=int)
    p.add_argument("--k-max", dest="k_max", type=int)

    p = sub.add_parser("benchmark", parents=[common], help="desk-scale experiment suites")
    p.add_argument("suite", choices=bench.SUITES)
    _add_target(p)
    _add_data(p)
    _add_train(p)
    p.add_argument("--seeds", type=_int_list)
    p.add_argument("--ks", type=_int_list)
    p.add_argument("--k", type=int)
    p.add_argument("--shots-list", dest="shots_list", type=_int_list)
    p.add_argument("--presets", type=_str_list)
    p.add_argument("--scaling-targets", dest="scaling_targets", type=_str_list)
    p.add_argument("--count", type=int)
    p.add_argument("--anchors", type=int)
    p.add_argument("--bins", type=int)
    p.add_argument("--fidelity", type=float)

    p = sub.add_parser("baseline", parents=[common], help="DFE and QST measurement-cost baselines")
    p.add_argument("method", choices=["dfe", "qst"])
    _add_target(p)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--cap", type=int, help="desk-mode cap on sampled Pauli operators")
    p.add_argument("--fidelity", type=float)
    p.add_argument("--shots", type=_shots)
    p.add_argument("--state-seeds", dest="state_seeds", type=int)
    p.add_argument("--qubits", type=int, help="qubit count for the QST settings count")
    return ap


def resolve(args: argparse.Namespace) -> dict:
    """Defaults < config file < explicit flags."""
    cfg = dict(DEFAULTS)
    if args.config:
        try:
            doc = yaml.safe_load(Path(args.config).read_text(encoding="utf-8")) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("config file must hold a mapping")
        unknown = set(doc) - set(DEFAULTS) - set(vars(args))
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg.update({k.replace("-", "_"): v for k, v in doc.items()})
    explicit = {k: v for k, v in vars(args).items() if v is not None and k != "config"}
    cfg.update(explicit)
    cfg["force"] = bool(args.force)
    cfg["out"] = str(cfg.get("out") or os.environ.get(OUTPUT_ROOT_ENV) or "runs")
    if cfg["shots"] is not None and not isinstance(cfg["shots"], int):
        cfg["shots"] = _shots(cfg["shots"])
    return cfg


def load_target(cfg: dict) -> tuple[StateVector, str]:
    if cfg.get("amplitudes"):
        try:
            raw = json.loads(Path(cfg["amplitudes"]).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read amplitudes: {exc}") from exc
        amp = np.array([complex(re, im) for re, im in raw])
        try:
            target = StateVector(amp)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return target, Path(cfg["amplitudes"]).stem
    target = named_state(cfg["target"], cfg.get("n"))
    canonical = {k.lower(): k for k in NAMED_STATES}[str(cfg["target"]).lower().replace("-", "").replace("_", "")]
    return target, f"{canonical}-{target.n}"


def train_config(cfg: dict) -> TrainConfig:
    try:
        return TrainConfig(epochs=cfg["epochs"], batch_size=cfg["batch_size"], learning_rate=cfg["lr"],
                           hidden=tuple(cfg["hidden"]), patience=cfg["patience"], seed=cfg["seed"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _guard(path: Path, force: bool) -> Path:
    if path.exists() and not force:
        raise ConfigError(f"{path} exists; pass --force to overwrite")
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def write_json(path: Path, obj, force: bool) -> Path:
    _guard(path, force).write_text(json.dumps(obj, indent=1, default=str) + "\n", encoding="utf-8")
    return path


def write_csv(path: Path, rows: Sequence[dict], force: bool) -> Path:
    _guard(path, force)
    fields: list[str] = []
    for r in rows:
        fields += [k for k in r if k not in fields]
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return path


def echo_manifest(cfg: dict, command: str, outputs: Sequence[Path]) -> Path:
    out = Path(cfg["out"])
    doc = {"command": command, "config": {k: v for k, v in sorted(cfg.items())},
           "outputs": [str(p) for p in outputs]}
    return write_json(out / f"{command}.run.json", doc, True)


def cmd_select(cfg: dict) -> list[Path]:
    target, tid = load_target(cfg)
    plan = select_settings(target, cfg["k"], cfg["strategy"], target_id=tid)
    report = {"plan": plan.to_dict(), "fixture": fixture_comparison(target, tid, plan)}
    out = Path(cfg["out"])
    paths = [write_json(out / f"plan-{tid}.json", plan.to_dict(), cfg["force"]),
             write_json(out / f"plan-{tid}.report.json", report, cfg["force"])]
    print(f"target {tid}: " + ";".join(s.letters for s in plan.settings))
    print("captured weight: " + ", ".join(f"{w:.6g}" for w in plan.captured_weight))
    if report["fixture"]:
        print("published:       " + ";".join(report["fixture"]["fixture"]))
    return paths


def cmd_gen_data(cfg: dict) -> list[Path]:
    target, tid = load_target(cfg)
    if cfg.get("plan"):
        plan = SettingPlan.from_dict(json.loads(Path(cfg["plan"]).read_text(encoding="utf-8"))).prefix(cfg["k"])
    else:
        plan = select_settings(target, cfg["k"], cfg["strategy"], target_id=tid)
    ds = build_dataset(target, plan, make_binning(cfg["binning"]), cfg["per_label_train"], cfg["per_label_val"],
                       mode=cfg["mode"], shots=cfg["shots"], kind=cfg["kind"], m1_dist=cfg["m1_dist"],
                       root_seed=cfg["seed"], target_description=tid)
    name = cfg["name"] or f"{tid}-{cfg['binning']}-s{cfg['seed']}"
    paths = save_dataset(ds, Path(cfg["out"]) / name, force=cfg["force"])
    print(f"{len(ds)} records ({ds.n_train} train) with {ds.features.shape[1]} features -> {paths[1]}")
    return list(paths)


def cmd_train(cfg: dict) -> list[Path]:
    ds = load_dataset(cfg["data"])
    conf = train_config(cfg)
    base = cfg["name"] or Path(cfg["data"]).name
    out, paths = Path(cfg["out"]), []
    available = len(ds.feature_spec.settings)
    bad = [k for k in cfg["ks"] if not 1 <= k <= available]
    if bad:
        raise ConfigError(f"k values {bad} outside 1..{available} for this dataset")
    for k in cfg["ks"]:
        sub = ds.with_settings(k)
        model, hist = train_on(sub, conf)
        mp = _guard(out / f"{base}-k{k}.model.json", cfg["force"])
        paths.append(save_model(model, mp, force=True))
        paths.append(write_csv(out / f"{base}-k{k}.history.csv", list(hist.rows()), cfg["force"]))
        print(f"k={k}: best val +-1% accuracy {max(hist.val_acc):.4f} at epoch {hist.best_epoch}")
    write_json(out / f"{base}.train-config.json", config_to_dict(conf), True)
    return paths


def _k_of(model, spec) -> int:
    for k in range(1, len(spec.settings) + 1):
        if spec.prefix(k).layout_hash == model.layout_hash:
            return k
    raise LayoutMismatch("model layout does not match any prefix of the dataset's settings")


def cmd_calibrate(cfg: dict) -> list[Path]:
    ds = load_dataset(cfg["data"])
    spec = ds.feature_spec
    plan = SettingPlan.from_dict(ds.manifest["plan"])
    tid = cfg.get("target_id") or plan.target_id
    reg_dir = Path(cfg["registry"]) if cfg.get("registry") else None
    reg = ModelRegistry.load(reg_dir) if reg_dir and (reg_dir / "registry.json").exists() else ModelRegistry()
    paths = []
    for mp in cfg["models"]:
        model = load_model(mp)
        k = _k_of(model, spec)
        sub = ds.with_settings(k)
        table = calibrate(model, sub.val.X, sub.val.f, cfg["deltas"])
        cp = calibration_path(mp)
        _guard(cp, cfg["force"])
        paths.append(save_calibration(table, cp, force=True))
        reg.add(tid, k, model, table, plan, spec)
        print(f"{mp}: k={k}, mean eps(0.05) over reliable bands {table.mean_eps(0.05):.4f}")
    if reg_dir:
        paths.append(reg.save(reg_dir, force=True))
    return paths


def cmd_predict(cfg: dict) -> list[Path]:
    ds = load_dataset(cfg["data"])
    model = load_model(cfg["model"])
    k = _k_of(model, ds.feature_spec)
    sub = ds.with_settings(k)
    split = {"train": sub.train, "val": sub.val}.get(cfg["split"])
    X, f = (split.X, split.f) if split else (sub.features, sub.fidelity)
    f_hat = predict_fidelity(model, X)
    cp = calibration_path(cfg["model"])
    table = load_calibration(cp) if cp.exists() else None
    rows = [{"true_fidelity": float(a), "f_hat": float(b),
             **({"epsilon": table.eps(float(b), cfg["delta"])} if table else {})} for a, b in zip(f, f_hat)]
    path = write_csv(Path(cfg["out"]) / f"{Path(cfg['model']).name.removesuffix('.model.json')}.predictions.csv",
                     rows, cfg["force"])
    print(f"k={k}: +-1% accuracy {accuracy_pm(model, X, f, 0.01):.4f} on {len(f)} records")
    return [path]


def simulated_state(target: StateVector, fidelity: float, kind: str, m1_dist: str, seed: int):
    r = RngStream(seed, (7,))
    base = gen_pure_with_fidelity(target.n, fidelity, r) if kind == "Pure" else \
        gen_mixed_with_fidelity(target.n, fidelity, m1_dist, r)
    return transport(householder_target_unitary(target), base)


def cmd_certify(cfg: dict) -> list[Path]:
    target, tid = load_target(cfg)
    tid = cfg.get("target_id") or tid
    reg = ModelRegistry.load(cfg["registry"])
    state = simulated_state(target, cfg["fidelity"], cfg["kind"], cfg["m1_dist"], cfg["seed"])
    meas = StateMeasurer(state, cfg["shots"], RngStream(cfg["seed"], (8,)))
    dec = adaptive_certify(reg, tid, meas, cfg["threshold"], cfg["delta"], cfg["eps_target"],
                           cfg["k_min"], cfg["k_max"])
    out = Path(cfg["out"])
    stem = f"certify-{tid}-F{cfg['fidelity']}-s{cfg['seed']}"
    tp = _guard(out / f"{stem}.transcript.jsonl", cfg["force"])
    tp.write_text(dec.transcript_jsonl(), encoding="utf-8")
    dp = write_json(out / f"{stem}.decision.json",
                    {"verdict": dec.verdict.value, "k": dec.k, "f_hat": dec.f_hat, "epsilon": dec.epsilon,
                     "delta": dec.delta, "threshold": dec.threshold}, cfg["force"])
    print(f"{dec.verdict.value} at k={dec.k}: F~ = {dec.f_hat:.4f} +- {dec.epsilon:.4f} (T = {dec.threshold})")
    return [tp, dp]


def _setup(cfg: dict) -> bench.DeskSetup:
    target, tid = load_target(cfg)
    return bench.DeskSetup(target, tid, k_max=max(cfg["ks"] + [cfg["k"]]), binning=cfg["binning"],
                           per_label_train=cfg["per_label_train"], per_label_val=cfg["per_label_val"],
                           shots=cfg["shots"], mode=cfg["mode"], m1_dist=cfg["m1_dist"], train=train_config(cfg))


def cmd_benchmark(cfg: dict) -> list[Path]:
    suite, out, force = cfg["suite"], Path(cfg["out"]), cfg["force"]
    extra: list[Path] = []
    if suite in ("acc_vs_k", "eps_vs_F"):
        setup = _setup(cfg)
        sweep = bench.acc_vs_k(setup, cfg["ks"], cfg["seeds"])
        if suite == "acc_vs_k":
            rows = sweep.rows
            extra.append(write_json(out / "acc_vs_k.trend.json",
                                    {"accuracy": bench.trend_report(rows, "k", "acc_pm1"),
                                     "epsilon": bench.trend_report(rows, "k", "mean_eps")}, force))
        else:
            rows = bench.eps_vs_f(sweep, setup.target_id)
    elif suite == "noise_sweep":
        setup = _setup(cfg)
        rows = bench.noise_sweep(setup, cfg["shots_list"], cfg["seeds"], cfg["k"])
        extra.append(write_json(out / "noise_sweep.trend.json", bench.trend_report(rows, "shots", "acc_pm1"), force))
    elif suite == "label_sweep":
        rows = bench.label_sweep(_setup(cfg), cfg["presets"], cfg["seeds"], cfg["k"])
    elif suite == "scaling":
        kinds = [(t.split("-")[0], int(t.split("-")[1])) for t in cfg["scaling_targets"]]
        rows = bench.scaling(kinds, cfg["seeds"], cfg["k"], per_label_train=cfg["per_label_train"],
                             per_label_val=cfg["per_label_val"], shots=cfg["shots"], binning=cfg["binning"],
                             train=train_config(cfg))
    elif suite == "uniformity":
        rows = bench.uniformity(cfg["n"] or 2, cfg["count"], cfg["anchors"], cfg["bins"], cfg["seed"], cfg["kind"],
                                cfg["m1_dist"])
    else:
        rows = bench.purity(cfg["n"] or 2, cfg["fidelity"], max(cfg["count"], 100), cfg["seed"])
    path = write_csv(out / f"{suite}.csv", rows, force)
    print(f"{len(rows)} rows -> {path}")
    return [path, *extra]


def cmd_baseline(cfg: dict) -> list[Path]:
    out = Path(cfg["out"])
    if cfg["method"] == "qst":
        rows = [{"n": n, "qst_settings": qst_settings_count(n)} for n in range(1, cfg["qubits"] + 1)]
        print(f"QST settings for n={cfg['qubits']}: {qst_settings_count(cfg['qubits'])}")
        return [write_csv(out / "baseline-qst.csv", rows, cfg["force"])]
    ell = dfe_ell(cfg["epsilon"], cfg["delta"])
    print(f"DFE Pauli samples for eps={cfg['epsilon']}, delta={cfg['delta']}: {ell}")
    target, tid = load_target(cfg)
    rows = []
    for s in range(cfg["state_seeds"]):
        state = simulated_state(target, cfg["fidelity"], cfg["kind"], cfg["m1_dist"], cfg["seed"] + s)
        res = dfe_baseline(target, state, cfg["epsilon"], cfg["delta"], RngStream(cfg["seed"] + s, (9,)),
                           cap=cfg["cap"], shots=cfg["shots"] if cfg.get("shots_given") else None)
        rows.append({"target": tid, "seed": cfg["seed"] + s, "true_f": cfg["fidelity"], "f_hat": res.f_hat,
                     "f2_hat": res.f2_hat, "ell": res.ell, "ell_requested": res.ell_requested,
                     "capped": res.capped, "resampled": res.resampled})
    f2 = np.array([r["f2_hat"] for r in rows])
    se = float(f2.std(ddof=1) / np.sqrt(f2.size)) if f2.size > 1 else float("nan")
    print(f"mean F^2 estimate {f2.mean():.5f} +- {se:.5f} (true {cfg['fidelity'] ** 2:.5f})")
    return [write_csv(out / f"baseline-dfe-{tid}.csv", rows, cfg["force"])]


COMMANDS = {
    "select": cmd_select, "gen-data": cmd_gen_data, "train": cmd_train, "calibrate": cmd_calibrate,
    "predict": cmd_predict, "certify": cmd_certify, "benchmark": cmd_benchmark, "baseline": cmd_baseline,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve(args)
        # DFE defaults to exact expectations unless shots were asked for explicitly
        cfg["shots_given"] = args.command == "baseline" and getattr(args, "shots", None) is not None
        if cfg.get("k") is not None and cfg["k"] < 1:
            raise ConfigError("k must be >= 1")
        outputs = COMMANDS[args.command](cfg)
        echo_manifest(cfg, args.command, outputs)
    except (ConfigError, FileExistsError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataIntegrityError as exc:
        print(f"data integrity error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - mapped to the runtime exit code
        log.debug("runtime failure", exc_info=True)
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
