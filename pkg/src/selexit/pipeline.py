"""Run-directory phases: every phase reads the manifest, writes its artifacts
and records their checksums back into the manifest.

Layout::

    <run>/manifest.json
    <run>/data/{train,val,test,test_shifted}.csv
    <run>/model/{ec_model,model}.json
    <run>/dc/{profiles,dc_report}.csv
    <run>/reports/...
"""

from __future__ import annotations

import copy
import csv
import hashlib
import json
import logging
from importlib import resources
from pathlib import Path

import numpy as np

from .data import Dataset, gen_mixture, load_csv, save_csv, shift, train_val_test_split
from .dc_data import HardnessLabeledSet, label_hard, profile, read_profiles_csv, write_profiles_csv
from .dc_training import train_dcs
from .ec_training import TrainConfig, train_ecs
from .gating import (
    GoldOracle,
    ScoreTable,
    Thresholds,
    baseline_at_coverage,
    baseline_sr_table,
    evaluate,
    evaluate_table,
    write_metrics_csv,
)
from .model import MultiExitModel
from .theory import verify_model_bound
from .tuning import grid_search, risk_coverage_curve, write_curve_csv

log = logging.getLogger(__name__)

CONFIG_SCHEMA = "selexit.config/1"
MANIFEST_SCHEMA = "selexit.manifest/1"
EVAL_SETS = ("test", "test_shifted")


class PipelineError(RuntimeError):
    """A phase cannot run (missing inputs, wrong order, bad config)."""


def default_config() -> dict:
    return json.loads(resources.files("selexit").joinpath("configs/toy.json").read_text())


def load_config(path) -> dict:
    """Read a config document, or pull the config out of a manifest."""
    doc = json.loads(Path(path).read_text())
    if doc.get("schema") == MANIFEST_SCHEMA:
        return doc["config"]
    if doc.get("schema") != CONFIG_SCHEMA:
        raise PipelineError(f"{path}: unknown schema {doc.get('schema')!r}")
    return doc


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class Run:
    """A run directory plus its manifest."""

    def __init__(self, root):
        self.root = Path(root)
        self.manifest_path = self.root / "manifest.json"

    def path(self, rel) -> Path:
        return self.root / rel

    def exists(self) -> bool:
        return self.manifest_path.exists()

    def read(self) -> dict:
        if not self.exists():
            raise PipelineError(f"no manifest in {self.root}; run gen-data first")
        return json.loads(self.manifest_path.read_text())

    def write(self, manifest: dict) -> None:
        self.manifest_path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")

    def record(self, manifest: dict, phase: str, files, **extra) -> None:
        sums = {}
        for rel in files:
            s = sha256_file(self.path(rel))
            manifest["artifacts"][rel] = s
            sums[rel] = s
        digest = hashlib.sha256(json.dumps(sums, sort_keys=True).encode()).hexdigest()
        manifest["phases"][phase] = {"checksum": digest, "artifacts": sorted(sums), **extra}
        self.write(manifest)

    def require(self, manifest, phase):
        if phase not in manifest["phases"]:
            raise PipelineError(f"phase {phase!r} has not been run in {self.root}")

    def dataset(self, name, manifest) -> Dataset:
        classes = manifest["config"]["data"]["classes"]
        split = "test" if name.startswith("test") else name
        return load_csv(self.path(f"data/{name}.csv"), classes, split)


def _train_config(section: dict, seed: int) -> TrainConfig:
    keys = TrainConfig.__dataclass_fields__
    return TrainConfig(seed=seed, **{k: v for k, v in section.items() if k in keys})


# -- phases -------------------------------------------------------------------


def gen_data(run: Run, config: dict, seed: int | None = None) -> dict:
    config = copy.deepcopy(config)
    if seed is not None:
        config["seed"] = seed
    seed = config["seed"]
    d = config["data"]
    ds = gen_mixture(d["dim"], d["classes"], d["overlap"], d["samples"], seed,
                     d.get("fake_fraction", 0.0), d.get("fake_offset", 1.5))
    train, val, test = train_val_test_split(ds, tuple(d.get("splits", (0.6, 0.2, 0.2))), seed)
    sh = config.get("shift", {"kind": "noise", "magnitude": 0.0})
    shifted = shift(test, sh["kind"], sh["magnitude"], seed)
    run.path("data").mkdir(parents=True, exist_ok=True)
    for name, part in (("train", train), ("val", val), ("test", test), ("test_shifted", shifted)):
        save_csv(part, run.path(f"data/{name}.csv"))
    m = config["model"]
    manifest = {
        "schema": MANIFEST_SCHEMA,
        "seed": seed,
        "config": config,
        "dataset": ds.note,
        "model_shape": {"n_layers": m["n_layers"], "in_width": d["dim"],
                        "hidden_width": m["hidden_width"], "n_classes": d["classes"]},
        "k_percent": config.get("k_percent", 33),
        "grids": {"alpha": config["alpha_grid"], "beta": config["beta_grid"]},
        "thresholds": None,
        "artifacts": {},
        "phases": {},
    }
    files = [f"data/{n}.csv" for n in ("train", "val", "test", "test_shifted")]
    run.record(manifest, "gen-data", files)
    return manifest


def train_ec(run: Run) -> dict:
    manifest = run.read()
    run.require(manifest, "gen-data")
    cfg, seed = manifest["config"], manifest["seed"]
    shape = manifest["model_shape"]
    train, val = run.dataset("train", manifest), run.dataset("val", manifest)
    model = MultiExitModel.build(shape["in_width"], shape["hidden_width"], shape["n_layers"],
                                 shape["n_classes"], seed, cfg["model"].get("activation", "relu"),
                                 cfg["model"].get("shared_dc", False))
    model, result = train_ecs(model, train, _train_config(cfg["ec_train"], seed), val=val)
    run.path("model").mkdir(exist_ok=True)
    run.path("reports").mkdir(exist_ok=True)
    model.save(run.path("model/ec_model.json"))
    result.write_csv(run.path("reports/ec_log.csv"))
    run.record(manifest, "train-ec", ["model/ec_model.json", "reports/ec_log.csv"],
               best_epoch=result.best_epoch, params_sha256=model.checksum("ec"))
    return manifest


def build_dc_data(run: Run, k_percent: float | None = None) -> dict:
    manifest = run.read()
    run.require(manifest, "train-ec")
    if k_percent is not None:
        manifest["k_percent"] = k_percent
    model = MultiExitModel.load(run.path("model/ec_model.json"))
    train = run.dataset("train", manifest)
    labeled = label_hard(profile(model, train), manifest["k_percent"], train.X)
    run.path("dc").mkdir(exist_ok=True)
    write_profiles_csv(labeled, run.path("dc/profiles.csv"))
    run.record(manifest, "build-dc-data", ["dc/profiles.csv"], n_hard=labeled.n_hard)
    return manifest


def train_dc(run: Run) -> dict:
    manifest = run.read()
    run.require(manifest, "build-dc-data")
    model = MultiExitModel.load(run.path("model/ec_model.json"))
    train = run.dataset("train", manifest)
    profiles, z = read_profiles_csv(run.path("dc/profiles.csv"))
    ids = np.array([p.sample_id for p in profiles])
    labeled = HardnessLabeledSet(ids, train.X[ids], z, manifest["k_percent"], profiles)
    frozen = model.checksum("ec")
    model, result = train_dcs(model, labeled, _train_config(manifest["config"]["dc_train"],
                                                            manifest["seed"]))
    if model.checksum("ec") != frozen:
        raise PipelineError("backbone or exit heads changed during deferral training")
    model.save(run.path("model/model.json"))
    result.write_csv(run.path("dc/dc_report.csv"))
    run.record(manifest, "train-dc", ["model/model.json", "dc/dc_report.csv"],
               q_d=[float(q) for q in result.q_d], params_sha256=model.checksum("all"))
    return manifest


def _trained_model(run, manifest) -> MultiExitModel:
    run.require(manifest, "train-dc")
    return MultiExitModel.load(run.path("model/model.json"))


def tune(run: Run) -> dict:
    manifest = run.read()
    model = _trained_model(run, manifest)
    val = run.dataset("val", manifest)
    th, grid = grid_search(model, val, manifest["grids"]["alpha"], manifest["grids"]["beta"],
                           min_coverage=manifest["config"].get("min_coverage", 0.0))
    write_metrics_csv(grid, run.path("reports/grid.csv"), model.n_layers)
    manifest["thresholds"] = {"alpha": th.alpha, "beta": th.beta}
    run.record(manifest, "tune", ["reports/grid.csv"])
    return manifest


def _thresholds(manifest, alpha=None, beta=None) -> Thresholds:
    chosen = manifest.get("thresholds") or {}
    a = alpha if alpha is not None else chosen.get("alpha")
    b = beta if beta is not None else chosen.get("beta")
    if a is None or b is None:
        raise PipelineError("no thresholds: run tune or pass --alpha and --beta")
    return Thresholds(a, b)


def _write_predictions(path, table, kind, layer, labels):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "decision", "layer", "label", "gold"])
        for k in range(len(kind)):
            exit_ = kind[k] == 0
            pred = int(table.pred[k, layer[k] - 1]) if exit_ else int(labels[k])
            w.writerow([k, "exit" if exit_ else "defer", int(layer[k]), pred, int(labels[k])])


def infer(run: Run, alpha=None, beta=None, data_path=None) -> dict:
    """Gate the test sets (or a user CSV) and write metrics and predictions."""
    manifest = run.read()
    model = _trained_model(run, manifest)
    th = _thresholds(manifest, alpha, beta)
    if data_path is not None:
        sets = {"custom": load_csv(data_path, model.n_classes, "test")}
    else:
        sets = {name: run.dataset(name, manifest) for name in EVAL_SETS}
    files, summary = [], {}
    for name, ds in sets.items():
        table = ScoreTable.from_model(model, ds)
        m, kind, layer = evaluate_table(table, th)
        m_oracle = evaluate(model, ds, th, GoldOracle(ds.y), table)
        base = baseline_at_coverage(table, m.coverage)
        full = baseline_sr_table(table, 0.0)
        write_metrics_csv([m], run.path(f"reports/metrics_{name}.csv"), model.n_layers)
        write_metrics_csv([base, full], run.path(f"reports/baseline_{name}.csv"), model.n_layers)
        _write_predictions(run.path(f"reports/predictions_{name}.csv"), table, kind, layer, ds.y)
        files += [f"reports/metrics_{name}.csv", f"reports/baseline_{name}.csv",
                  f"reports/predictions_{name}.csv"]
        summary[name] = {
            "risk": m.risk, "risk_defined": m.risk_defined, "coverage": m.coverage,
            "speedup": m.speedup, "deferrals": m.deferrals,
            "system_accuracy": m_oracle.system_accuracy,
            "layer_risk": [None if np.isnan(r) else float(r) for r in m.layer_risk()],
            "layer_covered": m.layer_covered.tolist(),
            "layer_miscovered": m.layer_miscovered.tolist(),
            "baseline_matched_risk": base.risk, "baseline_matched_coverage": base.coverage,
            "full_coverage_risk": full.risk,
        }
    run.record(manifest, "infer", files, alpha=th.alpha, beta=th.beta, results=summary)
    return manifest


def curve(run: Run, alpha=None) -> dict:
    manifest = run.read()
    model = _trained_model(run, manifest)
    a = alpha if alpha is not None else _thresholds(manifest).alpha
    betas = manifest["config"].get("beta_sweep") or [round(0.05 * i, 2) for i in range(21)]
    files = []
    for name in EVAL_SETS:
        ds = run.dataset(name, manifest)
        table = ScoreTable.from_model(model, ds)
        pts = risk_coverage_curve(None, None, a, betas, table=table)
        write_curve_csv(pts, run.path(f"reports/curve_{name}.csv"))
        base = [baseline_at_coverage(table, p.coverage) for p in pts]
        with open(run.path(f"reports/curve_baseline_{name}.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["alpha", "coverage", "risk"])
            for b in base:
                w.writerow([repr(b.alpha), repr(b.coverage), repr(b.risk)])
        files += [f"reports/curve_{name}.csv", f"reports/curve_baseline_{name}.csv"]
    run.record(manifest, "curve", files, alpha=a)
    return manifest


def verify_bound(run: Run, gamma: float | None = None):
    manifest = run.read()
    run.require(manifest, "infer")
    g = gamma if gamma is not None else manifest["config"].get("gamma", 0.1)
    res = manifest["phases"]["infer"]["results"]
    if "test" not in res:
        raise PipelineError("verify-bound needs infer results on the test split")
    t = res["test"]
    q_d = manifest["phases"]["train-dc"]["q_d"]
    covered = int(sum(t["layer_covered"]))
    report = verify_model_bound(t["layer_covered"], t["layer_miscovered"], q_d, g,
                                t["risk"], covered)
    run.path("reports/bound_report.txt").write_text(report.to_text())
    run.record(manifest, "verify-bound", ["reports/bound_report.txt"], gamma=g)
    return manifest, report


def report(run: Run) -> str:
    """Assemble one summary of everything the run has produced."""
    manifest = run.read()
    lines = [f"seed: {manifest['seed']}", f"dataset: {manifest['dataset']}"]
    shape = manifest["model_shape"]
    lines.append("model: {n_layers} layers, width {hidden_width}, {n_classes} classes".format(**shape))
    lines.append(f"K: {manifest['k_percent']}%")
    phases = manifest["phases"]
    if "train-dc" in phases:
        lines.append("deferral holdout error q_d: " + ", ".join(f"{q:.3f}" for q in phases["train-dc"]["q_d"]))
    if manifest.get("thresholds"):
        lines.append("thresholds: alpha={alpha} beta={beta}".format(**manifest["thresholds"]))
    for name, r in phases.get("infer", {}).get("results", {}).items():
        lines.append(
            f"{name}: risk {r['risk']:.4f} coverage {r['coverage']:.4f} speedup {r['speedup']:.3f}x "
            f"| softmax-response at matched coverage: risk {r['baseline_matched_risk']:.4f} "
            f"| full coverage risk {r['full_coverage_risk']:.4f}"
        )
    if run.path("reports/bound_report.txt").exists():
        lines.append("bound check: " + " ".join(run.path("reports/bound_report.txt").read_text().split()))
    lines.append("phases: " + ", ".join(f"{p}={v['checksum'][:12]}" for p, v in sorted(phases.items()) if p != "report"))
    text = "\n".join(lines) + "\n"
    run.path("reports").mkdir(exist_ok=True)
    run.path("reports/summary.txt").write_text(text)
    run.record(manifest, "report", ["reports/summary.txt"])
    return text


def run_all(run: Run, config: dict, seed=None, k_percent=None, gamma=None) -> dict:
    gen_data(run, config, seed)
    train_ec(run)
    build_dc_data(run, k_percent)
    train_dc(run)
    tune(run)
    infer(run)
    curve(run)
    verify_bound(run, gamma)
    report(run)
    return run.read()
