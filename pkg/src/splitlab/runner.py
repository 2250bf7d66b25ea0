"""Experiment orchestration: defense sweeps, attack grids, reports and plots."""

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from splitlab import datakit, theory
from splitlab.attacks import AttackConfig, clustering_attack, fine_tuning_attack, scratch_baseline
from splitlab.config import config_hash, sweep_values
from splitlab.errors import DivergenceError, SchemaError
from splitlab.evaluation import angular_distance_histogram, bottom_model_advantage
from splitlab.losses import LossConfig
from splitlab.nn import build_mlp, load_checkpoint, mlp_specs, save_checkpoint
from splitlab.protocol import TrainConfig, split_train
from splitlab.svg import PALETTE, Chart, line_chart

log = logging.getLogger(__name__)

RESULT_COLUMNS = [
    "config_hash", "base_seed", "dataset", "defense", "strength", "trial", "seed", "status", "test_accuracy",
    "best_epoch", "attack_kind", "k", "attack_seed", "attack_accuracy", "baseline_accuracy", "advantage",
]
SUMMARY_COLUMNS = [
    "config_hash", "base_seed", "dataset", "defense", "strength", "attack_kind", "k", "n_runs", "n_diverged",
    "test_accuracy_mean", "test_accuracy_std", "attack_accuracy_mean", "attack_accuracy_std",
    "baseline_accuracy_mean", "baseline_accuracy_std", "advantage_mean", "perfect",
]


def derive_seed(*parts):
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def build_dataset(cfg):
    d = cfg["dataset"]
    kind = d["kind"]
    sizes = tuple(d["sizes"]) if d["sizes"] else None
    if kind == "blobs":
        return datakit.gaussian_blobs(d["n_classes"], d["n_features"], d["n_per_class"], d["center_scale"],
                                      d["noise"], seed=d["seed"], sizes=sizes)
    if kind == "shells":
        return datakit.concentric_shells(d["n_classes"], d["n_features"], d["n_per_class"], seed=d["seed"],
                                         radius_gap=d["radius_gap"])
    if kind == "csv":
        return datakit.load_csv(d["path"], d["label_column"], d["n_classes"] or None, seed=d["seed"], sizes=sizes)
    if kind == "idx":
        xtr = datakit.read_idx_images(d["images"])
        ytr = datakit.read_idx_labels(d["labels"])
        xte = datakit.read_idx_images(d["test_images"])
        yte = datakit.read_idx_labels(d["test_labels"])
        if d["limit_train"]:
            xtr, ytr = xtr[: d["limit_train"]], ytr[: d["limit_train"]]
        if d["limit_test"]:
            xte, yte = xte[: d["limit_test"]], yte[: d["limit_test"]]
        flat = lambda a: a.reshape(len(a), -1).astype(np.float64) / 255.0  # noqa: E731
        return datakit.concat_partitions((flat(xtr), ytr.astype(np.int64)), (flat(xte), yte.astype(np.int64)),
                                         d["n_classes"], seed=d["seed"])
    raise SchemaError(f"unknown dataset kind {kind!r}")


def dataset_name(cfg):
    d = cfg["dataset"]
    return Path(d["path"]).stem if d["kind"] == "csv" else d["kind"]


def model_specs(cfg, data, defense):
    dims = [data.n_features] + list(cfg["model"]["hidden"]) + [data.n_classes]
    specs, split = mlp_specs(dims, cfg["model"]["activation"], split_norm=defense in ("pe", "dcor"))
    if cfg["model"]["split_index"]:
        split = cfg["model"]["split_index"]
    return specs, split


def loss_config(cfg, defense, strength):
    d = cfg["defense"]
    if defense == "label_dp":
        return LossConfig("label_dp", flip_ratio=strength)
    if defense == "vanilla":
        return LossConfig()
    return LossConfig(defense, alpha=strength, delta=d["delta"], metric=d["metric"], reduction=d["reduction"])


def train_config(cfg):
    t = cfg["training"]
    return TrainConfig(epochs=t["epochs"], batch_size=t["batch_size"], lr=t["lr"], patience=t["patience"])


def attack_config(cfg, kind, k, seed):
    a = cfg["attack"]
    return AttackConfig(kind=kind, leaked_k=k, max_epochs=a["max_epochs"], stop_error=a["stop_error"],
                        restarts=a["restarts"], seed=seed, lr=cfg["training"]["lr"], n_init=a["n_init"],
                        max_iter=a["max_iter"])


def attack_rows(cfg, model, data, base, trial):
    """Attack grid against one trained model; one row per attack trial."""
    a = cfg["attack"]
    attack_split = a["split_index"] or model.split_index
    top_specs = model.specs[attack_split:]
    scratch_specs, scratch_split = model_specs(cfg, data, "vanilla")
    xt, yt = data.test
    rows = []
    for kind in a["kinds"]:
        ks = a["k"] if kind == "fine_tune" else [0]
        for k in ks:
            for at in range(a["trials"]):
                seed = derive_seed(cfg["seed"], trial, 1000 + at)
                if kind == "fine_tune":
                    leak = datakit.sample_leak(*data.train, data.n_classes, k, seed)
                    rep = fine_tuning_attack(model, top_specs, leak, (xt, yt), attack_config(cfg, kind, k, seed),
                                             data.n_classes, attack_split)
                    null = scratch_baseline(scratch_specs, scratch_split, leak, (xt, yt),
                                            attack_config(cfg, "scratch", k, seed), data.n_classes)
                else:
                    rep = clustering_attack(model, xt, yt, data.n_classes, seed, a["n_init"], a["max_iter"],
                                            attack_split)
                    null = clustering_attack(None, xt, yt, data.n_classes, seed, a["n_init"], a["max_iter"])
                adv = bottom_model_advantage([null], [rep])
                rows.append(dict(base, attack_kind=kind, k=k, attack_seed=seed, attack_accuracy=rep.accuracy,
                                 baseline_accuracy=null.accuracy, advantage=adv.advantage))
    return rows


def run_cell(cfg, defense, strength, trial, out_dir, with_attacks=True):
    """Train one (defense, strength, trial) model, checkpoint it, run attacks."""
    data = build_dataset(cfg)
    seed = derive_seed(cfg["seed"], trial)
    specs, split = model_specs(cfg, data, defense)
    model = build_mlp(specs, split, seed)
    lcfg = loss_config(cfg, defense, strength)
    base = {
        "config_hash": config_hash(cfg), "base_seed": cfg["seed"], "dataset": dataset_name(cfg), "defense": defense,
        "strength": float(strength), "trial": trial, "seed": seed, "status": "ok",
        "test_accuracy": float("nan"), "best_epoch": 0, "attack_kind": "none", "k": 0, "attack_seed": 0,
        "attack_accuracy": float("nan"), "baseline_accuracy": float("nan"), "advantage": float("nan"),
    }
    try:
        result = split_train(model, data, lcfg, train_config(cfg), seed=seed)
    except DivergenceError as exc:
        log.warning("%s", exc)
        return [dict(base, status="diverged")]
    trained = result.model
    xt, yt = data.test
    base["test_accuracy"] = float(np.mean(np.argmax(trained.predict_logits(xt), axis=1) == yt))
    base["best_epoch"] = result.best_epoch
    ckpt_dir = Path(out_dir) / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(trained, ckpt_dir / f"{defense}_{strength:g}_t{trial}.ckpt", {
        "defense": defense, "strength": float(strength), "trial": trial, "seed": seed,
        "loss_config": lcfg.__dict__, "train_config": result.meta["train_config"],
        "selection_rule": result.selection_rule, "best_epoch": result.best_epoch,
        "config_hash": base["config_hash"],
    })
    rows = [base]
    if with_attacks:
        rows += attack_rows(cfg, trained, data, base, trial)
    return rows


def _cells(cfg):
    kind = cfg["defense"]["kind"]
    cells = []
    if cfg["defense"]["include_vanilla"] and kind != "vanilla":
        cells.append(("vanilla", 0.0))
    cells += [(kind, float(v)) for v in sweep_values(cfg)]
    return [(d, s, t) for d, s in cells for t in range(cfg["training"]["trials"])]


def _sort_key(row):
    return (row["defense"], row["strength"], row["trial"], row["attack_kind"], row["k"], row["attack_seed"])


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    return str(v)


def write_csv(rows, columns, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])


def _mean_std(vals):
    vals = [v for v in vals if not math.isnan(v)]
    if not vals:
        return float("nan"), float("nan")
    return float(np.mean(vals)), float(np.std(vals))


def summarize(rows):
    """Means/stddevs per (defense, strength, attack kind, k); diverged runs excluded."""
    from splitlab.attacks import AttackReport

    groups = {}
    for r in rows:
        key = (r["defense"], r["strength"], r["attack_kind"], r["k"])
        groups.setdefault(key, []).append(r)
    diverged = {}
    for r in rows:
        if r["status"] == "diverged":
            diverged[(r["defense"], r["strength"])] = diverged.get((r["defense"], r["strength"]), 0) + 1
    out = []
    for (defense, strength, kind, k), rs in sorted(groups.items()):
        ok = [r for r in rs if r["status"] == "ok"]
        if kind == "none":
            n_div = diverged.get((defense, strength), 0)
        else:
            n_div = 0
        ta = _mean_std([r["test_accuracy"] for r in ok])
        aa = _mean_std([r["attack_accuracy"] for r in ok])
        ba = _mean_std([r["baseline_accuracy"] for r in ok])
        adv, perfect = float("nan"), ""
        if kind != "none" and ok:
            rec = bottom_model_advantage(
                [AttackReport("baseline", k, [r["baseline_accuracy"]]) for r in ok],
                [AttackReport("baseline", k, [r["attack_accuracy"]]) for r in ok],
            )
            adv, perfect = rec.advantage, rec.perfect
        out.append({
            "config_hash": rs[0]["config_hash"], "base_seed": rs[0]["base_seed"], "dataset": rs[0]["dataset"],
            "defense": defense,
            "strength": strength, "attack_kind": kind, "k": k, "n_runs": len(rs), "n_diverged": n_div,
            "test_accuracy_mean": ta[0], "test_accuracy_std": ta[1],
            "attack_accuracy_mean": aa[0], "attack_accuracy_std": aa[1],
            "baseline_accuracy_mean": ba[0], "baseline_accuracy_std": ba[1],
            "advantage_mean": adv, "perfect": perfect,
        })
    return out


def run_experiment(cfg, out_dir=None, jobs=1, with_attacks=True):
    """Run every (sweep value, trial) cell; returns ``(rows, summary, exit_code)``.

    Writes ``results.csv`` (long form) and ``summary.csv`` under ``out_dir``.
    Exit code 2 means every run of some sweep value diverged.
    """
    out_dir = Path(out_dir or cfg["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    cells = _cells(cfg)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(run_cell, cfg, d, s, t, out_dir, with_attacks) for d, s, t in cells]
            chunks = [f.result() for f in futures]
    else:
        chunks = [run_cell(cfg, d, s, t, out_dir, with_attacks) for d, s, t in cells]
    rows = sorted((r for c in chunks for r in c), key=_sort_key)
    summary = summarize(rows)
    write_csv(rows, RESULT_COLUMNS, out_dir / "results.csv")
    write_csv(summary, SUMMARY_COLUMNS, out_dir / "summary.csv")
    status = {}
    for r in rows:
        if r["attack_kind"] == "none":
            status.setdefault((r["defense"], r["strength"]), []).append(r["status"])
    code = 2 if any(all(s == "diverged" for s in v) for v in status.values()) else 0
    return rows, summary, code


def attack_checkpoints(cfg, paths, out_dir):
    """Attack grid against saved checkpoints; writes ``attacks.csv``."""
    data = build_dataset(cfg)
    xt, yt = data.test
    rows = []
    for path in paths:
        model, meta = load_checkpoint(path)
        trial = int(meta.get("trial", 0))
        base = {
            "config_hash": meta.get("config_hash", config_hash(cfg)), "base_seed": cfg["seed"],
            "dataset": dataset_name(cfg),
            "defense": meta.get("defense", "unknown"), "strength": float(meta.get("strength", 0.0)),
            "trial": trial, "seed": int(meta.get("seed", model.seed or 0)), "status": "ok",
            "test_accuracy": float(np.mean(np.argmax(model.predict_logits(xt), axis=1) == yt)),
            "best_epoch": int(meta.get("best_epoch", 0)),
        }
        rows += attack_rows(cfg, model, data, base, trial)
    rows.sort(key=_sort_key)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_csv(rows, RESULT_COLUMNS, out_dir / "attacks.csv")
    write_csv(summarize(rows), SUMMARY_COLUMNS, out_dir / "attack_summary.csv")
    return rows


def evaluate_checkpoint(cfg, path, out_dir):
    """Test accuracy plus the same/different-class angular histogram of test embeddings."""
    data = build_dataset(cfg)
    model, meta = load_checkpoint(path)
    xt, yt = data.test
    acc = float(np.mean(np.argmax(model.predict_logits(xt), axis=1) == yt))
    hist = angular_distance_histogram(model.embed(xt), yt, cfg["eval"]["bins"])
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = Path(path).stem
    hist.to_csv(out_dir / f"{stem}_angles.csv")
    centers = list((hist.edges[:-1] + hist.edges[1:]) / 2)
    tot_s, tot_d = max(hist.same.sum(), 1), max(hist.diff.sum(), 1)
    svg = line_chart(
        [("same class", centers, list(hist.same / tot_s)), ("different class", centers, list(hist.diff / tot_d))],
        title=f"Angular distances ({stem})", xlabel="angle (rad)", ylabel="fraction of pairs",
    )
    (out_dir / f"{stem}_angles.svg").write_text(svg)
    report = {
        "checkpoint": str(path), "test_accuracy": acc, "median_same": hist.median_same,
        "median_diff": hist.median_diff, "mean_same": hist.mean_same, "mean_diff": hist.mean_diff,
        "meta": meta,
    }
    (out_dir / f"{stem}_eval.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    return report


# --- plots ------------------------------------------------------------------

PLOT_COLUMNS = ("defense", "strength", "attack_kind", "k", "test_accuracy_mean", "attack_accuracy_mean",
                "baseline_accuracy_mean")


def read_summary(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in PLOT_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise SchemaError(f"{path}: summary lacks columns {missing}")
        return list(reader)


def emit_tradeoff_plot(summary_path, out_path, attack_kind="fine_tune", k=4):
    """Test accuracy vs. attack accuracy, one series per defense.

    The gray band marks attack accuracy at or below the no-bottom-model
    baseline; dashed lines mark the vanilla test and attack accuracies.
    """
    rows = [r for r in read_summary(summary_path)
            if r["attack_kind"] == attack_kind and (attack_kind != "fine_tune" or int(r["k"]) == k)]
    pts = [(float(r["test_accuracy_mean"]), float(r["attack_accuracy_mean"])) for r in rows]
    pts = [p for p in pts if not any(math.isnan(v) for v in p)]
    baselines = [float(r["baseline_accuracy_mean"]) for r in rows if r["baseline_accuracy_mean"] != "nan"]
    vals = [v for p in pts for v in p] + baselines
    lo = min(vals + [1.0]) if vals else 0.0
    lim = (max(0.0, math.floor(lo * 10) / 10 - 0.05), 1.0)
    label = "fine-tuning" if attack_kind == "fine_tune" else "clustering"
    chart = Chart(lim, lim, f"{label} attack (k={k})" if attack_kind == "fine_tune" else f"{label} attack",
                  "test accuracy", "attack accuracy")
    if baselines:
        chart.rect_below(float(np.mean(baselines)))
    vanilla = [r for r in rows if r["defense"] == "vanilla"]
    if vanilla:
        chart.vline(float(vanilla[0]["test_accuracy_mean"]))
        chart.hline(float(vanilla[0]["attack_accuracy_mean"]))
    by_def = {}
    for r in rows:
        if r["defense"] != "vanilla":
            by_def.setdefault(r["defense"], []).append(r)
    for i, (defense, rs) in enumerate(sorted(by_def.items())):
        rs.sort(key=lambda r: float(r["strength"]))
        xs = [float(r["test_accuracy_mean"]) for r in rs]
        ys = [float(r["attack_accuracy_mean"]) for r in rs]
        chart.series(xs, ys, defense, PALETTE[i % len(PALETTE)])
    if vanilla:
        chart.series([float(vanilla[0]["test_accuracy_mean"])], [float(vanilla[0]["attack_accuracy_mean"])],
                     "vanilla", "#000000", line=False)
    svg = chart.render()
    Path(out_path).write_text(svg)
    return svg


# --- theory -----------------------------------------------------------------


def run_theory(cfg, out_dir, seed=0):
    """Particle, generalization-error and sampling-error checks as CSV (+ SVG trace)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tcfg = cfg["theory"]
    results = {}
    if "border_mass" in tcfg["experiments"]:
        t1 = tcfg["border_mass"]
        region = theory.Region(t1["region"], t1["size"], t1["dim"])
        res = theory.minimize_potential_energy(
            theory.ParticleSystem(t1["n"], region, iterations=t1["iterations"]), seed=seed)
        rng = np.random.default_rng(derive_seed(seed, 1))
        random_pe = [theory.riesz_energy(region.sample_uniform(t1["n"], rng)) for _ in range(t1["random_configs"])]
        mass = theory.border_mass(res.points, region, t1["eps"])
        row = {"n": t1["n"], "dim": t1["dim"], "region": t1["region"], "size": float(t1["size"]),
               "eps": float(t1["eps"]), "border_mass": mass, "final_pe": float(res.trace[-1]),
               "min_random_pe": float(min(random_pe)) if random_pe else float("nan"),
               "converged": res.converged, "iterations": res.iterations, "seed": seed}
        write_csv([row], list(row), out_dir / "border_mass.csv")
        write_csv([{"iteration": i, "pe": float(e)} for i, e in enumerate(res.trace)], ["iteration", "pe"],
                  out_dir / "pe_trace.csv")
        (out_dir / "pe_trace.svg").write_text(line_chart(
            [("PE", list(range(len(res.trace))), list(res.trace))],
            title="Riesz energy during minimization", xlabel="iteration", ylabel="energy"))
        results["border_mass"] = row
    if "sphere_error" in tcfg["experiments"]:
        e = tcfg["sphere_error"]
        rows = []
        for i, eps in enumerate(e["eps"]):
            est = theory.generalization_error_mc(
                theory.SphereHypothesisExperiment(e["d"], eps, e["samples"]), seed=derive_seed(seed, 2, i))
            rows.append({"d": e["d"], "eps": float(eps), "samples": e["samples"], "measured": est.measured,
                         "stderr": est.stderr, "bound": est.bound, "p1_zero": est.p1_zero,
                         "uniform_exact": float(eps / np.pi)})
        write_csv(rows, list(rows[0]) if rows else ["eps"], out_dir / "generalization.csv")
        results["sphere_error"] = rows
    if "scaling" in tcfg["experiments"]:
        s = tcfg["scaling"]
        rows = []
        for name in s["densities"]:
            tab = theory.sampling_error_scaling(theory.DensitySpec(name, s["kappa"]), s["m"], s["trials"],
                                                derive_seed(seed, 3), s["d"])
            for m, v, se in zip(tab.m_values, tab.mean_sq_angle, tab.stderr):
                rows.append({"density": name, "m": m, "mean_sq_angle": v, "stderr": se, "slope": tab.slope})
        write_csv(rows, ["density", "m", "mean_sq_angle", "stderr", "slope"], out_dir / "scaling.csv")
        results["scaling"] = rows
    return results


def checkpoints_in(out_dir):
    d = Path(out_dir) / "checkpoints"
    return sorted(d.glob("*.ckpt")) if d.is_dir() else []

