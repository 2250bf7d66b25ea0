"""Experiment configuration files (TOML, ``schema_version = 1``)."""

import copy
import hashlib
import json
import re
import sys

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from splitlab.errors import SplitLabError

SCHEMA_VERSION = 1

PE_ALPHAS = [0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0]
DCOR_ALPHAS = [1.0, 2.0, 4.0, 8.0, 16.0, 32.0]
FLIP_RATIOS = [0.01, 0.02, 0.04, 0.08, 0.16]

DEFAULTS = {
    "schema_version": SCHEMA_VERSION,
    "name": "experiment",
    "seed": 0,
    "out": "runs/experiment",
    "dataset": {
        "kind": "blobs",  # blobs | shells | csv | idx
        "n_classes": 4,
        "n_features": 16,
        "n_per_class": 725,
        "center_scale": 4.0,
        "noise": 1.0,
        "radius_gap": 2.0,
        "sizes": [2000, 300, 600],
        "seed": 0,
        "path": "",
        "label_column": "label",
        "images": "",
        "labels": "",
        "test_images": "",
        "test_labels": "",
        "limit_train": 0,
        "limit_test": 0,
    },
    "model": {
        "hidden": [32, 16],
        "activation": "leaky_relu",
        "split_index": 0,  # 0: the last dense layer
    },
    "defense": {
        "kind": "pe",
        "values": [],  # empty: the standard doubling sweep for the kind
        "include_vanilla": True,
        "metric": "angular",
        "reduction": "mean",
        "delta": 1e-7,
    },
    "training": {
        "epochs": 100,
        "batch_size": 64,
        "lr": 1e-3,
        "patience": 20,
        "trials": 3,
    },
    "attack": {
        "kinds": ["fine_tune", "cluster"],
        "k": [1, 4],
        "trials": 5,
        "restarts": 1,
        "max_epochs": 1000,
        "stop_error": 0.01,
        "n_init": 10,
        "max_iter": 100,
        "split_index": 0,  # 0: the model's split
        "checkpoint": "",
    },
    "eval": {
        "checkpoint": "",
        "bins": 36,
    },
    "plot": {
        "summary": "",
        "attack_kind": "fine_tune",
        "k": 4,
    },
    "theory": {
        "experiments": ["border_mass", "sphere_error", "scaling"],
        "border_mass": {
            "n": 128,
            "dim": 3,
            "region": "ball",
            "size": 1.0,
            "eps": 0.05,
            "iterations": 3000,
            "random_configs": 20,
        },
        "sphere_error": {
            "d": 3,
            "eps": [0.02, 0.05, 0.1],
            "samples": 1_000_000,
        },
        "scaling": {
            "d": 3,
            "m": [8, 16, 32, 64, 128],
            "trials": 2000,
            "densities": ["uniform", "boundary", "pole"],
            "kappa": 4.0,
        },
    },
}

CHOICES = {
    ("dataset", "kind"): ("blobs", "shells", "csv", "idx"),
    ("model", "activation"): ("leaky_relu", "tanh"),
    ("defense", "kind"): ("vanilla", "pe", "dcor", "label_dp"),
    ("defense", "metric"): ("angular", "euclidean"),
    ("defense", "reduction"): ("sum", "mean"),
}


class ConfigError(SplitLabError, ValueError):
    def __init__(self, message, path=None, line=None, column=None):
        loc = ""
        if path:
            loc = str(path)
            if line is not None:
                loc += f":{line}:{column or 1}"
            loc += ": "
        super().__init__(loc + message)
        self.path, self.line, self.column = path, line, column


def _locate(text, key):
    """1-based (line, column) of the first ``key =`` or ``[key]`` in ``text``."""
    if text is None:
        return None, None
    pat = re.compile(rf"^\s*(\[+\s*)?([\w.]*\.)?{re.escape(key)}\b", re.M)
    m = pat.search(text)
    if not m:
        return None, None
    line = text.count("\n", 0, m.start()) + 1
    col = m.start() - (text.rfind("\n", 0, m.start()) + 1) + 1
    return line, col


def _merge(base, override, text, path, prefix=()):
    for key, value in override.items():
        where = ".".join(prefix + (key,))
        if key not in base:
            line, col = _locate(text, key)
            raise ConfigError(f"unknown key '{where}'", path, line, col)
        default = base[key]
        if isinstance(default, dict):
            if not isinstance(value, dict):
                line, col = _locate(text, key)
                raise ConfigError(f"'{where}' must be a table", path, line, col)
            _merge(default, value, text, path, prefix + (key,))
            continue
        ok = (
            isinstance(value, type(default))
            or (isinstance(default, float) and isinstance(value, int) and not isinstance(value, bool))
            or (isinstance(default, list) and isinstance(value, list))
        )
        if isinstance(default, bool) != isinstance(value, bool):
            ok = False
        if not ok:
            line, col = _locate(text, key)
            raise ConfigError(
                f"'{where}' expects {type(default).__name__}, got {type(value).__name__}", path, line, col
            )
        choices = CHOICES.get(prefix + (key,))
        if choices and value not in choices:
            line, col = _locate(text, key)
            raise ConfigError(f"'{where}' must be one of {choices}, got {value!r}", path, line, col)
        base[key] = float(value) if isinstance(default, float) else value


def parse_config(text, path="<config>"):
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+), column (\d+)", str(exc))
        line, col = (int(m.group(1)), int(m.group(2))) if m else (None, None)
        raise ConfigError(f"syntax error: {exc}", path, line, col) from None
    version = raw.get("schema_version")
    if version != SCHEMA_VERSION:
        line, col = _locate(text, "schema_version")
        raise ConfigError(
            f"schema_version must be {SCHEMA_VERSION}, got {version!r}", path, line or 1, col or 1
        )
    cfg = copy.deepcopy(DEFAULTS)
    _merge(cfg, raw, text, path)
    _validate(cfg, text, path)
    return cfg


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from None
    return parse_config(text, path)


def default_config():
    return copy.deepcopy(DEFAULTS)


def _validate(cfg, text, path):
    def fail(key, msg):
        line, col = _locate(text, key)
        raise ConfigError(msg, path, line, col)

    values = cfg["defense"]["values"]
    if any(v <= 0 for v in values) or values != sorted(values):
        fail("values", "defense.values must be positive and sorted ascending")
    if cfg["training"]["trials"] < 1:
        fail("trials", "training.trials must be >= 1")
    if cfg["attack"]["trials"] < 1:
        fail("trials", "attack.trials must be >= 1")
    for kind in cfg["attack"]["kinds"]:
        if kind not in ("fine_tune", "cluster"):
            fail("kinds", f"unknown attack kind {kind!r}")
    if any(k < 1 for k in cfg["attack"]["k"]):
        fail("k", "attack.k values must be >= 1")
    if cfg["training"]["epochs"] < 0:
        fail("epochs", "training.epochs must be >= 0")
    for name in cfg["theory"]["experiments"]:
        if name not in ("border_mass", "sphere_error", "scaling"):
            fail("experiments", f"unknown theory experiment {name!r}")


def sweep_values(cfg):
    d = cfg["defense"]
    if d["values"]:
        return list(d["values"])
    return {
        "pe": PE_ALPHAS,
        "dcor": DCOR_ALPHAS,
        "label_dp": FLIP_RATIOS,
        "vanilla": [0.0],
    }[d["kind"]]


def config_hash(cfg):
    """Short digest of everything that determines results (not paths or jobs)."""
    c = copy.deepcopy(cfg)
    c.pop("out", None)
    c.pop("name", None)
    for section in ("eval", "plot"):
        c.pop(section, None)
    c["attack"].pop("checkpoint", None)
    blob = json.dumps(c, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:12]
