"""Experiment orchestration: configs, runs, checkpoints, sweeps and comparisons.

Configs are JSON documents with five sections (``topology``, ``data``,
``model``, ``protocol``, ``run``) plus ``algorithm`` and an optional
``sweep`` mapping dotted field paths to lists of values. A run writes
``metrics.csv``, ``topology.txt``, ``record.json`` and optional checkpoints
into its output directory.

One round is one exchange event: ``tau`` local SGD steps followed by one
neighbourhood exchange. ``protocol.rounds`` counts rounds, not SGD steps.
"""
from __future__ import annotations

import csv
import io
import itertools
import json
import math
import os
import re
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from . import baselines as bl
from .data import Federation, generate_linear_mixture, generate_rotation_classification, split_train_test
from .errors import (ConfigError, ConfigSyntaxError, ConfigValidationError, DivergenceError,
                     InvalidParameterError, UnknownKeyError)
from .graph import Topology, generate
from .metrics import compute_round_metrics, metrics_columns, metrics_row, risk_stats, summary_stats
from .metrics import client_accuracies
from .model import Objective, make_objective
from .protocol import FedSPDState, ProtocolConfig, finalize, init_state, mixture_models, run_round
from .rng import Streams

ALGORITHMS = ("fedspd",) + bl.BASELINES
OUT_ENV = "FEDSPD_OUT"


@dataclass(frozen=True)
class TopologySpec:
    kind: str = "er"
    n: int = 50
    degree: float = 8.0
    seed: int | None = None  # None: use run.seed


@dataclass(frozen=True)
class DataSpec:
    generator: str = "linear_mixture"
    points_per_client: int = 100
    dim: int = 5
    separation: float = 5.0
    noise_std: float = 0.1
    n_classes: int = 4
    class_sep: float = 3.0
    shared_sep: float = 0.5
    test_fraction: float = 0.2
    seed: int | None = None  # None: use run.seed


@dataclass(frozen=True)
class ModelSpec:
    kind: str | None = None  # None: linear for regression data, logistic for classification
    hidden: int = 16


@dataclass(frozen=True)
class RunSpec:
    seed: int = 0
    checkpoint_every: int = 0


@dataclass(frozen=True)
class ExperimentConfig:
    algorithm: str = "fedspd"
    topology: TopologySpec = field(default_factory=TopologySpec)
    data: DataSpec = field(default_factory=DataSpec)
    model: ModelSpec = field(default_factory=ModelSpec)
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    run: RunSpec = field(default_factory=RunSpec)
    sweep: dict = field(default_factory=dict)

    @property
    def topology_seed(self) -> int:
        return self.run.seed if self.topology.seed is None else self.topology.seed

    @property
    def data_seed(self) -> int:
        return self.run.seed if self.data.seed is None else self.data.seed

    @property
    def model_kind(self) -> str:
        if self.model.kind is not None:
            return self.model.kind
        return "linear" if self.data.generator == "linear_mixture" else "logistic"

    def to_dict(self) -> dict:
        d = {"algorithm": self.algorithm}
        for name in ("topology", "data", "model", "protocol", "run"):
            d[name] = asdict(getattr(self, name))
        if self.sweep:
            d["sweep"] = {k: list(v) for k, v in self.sweep.items()}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, run=replace(self.run, seed=int(seed)))


_SECTIONS = {"topology": TopologySpec, "data": DataSpec, "model": ModelSpec, "protocol": ProtocolConfig,
             "run": RunSpec}


# ---------------------------------------------------------------- parsing

def _locate(text, key):
    hits = [m.start() for m in re.finditer(r'"%s"\s*:' % re.escape(key), text)]
    pos = hits[1] if len(hits) > 1 else (hits[0] if hits else 0)
    line = text.count("\n", 0, pos) + 1
    return line, pos - (text.rfind("\n", 0, pos) + 1) + 1


class _DuplicateKey(Exception):
    def __init__(self, key):
        self.key = key


def _no_duplicates(pairs):
    out = {}
    for k, v in pairs:
        if k in out:
            raise _DuplicateKey(k)
        out[k] = v
    return out


def _load_json(text: str) -> dict:
    try:
        doc = json.loads(text, object_pairs_hook=_no_duplicates)
    except _DuplicateKey as e:
        line, col = _locate(text, e.key)
        raise ConfigSyntaxError(f"duplicate key {e.key!r}", line, col) from None
    except json.JSONDecodeError as e:
        raise ConfigSyntaxError(e.msg, e.lineno, e.colno) from None
    if not isinstance(doc, dict):
        raise ConfigSyntaxError("config document must be a JSON object", 1, 1)
    return doc


def _coerce(path, value, default, annotation):
    optional = "None" in str(annotation)
    if value is None:
        if optional:
            return None
        raise ConfigValidationError(path, "must not be null")
    kinds = str(annotation)
    if isinstance(default, bool) or kinds.startswith("bool"):
        if not isinstance(value, bool):
            raise ConfigValidationError(path, "must be a boolean")
        return value
    if "int" in kinds and "float" not in kinds:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigValidationError(path, "must be an integer")
        return value
    if "float" in kinds:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigValidationError(path, "must be a number")
        return float(value)
    if "str" in kinds:
        if not isinstance(value, str):
            raise ConfigValidationError(path, "must be a string")
        return value
    return value


def _build_section(name, cls, raw):
    if not isinstance(raw, dict):
        raise ConfigValidationError(name, "must be an object")
    known = {f.name: f for f in fields(cls)}
    for k in raw:
        if k not in known:
            raise UnknownKeyError(f"{name}.{k}")
    kwargs = {}
    defaults = cls()
    for k, v in raw.items():
        kwargs[k] = _coerce(f"{name}.{k}", v, getattr(defaults, k), known[k].type)
    return cls(**kwargs)


def _check(cond, path, constraint):
    if not cond:
        raise ConfigValidationError(path, constraint)


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    """Check every field constraint; returns ``cfg`` unchanged."""
    p, t, d, m, r = cfg.protocol, cfg.topology, cfg.data, cfg.model, cfg.run
    _check(cfg.algorithm in ALGORITHMS, "algorithm", f"must be one of {', '.join(ALGORITHMS)}")
    _check(p.rounds >= 1, "protocol.rounds", "T must be >= 1")
    _check(p.tau >= 1, "protocol.tau", "tau must be >= 1")
    _check(p.n_clusters >= 1, "protocol.n_clusters", "S must be >= 1")
    _check(p.lr >= 0 and math.isfinite(p.lr), "protocol.lr", "learning rate must be finite and >= 0")
    _check(0 < p.lr_decay <= 1, "protocol.lr_decay", "must be in (0, 1]")
    _check(p.lr_decay_every >= 1, "protocol.lr_decay_every", "must be >= 1")
    _check(p.batch_size is None or p.batch_size >= 1, "protocol.batch_size", "must be >= 1 or null")
    _check(p.fine_tune_epochs >= 0, "protocol.fine_tune_epochs", "must be >= 0")
    _check(p.lr_ft >= 0, "protocol.lr_ft", "must be >= 0")
    _check(p.workers >= 1, "protocol.workers", "must be >= 1")
    _check(p.init_scale >= 0 and p.init_perturb >= 0, "protocol.init_scale", "init scales must be >= 0")
    _check(t.kind in ("er", "ba", "rgg", "complete", "path"), "topology.kind", "must be er, ba, rgg, complete or path")
    _check(t.n >= 1, "topology.n", "must be >= 1")
    _check(t.degree > 0, "topology.degree", "must be > 0")
    _check(d.generator in ("linear_mixture", "rotation_classification"), "data.generator",
           "must be linear_mixture or rotation_classification")
    _check(d.points_per_client >= 2, "data.points_per_client", "must be >= 2")
    _check(d.dim >= 1, "data.dim", "must be >= 1")
    _check(0 < d.test_fraction < 1, "data.test_fraction", "must be in (0, 1)")
    _check(d.separation >= 0 and d.noise_std >= 0, "data.separation", "separation and noise_std must be >= 0")
    _check(d.n_classes >= 2, "data.n_classes", "must be >= 2")
    _check(m.kind in (None, "linear", "logistic", "mlp"), "model.kind", "must be linear, logistic or mlp")
    _check(m.hidden >= 1, "model.hidden", "must be >= 1")
    _check((cfg.model_kind == "linear") == (d.generator == "linear_mixture"), "model.kind",
           "regression data needs the linear model and classification data a classifier")
    for name, seed in (("run.seed", r.seed), ("topology.seed", t.seed), ("data.seed", d.seed)):
        _check(seed is None or seed >= 0, name, "seeds must be >= 0")
    _check(r.checkpoint_every >= 0, "run.checkpoint_every", "must be >= 0")
    return cfg


def config_from_dict(doc: dict) -> ExperimentConfig:
    for k in doc:
        if k not in ("algorithm", "sweep") and k not in _SECTIONS:
            raise UnknownKeyError(k)
    kwargs = {name: _build_section(name, cls, doc[name]) for name, cls in _SECTIONS.items() if name in doc}
    if "algorithm" in doc:
        _check(isinstance(doc["algorithm"], str), "algorithm", "must be a string")
        kwargs["algorithm"] = doc["algorithm"]
    sweep = doc.get("sweep", {})
    _check(isinstance(sweep, dict), "sweep", "must be an object of field path -> list")
    for path, values in sweep.items():
        _check(isinstance(values, list) and values, f"sweep.{path}", "must be a non-empty list")
        _resolve_path(path)
    cfg = ExperimentConfig(**kwargs, sweep={k: tuple(v) for k, v in sweep.items()})
    validate(cfg)
    for cell in expand_sweep(cfg):
        validate(cell)
    return cfg


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate a JSON experiment config."""
    return config_from_dict(_load_json(text))


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())


def _resolve_path(path: str):
    if path == "algorithm":
        return None, "algorithm"
    section, _, key = path.partition(".")
    if section not in _SECTIONS:
        raise UnknownKeyError(path)
    if key not in {f.name for f in fields(_SECTIONS[section])}:
        raise UnknownKeyError(path)
    return section, key


def expand_sweep(cfg: ExperimentConfig) -> list:
    """Cross-product of the sweep lists, in key order; a config without a sweep expands to itself."""
    if not cfg.sweep:
        return [cfg]
    keys = list(cfg.sweep)
    cells = []
    for combo in itertools.product(*(cfg.sweep[k] for k in keys)):
        doc = cfg.to_dict()
        doc.pop("sweep", None)
        for path, value in zip(keys, combo):
            section, key = _resolve_path(path)
            if section is None:
                doc[key] = value
            else:
                doc[section][key] = value
        cells.append(config_from_dict(doc))
    return cells


def cell_name(base: ExperimentConfig, cell: ExperimentConfig) -> str:
    """Directory-safe name built from the swept values of ``cell``."""
    parts = []
    for path in base.sweep:
        section, key = _resolve_path(path)
        value = cell.algorithm if section is None else getattr(getattr(cell, section), key)
        parts.append(f"{key}={value}")
    return "_".join(parts) or "run"


# ---------------------------------------------------------------- building blocks

def build_topology(cfg: ExperimentConfig) -> Topology:
    t = cfg.topology
    return generate(t.kind, t.n, t.degree, cfg.topology_seed)


def build_data(cfg: ExperimentConfig):
    """Returns ``(train, test)`` federations."""
    d, n = cfg.data, cfg.topology.n
    if d.generator == "linear_mixture":
        fed = generate_linear_mixture(n, d.points_per_client, d.dim, d.separation, d.noise_std, cfg.data_seed)
    else:
        fed = generate_rotation_classification(n, d.points_per_client, d.dim, d.n_classes, cfg.data_seed,
                                               class_sep=d.class_sep, shared_sep=d.shared_sep)
    return split_train_test(fed, d.test_fraction, cfg.data_seed)


def build_objective(cfg: ExperimentConfig) -> Objective:
    kind = cfg.model_kind
    n_classes = cfg.data.n_classes if kind != "linear" else None
    return make_objective(kind, cfg.data.dim, n_classes, cfg.model.hidden)


class _Driver:
    """Uniform init/step/evaluate surface over FedSPD and the baselines."""

    def __init__(self, cfg, topology, train, objective, streams):
        self.cfg, self.topology, self.train, self.objective, self.streams = cfg, topology, train, objective, streams
        self.kind = cfg.algorithm

    def init(self):
        if self.kind == "fedspd":
            return init_state(self.train, self.objective, self.cfg.protocol, self.streams)
        return bl.init_baseline_state(self.kind, self.train, self.objective, self.cfg.protocol, self.streams)

    def step(self, state):
        a = (self.train, self.objective, self.cfg.protocol, self.streams)
        if self.kind == "fedspd":
            return run_round(state, self.topology, *a)
        if self.kind == "dfl-fedavg":
            return bl.run_dfl_fedavg_round(state, self.topology, *a)
        if self.kind == "dfl-ifca":
            return bl.run_dfl_ifca_round(state, self.topology, *a)
        if self.kind == "dfl-fedem-style":
            return bl.run_dfl_fedem_style_round(state, self.topology, *a)
        if self.kind == "cfl-fedavg":
            return bl.run_cfl_fedavg_round(state, *a)
        return bl.run_local_round(state, *a)

    def evaluate(self, state):
        """``(centers, models, mixture, assignments)`` for per-round metrics."""
        if self.kind == "fedspd":
            return state.bank.centers, mixture_models(state.bank, state.mixture), state.mixture, state.assignments
        mixture = state.weights if self.kind in bl.MULTI_MODEL else None
        return state.bank.centers, state.models(), mixture, None

    def final_models(self, state):
        if self.kind != "fedspd":
            return state.models()
        p = self.cfg.protocol
        fed = self.train.with_assignments(state.assignments)
        return finalize(state.bank, state.mixture, fed, self.objective, p.fine_tune_epochs, p.lr_ft,
                        p.batch_size, self.streams)

    # checkpoint (de)serialization
    def pack(self, state) -> dict:
        out = {"centers": state.bank.centers, "round": np.array(state.round)}
        if self.kind == "fedspd":
            out["mixture"] = state.mixture
            out["assign_flat"] = np.concatenate(state.assignments)
            out["assign_lens"] = np.array([len(a) for a in state.assignments])
        else:
            out["weights"] = state.weights
        return out

    def unpack(self, arrs):
        from .protocol import ClusterBank
        rnd = int(arrs["round"])
        bank = ClusterBank(np.array(arrs["centers"]), rnd)
        if self.kind == "fedspd":
            cuts = np.cumsum(arrs["assign_lens"])[:-1]
            assignments = [a.astype(int) for a in np.split(arrs["assign_flat"], cuts)]
            return FedSPDState(bank, np.array(arrs["mixture"]), assignments, rnd)
        return bl.BaselineState(bank, np.array(arrs["weights"]), rnd)


# ---------------------------------------------------------------- records and output

@dataclass
class RunRecord:
    config: dict
    rows: list                 # one dict per round, keys = metrics_columns
    final: dict                # summary of the final personalized models
    status: str = "ok"         # ok | diverged
    error: str | None = None
    wall_time: float = 0.0
    version: str = __version__
    topology_seed: int = 0
    data_seed: int = 0
    out_dir: str | None = None

    @property
    def algorithm(self) -> str:
        return self.config["algorithm"]

    def to_json(self) -> str:
        return json.dumps(_jsonable(asdict(self)), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunRecord":
        return cls(**json.loads(text))

    @classmethod
    def load(cls, path) -> "RunRecord":
        return cls.from_json(Path(path).read_text())


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if math.isfinite(v) else None
    if isinstance(x, np.integer):
        return int(x)
    return x


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def format_row(row: list) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _final_summary(objective, models, train, test) -> dict:
    out = {}
    if objective.is_classifier:
        for name, fed in (("train", train), ("test", test)):
            st = summary_stats(client_accuracies(objective, models, fed))
            out.update({f"{name}_acc_{k}": v for k, v in zip(("mean", "min", "max", "std"), st.as_tuple())})
    for name, fed in (("train", train), ("test", test)):
        st = risk_stats(objective, models, fed)
        out.update({f"{name}_risk_{k}": v for k, v in zip(("mean", "min", "max", "std"), st.as_tuple())})
    return out


def _checkpoint_path(out_dir: Path, rnd: int) -> Path:
    return out_dir / "checkpoints" / f"round_{rnd:05d}.npz"


def _save_checkpoint(path: Path, driver, state, cfg, csv_lines, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    arrs = driver.pack(state)
    meta = json.dumps({"config": cfg.to_dict(), "csv": "".join(csv_lines), "rows": _jsonable(rows)})
    tmp = path.with_suffix(".tmp.npz")
    np.savez(tmp, meta=np.array(meta), **arrs)
    os.replace(tmp, path)


def load_checkpoint(path):
    """Returns ``(config_dict, csv_text, rows, arrays)`` from a checkpoint file."""
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["meta"]))
        arrs = {k: z[k] for k in z.files if k != "meta"}
    return meta["config"], meta["csv"], meta["rows"], arrs


def run_experiment(cfg: ExperimentConfig, out_dir=None, resume=None, checkpoint_every: int | None = None,
                   progress=None) -> RunRecord:
    """Run one configured experiment for ``protocol.rounds`` rounds.

    With ``out_dir`` the metrics CSV is appended and flushed every round, so a
    diverged run leaves its partial CSV behind. ``resume`` is a checkpoint
    written by an earlier run of the same config; the resumed run's outputs
    are identical to an uninterrupted one.
    """
    if cfg.sweep:
        raise ConfigError("config describes a sweep; use run_sweep")
    validate(cfg)
    t0 = time.perf_counter()
    every = cfg.run.checkpoint_every if checkpoint_every is None else checkpoint_every
    topology = build_topology(cfg)
    train, test = build_data(cfg)
    objective = build_objective(cfg)
    streams = Streams(cfg.run.seed)
    driver = _Driver(cfg, topology, train, objective, streams)
    S = cfg.protocol.n_clusters
    header = format_row(metrics_columns(S))

    if resume is not None:
        saved_cfg, csv_text, rows, arrs = load_checkpoint(resume)
        if saved_cfg != cfg.to_dict():
            raise ConfigError("checkpoint was written by a different config")
        state = driver.unpack(arrs)
        csv_lines = [csv_text]
    else:
        state = driver.init()
        rows, csv_lines = [], [header]

    out = Path(out_dir) if out_dir is not None else None
    fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        topology.save(out / "topology.txt")
        (out / "config.json").write_text(cfg.to_json() + "\n")
        fh = open(out / "metrics.csv", "w", newline="")
        fh.write("".join(csv_lines))
        fh.flush()

    status, error = "ok", None
    models = None
    try:
        while state.round < cfg.protocol.rounds:
            state, info = driver.step(state)
            centers, eval_models, mixture, assignments = driver.evaluate(state)
            m = compute_round_metrics(state.round, centers, eval_models, mixture, assignments, train, test,
                                      objective, S, info.messages_sent, info.payload_params_sent)
            row = metrics_row(m, cfg.algorithm)
            line = format_row(row)
            csv_lines.append(line)
            rows.append(dict(zip(metrics_columns(S), row)))
            if fh is not None:
                fh.write(line)
                fh.flush()
            if out is not None and every and state.round % every == 0:
                _save_checkpoint(_checkpoint_path(out, state.round), driver, state, cfg, csv_lines, rows)
            if progress is not None:
                progress(state.round, m)
        models = driver.final_models(state)
    except DivergenceError as e:
        status, error = "diverged", str(e)
    finally:
        if fh is not None:
            fh.close()

    final = _final_summary(objective, models, train, test) if models is not None else {}
    record = RunRecord(cfg.to_dict(), _jsonable(rows), _jsonable(final), status, error,
                       time.perf_counter() - t0, __version__, cfg.topology_seed, cfg.data_seed,
                       str(out) if out is not None else None)
    if out is not None:
        (out / "record.json").write_text(record.to_json() + "\n")
    return record


def _run_cell(args):
    cfg_json, out_dir = args
    return run_experiment(config_from_dict(json.loads(cfg_json)), out_dir).to_json()


def run_sweep(cfg: ExperimentConfig, out_root=None, jobs: int = 1) -> list:
    """Run every cell of a sweep; cells go to ``out_root/<swept values>/``."""
    cells = expand_sweep(cfg)
    dirs = [None if out_root is None else str(Path(out_root) / cell_name(cfg, c)) for c in cells]
    if jobs <= 1:
        return [run_experiment(c, d) for c, d in zip(cells, dirs)]
    with ProcessPoolExecutor(jobs) as pool:
        texts = list(pool.map(_run_cell, [(c.to_json(), d) for c, d in zip(cells, dirs)]))
    return [RunRecord.from_json(t) for t in texts]


# ---------------------------------------------------------------- comparison

COMPARE_COLUMNS = ["algorithm", "status", "rounds", "test_acc_mean", "test_acc_std", "test_acc_min",
                   "test_acc_max", "test_risk_mean", "test_risk_std", "train_risk_mean", "total_messages",
                   "total_payload_params"]


def compare_runs(records: list) -> str:
    """CSV table of final metrics, one row per record.

    Refuses records that do not share data and topology seeds, since their
    differences would mix algorithm effects with sampling effects.
    """
    if not records:
        raise InvalidParameterError("nothing to compare")
    seeds = {(r.data_seed, r.topology_seed) for r in records}
    if len(seeds) > 1:
        raise InvalidParameterError(f"records use different (data seed, topology seed) pairs {sorted(seeds)}; "
                                    "comparison would be confounded")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COMPARE_COLUMNS)
    for r in records:
        f = r.final
        msgs = sum(row["messages_sent"] for row in r.rows)
        payload = sum(row["payload_params_sent"] for row in r.rows)
        values = [r.algorithm, r.status, len(r.rows)]
        values += [f.get(k) for k in ("test_acc_mean", "test_acc_std", "test_acc_min", "test_acc_max",
                                      "test_risk_mean", "test_risk_std", "train_risk_mean")]
        values += [msgs, payload]
        w.writerow(["nan" if v is None else _fmt(v) for v in values])
    return buf.getvalue()


def load_records(directory) -> list:
    return [RunRecord.load(p) for p in sorted(Path(directory).rglob("record.json"))]
