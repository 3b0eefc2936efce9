"""Experiment front door: config files, presets, baseline, and run artifacts.

A run directory contains exactly:
  config.echo  — the parsed config, serialized back out
  rounds.jsonl — one RoundRecord per line (stable schema, no timestamps)
  summary.json — RunSummary fields
  rounds.csv   — optional flat mirror of the round telemetry

Config files are JSON with five sections (all keys optional except
federation.K; unknown keys are rejected):

  data:       n_examples, n_features, n_classes, n_groups,
              class_separation, group_correlation
  model:      kind (logistic_regression | mlp_1hidden), hidden_units
  partition:  kind (iid | dirichlet_label_skew), alpha
  federation: K, q, T, epochs, lr, batch_size, S_policy
              (median_adaptive | fixed), S_fixed, M (number or "inf"),
              sigma, delta_dp, adjacency, seed
  bias:       biased_client_ids, mode (label_flip | update_scale),
              flip_prob, target_group, factor
  output:     emit_csv
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import dataclass, asdict
from pathlib import Path

from . import models
from .datagen import BiasTag, DataSpec, PartitionScheme, generate, inject_bias, partition
from .federation import FedConfig, run_training
from .models import ModelSpec
from .numeric import RngStream
from .privacy import EPS_CAVEAT


class ConfigError(ValueError):
    """Invalid or malformed experiment configuration."""


@dataclass(frozen=True)
class BiasScenario:
    biased_client_ids: tuple = ()
    mode: str = "clean"
    flip_prob: float = 0.5
    target_group: int = 0
    factor: float = 25.0


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataSpec
    model_kind: str
    hidden_units: int
    partition: PartitionScheme
    fed: FedConfig
    bias: BiasScenario
    emit_csv: bool = False

    @property
    def model_spec(self) -> ModelSpec:
        return ModelSpec(
            kind=self.model_kind,
            n_features=self.data.n_features,
            n_classes=self.data.n_classes,
            hidden_units=self.hidden_units,
        )


@dataclass(frozen=True)
class RunSummary:
    A_Fed: float
    A_Cen: float
    delta_acc: float
    per_group_gap: float
    eps_total_nominal: float
    wall_ms: int


_SECTION_KEYS = {
    "data": {"n_examples", "n_features", "n_classes", "n_groups",
             "class_separation", "group_correlation"},
    "model": {"kind", "hidden_units"},
    "partition": {"kind", "alpha"},
    "federation": {"K", "q", "T", "epochs", "lr", "batch_size", "S_policy",
                   "S_fixed", "M", "sigma", "delta_dp", "adjacency", "seed"},
    "bias": {"biased_client_ids", "mode", "flip_prob", "target_group", "factor"},
    "output": {"emit_csv"},
}


def _check_keys(raw: dict) -> None:
    for section, body in raw.items():
        if section not in _SECTION_KEYS:
            raise ConfigError(f"unknown config section {section!r}")
        if not isinstance(body, dict):
            raise ConfigError(f"section {section!r} must be an object")
        for key in body:
            if key not in _SECTION_KEYS[section]:
                raise ConfigError(f"unknown key {section}.{key}")


def _parse_M(value) -> float:
    if value == "inf":
        return math.inf
    if isinstance(value, (int, float)):
        return float(value)
    raise ConfigError('federation.M must be a number or "inf"')


def config_from_dict(raw: dict) -> ExperimentConfig:
    _check_keys(raw)
    try:
        data = DataSpec(**raw.get("data", {}))
        model = raw.get("model", {})
        part = PartitionScheme(**raw.get("partition", {}))
        fed_raw = dict(raw.get("federation", {}))
        if "K" not in fed_raw:
            raise ConfigError("missing required key federation.K")
        if "M" in fed_raw:
            fed_raw["M"] = _parse_M(fed_raw["M"])
        fed = FedConfig(**fed_raw)
        bias_raw = dict(raw.get("bias", {}))
        if "biased_client_ids" in bias_raw:
            bias_raw["biased_client_ids"] = tuple(bias_raw["biased_client_ids"])
        bias = BiasScenario(**bias_raw)
        out = raw.get("output", {})
        cfg = ExperimentConfig(
            data=data,
            model_kind=model.get("kind", "logistic_regression"),
            hidden_units=model.get("hidden_units", 0),
            partition=part,
            fed=fed,
            bias=bias,
            emit_csv=bool(out.get("emit_csv", False)),
        )
        cfg.model_spec  # validates model kind against data dimensions
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    for cid in cfg.bias.biased_client_ids:
        if not 0 <= cid < cfg.fed.K:
            raise ConfigError(
                f"bias.biased_client_ids: client {cid} outside [0, {cfg.fed.K})"
            )
    if cfg.bias.mode not in ("clean", "label_flip", "update_scale"):
        raise ConfigError(f"unknown bias.mode {cfg.bias.mode!r}")
    return cfg


def config_to_dict(cfg: ExperimentConfig) -> dict:
    fed = asdict(cfg.fed)
    if math.isinf(fed["M"]):
        fed["M"] = "inf"
    return {
        "data": asdict(cfg.data),
        "model": {"kind": cfg.model_kind, "hidden_units": cfg.hidden_units},
        "partition": asdict(cfg.partition),
        "federation": fed,
        "bias": {
            "biased_client_ids": list(cfg.bias.biased_client_ids),
            "mode": cfg.bias.mode,
            "flip_prob": cfg.bias.flip_prob,
            "target_group": cfg.bias.target_group,
            "factor": cfg.bias.factor,
        },
        "output": {"emit_csv": cfg.emit_csv},
    }


def parse_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return config_from_dict(raw)


# --- scenario presets -------------------------------------------------------

def _preset_base(**fed_overrides) -> dict:
    fed = {
        "K": 10, "q": 1.0, "T": 10, "epochs": 1, "lr": 0.1, "batch_size": 32,
        "S_policy": "median_adaptive", "M": "inf", "sigma": 0.0,
        "delta_dp": 1e-5, "seed": 0,
    }
    fed.update(fed_overrides)
    return {
        "data": {"n_examples": 1000, "n_features": 10, "class_separation": 5.0},
        "model": {"kind": "logistic_regression"},
        "partition": {"kind": "iid"},
        "federation": fed,
        "bias": {},
        "output": {},
    }


PRESETS = {
    "fedavg_clean": _preset_base(S_policy="fixed", S_fixed=1e9, M=1e9, sigma=0.0),
    "dp_only": _preset_base(sigma=0.5, M="inf"),
    "fair_dp": _preset_base(sigma=0.5, M=0.2),
    "biased_attack": {
        **_preset_base(S_policy="fixed", S_fixed=1e9, M="inf", sigma=0.0, T=15),
        # harder, heterogeneous data: on easy IID data a same-direction
        # scaling attack is nearly harmless and M sweeps are vacuous
        "data": {"n_examples": 1000, "n_features": 10, "class_separation": 2.0},
        "partition": {"kind": "dirichlet_label_skew", "alpha": 0.1},
        "bias": {"biased_client_ids": [0, 1], "mode": "update_scale", "factor": 25.0},
    },
}


def preset_config(name: str) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return config_from_dict(PRESETS[name])


# --- scenario construction and runs -----------------------------------------

def build_scenario(cfg: ExperimentConfig):
    """Generate data, partition into shards, and inject the bias scenario."""
    root = RngStream(cfg.fed.seed)
    train, test = generate(cfg.data, root.child("data"))
    shards = partition(train, cfg.fed.K, cfg.partition, root.child("partition"))
    if cfg.bias.mode != "clean":
        tag = BiasTag(
            mode=cfg.bias.mode,
            flip_prob=cfg.bias.flip_prob,
            target_group=cfg.bias.target_group,
            factor=cfg.bias.factor,
        )
        shards = [
            inject_bias(s, tag, root.child("bias", s.client_id))
            if s.client_id in cfg.bias.biased_client_ids
            else s
            for s in shards
        ]
    return train, test, shards


def centralized_baseline(cfg: ExperimentConfig):
    """Train the same model on the pooled clean training data.

    Follows the federated round/epoch schedule and substreams exactly, so a
    single-client federation with no clipping or noise reproduces it.
    """
    train, test, _ = build_scenario(cfg)
    spec = cfg.model_spec
    root = RngStream(cfg.fed.seed)
    w = models.init_params(spec, root.child("init"))
    for t in range(cfg.fed.T):
        w = models.local_train(
            spec, w, train, cfg.fed.epochs, cfg.fed.lr, cfg.fed.batch_size,
            root.child("round", t).child("client", 0),
        )
    return w, models.evaluate(spec, w, test)


def run_experiment(cfg: ExperimentConfig, out_dir, workers: int = 1) -> RunSummary:
    """Run the federation plus the centralized reference and write artifacts."""
    t0 = time.monotonic()
    train, test, shards = build_scenario(cfg)
    spec = cfg.model_spec
    _, records, ledger = run_training(cfg.fed, spec, shards, test, workers=workers)
    _, cen_eval = centralized_baseline(cfg)

    last = records[-1]
    groups = list(last.eval.per_group_accuracy.values())
    summary = RunSummary(
        A_Fed=last.eval.accuracy,
        A_Cen=cen_eval.accuracy,
        delta_acc=abs(last.eval.accuracy - cen_eval.accuracy),
        per_group_gap=(max(groups) - min(groups)) if groups else 0.0,
        eps_total_nominal=ledger.eps_total_basic,
        wall_ms=int((time.monotonic() - t0) * 1000),
    )

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.echo").write_text(
        json.dumps(config_to_dict(cfg), indent=2, sort_keys=True) + "\n"
    )
    with open(out / "rounds.jsonl", "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")
    summary_doc = dict(asdict(summary), eps_caveat=EPS_CAVEAT)
    (out / "summary.json").write_text(
        json.dumps(summary_doc, indent=2, sort_keys=True) + "\n"
    )
    if cfg.emit_csv:
        _write_rounds_csv(records, out / "rounds.csv")
    return summary


_CSV_COLUMNS = ["round", "S_used", "M_used", "noise_std", "eps_round",
                "accuracy", "loss", "n_clipped"]


def _write_rounds_csv(records, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(_CSV_COLUMNS)
        for rec in records:
            n_clipped = sum(1 for c in rec.per_client if c["clipped_by"] != "none")
            wr.writerow([
                rec.round, repr(rec.S_used), repr(rec.M_used),
                repr(rec.noise_std), repr(rec.eps_round),
                repr(rec.eval.accuracy), repr(rec.eval.loss), n_clipped,
            ])


def load_summary(run_dir) -> RunSummary:
    with open(Path(run_dir) / "summary.json") as fh:
        doc = json.load(fh)
    return RunSummary(**{k: doc[k] for k in RunSummary.__dataclass_fields__})


_COMPARE_COLUMNS = ["run", "A_Fed", "A_Cen", "delta_acc", "per_group_gap",
                    "eps_total_nominal"]


def compare_runs(named_summaries) -> tuple[str, str]:
    """Tabulate >= 2 run summaries; returns (text table, CSV text)."""
    named_summaries = list(named_summaries)
    if len(named_summaries) < 2:
        raise ValueError("compare_runs needs at least two summaries")
    rows = [
        [name, s.A_Fed, s.A_Cen, s.delta_acc, s.per_group_gap, s.eps_total_nominal]
        for name, s in named_summaries
    ]
    widths = [
        max(len(col), max(len(_cell(r[i])) for r in rows))
        for i, col in enumerate(_COMPARE_COLUMNS)
    ]
    lines = ["  ".join(c.ljust(w) for c, w in zip(_COMPARE_COLUMNS, widths))]
    for r in rows:
        lines.append("  ".join(_cell(v).ljust(w) for v, w in zip(r, widths)))
    text = "\n".join(lines) + "\n"

    buf = io.StringIO()
    wr = csv.writer(buf)
    wr.writerow(_COMPARE_COLUMNS)
    for r in rows:
        wr.writerow([r[0]] + [repr(float(v)) for v in r[1:]])
    return text, buf.getvalue()


def _cell(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)
