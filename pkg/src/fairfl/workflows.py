"""Entry points shared by the command line and the HTTP service."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

from .aggregation import MECHANISMS
from .config import AttackSection, ExperimentConfig, parse_config
from .data import Dataset, generate_synthetic
from .errors import ConfigError, FairFLError
from .results import build_lines, validate_lines
from .simulator import prepare_data, run_experiment, synth_config

log = logging.getLogger(__name__)

SWEEP_PARAMS = ("gamma", "attacker_fraction", "aggregator")


def with_overrides(cfg: ExperimentConfig, seed: int | None = None, threads: int | None = None,
                   base_dir: Path | None = None) -> ExperimentConfig:
    """Apply command-line overrides and pin every derived field into the config."""
    raw = cfg.model_dump(mode="json")
    if seed is not None:
        raw["seed"] = seed
    if threads is not None:
        raw["threads"] = threads
    data = raw["data"]
    if data["source"] == "csv" and base_dir is not None:
        path = Path(data["csv_path"])
        if not path.is_absolute():
            data["csv_path"] = str((Path(base_dir) / path).resolve())
    return parse_config(raw).resolved()


def run_config(cfg: ExperimentConfig) -> list[dict]:
    """Run one experiment and return its result lines (header, rounds, summary)."""
    shards, eval_set = prepare_data(cfg)
    records = run_experiment(cfg, shards, eval_set)
    lines = build_lines(cfg, records)
    validate_lines(lines)
    return lines


def parse_sweep_values(param: str, values: list) -> list:
    if param not in SWEEP_PARAMS:
        raise ConfigError("param", f"unknown sweep parameter {param!r}; expected one of {', '.join(SWEEP_PARAMS)}")
    if not values:
        raise ConfigError("values", "at least one value is required")
    out = []
    for v in values:
        if param == "aggregator":
            v = str(v).strip()
            if v not in MECHANISMS:
                raise ConfigError("values", f"unknown aggregator {v!r}")
            out.append(v)
            continue
        try:
            x = float(v)
        except (TypeError, ValueError):
            raise ConfigError("values", f"{v!r} is not a number") from None
        if param == "gamma" and not x > 0:
            raise ConfigError("values", f"gamma must be positive, got {x}")
        if param == "attacker_fraction" and not 0 < x <= 1:
            raise ConfigError("values", f"attacker_fraction must lie in (0, 1], got {x}")
        out.append(x)
    return out


def sweep_config(cfg: ExperimentConfig, param: str, value) -> ExperimentConfig:
    raw = cfg.model_dump(mode="json")
    if param == "aggregator":
        raw["aggregator"]["mechanism"] = value
    else:
        attack = raw.get("attack") or AttackSection().model_dump(mode="json")
        attack[param] = value
        if param == "attacker_fraction":
            attack["attacker_ids"] = None
        raw["attack"] = attack
    return parse_config(raw).resolved()


def value_key(param: str, value) -> str:
    text = value if isinstance(value, str) else f"{value:g}"
    return f"{param}={text}"


@dataclass
class SweepItem:
    value: object
    key: str
    lines: list[dict] | None = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def run_sweep(cfg: ExperimentConfig, param: str, values: list) -> list[SweepItem]:
    """Run one experiment per value; a failing value is reported and the others still run."""
    items = []
    for v in parse_sweep_values(param, values):
        item = SweepItem(value=v, key=value_key(param, v))
        try:
            item.lines = run_config(sweep_config(cfg, param, v))
        except (FairFLError, ArithmeticError, ValueError) as exc:
            log.warning("sweep value %s failed: %s", item.key, exc)
            item.error = f"{type(exc).__name__}: {exc}"
        items.append(item)
    return items


def generate_from_config(cfg: ExperimentConfig) -> Dataset:
    return generate_synthetic(synth_config(cfg))


def dataset_stats(data: Dataset) -> dict:
    """Group sizes and group-conditional positive label rates."""
    out = {"n_samples": len(data), "input_dim": data.input_dim, "groups": {}}
    rates = {}
    for s in (0, 1):
        mask = data.s == s
        n = int(mask.sum())
        rate = float(data.y[mask].mean()) if n else None
        rates[s] = rate
        out["groups"][str(s)] = {"n": n, "label_rate": rate}
    out["label_rate_gap"] = None if None in rates.values() else rates[0] - rates[1]
    out["label_rate"] = float(data.y.mean()) if len(data) else None
    return out
