"""Experiment configuration: nested pydantic models loaded from YAML.

Every default is the full-scale protocol: 20 communication rounds, half of
the clients selected per round, 20 local epochs, FairFed beta=1.5,
f-qFedAvg q=2, attack gamma=10 launched in the last two rounds.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Literal, Optional

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .aggregation import MECHANISMS
from .errors import ConfigError


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelSection(_Section):
    family: Literal["logistic", "mlp1"] = "logistic"
    hidden_dim: Optional[int] = Field(default=None, ge=1)

    @model_validator(mode="after")
    def _hidden(self):
        if self.family == "mlp1" and self.hidden_dim is None:
            self.hidden_dim = 8
        return self


class SynthSection(_Section):
    n_samples: int = Field(default=25_000, ge=1)
    input_dim: int = Field(default=6, ge=2)
    group0_fraction: float = Field(default=0.5, gt=0, lt=1)
    bias_strength: float = Field(default=0.8, ge=0, le=1)
    correlation: float = Field(default=0.8, ge=0, le=1)
    label_noise: float = Field(default=0.05, ge=0, lt=0.5)
    n_proxy: Optional[int] = Field(default=None, ge=1)
    drop_sensitive_feature: bool = False
    seed: Optional[int] = None


class PartitionSection(_Section):
    scheme: Literal["iid", "group_skew"] = "iid"
    alpha: float = Field(default=1.0, gt=0)


class DataSection(_Section):
    source: Literal["synthetic", "csv"] = "synthetic"
    csv_path: Optional[str] = None
    synth: SynthSection = SynthSection()
    eval_fraction: float = Field(default=0.2, gt=0, lt=1)
    partition: PartitionSection = PartitionSection()

    @model_validator(mode="after")
    def _csv(self):
        if self.source == "csv" and not self.csv_path:
            raise ValueError("csv_path is required when source is 'csv'")
        return self


class FederationSection(_Section):
    n_clients: int = Field(default=10, ge=1)
    selection_fraction: float = Field(default=0.5, gt=0, le=1)
    rounds: int = Field(default=20, ge=1)
    training_rounds: int = Field(default=1, ge=1)
    fairness_tolerance: float = Field(default=0.05, ge=0)

    @property
    def n_selected(self) -> int:
        return max(1, math.ceil(self.selection_fraction * self.n_clients - 1e-9))


class DebiasSection(_Section):
    mechanism: Literal["none", "fairbatch", "fairreg"] = "fairbatch"
    step: float = Field(default=0.005, ge=0, le=1)
    mu: float = Field(default=5.0, ge=0)


class LocalSection(_Section):
    learning_rate: float = Field(default=0.1, gt=0)
    epochs: int = Field(default=20, ge=1)
    batch_size: int = Field(default=64, ge=1)
    debias: DebiasSection = DebiasSection()


class AggregatorSection(_Section):
    mechanism: Literal[MECHANISMS] = "fairfed"  # type: ignore[valid-type]
    beta: float = Field(default=1.5, ge=0)
    q: float = Field(default=2.0, gt=0)
    k: int = Field(default=1, ge=0)
    f: int = Field(default=1, ge=0)


class AttackSection(_Section):
    attacker_ids: Optional[list[int]] = None
    attacker_fraction: Optional[float] = Field(default=None, gt=0, le=1)
    attack_rounds: Optional[list[int]] = None
    gamma: float = Field(default=10.0, gt=0)
    # the attacker's fine-tuning budget; with stop_at_local_bias it is an upper bound
    finetune_epochs: int = Field(default=5, ge=1)
    finetune_lr: float = Field(default=0.02, gt=0)
    stop_at_local_bias: bool = True
    w_init: float = Field(default=1.0, gt=0)
    use_estimation: bool = True
    scale_cap: Optional[float] = Field(default=10.0, gt=0)
    force_selection: bool = True


class ExperimentConfig(_Section):
    seed: int = Field(default=0, ge=0, lt=2**64)
    threads: int = Field(default=1, ge=1)
    model: ModelSection = ModelSection()
    data: DataSection = DataSection()
    federation: FederationSection = FederationSection()
    local: LocalSection = LocalSection()
    aggregator: AggregatorSection = AggregatorSection()
    attack: Optional[AttackSection] = None

    @model_validator(mode="after")
    def _consistency(self):
        fed, agg = self.federation, self.aggregator
        n_sel = fed.n_selected
        if agg.mechanism == "trimmed_mean" and n_sel <= 2 * agg.k:
            raise ValueError(f"aggregator.k: trimmed mean needs more than 2k={2 * agg.k} selected clients")
        if agg.mechanism == "krum" and n_sel <= 2 * agg.f + 2:
            raise ValueError(f"aggregator.f: krum needs more than 2f+2={2 * agg.f + 2} selected clients")
        if self.attack is not None:
            atk = self.attack
            if atk.attack_rounds is None:
                atk.attack_rounds = [max(1, fed.rounds - 1), fed.rounds] if fed.rounds > 1 else [1]
            bad = [r for r in atk.attack_rounds if not 1 <= r <= fed.rounds]
            if bad:
                raise ValueError(f"attack.attack_rounds: rounds {bad} fall outside [1, {fed.rounds}]")
            if atk.attacker_ids is not None:
                bad = [i for i in atk.attacker_ids if not 0 <= i < fed.n_clients]
                if bad:
                    raise ValueError(f"attack.attacker_ids: unknown client ids {bad}")
                if not atk.attacker_ids:
                    raise ValueError("attack.attacker_ids: must not be empty")
        return self

    def resolved_attackers(self) -> list[int]:
        """Attacker ids, drawing them from the master seed when only a fraction is given."""
        if self.attack is None:
            return []
        atk = self.attack
        if atk.attacker_ids is not None:
            return sorted(set(atk.attacker_ids))
        frac = atk.attacker_fraction if atk.attacker_fraction is not None else 0.0
        n_att = max(1, int(round(frac * self.federation.n_selected)))
        n_att = min(n_att, self.federation.n_clients)
        rng = np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(7,)))
        return sorted(int(i) for i in rng.choice(self.federation.n_clients, size=n_att, replace=False))

    def resolved(self) -> "ExperimentConfig":
        """Copy with derived fields (attacker ids, attack rounds) written out explicitly."""
        cfg = self.model_copy(deep=True)
        if cfg.attack is not None:
            cfg.attack.attacker_ids = self.resolved_attackers()
            cfg.attack.attacker_fraction = None
        return cfg


def _describe(err: ValidationError) -> tuple[str, str]:
    """(field, message) for the first validation error."""
    first = err.errors()[0]
    loc = ".".join(str(p) for p in first.get("loc", ()))
    msg = first.get("msg", "")
    # model-level validators encode the field as "<field>: message"
    if msg.startswith("Value error, "):
        msg = msg[len("Value error, ") :]
        head, sep, rest = msg.partition(":")
        if sep and "." in head and " " not in head:
            return head, rest.strip()
    return loc or "config", msg


def parse_config(raw: dict | None) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(raw or {})
    except ValidationError as exc:
        field, msg = _describe(exc)
        raise ConfigError(field, msg) from exc


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError("config", f"not valid YAML: {exc}") from exc
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError("config", "top level must be a mapping")
    return parse_config(raw)


def dump_config(cfg: ExperimentConfig) -> dict:
    return cfg.model_dump(mode="json")
