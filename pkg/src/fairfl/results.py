"""Line-delimited result files: one header line, one line per round, one summary line.

The header embeds the fully resolved config, so a run can be reproduced from
the file alone. ``created_at`` is the only field whose value depends on when
the run happened; :func:`strip_volatile` removes it for comparisons.
"""

from __future__ import annotations

import json
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

import jsonschema

from .config import ExperimentConfig, dump_config, parse_config
from .simulator import RoundRecord

SCHEMA_VERSION = 1
VOLATILE_FIELDS = ("created_at",)


def load_schema() -> dict:
    return json.loads(resources.files("fairfl").joinpath("result_schema.json").read_text(encoding="utf-8"))


def summarize(cfg: ExperimentConfig, records: list[RoundRecord]) -> dict:
    """Final accuracy and DP, plus the change in |DP| since the round before the first attack."""
    final = records[-1].global_report
    out = {
        "kind": "summary",
        "rounds": len(records),
        "final_accuracy": final.accuracy,
        "final_dp_signed": final.dp_signed,
        "final_dp_abs": final.dp_abs,
        "pre_attack_dp_abs": None,
        "attack_dp_delta": None,
    }
    if cfg.attack is not None and cfg.attack.attack_rounds:
        first = min(cfg.attack.attack_rounds)
        first_tr = [r for r in records if r.training_round == 1]
        # the global model the attacker received; round 0 means the initial model
        pre = first_tr[first - 2].global_report if first >= 2 else None
        if pre is not None and pre.dp_abs is not None and final.dp_abs is not None:
            out["pre_attack_dp_abs"] = pre.dp_abs
            out["attack_dp_delta"] = final.dp_abs - pre.dp_abs
    return out


def build_lines(cfg: ExperimentConfig, records: list[RoundRecord], created_at: str | None = None) -> list[dict]:
    header = {
        "kind": "header",
        "schema_version": SCHEMA_VERSION,
        "seed": cfg.seed,
        "config": dump_config(cfg),
        "created_at": created_at or datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    rounds = [dict(kind="round", **r.as_dict()) for r in records]
    return [header, *rounds, summarize(cfg, records)]


def validate_lines(lines: list[dict]) -> None:
    """Raise ``jsonschema.ValidationError`` if any line breaks the bundled schema."""
    schema = load_schema()
    for line in lines:
        jsonschema.validate(line, schema)
    kinds = [line["kind"] for line in lines]
    if kinds[:1] != ["header"] or kinds[-1:] != ["summary"] or set(kinds[1:-1]) - {"round"}:
        raise jsonschema.ValidationError("a result file is one header, round lines, then one summary")


def write_result_file(path, cfg: ExperimentConfig, records: list[RoundRecord]) -> list[dict]:
    lines = build_lines(cfg, records)
    write_lines(path, lines)
    return lines


def write_lines(path, lines: list[dict]) -> None:
    validate_lines(lines)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for line in lines:
            fh.write(json.dumps(line, sort_keys=True) + "\n")


def read_result_file(path) -> list[dict]:
    with Path(path).open(encoding="utf-8") as fh:
        lines = [json.loads(line) for line in fh if line.strip()]
    validate_lines(lines)
    return lines


def config_from_result(lines: list[dict]) -> ExperimentConfig:
    return parse_config(lines[0]["config"])


def strip_volatile(lines: list[dict]) -> list[dict]:
    return [{k: v for k, v in line.items() if k not in VOLATILE_FIELDS} for line in lines]
