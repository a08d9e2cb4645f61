"""Run configuration and the line-delimited JSON dataset/result formats.

Files are JSONL with a one-line header carrying the schema version, the
seed, and an echo of the semantically relevant configuration. Fields that
cannot change results (worker count, io paths) are excluded from the echo
so outputs are byte-identical across thread counts. The full schemas are
documented in docs/formats.md and shipped as JSON Schema files under
schemas/.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DATASET_SCHEMA = "lazysmc.dataset.v1"
RESULT_SCHEMA = "lazysmc.result.v1"

MODELS = ("lgssm", "nonlinear", "mot")
MODES = ("simulate", "filter", "kalman")

__all__ = [
    "ConfigError",
    "RunConfig",
    "DATASET_SCHEMA",
    "RESULT_SCHEMA",
    "write_dataset",
    "read_dataset",
    "write_result",
    "read_result",
]


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    model: str = "lgssm"
    mode: str = "simulate"
    T: int = 10
    particles: int = 1024
    resample_threshold: float = 0.5
    seed: int = 0
    threads: int = 1
    out: str | None = None
    data: str | None = None
    params: dict = field(default_factory=dict)

    def validate(self) -> "RunConfig":
        if self.model not in MODELS:
            raise ConfigError(f"unknown model {self.model!r}; expected one of {MODELS}")
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.T < 1:
            raise ConfigError("T must be >= 1")
        if self.particles < 1:
            raise ConfigError("particles must be >= 1")
        if not 0.0 <= self.resample_threshold <= 1.0:
            raise ConfigError("resample_threshold must be in [0, 1]")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if not isinstance(self.params, dict):
            raise ConfigError("params must be an object")
        return self

    @classmethod
    def load(cls, config_path: str | None, overrides: dict) -> "RunConfig":
        """Config file plus flag overrides; flags win field by field."""
        data: dict = {}
        if config_path is not None:
            try:
                with open(config_path) as fh:
                    data = json.load(fh)
            except OSError as exc:
                raise ConfigError(f"cannot read config {config_path}: {exc}") from exc
            except json.JSONDecodeError as exc:
                raise ConfigError(f"malformed config {config_path}: {exc}") from exc
            if not isinstance(data, dict):
                raise ConfigError("config file must hold a JSON object")
        unknown = set(data) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        data.update({k: v for k, v in overrides.items() if v is not None})
        try:
            return cls(**data).validate()
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def echo(self) -> dict:
        """The result-determining fields, for file headers."""
        return {
            "model": self.model,
            "mode": self.mode,
            "T": self.T,
            "particles": self.particles,
            "resample_threshold": self.resample_threshold,
            "seed": self.seed,
            "params": _jsonify(self.params),
        }


def _jsonify(obj):
    if isinstance(obj, dict):
        return {k: _jsonify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonify(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonify(obj.tolist())
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


def _dump_line(obj) -> str:
    return json.dumps(_jsonify(obj), sort_keys=True, allow_nan=True)


def _write_lines(path, lines) -> None:
    path = Path(path)
    if path.parent != Path(""):
        path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for line in lines:
            fh.write(_dump_line(line))
            fh.write("\n")


def write_dataset(path, config: RunConfig, rows: list[dict], truth: dict) -> None:
    header = {"kind": "header", "schema": DATASET_SCHEMA,
              "model": config.model, "seed": config.seed, "T": config.T,
              "config": config.echo()}
    lines = [header]
    lines.extend({"kind": "obs", **row} for row in rows)
    lines.append({"kind": "truth", **truth})
    _write_lines(path, lines)


def read_dataset(path):
    """Returns (header, observation rows sorted by t, truth dict)."""
    header, rows, truth = None, [], None
    with open(path) as fh:
        for raw in fh:
            raw = raw.strip()
            if not raw:
                continue
            line = json.loads(raw)
            kind = line.get("kind")
            if kind == "header":
                header = line
            elif kind == "obs":
                rows.append(line)
            elif kind == "truth":
                truth = line
            else:
                raise ValueError(f"unknown dataset line kind {kind!r}")
    if header is None:
        raise ValueError(f"{path}: missing dataset header")
    if header.get("schema") != DATASET_SCHEMA:
        raise ValueError(f"{path}: unsupported schema {header.get('schema')!r}")
    rows.sort(key=lambda r: r["t"])
    return header, rows, truth


def write_result(path, config: RunConfig, sections: list[dict]) -> None:
    header = {"kind": "header", "schema": RESULT_SCHEMA,
              "model": config.model, "mode": config.mode, "seed": config.seed,
              "config": config.echo()}
    _write_lines(path, [header, *sections])


def read_result(path):
    """Returns (header, {section kind: line}) for a result file."""
    header, sections = None, {}
    with open(path) as fh:
        for raw in fh:
            raw = raw.strip()
            if not raw:
                continue
            line = json.loads(raw)
            if line.get("kind") == "header":
                header = line
            else:
                sections[line["kind"]] = line
    if header is None:
        raise ValueError(f"{path}: missing result header")
    if header.get("schema") != RESULT_SCHEMA:
        raise ValueError(f"{path}: unsupported schema {header.get('schema')!r}")
    return header, sections
