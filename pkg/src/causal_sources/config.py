"""Flat ``key = value`` pipeline configuration."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .exceptions import ValidationError


@dataclass
class PipelineConfig:
    seed: int | None = None
    artifacts: str = "artifacts"
    # inputs
    events: str | None = None
    demographics: str | None = None
    labels: str | None = None
    truth_dir: str | None = None
    # curves
    n_histograms: int = 64
    bandwidth_fraction: float = 0.1
    curve_dump: bool = False
    # matrix
    density: float = 4.0
    # ica
    k: int = 16
    contrast: str = "logcosh"
    tol: float = 1e-4
    max_iter: int = 500
    strict_rank: bool = False
    # train
    model_kind: str = "boosted_trees"
    feature_space: str = "sources"
    n_rounds: int = 200
    learning_rate: float = 0.1
    max_depth: int = 3
    min_samples_leaf: int = 1
    logistic_alpha: float = 1e-4
    test_fraction: float = 0.25
    # explain
    shap_estimator: str = "auto"
    n_permutations: int = 1000
    background_size: int = 256
    background: str = "all"
    explain_columns: str = "all"
    top_m: int = 5
    # synth
    corpus_dir: str | None = None
    n_patients: int = 1000
    n_vars: int = 12
    edge_density: float = 0.3
    weight_range: float = 1.0
    family: str = "laplace"
    span_days: int = 365
    sparsity: float = 0.9
    code_fraction: float = 0.25
    drift: float = 0.05
    noise: float = 0.0
    rate_scale: float = 0.2

    @property
    def artifact_dir(self) -> Path:
        return Path(self.artifacts)

    @property
    def corpus_path(self) -> Path:
        return Path(self.corpus_dir) if self.corpus_dir else self.artifact_dir / "corpus"

    @property
    def truth_path(self) -> Path:
        return Path(self.truth_dir) if self.truth_dir else self.artifact_dir / "truth"

    def require_seed(self) -> int:
        if self.seed is None:
            raise ValidationError("a seed is required (config key 'seed' or --seed)")
        return int(self.seed)

    def snapshot(self) -> dict:
        return dataclasses.asdict(self)

    def update(self, values: dict) -> "PipelineConfig":
        fields = {f.name: f for f in dataclasses.fields(self)}
        for key, raw in values.items():
            if key not in fields:
                raise ValidationError(f"unknown config key {key!r}")
            setattr(self, key, _coerce(key, fields[key].type, raw))
        return self


def _coerce(key, type_name, raw):
    if not isinstance(raw, str):
        return raw
    kind = str(type_name).split("|")[0].strip()
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
    except ValueError:
        raise ValidationError(f"config key {key!r}: cannot parse {raw!r} as {kind}") from None
    return raw


def parse_config_text(text: str) -> dict:
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError("expected 'key = value'", n)
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def load_config(path=None, **overrides) -> PipelineConfig:
    cfg = PipelineConfig()
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ValidationError(f"config file {p} does not exist")
        cfg.update(parse_config_text(p.read_text()))
    cfg.update({k: v for k, v in overrides.items() if v is not None})
    return cfg
