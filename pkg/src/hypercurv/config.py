"""Run configuration: one strict JSON document per run."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .bilevel import BilevelConfig
from .sharpness import SharpnessConfig

__all__ = ["RunConfig", "ConfigError", "load_config", "parse_config", "dump_config", "json_schema"]


class ConfigError(ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DataSection(_Strict):
    source: Literal["tree", "csv"] = "tree"
    path: Optional[str] = None
    label_column: str = "label"
    depth: int = Field(4, ge=2)
    branching: int = Field(3, ge=2)
    noise_sigma: float = Field(0.2, ge=0)
    d_in: int = Field(8, ge=1)
    samples_per_leaf: int = Field(1, ge=1)
    seed: int = 0

    @model_validator(mode="after")
    def _csv_needs_path(self):
        if self.source == "csv" and not self.path:
            raise ValueError("data.path is required when data.source is 'csv'")
        return self


class ModelSection(_Strict):
    hidden: int = Field(16, ge=0)
    embed: int = Field(8, ge=1)
    hyp_dim: int = Field(8, ge=1)
    clip_radius: Optional[float] = Field(1.0, gt=0)
    init_scale: float = Field(1.0, gt=0)


class CurvatureSection(_Strict):
    init: float = Field(0.1, gt=0)
    c_min: float = Field(1e-6, gt=0)
    c_max: float = Field(1.0, gt=0)

    @model_validator(mode="after")
    def _bounds(self):
        if not self.c_min <= self.init <= self.c_max:
            raise ValueError("need c_min <= init <= c_max")
        return self


class BilevelSection(_Strict):
    T: int = Field(2, ge=1)
    outer_iters: int = Field(100, ge=0)
    eta: float = Field(0.1, gt=0)
    rho_hat: float = Field(0.05, ge=0)
    J: int = Field(2, ge=0)
    K: int = Field(1, ge=1)
    rho: Optional[float] = Field(None, gt=0)
    eta_c: float = Field(1e-3, ge=0)
    val_split: float = Field(0.2, gt=0, lt=1)
    decay: bool = False
    loss_scale: Union[Literal["auto"], float] = "auto"

    @field_validator("loss_scale")
    @classmethod
    def _pos(cls, v):
        if v != "auto" and not v > 0:
            raise ValueError("loss_scale must be 'auto' or positive")
        return v


class SharpnessSection(_Strict):
    K: int = Field(1, ge=1)
    rho: float = Field(0.05, gt=0)
    sweep_steps: list[float] = Field(default_factory=lambda: [0.0, 0.1, 0.2, 0.3, 0.4, 0.5])
    power_iters: int = Field(50, ge=10)
    n_eigs: int = Field(1, ge=1)

    @field_validator("sweep_steps")
    @classmethod
    def _zeta(cls, v):
        if any(not 0 <= z < 1 for z in v):
            raise ValueError("sweep steps must lie in [0, 1)")
        return v


class RunConfig(_Strict):
    mode: Literal["hnn", "c-hnn", "fixed-curvature", "curvature-learning"] = "curvature-learning"
    seed: int = 0
    weight_decay: float = Field(0.0, ge=0)
    data: DataSection = Field(default_factory=DataSection)
    model: ModelSection = Field(default_factory=ModelSection)
    curvature: CurvatureSection = Field(default_factory=CurvatureSection)
    bilevel: BilevelSection = Field(default_factory=BilevelSection)
    sharpness: SharpnessSection = Field(default_factory=SharpnessSection)
    output_dir: str = "run"

    def learns_curvature(self) -> bool:
        return self.mode == "curvature-learning"

    def clip_radius(self):
        # plain HNN runs without clipping, the C-HNN baseline always clips
        if self.mode == "hnn":
            return None
        if self.mode == "c-hnn":
            return self.model.clip_radius or 1.0
        return self.model.clip_radius

    def bilevel_config(self) -> BilevelConfig:
        b = self.bilevel
        return BilevelConfig(
            T=b.T, outer_iters=b.outer_iters, eta=b.eta, rho_hat=b.rho_hat, J=b.J, K=b.K,
            rho=b.rho, eta_c=b.eta_c, c_min=self.curvature.c_min, c_max=self.curvature.c_max,
            val_split=b.val_split, decay=b.decay, loss_scale=b.loss_scale,
            learn_curvature=self.learns_curvature(),
        )

    def sharpness_config(self) -> SharpnessConfig:
        s = self.sharpness
        return SharpnessConfig(K=s.K, rho=s.rho, sweep_steps=list(s.sweep_steps),
                               power_iters=s.power_iters, n_eigs=s.n_eigs)


def _format_errors(exc: ValidationError) -> str:
    lines = []
    for e in exc.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "<root>"
        lines.append(f"  {loc}: {e['msg']}")
    return "invalid run configuration:\n" + "\n".join(lines)


def parse_config(doc) -> RunConfig:
    """Validate a dict or JSON string; raises :class:`ConfigError` with diagnostics."""
    try:
        if isinstance(doc, (str, bytes)):
            return RunConfig.model_validate_json(doc)
        return RunConfig.model_validate(doc)
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc)) from None


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    return parse_config(text)


def dump_config(cfg: RunConfig) -> str:
    """Canonical form: every field present, keys sorted."""
    return json.dumps(cfg.model_dump(mode="json"), sort_keys=True, indent=2) + "\n"


def json_schema() -> str:
    return json.dumps(RunConfig.model_json_schema(), sort_keys=True, indent=2) + "\n"
