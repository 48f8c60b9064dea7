"""Experiment configuration: one YAML file per run, validated strictly.

Every block rejects unknown keys and reports all violations at once
(pydantic collects them), each tagged with its location in the file.
The same models double as the request schema of the HTTP service, so a
config file and a request body are literally the same object.
"""

from __future__ import annotations

from typing import Any, Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from fewmode.errors import ConfigurationError
from fewmode.lattice import ForcingSpec, ModeSet
from fewmode.spectral import SpectralField, Truncation
from fewmode.dynamics import ModelParams, Scheme
from fewmode.ergodic import OBSERVABLE_KINDS, Observable


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


def _check_nonzero_mode(mode: tuple[int, int]) -> tuple[int, int]:
    if tuple(mode) == (0, 0):
        raise ValueError("the zero wavevector is not a mode (the basis has zero mean)")
    return tuple(mode)


class ForcingEntry(_Strict):
    mode: tuple[int, int]
    sigma: float = Field(gt=0.0, description="noise amplitude for this mode")

    _nonzero = field_validator("mode")(_check_nonzero_mode)


class CoefficientEntry(_Strict):
    mode: tuple[int, int]
    value: float

    _nonzero = field_validator("mode")(_check_nonzero_mode)


class ModelBlock(_Strict):
    nu: float = Field(gt=0.0)
    truncation: int = Field(ge=1, description="max-norm radius of the mode box")
    dt: float = Field(gt=0.0)
    scheme: Literal["exponential_euler", "euler_maruyama"] = "exponential_euler"
    linear: bool = False


class ObservableSpec(_Strict):
    kind: Literal[OBSERVABLE_KINDS]  # type: ignore[valid-type]
    mode: Optional[tuple[int, int]] = None
    mode2: Optional[tuple[int, int]] = None

    def build(self) -> Observable:
        if self.kind == "mode_coeff":
            if self.mode is None:
                raise ValueError("mode_coeff observable needs a mode")
            return Observable.mode_coeff(self.mode)
        if self.kind == "mode_pair_product":
            if self.mode is None or self.mode2 is None:
                raise ValueError("mode_pair_product observable needs mode and mode2")
            return Observable.pair_product(self.mode, self.mode2)
        return Observable(self.kind)


class AnalysisBlock(_Strict):
    box_radius: int = Field(ge=1)


class SimulateBlock(_Strict):
    time_horizon: float = Field(gt=0.0)
    record_modes: list[tuple[int, int]] = []
    binary_states: bool = False


class MalliavinBlock(_Strict):
    basis_modes: list[tuple[int, int]] = Field(min_length=1)
    time_horizon: float = Field(gt=0.0)
    representation: Literal["adjoint", "forward", "both"] = "adjoint"


class TailBlock(_Strict):
    basis_modes: list[tuple[int, int]] = Field(min_length=1)
    time_horizon: float = Field(gt=0.0)
    epsilons: list[float] = Field(min_length=1)
    n_samples: int = Field(ge=100)

    @field_validator("epsilons")
    @classmethod
    def _decreasing(cls, eps: list[float]) -> list[float]:
        if any(e <= 0 for e in eps):
            raise ValueError("epsilons must be positive")
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ValueError("epsilons must be strictly decreasing")
        return eps


class ErgodicBlock(_Strict):
    observable: ObservableSpec
    time_horizon: float = Field(gt=0.0)
    second_start: list[CoefficientEntry] = []


class DensityBlock(_Strict):
    modes: list[tuple[int, int]] = Field(min_length=1, max_length=3)
    t_snapshot: float = Field(gt=0.0)
    n_samples: int = Field(ge=1)
    bins: int = Field(ge=1)


class GradientBlock(_Strict):
    observable: ObservableSpec
    direction: list[CoefficientEntry] = Field(min_length=1)
    time_horizon: float = Field(gt=0.0)
    n_samples: int = Field(ge=1)


class ExperimentConfig(_Strict):
    """Complete description of one run; with the seed it determines all outputs."""

    model: ModelBlock
    forcing: list[ForcingEntry] = Field(min_length=1)
    initial: list[CoefficientEntry] = []
    seed: int = Field(ge=0, lt=2**64)
    output_dir: str
    workers: int = Field(ge=1, default=1)

    analysis: Optional[AnalysisBlock] = None
    simulate: Optional[SimulateBlock] = None
    malliavin: Optional[MalliavinBlock] = None
    tail: Optional[TailBlock] = None
    ergodic: Optional[ErgodicBlock] = None
    density: Optional[DensityBlock] = None
    gradient: Optional[GradientBlock] = None


def _format_validation_error(err: ValidationError) -> list[str]:
    messages = []
    for item in err.errors():
        loc = ".".join(str(part) for part in item["loc"]) or "<root>"
        messages.append(f"{loc}: {item['msg']}")
    return messages


def config_from_dict(raw: dict, source: str = "<config>") -> ExperimentConfig:
    """Validate a raw mapping; collect every violation, not just the first."""
    if not isinstance(raw, dict):
        raise ConfigurationError(f"{source}: top level must be a mapping")
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as err:
        details = _format_validation_error(err)
        raise ConfigurationError(
            f"{source}: {len(details)} configuration error(s)", details
        ) from err


def load_config(path) -> ExperimentConfig:
    """Read and validate a YAML config file."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except OSError as err:
        raise ConfigurationError(f"cannot read config file {path}: {err}") from err
    except yaml.YAMLError as err:
        mark = getattr(err, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ConfigurationError(f"{path}: YAML syntax error{where}: {err}") from err
    return config_from_dict(raw if raw is not None else {}, str(path))


def build_forcing(cfg: ExperimentConfig) -> ForcingSpec:
    try:
        modes = ModeSet(entry.mode for entry in cfg.forcing)
        if len(modes) != len(cfg.forcing):
            raise ValueError("duplicate forcing modes")
        return ForcingSpec(modes, {entry.mode: entry.sigma for entry in cfg.forcing})
    except ValueError as err:
        raise ConfigurationError(f"forcing: {err}") from err


def build_params(cfg: ExperimentConfig) -> ModelParams:
    try:
        return ModelParams(
            nu=cfg.model.nu,
            forcing=build_forcing(cfg),
            trunc=Truncation(cfg.model.truncation),
            dt=cfg.model.dt,
            scheme=Scheme(cfg.model.scheme),
            linear=cfg.model.linear,
        )
    except ValueError as err:
        raise ConfigurationError(f"model: {err}") from err


def build_field(entries: list[CoefficientEntry], trunc: Truncation, what: str) -> SpectralField:
    coeff_map: dict[Any, float] = {}
    for entry in entries:
        if entry.mode not in trunc:
            raise ConfigurationError(
                f"{what}: mode {list(entry.mode)} lies outside truncation radius {trunc.radius}"
            )
        coeff_map[entry.mode] = entry.value
    return SpectralField.from_coefficients(trunc, coeff_map)
