"""Experiment configuration: one JSON document with sections model, solver,
simulation and outputs.  Unknown keys are rejected at every level."""

from __future__ import annotations

import json
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .regularizers import KINDS


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class PhiConfig(_Strict):
    name: Literal[KINDS] = "none"  # type: ignore[valid-type]
    strength: float = 1.0
    eps: float = 1e-3
    alpha: float = 2.0
    lam1: float = 0.0
    lam2: float = 0.0


class VectorConfig(_Strict):
    """Distribution of xi or x0 entries.

    gaussian(mean, var); constant(value); sparse(rho, value): a fraction rho
    equal to ``value``, the rest 0; rademacher; atoms(values, weights).
    """

    kind: Literal["gaussian", "constant", "sparse", "rademacher", "atoms"] = "gaussian"
    mean: float = 0.0
    var: float = 1.0
    value: float = 1.0
    rho: float = 0.1
    values: list[float] = Field(default_factory=list)
    weights: list[float] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check(self):
        if self.kind == "gaussian" and not self.var > 0:
            raise ValueError("var must be positive")
        if self.kind == "sparse" and not 0 < self.rho < 1:
            raise ValueError("rho must lie in (0, 1)")
        if self.kind == "atoms" and (not self.values or len(self.values) != len(self.weights)):
            raise ValueError("atoms needs matching non-empty values and weights")
        return self


class PotentialFn(_Strict):
    """Objective f of the toy SGD: quadratic x^2/2 or double_well x^4/4 - x^2/2 - tilt*x."""

    name: Literal["quadratic", "double_well"] = "double_well"
    tilt: float = 0.2


class ModelConfig(_Strict):
    kind: Literal["regression", "pca", "toy_sgd", "custom"] = "regression"
    tau: float = 0.2
    sigma: float = 1.0
    omega: float = 2.0
    beta: float = 0.0
    phi: PhiConfig = Field(default_factory=PhiConfig)
    sensing_dist: Literal["gaussian", "rademacher"] = "gaussian"
    noise_dist: Literal["gaussian", "rademacher"] = "gaussian"
    spike_dist: Literal["gaussian", "rademacher"] = "rademacher"
    xi: VectorConfig = Field(default_factory=lambda: VectorConfig(kind="constant", value=0.0))
    x0: VectorConfig = Field(default_factory=VectorConfig)
    f: PotentialFn = Field(default_factory=PotentialFn)
    # custom: G(x, xi) = -k (x - xi) + c and constant Lambda
    drift_k: float = 1.0
    drift_c: float = 0.0
    diffusion: float = 1.0

    @field_validator("tau")
    @classmethod
    def _tau(cls, v):
        if not v > 0:
            raise ValueError("tau must be positive")
        return v

    @model_validator(mode="after")
    def _check(self):
        if self.sigma < 0 or self.beta < 0 or not self.omega > 0 or self.diffusion < 0:
            raise ValueError("need sigma >= 0, beta >= 0, omega > 0, diffusion >= 0")
        return self


class SolverConfig(_Strict):
    T: float = 10.0
    dt: float = 1e-3
    delta_T: float = 5.0
    tol: float = 1e-6
    max_iter: int = 50
    theta: float = 0.5
    m: int = 1025
    x_min: Optional[float] = None
    x_max: Optional[float] = None
    cap: float = 1e6
    save_times: list[float] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check(self):
        if not (self.T > 0 and self.dt > 0 and self.delta_T > 0 and self.tol > 0):
            raise ValueError("T, dt, delta_T and tol must be positive")
        if self.dt > 0.1:
            raise ValueError("dt must not exceed 0.1")
        if not 0.5 <= self.theta <= 1:
            raise ValueError("theta must lie in [0.5, 1]")
        if self.max_iter < 1 or self.m < 3:
            raise ValueError("need max_iter >= 1 and m >= 3")
        if (self.x_min is None) != (self.x_max is None):
            raise ValueError("give both x_min and x_max or neither")
        return self


class SimulationConfig(_Strict):
    n: int = 1000
    T: float = 10.0
    trials: int = 1
    seed: int = 0
    record_times: list[float] = Field(default_factory=list)
    snapshot_times: list[float] = Field(default_factory=list)
    backend: Literal["auto", "compiled", "numpy", "exact"] = "auto"
    hist_edges: list[float] = Field(default_factory=list)  # toy_sgd histograms

    @model_validator(mode="after")
    def _check(self):
        if self.n < 1 or self.trials < 1 or not self.T > 0:
            raise ValueError("need n >= 1, trials >= 1 and T > 0")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        return self

    def times(self) -> list[float]:
        if self.record_times:
            return self.record_times
        return [self.T * j / 20 for j in range(21)]


class CSweep(_Strict):
    min: float = -2.0
    max: float = 4.0
    num: int = 121


class RocConfig(_Strict):
    times: list[float] = Field(default_factory=lambda: [0.5, 2.0, 8.0])
    c: CSweep = Field(default_factory=CSweep)
    xi_on: Optional[float] = None  # defaults to the nonzero xi atom


class PotentialConfig(_Strict):
    betas: list[float] = Field(default_factory=lambda: [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.8, 1.0])
    x_min: float = -4.0
    x_max: float = 6.0
    m: int = 2001
    xi_value: Optional[float] = None


class CompareConfig(_Strict):
    sim: list[str] = Field(default_factory=list)
    pde: Optional[str] = None
    observable: str = "mse"
    param: Optional[str] = None
    z_bound: float = 4.0


class OutputsConfig(_Strict):
    dir: str = "out"
    snapshots: bool = True
    roc: RocConfig = Field(default_factory=RocConfig)
    potential: PotentialConfig = Field(default_factory=PotentialConfig)
    compare: CompareConfig = Field(default_factory=CompareConfig)


class ExperimentConfig(_Strict):
    model: ModelConfig = Field(default_factory=ModelConfig)
    solver: SolverConfig = Field(default_factory=SolverConfig)
    simulation: SimulationConfig = Field(default_factory=SimulationConfig)
    outputs: OutputsConfig = Field(default_factory=OutputsConfig)

    def resolved(self) -> dict:
        return self.model_dump(mode="json")


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        data = json.load(fh)
    return ExperimentConfig.model_validate(data)


def write_resolved(cfg: ExperimentConfig, path):
    with open(path, "w") as fh:
        json.dump(cfg.resolved(), fh, indent=2, sort_keys=True)
        fh.write("\n")

