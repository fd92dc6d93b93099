"""Run configuration: a plain, fully serializable description of one experiment."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from typing import Any

MODES = (
    "train-variational",
    "train-general",
    "train-exact",
    "gradcheck",
    "seriesfit",
    "subroutine-bench",
)
DIM_WARN_QUBITS = 10


@dataclass
class InstanceSpec:
    n_v: int = 2
    n_h: int = 1
    D: int = 6
    seed: int = 0
    restricted: bool = True
    theta_scale: float = 1.0
    spectrum: list[float] | None = None
    model_path: str | None = None


@dataclass
class OptimizerSpec:
    learning_rate: float = 0.1
    iterations: int = 500
    target_objective: float | None = None
    init: str = "instance"  # "instance" start or "zeros"


@dataclass
class BudgetSpec:
    eps: float = 0.1
    Delta: float = 0.5
    M1: int | None = None
    mu: int | None = None


@dataclass
class ShotSpec:
    mode: str = "exact"
    shots: int | None = None
    N: int | None = None
    lmr: bool = False
    eps_h: float | None = None


@dataclass
class SeriesSpec:
    delta_l: float = 0.1
    delta_u: float = 0.3
    eps: float = 1e-2
    general: bool = False
    check_points: int = 100_000


@dataclass
class BenchSpec:
    ae_amplitudes: list[float] = field(default_factory=lambda: [0.0, 0.05, 0.3, 0.5, 0.9, 1.0])
    ae_N: list[int] = field(default_factory=lambda: [16, 64, 256])
    ae_samples: int = 100_000
    hadamard_shots: int = 10_000
    hadamard_trials: int = 400
    lmr_times: list[float] = field(default_factory=lambda: [1.0, 2.0, 4.0])
    lmr_eps: list[float] = field(default_factory=lambda: [0.01, 0.02, 0.05])
    lmr_trials: int = 5


@dataclass
class GradcheckSpec:
    fd_tol: float = 1e-5
    closed_tol: float = 1e-9
    general_eps: float = 0.05


@dataclass
class RunConfig:
    mode: str = "train-exact"
    seed: int = 0
    out: str | None = None
    instance: InstanceSpec = field(default_factory=InstanceSpec)
    optimizer: OptimizerSpec = field(default_factory=OptimizerSpec)
    budget: BudgetSpec = field(default_factory=BudgetSpec)
    shot_model: ShotSpec = field(default_factory=ShotSpec)
    series: SeriesSpec = field(default_factory=SeriesSpec)
    bench: BenchSpec = field(default_factory=BenchSpec)
    gradcheck: GradcheckSpec = field(default_factory=GradcheckSpec)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; choose from {MODES}")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RunConfig":
        nested = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        sub = {
            "instance": InstanceSpec, "optimizer": OptimizerSpec, "budget": BudgetSpec,
            "shot_model": ShotSpec, "series": SeriesSpec, "bench": BenchSpec,
            "gradcheck": GradcheckSpec,
        }
        for key, val in data.items():
            if key not in nested:
                raise ValueError(f"unknown config key {key!r}")
            if key in sub:
                known = {f.name for f in fields(sub[key])}
                extra = set(val) - known
                if extra:
                    raise ValueError(f"unknown keys in {key}: {sorted(extra)}")
                kwargs[key] = sub[key](**val)
            else:
                kwargs[key] = val
        return cls(**kwargs)

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "RunConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))
