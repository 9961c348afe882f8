"""Run configuration shared by the command line and the experiment harness."""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

OUT_ENV = "DIRACTREE_OUT"


class ConfigError(ValueError):
    pass


def default_out() -> Path:
    return Path(os.environ.get(OUT_ENV, "diractree-out"))


@dataclass
class RunConfig:
    tau: float = 0.01
    horizon: float | None = None  # None: twice the total length plus a margin
    lambda_count: int = 256
    lambda_range: tuple[float, float] = (-40.0, 40.0)
    eps: float = 1.0
    seed: int = 1
    edges: int = 8
    amplitude: float = 0.5
    spike_factor: float = 10.0
    spike_floor: float = 1e-9
    degree_tol: float = 0.2
    gl_residual: float = 1e-8
    length_tol: float | None = None  # None: tau
    potential_tol: float = 0.05
    method: str = "time"
    out: Path = field(default_factory=default_out)
    dump_intermediate: bool = False
    plots: bool = True

    def __post_init__(self):
        self.out = Path(self.out)
        self.lambda_range = tuple(float(x) for x in self.lambda_range)
        self.validate()

    def validate(self):
        positive = {
            "tau": self.tau,
            "eps": self.eps,
            "spike_factor": self.spike_factor,
            "degree_tol": self.degree_tol,
            "gl_residual": self.gl_residual,
            "potential_tol": self.potential_tol,
            "amplitude": self.amplitude,
        }
        for k, v in positive.items():
            if not v > 0:
                raise ConfigError(f"{k} must be positive, got {v}")
        if self.horizon is not None and not self.horizon > 0:
            raise ConfigError(f"horizon must be positive, got {self.horizon}")
        if self.lambda_count < 2:
            raise ConfigError("lambda_count must be at least 2")
        if len(self.lambda_range) != 2 or not self.lambda_range[0] < self.lambda_range[1]:
            raise ConfigError(f"lambda_range must be increasing, got {self.lambda_range}")
        if self.edges < 1:
            raise ConfigError("edges must be at least 1")
        if self.method not in ("time", "spectral"):
            raise ConfigError(f"method must be 'time' or 'spectral', got {self.method!r}")

    def horizon_for(self, total_length: float) -> float:
        if self.horizon is not None:
            return self.horizon
        steps = int(round((2 * total_length) / self.tau)) + int(round(0.3 / self.tau))
        return steps * self.tau

    def to_dict(self) -> dict:
        d = asdict(self)
        d["out"] = str(self.out)
        d["lambda_range"] = list(self.lambda_range)
        return d
