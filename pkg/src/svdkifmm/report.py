"""
Machine-readable run summaries.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

PHASES = ("setup", "upward", "m2l", "downward", "near", "total")


@dataclass
class RunReport:
    command: str
    config: dict
    n: int
    depth: int
    compressed_dims: list
    timings: dict
    memory_bytes: int
    error: Optional[float] = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        missing = [p for p in PHASES if p not in self.timings]
        if missing:
            raise ValueError(f"timings lack phases {missing}")
        if any(float(v) < 0 for v in self.timings.values()):
            raise ValueError("timings must be non-negative")
        self.timings = {k: float(v) for k, v in self.timings.items()}
        self.compressed_dims = [int(v) for v in self.compressed_dims]

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "RunReport":
        names = {f.name for f in fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown report fields {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, text: str) -> "RunReport":
        return cls.from_dict(json.loads(text))

    def write(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())


def plan_report(command: str, plan, timings: dict, error=None, **extra) -> RunReport:
    from dataclasses import asdict as _asdict

    cfg = _asdict(plan.config)
    cfg["quadrature"] = _asdict(plan.config.quadrature)
    cfg.update(d=plan.spec.d, epsilon1=plan.operators.epsilon1,
               epsilon2=plan.operators.epsilon2, kernel=plan.kernel.name,
               mode=plan.mode, backend=plan.backend)
    return RunReport(command, cfg, plan.n, plan.depth, list(plan.compressed_dims), timings,
                     plan.memory_bytes(), error, extra)
