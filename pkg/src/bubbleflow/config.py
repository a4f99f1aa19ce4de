"""Run configuration as plain dataclasses with JSON round-tripping."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path


@dataclass
class ProfileConfig:
    mode: str = "desk"  # paper | desk
    psi_gap_a: float | None = None
    psi_gap_b: float | None = None

    def validate(self) -> None:
        if self.mode not in ("paper", "desk"):
            raise ValueError(f"profile mode must be paper or desk, got {self.mode!r}")


@dataclass
class InitialData:
    """Recipe for the initial map."""

    kind: str = "cutoff_bubble"  # cutoff_bubble | bubble_model | file
    lam: float = 64.0
    center: tuple = (0.5, 0.5)
    cut_radius: float | None = None  # default: injectivity radius
    path: str | None = None

    def validate(self) -> None:
        if self.kind not in ("cutoff_bubble", "bubble_model", "constant", "file"):
            raise ValueError(f"unknown initial data kind {self.kind!r}")
        if self.kind == "file" and not self.path:
            raise ValueError("initial data kind 'file' needs a path")
        if self.lam <= 0:
            raise ValueError("lam must be positive")


@dataclass
class FlowConfig:
    """Time-stepping and stopping parameters of the coupled flow."""

    scheme: str = "heun"  # heun (explicit RK2) | implicit
    picture: str = "anchored"  # anchored (family fixed at mu0) | mu_star
    allow_below_mu_star: bool = False
    dt0: float = 1e-7
    dt_max: float = 1.0
    dt_min: float = 1e-14
    eta: float = 0.05  # admissible relative change of the squared gradient norm per step
    grow: float = 1.5
    cfl: float = 0.2  # explicit scheme only
    energy_tol: float = 1e-9
    mu_rel_max: float = 0.05
    mu_stop_factor: float = math.e**2
    mu_stop: float | None = None
    grad_tol: float = 1e-2
    t_max: float = 1.0
    max_steps: int = 5000
    stall_steps: int = 10_000
    eps2: float = 0.1
    enforce_core: bool = False
    solver_rtol: float = 1e-11
    rebuild_every: int = 10
    checkpoint_every: int = 0  # 0 disables; must be a multiple of rebuild_every

    def validate(self) -> None:
        if self.scheme not in ("implicit", "heun"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.picture not in ("anchored", "mu_star"):
            raise ValueError(f"unknown picture {self.picture!r}")
        if not 0 < self.eta < 1:
            raise ValueError("eta must lie in (0, 1)")
        if self.checkpoint_every and self.checkpoint_every % self.rebuild_every:
            raise ValueError("checkpoint_every must be a multiple of rebuild_every")


@dataclass
class AuditCaps:
    loj_energy: float = 1e3
    loj_mu: float = 1e3
    loj_dist: float = 1e3
    eps2: float = 0.1
    spread_max: float = 4.0


@dataclass
class SweepConfig:
    lams: tuple = (32.0, 64.0, 128.0)
    slope_tol: float = 0.15


@dataclass
class RunConfig:
    grid_n: int = 512
    side: float = 1.0
    profile: ProfileConfig = field(default_factory=ProfileConfig)
    initial: InitialData = field(default_factory=InitialData)
    flow: FlowConfig = field(default_factory=FlowConfig)
    audit: AuditCaps = field(default_factory=AuditCaps)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    out_dir: str = "runs/out"
    seed: int = 0
    threads: int = 1

    def validate(self) -> None:
        if self.grid_n < 16 or self.grid_n % 2:
            raise ValueError("grid_n must be even and at least 16")
        if self.side <= 0:
            raise ValueError("side must be positive")
        if self.threads < 1:
            raise ValueError("threads must be positive")
        self.profile.validate()
        self.initial.validate()
        self.flow.validate()

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def digest(self) -> str:
        """Hash of everything that can change results (the output location cannot)."""
        d = self.to_dict()
        d.pop("out_dir")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        cfg = _build(cls, data)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _build(kind, data):
    if not isinstance(data, dict):
        raise ValueError(f"expected an object for {kind.__name__}")
    known = {f.name: f for f in fields(kind)}
    unknown = set(data) - set(known)
    if unknown:
        raise ValueError(f"unknown keys for {kind.__name__}: {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        default = known[name].default_factory() if callable(known[name].default_factory) else None
        if default is not None and is_dataclass(default):
            kwargs[name] = _build(type(default), value)
        elif isinstance(value, list):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    return kind(**kwargs)
