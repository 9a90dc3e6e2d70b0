"""Run configuration: one flat key-value document (JSON) covering data
generation, training, localization, and the ablation switches. CLI flags
override file values; unknown keys are rejected."""

import dataclasses
import hashlib
import json
from dataclasses import dataclass

from .trainer import TrainConfig


@dataclass
class RunConfig:
    # training (mirrors TrainConfig)
    L_outer: int = 5
    steps_per_round: int = 500
    L_inner: int = 20
    l_scheduling: int = 2
    lam: float = 5.0
    tau: float = 0.1
    lr_model: float = 1e-2
    lr_scheduler: float = 1e-3
    rho_init: float = 1.0
    alpha_init: float = 0.0
    rho_multiplier: float = 10.0
    h_progress_ratio: float = 0.25
    h_tolerance: float = 1e-8
    n_mc: int = 2
    p: int = 3
    r: int = 4
    embed: int = 8
    hidden: int = 16
    gdim: int = 8
    init_edge_prob: float = 0.1
    temperature_start: float = 1.0
    temperature_end: float = 0.2
    # synthetic benchmark
    d_full: int = 24
    k_mask: int = 4
    T: int = 1000
    expected_degree: float = 3.0
    noise_scale: float = 1.0
    conf_ar: float = 0.8
    n_windows: int = 5
    fault_fraction: float = 0.10
    mechanism: str = "mixed"
    alarms_per_window: int = 2
    nonlinear: bool = False
    # localization
    phi: float = 0.15
    psi: float = 0.5
    n_rw: int = 100_000
    k: int = 5
    threshold: float = 0.5
    soft_walk: bool = False
    # ablations
    disable_deconfounding: bool = False   # "w/o DC": r forced to 0
    disable_scheduling: bool = False      # "w/o SH": weights pinned to 1
    # plumbing
    out_dir: str = ""
    seed: int = 0

    def to_train_config(self) -> TrainConfig:
        fields = {f.name for f in dataclasses.fields(TrainConfig)}
        kwargs = {k: v for k, v in dataclasses.asdict(self).items() if k in fields}
        if self.disable_deconfounding:
            kwargs["r"] = 0
        return TrainConfig(**kwargs)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc)

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return RunConfig.from_dict(json.load(fh))


def save_config(config: RunConfig, path) -> None:
    with open(path, "w") as fh:
        json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
