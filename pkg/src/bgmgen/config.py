"""Run configuration in a flat ``key = value`` text format.

Blank lines and ``#`` comments are ignored. Unknown keys are errors, so a
typo cannot silently fall back to a default. Relative paths resolve against
the directory holding the config file.
"""
from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

from .denoiser import Architecture
from .diffusion import make_schedule
from .metrics import RetrievalConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


_PATH_KEYS = ("manifest", "checkpoint", "out_dir")


@dataclass(frozen=True)
class RunConfig:
    seed: int
    # noise schedule
    schedule_kind: str = "linear"
    n_steps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    # network
    time_steps: int = 128
    pitch_bins: int = 128
    levels: int = 2
    d_model: int = 32
    d_cond: int = 16
    d_key: int = 16
    d_value: int = 16
    d_time: int = 32
    d_fv: int = 512
    d_fl: int = 768
    kernel: int = 3
    k: int = 8
    t0: int = 200
    # training
    lr: float = 5e-5
    steps: int = 2000
    batch_size: int = 1
    conditional: bool = True
    checkpoint_every: int = 500
    # evaluation
    retrieval_m: int = 64
    retrieval_k: tuple[int, ...] = (5, 10, 20)
    retrieval_seed: int = 0
    diversity_seed: int = 0
    si_lag_min: int = 1
    si_lag_max: int = 4
    # paths
    manifest: Path | None = None
    checkpoint: Path | None = None
    out_dir: Path | None = None

    def architecture(self) -> Architecture:
        return Architecture(
            time_steps=self.time_steps, pitch_bins=self.pitch_bins, levels=self.levels,
            d_model=self.d_model, d_cond=self.d_cond, d_key=self.d_key, d_value=self.d_value,
            d_time=self.d_time, d_fv=self.d_fv, d_fl=self.d_fl, kernel=self.kernel,
            k=self.k, t0=self.t0)

    def schedule(self):
        return make_schedule(self.schedule_kind, self.n_steps, self.beta_start, self.beta_end)

    def train_config(self) -> TrainConfig:
        return TrainConfig(steps=self.steps, lr=self.lr, batch_size=self.batch_size,
                           seed=self.seed)

    def retrieval(self) -> RetrievalConfig:
        return RetrievalConfig(m=self.retrieval_m, ks=self.retrieval_k,
                               seed=self.retrieval_seed)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if value is None:
                continue
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            elif isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"


def _convert(name: str, kind, raw: str, base: Path):
    if name in _PATH_KEYS:
        return (base / raw).resolve()
    if name == "retrieval_k":
        return tuple(int(v) for v in raw.split(",") if v.strip())
    if name == "conditional":
        low = raw.lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise ConfigError(f"{name}: expected a boolean, got {raw!r}")
        return low in ("true", "1", "yes")
    if kind in ("int", int):
        return int(raw)
    if kind in ("float", float):
        return float(raw)
    return raw


def parse_config(text: str, base: Path | str = ".", overrides: dict | None = None) -> RunConfig:
    base = Path(base)
    types = {f.name: f.type for f in fields(RunConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            values[key] = _convert(key, types[key], raw, base)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from None
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value
    if "seed" not in values:
        raise ConfigError("seed is mandatory")
    try:
        cfg = RunConfig(**values)
        cfg.architecture()
        cfg.retrieval()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def load_config(path, **overrides) -> RunConfig:
    path = Path(path)
    return parse_config(path.read_text(encoding="utf-8"), path.parent, overrides)


def with_overrides(cfg: RunConfig, **kw) -> RunConfig:
    return replace(cfg, **{k: v for k, v in kw.items() if v is not None})
