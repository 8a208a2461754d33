"""Pipeline configuration.

Config files use one ``key = value`` pair per line; ``#`` starts a comment.
Lists are comma separated and booleans accept true/false/yes/no/1/0.
Unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    # boundaries
    boundary_scale: float = 2.0
    nms: bool = False
    # proposals
    eps: float = 1e-3
    num_seeds: int = 64
    dedup_threshold: float = 0.95
    border_step: int = 8
    static_proposals: bool = True
    # trajectories
    stride: int = 4
    theta_a: float = 0.5
    theta_r: float = 0.01
    # affinities
    radius: float = 60.0
    lam: float = 0.1
    window: int = 3
    min_overlap: int = 3
    eps_a: float = 1e-3
    # propagation and clustering
    iters: int = 50
    x_thresh: float = 0.5
    k_list: tuple = (2, 3, 4, 5, 6, 8, 10)
    # supervoxels and projection
    superpixel_source: str = "motion"
    theta_sp: float = 0.3
    min_area: int = 16
    theta_link: float = 0.5
    thresh: float = 0.5
    # scoring and ranking
    keep_top: int = 8
    keep_top_static: int = 2
    diversify: bool = True
    gamma: float = 1.0
    aggregate: str = "sum"
    scores_file: str = ""
    # evaluation
    at_sizes: tuple = tuple(2**k for k in range(11))
    seed: int = 0

    def __post_init__(self):
        checks = [
            (self.boundary_scale > 0, "boundary_scale must be > 0"),
            (self.eps > 0, "eps must be > 0"),
            (self.num_seeds >= 1, "num_seeds must be >= 1"),
            (0 <= self.dedup_threshold <= 1, "dedup_threshold must lie in [0, 1]"),
            (self.border_step >= 1, "border_step must be >= 1"),
            (self.stride >= 1, "stride must be >= 1"),
            (self.theta_a >= 0 and self.theta_r >= 0, "theta_a and theta_r must be >= 0"),
            (self.radius >= 0, "radius must be >= 0"),
            (self.lam > 0, "lam must be > 0"),
            (self.window >= 1, "window must be >= 1"),
            (self.min_overlap >= 2, "min_overlap must be >= 2"),
            (0 <= self.eps_a <= 1, "eps_a must lie in [0, 1]"),
            (self.iters >= 0, "iters must be >= 0"),
            (0 < self.x_thresh <= 1, "x_thresh must lie in (0, 1]"),
            (all(2 <= k <= 50 for k in self.k_list), "every k in k_list must lie in [2, 50]"),
            (self.superpixel_source in ("motion", "image"), "superpixel_source must be motion or image"),
            (self.theta_sp >= 0, "theta_sp must be >= 0"),
            (self.min_area >= 1, "min_area must be >= 1"),
            (self.theta_link >= 0, "theta_link must be >= 0"),
            (0 < self.thresh <= 1, "thresh must lie in (0, 1]"),
            (self.keep_top >= 1, "keep_top must be >= 1"),
            (self.keep_top_static >= 0, "keep_top_static must be >= 0"),
            (self.gamma >= 0, "gamma must be >= 0"),
            (self.aggregate in ("sum", "mean"), "aggregate must be sum or mean"),
            (len(self.at_sizes) > 0 and all(s >= 1 for s in self.at_sizes), "at_sizes must be positive"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    def replace(self, **changes) -> "PipelineConfig":
        return resolve(self, changes)


_FIELDS = {f.name: f for f in fields(PipelineConfig)}


def parse_value(key: str, raw):
    if key not in _FIELDS:
        raise ConfigError(f"unknown config key {key!r}")
    default = _FIELDS[key].default
    if not isinstance(raw, str):
        if isinstance(default, tuple):
            return tuple(raw)
        return raw
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(int(x) for x in raw.split(",") if x.strip())
        return raw
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for {key}") from None


def parse_text(text: str) -> dict:
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = parse_value(key, value)
    return out


def resolve(base: PipelineConfig | None = None, overrides: dict | None = None) -> PipelineConfig:
    values = dataclasses.asdict(base or PipelineConfig())
    for key, raw in (overrides or {}).items():
        values[key] = parse_value(key, raw)
    return PipelineConfig(**values)


def load_config(path, overrides: dict | None = None) -> PipelineConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    values = parse_text(text)
    values.update(overrides or {})
    return resolve(None, values)
