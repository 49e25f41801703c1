"""
Run configuration: a YAML document with a preset name and a parameter block.

Example::

    preset: corrosion
    resolution: 128        # n_cells in 1-D, [n_x, n_y] in 2-D
    T: 1.0
    dt: 0.01
    picard: {tol: 1.0e-10, max_iter: 50}
    cadence: 1             # emit a trajectory row every `cadence` steps
    seed: 0                # only used by the flux validators
    output_dir: out/corrosion
    params:
      epsilon: 0.1
      Psi: 0.5

The parameter names, types and units of each preset are listed in
:data:`ddrobin.presets.PARAMETER_SCHEMA`.
"""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml


class ConfigError(ValueError):
    """The configuration is unreadable or fails validation."""


def _to_float(name, value):
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a number, got {value!r}") from None


@dataclass
class RunConfig:
    preset: str
    params: dict = field(default_factory=dict)
    resolution: int | list = 128
    T: float = 1.0
    dt: float = 0.01
    picard_tol: float = 1e-10
    picard_max_iter: int = 50
    output_dir: str = "out"
    cadence: int = 1
    seed: int = 0

    def __post_init__(self):
        self.T = _to_float("T", self.T)
        self.dt = _to_float("dt", self.dt)
        self.picard_tol = _to_float("picard.tol", self.picard_tol)
        if not self.T > 0:
            raise ConfigError(f"T must be positive, got {self.T}")
        if not self.dt > 0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if not self.picard_tol > 0:
            raise ConfigError("picard.tol must be positive")
        n = round(self.T / self.dt)
        if n < 1 or abs(n * self.dt - self.T) > 1e-9 * max(1.0, self.T):
            raise ConfigError(f"T={self.T} must be a positive integer multiple of dt={self.dt}")
        for name in ("picard_max_iter", "cadence"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
            setattr(self, name, int(v))
        if isinstance(self.resolution, (list, tuple)):
            self.resolution = [int(r) for r in self.resolution]
        else:
            self.resolution = int(self.resolution)
        if not isinstance(self.params, dict):
            raise ConfigError("params must be a mapping")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["picard"] = {"tol": d.pop("picard_tol"), "max_iter": d.pop("picard_max_iter")}
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("config root must be a mapping")
        data = copy.deepcopy(data)
        picard = data.pop("picard", {}) or {}
        known = {"preset", "params", "resolution", "T", "dt", "output_dir", "cadence", "seed"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        unknown = set(picard) - {"tol", "max_iter"}
        if unknown:
            raise ConfigError(f"unknown picard keys: {sorted(unknown)}")
        if "preset" not in data:
            raise ConfigError("config needs a 'preset' entry")
        try:
            return cls(
                picard_tol=picard.get("tol", 1e-10),
                picard_max_iter=picard.get("max_iter", 50),
                **data,
            )
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    def with_overrides(self, overrides: dict) -> "RunConfig":
        """Copy with dotted-path overrides, e.g. ``{"params.Psi": 0.5, "dt": 0.02}``."""
        d = self.to_dict()
        for path, value in overrides.items():
            keys = path.split(".")
            node = d
            for k in keys[:-1]:
                node = node.setdefault(k, {})
            node[keys[-1]] = value
        return RunConfig.from_dict(d)


def loads(text: str) -> RunConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML: {exc}") from exc
    return RunConfig.from_dict(data)


def load(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return loads(text)


def save(config: RunConfig, path) -> None:
    Path(path).write_text(config.dumps())
