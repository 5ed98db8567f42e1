"""Run configuration as a flat ``key = value`` text file."""
from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .data import DEFAULT_DATETIME_FORMAT
from .engine import TrainConfig

# paths and run locations do not change what a checkpoint means
UNHASHED = ("dataset", "output_dir")


@dataclass
class RunConfig(TrainConfig):
    dataset: str = ""
    dataset_id: str = ""
    datetime_column: str = "date"
    datetime_format: str = DEFAULT_DATETIME_FORMAT
    calendar_mode: str = "none"
    target_columns: tuple = ()
    predict_calendar: bool = False
    output_dir: str = ""

    def __post_init__(self):
        super().__post_init__()
        self.target_columns = tuple(self.target_columns)
        if self.calendar_mode not in ("ett", "traffic", "none"):
            raise ValueError(f"calendar_mode must be ett, traffic or none, got {self.calendar_mode!r}")

    def train_config(self) -> TrainConfig:
        return TrainConfig(**{f.name: getattr(self, f.name) for f in fields(TrainConfig)})

    def replace(self, **changes) -> "RunConfig":
        values = asdict(self)
        values.update(changes)
        return RunConfig(**values)


FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(value)
    return str(value)


def parse_value(key: str, text: str):
    kind = FIELD_TYPES[key]
    text = text.strip()
    if kind == "bool":
        if text.lower() not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"{key}: expected a boolean, got {text!r}")
        return text.lower() in ("true", "1", "yes")
    if kind == "int":
        return int(text)
    if kind == "float":
        return float(text)
    if kind == "tuple":
        return tuple(t.strip() for t in text.split(",") if t.strip())
    return text


def emit_config(config: RunConfig) -> str:
    return "".join(f"{f.name} = {_format(getattr(config, f.name))}\n" for f in fields(config))


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    """Parse ``key = value`` lines; lines starting with ``#`` are comments. Unknown keys are errors."""
    values = asdict(base or RunConfig())
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in FIELD_TYPES:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        values[key] = parse_value(key, value)
    return RunConfig(**values)


def load_config(path, base: RunConfig | None = None) -> RunConfig:
    return parse_config(Path(path).read_text(), base)


def config_hash(config: RunConfig, exclude=()) -> str:
    skip = set(UNHASHED) | set(exclude)
    text = "".join(line for line in emit_config(config).splitlines(keepends=True)
                   if line.split(" = ", 1)[0] not in skip)
    return hashlib.sha256(text.encode()).hexdigest()[:16]
