"""Line-oriented `key = value` run configuration.

Every key has a default; unknown keys are rejected so typos fail loudly.
The canonical rendering (defaults resolved, fixed key order) is echoed
by each command and written into its output directory.
"""

from dataclasses import dataclass, fields
from pathlib import Path

from tanet.blocks import variant_flags


@dataclass
class RunConfig:
    base_channels: int = 16
    num_tabs: int = 2
    crop: int = 64
    batch: int = 4
    steps: int = 2000
    lr0: float = 1e-4
    lr_min: float = 1e-7
    lambda_fft: float = 1e-2
    epsilon: float = 1e-3
    seed: int = 0
    variant: str = "Net5"
    use_global_residual: bool = True
    data_dir: str = "data"
    out_dir: str = "out"

    def __post_init__(self):
        variant_flags(self.variant)
        if self.crop % 4 != 0 or self.crop < 4:
            raise ValueError(f"crop must be a positive multiple of 4, got {self.crop}")
        for key in ("batch", "steps", "base_channels", "num_tabs"):
            if getattr(self, key) < (0 if key == "steps" else 1):
                raise ValueError(f"{key} must be positive, got {getattr(self, key)}")


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _parse_value(key, text):
    kind = _TYPES[key]
    if kind == "bool" or kind is bool:
        low = text.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ValueError(f"{key}: expected a boolean, got {text!r}")
    if kind == "int" or kind is int:
        return int(text)
    if kind == "float" or kind is float:
        return float(text)
    return text


def parse_run_config(path):
    """Parse a config file; '#' comments and blank lines are ignored."""
    path = Path(path)
    values = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, text = line.partition("=")
        key = key.strip()
        if key not in _TYPES:
            raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = _parse_value(key, text.strip())
    return RunConfig(**values)


def format_run_config(cfg):
    """Canonical text form, one key per line in declaration order."""
    lines = []
    for f in fields(RunConfig):
        value = getattr(cfg, f.name)
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"
