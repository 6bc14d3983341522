"""Flat dotted-key configuration files and their typed views.

One format everywhere: ``section.key=value`` lines, ``#`` comments, no
nesting beyond the dots. Every run must carry an explicit seed; there is
no implicit randomness anywhere in the command layer.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .costmodel import ArchSpec
from .errors import ConfigError

KNOWN_SECTIONS = {
    "schedule", "model", "edit", "output", "train", "dataset",
    "oracle", "bench", "metrics", "arch",
}

_SECTION_KEYS = {
    "schedule": {"family", "beta_min", "beta_max", "horizon", "steps"},
    "model": {
        "kind", "checkpoint", "frames", "height", "width", "channels",
        "embed_dim", "blocks", "n_text", "n_conditions", "threads",
        "means", "data_variance", "init_seed",
    },
    "edit": {
        "source", "c0", "c1", "gamma", "target_token", "mask_mode",
        "mask_policy", "mask_level", "mask_dilation", "external_mask",
        "seed", "shared_noise", "baseline", "codec",
        "dds_step_size", "dds_max_iters", "dds_tol",
    },
    "output": {"directory", "emit_frames", "emit_transcript", "emit_metrics"},
    "train": {"dataset", "count", "epochs", "lr", "batch_size", "seed", "t_min_frac"},
    "dataset": {"kind", "count", "frames", "height", "width", "seed",
                "square_size", "disc_radius"},
    "oracle": {"c0", "c1", "seed", "dims", "sweep"},
    "bench": {"repeats", "seed"},
    "metrics": {"source", "edited", "mask", "clip_id"},
}


@dataclass
class ParsedConfig:
    """Raw key -> (value, line) mapping plus the source text."""

    entries: dict[str, tuple[str, int]] = field(default_factory=dict)
    text: str = ""
    path: str = ""

    # -- raw access ------------------------------------------------------
    def has(self, key: str) -> bool:
        return key in self.entries

    def raw(self, key: str) -> str:
        return self.entries[key][0]

    def line(self, key: str) -> int:
        return self.entries[key][1]

    def section(self, prefix: str) -> dict[str, str]:
        p = prefix + "."
        return {k[len(p):]: v for k, (v, _) in self.entries.items() if k.startswith(p)}

    # -- typed getters -----------------------------------------------------
    def _get(self, key: str, default, required: bool):
        if key not in self.entries:
            if required:
                raise ConfigError("missing required key", key=key)
            return None, False
        return self.entries[key][0], True

    def get_str(self, key: str, default: str | None = None, required: bool = False) -> str | None:
        value, present = self._get(key, default, required)
        return value if present else default

    def get_int(self, key: str, default: int | None = None, required: bool = False) -> int | None:
        value, present = self._get(key, default, required)
        if not present:
            return default
        try:
            return int(value)
        except ValueError:
            raise ConfigError(f"expected integer, got {value!r}",
                              key=key, line=self.line(key)) from None

    def get_float(self, key: str, default: float | None = None, required: bool = False) -> float | None:
        value, present = self._get(key, default, required)
        if not present:
            return default
        try:
            return float(value)
        except ValueError:
            raise ConfigError(f"expected number, got {value!r}",
                              key=key, line=self.line(key)) from None

    def get_bool(self, key: str, default: bool | None = None, required: bool = False) -> bool | None:
        value, present = self._get(key, default, required)
        if not present:
            return default
        lowered = value.lower()
        if lowered in ("true", "1", "yes", "on"):
            return True
        if lowered in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"expected boolean, got {value!r}", key=key, line=self.line(key))

    def get_int_list(self, key: str, default=None) -> list[int] | None:
        value, present = self._get(key, default, False)
        if not present:
            return default
        try:
            return [int(v) for v in value.split(",") if v.strip()]
        except ValueError:
            raise ConfigError(f"expected comma-separated integers, got {value!r}",
                              key=key, line=self.line(key)) from None


def parse_config_text(text: str, path: str = "<memory>") -> ParsedConfig:
    cfg = ParsedConfig(text=text, path=path)
    for lineno, rawline in enumerate(text.splitlines(), start=1):
        line = rawline.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"not a key=value line: {rawline!r}", line=lineno)
        key, value = line.split("=", 1)
        key = key.strip()
        value = value.strip()
        if not key:
            raise ConfigError("empty key", line=lineno)
        section = key.split(".", 1)[0]
        if section not in KNOWN_SECTIONS:
            raise ConfigError(f"unknown section {section!r}", key=key, line=lineno)
        if section != "arch":
            leaf = key.split(".", 1)[1] if "." in key else ""
            if leaf not in _SECTION_KEYS[section]:
                raise ConfigError(f"unknown key in section {section!r}", key=key, line=lineno)
        if key in cfg.entries:
            raise ConfigError("duplicate key", key=key, line=lineno)
        cfg.entries[key] = (value, lineno)
    return cfg


def load_config(path) -> ParsedConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text(), str(path))


# ---------------------------------------------------------------------------
# schedule / arch assembly


def schedule_from_config(cfg: ParsedConfig):
    from .schedules import Schedule

    return Schedule(
        family=cfg.get_str("schedule.family", "vp-sde"),
        beta_min=cfg.get_float("schedule.beta_min", 0.1),
        beta_max=cfg.get_float("schedule.beta_max", 20.0),
        horizon=cfg.get_float("schedule.horizon", 1.0),
        steps=cfg.get_int("schedule.steps", 50),
    )


def parse_means(spec: str, dims: tuple[int, ...]):
    """"0:0.0,1:2.0" -> constant mean grid per condition label."""
    import numpy as np

    means = {}
    for part in spec.split(","):
        part = part.strip()
        if not part:
            continue
        if ":" not in part:
            raise ConfigError(f"mean entry {part!r} is not label:value", key="model.means")
        label, value = part.split(":", 1)
        try:
            means[int(label)] = np.full(dims, float(value))
        except ValueError:
            raise ConfigError(f"bad mean entry {part!r}", key="model.means") from None
    if not means:
        raise ConfigError("model.means is empty", key="model.means")
    return means


def arch_specs_from_config(cfg: ParsedConfig) -> list[ArchSpec]:
    """Rows arch.<i>.name=... etc.; empty list when no arch section."""
    indices = sorted(
        {int(k.split(".")[1]) for k in cfg.entries if k.startswith("arch.")}
    )
    specs = []
    for i in indices:
        p = f"arch.{i}."
        name = cfg.get_str(p + "name", required=True)
        multi = cfg.get_bool(p + "multi_scale", False)
        blocks = cfg.get_int(p + "blocks", required=True)
        dtype_bytes = cfg.get_int(p + "dtype_bytes", 4)
        frames = cfg.get_int(p + "frames", None)
        reference = cfg.get_float(p + "reference_gb", None)
        if multi:
            shape = None
        else:
            seq = cfg.get_int(p + "seq", required=True)
            batch = cfg.get_int(p + "batch", 1)
            heads = cfg.get_int(p + "heads", None)
            shape = (batch, heads, seq, seq) if heads else (batch, seq, seq)
        try:
            specs.append(ArchSpec(name, shape, blocks, dtype_bytes, frames, reference))
        except ConfigError as err:
            raise ConfigError(f"bad arch row {i}: {err}", key=p.rstrip(".")) from None
    return specs
