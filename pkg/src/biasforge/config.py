"""Configuration: line-oriented `key = value` files with dotted sections.

Unknown keys are hard errors; a silently ignored typo corrupts an experiment.
The config hash is the SHA-256 of the canonicalized text (sorted keys, single
spacing), so key order in the file never changes the hash. Per-stage seeds
derive from the master seed and the stage name through one documented hash.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields
from pathlib import Path

from .enhance import EnhanceConfig
from .ergan import ErganConfig
from .errors import UsageError
from .skin_gan import SkinGanConfig


def parse_config_text(text: str) -> dict[str, str]:
    """Raw key -> value mapping. Blank lines and '#' comments are skipped;
    duplicate keys and lines without '=' are errors."""
    pairs: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"config line {lineno}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not key:
            raise UsageError(f"config line {lineno}: empty key")
        if key in pairs:
            raise UsageError(f"config line {lineno}: duplicate key '{key}'")
        pairs[key] = value
    return pairs


def canonical_config_text(pairs: dict[str, str]) -> str:
    return "".join(f"{k} = {pairs[k]}\n" for k in sorted(pairs))


def config_hash(pairs: dict[str, str]) -> str:
    digest = hashlib.sha256(canonical_config_text(pairs).encode("utf-8")).hexdigest()
    return digest[:16]


def derive_seed(master_seed: int, stage_name: str) -> int:
    """Stable per-stage seed: first 8 bytes (big-endian) of
    SHA-256("<master>:<stage>"), masked to 63 bits."""
    digest = hashlib.sha256(f"{master_seed}:{stage_name}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") & 0x7FFF_FFFF_FFFF_FFFF


@dataclass
class PipelineConfig:
    dataset_dir: str = "."
    manifest: str = ""
    out_dir: str = "out"
    seed: int = 0
    split_seed: int = 0
    bias_threshold: float = 0.2
    target_rate: float = 0.5
    train_steps: int = 200
    checkpoint_every: int = 100
    input_dir: str = ""
    pairs: str = ""
    bias_report: str = ""
    synthetic_dir: str = ""
    skin: SkinGanConfig = field(default_factory=SkinGanConfig)
    ergan: ErganConfig = field(default_factory=ErganConfig)
    enhance: EnhanceConfig = field(default_factory=EnhanceConfig)
    hash: str = ""
    raw: dict = field(default_factory=dict)

    def validate(self) -> None:
        if not (0.0 < self.target_rate <= 1.0):
            raise ValueError("assemble.target_rate must lie in (0, 1]")
        if not (0.0 < self.bias_threshold < 1.0):
            raise ValueError("bias.threshold must lie in (0, 1)")
        if self.train_steps < 1:
            raise ValueError("train.steps must be >= 1")
        if self.checkpoint_every < 1:
            raise ValueError("train.checkpoint_every must be >= 1")
        self.skin.validate()
        self.ergan.validate()
        self.enhance.validate()


# top-level config keys -> PipelineConfig attributes
_TOP_KEYS = {
    "dataset_dir": "dataset_dir",
    "manifest": "manifest",
    "out_dir": "out_dir",
    "seed": "seed",
    "split_seed": "split_seed",
    "bias.threshold": "bias_threshold",
    "assemble.target_rate": "target_rate",
    "assemble.bias_report": "bias_report",
    "assemble.synthetic_dir": "synthetic_dir",
    "train.steps": "train_steps",
    "train.checkpoint_every": "checkpoint_every",
    "generate.input_dir": "input_dir",
    "enhance.input_dir": "input_dir",
    "evaluate.pairs": "pairs",
}

# per-section fields that cannot be set from text
_EXCLUDED_SECTION_FIELDS = {"seed", "embedder"}


def _convert(key: str, value: str, target_type: type):
    try:
        if target_type is bool:
            low = value.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(f"not a boolean: {value!r}")
        if target_type is int:
            return int(value)
        if target_type is float:
            return float(value)
        return value
    except ValueError as e:
        raise UsageError(f"config key '{key}': {e}") from e


def build_pipeline_config(pairs: dict[str, str]) -> PipelineConfig:
    cfg = PipelineConfig()
    sections = {"skin": cfg.skin, "ergan": cfg.ergan, "enhance": cfg.enhance}
    section_fields = {
        name: {f.name: f.type for f in fields(type(obj))
               if f.name not in _EXCLUDED_SECTION_FIELDS}
        for name, obj in sections.items()
    }
    for key, value in pairs.items():
        if key in _TOP_KEYS:
            attr = _TOP_KEYS[key]
            current = getattr(cfg, attr)
            setattr(cfg, attr, _convert(key, value, type(current)))
            continue
        prefix, _, name = key.partition(".")
        if prefix in sections and name in section_fields[prefix]:
            obj = sections[prefix]
            current = getattr(obj, name)
            setattr(obj, name, _convert(key, value, type(current)))
            continue
        raise UsageError(f"unknown config key: '{key}'")
    cfg.hash = config_hash(pairs)
    cfg.raw = dict(pairs)
    try:
        cfg.validate()
    except ValueError as e:
        raise UsageError(f"invalid configuration: {e}") from e
    return cfg


def load_pipeline_config(path: str | Path) -> PipelineConfig:
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"config file not found: {path}")
    return build_pipeline_config(parse_config_text(path.read_text(encoding="utf-8")))
