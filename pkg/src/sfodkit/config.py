"""Flat key=value run configuration, validation, and the run manifest.

A config file is plain text, one `key = value` per line, `#` comments;
any key can be overridden on the command line with `--set key=value`.
The manifest hashes the canonical config text plus seeds and input file
digests — never timestamps — so identical runs stamp identical hashes
into their CSV outputs.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields, replace
from datetime import datetime, timezone
from pathlib import Path

from .losses import MIXUP_STRATEGIES


class ConfigError(ValueError):
    """Invalid config input; carries the offending key for CLI reporting."""

    def __init__(self, key: str, message: str):
        super().__init__(message)
        self.key = key


@dataclass
class Config:
    # world + data
    seed: int = 0
    num_categories: int = 4
    feature_dim: int = 16
    hidden_dim: int = 32
    prototype_scale: float = 3.0
    domain_offset_scale: float = 2.25
    offset_span_mix: float = 0.5
    feature_noise_sigma: float = 0.15
    weak_aug_sigma: float = 0.1
    strong_aug_sigma: float = 0.15
    scene_extent: float = 100.0
    min_objects: int = 1
    max_objects: int = 8
    min_box_size: float = 7.0
    max_box_size: float = 24.0
    max_object_overlap: float = 0.3
    n_source: int = 60
    n_target: int = 40
    n_eval: int = 24
    # proposals
    n_jitter: int = 8
    n_random: int = 16
    jitter_sigma: float = 6.0
    # thresholds + loss weights
    sigma_h: float = 0.8
    sigma_l: float = 0.1
    lambda1: float = 1.0
    lambda2: float = 0.1
    tau: float = 0.07
    # optimization
    alpha: float = 0.996
    lr: float = 0.001
    momentum: float = 0.9
    pretrain_epochs: int = 300
    adapt_epochs: int = 30
    init_scale: float = 0.1
    # module switches
    enable_pst: bool = True
    enable_lscl: bool = True
    mixup_strategy: str = "iou"
    fg_iou_threshold: float = 0.5
    match_iou_threshold: float = 0.5
    nms_iou: float = 0.5
    exclude_high_overlap: bool = False
    normalize_contrastive: bool = False

    def validate(self) -> None:
        c = self
        checks: list[tuple[bool, str, str]] = [
            (0.0 <= c.sigma_l <= c.sigma_h <= 1.0, "sigma_l",
             f"need 0 <= sigma_l <= sigma_h <= 1, got sigma_l={c.sigma_l} sigma_h={c.sigma_h}"),
            (c.lambda1 >= 0.0, "lambda1", "lambda1 must be >= 0"),
            (c.lambda2 >= 0.0, "lambda2", "lambda2 must be >= 0"),
            (c.tau > 0.0, "tau", "tau must be > 0"),
            (0.0 <= c.alpha <= 1.0, "alpha", "alpha must lie in [0, 1]"),
            (c.lr >= 0.0, "lr", "lr must be >= 0"),
            (0.0 <= c.momentum < 1.0, "momentum", "momentum must lie in [0, 1)"),
            (c.pretrain_epochs >= 0, "pretrain_epochs", "pretrain_epochs must be >= 0"),
            (c.adapt_epochs >= 0, "adapt_epochs", "adapt_epochs must be >= 0"),
            (c.mixup_strategy in MIXUP_STRATEGIES, "mixup_strategy",
             f"mixup_strategy must be one of {MIXUP_STRATEGIES}"),
            (c.num_categories >= 1, "num_categories", "num_categories must be >= 1"),
            (c.feature_dim >= 1, "feature_dim", "feature_dim must be >= 1"),
            (c.hidden_dim >= 1, "hidden_dim", "hidden_dim must be >= 1"),
            (c.init_scale > 0.0, "init_scale", "init_scale must be > 0"),
            (c.strong_aug_sigma >= c.weak_aug_sigma >= 0.0, "weak_aug_sigma",
             "need strong_aug_sigma >= weak_aug_sigma >= 0"),
            (c.feature_noise_sigma >= 0.0, "feature_noise_sigma",
             "feature_noise_sigma must be >= 0"),
            (0.0 < c.fg_iou_threshold < 1.0, "fg_iou_threshold",
             "fg_iou_threshold must lie in (0, 1)"),
            (0.0 < c.match_iou_threshold < 1.0, "match_iou_threshold",
             "match_iou_threshold must lie in (0, 1)"),
            (0.0 <= c.nms_iou <= 1.0, "nms_iou", "nms_iou must lie in [0, 1]"),
            (1 <= c.min_objects <= c.max_objects, "min_objects",
             "need 1 <= min_objects <= max_objects"),
            (0.0 < c.min_box_size <= c.max_box_size, "min_box_size",
             "need 0 < min_box_size <= max_box_size"),
            (c.max_box_size <= c.scene_extent, "max_box_size",
             "max_box_size must not exceed scene_extent"),
            (0.0 <= c.max_object_overlap <= 1.0, "max_object_overlap",
             "max_object_overlap must lie in [0, 1]"),
            (0.0 <= c.offset_span_mix <= 1.0, "offset_span_mix",
             "offset_span_mix must lie in [0, 1]"),
            (c.n_source >= 1, "n_source", "n_source must be >= 1"),
            (c.n_target >= 1, "n_target", "n_target must be >= 1"),
            (c.n_eval >= 1, "n_eval", "n_eval must be >= 1"),
            (c.n_jitter >= 0, "n_jitter", "n_jitter must be >= 0"),
            (c.n_random >= 0, "n_random", "n_random must be >= 0"),
            (c.n_jitter + c.n_random >= 1, "n_jitter", "need at least one proposal per scene"),
            (c.jitter_sigma >= 0.0, "jitter_sigma", "jitter_sigma must be >= 0"),
        ]
        for ok, key, message in checks:
            if not ok:
                raise ConfigError(key, message)

    def to_text(self) -> str:
        """Canonical serialization: declaration order, one key per line."""
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    def with_overrides(self, **kwargs) -> "Config":
        cfg = replace(self, **kwargs)
        cfg.validate()
        return cfg


_FIELD_TYPES = {f.name: f.type for f in fields(Config)}


def _convert(key: str, raw: str):
    ftype = _FIELD_TYPES[key]
    raw = raw.strip()
    try:
        if ftype == "bool" or ftype is bool:
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError("expected true/false")
        if ftype == "int" or ftype is int:
            return int(raw)
        if ftype == "float" or ftype is float:
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(key, f"bad value for {key}: {raw!r} ({exc})") from None


def parse_config_text(text: str, base: Config | None = None, source: str = "<config>") -> Config:
    cfg = base or Config()
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError("", f"{source}:{lineno}: expected 'key = value', got {line.strip()!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ConfigError(key, f"{source}:{lineno}: unknown key {key!r}")
        values[key] = _convert(key, raw)
    return replace(cfg, **values)


def apply_overrides(cfg: Config, overrides: list[str]) -> Config:
    """Apply `--set key=value` pairs on top of a config."""
    values = {}
    for item in overrides:
        if "=" not in item:
            raise ConfigError(item, f"override must look like key=value, got {item!r}")
        key, raw = (part.strip() for part in item.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ConfigError(key, f"unknown key {key!r}")
        values[key] = _convert(key, raw)
    return replace(cfg, **values)


def load_config(path: str | Path | None = None, overrides: list[str] | None = None) -> Config:
    cfg = Config()
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError("config", f"config file not found: {p}")
        cfg = parse_config_text(p.read_text(), cfg, source=str(p))
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    cfg.validate()
    return cfg


# ---------------------------------------------------------------------------
# Run manifest
# ---------------------------------------------------------------------------

def _sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def hash_file(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class RunManifest:
    config_text: str
    seeds: list[int]
    input_hashes: dict[str, str]
    out_dir: str
    created: str

    @property
    def manifest_hash(self) -> str:
        """Content hash over config, seeds and inputs; timestamps excluded."""
        payload = {
            "config": self.config_text,
            "seeds": list(self.seeds),
            "inputs": dict(sorted(self.input_hashes.items())),
        }
        return _sha256_text(json.dumps(payload, sort_keys=True))

    def write(self, out_dir: str | Path) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        doc = asdict(self)
        doc["manifest_hash"] = self.manifest_hash
        path = out / "manifest.json"
        path.write_text(json.dumps(doc, indent=2) + "\n")
        return path


def make_manifest(
    cfg: Config,
    seeds: list[int],
    out_dir: str | Path,
    input_paths: dict[str, str | Path] | None = None,
) -> RunManifest:
    hashes = {name: hash_file(p) for name, p in (input_paths or {}).items()}
    return RunManifest(
        config_text=cfg.to_text(),
        seeds=list(seeds),
        input_hashes=hashes,
        out_dir=str(out_dir),
        created=datetime.now(timezone.utc).isoformat(timespec="seconds"),
    )
