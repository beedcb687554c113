"""Model and run configuration.

Every field has a default, so an empty JSON config file is valid and yields
the toy profile used throughout the tests.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any


class ConfigError(ValueError):
    """Raised when a configuration value violates an invariant."""


@dataclass
class ModelConfig:
    dim: int = 32
    heads: int = 4
    image_depth: int = 2
    text_depth: int = 2
    patch_size: int = 8
    image_size: int = 32
    num_grounding: int = 5
    max_text_len: int = 16
    vocab_size: int = 128
    freq_depth: int = 3
    freq_patch_size: int | None = None
    decoder_depth: int = 2
    # sampling rates of the 1x, 2x and 4x pyramid levels; 0.5x is kept whole
    sampling_rates: tuple[float, float, float] = (0.8, 0.6, 0.2)
    focal_gamma: float = 2.0
    focal_alpha: float = 0.25
    loss_weights: dict[str, float] = field(default_factory=lambda: {
        "bi_cls": 1.0, "fg_cls": 1.0, "bbox": 1.0, "token": 1.0, "aux": 1.0,
    })
    match_weights: tuple[float, float, float] = (2.0, 5.0, 2.0)
    ffn_ratio: int = 4
    activation: str = "gelu"
    # ablation switches
    use_frequency: bool = True
    use_selection: bool = True
    freq_attention: str = "intra_inter"
    dwt_channels: str = "luma"

    def __post_init__(self) -> None:
        self.sampling_rates = tuple(float(r) for r in self.sampling_rates)
        self.match_weights = tuple(float(w) for w in self.match_weights)
        self.validate()

    @property
    def freq_patch(self) -> int:
        return self.freq_patch_size or self.patch_size

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size

    @property
    def num_patches(self) -> int:
        return self.grid ** 2

    @property
    def num_freq_patches(self) -> int:
        side = self.image_size // 2
        return (side // self.freq_patch) ** 2

    @property
    def text_len(self) -> int:
        """Number of content positions after the CLS slot."""
        return self.max_text_len - 1

    def validate(self) -> None:
        if self.dim % self.heads:
            raise ConfigError(f"dim {self.dim} not divisible by heads {self.heads}")
        if self.image_size % 2:
            raise ConfigError("image_size must be even")
        if self.image_size % self.patch_size:
            raise ConfigError("image_size must be a multiple of patch_size")
        if (self.image_size // 2) % self.freq_patch:
            raise ConfigError("half image_size must be a multiple of the frequency patch size")
        if len(self.sampling_rates) != 3:
            raise ConfigError("sampling_rates needs one rate per selectable level (1x, 2x, 4x)")
        for r in self.sampling_rates:
            if not 0.0 < r <= 1.0:
                raise ConfigError(f"sampling rate {r} outside (0, 1]")
        if self.max_text_len < 2:
            raise ConfigError("max_text_len must leave room for CLS and one token")
        if self.vocab_size < 4:
            raise ConfigError("vocab_size must exceed the reserved ids")
        if self.freq_attention not in ("intra_inter", "intra", "inter", "standard"):
            raise ConfigError(f"unknown freq_attention {self.freq_attention!r}")
        if self.dwt_channels not in ("luma", "rgb"):
            raise ConfigError(f"unknown dwt_channels {self.dwt_channels!r}")
        for name in ("bi_cls", "fg_cls", "bbox", "token", "aux"):
            if self.loss_weights.get(name, 1.0) < 0:
                raise ConfigError(f"loss weight {name} must be non-negative")

    @classmethod
    def full_size(cls, **overrides: Any) -> "ModelConfig":
        """Full-size profile (ViT-B/16 widths, 256x256 inputs, 50 tokens)."""
        base = dict(dim=768, heads=12, image_depth=12, text_depth=6, patch_size=16,
                    image_size=256, num_grounding=5, max_text_len=50, vocab_size=30522,
                    freq_depth=3, decoder_depth=2)
        base.update(overrides)
        return cls(**base)


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    epochs: int = 50
    steps: int | None = None
    base_lr: float = 2e-5
    weight_decay: float = 0.02
    schedule: str = "cosine"
    batch_size: int = 16
    seed: int = 0
    precision: str = "f32"
    augment: bool = True
    grad_clip: float | None = None
    warmup_steps: int = 0

    def __post_init__(self) -> None:
        if isinstance(self.model, dict):
            self.model = ModelConfig(**self.model)
        if self.base_lr < 0 or self.epochs <= 0 or self.batch_size <= 0:
            raise ConfigError("lr must be non-negative; epochs and batch_size positive")
        if self.precision not in ("f32", "f64"):
            raise ConfigError(f"precision must be f32 or f64, got {self.precision!r}")
        if self.schedule not in ("cosine", "constant"):
            raise ConfigError(f"unknown schedule {self.schedule!r}")

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown run config fields: {sorted(unknown)}")
        model = data.get("model", {})
        mknown = {f.name for f in dataclasses.fields(ModelConfig)}
        if set(model) - mknown:
            raise ConfigError(f"unknown model config fields: {sorted(set(model) - mknown)}")
        return cls(**{**data, "model": ModelConfig(**model)})

    @classmethod
    def load(cls, path: str | Path | None) -> "RunConfig":
        if path is None:
            return cls()
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
        data = json.loads(text) if text.strip() else {}
        return cls.from_dict(data)
