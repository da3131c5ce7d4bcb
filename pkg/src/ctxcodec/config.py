"""Model and training configuration objects."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

# Rate-distortion weights the codec is trained at; bitstream headers store an
# index into this ladder.
LAMBDA_LADDER = (256, 512, 1024, 2048)


def lambda_index(lam: int) -> int:
    if lam not in LAMBDA_LADDER:
        raise ValueError(f"lambda {lam} not in ladder {LAMBDA_LADDER}")
    return LAMBDA_LADDER.index(lam)


@dataclass
class ModelConfig:
    """Architecture hyperparameters. Frozen into checkpoints."""

    frame_size: int = 64          # H = W, must be a multiple of downsample
    downsample: int = 4
    latent_channels: int = 32
    hyper_channels: int = 32
    ctx_channels: int = 64        # width of hyper/temporal context features
    dim: int = 96                 # transformer embedding width
    heads: int = 4
    window: int = 4               # latent-grid window side
    query_grid: int = 8           # resampler query grid side (n_q = query_grid**2)
    query_window: int = 2
    resampler_blocks: int = 1
    fusion_blocks: int = 2
    decoder_blocks: int = 4
    mlp_ratio: int = 4
    sigma_min: float = 0.01
    symbol_min: int = -64
    symbol_max: int = 63
    cdf_precision: int = 16
    alpha: float = 0.5            # certainty weight in the dependency score
    gop: int = 8                  # I-frame every gop frames
    context_mode: str = "tcr"     # "tcr" or "full" (plain windowed self-attention)

    def __post_init__(self):
        if self.frame_size % self.downsample:
            raise ValueError("frame_size must be a multiple of downsample")
        if self.query_grid % self.query_window:
            raise ValueError("query_grid must be a multiple of query_window")
        if self.latent_size % self.window:
            raise ValueError("latent grid must be a multiple of window")
        if self.dim % self.heads:
            raise ValueError("dim must be divisible by heads")
        if self.context_mode not in ("tcr", "full"):
            raise ValueError(f"unknown context_mode {self.context_mode!r}")
        # query grid and latent grid must partition into the same window count
        qwins = self.query_grid // self.query_window
        if self.latent_size % qwins:
            raise ValueError("latent grid does not pair with the query grid windows")

    @property
    def latent_size(self) -> int:
        return self.frame_size // self.downsample

    @property
    def num_queries(self) -> int:
        return self.query_grid ** 2


@dataclass
class TrainConfig:
    """One training run. `steps` counts optimizer steps; `T` is the decode step count."""

    lam: int = 1024
    stage: int = 1
    steps: int = 1000
    batch_size: int = 4
    alpha: float = 0.5
    T: int = 8
    lr: float = 1e-4
    seed: int = 0
    clip_frames: int = 0          # 0 -> stage default (2 / 3 / 5)
    mask_ratio_min: float = 0.5
    mask_ratio_max: float = 1.0
    topk_temperature: float = 0.5
    log_every: int = 50

    def __post_init__(self):
        if self.lam not in LAMBDA_LADDER:
            raise ValueError(f"lambda {self.lam} not in ladder {LAMBDA_LADDER}")
        if self.stage not in (1, 2, 3):
            raise ValueError("stage must be 1, 2 or 3")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.clip_frames == 0:
            self.clip_frames = {1: 2, 2: 3, 3: 5}[self.stage]

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def load_train_config(path: str | Path | None, **overrides) -> TrainConfig:
    """Build a TrainConfig from an optional JSON file; keyword overrides win."""
    values = {}
    if path is not None:
        with open(path) as fh:
            data = json.load(fh)
        known = {f.name for f in fields(TrainConfig)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        values.update(data)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig(**values)
