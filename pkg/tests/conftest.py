"""Shared fixtures: briefly trained checkpoints for the acceptance suite."""

import pytest
import torch

from ctxcodec.config import TrainConfig
from ctxcodec.data import SyntheticClipSpec, generate_clip
from ctxcodec.model import load_checkpoint
from ctxcodec.pipeline import train_stage


def clip_tensor(seed: int, frames: int, size: int = 64) -> torch.Tensor:
    """(F,3,H,W) float clip in [0,1], deterministic per seed."""
    pixels, _, _ = generate_clip(SyntheticClipSpec(seed=seed, frames=frames, size=size))
    return torch.from_numpy(pixels).float().permute(0, 3, 1, 2) / 255.0


@pytest.fixture(scope="session")
def ckpt_dir(tmp_path_factory):
    return tmp_path_factory.mktemp("checkpoints")


@pytest.fixture(scope="session")
def stage1_ckpt(ckpt_dir):
    cfg = TrainConfig(stage=1, steps=250, batch_size=4, lam=1024, lr=1e-3,
                      seed=7, clip_frames=2)
    return train_stage(cfg, ckpt_dir / "stage1.pt")


@pytest.fixture(scope="session")
def stage2_ckpt(stage1_ckpt, ckpt_dir):
    cfg = TrainConfig(stage=2, steps=400, batch_size=2, lam=1024, lr=1e-3,
                      seed=7, clip_frames=3)
    return train_stage(cfg, ckpt_dir / "stage2.pt", init_from=stage1_ckpt)


@pytest.fixture(scope="session")
def trained_model(stage2_ckpt):
    model, _ = load_checkpoint(stage2_ckpt)
    return model


@pytest.fixture(scope="session")
def lambda_checkpoints(stage1_ckpt, ckpt_dir):
    """Briefly trained stage-2 checkpoints at the ladder ends, for the alpha sweep."""
    out = {}
    for lam in (256, 2048):
        cfg = TrainConfig(stage=2, steps=120, batch_size=2, lam=lam, lr=1e-3,
                          seed=7, clip_frames=3)
        out[lam] = train_stage(cfg, ckpt_dir / f"lambda{lam}.pt", init_from=stage1_ckpt)
    return out
