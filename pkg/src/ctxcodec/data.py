"""Synthetic clips, clip directories, and loading helpers.

Clips are moving rectangles/ellipses over a solid background with integer
pixel velocities and toroidal wrap-around, so position at frame t is exactly
(p0 + v*t) mod size. Saved clips are lossless PNGs plus a JSON manifest.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from PIL import Image


@dataclass
class SyntheticClipSpec:
    seed: int = 0
    frames: int = 5
    size: int = 64
    min_objects: int = 1
    max_objects: int = 4
    max_speed: int = 3


@dataclass
class ClipObject:
    shape: str                      # "rect" or "ellipse"
    half: tuple[int, int]           # half-extent (hy, hx)
    color: tuple[int, int, int]
    p0: tuple[int, int]             # center at frame 0 (y, x)
    v: tuple[int, int]              # integer pixels per frame (vy, vx)


def _draw_object(frame: np.ndarray, obj: ClipObject, t: int) -> tuple[int, int]:
    size = frame.shape[0]
    cy = (obj.p0[0] + obj.v[0] * t) % size
    cx = (obj.p0[1] + obj.v[1] * t) % size
    hy, hx = obj.half
    dy = np.arange(-hy, hy + 1)
    dx = np.arange(-hx, hx + 1)
    if obj.shape == "ellipse":
        keep = (dy[:, None] / (hy + 0.5)) ** 2 + (dx[None, :] / (hx + 0.5)) ** 2 <= 1.0
    else:
        keep = np.ones((dy.size, dx.size), dtype=bool)
    ys = (cy + dy) % size
    xs = (cx + dx) % size
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    frame[yy[keep], xx[keep]] = obj.color
    return cy, cx


def generate_clip(spec: SyntheticClipSpec):
    """Returns (frames uint8 (F,H,W,3), objects, positions[f][i] = (cy, cx))."""
    rng = np.random.default_rng(spec.seed)
    background = tuple(int(v) for v in rng.integers(0, 256, 3))
    objects = []
    for _ in range(int(rng.integers(spec.min_objects, spec.max_objects + 1))):
        objects.append(ClipObject(
            shape=["rect", "ellipse"][int(rng.integers(0, 2))],
            half=(int(rng.integers(3, spec.size // 4)), int(rng.integers(3, spec.size // 4))),
            color=tuple(int(v) for v in rng.integers(0, 256, 3)),
            p0=(int(rng.integers(0, spec.size)), int(rng.integers(0, spec.size))),
            v=(int(rng.integers(-spec.max_speed, spec.max_speed + 1)),
               int(rng.integers(-spec.max_speed, spec.max_speed + 1))),
        ))
    frames = np.empty((spec.frames, spec.size, spec.size, 3), dtype=np.uint8)
    positions = []
    for t in range(spec.frames):
        frame = np.empty((spec.size, spec.size, 3), dtype=np.uint8)
        frame[:] = background
        positions.append([_draw_object(frame, obj, t) for obj in objects])
        frames[t] = frame
    return frames, objects, positions


def save_clip(directory, spec: SyntheticClipSpec) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    frames, objects, positions = generate_clip(spec)
    names = []
    for t, frame in enumerate(frames):
        name = f"frame_{t:04d}.png"
        Image.fromarray(frame).save(directory / name)
        names.append(name)
    manifest = {
        "spec": asdict(spec),
        "frames": names,
        "objects": [asdict(o) for o in objects],
        "positions": positions,
    }
    with open(directory / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1)
    return directory


def load_clip(directory) -> np.ndarray:
    """Clip directory -> float32 (F,H,W,3) in [0,1]."""
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if manifest_path.exists():
        with open(manifest_path) as fh:
            names = json.load(fh)["frames"]
    else:
        names = sorted(p.name for p in directory.glob("*.png"))
    if not names:
        raise FileNotFoundError(f"no frames found in {directory}")
    frames = [np.asarray(Image.open(directory / n).convert("RGB")) for n in names]
    return np.stack(frames).astype(np.float32) / 255.0


def clip_pool(seed: int, count: int, frames: int, size: int = 64) -> np.ndarray:
    """Deterministic in-memory training pool, float32 (count,F,H,W,3) in [0,1]."""
    clips = []
    for i in range(count):
        spec = SyntheticClipSpec(seed=seed * 100003 + i, frames=frames, size=size)
        clips.append(generate_clip(spec)[0])
    return np.stack(clips).astype(np.float32) / 255.0
