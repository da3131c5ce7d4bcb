"""Self-describing bitstream container.

Layout (all multi-byte integers little-endian, sizes 32-bit):

    magic "CGT1" | version u8 | frame H u32 | frame W u32
    latent h u32 | latent w u32 | latent C u32
    lambda-index u8 | decode steps T u32 | frame count u32
    then per frame: hyper payload (u32 length + bytes)
                    T latent segments (u32 length + bytes each)
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

MAGIC = b"CGT1"
VERSION = 1


class BitstreamError(ValueError):
    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


@dataclass
class StreamHeader:
    frame_h: int
    frame_w: int
    latent_h: int
    latent_w: int
    latent_c: int
    lambda_index: int
    steps: int
    frame_count: int


@dataclass
class FrameChunk:
    hyper: bytes
    segments: list[bytes]


def write_stream(header: StreamHeader, frames: list[FrameChunk]) -> bytes:
    if len(frames) != header.frame_count:
        raise BitstreamError("frame count does not match header")
    out = bytearray()
    out += MAGIC
    out += struct.pack("<B", VERSION)
    out += struct.pack("<IIIII", header.frame_h, header.frame_w,
                       header.latent_h, header.latent_w, header.latent_c)
    out += struct.pack("<B", header.lambda_index)
    out += struct.pack("<II", header.steps, header.frame_count)
    for chunk in frames:
        if len(chunk.segments) != header.steps:
            raise BitstreamError("segment count does not match decode steps")
        out += struct.pack("<I", len(chunk.hyper))
        out += chunk.hyper
        for seg in chunk.segments:
            out += struct.pack("<I", len(seg))
            out += seg
    return bytes(out)


class _Cursor:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise BitstreamError(f"truncated stream while reading {what}", self.pos)
        piece = self.data[self.pos:self.pos + n]
        self.pos += n
        return piece

    def u8(self, what) -> int:
        return self.take(1, what)[0]

    def u32(self, what) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def read_stream(data: bytes) -> tuple[StreamHeader, list[FrameChunk]]:
    cur = _Cursor(data)
    magic = cur.take(len(MAGIC), "magic")
    if magic != MAGIC:
        raise BitstreamError(f"bad magic {magic!r}", 0)
    version = cur.u8("version")
    if version != VERSION:
        raise BitstreamError(f"unsupported format version {version}", 4)
    header = StreamHeader(
        frame_h=cur.u32("frame height"),
        frame_w=cur.u32("frame width"),
        latent_h=cur.u32("latent height"),
        latent_w=cur.u32("latent width"),
        latent_c=cur.u32("latent channels"),
        lambda_index=cur.u8("lambda index"),
        steps=cur.u32("decode steps"),
        frame_count=cur.u32("frame count"),
    )
    frames = []
    for f in range(header.frame_count):
        hyper = cur.take(cur.u32("hyper length"), f"frame {f} hyper payload")
        segments = [cur.take(cur.u32("segment length"), f"frame {f} segment {s}")
                    for s in range(header.steps)]
        frames.append(FrameChunk(hyper, segments))
    if cur.pos != len(data):
        raise BitstreamError("trailing bytes after final frame", cur.pos)
    return header, frames
