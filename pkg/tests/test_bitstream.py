"""Bitstream container framing."""

import pytest

from ctxcodec.bitstream import (MAGIC, BitstreamError, FrameChunk, StreamHeader,
                                read_stream, write_stream)


def make_stream(frames=2, steps=3):
    header = StreamHeader(64, 64, 16, 16, 32, lambda_index=2, steps=steps,
                          frame_count=frames)
    chunks = [FrameChunk(bytes([f]) * 5, [bytes([f, s]) * (s + 1) for s in range(steps)])
              for f in range(frames)]
    return header, chunks, write_stream(header, chunks)


def test_roundtrip():
    header, chunks, data = make_stream()
    got_header, got_chunks = read_stream(data)
    assert got_header == header
    assert [(c.hyper, c.segments) for c in got_chunks] == \
           [(c.hyper, c.segments) for c in chunks]


def test_magic_checked():
    _, _, data = make_stream()
    bad = b"XXXX" + data[4:]
    with pytest.raises(BitstreamError, match="magic"):
        read_stream(bad)


def test_version_checked():
    _, _, data = make_stream()
    bad = data[:4] + bytes([99]) + data[5:]
    with pytest.raises(BitstreamError, match="version"):
        read_stream(bad)


def test_truncation_reports_offset():
    _, _, data = make_stream()
    with pytest.raises(BitstreamError, match="offset") as err:
        read_stream(data[:len(data) - 3])
    assert err.value.offset is not None


def test_trailing_garbage_rejected():
    _, _, data = make_stream()
    with pytest.raises(BitstreamError, match="trailing"):
        read_stream(data + b"\x00")


def test_header_starts_with_magic():
    _, _, data = make_stream()
    assert data[:4] == MAGIC
    assert data[4] == 1   # version byte


def test_segment_count_enforced_on_write():
    header, chunks, _ = make_stream(steps=3)
    chunks[0].segments.pop()
    with pytest.raises(BitstreamError, match="segment"):
        write_stream(header, chunks)
