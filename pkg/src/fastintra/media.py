"""Luma frame loading, block partitioning and reference-sample gathering.

Supported inputs are binary PGM (P5), Y4M 4:2:0 and headerless raw YUV 4:2:0,
all 8-bit. Only the luma plane is kept.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

BLOCK_SIZES = (4, 8, 16, 32, 64)
BIT_DEPTH = 8
MID_LEVEL = 1 << (BIT_DEPTH - 1)


class MediaFormatError(ValueError):
    """Raised for malformed headers, truncated payloads or unsupported content."""


@dataclass(frozen=True)
class LumaFrame:
    samples: np.ndarray
    frame_index: int = 0

    def __post_init__(self):
        s = np.asarray(self.samples)
        if s.ndim != 2:
            raise ValueError("luma samples must be a 2-D matrix")
        if s.dtype != np.uint8:
            if s.size and (s.min() < 0 or s.max() > 255):
                raise ValueError("luma samples must lie in [0, 255]")
            s = s.astype(np.uint8)
        s = s.copy()
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)

    @property
    def height(self) -> int:
        return self.samples.shape[0]

    @property
    def width(self) -> int:
        return self.samples.shape[1]


@dataclass(frozen=True)
class LumaBlock:
    origin_x: int
    origin_y: int
    size: int
    samples: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.size not in BLOCK_SIZES:
            raise ValueError(f"block size must be one of {BLOCK_SIZES}, got {self.size}")
        if self.samples.shape != (self.size, self.size):
            raise ValueError("block samples do not match block size")


@dataclass(frozen=True)
class ReferenceSamples:
    """Reference line around a block.

    ``top_row[0]`` is the top-left corner, ``top_row[1:]`` the above and
    above-right samples. ``left_col[j]`` is the sample left of row ``j``
    (rows ``size..2*size-1`` are below-left).
    """

    top_row: np.ndarray
    left_col: np.ndarray
    top_available: np.ndarray = field(repr=False)
    left_available: np.ndarray = field(repr=False)

    def __post_init__(self):
        n = len(self.left_col) // 2
        if len(self.top_row) != 2 * n + 1 or len(self.left_col) != 2 * n:
            raise ValueError("reference lengths must be 2N+1 (top) and 2N (left)")
        u = np.concatenate([self.top_row, self.left_col]).astype(np.int64)
        u.setflags(write=False)
        object.__setattr__(self, "_unified", u)

    @property
    def size(self) -> int:
        return len(self.left_col) // 2

    def unified(self) -> np.ndarray:
        """Corner, top (2N) and left (2N) samples in one int array of length 4N+1."""
        return self._unified


# ---------------------------------------------------------------- loading


def _read_token(data: bytes, pos: int) -> tuple[bytes, int]:
    n = len(data)
    while pos < n:
        c = data[pos:pos + 1]
        if c == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise MediaFormatError("unexpected end of PGM header")
    return data[start:pos], pos


def _parse_pgm(data: bytes) -> np.ndarray:
    magic, pos = _read_token(data, 0)
    if magic != b"P5":
        raise MediaFormatError(f"not a binary PGM (magic {magic!r})")
    fields = []
    for _ in range(3):
        tok, pos = _read_token(data, pos)
        try:
            fields.append(int(tok))
        except ValueError:
            raise MediaFormatError(f"bad PGM header field {tok!r}") from None
    width, height, maxval = fields
    if width <= 0 or height <= 0:
        raise MediaFormatError("PGM dimensions must be positive")
    if maxval > 255:
        raise MediaFormatError("only 8-bit PGM is supported")
    pos += 1  # single whitespace byte after maxval
    payload = data[pos:pos + width * height]
    if len(payload) < width * height:
        raise MediaFormatError("truncated PGM payload")
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width)


def _parse_y4m(data: bytes, max_frames: int | None) -> list[np.ndarray]:
    eol = data.find(b"\n")
    if eol < 0 or not data.startswith(b"YUV4MPEG2"):
        raise MediaFormatError("missing YUV4MPEG2 header")
    width = height = None
    chroma = "420"
    for tok in data[:eol].split()[1:]:
        key, val = chr(tok[0]), tok[1:].decode("ascii", "replace")
        if key == "W":
            width = int(val)
        elif key == "H":
            height = int(val)
        elif key == "C":
            chroma = val
    if width is None or height is None:
        raise MediaFormatError("Y4M header lacks W/H")
    if re.fullmatch(r"(420|422|444|mono)p\d+", chroma):
        raise MediaFormatError(f"unsupported Y4M bit depth C{chroma}")
    if not re.fullmatch(r"420(jpeg|paldv|mpeg2)?|mono", chroma):
        raise MediaFormatError(f"unsupported Y4M chroma format C{chroma}")
    luma = width * height
    frame_bytes = luma if chroma == "mono" else luma + 2 * ((width + 1) // 2) * ((height + 1) // 2)
    frames = []
    pos = eol + 1
    while pos < len(data) and (max_frames is None or len(frames) < max_frames):
        hdr_end = data.find(b"\n", pos)
        if hdr_end < 0 or not data.startswith(b"FRAME", pos):
            raise MediaFormatError("malformed Y4M frame header")
        pos = hdr_end + 1
        if pos + frame_bytes > len(data):
            raise MediaFormatError("truncated Y4M frame payload")
        frames.append(np.frombuffer(data, np.uint8, luma, pos).reshape(height, width))
        pos += frame_bytes
    if not frames:
        raise MediaFormatError("Y4M file holds no frames")
    return frames


def _parse_raw(data: bytes, width: int | None, height: int | None, max_frames: int | None) -> list[np.ndarray]:
    if not width or not height:
        raise MediaFormatError("raw YUV input needs width and height")
    luma = width * height
    frame_bytes = luma + 2 * ((width + 1) // 2) * ((height + 1) // 2)
    if len(data) == 0 or len(data) % frame_bytes:
        raise MediaFormatError(
            f"truncated raw YUV payload: {len(data)} bytes is not a multiple of {frame_bytes}")
    count = len(data) // frame_bytes
    if max_frames is not None:
        count = min(count, max_frames)
    return [np.frombuffer(data, np.uint8, luma, i * frame_bytes).reshape(height, width)
            for i in range(count)]


def _guess_format(path: Path) -> str:
    ext = path.suffix.lower()
    if ext in (".pgm", ".pnm"):
        return "pgm"
    if ext == ".y4m":
        return "y4m"
    return "raw-yuv420-8bit"


def load_frames(path, format: str | None = None, width: int | None = None,
                height: int | None = None, max_frames: int | None = None) -> list[LumaFrame]:
    """Load every luma frame of a file (a PGM holds exactly one)."""
    path = Path(path)
    fmt = format or _guess_format(path)
    data = path.read_bytes()
    if fmt == "pgm":
        planes = [_parse_pgm(data)]
    elif fmt == "y4m":
        planes = _parse_y4m(data, max_frames)
    elif fmt in ("raw", "yuv", "raw-yuv420-8bit"):
        planes = _parse_raw(data, width, height, max_frames)
    else:
        raise MediaFormatError(f"unknown input format {fmt!r}")
    return [LumaFrame(p, i) for i, p in enumerate(planes)]


def load_frame(path, format: str | None = None, width: int | None = None,
               height: int | None = None) -> LumaFrame:
    return load_frames(path, format, width, height, max_frames=1)[0]


def write_pgm(path, frame: LumaFrame) -> None:
    header = f"P5\n{frame.width} {frame.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + frame.samples.tobytes())


def write_y4m(path, frames, fps: int = 30) -> None:
    """Write luma frames as Y4M 4:2:0 with flat mid-grey chroma."""
    frames = list(frames)
    w, h = frames[0].width, frames[0].height
    chroma = bytes([MID_LEVEL]) * (2 * ((w + 1) // 2) * ((h + 1) // 2))
    with open(path, "wb") as fh:
        fh.write(f"YUV4MPEG2 W{w} H{h} F{fps}:1 Ip A1:1 C420jpeg\n".encode("ascii"))
        for f in frames:
            fh.write(b"FRAME\n")
            fh.write(f.samples.tobytes())
            fh.write(chroma)


# ------------------------------------------------------------ partitioning


def partition_grid(frame: LumaFrame, block_size: int) -> list[LumaBlock]:
    """Split a frame into full square blocks in raster order; partial edges are skipped."""
    if block_size not in BLOCK_SIZES:
        raise ValueError(f"block size must be one of {BLOCK_SIZES}")
    s = block_size
    blocks = []
    for y in range(0, frame.height - s + 1, s):
        for x in range(0, frame.width - s + 1, s):
            blocks.append(LumaBlock(x, y, s, frame.samples[y:y + s, x:x + s]))
    return blocks


def _substitute(values: np.ndarray, avail: np.ndarray) -> np.ndarray:
    # values/avail ordered bottom-left -> corner -> top-right
    if not avail.any():
        return np.full_like(values, MID_LEVEL)
    first = int(np.argmax(avail))
    src = np.maximum.accumulate(np.where(avail, np.arange(len(values)), first))
    return values[src]


def gather_reference_samples(frame: LumaFrame, block: LumaBlock) -> ReferenceSamples:
    """Collect the reference line of ``block`` from original frame pixels.

    A position is available when it lies inside the tiled frame area and in a
    block already coded in raster order. Missing positions take the nearest
    available sample along the line, or 128 when nothing is available.
    """
    n = block.size
    x0, y0 = block.origin_x, block.origin_y
    tiled_w = (frame.width // n) * n
    tiled_h = (frame.height // n) * n
    pix = frame.samples

    # scan order: left_col reversed (bottom first), corner, top left-to-right
    xs = np.concatenate([np.full(2 * n, x0 - 1), [x0 - 1], x0 + np.arange(2 * n)])
    ys = np.concatenate([y0 + np.arange(2 * n)[::-1], [y0 - 1], np.full(2 * n, y0 - 1)])
    inside = (xs >= 0) & (ys >= 0) & (xs < tiled_w) & (ys < tiled_h)
    causal = (ys < y0) | ((ys < y0 + n) & (xs < x0))
    avail = inside & causal
    vals = np.zeros(4 * n + 1, dtype=np.int64)
    vals[avail] = pix[ys[avail], xs[avail]]
    vals = _substitute(vals, avail)

    left = vals[:2 * n][::-1].copy()
    top = vals[2 * n:].copy()
    return ReferenceSamples(top, left, avail[2 * n:].copy(), avail[:2 * n][::-1].copy())
