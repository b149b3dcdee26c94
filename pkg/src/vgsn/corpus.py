"""Paired glyph corpora stored as binary PGM files.

A corpus is two directories of ``U+XXXX.pgm`` files (uppercase hex codepoint,
4 to 6 digits), one per font. Pixel polarity is ink = 1.0, background = 0.0.
"""

from __future__ import annotations

import logging
import os
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tensor import Rng

log = logging.getLogger(__name__)

__all__ = [
    "Batch",
    "CorpusError",
    "GlyphImage",
    "GlyphPair",
    "PairedCorpus",
    "PgmError",
    "codepoint_filename",
    "load_paired_corpus",
    "load_pgm",
    "make_batches",
    "read_pgm",
    "save_pgm",
    "write_pgm",
]

FILENAME_RE = re.compile(r"U\+([0-9A-F]{4,6})\.pgm")


class PgmError(ValueError):
    pass


class CorpusError(ValueError):
    pass


def _read_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        c = buf[pos : pos + 1]
        if c.isspace():
            pos += 1
        elif c == b"#":
            while pos < n and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos : pos + 1].isspace() and buf[pos : pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise PgmError("truncated PGM header")
    return buf[start:pos], pos


def load_pgm(data) -> np.ndarray:
    """Decode a binary (P5) PGM with maxval 255 into an ``(H, W, 1)`` array in [0, 1]."""
    if hasattr(data, "read"):
        data = data.read()
    data = bytes(data)
    if data[:2] != b"P5":
        raise PgmError(f"unsupported format: magic {data[:2]!r}, only binary P5 is supported")
    pos = 2
    fields = []
    for _ in range(3):
        token, pos = _read_token(data, pos)
        if not token.isdigit():
            raise PgmError(f"malformed PGM header token {token!r}")
        fields.append(int(token))
    width, height, maxval = fields
    if width == 0 or height == 0:
        raise PgmError("zero image dimension")
    if maxval != 255:
        raise PgmError(f"maxval {maxval} unsupported, expected 255")
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise PgmError("truncated PGM header")
    payload = data[pos + 1 :]
    if len(payload) < width * height:
        raise PgmError(f"truncated payload: {len(payload)} of {width * height} bytes")
    pixels = np.frombuffer(payload, dtype=np.uint8, count=width * height)
    return (pixels.astype(np.float64) / 255.0).reshape(height, width, 1)


def save_pgm(pixels) -> bytes:
    """Encode values in [0, 1] as P5 bytes, rounding half up."""
    a = np.asarray(pixels, dtype=np.float64)
    if a.ndim == 3 and a.shape[-1] == 1:
        a = a[..., 0]
    if a.ndim != 2:
        raise PgmError(f"expected an (H, W) or (H, W, 1) image, got shape {a.shape}")
    if not np.isfinite(a).all() or a.min() < 0.0 or a.max() > 1.0:
        raise PgmError("pixel values must lie in [0, 1]")
    q = np.clip(np.floor(a * 255.0 + 0.5), 0, 255).astype(np.uint8)
    h, w = a.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + q.tobytes()


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return load_pgm(fh)


def write_pgm(path, pixels) -> None:
    Path(path).write_bytes(save_pgm(pixels))


def codepoint_filename(codepoint: int) -> str:
    return f"U+{codepoint:04X}.pgm"


@dataclass
class GlyphImage:
    codepoint: int
    pixels: np.ndarray

    def __post_init__(self):
        h, w, c = self.pixels.shape
        if h != w or c != 1:
            raise CorpusError(f"glyph U+{self.codepoint:04X} must be square single-channel, got {self.pixels.shape}")


@dataclass
class GlyphPair:
    codepoint: int
    image_a: GlyphImage
    image_b: GlyphImage


@dataclass
class PairedCorpus:
    pairs: list[GlyphPair]
    image_size: int
    skipped: list[tuple[int, str]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def codepoints(self) -> list[int]:
        return [p.codepoint for p in self.pairs]

    def inputs(self) -> np.ndarray:
        return np.stack([p.image_a.pixels for p in self.pairs])

    def targets(self) -> np.ndarray:
        return np.stack([p.image_b.pixels for p in self.pairs])

    def subset(self, codepoints) -> "PairedCorpus":
        keep = set(codepoints)
        return PairedCorpus([p for p in self.pairs if p.codepoint in keep], self.image_size)

    @classmethod
    def from_arrays(cls, inputs, targets, codepoints=None) -> "PairedCorpus":
        inputs = np.asarray(inputs, dtype=np.float64)
        targets = np.asarray(targets, dtype=np.float64)
        if inputs.ndim == 3:
            inputs = inputs[..., None]
        if targets.ndim == 3:
            targets = targets[..., None]
        if inputs.shape != targets.shape or inputs.ndim != 4:
            raise CorpusError(f"input/target shape mismatch {inputs.shape} vs {targets.shape}")
        if len(inputs) == 0:
            raise CorpusError("empty corpus")
        if codepoints is None:
            codepoints = range(len(inputs))
        pairs = [GlyphPair(int(c), GlyphImage(int(c), a), GlyphImage(int(c), b)) for c, a, b in zip(codepoints, inputs, targets)]
        if len({p.codepoint for p in pairs}) != len(pairs):
            raise CorpusError("duplicate codepoints")
        return cls(pairs, inputs.shape[1])


def _scan(directory) -> dict[int, Path]:
    found = {}
    for entry in sorted(os.listdir(directory)):
        if not entry.endswith(".pgm"):
            continue
        m = FILENAME_RE.fullmatch(entry)
        if m is None:
            raise CorpusError(f"unparsable glyph filename {entry!r} in {directory}")
        found[int(m.group(1), 16)] = Path(directory) / entry
    return found


def load_paired_corpus(dir_a, dir_b) -> PairedCorpus:
    """Pair glyphs present in both directories, sorted by codepoint."""
    files_a, files_b = _scan(dir_a), _scan(dir_b)
    common = sorted(files_a.keys() & files_b.keys())
    skipped = sorted([(c, "a") for c in files_a.keys() - files_b.keys()] + [(c, "b") for c in files_b.keys() - files_a.keys()])
    for cp, side in skipped:
        log.warning("U+%04X only present in font %s; skipped", cp, side.upper())
    if not common:
        raise CorpusError(f"no codepoints common to {dir_a} and {dir_b}: empty corpus")
    pairs = []
    size = None
    for cp in common:
        a, b = read_pgm(files_a[cp]), read_pgm(files_b[cp])
        if a.shape != b.shape:
            raise CorpusError(f"U+{cp:04X}: size mismatch {a.shape[1]}x{a.shape[0]} vs {b.shape[1]}x{b.shape[0]}")
        ga, gb = GlyphImage(cp, a), GlyphImage(cp, b)
        if size is None:
            size = a.shape[0]
        elif a.shape[0] != size:
            raise CorpusError(f"U+{cp:04X}: size {a.shape[0]} differs from corpus size {size}")
        pairs.append(GlyphPair(cp, ga, gb))
    return PairedCorpus(pairs, size, skipped)


@dataclass
class Batch:
    inputs: np.ndarray
    targets: np.ndarray
    codepoints: list[int]


def make_batches(corpus: PairedCorpus, batch_size: int, rng: Rng) -> list[Batch]:
    """Shuffle the pairs with ``rng`` and chunk them; the last batch may be short."""
    if len(corpus) == 0:
        raise CorpusError("empty corpus")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = rng.permutation(len(corpus))
    batches = []
    for start in range(0, len(order), batch_size):
        chunk = [corpus.pairs[i] for i in order[start : start + batch_size]]
        batches.append(
            Batch(
                np.stack([p.image_a.pixels for p in chunk]),
                np.stack([p.image_b.pixels for p in chunk]),
                [p.codepoint for p in chunk],
            )
        )
    return batches
