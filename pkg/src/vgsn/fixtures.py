"""Synthetic two-font glyph corpus used by the tests and examples.

Each character is a list of straight strokes on the unit square. Font A draws
them with a thin uniform pen ("sans"); font B uses a contrast pen (heavy
verticals, lighter horizontals) and adds a triangular serif at the right end of
every horizontal stroke ("serif"). Images are rendered with 4x supersampling,
ink = 1.0.

Run ``python -m vgsn.fixtures OUTDIR [--size N]`` to write ``OUTDIR/font_a`` and
``OUTDIR/font_b``.
"""

from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np

from .corpus import codepoint_filename, write_pgm

# (x0, y0, x1, y1) in unit coordinates, y pointing down
STROKES: dict[int, list[tuple[float, float, float, float]]] = {
    0x5341: [(0.15, 0.5, 0.85, 0.5), (0.5, 0.12, 0.5, 0.88)],  # 十
    0x53E3: [(0.22, 0.25, 0.22, 0.78), (0.22, 0.25, 0.78, 0.25), (0.78, 0.25, 0.78, 0.78), (0.22, 0.75, 0.78, 0.75)],  # 口
    0x4E2D: [(0.2, 0.3, 0.2, 0.68), (0.2, 0.3, 0.8, 0.3), (0.8, 0.3, 0.8, 0.68), (0.2, 0.65, 0.8, 0.65), (0.5, 0.1, 0.5, 0.92)],  # 中
    0x7530: [(0.2, 0.2, 0.2, 0.82), (0.2, 0.2, 0.8, 0.2), (0.8, 0.2, 0.8, 0.82), (0.2, 0.8, 0.8, 0.8), (0.2, 0.5, 0.8, 0.5), (0.5, 0.2, 0.5, 0.8)],  # 田
    0x738B: [(0.2, 0.2, 0.8, 0.2), (0.26, 0.5, 0.74, 0.5), (0.14, 0.82, 0.86, 0.82), (0.5, 0.2, 0.5, 0.82)],  # 王
    0x5DE5: [(0.25, 0.22, 0.75, 0.22), (0.5, 0.22, 0.5, 0.8), (0.12, 0.8, 0.88, 0.8)],  # 工
    0x571F: [(0.25, 0.45, 0.75, 0.45), (0.5, 0.15, 0.5, 0.8), (0.12, 0.8, 0.88, 0.8)],  # 土
    0x65E5: [(0.28, 0.15, 0.28, 0.87), (0.28, 0.15, 0.72, 0.15), (0.72, 0.15, 0.72, 0.87), (0.28, 0.5, 0.72, 0.5), (0.28, 0.85, 0.72, 0.85)],  # 日
    0x6C38: [(0.45, 0.08, 0.55, 0.16), (0.3, 0.3, 0.55, 0.3), (0.55, 0.3, 0.55, 0.9), (0.55, 0.3, 0.2, 0.72), (0.55, 0.45, 0.85, 0.3), (0.55, 0.45, 0.88, 0.85)],  # 永
}

FEW_SHOT = (0x4E2D, 0x5341, 0x53E3, 0x738B, 0x5DE5)
TRANSFER_TRAIN = (0x4E2D, 0x53E3, 0x5DE5, 0x738B)
TRANSFER_HELD_OUT = 0x571F


def _segment_distance(px, py, x0, y0, x1, y1):
    dx, dy = x1 - x0, y1 - y0
    length2 = dx * dx + dy * dy
    t = np.clip(((px - x0) * dx + (py - y0) * dy) / length2, 0.0, 1.0) if length2 else 0.0
    return np.hypot(px - (x0 + t * dx), py - (y0 + t * dy))


def render(strokes, size: int, style: str, oversample: int = 4) -> np.ndarray:
    n = size * oversample
    coords = (np.arange(n) + 0.5) / n
    py, px = np.meshgrid(coords, coords, indexing="ij")
    ink = np.zeros((n, n), dtype=bool)
    for x0, y0, x1, y1 in strokes:
        horizontal = abs(y1 - y0) < 1e-9
        if style == "sans":
            half = 0.035
        elif style == "serif":
            half = 0.03 if horizontal else 0.06
        else:
            raise ValueError(f"unknown style {style!r}")
        ink |= _segment_distance(px, py, x0, y0, x1, y1) <= half
        if style == "serif" and horizontal:
            xe = max(x0, x1)
            # right-angled triangle sitting on the stroke end
            tri = (px <= xe) & (px >= xe - 0.1) & (py <= y0) & (py >= y0 - 0.1 + (xe - px))
            ink |= tri
    img = ink.reshape(size, oversample, size, oversample).mean(axis=(1, 3))
    return img[..., None]


def glyph_pair(codepoint: int, size: int = 32) -> tuple[np.ndarray, np.ndarray]:
    strokes = STROKES[codepoint]
    return render(strokes, size, "sans"), render(strokes, size, "serif")


def write_fixture(outdir, size: int = 32, codepoints=None) -> tuple[Path, Path]:
    outdir = Path(outdir)
    dir_a, dir_b = outdir / "font_a", outdir / "font_b"
    dir_a.mkdir(parents=True, exist_ok=True)
    dir_b.mkdir(parents=True, exist_ok=True)
    for cp in codepoints or sorted(STROKES):
        a, b = glyph_pair(cp, size)
        write_pgm(dir_a / codepoint_filename(cp), a)
        write_pgm(dir_b / codepoint_filename(cp), b)
    return dir_a, dir_b


def main(argv=None) -> None:
    parser = argparse.ArgumentParser(description="write the synthetic two-font glyph fixture")
    parser.add_argument("outdir")
    parser.add_argument("--size", type=int, default=32)
    args = parser.parse_args(argv)
    write_fixture(args.outdir, args.size)


if __name__ == "__main__":
    main()
