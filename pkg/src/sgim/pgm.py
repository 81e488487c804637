"""Plain-text (P2) portable graymap output for eyeballing images.

Float images are min-max scaled to 0..maxval per file; the original range
is preserved in a comment line so nothing is lost for later inspection.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import UsageError


def write_pgm(path, image: np.ndarray, maxval: int = 255) -> None:
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 1:
        side = int(round(np.sqrt(img.size)))
        if side * side != img.size:
            raise UsageError("flat image length is not a perfect square")
        img = img.reshape(side, side)
    if img.ndim != 2:
        raise UsageError("PGM wants a 2-D image")
    lo, hi = float(img.min()), float(img.max())
    scale = (img - lo) / (hi - lo) if hi > lo else np.zeros_like(img)
    pixels = np.rint(scale * maxval).astype(int)
    lines = [f"P2", f"# range {lo!r} {hi!r}", f"{img.shape[1]} {img.shape[0]}",
             str(maxval)]
    for row in pixels:
        lines.append(" ".join(str(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def read_pgm(path) -> np.ndarray:
    tokens: list[str] = []
    for line in Path(path).read_text(encoding="ascii").splitlines():
        body = line.split("#", 1)[0]
        tokens.extend(body.split())
    if not tokens or tokens[0] != "P2":
        raise UsageError(f"{path}: not a P2 graymap")
    width, height, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    values = np.array([int(t) for t in tokens[4:]])
    if values.size != width * height:
        raise UsageError(f"{path}: pixel count mismatch")
    if values.min() < 0 or values.max() > maxval:
        raise UsageError(f"{path}: pixel outside [0, {maxval}]")
    return values.reshape(height, width)
