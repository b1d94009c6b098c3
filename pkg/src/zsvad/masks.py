"""Uncompressed COCO-style run-length encoding for binary masks.

A frame mask is ``{"size": [H, W], "counts": [...]}`` where counts are
alternating run lengths of 0s and 1s over the column-major flattening,
always starting with a (possibly empty) run of 0s. A video mask is a
list of such dicts, one per frame.
"""

from __future__ import annotations

import numpy as np

from .errors import DataError


def encode_rle(mask) -> dict:
    m = np.asarray(mask)
    if m.ndim != 2:
        raise DataError(f"RLE encode expects a 2-D mask, got {m.shape}")
    flat = (m.flatten(order="F") != 0).astype(np.int8)
    change = np.flatnonzero(np.diff(flat)) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    counts = np.diff(bounds).tolist()
    if flat.size and flat[0] == 1:
        counts = [0] + counts
    return {"size": [int(m.shape[0]), int(m.shape[1])], "counts": [int(c) for c in counts]}


def decode_rle(rle: dict) -> np.ndarray:
    try:
        h, w = (int(v) for v in rle["size"])
        counts = [int(c) for c in rle["counts"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed RLE: {exc}") from exc
    if any(c < 0 for c in counts) or sum(counts) != h * w:
        raise DataError(f"RLE counts sum to {sum(counts)}, expected {h * w}")
    values = np.arange(len(counts)) % 2
    flat = np.repeat(values, counts).astype(np.uint8)
    return flat.reshape((h, w), order="F")


def encode_video_rle(masks) -> list[dict]:
    return [encode_rle(m) for m in np.asarray(masks)]


def decode_video_rle(rles: list[dict]) -> np.ndarray:
    frames = [decode_rle(r) for r in rles]
    if not frames:
        raise DataError("empty video mask")
    if len({f.shape for f in frames}) != 1:
        raise DataError("frame masks differ in size")
    return np.stack(frames)


def resize_nearest(labels, out_hw: tuple[int, int]) -> np.ndarray:
    """Nearest-neighbour resample of the last two axes (pixel-centre aligned)."""
    lab = np.asarray(labels)
    h, w = lab.shape[-2:]
    oh, ow = out_hw
    rows = np.minimum(((np.arange(oh) + 0.5) * h / oh).astype(int), h - 1)
    cols = np.minimum(((np.arange(ow) + 0.5) * w / ow).astype(int), w - 1)
    return lab[..., rows[:, None], cols[None, :]]
