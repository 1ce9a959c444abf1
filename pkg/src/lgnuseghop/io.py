"""File formats: PNG tiles, 16-bit label masks, LGNH float heatmaps."""

import struct

import numpy as np
from PIL import Image

HEATMAP_MAGIC = b"LGNH"


class FormatError(ValueError):
    pass


def load_tile(path):
    """8-bit RGB(A) PNG -> float tile in [0, 1]."""
    img = Image.open(path).convert("RGB")
    return np.asarray(img, dtype=np.float64) / 255.0


def save_tile(path, tile):
    arr = np.clip(np.asarray(tile), 0.0, 1.0)
    Image.fromarray(np.round(arr * 255.0).astype(np.uint8)).save(path)


def save_mask(path, mask):
    """Instance mask -> 16-bit single-channel PNG, label values verbatim."""
    mask = np.asarray(mask)
    if mask.min() < 0 or mask.max() > np.iinfo(np.uint16).max:
        raise FormatError("labels out of uint16 range")
    Image.fromarray(mask.astype(np.uint16)).save(path)


def load_mask(path):
    arr = np.asarray(Image.open(path))
    if arr.ndim != 2:
        raise FormatError(f"{path}: expected single-channel mask PNG")
    return arr.astype(np.int32)


def save_heatmap(path, heatmap):
    """Binary heatmap: 16-byte header (magic, u32 w/h/reserved) + f32 rows."""
    hm = np.asarray(heatmap, dtype=np.float32)
    h, w = hm.shape
    with open(path, "wb") as fh:
        fh.write(HEATMAP_MAGIC)
        fh.write(struct.pack("<III", w, h, 0))
        fh.write(np.ascontiguousarray(hm).tobytes())


def load_heatmap(path):
    with open(path, "rb") as fh:
        head = fh.read(16)
        if len(head) != 16 or head[:4] != HEATMAP_MAGIC:
            raise FormatError(f"{path}: not a LGNH heatmap")
        w, h, _ = struct.unpack("<III", head[4:])
        data = np.frombuffer(fh.read(), dtype=np.float32)
    if data.size != w * h:
        raise FormatError(f"{path}: truncated heatmap payload")
    return data.reshape(h, w).copy()


def save_heatmap_preview(path, heatmap):
    """8-bit PNG preview, value = round(255 * p)."""
    hm = np.clip(np.asarray(heatmap), 0.0, 1.0)
    Image.fromarray(np.round(hm * 255.0).astype(np.uint8)).save(path)
