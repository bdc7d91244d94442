"""File formats: grayscale PNG images/masks, DFG1 feature grids, prompt JSON."""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path
from typing import Tuple, Union

import numpy as np
from PIL import Image as PILImage

from .core import FeatureGrid, Image2D, Mask, PromptSet

PathLike = Union[str, Path]

DFG1_MAGIC = b"DFG1"
DFG1_VERSION = 1
# magic, then u32 version/Hp/Wp/D/P/Q/stride_y/stride_x, then f32 offset_y/offset_x
_DFG1_HEADER = struct.Struct("<4s8I2f")


def _gray_array(img: PILImage.Image) -> np.ndarray:
    """Decode a PIL grayscale image to float64 in [0, 1]."""
    mode = img.mode
    if mode == "L":
        return np.asarray(img, dtype=np.float64) / 255.0
    if mode in ("I;16", "I;16L", "I;16B", "I"):
        return np.asarray(img, dtype=np.float64) / 65535.0
    if mode in ("1",):
        raise ValueError(f"unsupported bit depth: mode {mode}")
    raise ValueError(f"unsupported: not grayscale (mode {mode})")


def load_image(path: PathLike) -> Image2D:
    """Load an 8- or 16-bit grayscale PNG, scaling codes into [0, 1]."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such image: {path}")
    with PILImage.open(path) as img:
        pixels = _gray_array(img)
    if pixels.size == 0:
        raise ValueError(f"zero-dimension image: {path}")
    return Image2D(pixels, id=path.stem)


def save_image(image: Image2D, path: PathLike) -> None:
    """Write an Image2D as an 8-bit grayscale PNG."""
    codes = np.round(image.pixels * 255.0).astype(np.uint8)
    PILImage.fromarray(codes, mode="L").save(Path(path), format="PNG")


def image_png_bytes(image: Image2D) -> bytes:
    buf = io.BytesIO()
    codes = np.round(image.pixels * 255.0).astype(np.uint8)
    PILImage.fromarray(codes, mode="L").save(buf, format="PNG")
    return buf.getvalue()


def load_mask(path: PathLike) -> Mask:
    """Load a mask PNG; codes >= 128 count as foreground."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such mask: {path}")
    with PILImage.open(path) as img:
        arr = _gray_array(img)
    return Mask(arr >= 0.5)


def save_mask(mask: Mask, path: PathLike) -> None:
    """Write a mask as grayscale PNG, 0=background / 255=foreground."""
    codes = np.where(mask.bits, 255, 0).astype(np.uint8)
    PILImage.fromarray(codes, mode="L").save(Path(path), format="PNG")


def mask_png_bytes(mask: Mask) -> bytes:
    buf = io.BytesIO()
    codes = np.where(mask.bits, 255, 0).astype(np.uint8)
    PILImage.fromarray(codes, mode="L").save(buf, format="PNG")
    return buf.getvalue()


def mask_from_png_bytes(data: bytes) -> Mask:
    with PILImage.open(io.BytesIO(data)) as img:
        arr = _gray_array(img)
    return Mask(arr >= 0.5)


def load_label_image(path: PathLike) -> np.ndarray:
    """Load an integer label raster stored as grayscale PNG codes."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such label image: {path}")
    with PILImage.open(path) as img:
        if img.mode == "L":
            return np.asarray(img, dtype=np.int64)
        if img.mode in ("I;16", "I;16L", "I;16B", "I"):
            return np.asarray(img, dtype=np.int64)
    raise ValueError(f"unsupported label image mode for {path}")


def save_gray_png(codes: np.ndarray, path: PathLike) -> None:
    arr = np.asarray(codes, dtype=np.uint8)
    PILImage.fromarray(arr, mode="L").save(Path(path), format="PNG")


def gray_png_bytes(codes: np.ndarray) -> bytes:
    buf = io.BytesIO()
    PILImage.fromarray(np.asarray(codes, dtype=np.uint8), mode="L").save(buf, format="PNG")
    return buf.getvalue()


def save_rgb_png(raster: np.ndarray, path: PathLike) -> None:
    arr = np.asarray(raster, dtype=np.uint8)
    PILImage.fromarray(arr, mode="RGB").save(Path(path), format="PNG")


def grid_to_bytes(grid: FeatureGrid) -> bytes:
    """Serialize a FeatureGrid in the DFG1 layout.

    Header: magic "DFG1"; u32 version=1, Hp, Wp, D, P, Q, stride_y, stride_x;
    f32 offset_y, offset_x; all little-endian. Payload: Hp*Wp*D f32 values in
    (row, col, channel) order. Offsets are stored at f32 precision.
    """
    hp, wp, d = grid.data.shape
    p, q = grid.source_dims
    header = _DFG1_HEADER.pack(
        DFG1_MAGIC, DFG1_VERSION, hp, wp, d, p, q,
        grid.stride_y, grid.stride_x, grid.offset_y, grid.offset_x,
    )
    payload = np.ascontiguousarray(grid.data, dtype="<f4").tobytes()
    return header + payload


def grid_from_bytes(data: bytes) -> FeatureGrid:
    """Parse DFG1 bytes back into a FeatureGrid."""
    if len(data) < 4 or data[:4] != DFG1_MAGIC:
        raise ValueError("bad magic: not a DFG1 feature grid")
    if len(data) < _DFG1_HEADER.size:
        raise ValueError(f"payload size mismatch: truncated header ({len(data)} bytes)")
    magic, version, hp, wp, d, p, q, sy, sx, oy, ox = _DFG1_HEADER.unpack_from(data)
    if version != DFG1_VERSION:
        raise ValueError(f"unsupported DFG1 version {version}")
    expected = _DFG1_HEADER.size + hp * wp * d * 4
    if len(data) != expected:
        raise ValueError(f"payload size mismatch: expected {expected} bytes, got {len(data)}")
    values = np.frombuffer(data, dtype="<f4", offset=_DFG1_HEADER.size)
    if not np.all(np.isfinite(values)):
        raise ValueError("non-finite feature value")
    return FeatureGrid(
        values.reshape(hp, wp, d),
        stride_y=sy,
        stride_x=sx,
        offset_y=oy,
        offset_x=ox,
        source_dims=(p, q),
    )


def save_feature_grid(grid: FeatureGrid, path: PathLike) -> None:
    Path(path).write_bytes(grid_to_bytes(grid))


def load_feature_grid(path: PathLike) -> FeatureGrid:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such feature grid: {path}")
    return grid_from_bytes(path.read_bytes())


def load_prompts(path: PathLike) -> Tuple[str, PromptSet]:
    """Read a prompt file: {"image", "positive", "negative", "labels"?}."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such prompt file: {path}")
    doc = json.loads(path.read_text())
    prompts = PromptSet(
        positive=[(int(r), int(c)) for r, c in doc.get("positive", [])],
        negative=[(int(r), int(c)) for r, c in doc.get("negative", [])],
        labels=doc.get("labels"),
    )
    return str(doc.get("image", "")), prompts


def save_prompts(image_id: str, prompts: PromptSet, path: PathLike) -> None:
    doc = {
        "image": image_id,
        "positive": [[r, c] for r, c in prompts.positive],
        "negative": [[r, c] for r, c in prompts.negative],
    }
    if prompts.labels is not None:
        doc["labels"] = list(prompts.labels)
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")
