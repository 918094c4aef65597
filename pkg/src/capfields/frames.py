"""RGBD frame container and on-disk stream layout.

Layout: <dir>/frames/NNNNNN.rgb.png (8-bit RGB), NNNNNN.depth.png (16-bit
millimeters, 0 = invalid), NNNNNN.mhum.png / NNNNNN.mobj.png (binary masks).
Frame ids must be contiguous from 0.
"""
from __future__ import annotations

import os
import re
from dataclasses import dataclass

import numpy as np
from PIL import Image


@dataclass
class Frame:
    frame_id: int
    rgb: np.ndarray          # (H, W, 3) uint8
    depth: np.ndarray        # (H, W) float64 meters, 0 invalid
    mask_human: np.ndarray   # (H, W) bool
    mask_object: np.ndarray  # (H, W) bool
    timestamp: float = 0.0
    blur: float = 0.0

    def __post_init__(self):
        h, w = self.depth.shape
        if self.rgb.shape[:2] != (h, w) or self.mask_human.shape != (h, w) or self.mask_object.shape != (h, w):
            raise ValueError("all frame planes must share the same size")
        if bool(np.any(self.mask_human & self.mask_object)):
            raise ValueError("human and object masks overlap")


def save_frame(dirpath: str, frame: Frame) -> None:
    os.makedirs(os.path.join(dirpath, "frames"), exist_ok=True)
    stem = os.path.join(dirpath, "frames", f"{frame.frame_id:06d}")
    Image.fromarray(frame.rgb).save(stem + ".rgb.png")
    mm = np.round(frame.depth * 1000.0).astype(np.uint16)
    Image.fromarray(mm).save(stem + ".depth.png")
    Image.fromarray((frame.mask_human * 255).astype(np.uint8)).save(stem + ".mhum.png")
    Image.fromarray((frame.mask_object * 255).astype(np.uint8)).save(stem + ".mobj.png")


def load_frame(dirpath: str, frame_id: int) -> Frame:
    stem = os.path.join(dirpath, "frames", f"{frame_id:06d}")
    planes = {}
    for suffix in (".rgb.png", ".depth.png", ".mhum.png", ".mobj.png"):
        path = stem + suffix
        if not os.path.exists(path):
            raise FileNotFoundError(f"frame {frame_id}: missing plane {path}")
        planes[suffix] = np.array(Image.open(path))
    depth = planes[".depth.png"].astype(np.float64) / 1000.0
    return Frame(
        frame_id=frame_id,
        rgb=planes[".rgb.png"].astype(np.uint8),
        depth=depth,
        mask_human=planes[".mhum.png"] > 127,
        mask_object=planes[".mobj.png"] > 127,
        timestamp=float(frame_id),
    )


def frame_ids(dirpath: str) -> list[int]:
    fdir = os.path.join(dirpath, "frames")
    if not os.path.isdir(fdir):
        raise FileNotFoundError(f"no frames directory under {dirpath}")
    ids = sorted(
        int(m.group(1))
        for f in os.listdir(fdir)
        if (m := re.match(r"(\d{6})\.rgb\.png$", f))
    )
    if not ids:
        raise FileNotFoundError(f"no frames found under {fdir}")
    if ids != list(range(ids[0], ids[0] + len(ids))) or ids[0] != 0:
        raise ValueError(f"frame ids must be contiguous from 0, got {ids[:5]}...{ids[-1]}")
    return ids


def load_stream(dirpath: str):
    """Yield frames in ascending id order."""
    for fid in frame_ids(dirpath):
        yield load_frame(dirpath, fid)
