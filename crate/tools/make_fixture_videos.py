#!/usr/bin/env python3
"""Regenerates the checked-in rubric fixtures under fixtures/videos/.

One directory per STUB_FAIL case, each holding the output file the stub
engine would leave behind. Frames are static so the motion score is maximal.
"""
import os
import shutil
import sys

import cv2
import numpy as np

NAME = "genesis_video.mp4"


def frame(w, h, flat=False):
    if flat:
        return np.full((h, w, 3), 90, np.uint8)
    x = np.linspace(40, 200, w, dtype=np.float32)[None, :].repeat(h, 0)
    img = np.stack([x, x * 0.8 + 20, 255 - x], axis=2).astype(np.uint8)
    cv2.circle(img, (w // 2, h // 2), h // 6, (30, 30, 220), -1)
    return img


def write(path, fourcc, w, h, fps, n, tmp_ext=None):
    flat = tmp_ext is not None
    target = path if tmp_ext is None else path + tmp_ext
    vw = cv2.VideoWriter(target, cv2.VideoWriter_fourcc(*fourcc), fps, (w, h))
    if not vw.isOpened():
        sys.exit(f"cannot open writer for {fourcc}")
    img = frame(w, h, flat)
    for _ in range(n):
        vw.write(img)
    vw.release()
    if tmp_ext is not None:
        os.replace(target, path)


def main(root):
    cases = {
        "none": ("mp4v", 1280, 640, 60, 300, None),
        # Flat VP9 frames keep a compliant 5 s clip far below the size
        # floor; the container is sniffed, so the .mp4 name is harmless.
        "small_file": ("VP90", 1280, 640, 60, 300, ".webm"),
        "resolution": ("mp4v", 640, 480, 60, 300, None),
        "fps": ("mp4v", 1280, 640, 30, 150, None),
    }
    for case, (cc, w, h, fps, n, ext) in cases.items():
        d = os.path.join(root, case)
        os.makedirs(d, exist_ok=True)
        write(os.path.join(d, NAME), cc, w, h, fps, n, ext)
        print(case, os.path.getsize(os.path.join(d, NAME)))
    d = os.path.join(root, "no_file")
    shutil.rmtree(d, ignore_errors=True)
    os.makedirs(d)
    open(os.path.join(d, ".gitkeep"), "w").close()


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else os.path.join(os.path.dirname(__file__), "..", "fixtures", "videos"))
