#!/usr/bin/env python3
"""Minimal prober/decoder backed by OpenCV, for hosts without ffmpeg.

    mediatool.py probe <video>            ffprobe-style JSON on stdout
    mediatool.py decode <video> <i,j,..>  raw RGB24 frames on stdout, in order
"""
import json
import sys

import cv2


def open_video(path):
    cap = cv2.VideoCapture(path)
    if not cap.isOpened():
        sys.exit(f"cannot open {path}")
    return cap


def probe(path):
    cap = open_video(path)
    width = int(cap.get(cv2.CAP_PROP_FRAME_WIDTH))
    height = int(cap.get(cv2.CAP_PROP_FRAME_HEIGHT))
    fps = cap.get(cv2.CAP_PROP_FPS)
    frames = int(cap.get(cv2.CAP_PROP_FRAME_COUNT))
    cap.release()
    if width <= 0 or height <= 0 or frames <= 0:
        json.dump({"streams": [], "format": {}}, sys.stdout)
        return
    duration = frames / fps if fps > 0 else 0.0
    stream = {
        "codec_type": "video",
        "width": width,
        "height": height,
        "avg_frame_rate": f"{fps:.6f}",
        "duration": f"{duration:.6f}",
        "nb_frames": str(frames),
    }
    json.dump({"streams": [stream], "format": {"duration": f"{duration:.6f}"}}, sys.stdout)


def decode(path, indices):
    wanted = [int(i) for i in indices.split(",") if i]
    cap = open_video(path)
    frames = {}
    targets = set(wanted)
    index = 0
    while targets:
        ok, frame = cap.read()
        if not ok:
            break
        if index in targets:
            frames[index] = cv2.cvtColor(frame, cv2.COLOR_BGR2RGB).tobytes()
            targets.discard(index)
        index += 1
    cap.release()
    if targets:
        sys.exit(f"frames {sorted(targets)} not found in {path}")
    out = sys.stdout.buffer
    for i in wanted:
        out.write(frames[i])
    out.flush()


def main(argv):
    if len(argv) == 3 and argv[1] == "probe":
        probe(argv[2])
    elif len(argv) == 4 and argv[1] == "decode":
        decode(argv[2], argv[3])
    else:
        sys.exit(__doc__)


if __name__ == "__main__":
    main(sys.argv)
