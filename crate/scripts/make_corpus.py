"""Regenerate the 512x512 grayscale test corpus from scikit-image sample data."""
import os
import sys

import numpy as np
from skimage import color, data, transform

OUT = sys.argv[1] if len(sys.argv) > 1 else "crates/core/tests/data/corpus"


def square(img):
    h, w = img.shape[:2]
    s = min(h, w)
    y, x = (h - s) // 2, (w - s) // 2
    return img[y:y + s, x:x + s]


def to_gray_u8(img):
    if img.ndim == 3:
        img = color.rgb2gray(img[..., :3])
    else:
        img = img.astype(np.float64) / 255.0
    img = square(img)
    if img.shape != (512, 512):
        img = transform.resize(img, (512, 512), anti_aliasing=True)
    return np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)


SOURCES = {
    "astronaut": data.astronaut,
    "camera": data.camera,
    "chelsea": data.chelsea,
    "coffee": data.coffee,
    "ihc": data.immunohistochemistry,
    "moon": data.moon,
    "motorcycle": lambda: data.stereo_motorcycle()[0],
    "retina": data.retina,
    "rocket": data.rocket,
    "brick": data.brick,
}

os.makedirs(OUT, exist_ok=True)
for name, load in SOURCES.items():
    px = to_gray_u8(load())
    with open(os.path.join(OUT, f"{name}.pgm"), "wb") as f:
        f.write(b"P5\n512 512\n255\n")
        f.write(px.tobytes())
    print(name, px.mean().round(1), px.std().round(1))
