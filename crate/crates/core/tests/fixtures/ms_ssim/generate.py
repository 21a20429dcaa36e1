"""Regenerates the MS-SSIM reference pairs and prints TensorFlow's scores.

Run from this directory: python3 generate.py
"""
import io

import numpy as np
import tensorflow as tf
from PIL import Image, ImageFilter

rng = np.random.default_rng(20240611)


def scene(h, w):
    y, x = np.mgrid[0:h, 0:w].astype(np.float64)
    base = np.stack([
        0.5 + 0.3 * np.sin(x / 17.0) * np.cos(y / 23.0),
        0.4 + 0.2 * np.cos((x + y) / 31.0),
        0.3 + 0.4 * (x / w) * (y / h),
    ], axis=-1)
    base[(x - w * 0.6) ** 2 + (y - h * 0.4) ** 2 < (min(h, w) * 0.2) ** 2] += 0.25
    base[int(h * 0.7):int(h * 0.8), :] -= 0.2
    base += rng.normal(0.0, 0.03, base.shape)
    return to8(base)


def to8(a):
    return np.clip(np.round(np.clip(a, 0, 1) * 255), 0, 255).astype(np.uint8)


def jpeg(a, quality):
    buf = io.BytesIO()
    Image.fromarray(a).save(buf, format="JPEG", quality=quality)
    return np.array(Image.open(io.BytesIO(buf.getvalue())).convert("RGB"))


def checker(h, w, cell):
    y, x = np.mgrid[0:h, 0:w]
    v = ((x // cell + y // cell) % 2).astype(np.float64) * 0.8 + 0.1
    return to8(np.stack([v, v * 0.9 + 0.05, 1.0 - v], axis=-1))


pairs = {}
a = scene(256, 256)
pairs["jpeg"] = (a, jpeg(a, 15))
c = checker(192, 208, 8)
pairs["inverted"] = (c, 255 - c)
b = scene(200, 180)
pairs["noise"] = (b, to8(b / 255.0 + rng.normal(0.0, 0.08, b.shape)))
d = scene(181, 257)
pairs["blur"] = (d, np.array(Image.fromarray(d).filter(ImageFilter.GaussianBlur(2.0))))
e = scene(192, 192)
pairs["shift"] = (e, np.roll(e, 1, axis=1))
f = scene(224, 176)
pairs["contrast"] = (f, to8(0.5 + 0.6 * (f / 255.0 - 0.5) + 0.05))

for name, (x, y) in pairs.items():
    Image.fromarray(x).save(f"{name}_a.png")
    Image.fromarray(y).save(f"{name}_b.png")
    tx = tf.constant(x.astype(np.float64)[None] / 255.0)
    ty = tf.constant(y.astype(np.float64)[None] / 255.0)
    v = tf.image.ssim_multiscale(tx, ty, max_val=1.0).numpy()[0]
    print(f'("{name}", {v!r}),')
