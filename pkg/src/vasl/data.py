"""Synthetic splice samples, edge/depth planes, resizing and pixmap I/O.

Dataset directory layout::

    <root>/manifest.txt          one sample id per line, in order
    <root>/<id>.rgb.ppm          P6, 8-bit
    <root>/<id>.edge.pgm         P5, 8-bit
    <root>/<id>.depth.pgm        P5, 8-bit
    <root>/<id>.mask.pgm         P5, 8-bit, 0 or 255

Probability maps are written as 16-bit P5 with value ``round(p * 65535)``.
"""

import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import rng

IMAGE_SIZE = 256
MANIFEST = "manifest.txt"


class PixmapError(ValueError):
    pass


class DepthMissingError(ValueError):
    pass


# ---------------------------------------------------------------------------
# pixmap I/O
# ---------------------------------------------------------------------------

def _read_token(buf, pos):
    n = len(buf)
    while pos < n:
        c = buf[pos:pos + 1]
        if c == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise PixmapError("truncated header")
    return buf[start:pos], pos


def decode_pixmap(buf):
    """Parse P5/P6 bytes into ``(array, maxval)``; arrays are ``[H, W]`` or ``[H, W, 3]``."""
    magic, pos = _read_token(buf, 0)
    if magic not in (b"P5", b"P6"):
        raise PixmapError(f"unsupported magic {magic!r}")
    fields = []
    for _ in range(3):
        tok, pos = _read_token(buf, pos)
        if not tok.isdigit():
            raise PixmapError(f"malformed header field {tok!r}")
        fields.append(int(tok))
    width, height, maxval = fields
    if maxval not in (255, 65535):
        raise PixmapError(f"unsupported maxval {maxval}")
    if width < 1 or height < 1:
        raise PixmapError("empty image")
    if pos >= len(buf) or not buf[pos:pos + 1].isspace():
        raise PixmapError("missing whitespace after maxval")
    pos += 1
    chans = 3 if magic == b"P6" else 1
    dtype = np.dtype(">u2") if maxval == 65535 else np.dtype("u1")
    count = width * height * chans
    need = count * dtype.itemsize
    payload = buf[pos:pos + need]
    if len(payload) < need:
        raise PixmapError(f"truncated payload: {len(payload)} of {need} bytes")
    if len(buf) > pos + need:
        raise PixmapError("trailing bytes after payload")
    arr = np.frombuffer(payload, dtype=dtype).astype(np.int64)
    shape = (height, width, 3) if chans == 3 else (height, width)
    return arr.reshape(shape), maxval


def encode_pixmap(arr, maxval=255):
    arr = np.asarray(arr)
    if maxval not in (255, 65535):
        raise PixmapError(f"unsupported maxval {maxval}")
    if arr.ndim == 3 and arr.shape[2] == 3:
        magic = b"P6"
    elif arr.ndim == 2:
        magic = b"P5"
    else:
        raise PixmapError(f"cannot encode array of shape {arr.shape}")
    if arr.min(initial=0) < 0 or arr.max(initial=0) > maxval:
        raise PixmapError("pixel values outside [0, maxval]")
    h, w = arr.shape[:2]
    dtype = ">u2" if maxval == 65535 else "u1"
    header = magic + f"\n{w} {h}\n{maxval}\n".encode("ascii")
    return header + np.ascontiguousarray(arr).astype(dtype).tobytes()


def load_image(path):
    with open(path, "rb") as fh:
        return decode_pixmap(fh.read())


def save_image(path, arr, maxval=255):
    data = encode_pixmap(arr, maxval)
    with open(path, "wb") as fh:
        fh.write(data)


def to_levels(plane, maxval=255):
    """Quantize values in [0, 1] to integer levels."""
    return np.rint(np.clip(plane, 0.0, 1.0) * maxval).astype(np.int64)


def save_probability(path, prob):
    save_image(path, to_levels(np.asarray(prob).reshape(prob.shape[-2:]), 65535), 65535)


def save_mask(path, mask):
    save_image(path, np.where(np.asarray(mask).reshape(mask.shape[-2:]) >= 0.5, 255, 0))


# ---------------------------------------------------------------------------
# preprocessing
# ---------------------------------------------------------------------------

def _resize_axis(arr, axis, out_len):
    n = arr.shape[axis]
    if n < 2:
        raise ValueError("cannot resample a one-pixel axis")
    pos = np.arange(out_len) * (n - 1) / (out_len - 1)
    lo = np.minimum(np.floor(pos).astype(np.int64), n - 2)
    frac = pos - lo
    a = np.take(arr, lo, axis=axis)
    b = np.take(arr, lo + 1, axis=axis)
    shape = [1] * arr.ndim
    shape[axis] = out_len
    frac = frac.reshape(shape)
    return a * (1.0 - frac) + b * frac


def resize_normalize(img, maxval=255, size=IMAGE_SIZE):
    """Corner-aligned bilinear resample of an ``[H, W]`` or ``[H, W, C]`` array
    to ``size`` x ``size``, divided by ``maxval``.  Returns channel-first
    ``[C, size, size]`` doubles in [0, 1]."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    h, w = arr.shape[:2]
    if h < 2 or w < 2:
        raise ValueError(f"degenerate image {h}x{w}; both axes need at least 2 pixels")
    if (h, w) != (size, size):
        arr = _resize_axis(_resize_axis(arr, 0, size), 1, size)
    return np.ascontiguousarray((arr / maxval).transpose(2, 0, 1))


def sobel_edge(rgb):
    """Normalized Sobel gradient magnitude of the channel-mean grayscale.

    ``rgb`` is ``[3, H, W]``; returns ``[1, H, W]`` in [0, 1].
    """
    gray = np.asarray(rgb, dtype=np.float64).mean(axis=0)
    p = np.pad(gray, 1, mode="edge")
    gx = (p[:-2, 2:] + 2 * p[1:-1, 2:] + p[2:, 2:]) - (p[:-2, :-2] + 2 * p[1:-1, :-2] + p[2:, :-2])
    gy = (p[2:, :-2] + 2 * p[2:, 1:-1] + p[2:, 2:]) - (p[:-2, :-2] + 2 * p[:-2, 1:-1] + p[:-2, 2:])
    mag = np.sqrt(gx * gx + gy * gy)
    top = mag.max()
    if top <= 0:
        return np.zeros((1,) + gray.shape)
    return (mag / top)[None]


def depth_proxy(rgb, sigma=4.0):
    """Blurred grayscale stand-in for depth.  Not a depth estimate."""
    gray = np.asarray(rgb, dtype=np.float64).mean(axis=0)
    blur = ndimage.gaussian_filter(gray, sigma, mode="nearest")
    lo, hi = blur.min(), blur.max()
    return ((blur - lo) / (hi - lo) if hi > lo else np.zeros_like(blur))[None]


def depth_channel(source=None, depth_path=None, rgb=None, proxy=False, size=IMAGE_SIZE):
    """Depth plane ``[1, size, size]`` in [0, 1].

    ``source`` may be a :class:`Sample` (its generator depth is returned
    as-is).  Otherwise a grayscale ``depth_path`` is loaded and rescaled; with
    neither, ``proxy=True`` is required and the blurred-grayscale proxy of
    ``rgb`` is used.
    """
    if isinstance(source, Sample):
        return source.depth
    if depth_path is not None:
        arr, maxval = load_image(depth_path)
        if arr.ndim == 3:
            raise PixmapError(f"{depth_path}: depth must be a grayscale P5 file")
        return resize_normalize(arr, maxval, size)
    if proxy and rgb is not None:
        return depth_proxy(rgb)
    raise DepthMissingError("no depth file supplied and the depth proxy was not requested")


# ---------------------------------------------------------------------------
# samples
# ---------------------------------------------------------------------------

@dataclass
class Sample:
    id: str
    rgb: np.ndarray
    edge: np.ndarray
    depth: np.ndarray
    mask: np.ndarray

    def validate(self, size=IMAGE_SIZE):
        for name, chans in (("rgb", 3), ("edge", 1), ("depth", 1), ("mask", 1)):
            plane = getattr(self, name)
            if plane.shape != (chans, size, size):
                raise ValueError(f"sample {self.id}: {name} has shape {plane.shape}")
            if not np.all(np.isfinite(plane)) or plane.min() < 0 or plane.max() > 1:
                raise ValueError(f"sample {self.id}: {name} outside [0, 1]")
        if not np.all((self.mask == 0) | (self.mask == 1)):
            raise ValueError(f"sample {self.id}: mask is not binary")
        return self


@dataclass(frozen=True)
class SynthSpec:
    count: int = 8
    size: int = IMAGE_SIZE
    seed: int = 0
    area_range: tuple = (0.05, 0.25)
    background_sigma: float = 12.0
    background_noise: float = 0.08
    # per-pixel sensor-like grain; the pasted donor carries none
    background_grain: float = 0.03
    donor_sigma: float = 3.0
    donor_noise: float = 0.05
    # minimum gray-level gap between donor and the background it covers
    min_contrast: float = 0.2

    def __post_init__(self):
        lo, hi = self.area_range
        if not 0 < lo <= hi < 1:
            raise ValueError(f"area range {self.area_range} must satisfy 0 < lo <= hi < 1")
        min_pixels = math.ceil(lo * self.size * self.size)
        if self.size < 8 or min_pixels < 4:
            raise ValueError(f"area range {self.area_range} infeasible for {self.size}x{self.size} images")


def sample_id(index):
    return f"s{index:05d}"


def _ramp(stream, size, lo, hi):
    theta = stream.uniform(0.0, 2 * np.pi)
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1)
    r = np.cos(theta) * xx + np.sin(theta) * yy
    r = (r - r.min()) / (r.max() - r.min())
    return lo + (hi - lo) * r


def _textured(stream, size, base, sigma, amp):
    noise = stream.normal((3, size, size))
    if sigma > 0:
        noise = np.stack([ndimage.gaussian_filter(c, sigma, mode="wrap") for c in noise])
        noise /= max(noise.std(), 1e-12)
    return base[:, None, None] + amp * noise


def _region(stream, spec):
    """Random rectangle or ellipse footprint whose area lies in the spec range."""
    size = spec.size
    lo, hi = spec.area_range
    yy, xx = np.mgrid[0:size, 0:size]
    for _ in range(1000):
        area = stream.uniform(lo, hi) * size * size
        aspect = stream.uniform(0.6, 1.6)
        ellipse = stream.uniform() < 0.5
        if ellipse:
            ry = math.sqrt(area / (math.pi * aspect))
            rx = ry * aspect
            if 2 * rx >= size - 2 or 2 * ry >= size - 2:
                continue
            cy = stream.uniform(ry, size - 1 - ry)
            cx = stream.uniform(rx, size - 1 - rx)
            mask = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
        else:
            h = max(2, int(round(math.sqrt(area / aspect))))
            w = max(2, int(round(h * aspect)))
            if h >= size or w >= size:
                continue
            top = stream.integers(0, size - h + 1)
            left = stream.integers(0, size - w + 1)
            mask = np.zeros((size, size), dtype=bool)
            mask[top:top + h, left:left + w] = True
        frac = mask.mean()
        if lo <= frac <= hi:
            return mask
    raise ValueError(f"could not place a region with area in {spec.area_range}")


def render(spec, index, paste=True):
    """Render sample ``index``; returns quantized planes (rgb, depth, mask).

    The background is smooth blotches plus a ramp and fine grain; the donor
    is a grain-free texture whose mean gray level sits at least
    ``min_contrast`` away from the background under its footprint.

    With ``paste=False`` only the background is returned, which lets tests
    recover the footprint by differencing the two renders.
    """
    stream = rng.Stream(rng.derive_seed(spec.seed, index))
    size = spec.size
    bg_base = stream.uniform(0.25, 0.75, 3)
    bg = _textured(stream, size, bg_base, spec.background_sigma, spec.background_noise)
    bg = bg + (_ramp(stream, size, -0.15, 0.15))[None]
    bg = bg + spec.background_grain * stream.normal((3, size, size))
    bg_levels = to_levels(bg)
    depth = _ramp(stream, size, 0.1, 0.6)

    mask = _region(stream, spec)
    under = bg_levels[:, mask].mean() / 255.0
    # pick a brightness on the side with more room, then a random tint
    room_up, room_down = 0.9 - under, under - 0.1
    if room_up >= room_down:
        gray = under + stream.uniform(spec.min_contrast, max(spec.min_contrast, room_up))
    else:
        gray = under - stream.uniform(spec.min_contrast, max(spec.min_contrast, room_down))
    tint = stream.uniform(-0.1, 0.1, 3)
    donor_base = gray + tint - tint.mean()
    donor = _textured(stream, size, donor_base, spec.donor_sigma, spec.donor_noise)
    donor_levels = to_levels(donor)
    donor_depth = stream.uniform(0.75, 0.95)
    if not paste:
        return bg_levels / 255.0, to_levels(depth)[None] / 255.0, np.zeros((1, size, size))

    # a pasted pixel must differ from the background it replaced
    same = np.all(donor_levels == bg_levels, axis=0)
    donor_levels[0] = np.where(same, np.where(bg_levels[0] < 255, bg_levels[0] + 1, 254), donor_levels[0])
    rgb = np.where(mask[None], donor_levels, bg_levels)
    depth = np.where(mask, donor_depth, depth)
    return rgb / 255.0, to_levels(depth)[None] / 255.0, mask[None].astype(np.float64)


def synth_sample(spec, index):
    rgb, depth, mask = render(spec, index)
    edge = to_levels(sobel_edge(rgb)) / 255.0
    return Sample(sample_id(index), rgb, edge, depth, mask).validate(spec.size)


def synth_dataset(spec):
    return [synth_sample(spec, i) for i in range(spec.count)]


# ---------------------------------------------------------------------------
# dataset directories
# ---------------------------------------------------------------------------

def write_sample(root, sample):
    root = Path(root)
    save_image(root / f"{sample.id}.rgb.ppm", to_levels(sample.rgb.transpose(1, 2, 0)))
    save_image(root / f"{sample.id}.edge.pgm", to_levels(sample.edge[0]))
    save_image(root / f"{sample.id}.depth.pgm", to_levels(sample.depth[0]))
    save_image(root / f"{sample.id}.mask.pgm", to_levels(sample.mask[0]))


def write_manifest(root, ids):
    with open(Path(root) / MANIFEST, "w", encoding="ascii", newline="\n") as fh:
        fh.write("".join(f"{i}\n" for i in ids))


def read_manifest(root):
    path = Path(root) / MANIFEST
    with open(path, encoding="ascii") as fh:
        ids = [line.strip() for line in fh if line.strip()]
    if len(set(ids)) != len(ids):
        raise ValueError(f"{path}: duplicate ids")
    return ids


def write_dataset(root, spec):
    os.makedirs(root, exist_ok=True)
    ids = []
    for i in range(spec.count):
        sample = synth_sample(spec, i)
        write_sample(root, sample)
        ids.append(sample.id)
    write_manifest(root, ids)
    return ids


def load_plane(path, channels, size=IMAGE_SIZE):
    arr, maxval = load_image(path)
    got = 3 if arr.ndim == 3 else 1
    if got != channels:
        raise PixmapError(f"{path}: expected {channels} channel(s), found {got}")
    return resize_normalize(arr, maxval, size)


def load_sample(root, sid, size=IMAGE_SIZE):
    root = Path(root)
    mask = load_plane(root / f"{sid}.mask.pgm", 1, size)
    mask = (mask >= 0.5).astype(np.float64)
    return Sample(
        sid,
        load_plane(root / f"{sid}.rgb.ppm", 3, size),
        load_plane(root / f"{sid}.edge.pgm", 1, size),
        load_plane(root / f"{sid}.depth.pgm", 1, size),
        mask,
    ).validate(size)


def load_dataset(root, size=IMAGE_SIZE):
    return [load_sample(root, sid, size) for sid in read_manifest(root)]
