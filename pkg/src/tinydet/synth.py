"""Seeded synthetic detection data: textured backgrounds, small bright targets.

Each image is a noisy gray background with a handful of high-contrast
colored shapes (one shape family per class). Targets are tightly boxed and
written as COCO annotations; the draw rule keeps the small-target ratio
(box area < 32^2) at or above the requested floor by construction. The
same spec always produces byte-identical files: raster images as binary
PPM (P6), annotations as canonical JSON.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .coco import BoxAnnotation, Category, CocoImage, load_coco, save_coco
from .errors import ConfigError

SHAPE_NAMES = ("disk", "square", "cross", "ring", "bar")
_PALETTE = np.array([
    (0.95, 0.25, 0.20),
    (0.20, 0.90, 0.30),
    (0.25, 0.45, 0.98),
    (0.95, 0.85, 0.20),
    (0.85, 0.25, 0.90),
])
SMALL_AREA = 32.0 ** 2


@dataclass
class SynthSpec:
    """Recipe for one reproducible dataset."""
    seed: int = 0
    n_images: int = 16
    image_size: int = 128
    n_classes: int = 3
    size_range: tuple = (4, 24)
    targets_per_image: tuple = (2, 6)
    background_intensity: float = 0.25
    small_fraction: float = 0.8   # floor on the small-draw fraction (when the range allows small)

    def __post_init__(self):
        lo, hi = self.size_range
        if self.n_images < 1:
            raise ConfigError("n_images must be >= 1")
        if self.n_classes < 1 or self.n_classes > len(SHAPE_NAMES):
            raise ConfigError(f"n_classes must lie in [1, {len(SHAPE_NAMES)}]")
        if lo < 3 or hi < lo or hi > self.image_size // 2:
            raise ConfigError(f"size_range {self.size_range} is invalid for image_size {self.image_size}")
        if not 0.7 <= self.small_fraction <= 1.0:
            raise ConfigError("small_fraction must lie in [0.7, 1.0]")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SynthSpec":
        raw = json.loads(text)
        for key in ("size_range", "targets_per_image"):
            if key in raw:
                raw[key] = tuple(raw[key])
        return cls(**raw)


@dataclass
class Dataset:
    """In-memory dataset: uint8 HxWx3 images plus COCO-style records."""
    images: list
    coco_images: list
    annotations: list
    categories: list

    def annotations_for(self, image_id: int):
        return [a for a in self.annotations if a.image_id == image_id]


def write_ppm(path, pixels: np.ndarray):
    """Binary PPM (P6); pixels are uint8 with shape (H, W, 3)."""
    h, w, _ = pixels.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(np.ascontiguousarray(pixels, dtype=np.uint8).tobytes())


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if not data.startswith(b"P6"):
        raise ConfigError(f"{path} is not a binary PPM file")
    # header: magic, width, height, maxval, single whitespace, then raster
    fields, pos = [], 2
    while len(fields) < 3:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        fields.append(int(data[start:pos]))
    pos += 1
    w, h, maxval = fields
    if maxval != 255:
        raise ConfigError(f"{path}: only maxval 255 is supported")
    return np.frombuffer(data, dtype=np.uint8, offset=pos).reshape(h, w, 3).copy()


def _shape_mask(shape: str, s: int) -> np.ndarray:
    yy, xx = np.mgrid[0:s, 0:s].astype(np.float64)
    c = (s - 1) / 2.0
    r = s / 2.0
    dist2 = (yy - c) ** 2 + (xx - c) ** 2
    if shape == "disk":
        return dist2 <= r * r
    if shape == "square":
        return np.ones((s, s), dtype=bool)
    if shape == "cross":
        t = max(1, s // 3)
        lo, hi = (s - t) // 2, (s - t) // 2 + t
        m = np.zeros((s, s), dtype=bool)
        m[lo:hi, :] = True
        m[:, lo:hi] = True
        return m
    if shape == "ring":
        inner = max(1.0, r / 2.0)
        return (dist2 <= r * r) & (dist2 >= inner * inner)
    if shape == "bar":
        t = max(2, s // 3)
        lo = (s - t) // 2
        m = np.zeros((s, s), dtype=bool)
        m[lo:lo + t, :] = True
        return m
    raise ConfigError(f"unknown shape '{shape}'")


def _background(rng, size, intensity):
    base = rng.uniform(0.35, 0.55)
    coarse = np.kron(rng.normal(0.0, 1.0, size=(size // 8, size // 8)), np.ones((8, 8)))
    fine = rng.normal(0.0, 1.0, size=(size, size))
    tex = base + intensity * (0.6 * coarse + 0.25 * fine)
    img = np.repeat(np.clip(tex, 0.0, 1.0)[:, :, None], 3, axis=2)
    # mild channel tint so the background is not pure gray
    tint = rng.uniform(-0.03, 0.03, size=3)
    return np.clip(img + tint[None, None, :], 0.0, 1.0)


def _boxes_overlap(a, b, pad=1):
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    return not (ax + aw + pad <= bx or bx + bw + pad <= ax
                or ay + ah + pad <= by or by + bh + pad <= ay)


def generate_synthetic(spec: SynthSpec, out_dir=None) -> Dataset:
    """Materialise a dataset from a spec; optionally write it to disk.

    When out_dir is given, writes img_#####.ppm files plus annotations.json
    and returns the same in-memory dataset.
    """
    rng = np.random.default_rng(spec.seed)
    lo, hi = spec.size_range
    small_hi = min(hi, 31)
    class_weights = 0.55 ** np.arange(spec.n_classes)
    class_weights /= class_weights.sum()

    images, coco_images, annotations = [], [], []
    categories = [Category(id=k + 1, name=SHAPE_NAMES[k]) for k in range(spec.n_classes)]
    ann_id = 1
    n_small = n_total = 0

    for img_idx in range(spec.n_images):
        image_id = img_idx + 1
        img = _background(rng, spec.image_size, spec.background_intensity)
        placed = []
        n_targets = int(rng.integers(spec.targets_per_image[0], spec.targets_per_image[1] + 1))
        for _ in range(n_targets):
            cls = int(rng.choice(spec.n_classes, p=class_weights))
            # keep the small-target ratio at the floor by construction
            # (only possible when the range offers small sizes at all)
            can_small, can_large = lo <= 31, hi >= 32
            if can_small and can_large:
                want_large = rng.uniform() > spec.small_fraction
                if want_large and (n_small / (n_total + 1)) < spec.small_fraction:
                    want_large = False
            else:
                want_large = can_large
            s = int(rng.integers(32, hi + 1) if want_large else rng.integers(lo, small_hi + 1))

            mask = _shape_mask(SHAPE_NAMES[cls], s)
            rows = np.flatnonzero(mask.any(axis=1))
            cols = np.flatnonzero(mask.any(axis=0))
            tight = mask[rows[0]:rows[-1] + 1, cols[0]:cols[-1] + 1]
            th, tw = tight.shape

            box = None
            for _attempt in range(40):
                x = int(rng.integers(0, spec.image_size - tw + 1))
                y = int(rng.integers(0, spec.image_size - th + 1))
                candidate = (x, y, tw, th)
                if not any(_boxes_overlap(candidate, p) for p in placed):
                    box = candidate
                    break
            if box is None:
                continue

            color = _PALETTE[cls] * rng.uniform(0.85, 1.0)
            region = img[box[1]:box[1] + th, box[0]:box[0] + tw]
            region[tight] = color
            placed.append(box)
            annotations.append(BoxAnnotation(
                id=ann_id, image_id=image_id, category_id=cls + 1,
                box=(float(box[0]), float(box[1]), float(tw), float(th))))
            ann_id += 1
            n_total += 1
            n_small += tw * th < SMALL_AREA

        images.append((img * 255.0).round().astype(np.uint8))
        coco_images.append(CocoImage(id=image_id, file_name=f"img_{image_id:05d}.ppm",
                                     width=spec.image_size, height=spec.image_size))

    ds = Dataset(images=images, coco_images=coco_images,
                 annotations=annotations, categories=categories)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for img, meta in zip(ds.images, ds.coco_images):
            write_ppm(out / meta.file_name, img)
        save_coco(out / "annotations.json", ds.coco_images, ds.annotations, ds.categories)
    return ds


def load_dataset(path) -> Dataset:
    """Read a dataset directory written by generate_synthetic."""
    root = Path(path)
    coco_images, annotations, categories = load_coco(root / "annotations.json")
    images = [read_ppm(root / im.file_name) for im in coco_images]
    return Dataset(images=images, coco_images=coco_images,
                   annotations=annotations, categories=categories)


def small_target_ratio(annotations) -> float:
    """Fraction of ground truths with area below the small-object boundary."""
    if not annotations:
        return 0.0
    return sum(a.area < SMALL_AREA for a in annotations) / len(annotations)
