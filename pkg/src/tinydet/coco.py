"""COCO-format annotation and detection-result files.

Ground truth is the standard dict of `images`, `annotations`, `categories`
arrays; detection results are the standard flat array of
{image_id, category_id, bbox, score}. Boxes are [x, y, width, height] in
pixels. Loading validates referential integrity and box extents and names
the offending record in every error.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import CocoParseError


@dataclass
class CocoImage:
    id: int
    file_name: str
    width: int
    height: int


@dataclass
class BoxAnnotation:
    """One ground-truth box; `box` is (x, y, w, h), `area` defaults to w*h."""
    id: int
    image_id: int
    category_id: int
    box: tuple
    area: float = field(default=None)

    def __post_init__(self):
        if self.area is None:
            self.area = float(self.box[2] * self.box[3])

    @property
    def xyxy(self):
        x, y, w, h = self.box
        return (x, y, x + w, y + h)


@dataclass
class Detection:
    """One predicted box with a confidence score; `box` is (x, y, w, h)."""
    image_id: int
    category_id: int
    box: tuple
    score: float

    @property
    def xyxy(self):
        x, y, w, h = self.box
        return (x, y, x + w, y + h)


@dataclass
class Category:
    id: int
    name: str


def _require(record, key, where):
    if key not in record:
        raise CocoParseError(f"{where} is missing required key '{key}': {record}")
    return record[key]


def load_coco(path):
    """Load and validate a COCO annotation file.

    Returns (images, annotations, categories) as lists of CocoImage,
    BoxAnnotation, Category. Raises CocoParseError for missing keys,
    dangling references, duplicate ids, or non-positive box extents.
    """
    path = Path(path)
    with open(path) as f:
        raw = json.load(f)
    for key in ("images", "annotations", "categories"):
        if key not in raw or not isinstance(raw[key], list):
            raise CocoParseError(f"{path} is missing the '{key}' array")

    images, image_ids = [], set()
    for rec in raw["images"]:
        img = CocoImage(
            id=int(_require(rec, "id", "image record")),
            file_name=str(rec.get("file_name", "")),
            width=int(_require(rec, "width", "image record")),
            height=int(_require(rec, "height", "image record")),
        )
        if img.id in image_ids:
            raise CocoParseError(f"duplicate image id {img.id}")
        image_ids.add(img.id)
        images.append(img)

    categories, category_ids = [], set()
    for rec in raw["categories"]:
        cat = Category(id=int(_require(rec, "id", "category record")),
                       name=str(rec.get("name", "")))
        if cat.id in category_ids:
            raise CocoParseError(f"duplicate category id {cat.id}")
        category_ids.add(cat.id)
        categories.append(cat)

    annotations = []
    for rec in raw["annotations"]:
        ann_id = int(_require(rec, "id", "annotation record"))
        image_id = int(_require(rec, "image_id", f"annotation {ann_id}"))
        category_id = int(_require(rec, "category_id", f"annotation {ann_id}"))
        bbox = _require(rec, "bbox", f"annotation {ann_id}")
        if image_id not in image_ids:
            raise CocoParseError(f"annotation {ann_id} references unknown image_id {image_id}")
        if category_id not in category_ids:
            raise CocoParseError(f"annotation {ann_id} references unknown category_id {category_id}")
        if len(bbox) != 4 or bbox[2] <= 0 or bbox[3] <= 0:
            raise CocoParseError(f"annotation {ann_id} has a non-positive box extent: {bbox}")
        annotations.append(BoxAnnotation(
            id=ann_id, image_id=image_id, category_id=category_id,
            box=tuple(float(v) for v in bbox),
            area=float(rec["area"]) if "area" in rec else None,
        ))

    return images, annotations, categories


def save_coco(path, images, annotations, categories):
    """Write (images, annotations, categories) back to canonical COCO JSON.

    Output is byte-stable: keys sorted, compact separators, trailing newline.
    """
    def num(v):
        f = float(v)
        return int(f) if f.is_integer() else f

    doc = {
        "images": [{"id": im.id, "file_name": im.file_name,
                    "width": im.width, "height": im.height} for im in images],
        "annotations": [{"id": a.id, "image_id": a.image_id, "category_id": a.category_id,
                         "bbox": [num(v) for v in a.box], "area": num(a.area),
                         "iscrowd": 0} for a in annotations],
        "categories": [{"id": c.id, "name": c.name} for c in categories],
    }
    with open(path, "w") as f:
        json.dump(doc, f, sort_keys=True, separators=(",", ":"))
        f.write("\n")


def load_detections(path):
    """Load a COCO results file: a JSON array of detection records."""
    path = Path(path)
    with open(path) as f:
        raw = json.load(f)
    if not isinstance(raw, list):
        raise CocoParseError(f"{path} must contain a JSON array of detections")
    dets = []
    for i, rec in enumerate(raw):
        where = f"detection {i}"
        bbox = _require(rec, "bbox", where)
        score = float(_require(rec, "score", where))
        if len(bbox) != 4 or bbox[2] < 0 or bbox[3] < 0:
            raise CocoParseError(f"{where} has an invalid box: {bbox}")
        if not (score == score and abs(score) != float("inf")):
            raise CocoParseError(f"{where} has a non-finite score")
        dets.append(Detection(
            image_id=int(_require(rec, "image_id", where)),
            category_id=int(_require(rec, "category_id", where)),
            box=tuple(float(v) for v in bbox),
            score=score,
        ))
    return dets


def save_detections(path, detections):
    doc = [{"image_id": d.image_id, "category_id": d.category_id,
            "bbox": [float(v) for v in d.box], "score": float(d.score)}
           for d in detections]
    with open(path, "w") as f:
        json.dump(doc, f, sort_keys=True, separators=(",", ":"))
        f.write("\n")
