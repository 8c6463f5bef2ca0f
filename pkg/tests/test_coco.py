import json

import pytest

from tinydet.coco import (
    BoxAnnotation, Category, CocoImage, Detection, load_coco, load_detections,
    save_coco, save_detections,
)
from tinydet.errors import CocoParseError


MINIMAL = {
    "images": [{"id": 1, "file_name": "a.ppm", "width": 64, "height": 64}],
    "annotations": [{"id": 1, "image_id": 1, "category_id": 1, "bbox": [2, 3, 10, 12]}],
    "categories": [{"id": 1, "name": "disk"}],
}


def write(tmp_path, doc, name="ann.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return p


def test_minimal_file(tmp_path):
    images, anns, cats = load_coco(write(tmp_path, MINIMAL))
    assert (len(images), len(anns), len(cats)) == (1, 1, 1)
    assert anns[0].area == 120.0           # defaults to w*h
    assert anns[0].xyxy == (2, 3, 12, 15)


def test_area_field_respected(tmp_path):
    doc = json.loads(json.dumps(MINIMAL))
    doc["annotations"][0]["area"] = 99.0
    _, anns, _ = load_coco(write(tmp_path, doc))
    assert anns[0].area == 99.0


def test_unknown_image_reference(tmp_path):
    doc = json.loads(json.dumps(MINIMAL))
    doc["annotations"][0]["image_id"] = 7
    with pytest.raises(CocoParseError, match="annotation 1 references unknown image_id 7"):
        load_coco(write(tmp_path, doc))


def test_unknown_category_reference(tmp_path):
    doc = json.loads(json.dumps(MINIMAL))
    doc["annotations"][0]["category_id"] = 9
    with pytest.raises(CocoParseError, match="unknown category_id 9"):
        load_coco(write(tmp_path, doc))


def test_missing_array(tmp_path):
    with pytest.raises(CocoParseError, match="categories"):
        load_coco(write(tmp_path, {"images": [], "annotations": []}))


def test_nonpositive_extent(tmp_path):
    doc = json.loads(json.dumps(MINIMAL))
    doc["annotations"][0]["bbox"] = [0, 0, 0, 5]
    with pytest.raises(CocoParseError, match="non-positive"):
        load_coco(write(tmp_path, doc))


def test_duplicate_image_id(tmp_path):
    doc = json.loads(json.dumps(MINIMAL))
    doc["images"].append(dict(doc["images"][0]))
    with pytest.raises(CocoParseError, match="duplicate image id"):
        load_coco(write(tmp_path, doc))


def test_save_load_roundtrip_stable(tmp_path):
    images = [CocoImage(id=1, file_name="a.ppm", width=32, height=32)]
    anns = [BoxAnnotation(id=1, image_id=1, category_id=2, box=(1.0, 2.0, 3.0, 4.0))]
    cats = [Category(id=2, name="square")]
    p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
    save_coco(p1, images, anns, cats)
    save_coco(p2, *load_coco(p1))
    assert p1.read_bytes() == p2.read_bytes()


def test_detection_roundtrip(tmp_path):
    dets = [Detection(image_id=1, category_id=2, box=(0.0, 1.0, 5.0, 5.0), score=0.75)]
    p = tmp_path / "dets.json"
    save_detections(p, dets)
    loaded = load_detections(p)
    assert loaded == dets


def test_detections_must_be_array(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{}")
    with pytest.raises(CocoParseError, match="array"):
        load_detections(p)
