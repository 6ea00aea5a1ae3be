#!/usr/bin/env python3
"""Regenerates the bundled fixture datasets under data/fixtures.

Five 16x16 grayscale samples per task, each with ground truth and a short
reference explanation. Output is deterministic; rerun after editing.
"""

import json
from pathlib import Path

from PIL import Image

SIZE = 16
DARK = 20
ROOT = Path(__file__).resolve().parent.parent / "data" / "fixtures"


def canvas(fill=DARK):
    return [[fill] * SIZE for _ in range(SIZE)]


def rect(px, y0, y1, x0, x1, value):
    for y in range(y0, y1):
        for x in range(x0, x1):
            px[y][x] = value


def save(px, path):
    path.parent.mkdir(parents=True, exist_ok=True)
    img = Image.new("L", (SIZE, SIZE))
    img.putdata([v for row in px for v in row])
    img.save(path, optimize=False)


def write_text(path, text):
    path.write_text(text.strip() + "\n", encoding="utf-8")


def classification():
    base = ROOT / "classification"
    samples = []

    px = canvas()
    rect(px, 4, 10, 2, 7, 230)
    samples.append(("left", "cls-1", px,
                    "The model predicted left. The salient region is the bright square in the "
                    "left half of the frame, and the verdict is a match with the label."))

    px = canvas()
    for y in range(SIZE):
        for x in range(SIZE):
            if (y - 8) ** 2 + (x - 4) ** 2 <= 9:
                px[y][x] = 210
    samples.append(("left", "cls-2", px,
                    "Model predicted left; the highlighted disc sits in the left half, so the "
                    "salient region supports the class and the verdict is match."))

    px = [[max(DARK, 240 - 15 * x) for x in range(SIZE)] for _ in range(SIZE)]
    samples.append(("left", "cls-3", px,
                    "The prediction is left because brightness fades from the left edge. The "
                    "salient region covers the left columns; verdict match."))

    px = canvas()
    rect(px, 3, 12, 10, 15, 220)
    samples.append(("right", "cls-4", px,
                    "Model predicted right. The salient region is the tall bright block on the "
                    "right side, which agrees with the label; verdict match."))

    px = canvas()
    rect(px, 2, 14, 4, 8, 200)
    rect(px, 6, 9, 9, 11, 120)
    samples.append(("right", "cls-5", px,
                    "The model predicted left, but the label is right. The salient region is the "
                    "bright bar left of centre, so the background misled it; verdict mismatch."))

    for label, stem, px, text in samples:
        save(px, base / label / f"{stem}.png")
        write_text(base / label / f"{stem}.txt", text)


def segmentation():
    base = ROOT / "segmentation"
    samples = []

    px = canvas()
    rect(px, 3, 9, 3, 12, 210)
    samples.append(("seg-1", px, None,
                    "Model predicted foreground for the bright band. The salient region matches "
                    "the band edges; verdict match."))

    px = canvas()
    for y in range(SIZE):
        for x in range(SIZE):
            if abs(y - x) <= 1:
                px[y][x] = 230
    samples.append(("seg-2", px, None,
                    "The model predicted foreground along the diagonal line. The salient region "
                    "follows the line closely; verdict match."))

    px = canvas()
    rect(px, 10, 16, 0, 16, 190)
    samples.append(("seg-3", px, None,
                    "Model predicted foreground over the lower strip. The salient region hugs "
                    "its top boundary; verdict match."))

    px = canvas()
    rect(px, 2, 6, 2, 6, 220)
    rect(px, 9, 14, 9, 14, 220)
    samples.append(("seg-4", px, None,
                    "The model predicted foreground for both squares. The salient region covers "
                    "each square; verdict match."))

    px = canvas(60)
    rect(px, 5, 11, 5, 11, 110)
    mask = [[1 if 5 <= y < 11 and 5 <= x < 11 else 0 for x in range(SIZE)] for y in range(SIZE)]
    samples.append(("seg-5", px, mask,
                    "Model predicted background; the faint square is annotated as foreground, "
                    "so the salient region is weak and the verdict is mismatch."))

    for stem, px, mask, text in samples:
        if mask is None:
            mask = [[1 if v > 127 else 0 for v in row] for row in px]
        save(px, base / "images" / f"{stem}.png")
        save(mask, base / "masks" / f"{stem}.png")
        write_text(base / "images" / f"{stem}.txt", text)
    (base / "labels.txt").write_text("background\nforeground\n", encoding="utf-8")


def detection():
    base = ROOT / "detection"
    # (stem, bright pixel (y, x), category id of the ground truth, reference)
    samples = [
        ("det-1", (4, 3), 1,
         "Model predicted left for the box around the bright spot. The salient region sits "
         "inside the box; verdict match."),
        ("det-2", (11, 12), 2,
         "The model predicted right. The salient region is the spot in the lower right and "
         "it fills the box; verdict match."),
        ("det-3", (7, 2), 1,
         "Model predicted left; the salient region is centred on the spot at the left edge, "
         "verdict match."),
        ("det-4", (2, 13), 2,
         "The model predicted right for the spot near the top right corner. The salient "
         "region is tight around it; verdict match."),
        ("det-5", (9, 5), 2,
         "Model predicted left, yet the annotation says right. The salient region is the "
         "spot itself, so the verdict is mismatch."),
    ]
    images, annotations = [], []
    for i, (stem, (y, x), cat, text) in enumerate(samples, start=1):
        px = canvas(10)
        px[y][x] = 250
        save(px, base / "images" / f"{stem}.png")
        write_text(base / "images" / f"{stem}.txt", text)
        images.append({"id": i, "file_name": f"{stem}.png", "height": SIZE, "width": SIZE})
        annotations.append({"id": i, "image_id": i, "category_id": cat,
                            "bbox": [x - 0.5, y - 0.5, 2.0, 2.0]})
    doc = {
        "images": images,
        "annotations": annotations,
        "categories": [{"id": 1, "name": "left"}, {"id": 2, "name": "right"}],
    }
    (base / "annotations.json").write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


if __name__ == "__main__":
    classification()
    segmentation()
    detection()
