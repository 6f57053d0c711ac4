import json
from pathlib import Path

import numpy as np
import pytest

from domainbench.imaging import save_image

DATA_DIR = Path(__file__).parent / "data"


def synthetic_image(width: int, height: int, seed: int = 0) -> np.ndarray:
    """Non-constant test scene: smooth gradients, a few rectangles, texture."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    img = np.stack(
        [
            0.55 + 0.35 * np.sin(2 * np.pi * xx / max(width, 1)),
            0.45 + 0.35 * (yy / max(height - 1, 1)),
            0.5 + 0.3 * np.sin(2 * np.pi * (xx + yy) / max(width + height, 1)),
        ],
        axis=2,
    )
    for _ in range(4):
        x0, y0 = rng.integers(0, max(width - 8, 1)), rng.integers(0, max(height - 8, 1))
        w, h = rng.integers(4, max(width // 3, 5)), rng.integers(4, max(height // 3, 5))
        img[y0 : y0 + h, x0 : x0 + w] = rng.random(3)
    img += rng.normal(0.0, 0.02, img.shape)
    return np.clip(np.floor(img * 255.0 + 0.5), 0, 255).astype(np.uint8)


def make_lvis_doc(images, annotations, categories) -> dict:
    return {"images": images, "annotations": annotations, "categories": categories}


def tiny_categories() -> list[dict]:
    return [
        {"id": 1, "name": "car", "frequency": "f"},
        {"id": 2, "name": "dog", "frequency": "c"},
        {"id": 3, "name": "heron", "frequency": "r"},
    ]


def write_json(path: Path, doc) -> Path:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
    return path


@pytest.fixture()
def tiny_dataset(tmp_path):
    """Three small images on disk plus a matching LVIS-schema file."""
    image_root = tmp_path / "images"
    image_root.mkdir()
    images, annotations = [], []
    ann_id = 1
    for i in range(1, 4):
        w, h = 48 + 4 * i, 36 + 2 * i
        save_image(image_root / f"img{i}.png", synthetic_image(w, h, seed=i))
        images.append({"id": i, "file_name": f"img{i}.png", "width": w, "height": h})
        for cat in (1, (i % 3) + 1):
            annotations.append(
                {
                    "id": ann_id,
                    "image_id": i,
                    "bbox": [2.0 * i, 3.0, 10.0, 8.0],
                    "category_id": cat,
                    "segmentation": [[2.0 * i, 3.0, 12.0 + i, 3.0, 2.0 * i, 11.0]],
                }
            )
            ann_id += 1
    path = write_json(tmp_path / "annotations.json", make_lvis_doc(images, annotations, tiny_categories()))
    return {"annotations": path, "image_root": image_root, "tmp": tmp_path}


def build_benchmark_fixture(root: Path, n_images: int = 100, seed: int = 7) -> dict:
    """LVIS-schema fixture with real PNGs: n images, 12 categories across the
    three buckets, 1-4 boxes per image, segmentation payloads carried."""
    rng = np.random.default_rng(seed)
    image_root = root / "images"
    image_root.mkdir(parents=True, exist_ok=True)
    categories = [
        {"id": c, "name": f"cat_{c:02d}", "frequency": "f" if c <= 5 else ("c" if c <= 9 else "r")}
        for c in range(1, 13)
    ]
    images, annotations = [], []
    ann_id = 1
    for i in range(1, n_images + 1):
        w = int(rng.integers(48, 80))
        h = int(rng.integers(36, 64))
        save_image(image_root / f"img{i:04d}.png", synthetic_image(w, h, seed=seed + i))
        neg = sorted(int(c) for c in rng.choice(12, size=2, replace=False) + 1)
        images.append(
            {
                "id": i,
                "file_name": f"img{i:04d}.png",
                "width": w,
                "height": h,
                "neg_category_ids": neg,
                "not_exhaustive_category_ids": [],
            }
        )
        for _ in range(int(rng.integers(1, 5))):
            bw = float(rng.integers(5, max(6, w // 2)))
            bh = float(rng.integers(5, max(6, h // 2)))
            x = float(rng.integers(0, int(w - bw)))
            y = float(rng.integers(0, int(h - bh)))
            annotations.append(
                {
                    "id": ann_id,
                    "image_id": i,
                    "bbox": [x, y, bw, bh],
                    "category_id": int(rng.integers(1, 13)),
                    "area": bw * bh,
                    "segmentation": [[x, y, x + bw, y, x + bw, y + bh, x, y + bh]],
                }
            )
            ann_id += 1
    path = write_json(root / "annotations.json", make_lvis_doc(images, annotations, categories))
    return {"annotations": path, "image_root": image_root}


@pytest.fixture(scope="session")
def benchmark_fixture(tmp_path_factory):
    root = tmp_path_factory.mktemp("benchmark_src")
    return build_benchmark_fixture(root)


def make_taxonomy_doc(n_frequent: int = 405, n_common: int = 461, n_rare: int = 337) -> dict:
    """Full-scale LVIS-v1-like taxonomy (1,203 categories by default) with a
    handful of images so the loader runs its whole validation path."""
    categories = []
    cid = 0
    for bucket, count in (("f", n_frequent), ("c", n_common), ("r", n_rare)):
        for _ in range(count):
            cid += 1
            categories.append({"id": cid, "name": f"category_{cid:04d}", "frequency": bucket})
    images = [
        {
            "id": i,
            "coco_url": f"http://example.test/val2017/{i:012d}.jpg",
            "width": 640,
            "height": 480,
            "neg_category_ids": [1, 2],
            "not_exhaustive_category_ids": [],
        }
        for i in range(1, 6)
    ]
    annotations = [
        {
            "id": i,
            "image_id": (i - 1) % 5 + 1,
            "bbox": [float(4 * i % 600), 10.0, 20.0, 30.0],
            "category_id": (i * 37) % cid + 1,
            "segmentation": [[0.0, 0.0, 1.0, 0.0, 1.0, 1.0]],
        }
        for i in range(1, 51)
    ]
    return make_lvis_doc(images, annotations, categories)
