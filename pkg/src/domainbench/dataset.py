"""Annotation ingestion, category splits, sampling, domain amplification,
and format export.

Annotation files follow the LVIS layout: top-level ``images``, ``annotations``
and ``categories`` arrays, a ``frequency`` field on categories, and optional
``neg_category_ids`` / ``not_exhaustive_category_ids`` per image. Raw entry
dicts are kept verbatim so amplification can re-emit bboxes, category ids and
segmentation payloads byte-equal to the source.
"""

from __future__ import annotations

import hashlib
import json
import logging
import shutil
import struct
import xml.etree.ElementTree as ET
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    InvalidBoxError,
    MalformedAnnotationsError,
    ManifestError,
    UnknownCategoryError,
)
from .imaging import load_image, save_image

log = logging.getLogger(__name__)

BUCKETS = ("frequent", "common", "rare")
_BUCKET_ALIASES = {"f": "frequent", "c": "common", "r": "rare"}


def _bucket(value) -> str:
    b = _BUCKET_ALIASES.get(value, value)
    if b not in BUCKETS:
        raise MalformedAnnotationsError(f"unknown frequency bucket {value!r}")
    return b


# ---------------------------------------------------------------------------
# Core containers


@dataclass(frozen=True)
class CategoryEntry:
    id: int
    name: str
    bucket: str


class CategoryTable:
    """The category taxonomy with frequency buckets.

    base = frequent + common, novel = rare, open = base + novel.
    """

    def __init__(self, entries: list[CategoryEntry], raw: list[dict] | None = None):
        ids = [e.id for e in entries]
        if len(set(ids)) != len(ids):
            raise MalformedAnnotationsError("category ids are not unique")
        self.entries = list(entries)
        self.raw = list(raw) if raw is not None else [
            {"id": e.id, "name": e.name, "frequency": e.bucket[0]} for e in entries
        ]
        self._by_id = {e.id: e for e in self.entries}

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, category_id: int) -> bool:
        return category_id in self._by_id

    def name_of(self, category_id: int) -> str:
        return self._by_id[category_id].name

    def bucket_of(self, category_id: int) -> str:
        return self._by_id[category_id].bucket

    def ids_in_bucket(self, bucket: str) -> set[int]:
        return {e.id for e in self.entries if e.bucket == bucket}

    @property
    def base_ids(self) -> set[int]:
        return self.ids_in_bucket("frequent") | self.ids_in_bucket("common")

    @property
    def novel_ids(self) -> set[int]:
        return self.ids_in_bucket("rare")

    @property
    def open_ids(self) -> set[int]:
        return self.base_ids | self.novel_ids

    def bucket_counts(self) -> dict[str, int]:
        return {b: len(self.ids_in_bucket(b)) for b in BUCKETS}


def split_categories(table: CategoryTable) -> tuple[set[int], set[int]]:
    """(base, novel) partition: frequent+common vs rare."""
    return table.base_ids, table.novel_ids


@dataclass
class ImageInfo:
    id: int
    file_name: str
    width: int
    height: int
    neg_category_ids: list[int] | None = None
    not_exhaustive_category_ids: list[int] | None = None
    raw: dict = field(default_factory=dict, repr=False)


@dataclass
class Annotation:
    id: int
    image_id: int
    bbox: list  # [x, y, w, h], kept exactly as loaded
    category_id: int
    segmentation: object = None
    raw: dict = field(default_factory=dict, repr=False)


class AnnotationSet:
    """Validated images + annotations, indexed by image."""

    def __init__(self, images: list[ImageInfo], annotations: list[Annotation]):
        self.images = list(images)
        self.annotations = list(annotations)
        self._image_by_id = {im.id: im for im in self.images}
        if len(self._image_by_id) != len(self.images):
            raise MalformedAnnotationsError("image ids are not unique")
        self._anns_by_image: dict[int, list[Annotation]] = {im.id: [] for im in self.images}
        for ann in self.annotations:
            if ann.image_id not in self._image_by_id:
                raise MalformedAnnotationsError(
                    f"annotation {ann.id} references unknown image {ann.image_id}"
                )
            self._anns_by_image[ann.image_id].append(ann)

    def __len__(self) -> int:
        return len(self.images)

    def image(self, image_id: int) -> ImageInfo:
        return self._image_by_id[image_id]

    def has_image(self, image_id: int) -> bool:
        return image_id in self._image_by_id

    def anns_for_image(self, image_id: int) -> list[Annotation]:
        return self._anns_by_image[image_id]

    def categories_of_image(self, image_id: int) -> set[int]:
        return {a.category_id for a in self._anns_by_image[image_id]}

    def image_ids(self) -> list[int]:
        return sorted(self._image_by_id)

    def subset(self, image_ids) -> "AnnotationSet":
        keep = set(image_ids)
        return AnnotationSet(
            [im for im in self.images if im.id in keep],
            [a for a in self.annotations if a.image_id in keep],
        )


def _validate_boxes(images: dict[int, ImageInfo], annotations: list[Annotation], table: CategoryTable):
    bad_boxes, bad_cats = [], []
    for ann in annotations:
        try:
            x, y, w, h = (float(v) for v in ann.bbox)
        except (TypeError, ValueError):
            raise MalformedAnnotationsError(f"annotation {ann.id} has a non-numeric bbox {ann.bbox!r}")
        im = images[ann.image_id]
        if w <= 0 or h <= 0 or x < 0 or y < 0 or x + w > im.width or y + h > im.height:
            bad_boxes.append(ann.id)
        if ann.category_id not in table:
            bad_cats.append(ann.id)
    if bad_boxes:
        raise InvalidBoxError(f"{len(bad_boxes)} annotations have invalid boxes: {bad_boxes[:20]}", bad_boxes)
    if bad_cats:
        raise UnknownCategoryError(
            f"{len(bad_cats)} annotations reference unknown categories: {bad_cats[:20]}", bad_cats
        )


def load_annotations(path, exclude_image_ids=None) -> tuple[AnnotationSet, CategoryTable]:
    """Parse and validate an LVIS-schema annotation file.

    ``exclude_image_ids`` drops the listed images (and their annotations)
    before validation, modeling a manual-cleaning exclude list.
    """
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise MalformedAnnotationsError(f"cannot parse {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise MalformedAnnotationsError(f"{path}: expected a JSON object at top level")
    for key in ("images", "annotations", "categories"):
        if not isinstance(doc.get(key), list):
            raise MalformedAnnotationsError(f"{path}: missing or non-array {key!r}")

    entries = []
    for c in doc["categories"]:
        try:
            entries.append(CategoryEntry(int(c["id"]), str(c["name"]), _bucket(c["frequency"])))
        except KeyError as exc:
            raise MalformedAnnotationsError(f"category entry misses key {exc}") from exc
    table = CategoryTable(entries, raw=doc["categories"])

    excluded = set(exclude_image_ids or ())
    images = []
    for im in doc["images"]:
        try:
            image_id = int(im["id"])
            if image_id in excluded:
                continue
            name = im.get("file_name") or im.get("coco_url", "").rsplit("/", 1)[-1]
            if not name:
                raise MalformedAnnotationsError(f"image {image_id} has neither file_name nor coco_url")
            width, height = int(im["width"]), int(im["height"])
        except KeyError as exc:
            raise MalformedAnnotationsError(f"image entry misses key {exc}") from exc
        if width <= 0 or height <= 0:
            raise MalformedAnnotationsError(f"image {image_id} has non-positive size {width}x{height}")
        images.append(
            ImageInfo(
                id=image_id,
                file_name=name,
                width=width,
                height=height,
                neg_category_ids=im.get("neg_category_ids"),
                not_exhaustive_category_ids=im.get("not_exhaustive_category_ids"),
                raw=im,
            )
        )

    annotations = []
    seen_ann_ids = set()
    for a in doc["annotations"]:
        try:
            ann = Annotation(
                id=int(a["id"]),
                image_id=int(a["image_id"]),
                bbox=a["bbox"],
                category_id=int(a["category_id"]),
                segmentation=a.get("segmentation"),
                raw=a,
            )
        except KeyError as exc:
            raise MalformedAnnotationsError(f"annotation entry misses key {exc}") from exc
        if ann.image_id in excluded:
            continue
        if ann.id in seen_ann_ids:
            raise MalformedAnnotationsError(f"duplicate annotation id {ann.id}")
        seen_ann_ids.add(ann.id)
        annotations.append(ann)

    anns = AnnotationSet(images, annotations)
    _validate_boxes(anns._image_by_id, annotations, table)
    return anns, table


# ---------------------------------------------------------------------------
# Sampling and seed mixing


def mix_seed(*parts) -> int:
    """Order-independent-of-scheduling 64-bit seed from ints and strings."""
    h = hashlib.blake2b(digest_size=8)
    for p in parts:
        if isinstance(p, str):
            h.update(p.encode("utf-8") + b"\x00")
        else:
            h.update(struct.pack("<q", int(p)))
    return int.from_bytes(h.digest(), "little")


def sample_for_domain(anns: AnnotationSet, n: int, seed: int) -> list[int]:
    """Greedy maximum-category-coverage selection, ties broken by ascending
    image id, then seeded uniform fill without replacement."""
    if n < 1:
        raise ValueError(f"target image count must be >= 1, got {n}")
    all_ids = anns.image_ids()
    if n >= len(all_ids):
        if n > len(all_ids):
            log.warning("requested %d images but only %d available; clamping", n, len(all_ids))
        return list(all_ids)

    cats_by_image = {i: anns.categories_of_image(i) for i in all_ids}
    uncovered = set().union(*cats_by_image.values()) if cats_by_image else set()
    selected: list[int] = []
    chosen = set()
    while len(selected) < n and uncovered:
        best_id, best_gain = None, 0
        for image_id in all_ids:
            if image_id in chosen:
                continue
            gain = len(cats_by_image[image_id] & uncovered)
            if gain > best_gain:
                best_id, best_gain = image_id, gain
        if best_id is None:
            break
        selected.append(best_id)
        chosen.add(best_id)
        uncovered -= cats_by_image[best_id]

    remaining = [i for i in all_ids if i not in chosen]
    need = n - len(selected)
    if need > 0:
        rng = np.random.default_rng(seed)
        fill = rng.permutation(len(remaining))[:need]
        selected.extend(remaining[i] for i in sorted(fill.tolist()))
    return selected


# ---------------------------------------------------------------------------
# Domain amplification


@dataclass(frozen=True)
class StyleIngest:
    """External-ingest marker: pre-rendered style images keyed by source
    file name inside ``directory``."""

    directory: str


@dataclass
class DomainRecord:
    tag: str
    kind: str  # "imaging" or "style"
    spec: dict
    out_dir: str
    annotation_file: str
    images: list  # [{"id", "source_id", "file_name"}]


@dataclass
class DatasetManifest:
    """Record of one amplification run; see docs/config-schema.md for keys."""

    source: str
    global_seed: int
    n_source_images: int
    m_output_images: int
    domains: list[DomainRecord]
    gaps: list = field(default_factory=list)
    combined_annotation_file: str | None = None
    config_hash: str | None = None

    def __post_init__(self):
        tags = [d.tag for d in self.domains]
        if len(set(tags)) != len(tags):
            raise ManifestError(f"duplicate domain tags: {tags}")
        n_imaging = sum(1 for d in self.domains if d.kind == "imaging")
        n_style = sum(1 for d in self.domains if d.kind == "style")
        if n_imaging > 9 or n_style > 9:
            raise ManifestError(
                f"at most 9 imaging-condition and 9 style domains are supported, "
                f"got {n_imaging} and {n_style}"
            )

    def counts(self) -> dict[str, int]:
        return {d.tag: len(d.images) for d in self.domains}

    def domain_of_image(self) -> dict[int, str]:
        mapping: dict[int, str] = {}
        for d in self.domains:
            for entry in d.images:
                if entry["id"] in mapping:
                    raise ManifestError(f"image id {entry['id']} appears in more than one domain")
                mapping[entry["id"]] = d.tag
        return mapping

    def to_dict(self) -> dict:
        return {
            "source": self.source,
            "global_seed": self.global_seed,
            "config_hash": self.config_hash,
            "n_source_images": self.n_source_images,
            "m_output_images": self.m_output_images,
            "counts": self.counts(),
            "combined_annotation_file": self.combined_annotation_file,
            "gaps": self.gaps,
            "domains": [
                {
                    "tag": d.tag,
                    "kind": d.kind,
                    "spec": d.spec,
                    "out_dir": d.out_dir,
                    "annotation_file": d.annotation_file,
                    "images": d.images,
                }
                for d in self.domains
            ],
        }

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        try:
            domains = [
                DomainRecord(
                    tag=d["tag"],
                    kind=d["kind"],
                    spec=d["spec"],
                    out_dir=d["out_dir"],
                    annotation_file=d["annotation_file"],
                    images=d["images"],
                )
                for d in doc["domains"]
            ]
            return cls(
                source=doc["source"],
                global_seed=doc["global_seed"],
                n_source_images=doc["n_source_images"],
                m_output_images=doc["m_output_images"],
                domains=domains,
                gaps=doc.get("gaps", []),
                combined_annotation_file=doc.get("combined_annotation_file"),
                config_hash=doc.get("config_hash"),
            )
        except KeyError as exc:
            raise ManifestError(f"manifest {path} misses key {exc}") from exc


def _spec_dict(spec) -> dict:
    if isinstance(spec, StyleIngest):
        return {"kind": "style_ingest", "directory": spec.directory}
    return {
        "kind": spec.kind.value,
        "params": dict(spec.params),
        "severity_preset": spec.severity_preset,
    }


def _produce_image(src_path: Path, dst_path: Path, spec, image_seed: int):
    if isinstance(spec, StyleIngest):
        styled = Path(spec.directory) / src_path.name
        if not styled.is_file():
            raise FileNotFoundError(f"styled image {styled} not found")
        shutil.copyfile(styled, dst_path)
    else:
        save_image(dst_path, spec.apply(load_image(src_path), seed=image_seed))


def amplify(
    anns: AnnotationSet,
    table: CategoryTable,
    specs: list[tuple[str, object]],
    per_domain_count: int,
    out_dir,
    seed: int,
    image_root,
    workers: int = 1,
    config_hash: str | None = None,
    source_name: str = "",
) -> DatasetManifest:
    """Build one degraded (or style-ingested) dataset per (tag, spec) pair.

    Per-image randomness comes from mix_seed(seed, source_image_id, tag), so
    outputs are byte-identical regardless of worker count or processing
    order. Per-domain annotation files re-emit bbox / category_id /
    segmentation values verbatim; image and annotation ids are remapped so
    they stay unique across domains. Kernel failures skip that image and are
    recorded as manifest gap entries.
    """
    tags = [t for t, _ in specs]
    if len(set(tags)) != len(tags):
        raise ManifestError(f"duplicate domain tags: {tags}")
    out_dir = Path(out_dir)
    image_root = Path(image_root)
    out_dir.mkdir(parents=True, exist_ok=True)

    # canonical task list: ids assigned before any work is dispatched
    plans = []
    next_image_id = 1
    for tag, spec in specs:
        sampled = sorted(sample_for_domain(anns, per_domain_count, mix_seed(seed, "sample", tag)))
        domain_dir = out_dir / tag
        (domain_dir / "images").mkdir(parents=True, exist_ok=True)
        items = []
        for src_id in sampled:
            info = anns.image(src_id)
            items.append(
                {
                    "new_id": next_image_id,
                    "source_id": src_id,
                    "file_name": Path(info.file_name).name,
                    "seed": mix_seed(seed, src_id, tag),
                }
            )
            next_image_id += 1
        plans.append((tag, spec, domain_dir, items))

    def run_item(tag, spec, domain_dir, item):
        src = image_root / anns.image(item["source_id"]).file_name
        dst = domain_dir / "images" / item["file_name"]
        try:
            _produce_image(src, dst, spec, item["seed"])
            return None
        except Exception as exc:  # noqa: BLE001 - a bad image must not kill the run
            log.error("domain %s image %d failed: %s", tag, item["source_id"], exc)
            return {"domain": tag, "source_image_id": item["source_id"], "error": str(exc)}

    gaps = []
    failed = {}
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [
                (tag, item, pool.submit(run_item, tag, spec, domain_dir, item))
                for tag, spec, domain_dir, items in plans
                for item in items
            ]
            for tag, item, fut in futures:
                gap = fut.result()
                if gap:
                    failed[(tag, item["source_id"])] = gap
    else:
        for tag, spec, domain_dir, items in plans:
            for item in items:
                gap = run_item(tag, spec, domain_dir, item)
                if gap:
                    failed[(tag, item["source_id"])] = gap

    next_ann_id = 1
    records = []
    combined = {"images": [], "annotations": [], "categories": table.raw}
    for tag, spec, domain_dir, items in plans:
        doc = {"images": [], "annotations": [], "categories": table.raw}
        kept_items = []
        for item in items:
            gap = failed.get((tag, item["source_id"]))
            if gap:
                gaps.append(gap)
                continue
            info = anns.image(item["source_id"])
            image_entry = dict(info.raw) if info.raw else {"width": info.width, "height": info.height}
            image_entry["id"] = item["new_id"]
            image_entry["file_name"] = str(Path(tag) / "images" / item["file_name"])
            image_entry.pop("coco_url", None)
            doc["images"].append(image_entry)
            for ann in anns.anns_for_image(item["source_id"]):
                ann_entry = dict(ann.raw)
                ann_entry["id"] = next_ann_id
                ann_entry["image_id"] = item["new_id"]
                next_ann_id += 1
                doc["annotations"].append(ann_entry)
            kept_items.append(
                {"id": item["new_id"], "source_id": item["source_id"], "file_name": item["file_name"]}
            )
        ann_file = domain_dir / "annotations.json"
        with open(ann_file, "w", encoding="utf-8") as fh:
            json.dump(doc, fh)
        combined["images"].extend(doc["images"])
        combined["annotations"].extend(doc["annotations"])
        records.append(
            DomainRecord(
                tag=tag,
                kind="style" if isinstance(spec, StyleIngest) else "imaging",
                spec=_spec_dict(spec),
                out_dir=str(domain_dir),
                annotation_file=str(ann_file),
                images=kept_items,
            )
        )

    combined_path = out_dir / "annotations.json"
    with open(combined_path, "w", encoding="utf-8") as fh:
        json.dump(combined, fh)

    manifest = DatasetManifest(
        source=source_name,
        global_seed=seed,
        n_source_images=len(anns),
        m_output_images=sum(len(r.images) for r in records),
        domains=records,
        gaps=gaps,
        combined_annotation_file=str(combined_path),
        config_hash=config_hash,
    )
    manifest.save(out_dir / "manifest.json")
    return manifest


# ---------------------------------------------------------------------------
# VOC export / import


def _fmt_coord(v) -> str:
    f = float(v)
    return str(int(f)) if f == int(f) else repr(f)


def export_voc(anns: AnnotationSet, table: CategoryTable, out_dir) -> int:
    """Write one VOC-schema XML per image; returns the file count.
    bndbox is (x, y, x+w, y+h)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    count = 0
    for info in anns.images:
        root = ET.Element("annotation")
        ref = Path(info.file_name)
        ET.SubElement(root, "folder").text = str(ref.parent) if str(ref.parent) != "." else ""
        ET.SubElement(root, "filename").text = ref.name
        size = ET.SubElement(root, "size")
        ET.SubElement(size, "width").text = str(info.width)
        ET.SubElement(size, "height").text = str(info.height)
        ET.SubElement(size, "depth").text = "3"
        for ann in anns.anns_for_image(info.id):
            x, y, w, h = (float(v) for v in ann.bbox)
            obj = ET.SubElement(root, "object")
            ET.SubElement(obj, "name").text = table.name_of(ann.category_id)
            bnd = ET.SubElement(obj, "bndbox")
            ET.SubElement(bnd, "xmin").text = _fmt_coord(x)
            ET.SubElement(bnd, "ymin").text = _fmt_coord(y)
            ET.SubElement(bnd, "xmax").text = _fmt_coord(x + w)
            ET.SubElement(bnd, "ymax").text = _fmt_coord(y + h)
        tree = ET.ElementTree(root)
        ET.indent(tree)
        tree.write(out_dir / (ref.stem + ".xml"), encoding="unicode")
        count += 1
    return count


def load_voc(xml_dir) -> tuple[AnnotationSet, CategoryTable]:
    """Read a directory of VOC XML files back into the internal model.
    Category ids are assigned by sorted name; VOC carries no frequency
    information, so every category lands in the 'frequent' bucket."""
    xml_dir = Path(xml_dir)
    files = sorted(xml_dir.glob("*.xml"))
    names = set()
    parsed = []
    for path in files:
        root = ET.parse(path).getroot()
        folder = root.findtext("folder") or ""
        filename = root.findtext("filename")
        width = int(root.findtext("size/width"))
        height = int(root.findtext("size/height"))
        objs = []
        for obj in root.findall("object"):
            name = obj.findtext("name")
            names.add(name)
            xmin = float(obj.findtext("bndbox/xmin"))
            ymin = float(obj.findtext("bndbox/ymin"))
            xmax = float(obj.findtext("bndbox/xmax"))
            ymax = float(obj.findtext("bndbox/ymax"))
            objs.append((name, [xmin, ymin, xmax - xmin, ymax - ymin]))
        parsed.append((folder, filename, width, height, objs))

    table = CategoryTable(
        [CategoryEntry(i + 1, name, "frequent") for i, name in enumerate(sorted(names))]
    )
    name_to_id = {e.name: e.id for e in table.entries}
    images, annotations = [], []
    ann_id = 1
    for image_id, (folder, filename, width, height, objs) in enumerate(parsed, start=1):
        file_name = str(Path(folder) / filename) if folder else filename
        images.append(ImageInfo(id=image_id, file_name=file_name, width=width, height=height))
        for name, bbox in objs:
            annotations.append(
                Annotation(id=ann_id, image_id=image_id, bbox=bbox, category_id=name_to_id[name])
            )
            ann_id += 1
    return AnnotationSet(images, annotations), table
