"""Ingestion and indexing of source annotations.

A corpus is described by a JSON manifest mapping annotation classes to
JSON-lines files (one record per line). Boxes are 4-element arrays of relative
floats and are stored exactly as given; masks are RLE objects
{"size": [H, W], "counts": [...]}.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ParseError, PipelineError
from .geometry import (
    BinaryMask,
    BoundingBox,
    DegenerateRegion,
    canonicalize_box,
    intersection_over_region,
)

logger = logging.getLogger(__name__)

MANIFEST_CLASSES = ("images", "objects", "captions", "regions", "relations")


class MissingFile(PipelineError):
    """The manifest or a file it references does not exist."""


class DanglingReference(PipelineError):
    """A record references an image_id that is not in the corpus."""

    def __init__(self, ref: str, image_id: str):
        super().__init__(f"{ref} references unknown image {image_id!r}")
        self.ref = ref
        self.image_id = image_id


@dataclass(frozen=True)
class ImageRecord:
    image_id: str
    width: int
    height: int
    file_ref: str


@dataclass(frozen=True)
class ObjectInstance:
    category: str
    box: BoundingBox
    mask: BinaryMask | None = None


@dataclass(frozen=True)
class RegionDescription:
    text: str
    box: BoundingBox


@dataclass(frozen=True)
class RelationAnnotation:
    """Seed topic: subject and object instances (masks required) plus a predicate."""

    relation_id: str
    image_id: str
    subject: ObjectInstance
    object: ObjectInstance
    predicate: str


@dataclass(frozen=True)
class ImageContext:
    """Per-relation prompt context: captions, object list, overlapping regions."""

    captions: tuple[str, ...]
    objects: tuple[ObjectInstance, ...]
    regions: tuple[RegionDescription, ...]


@dataclass
class Corpus:
    images: dict[str, ImageRecord] = field(default_factory=dict)
    relations: list[RelationAnnotation] = field(default_factory=list)
    captions: dict[str, list[str]] = field(default_factory=dict)
    regions: dict[str, list[RegionDescription]] = field(default_factory=dict)
    objects: dict[str, list[ObjectInstance]] = field(default_factory=dict)

    def relation_by_id(self, relation_id: str) -> RelationAnnotation:
        for rel in self.relations:
            if rel.relation_id == relation_id:
                return rel
        raise KeyError(relation_id)


def _box_from_json(value, file: str, line: int) -> BoundingBox:
    if not isinstance(value, (list, tuple)) or len(value) != 4:
        raise ParseError(file, line, f"box must be a 4-element array, got {value!r}")
    try:
        return BoundingBox(*(float(v) for v in value))
    except (TypeError, ValueError, PipelineError) as exc:
        raise ParseError(file, line, f"bad box {value!r}: {exc}") from exc


def _mask_from_json(value, file: str, line: int) -> BinaryMask:
    try:
        return BinaryMask.from_json(value)
    except PipelineError as exc:
        raise ParseError(file, line, f"bad mask: {exc}") from exc


def _object_from_json(value, file: str, line: int, mask_required: bool) -> ObjectInstance:
    if not isinstance(value, dict):
        raise ParseError(file, line, f"object must be a JSON object, got {value!r}")
    category = value.get("category")
    if not category or not isinstance(category, str):
        raise ParseError(file, line, "object category must be a non-empty string")
    box = _box_from_json(value.get("box"), file, line)
    mask = None
    if value.get("mask") is not None:
        mask = _mask_from_json(value["mask"], file, line)
    elif mask_required:
        raise ParseError(file, line, f"object {category!r} is missing its mask")
    return ObjectInstance(category=category, box=box, mask=mask)


def _iter_jsonl(path: Path):
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise MissingFile(str(path)) from exc
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            yield lineno, json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(str(path), lineno, f"invalid JSON: {exc}") from exc


def _require(record: dict, key: str, file: str, line: int):
    if key not in record:
        raise ParseError(file, line, f"missing required field {key!r}")
    return record[key]


def _check_mask_dims(mask: BinaryMask | None, image: ImageRecord, ref: str, file: str, line: int):
    if mask is None:
        return
    if (mask.height, mask.width) != (image.height, image.width):
        raise ParseError(
            file,
            line,
            f"{ref}: mask is {mask.height}x{mask.width} but image "
            f"{image.image_id!r} is {image.height}x{image.width}",
        )


def load_corpus(manifest_path: str | Path) -> Corpus:
    """Load every annotation class named in the manifest and resolve references.

    The manifest is a JSON object mapping class names (a subset of
    images/objects/captions/regions/relations) to file paths relative to the
    manifest's directory. Loading does not depend on manifest key order.
    """
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise MissingFile(str(manifest_path)) from exc
    except json.JSONDecodeError as exc:
        raise ParseError(str(manifest_path), exc.lineno, f"invalid JSON: {exc}") from exc
    if not isinstance(manifest, dict):
        raise ParseError(str(manifest_path), 1, "manifest must be a JSON object")
    unknown = set(manifest) - set(MANIFEST_CLASSES)
    if unknown:
        raise ParseError(
            str(manifest_path), 1, f"unknown manifest keys: {sorted(unknown)}"
        )

    root = manifest_path.parent
    paths = {cls: root / manifest[cls] for cls in MANIFEST_CLASSES if cls in manifest}
    corpus = Corpus()

    if "images" in paths:
        file = str(paths["images"])
        for lineno, rec in _iter_jsonl(paths["images"]):
            image_id = _require(rec, "image_id", file, lineno)
            width = int(_require(rec, "width", file, lineno))
            height = int(_require(rec, "height", file, lineno))
            if width <= 0 or height <= 0:
                raise ParseError(file, lineno, f"non-positive dimensions {width}x{height}")
            if image_id in corpus.images:
                raise ParseError(file, lineno, f"duplicate image_id {image_id!r}")
            corpus.images[image_id] = ImageRecord(
                image_id=image_id,
                width=width,
                height=height,
                file_ref=str(_require(rec, "file_ref", file, lineno)),
            )

    if "captions" in paths:
        file = str(paths["captions"])
        for lineno, rec in _iter_jsonl(paths["captions"]):
            image_id = _require(rec, "image_id", file, lineno)
            text = _require(rec, "text", file, lineno)
            if not text or not isinstance(text, str):
                raise ParseError(file, lineno, "caption text must be a non-empty string")
            if image_id not in corpus.images:
                raise DanglingReference(f"{file}:{lineno}", image_id)
            corpus.captions.setdefault(image_id, []).append(text)

    if "objects" in paths:
        file = str(paths["objects"])
        for lineno, rec in _iter_jsonl(paths["objects"]):
            image_id = _require(rec, "image_id", file, lineno)
            if image_id not in corpus.images:
                raise DanglingReference(f"{file}:{lineno}", image_id)
            obj = _object_from_json(rec, file, lineno, mask_required=False)
            _check_mask_dims(obj.mask, corpus.images[image_id], obj.category, file, lineno)
            corpus.objects.setdefault(image_id, []).append(obj)

    if "regions" in paths:
        file = str(paths["regions"])
        for lineno, rec in _iter_jsonl(paths["regions"]):
            image_id = _require(rec, "image_id", file, lineno)
            text = _require(rec, "text", file, lineno)
            if not text or not isinstance(text, str):
                raise ParseError(file, lineno, "region text must be a non-empty string")
            if image_id not in corpus.images:
                raise DanglingReference(f"{file}:{lineno}", image_id)
            box = _box_from_json(_require(rec, "box", file, lineno), file, lineno)
            corpus.regions.setdefault(image_id, []).append(
                RegionDescription(text=text, box=box)
            )

    if "relations" in paths:
        file = str(paths["relations"])
        seen = set()
        for lineno, rec in _iter_jsonl(paths["relations"]):
            relation_id = _require(rec, "relation_id", file, lineno)
            image_id = _require(rec, "image_id", file, lineno)
            predicate = _require(rec, "predicate", file, lineno)
            if not predicate or not isinstance(predicate, str):
                raise ParseError(file, lineno, "predicate must be a non-empty string")
            if relation_id in seen:
                raise ParseError(file, lineno, f"duplicate relation_id {relation_id!r}")
            seen.add(relation_id)
            if image_id not in corpus.images:
                raise DanglingReference(relation_id, image_id)
            image = corpus.images[image_id]
            subject = _object_from_json(
                _require(rec, "subject", file, lineno), file, lineno, mask_required=True
            )
            obj = _object_from_json(
                _require(rec, "object", file, lineno), file, lineno, mask_required=True
            )
            _check_mask_dims(subject.mask, image, f"{relation_id} subject", file, lineno)
            _check_mask_dims(obj.mask, image, f"{relation_id} object", file, lineno)
            corpus.relations.append(
                RelationAnnotation(
                    relation_id=relation_id,
                    image_id=image_id,
                    subject=subject,
                    object=obj,
                    predicate=predicate,
                )
            )

    logger.info(
        "loaded corpus: %d images, %d relations", len(corpus.images), len(corpus.relations)
    )
    return corpus


def _object_to_json(obj: ObjectInstance) -> dict:
    rec = {"category": obj.category, "box": list(obj.box.as_tuple())}
    if obj.mask is not None:
        rec["mask"] = obj.mask.to_json()
    return rec


def relation_to_json(rel: RelationAnnotation) -> dict:
    return {
        "relation_id": rel.relation_id,
        "image_id": rel.image_id,
        "predicate": rel.predicate,
        "subject": _object_to_json(rel.subject),
        "object": _object_to_json(rel.object),
    }


def relation_from_json(rec: dict, source: str = "<memory>", line: int = 0) -> RelationAnnotation:
    return RelationAnnotation(
        relation_id=_require(rec, "relation_id", source, line),
        image_id=_require(rec, "image_id", source, line),
        subject=_object_from_json(
            _require(rec, "subject", source, line), source, line, mask_required=True
        ),
        object=_object_from_json(
            _require(rec, "object", source, line), source, line, mask_required=True
        ),
        predicate=_require(rec, "predicate", source, line),
    )


def serialize_corpus(corpus: Corpus, out_dir: str | Path) -> Path:
    """Write the corpus back out as a manifest plus JSON-lines files."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def dump(name: str, records):
        path = out_dir / f"{name}.jsonl"
        with path.open("w", encoding="utf-8") as fh:
            for rec in records:
                fh.write(json.dumps(rec, ensure_ascii=False) + "\n")

    dump(
        "images",
        (
            {"image_id": im.image_id, "width": im.width, "height": im.height, "file_ref": im.file_ref}
            for im in corpus.images.values()
        ),
    )
    dump(
        "captions",
        (
            {"image_id": image_id, "text": text}
            for image_id, texts in corpus.captions.items()
            for text in texts
        ),
    )
    dump(
        "objects",
        (
            {"image_id": image_id, **_object_to_json(obj)}
            for image_id, objs in corpus.objects.items()
            for obj in objs
        ),
    )
    dump(
        "regions",
        (
            {"image_id": image_id, "text": region.text, "box": list(region.box.as_tuple())}
            for image_id, regions in corpus.regions.items()
            for region in regions
        ),
    )
    dump("relations", (relation_to_json(rel) for rel in corpus.relations))
    manifest_path = out_dir / "manifest.json"
    manifest = {cls: f"{cls}.jsonl" for cls in MANIFEST_CLASSES}
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return manifest_path


def _overlaps(region: RegionDescription, anchors: list[BoundingBox], threshold: float) -> bool:
    box = canonicalize_box(region.box)
    for anchor in anchors:
        try:
            ratio = intersection_over_region(box, anchor)
        except DegenerateRegion:
            return False
        if ratio > 0.0 and ratio >= threshold:
            return True
    return False


def build_image_context(
    corpus: Corpus, relation: RelationAnnotation, overlap_threshold: float = 0.5
) -> ImageContext:
    """Assemble the prompt context for one relation.

    Captions and the full object list are included verbatim in source order.
    Regions are kept when the intersection over the region's own area against
    the subject or object box is positive and meets the threshold.
    """
    if relation.image_id not in corpus.images:
        raise DanglingReference(relation.relation_id, relation.image_id)
    anchors = [canonicalize_box(relation.subject.box), canonicalize_box(relation.object.box)]
    regions = tuple(
        region
        for region in corpus.regions.get(relation.image_id, [])
        if _overlaps(region, anchors, overlap_threshold)
    )
    return ImageContext(
        captions=tuple(corpus.captions.get(relation.image_id, [])),
        objects=tuple(corpus.objects.get(relation.image_id, [])),
        regions=regions,
    )
