"""Regenerate the committed test fixtures.

Produces, under tests/data/:
  fixture_corpus/   20-relation corpus (manifest + JSONL files, masks included)
  mock_scripts/     scripted gateway replies for gen-dataset, gen-bench, classify
  goldens/          frozen transcript renderings for the girl/clock fixture
  parser_corpus.jsonl  labelled parsing cases

Everything is derived deterministically from FIXED_SEED; rerunning the script
must reproduce the files byte for byte.
"""

from __future__ import annotations

import json
import random
from pathlib import Path

import numpy as np

from relqa.annotations import ImageContext, ObjectInstance, RegionDescription, RelationAnnotation
from relqa.geometry import BinaryMask, BoundingBox, rle_encode
from relqa.prompts import (
    format_qa_pair,
    load_template,
    render_chat,
    render_classifier_chat,
    render_image_content,
    render_seed_request,
)

FIXED_SEED = 20240815
ROOT = Path(__file__).resolve().parent.parent / "tests" / "data"

CATEGORIES = [
    ("person", "clock", "looking at"),
    ("dog", "table", "under"),
    ("bird", "tree", "on"),
    ("cup", "table", "on"),
    ("person", "bicycle", "holding"),
    ("car", "tree", "beside"),
    ("person", "dog", "beside"),
    ("clock", "wall", "on"),
    ("bird", "fence", "on"),
    ("person", "car", "in front of"),
    ("dog", "sofa", "on"),
    ("cup", "person", "beside"),
    ("bicycle", "wall", "beside"),
    ("person", "tree", "behind"),
    ("dog", "car", "behind"),
    ("bird", "table", "under"),
    ("person", "sofa", "on"),
    ("clock", "table", "on"),
    ("car", "fence", "beside"),
    ("dog", "person", "beside"),
]

IMAGE_DIMS = [
    (48, 36), (40, 40), (64, 32), (36, 48), (56, 42), (32, 32),
    (44, 52), (60, 30), (38, 38), (50, 40), (42, 54), (34, 46),
]


def box_mask(box: list[float], width: int, height: int) -> dict:
    x1, y1, x2, y2 = box
    lo_x, hi_x = sorted((x1, x2))
    lo_y, hi_y = sorted((y1, y2))
    grid = np.zeros((height, width), dtype=np.uint8)
    c1, c2 = int(lo_x * width), max(int(lo_x * width) + 1, int(round(hi_x * width)))
    r1, r2 = int(lo_y * height), max(int(lo_y * height) + 1, int(round(hi_y * height)))
    grid[r1 : min(r2, height), c1 : min(c2, width)] = 1
    if not grid.any():
        grid[min(r1, height - 1), min(c1, width - 1)] = 1
    return rle_encode(grid).to_json()


def rand_box(rng: random.Random) -> list[float]:
    x1 = round(rng.uniform(0.02, 0.55), 3)
    y1 = round(rng.uniform(0.02, 0.55), 3)
    x2 = round(x1 + rng.uniform(0.15, 0.4), 3)
    y2 = round(y1 + rng.uniform(0.15, 0.4), 3)
    return [x1, y1, min(x2, 0.98), min(y2, 0.98)]


def jitter_inside(box: list[float], rng: random.Random) -> list[float]:
    x1, y1, x2, y2 = box
    dx = (x2 - x1) * 0.2
    dy = (y2 - y1) * 0.2
    return [
        round(x1 + rng.uniform(0, dx), 3),
        round(y1 + rng.uniform(0, dy), 3),
        round(x2 - rng.uniform(0, dx), 3),
        round(y2 - rng.uniform(0, dy), 3),
    ]


def build_corpus(rng: random.Random) -> dict[str, list[dict]]:
    images, captions, objects, regions, relations = [], [], [], [], []
    for i, (width, height) in enumerate(IMAGE_DIMS, start=1):
        image_id = f"img-{i:03d}"
        images.append(
            {
                "image_id": image_id,
                "width": width,
                "height": height,
                "file_ref": f"images/{image_id}.jpg",
            }
        )
    for r, (subj_cat, obj_cat, predicate) in enumerate(CATEGORIES, start=1):
        image_idx = (r - 1) % len(IMAGE_DIMS)
        width, height = IMAGE_DIMS[image_idx]
        image_id = f"img-{image_idx + 1:03d}"
        subj_box = rand_box(rng)
        obj_box = rand_box(rng)
        relations.append(
            {
                "relation_id": f"rel-{r:03d}",
                "image_id": image_id,
                "predicate": predicate,
                "subject": {
                    "category": subj_cat,
                    "box": subj_box,
                    "mask": box_mask(subj_box, width, height),
                },
                "object": {
                    "category": obj_cat,
                    "box": obj_box,
                    "mask": box_mask(obj_box, width, height),
                },
            }
        )
        captions.append(
            {
                "image_id": image_id,
                "text": f"a {subj_cat} {predicate} a {obj_cat}",
            }
        )
        objects.append({"image_id": image_id, "category": subj_cat, "box": subj_box})
        objects.append({"image_id": image_id, "category": obj_cat, "box": obj_box})
        regions.append(
            {
                "image_id": image_id,
                "text": f"a {subj_cat} near the {obj_cat}",
                "box": jitter_inside(subj_box, rng),
            }
        )
        if r % 4 == 0:
            # far-off region, filtered out of every context
            regions.append(
                {
                    "image_id": image_id,
                    "text": "an empty corner of the scene",
                    "box": [0.96, 0.96, 0.99, 0.99],
                }
            )
    return {
        "images": images,
        "captions": captions,
        "objects": objects,
        "regions": regions,
        "relations": relations,
    }


def write_jsonl(path: Path, records) -> None:
    with path.open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def seed_line(rel: dict) -> str:
    annotation = RelationAnnotation(
        relation_id=rel["relation_id"],
        image_id=rel["image_id"],
        subject=ObjectInstance(
            category=rel["subject"]["category"], box=BoundingBox(*rel["subject"]["box"])
        ),
        object=ObjectInstance(
            category=rel["object"]["category"], box=BoundingBox(*rel["object"]["box"])
        ),
        predicate=rel["predicate"],
    )
    return render_seed_request(annotation).splitlines()[-1]


def question_text(rel: dict, rnd: int) -> str:
    subj = rel["subject"]["category"]
    obj = rel["object"]["category"]
    pred = rel["predicate"]
    if rnd == 1:
        return f"Is the {subj} {pred} the {obj}?"
    return f"Is there a {subj} {pred} the {obj} in the image?"


def yes_answer(rel: dict) -> str:
    subj = rel["subject"]["category"]
    obj = rel["object"]["category"]
    pred = rel["predicate"]
    return f"Yes, the {subj} is {pred} the {obj}."


def no_answer(rel: dict) -> str:
    subj = rel["subject"]["category"]
    obj = rel["object"]["category"]
    pred = rel["predicate"]
    return f"No, the {subj} is not {pred} the {obj}."


def qa_reply(question: str, answer: str, analysis: str = "") -> str:
    block = f"Question: {question}\n\nAnswer: {answer}"
    return f"{analysis}\n\n{block}" if analysis else block


DATASET_SPECIALS = {
    "rel-004": "skip",
    "rel-007": "bbox",
    "rel-011": "refusal",
    "rel-015": "malformed",
}

BENCH_SPECIALS = {
    ("rel-003", 2): "skip",
    ("rel-009", 1): "skip_dotted",
    ("rel-013", 2): "ambiguous",
    ("rel-017", 1): "bbox",
    ("rel-020", 2): "malformed",
}


def dataset_script(relations: list[dict]) -> list[dict]:
    entries = []
    valid_seen = 0
    for rel in relations:
        match = seed_line(rel)
        kind = DATASET_SPECIALS.get(rel["relation_id"])
        if kind == "skip":
            entries.append({"match": match, "reply": "skip"})
            continue
        if kind == "refusal":
            entries.append(
                {
                    "match": match,
                    "reply": "The boxes overlap too much, this relationship is not worth "
                    "a question, so I refuse to ask.",
                }
            )
            continue
        if kind == "bbox":
            reply = qa_reply(
                question_text(rel, 1),
                yes_answer(rel)[:-1] + " at [0.120, 0.340, 0.560, 0.780].",
            )
            entries.append({"match": match, "reply": reply})
            continue
        if kind == "malformed":
            entries.append(
                {
                    "match": match,
                    "reply": "The relationship is clear from the context but I cannot "
                    "phrase it well.",
                }
            )
            continue
        valid_seen += 1
        answer = yes_answer(rel) if valid_seen % 2 == 1 else no_answer(rel)
        analysis = (
            f"The caption confirms the {rel['subject']['category']} and the "
            f"{rel['object']['category']} are both visible, so the relation can be checked."
            if valid_seen % 3 != 0
            else ""
        )
        entries.append({"match": match, "reply": qa_reply(question_text(rel, 1), answer, analysis)})
    return entries


def bench_script(relations: list[dict]) -> tuple[list[dict], list[tuple[str, str, str]]]:
    """Returns (script entries, [(candidate_id, gt_label, question)]) for the
    candidates the script is designed to produce."""
    entries = []
    produced = []
    plain_count = 0
    for rel in relations:
        match = seed_line(rel)
        for rnd in (1, 2):
            candidate_id = f"{rel['relation_id']}-r{rnd:02d}"
            kind = BENCH_SPECIALS.get((rel["relation_id"], rnd))
            question = question_text(rel, rnd)
            if kind == "skip":
                entries.append({"match": match, "reply": "skip"})
                continue
            if kind == "skip_dotted":
                entries.append({"match": match, "reply": "Skip."})
                continue
            if kind == "ambiguous":
                reply = qa_reply(
                    question,
                    f"It is hard to tell whether the {rel['subject']['category']} is "
                    f"{rel['predicate']} the {rel['object']['category']}.",
                )
                entries.append({"match": match, "reply": reply})
                continue
            if kind == "bbox":
                reply = qa_reply(
                    question, yes_answer(rel)[:-1] + " near [0.406, 0.228, 0.612, 0.754]."
                )
                entries.append({"match": match, "reply": reply})
                continue
            if kind == "malformed":
                entries.append(
                    {"match": match, "reply": "I could not settle on a single phrasing here."}
                )
                continue
            # plain slots alternate no/yes so the totals land on 17 yes / 18 no
            label = "no" if plain_count % 2 == 0 else "yes"
            plain_count += 1
            answer = no_answer(rel) if label == "no" else yes_answer(rel)
            analysis = "The objects and the caption agree, so the pair is answerable."
            entries.append({"match": match, "reply": qa_reply(question, answer, analysis)})
            produced.append((candidate_id, label, question))
    return entries, produced


CLASSIFIER_REPLIES = {
    "category": "1. The question contains a wrong obect category, and the answer corrects it.",
    "attribute": "2. The objects are right, but some attributes of one object is wrong "
    "(e.g., color, size, etc.)",
    "relation": "3. The objects are right, but the relationship between them is wrong "
    "(e.g., relative position, action, etc.)",
}


def classifier_script(produced: list[tuple[str, str, str]]) -> list[dict]:
    negatives = [(cid, q) for cid, label, q in produced if label == "no"]
    negatives.sort(key=lambda pair: pair[0])
    cycle = ("category", "attribute", "relation")
    return [
        {"match": question, "reply": CLASSIFIER_REPLIES[cycle[i % 3]]}
        for i, (_, question) in enumerate(negatives)
    ]


def table4_fixture() -> tuple[ImageContext, RelationAnnotation]:
    ctx = ImageContext(
        captions=("a girl is looking at a blue clock",),
        objects=(
            ObjectInstance("person", BoundingBox(0.906, 0.984, 0.603, 0.976)),
            ObjectInstance("person", BoundingBox(0.106, 0.121, 0.412, 0.800)),
            ObjectInstance("clock", BoundingBox(0.406, 0.228, 0.612, 0.754)),
        ),
        regions=(
            RegionDescription("a big blue clock", BoundingBox(0.406, 0.228, 0.612, 0.751)),
            RegionDescription("a girl in white dress", BoundingBox(0.106, 0.121, 0.412, 0.902)),
            RegionDescription("a girl in red jacket", BoundingBox(0.906, 0.984, 0.603, 0.976)),
        ),
    )
    rel = RelationAnnotation(
        relation_id="fixture-girl-clock",
        image_id="img-girl-clock",
        subject=ObjectInstance("people", BoundingBox(0.106, 0.121, 0.412, 0.800)),
        object=ObjectInstance("clock", BoundingBox(0.406, 0.228, 0.612, 0.754)),
        predicate="beside",
    )
    return ctx, rel


def write_goldens(out_dir: Path) -> None:
    ctx, rel = table4_fixture()
    (out_dir / "image_content.txt").write_text(render_image_content(ctx), encoding="utf-8")
    (out_dir / "yesno_transcript.txt").write_text(
        render_chat(load_template("yesno"), ctx, rel).to_text(), encoding="utf-8"
    )
    (out_dir / "wh_transcript.txt").write_text(
        render_chat(load_template("wh"), ctx, rel).to_text(), encoding="utf-8"
    )
    qa = format_qa_pair(
        "Is the bird standing on a tree?",
        "No, the bird is standing next to a large body of water.",
    )
    (out_dir / "classifier_transcript.txt").write_text(
        render_classifier_chat(load_template("classifier"), qa).to_text(), encoding="utf-8"
    )


def parser_corpus() -> list[dict]:
    girl_reply = (
        "According to the content, the girl besides the clock is wearing a white dress. "
        "So I will ask about this attribute.\n\n"
        "Question: Is girl besides the clock wearing a white dress?\n\n"
        "Answer: Yes, the girl besides the clock is wearing a white dress."
    )
    wh_reply = (
        "Question: Who is looking at the clock?\n\n"
        "Answer: The girl in white dress is looking at the clock."
    )
    cases = [
        {
            "kind": "generation",
            "text": girl_reply,
            "expect": {
                "result": "qa",
                "analysis": "According to the content, the girl besides the clock is "
                "wearing a white dress. So I will ask about this attribute.",
                "question": "Is girl besides the clock wearing a white dress?",
                "answer": "Yes, the girl besides the clock is wearing a white dress.",
            },
        },
        {
            "kind": "generation",
            "text": wh_reply,
            "expect": {
                "result": "qa",
                "analysis": "",
                "question": "Who is looking at the clock?",
                "answer": "The girl in white dress is looking at the clock.",
            },
        },
        {"kind": "generation", "text": "skip", "expect": {"result": "skip"}},
        {"kind": "generation", "text": "SKIP", "expect": {"result": "skip"}},
        {"kind": "generation", "text": "Skip.", "expect": {"result": "skip"}},
        {"kind": "generation", "text": '"skip"', "expect": {"result": "skip"}},
        {
            "kind": "generation",
            "text": "The two boxes describe the same object, so this relationship is "
            "not worth a question.",
            "expect": {"result": "skip"},
        },
        {
            "kind": "generation",
            "text": "I will politely refuse to ask about this one.",
            "expect": {"result": "skip"},
        },
        {
            "kind": "generation",
            "text": "Some analysis first.\n\nQuestion: Is the clock blue?",
            "expect": {"result": "malformed", "reason": "no answer"},
        },
        {
            "kind": "generation",
            "text": "There is nothing to extract in this reply.",
            "expect": {"result": "malformed", "reason": "no question"},
        },
        {
            "kind": "generation",
            "text": "Question:\n\nAnswer: Yes.",
            "expect": {"result": "malformed", "reason": "empty field"},
        },
        {
            "kind": "generation",
            "text": "Is there a question here? Yes.\n\nQuestion: Is the chair red?\n\n"
            "Answer: No, the chair is brown.",
            "expect": {
                "result": "qa",
                "analysis": "Is there a question here? Yes.",
                "question": "Is the chair red?",
                "answer": "No, the chair is brown.",
            },
        },
        {
            "kind": "generation",
            "text": "question: lower case marker?\nanswer: still fine.",
            "expect": {
                "result": "qa",
                "analysis": "",
                "question": "lower case marker?",
                "answer": "still fine.",
            },
        },
        {
            "kind": "bbox",
            "text": "The clock [0.406, 0.228, 0.612, 0.754] is blue",
            "expect": {"leak": True},
        },
        {"kind": "bbox", "text": "The clock is blue.", "expect": {"leak": False}},
        {"kind": "bbox", "text": "Rated [8/10]!", "expect": {"leak": False}},
        {"kind": "bbox", "text": "A pair like [0.3, 0.7] leaks too.", "expect": {"leak": True}},
        {
            "kind": "classification",
            "text": CLASSIFIER_REPLIES["category"],
            "expect": {"type": "category"},
        },
        {
            "kind": "classification",
            "text": CLASSIFIER_REPLIES["attribute"],
            "expect": {"type": "attribute"},
        },
        {
            "kind": "classification",
            "text": CLASSIFIER_REPLIES["relation"],
            "expect": {"type": "relation"},
        },
        {"kind": "classification", "text": "I am not sure.", "expect": {"type": None}},
        {
            "kind": "classification",
            "text": "After thought:\n2. The objects are right, but some attributes of one "
            "object is wrong (e.g., color, size, etc.)",
            "expect": {"type": "attribute"},
        },
        {
            "kind": "yesno",
            "text": "Yes, the girl besides the clock is wearing a white dress.",
            "expect": {"verdict": "positive", "confident": True},
        },
        {
            "kind": "yesno",
            "text": "No, the bird is standing next to a large body of water.",
            "expect": {"verdict": "negative", "confident": True},
        },
        {
            "kind": "yesno",
            "text": "It is unclear from the image.",
            "expect": {"verdict": "negative", "confident": False},
        },
        {
            "kind": "yesno",
            "text": "I believe the answer is yes in this case.",
            "expect": {"verdict": "positive", "confident": False},
        },
        {
            "kind": "yesno",
            "text": "NO.",
            "expect": {"verdict": "negative", "confident": True},
        },
    ]
    return cases


def main() -> None:
    rng = random.Random(FIXED_SEED)
    corpus = build_corpus(rng)

    corpus_dir = ROOT / "fixture_corpus"
    scripts_dir = ROOT / "mock_scripts"
    goldens_dir = ROOT / "goldens"
    for d in (corpus_dir, scripts_dir, goldens_dir):
        d.mkdir(parents=True, exist_ok=True)

    for name, records in corpus.items():
        write_jsonl(corpus_dir / f"{name}.jsonl", records)
    manifest = {name: f"{name}.jsonl" for name in corpus}
    (corpus_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2) + "\n", encoding="utf-8"
    )

    relations = sorted(corpus["relations"], key=lambda r: r["relation_id"])
    write_jsonl(scripts_dir / "dataset.jsonl", dataset_script(relations))
    bench_entries, produced = bench_script(relations)
    write_jsonl(scripts_dir / "bench.jsonl", bench_entries)
    write_jsonl(scripts_dir / "classifier.jsonl", classifier_script(produced))

    write_goldens(goldens_dir)
    write_jsonl(ROOT / "parser_corpus.jsonl", parser_corpus())

    labels = [label for _, label, _ in produced]
    print(
        f"wrote {len(relations)} relations, "
        f"{len(bench_entries)} bench replies "
        f"({labels.count('yes')} yes / {labels.count('no')} no candidates)"
    )


if __name__ == "__main__":
    main()
