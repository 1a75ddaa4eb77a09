"""Acceptance gate: one test per release criterion.

Each criterion is checked at its stated tolerance; a summary block with one
PASS/FAIL line per criterion is printed at the end of the run (conftest hook).
"""

import json
import logging
import math
import random
import signal
import subprocess
import sys
import textwrap
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from relqa.annotations import (
    BoundingBox,
    ImageContext,
    ObjectInstance,
    RegionDescription,
    RelationAnnotation,
)
from relqa.bench import BenchmarkCandidate, BenchmarkItem, finalize, write_pool
from relqa.cli import main
from relqa.dataset import ConversationTurn, InstructionSample, render_for_model
from relqa.evaluation import ResponseRecord, format_percent, score
from relqa.geometry import (
    BinaryMask,
    bce_mask,
    dice_coefficient,
    mask_iou,
    rle_decode,
    rle_encode,
)
from relqa.prompts import (
    format_qa_pair,
    load_template,
    render_chat,
    render_classifier_chat,
    render_image_content,
)
from relqa.qa_parsing import (
    Malformed,
    ParsedGeneration,
    Skip,
    detect_bbox_leak,
    normalize_yesno,
    parse_classification,
    parse_generation,
)
from relqa.review import ReviewStore

DATA = Path(__file__).parent / "data"


# --- criterion 1: metric oracle equivalence, |delta| < 1e-12, < 5 s ----------

_RESPONSE_POOL = (
    "Yes.",
    "yes it is",
    "YES, clearly.",
    "No.",
    "no, nothing like that",
    "Nope.",
    "I think the answer is yes",
    "I would say no here.",
    "It is unclear, maybe yes and maybe no.",
    "Hard to tell from the image.",
    "Absolutely.",
)


def _oracle_rates(items, responses):
    """Brute-force float counting, independent of the Fraction evaluator."""
    by_id = {r.item_id: r.response_text for r in responses}
    tp = fp = tn = fn = 0
    sub_yes = {"category": 0, "attribute": 0, "relation": 0}
    sub_tot = {"category": 0, "attribute": 0, "relation": 0}
    for it in items:
        yes = normalize_yesno(by_id[it.item_id]).verdict == "positive"
        if it.gt_label == "yes":
            tp, fn = tp + yes, fn + (not yes)
        else:
            fp, tn = fp + yes, tn + (not yes)
        if it.subset in sub_tot:
            sub_tot[it.subset] += 1
            sub_yes[it.subset] += yes
    prec = tp / (tp + fp) if tp + fp else 0.0
    rec = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
    fps = {s: (sub_yes[s] / sub_tot[s] if sub_tot[s] else 0.0) for s in sub_tot}
    return prec, rec, f1, fps


def test_metric_oracle_equivalence():
    rng = random.Random(20240819)
    start = time.monotonic()
    subsets = ("positive", "category", "attribute", "relation")
    for _ in range(1000):
        n = rng.randint(1, 200)
        items = []
        responses = []
        for i in range(n):
            subset = rng.choice(subsets)
            gt = "yes" if subset == "positive" else "no"
            items.append(BenchmarkItem(f"i{i:03d}", "img", f"Is thing {i} there?", gt, subset))
            responses.append(ResponseRecord(f"i{i:03d}", rng.choice(_RESPONSE_POOL)))
        report = score(items, responses)
        prec, rec, f1, fps = _oracle_rates(items, responses)
        assert abs(float(report.precision) - prec) < 1e-12
        assert abs(float(report.recall) - rec) < 1e-12
        assert abs(float(report.f1) - f1) < 1e-12
        for s in fps:
            assert abs(float(report.per_subset_fp[s]) - fps[s]) < 1e-12
    elapsed = time.monotonic() - start
    assert elapsed < 5.0, f"metric suite took {elapsed:.2f}s"


# --- criterion 2: display convention and forced extremes ---------------------


def test_table1_formatting():
    assert format_percent(Fraction(406, 500)) == "81.2"
    assert format_percent(0.718) == "71.8"

    items = [
        BenchmarkItem("p1", "img", "q?", "yes", "positive"),
        BenchmarkItem("p2", "img", "q?", "yes", "positive"),
        BenchmarkItem("c1", "img", "q?", "no", "category"),
        BenchmarkItem("c2", "img", "q?", "no", "category"),
        BenchmarkItem("a1", "img", "q?", "no", "attribute"),
        BenchmarkItem("r1", "img", "q?", "no", "relation"),
        BenchmarkItem("r2", "img", "q?", "no", "relation"),
    ]
    all_yes = score(items, [ResponseRecord(i.item_id, "Yes.") for i in items])
    assert all_yes.recall == Fraction(1)
    assert all(v == Fraction(1) for v in all_yes.per_subset_fp.values())

    all_no = score(items, [ResponseRecord(i.item_id, "No.") for i in items])
    assert all_no.recall == Fraction(0)
    assert all(v == Fraction(0) for v in all_no.per_subset_fp.values())


# --- criterion 3: prompt golden transcripts, byte-exact ----------------------


def _fixture_scene():
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


def _golden(name: str) -> str:
    return (DATA / "goldens" / name).read_text(encoding="utf-8")


def test_prompt_goldens():
    ctx, rel = _fixture_scene()
    assert render_image_content(ctx) == _golden("image_content.txt")

    yesno = render_chat(load_template("yesno"), ctx, rel).to_text()
    assert yesno == _golden("yesno_transcript.txt")
    wh = render_chat(load_template("wh"), ctx, rel).to_text()
    assert wh == _golden("wh_transcript.txt")

    qa = format_qa_pair(
        "Is the bird standing on a tree?",
        "No, the bird is standing next to a large body of water.",
    )
    classifier = render_classifier_chat(load_template("classifier"), qa).to_text()
    assert classifier == _golden("classifier_transcript.txt")

    # transcription quirks must survive rendering
    assert "relation ship" in yesno
    assert "generally describe as" in yesno
    assert "Make make sure" in yesno
    assert "wrong obect category" in classifier
    assert "Please carefully analysis" in classifier


# --- criterion 4: labelled parser corpus, 100% ------------------------------


def test_parser_corpus():
    cases = [
        json.loads(line)
        for line in (DATA / "parser_corpus.jsonl").read_text(encoding="utf-8").splitlines()
        if line.strip()
    ]
    assert len(cases) >= 20
    failures = []
    for i, case in enumerate(cases):
        kind, text, expect = case["kind"], case["text"], case["expect"]
        if kind == "generation":
            got = parse_generation(text)
            if expect["result"] == "qa":
                ok = (
                    isinstance(got, ParsedGeneration)
                    and got.analysis == expect["analysis"]
                    and got.question == expect["question"]
                    and got.answer == expect["answer"]
                )
            elif expect["result"] == "skip":
                ok = isinstance(got, Skip)
            else:
                ok = isinstance(got, Malformed) and got.reason == expect["reason"]
        elif kind == "bbox":
            ok = detect_bbox_leak(text) is expect["leak"]
        elif kind == "classification":
            ok = parse_classification(text) == expect["type"]
        elif kind == "yesno":
            verdict = normalize_yesno(text)
            ok = verdict.verdict == expect["verdict"] and verdict.confident == expect["confident"]
        else:
            ok = False
        if not ok:
            failures.append((i, kind, text[:60]))
    assert not failures, f"{len(failures)}/{len(cases)} corpus cases failed: {failures}"


# --- criterion 5: end-to-end determinism, 30 items, < 10 s -------------------


def _write_run_config(root: Path) -> Path:
    cfg = {
        "manifest": str((DATA / "fixture_corpus" / "manifest.json").resolve()),
        "run_seed": 7,
        "template_kinds": ["yesno", "wh"],
        "output_dir": str(root / "out"),
        "n_per_subset": 5,
        "n_positive": 15,
        "bench_rounds": 2,
        "gateway": {
            "backend": "mock",
            "mock_script": str((DATA / "mock_scripts" / "dataset.jsonl").resolve()),
            "cache_dir": str(root / "cache"),
            "usage_log": str(root / "usage.jsonl"),
        },
    }
    path = root / "config.json"
    path.write_text(json.dumps(cfg, indent=2), encoding="utf-8")
    return path


def _run_pipeline(root: Path) -> Path:
    root.mkdir(parents=True, exist_ok=True)
    cfg_path = _write_run_config(root)
    out_dir = root / "out"
    assert main(["gen-dataset", "--config", str(cfg_path)]) == 0
    assert (
        main(
            [
                "gen-bench",
                "--config",
                str(cfg_path),
                "--mock-script",
                str(DATA / "mock_scripts" / "bench.jsonl"),
            ]
        )
        == 0
    )
    assert (
        main(
            [
                "classify",
                "--config",
                str(cfg_path),
                "--mock-script",
                str(DATA / "mock_scripts" / "classifier.jsonl"),
            ]
        )
        == 0
    )
    store = ReviewStore(out_dir / "pool.jsonl")
    for cand in store.pool:
        store.record(cand.candidate_id, "keep")
    store.close()
    assert main(["finalize", "--config", str(cfg_path)]) == 0
    return out_dir


def test_end_to_end_determinism(tmp_path, capsys):
    start = time.monotonic()
    out_a = _run_pipeline(tmp_path / "runA")
    out_b = _run_pipeline(tmp_path / "runB")
    capsys.readouterr()

    for name in ("dataset.jsonl", "pool.jsonl", "bench.jsonl"):
        bytes_a = (out_a / name).read_bytes()
        bytes_b = (out_b / name).read_bytes()
        assert bytes_a == bytes_b, f"{name} differs between identical runs"

    items = [
        json.loads(line)
        for line in (out_a / "bench.jsonl").read_text(encoding="utf-8").splitlines()
    ]
    assert len(items) == 30
    by_subset = {}
    for it in items:
        by_subset[it["subset"]] = by_subset.get(it["subset"], 0) + 1
    assert by_subset == {"positive": 15, "category": 5, "attribute": 5, "relation": 5}

    elapsed = time.monotonic() - start
    assert elapsed < 10.0, f"pipeline pair took {elapsed:.2f}s"


# --- criterion 6: geometry against dense pixel-counting oracles --------------


def _dense_iou(a: np.ndarray, b: np.ndarray) -> float:
    inter = int(np.logical_and(a, b).sum())
    union = int(np.logical_or(a, b).sum())
    return inter / union if union else 0.0


def _dense_dice(a: np.ndarray, b: np.ndarray) -> float:
    inter = int(np.logical_and(a, b).sum())
    total = int(a.sum()) + int(b.sum())
    return 2 * inter / total if total else 1.0


def _dense_bce(pred: np.ndarray, gt: np.ndarray, eps: float = 1e-7) -> float:
    p = np.clip(pred.astype(np.float64), eps, 1 - eps)
    y = gt.astype(np.float64)
    return float(-(y * np.log(p) + (1 - y) * np.log(1 - p)).mean())


def test_geometry_suite():
    rng = np.random.default_rng(20240819)
    for i in range(1000):
        h = int(rng.integers(1, 17))
        w = int(rng.integers(1, 17))
        density = float(rng.uniform(0, 1))
        a = rng.random((h, w)) < density
        b = rng.random((h, w)) < float(rng.uniform(0, 1))

        mask_a = rle_encode(a)
        mask_b = rle_encode(b)
        assert isinstance(mask_a, BinaryMask)
        assert np.array_equal(rle_decode(mask_a), a), f"roundtrip broke at case {i}"
        assert mask_a == BinaryMask.from_json(mask_a.to_json())

        assert abs(mask_iou(mask_a, mask_b) - _dense_iou(a, b)) < 1e-12
        assert abs(dice_coefficient(mask_a, mask_b) - _dense_dice(a, b)) < 1e-12

        pred = rng.random((h, w))
        assert abs(bce_mask(pred, mask_a) - _dense_bce(pred, a)) < 1e-12

        # dice identity, symmetry, bounds
        assert dice_coefficient(mask_a, mask_a) == 1.0
        assert dice_coefficient(mask_a, mask_b) == dice_coefficient(mask_b, mask_a)
        assert 0.0 <= dice_coefficient(mask_a, mask_b) <= 1.0

    gt = rle_encode(np.array([[True, False], [False, True]]))
    half = np.full((2, 2), 0.5)
    assert abs(bce_mask(half, gt) - math.log(2)) < 1e-9


# --- criterion 7: conversation templates, byte-exact -------------------------


def _acceptance_sample(rounds):
    from relqa.annotations import load_corpus

    corpus = load_corpus(DATA / "fixture_corpus" / "manifest.json")
    rel = corpus.relation_by_id("rel-001")
    turns = []
    for q, a in rounds:
        turns.append(ConversationTurn("human", q, supervised=False))
        turns.append(ConversationTurn("ai", a, supervised=True))
    return InstructionSample(
        sample_id="acc",
        image_id=rel.image_id,
        turns=tuple(turns),
        seed_relation=rel,
        generator="yesno",
        provenance="dataset:acc",
    )


def test_conversation_templates(caplog):
    q1, a1 = "Is the lamp on the desk?", "Yes, the lamp is on the desk."
    q2, a2 = "Is the desk wooden?", "No, the desk is metal."
    sample = _acceptance_sample([(q1, a1)])
    multi = _acceptance_sample([(q1, a1), (q2, a2)])

    llava_first = (
        "[INST] <<SYS>> You are a helpful language and vision assistant. "
        "You are able to understand the visual content that the user provides, "
        "and assist the user with a variety of tasks using natural language. "
        "<</SYS>> <image> <question> [/INST] <answer> </s>"
    )
    llava_next = "[INST] <question> [/INST] <answer> </s>"
    expected = llava_first.replace("<question>", q1).replace("<answer>", a1)
    assert render_for_model(sample, "llava_llama2") == expected
    expected_multi = " ".join(
        [
            llava_first.replace("<question>", q1).replace("<answer>", a1),
            llava_next.replace("<question>", q2).replace("<answer>", a2),
        ]
    )
    assert render_for_model(multi, "llava_llama2") == expected_multi

    mplug = "\n".join(
        [
            "The following is a conversation between a curious human and AI "
            "assistant. The assistant gives helpful, detailed, and polite "
            "answers to the user's questions.",
            "Human: <image>",
            f"Human: {q1}",
            f"AI: {a1}",
            f"Human: {q2}",
            f"AI: {a2}",
        ]
    )
    assert render_for_model(multi, "mplug_owl") == mplug

    assert render_for_model(sample, "instructblip") == f"<image> {q1} {a1}"
    with caplog.at_level(logging.WARNING, logger="relqa.dataset"):
        got = render_for_model(multi, "instructblip")
    assert got == f"<image> {q1} {a1}"
    assert any("instructblip" in rec.message for rec in caplog.records)


# --- criterion 8: review durability under SIGKILL ----------------------------

_DRIVER = textwrap.dedent(
    """
    import json, os, signal, sys
    from relqa.review import ReviewStore

    pool_path, plan_path, kill_at = sys.argv[1], sys.argv[2], int(sys.argv[3])
    store = ReviewStore(pool_path)
    with open(plan_path) as fh:
        plan = json.load(fh)
    for step, (cid, action) in enumerate(plan):
        store.record(cid, action)
        if step == kill_at:
            # uncatchable, immediate: nothing after this line may run
            os.kill(os.getpid(), signal.SIGKILL)
        print(step, flush=True)
    print("DONE", flush=True)
    """
)


def _durability_pool(tmp_path):
    pool = []
    for i in range(40):
        pool.append(
            BenchmarkCandidate(
                f"pos-{i:03d}", f"img-{i:03d}", f"Is item {i} shown?", "Yes.", "yes", "positive"
            )
        )
    for subset in ("category", "attribute", "relation"):
        for i in range(20):
            pool.append(
                BenchmarkCandidate(
                    f"{subset}-{i:03d}",
                    f"img-{i:03d}",
                    f"Is the {subset} {i} correct?",
                    "No.",
                    "no",
                    subset,
                )
            )
    path = tmp_path / "pool.jsonl"
    write_pool(pool, path)
    return path, pool


def test_review_durability(tmp_path):
    path, pool = _durability_pool(tmp_path)
    rng = random.Random(987654)
    ids = [c.candidate_id for c in pool]
    plan = [(rng.choice(ids), rng.choice(["keep", "reject"])) for _ in range(1000)]
    plan_path = tmp_path / "plan.json"
    plan_path.write_text(json.dumps(plan), encoding="utf-8")
    driver = tmp_path / "driver.py"
    driver.write_text(_DRIVER, encoding="utf-8")

    kill_at = rng.randrange(200, 800)
    proc = subprocess.run(
        [sys.executable, str(driver), str(path), str(plan_path), str(kill_at)],
        capture_output=True,
        text=True,
        timeout=60,
    )
    assert proc.returncode == -signal.SIGKILL, proc.stderr
    acked = [int(line) for line in proc.stdout.split() if line != "DONE"]
    assert acked == list(range(kill_at))  # steps before the kill were acknowledged

    def apply_prefix(upto):
        state = {c.candidate_id: "pending" for c in pool}
        for cid, action in plan[:upto]:
            state[cid] = "kept" if action == "keep" else "rejected"
        return state

    first = ReviewStore(path)
    state1, progress1 = first.decisions_map(), first.progress()
    first.close()
    # the kill landed right after record() returned for step kill_at, so the
    # durable state is exactly the plan prefix through that step
    assert state1 == apply_prefix(kill_at + 1)

    second = ReviewStore(path)
    assert second.decisions_map() == state1
    assert second.progress() == progress1

    # repeated identical decisions are no-ops
    target = next(cid for cid, st in state1.items() if st != "pending")
    action = "keep" if state1[target] == "kept" else "reject"
    log_size = second.log_path.stat().st_size
    assert second.record(target, action) == (state1[target], False)
    assert second.log_path.stat().st_size == log_size

    # finalize never emits a rejected candidate
    decisions = second.decisions_map()
    rejected = {cid for cid, st in decisions.items() if st == "rejected"}
    kept = {cid for cid, st in decisions.items() if st == "kept"}
    bench = finalize(pool, decisions, n_per_subset=3, n_positive=5, seed=11)
    chosen = {item.item_id for item in bench.items}
    assert not chosen & rejected
    assert chosen <= kept
    second.close()
